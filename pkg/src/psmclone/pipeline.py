"""The rejecting filter pipeline: static, dynamic and model similarity.

Candidate pairs are processed in lexicographic order. A pair is a clone only
if at least one of its links (IO pair of ``a`` x IO pair of ``b``) survives
all three stages. Under skip evaluation, pairs already joined by earlier
positive decisions are not evaluated, and the model stage stops at the first
accepted link.
"""
from __future__ import annotations

import logging
import math
import time
from collections import Counter
from typing import Mapping, Sequence

import numpy as np

from .encoding import ColumnEncoder, encode_matrix, transfer
from .errors import InconsistentInputs, MissingTrace
from .flow import (
    ConditionalOptions,
    FlowConfig,
    FlowModel,
    conditional_sample,
    fit_flow,
    sample,
)
from .report import (
    CandidateResult,
    CloneReport,
    DetectionConfig,
    Evaluation,
    LinkResult,
    Pooling,
    Stage,
    metrics_block,
)
from .search import CandidatePair, CloneClasses, Link, build_bes, build_wes, total_space
from .seeding import derive_seed
from .stats import ks_two_sample
from .trace import DataType, ExecutableSchema, TraceDataset

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# -- modeling --------------------------------------------------------------

def train_executable(dataset: TraceDataset, config: FlowConfig = FlowConfig(), seed: int = 0) -> FlowModel:
    """Encode one executable's trace and fit its flow model.

    The per-executable seed is derived from ``seed`` and the executable id,
    so clones with identical traces still get independent noise and
    initialization. Single-element executables get an auxiliary
    standard-normal column so the model has two dimensions.
    """
    schema = dataset.schema
    exec_seed = derive_seed(seed, "train", schema.id)
    matrix, encoders = encode_matrix(dataset, derive_seed(exec_seed, "encode"))
    padded = matrix.shape[1] < 2
    if padded:
        pad = np.random.default_rng(derive_seed(exec_seed, "pad")).standard_normal((matrix.shape[0], 1))
        matrix = np.hstack([matrix, pad])
    model = fit_flow(matrix, config, exec_seed)
    model.schema = schema
    model.encoders = tuple(encoders)
    model.padded = padded
    return model


def modeled_log_likelihood(model: FlowModel, x: np.ndarray) -> np.ndarray:
    """Per-row log-likelihood per modeled dimension.

    The auxiliary column of a padded model is scored as the standard normal
    it was drawn from, and that score is removed before normalizing.
    """
    ll = model.log_likelihood(x)
    if model.padded:
        pad = x[:, -1]
        ll = ll - (-0.5 * LOG_2PI - 0.5 * pad * pad)
    return ll / model.modeled_dims


# -- static ----------------------------------------------------------------

def static_filter(link: Link, schema_a: ExecutableSchema, schema_b: ExecutableSchema) -> bool:
    ea, eb = schema_a.elements, schema_b.elements
    return (
        ea[link.pair_a.input_index].dtype is eb[link.pair_b.input_index].dtype
        and ea[link.pair_a.output_index].dtype is eb[link.pair_b.output_index].dtype
    )


def static_stage(candidate: CandidatePair, schemas: Mapping[str, ExecutableSchema]) -> list[Link]:
    a, b = schemas[candidate.a], schemas[candidate.b]
    return [link for link in build_wes(a, b) if static_filter(link, a, b)]


# -- dynamic ---------------------------------------------------------------

def _comparable_columns(col_a: list, col_b: list, dtype: DataType) -> tuple[np.ndarray, np.ndarray]:
    if dtype is not DataType.TEXT:
        return np.asarray(col_a, dtype=np.float64), np.asarray(col_b, dtype=np.float64)
    counts = Counter(col_a) + Counter(col_b)
    rank = {v: i for i, v in enumerate(sorted(counts, key=lambda v: (-counts[v], v)))}
    return (
        np.array([rank[v] for v in col_a], dtype=np.float64),
        np.array([rank[v] for v in col_b], dtype=np.float64),
    )


def dynamic_stage(
    candidate: CandidatePair,
    links: Sequence[Link],
    datasets: Mapping[str, TraceDataset],
    d_fpr: float,
) -> list[Link]:
    """Keep links whose input and output marginals both pass a KS test.

    Columns are compared on raw values (text through a ranking shared by both
    columns), so location differences between executables are visible.
    """
    for eid in (candidate.a, candidate.b):
        if eid not in datasets:
            raise MissingTrace(f"no trace dataset for executable {eid!r}")
    da, db = datasets[candidate.a], datasets[candidate.b]
    cache: dict[tuple[int, int], bool] = {}

    def similar(ja: int, jb: int) -> bool:
        if (ja, jb) not in cache:
            dtype = da.schema.elements[ja].dtype
            xa, xb = _comparable_columns(da.column(ja), db.column(jb), dtype)
            cache[(ja, jb)] = not ks_two_sample(xa, xb, d_fpr).reject
        return cache[(ja, jb)]

    return [
        link
        for link in links
        if similar(link.pair_a.input_index, link.pair_b.input_index)
        and similar(link.pair_a.output_index, link.pair_b.output_index)
    ]


# -- model -----------------------------------------------------------------

def _transfer(model_src: FlowModel, model_dst: FlowModel, j_src: int, j_dst: int, x: np.ndarray) -> np.ndarray:
    if not model_src.encoders or not model_dst.encoders:
        return x
    enc_src: ColumnEncoder = model_src.encoders[j_src]
    enc_dst: ColumnEncoder = model_dst.encoders[j_dst]
    return transfer(enc_src, enc_dst, x)


def _direction(
    null: FlowModel,
    alt: FlowModel,
    null_pair,
    alt_pair,
    particles: int,
    seed: int,
    opt: ConditionalOptions,
) -> float:
    d_null = sample(null, particles, derive_seed(seed, "null")).values
    constraints = {
        alt_pair.input_index: _transfer(null, alt, null_pair.input_index, alt_pair.input_index, d_null[:, null_pair.input_index]),
        alt_pair.output_index: _transfer(null, alt, null_pair.output_index, alt_pair.output_index, d_null[:, null_pair.output_index]),
    }
    if len(constraints) < alt.dim:
        d_alt = conditional_sample(alt, constraints, particles, derive_seed(seed, "alt"), opt).values
    else:
        # nothing left to condition on: the transferred particles are the alternative sample
        d_alt = np.empty((particles, alt.dim))
        for j, values in constraints.items():
            d_alt[:, j] = values
    ll_null = float(np.mean(modeled_log_likelihood(null, d_null)))
    ll_alt = float(np.mean(modeled_log_likelihood(alt, d_alt)))
    return ll_alt - ll_null


def model_link_ratio(
    model_a: FlowModel,
    model_b: FlowModel,
    link: Link,
    particles: int,
    seed: int,
    opt: ConditionalOptions = ConditionalOptions(),
) -> tuple[float, float]:
    """Directional log-likelihood ratios of one link.

    ``lambda_a`` uses ``model_a`` as the null model: particles drawn from it
    are transferred into ``model_b``'s space, pinned on the link's dims and
    completed by conditional sampling there. ``lambda_b`` swaps the roles.
    """
    lambda_a = _direction(model_a, model_b, link.pair_a, link.pair_b, particles, derive_seed(seed, "a"), opt)
    lambda_b = _direction(model_b, model_a, link.pair_b, link.pair_a, particles, derive_seed(seed, "b"), opt)
    return lambda_a, lambda_b


# Acceptance compares lambda against the log critical value from above: small
# ratios reject equivalence. Flip this single function to study the reverse.
def _retained(lam: float, log_threshold: float) -> bool:
    return lam >= log_threshold


def pool(lambda_a: float, lambda_b: float, pooling: Pooling, c: float) -> bool:
    if not 0.0 < c < 1.0:
        raise ValueError(f"critical value c must lie in (0, 1), got {c}")
    log_c = math.log(c)
    if pooling is Pooling.HARD:
        return _retained(lambda_a, log_c / 2) and _retained(lambda_b, log_c / 2)
    return _retained((lambda_a + lambda_b) / 2, log_c)


def _link_seed(seed: int, candidate: CandidatePair, link: Link) -> int:
    return derive_seed(
        seed,
        "link",
        candidate.a,
        candidate.b,
        link.pair_a.input_index,
        link.pair_a.output_index,
        link.pair_b.input_index,
        link.pair_b.output_index,
    )


def model_stage(
    candidate: CandidatePair,
    links: Sequence[Link],
    models: Mapping[str, FlowModel],
    config: DetectionConfig,
) -> tuple[bool, list[LinkResult], int]:
    """Evaluate links in order; returns ``(decision, link_results, skipped)``.

    Under skip evaluation the loop stops at the first accepted link and the
    remaining links are counted as skipped. Each link's seed depends only on
    the pair and the link, never on evaluation order.
    """
    model_a, model_b = models[candidate.a], models[candidate.b]
    results = []
    for k, link in enumerate(links):
        lam_a, lam_b = model_link_ratio(
            model_a, model_b, link, config.particles, _link_seed(config.seed, candidate, link), config.conditional
        )
        accepted = pool(lam_a, lam_b, config.pooling, config.m_fpr)
        results.append(LinkResult(link, lam_a, lam_b, accepted))
        if accepted and config.evaluation is Evaluation.SKIP:
            return True, results, len(links) - k - 1
    return any(r.accepted for r in results), results, 0


# -- orchestration ---------------------------------------------------------

def _check_inputs(schemas, datasets, models) -> dict[str, ExecutableSchema]:
    by_id = {}
    for s in schemas:
        if s.id in by_id:
            raise InconsistentInputs(f"schema id {s.id!r} given twice")
        by_id[s.id] = s
    ids = set(by_id)
    for what, mapping in (("trace datasets", datasets), ("models", models)):
        if set(mapping) != ids:
            missing = sorted(ids - set(mapping))
            extra = sorted(set(mapping) - ids)
            raise InconsistentInputs(f"{what} do not match schemas (missing {missing}, unexpected {extra})")
    for eid, ds in datasets.items():
        if ds.schema != by_id[eid]:
            raise InconsistentInputs(f"trace schema of {eid!r} differs from the given schema")
    for eid, model in models.items():
        if model.schema is not None and model.schema != by_id[eid]:
            raise InconsistentInputs(f"model schema of {eid!r} differs from its trace schema")
        if model.dim != len(by_id[eid].elements) + (1 if model.padded else 0):
            raise InconsistentInputs(f"model of {eid!r} has dimension {model.dim}")
    return by_id


def run_detection(
    schemas: Sequence[ExecutableSchema],
    datasets: Mapping[str, TraceDataset],
    models: Mapping[str, FlowModel],
    config: DetectionConfig = DetectionConfig(),
    ground_truth: Mapping[str, str] | None = None,
    manifest: dict | None = None,
) -> CloneReport:
    by_id = _check_inputs(schemas, datasets, models)
    classes = CloneClasses(sorted(by_id))
    skip = config.evaluation is Evaluation.SKIP
    stage_seconds = {"static": 0.0, "dynamic": 0.0, "model": 0.0}
    results = []
    started = time.perf_counter()

    for cand in build_bes(list(by_id.values())):
        wes = len(build_wes(by_id[cand.a], by_id[cand.b]))
        if skip and classes.same_class(cand.a, cand.b):
            results.append(
                CandidateResult(cand, Stage.SKIPPED, True, wes=wes, skip_reason="transitive: already in one clone class")
            )
            continue
        res = CandidateResult(cand, Stage.STATIC, False, wes=wes)
        t0 = time.perf_counter()
        links = static_stage(cand, by_id)
        t1 = time.perf_counter()
        res.static_links = len(links)
        res.seconds["static"] = t1 - t0
        stage_seconds["static"] += t1 - t0
        if links:
            res.stage_reached = Stage.DYNAMIC
            links = dynamic_stage(cand, links, datasets, config.d_fpr)
            t2 = time.perf_counter()
            res.dynamic_links = len(links)
            res.seconds["dynamic"] = t2 - t1
            stage_seconds["dynamic"] += t2 - t1
            if links:
                res.stage_reached = Stage.MODEL
                decision, link_results, skipped = model_stage(cand, links, models, config)
                t3 = time.perf_counter()
                res.decision = decision
                res.link_results = link_results
                res.model_evaluated = len(link_results)
                res.model_skipped = skipped
                res.seconds["model"] = t3 - t2
                stage_seconds["model"] += t3 - t2
        if res.decision:
            classes.union(cand.a, cand.b)
        log.info("%s ~ %s: %s at %s", cand.a, cand.b, res.decision, res.stage_reached.value)
        results.append(res)

    report = CloneReport(
        config=config,
        candidates=results,
        classes=classes.classes(),
        total_space=total_space(list(by_id.values())),
        manifest=manifest,
    )
    if ground_truth is not None:
        report.metrics = metrics_block(results, ground_truth)
    report.timing = {
        "total_seconds": time.perf_counter() - started,
        "stage_seconds": stage_seconds,
        "candidates": [
            {"a": r.pair.a, "b": r.pair.b, **r.seconds} for r in results if r.seconds
        ],
    }
    return report
