"""Detection configuration, per-candidate results and the report file.

A report is line-delimited JSON, one record per line, each tagged with a
``"record"`` kind: ``manifest``, ``config``, ``candidate`` (one per candidate
pair, in processing order), ``classes``, ``summary``, ``metrics`` (only with
ground truth) and finally ``timing``. Only the ``timing`` record carries
wall-clock values; every other line is reproducible from inputs and seed.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import InconsistentInputs, ReportFormatError
from .flow import ConditionalOptions, FlowConfig
from .search import CandidatePair, Link
from .stats import ConfusionCounts, metrics
from .trace import IOPair


class Evaluation(enum.Enum):
    EXHAUSTIVE = "exhaustive"
    SKIP = "skip"


class Pooling(enum.Enum):
    HARD = "hard"
    SOFT = "soft"


class Stage(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    MODEL = "model"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class DetectionConfig:
    evaluation: Evaluation = Evaluation.SKIP
    d_fpr: float = 0.100
    m_fpr: float = 0.001
    pooling: Pooling = Pooling.SOFT
    particles: int = 50
    seed: int = 0
    conditional: ConditionalOptions = ConditionalOptions()
    flow: FlowConfig = FlowConfig()

    def __post_init__(self):
        if not 0.0 < self.d_fpr < 1.0:
            raise ValueError(f"d_fpr must lie in (0, 1), got {self.d_fpr}")
        if not 0.0 < self.m_fpr < 1.0:
            raise ValueError(f"m_fpr must lie in (0, 1), got {self.m_fpr}")
        if self.particles < 2:
            raise ValueError(f"need at least 2 particles, got {self.particles}")

    def to_json(self) -> dict:
        return {
            "evaluation": self.evaluation.value,
            "d_fpr": self.d_fpr,
            "m_fpr": self.m_fpr,
            "pooling": self.pooling.value,
            "particles": self.particles,
            "seed": self.seed,
            "conditional": asdict(self.conditional),
            "flow": asdict(self.flow),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DetectionConfig":
        return cls(
            evaluation=Evaluation(obj["evaluation"]),
            d_fpr=float(obj["d_fpr"]),
            m_fpr=float(obj["m_fpr"]),
            pooling=Pooling(obj["pooling"]),
            particles=int(obj["particles"]),
            seed=int(obj["seed"]),
            conditional=ConditionalOptions(**obj.get("conditional", {})),
            flow=FlowConfig(**obj.get("flow", {})),
        )


@dataclass(frozen=True)
class LinkResult:
    link: Link
    lambda_a: float
    lambda_b: float
    accepted: bool


@dataclass
class CandidateResult:
    pair: CandidatePair
    stage_reached: Stage
    decision: bool
    wes: int = 0
    static_links: int = 0
    dynamic_links: int = 0
    model_evaluated: int = 0
    model_skipped: int = 0
    link_results: list[LinkResult] = field(default_factory=list)
    skip_reason: str | None = None
    seconds: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "record": "candidate",
            "a": self.pair.a,
            "b": self.pair.b,
            "stage": self.stage_reached.value,
            "decision": self.decision,
            "links": {
                "wes": self.wes,
                "static": self.static_links,
                "dynamic": self.dynamic_links,
                "model_evaluated": self.model_evaluated,
                "model_skipped": self.model_skipped,
            },
            "link_results": [
                {
                    "link": [
                        [r.link.pair_a.input_index, r.link.pair_a.output_index],
                        [r.link.pair_b.input_index, r.link.pair_b.output_index],
                    ],
                    "lambda_a": r.lambda_a,
                    "lambda_b": r.lambda_b,
                    "accepted": r.accepted,
                }
                for r in self.link_results
            ],
            "skip_reason": self.skip_reason,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CandidateResult":
        links = obj["links"]
        results = []
        for r in obj.get("link_results", []):
            (ia, oa), (ib, ob) = r["link"]
            results.append(
                LinkResult(Link(IOPair(ia, oa), IOPair(ib, ob)), r["lambda_a"], r["lambda_b"], r["accepted"])
            )
        return cls(
            pair=CandidatePair(obj["a"], obj["b"]),
            stage_reached=Stage(obj["stage"]),
            decision=bool(obj["decision"]),
            wes=links["wes"],
            static_links=links["static"],
            dynamic_links=links["dynamic"],
            model_evaluated=links["model_evaluated"],
            model_skipped=links["model_skipped"],
            link_results=results,
            skip_reason=obj.get("skip_reason"),
        )


def survived(result: CandidateResult, stage: str) -> bool:
    """Whether a candidate is still predicted a clone after ``stage``."""
    if stage == "initial":
        return True
    if stage == "static":
        return result.stage_reached is not Stage.STATIC
    if stage == "dynamic":
        return result.stage_reached not in (Stage.STATIC, Stage.DYNAMIC)
    if stage == "model":
        return result.decision
    raise ValueError(f"unknown stage {stage!r}")


STAGES = ("initial", "static", "dynamic", "model")


def unlabeled_ids(candidates: Sequence[CandidateResult], truth: Mapping[str, str]) -> list[str]:
    ids = {c.pair.a for c in candidates} | {c.pair.b for c in candidates}
    return sorted(ids - set(truth))


def confusion(
    candidates: Sequence[CandidateResult], truth: Mapping[str, str], stage: str = "model"
) -> ConfusionCounts:
    missing = unlabeled_ids(candidates, truth)
    if missing:
        raise InconsistentInputs(f"ground truth lacks labels for: {', '.join(missing)}")
    tp = fp = tn = fn = 0
    for c in candidates:
        actual = truth[c.pair.a] == truth[c.pair.b]
        predicted = survived(c, stage)
        if predicted and actual:
            tp += 1
        elif predicted:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def metrics_block(candidates: Sequence[CandidateResult], truth: Mapping[str, str]) -> dict:
    counts = confusion(candidates, truth)
    stages = {}
    for stage in STAGES:
        c = confusion(candidates, truth, stage)
        stages[stage] = {**asdict(c), **metrics(c)}
    return {**asdict(counts), **metrics(counts), "stages": stages}


@dataclass
class CloneReport:
    config: DetectionConfig
    candidates: list[CandidateResult]
    classes: list[list[str]]
    total_space: int = 0
    manifest: dict | None = None
    metrics: dict | None = None
    timing: dict = field(default_factory=dict)

    @property
    def skipped_candidates(self) -> int:
        return sum(c.stage_reached is Stage.SKIPPED for c in self.candidates)

    @property
    def skipped_candidate_links(self) -> int:
        return sum(c.wes for c in self.candidates if c.stage_reached is Stage.SKIPPED)

    @property
    def greedy_skipped_links(self) -> int:
        return sum(c.model_skipped for c in self.candidates)

    def stage_survivors(self) -> dict[str, int]:
        return {s: sum(survived(c, s) for c in self.candidates) for s in STAGES}

    def decisions(self) -> dict[CandidatePair, bool]:
        return {c.pair: c.decision for c in self.candidates}

    def records(self, with_timing: bool = True) -> list[dict]:
        out = []
        if self.manifest is not None:
            out.append({"record": "manifest", **self.manifest})
        out.append({"record": "config", **self.config.to_json()})
        out += [c.to_json() for c in self.candidates]
        out.append({"record": "classes", "classes": self.classes})
        out.append(
            {
                "record": "summary",
                "candidates": len(self.candidates),
                "skipped_candidates": self.skipped_candidates,
                "skipped_candidate_links": self.skipped_candidate_links,
                "greedy_skipped_links": self.greedy_skipped_links,
                "total_space": self.total_space,
                "stage_survivors": self.stage_survivors(),
            }
        )
        if self.metrics is not None:
            out.append({"record": "metrics", **self.metrics})
        if with_timing:
            out.append({"record": "timing", **self.timing})
        return out

    def dumps(self, with_timing: bool = True) -> str:
        return "".join(
            json.dumps(r, separators=(",", ":"), allow_nan=False) + "\n"
            for r in self.records(with_timing)
        )

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def read_report(path) -> CloneReport:
    path = Path(path)
    config = manifest = metrics_rec = None
    classes: list[list[str]] = []
    candidates, timing, total = [], {}, 0
    try:
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "manifest":
                manifest = rec
            elif kind == "config":
                config = DetectionConfig.from_json(rec)
            elif kind == "candidate":
                candidates.append(CandidateResult.from_json(rec))
            elif kind == "classes":
                classes = rec["classes"]
            elif kind == "summary":
                total = rec.get("total_space", 0)
            elif kind == "metrics":
                metrics_rec = rec
            elif kind == "timing":
                timing = rec
            else:
                raise ReportFormatError(f"{path}:{lineno}: unknown record kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportFormatError(f"{path}: malformed report: {exc}") from exc
    if config is None:
        raise ReportFormatError(f"{path}: no config record")
    return CloneReport(config, candidates, classes, total, manifest, metrics_rec, timing)
