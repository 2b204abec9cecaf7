"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary (see
``conftest.py``), so they are visible without ``-s``.
"""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from psmclone import cli
from psmclone.corpus import builtin_corpus, generate_traces, ground_truth
from psmclone.flow import FlowConfig, FlowModel, fit_flow, init_flow
from psmclone.pipeline import pool, run_detection, static_filter, train_executable
from psmclone.report import DetectionConfig, Evaluation, Pooling, Stage, confusion
from psmclone.search import bes_size, build_bes, build_wes
from psmclone.stats import ConfusionCounts, glrt_decision, ks_statistic, metrics
from psmclone.trace import AtomicElement, DataType, ElementRole, ExecutableSchema, io_pairs

from conftest import injected_report

RESULTS: dict[int, str] = {}
SEEDS = (0, 1, 2)
TRACE_ROWS = 400


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[criterion] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def corpus_runs():
    """Default-configuration detection on the builtin corpus for each seed."""
    spec = builtin_corpus()
    truth = ground_truth(spec)
    runs = {}
    for seed in SEEDS:
        started = time.perf_counter()
        traces = generate_traces(spec, TRACE_ROWS, seed)
        models = {eid: train_executable(ds, FlowConfig(), seed) for eid, ds in traces.items()}
        config = DetectionConfig(seed=seed)
        report = run_detection(spec.schemas(), traces, models, config, truth)
        runs[seed] = {
            "seconds": time.perf_counter() - started,
            "report": report,
            "traces": traces,
            "models": models,
            "spec": spec,
            "truth": truth,
        }
    return runs


def test_criterion_1_end_to_end_detection(corpus_runs):
    passed, parts = 0, []
    for seed, run in corpus_runs.items():
        c = confusion(run["report"].candidates, run["truth"])
        m = metrics(c)["mcc"]
        ok = c.fp == 0 and m >= 0.90 and run["seconds"] <= 300
        passed += ok
        parts.append(f"seed {seed}: FP {c.fp} MCC {m:.3f} {run['seconds']:.0f}s")
    spec = next(iter(corpus_runs.values()))["spec"]
    size_ok = len(spec.classes) >= 3 and len(spec.variants()) >= 8 and len(build_bes(spec.schemas())) >= 28
    assert record(1, passed >= 2 and size_ok, f"{passed}/3 seeds hold; " + "; ".join(parts))


def test_criterion_2_rejecting_pipeline_shape(corpus_runs):
    run = corpus_runs[SEEDS[0]]
    exhaustive = run_detection(
        run["spec"].schemas(), run["traces"], run["models"],
        DetectionConfig(seed=SEEDS[0], evaluation=Evaluation.EXHAUSTIVE), run["truth"],
    )
    run["exhaustive"] = exhaustive
    schemas = {s.id: s for s in run["spec"].schemas()}
    ok, details = True, []
    for name, report in (("skip", run["report"]), ("exhaustive", exhaustive)):
        counts = report.stage_survivors()
        seq = [counts[s] for s in ("initial", "static", "dynamic", "model")]
        monotone = all(x >= y for x, y in zip(seq, seq[1:]))
        each_stage_rejects = all(x > y for x, y in zip(seq, seq[1:]))
        static_exact = all(
            c.static_links
            == sum(static_filter(l, schemas[c.pair.a], schemas[c.pair.b]) for l in build_wes(schemas[c.pair.a], schemas[c.pair.b]))
            for c in report.candidates
            if c.stage_reached is not Stage.SKIPPED
        )
        ok &= monotone and each_stage_rejects and static_exact
        details.append(f"{name} survivors {seq}")
    assert record(2, ok, "; ".join(details))


def test_criterion_3_skip_matches_exhaustive(corpus_runs):
    ok, details = True, []
    for seed, run in corpus_runs.items():
        exhaustive = run.get("exhaustive") or run_detection(
            run["spec"].schemas(), run["traces"], run["models"],
            DetectionConfig(seed=seed, evaluation=Evaluation.EXHAUSTIVE), run["truth"],
        )
        skip = run["report"]
        big_class = any(len(c) >= 3 for c in skip.classes)
        same = skip.classes == exhaustive.classes
        ok &= same and (skip.skipped_candidates >= 1 or not big_class) and exhaustive.skipped_candidates == 0
        details.append(f"seed {seed}: partitions {'equal' if same else 'differ'}, {skip.skipped_candidates} skipped")
    assert record(3, ok, "; ".join(details))


def _random_schema(rng, sid):
    n = int(rng.integers(0, 7))
    elements = tuple(
        AtomicElement(f"e{k}", ElementRole(rng.choice([r.value for r in ElementRole])), DataType.INTEGER)
        for k in range(n)
    )
    return ExecutableSchema(sid, sid, elements)


def test_criterion_4_combinatorics():
    ok = bes_size(108) == 5778
    ok &= len(build_bes([ExecutableSchema(f"x{k:03d}", "x", ()) for k in range(108)])) == 5778
    for n in range(2, 51):
        exes = [ExecutableSchema(f"x{k:02d}", "x", ()) for k in range(n)]
        ok &= len(build_bes(exes)) == bes_size(n) == math.factorial(n) // (2 * math.factorial(n - 2))
    rng = np.random.default_rng(0)
    for k in range(500):
        a, b = _random_schema(rng, "a"), _random_schema(rng, "b")
        ok &= len(build_wes(a, b)) == len(io_pairs(a)) * len(io_pairs(b))
    assert record(4, bool(ok), "bes_size(108) = 5778; BES sizes n = 2..50 and 500 random WES products exact")


def test_criterion_5_metrics_oracle(tmp_path, capsys):
    rows = {
        1: (ConfusionCounts(437, 0, 5320, 21), (1.000, 0.954, 0.977, 0.975)),
        16: (ConfusionCounts(293, 0, 5320, 165), (1.000, 0.639, 0.780, 0.787)),
    }
    ok, details = True, []
    for nr, (counts, expected) in rows.items():
        m = metrics(counts)
        got = (m["precision"], m["recall"], m["f1"], m["mcc"])
        ok &= all(abs(g - e) <= 1e-3 for g, e in zip(got, expected))
        details.append(f"Nr {nr}: " + "/".join(f"{g:.4f}" for g in got))
    # the same counts injected through a report file and the evaluate command
    report, truth = injected_report(437, 21)
    ok &= confusion(report.candidates, truth) == rows[1][0]
    report.write(tmp_path / "r.jsonl")
    classes = {}
    for eid, label in truth.items():
        classes.setdefault(label, []).append(eid)
    (tmp_path / "truth.json").write_text(json.dumps({"classes": classes}))
    capsys.readouterr()
    ok &= cli.main(["evaluate", "--report", str(tmp_path / "r.jsonl"), "--truth", str(tmp_path / "truth.json")]) == 0
    out = capsys.readouterr().out
    ok &= "TP 437  FP 0  TN 5320  FN 21" in out and "precision 1.000  recall 0.954  F1 0.977  MCC 0.975" in out
    assert record(5, ok, "; ".join(details) + " (tolerance 1e-3)")


def test_criterion_6_flow_numerics():
    rng = np.random.default_rng(0)
    # (a) invertibility
    model = FlowModel(3, FlowConfig(hidden_width=8))
    model.params[:] = rng.normal(0, 0.5, model.n_params)
    x = rng.normal(0, 2, size=(1000, 3))
    inv_err = float(np.max(np.abs(model.inverse(model.forward(x)[0]) - x)))
    # (b) gradients against central differences
    worst = 0.0
    for k in range(20):
        dim = 2 + k % 2
        m = FlowModel(dim, FlowConfig(layers=2 + k % 3, hidden_width=4))
        m.params[:] = rng.normal(0, 0.5, m.n_params)
        batch = rng.normal(size=(5, dim))
        _, grad = m.mean_nll_and_grad(batch)
        theta, num = m.params.copy(), np.empty(m.n_params)
        for j in range(m.n_params):
            m.params[j] = theta[j] + 1e-6
            up = m.mean_nll_and_grad(batch)[0]
            m.params[j] = theta[j] - 1e-6
            down = m.mean_nll_and_grad(batch)[0]
            m.params[j] = theta[j]
            num[j] = (up - down) / 2e-6
        worst = max(worst, float(np.linalg.norm(grad - num) / np.linalg.norm(num)))
    # (c) differential entropy of a 2-D standard normal
    data = np.random.default_rng(1).standard_normal((5000, 2))
    nll = fit_flow(data, FlowConfig(), seed=0).train_log["final_nll"]
    target = math.log(2 * math.pi * math.e)
    # (d) zero-initialized log-density at the origin
    origin = abs(init_flow(2).log_likelihood(np.zeros(2)) + math.log(2 * math.pi))
    ok = inv_err <= 1e-6 and worst <= 1e-4 and abs(nll - target) <= 0.1 and origin <= 1e-9
    assert record(
        6, ok,
        f"(a) inverse error {inv_err:.1e}; (b) worst gradient rel. error {worst:.1e} over 20 configs; "
        f"(c) NLL {nll:.4f} vs {target:.4f}; (d) origin error {origin:.1e}",
    )


def test_criterion_7_ks_oracle():
    rng = np.random.default_rng(2)
    exact = True
    for _ in range(100):
        a = rng.integers(-4, 5, size=int(rng.integers(1, 30))).astype(float)
        b = np.round(rng.normal(0, 2, size=int(rng.integers(1, 30))), 1)
        brute = max(
            abs(np.count_nonzero(a <= t) / a.size - np.count_nonzero(b <= t) / b.size) for t in np.concatenate([a, b])
        )
        exact &= ks_statistic(a, b) == brute
    same = ks_statistic([1, 2, 3], [1, 2, 3]) == 0.0
    disjoint = ks_statistic([0, 0, 0, 0], [1, 1, 1, 1]) == 1.0
    assert record(7, bool(exact and same and disjoint), "100 brute-force pairs exact; identical 0; disjoint 1")


def test_criterion_8_pooling_algebra():
    rng = np.random.default_rng(3)
    lam = rng.uniform(-30, 10, size=(10_000, 2))
    cs = rng.uniform(1e-6, 1 - 1e-6, size=10_000)
    implied = all(
        pool(a, b, Pooling.SOFT, c) for (a, b), c in zip(lam, cs) if pool(a, b, Pooling.HARD, c)
    )
    deltas = rng.uniform(0, 20, size=10_000)
    monotone = all(
        glrt_decision(l + d, c) for l, d, c in zip(lam[:, 0], deltas, cs) if glrt_decision(l, c)
    )
    assert record(8, implied and monotone, "10^4 triples: hard implies soft; GLRT monotone in lambda")


def _cli_run(workdir: Path) -> None:
    cwd = os.getcwd()
    workdir.mkdir()
    os.chdir(workdir)
    try:
        assert cli.main(["generate", "--out", "traces", "--seed", "7"]) == 0
        assert cli.main(["train", "--traces", "traces", "--models", "models", "--seed", "7"]) == 0
        assert cli.main(
            ["detect", "--models", "models", "--traces", "traces", "--truth", "traces/truth.json",
             "--seed", "7", "--out", "report.jsonl"]
        ) == 0
    finally:
        os.chdir(cwd)


def _comparable(path: Path) -> bytes:
    if path.name != "report.jsonl":
        return path.read_bytes()
    lines = path.read_bytes().splitlines(keepends=True)
    return b"".join(l for l in lines if not l.startswith(b'{"record":"timing"'))


def test_criterion_9_determinism(tmp_path):
    first, second = tmp_path / "one", tmp_path / "two"
    _cli_run(first)
    _cli_run(second)
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    others = sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    differing = [str(p) for p in files if _comparable(first / p) != _comparable(second / p)]
    kinds = {p.parts[0] if len(p.parts) > 1 else p.name for p in files}
    ok = files == others and not differing and {"traces", "models", "report.jsonl"} <= kinds
    assert record(9, ok, f"{len(files)} files compared byte for byte; differing: {differing or 'none'}")
