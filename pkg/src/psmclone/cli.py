"""Command-line front end: ``generate``, ``train``, ``detect`` and ``evaluate``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
inconsistent inputs), 3 internal error. Every file written embeds a run
manifest (subcommand, resolved configuration, paths as given, seed and tool
version) so results can be traced back to the exact invocation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .corpus import builtin_corpus, generate_traces, ground_truth, read_truth_file, write_corpus
from .errors import PSMError
from .flow import FlowConfig, load_model, save_model
from .pipeline import run_detection, train_executable
from .report import DetectionConfig, Evaluation, Pooling, confusion, read_report
from .stats import metrics
from .trace import parse_trace_file

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
TRACE_SUFFIX = ".jsonl"
MODEL_SUFFIX = ".json"

log = logging.getLogger("psmclone")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def run_manifest(subcommand: str, config: dict, inputs: dict, outputs: dict, seed: int) -> dict:
    return {
        "tool": "psmclone",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
    }


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _rate(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return value


def _trace_files(trace_dir: Path) -> list[Path]:
    if not trace_dir.is_dir():
        raise PSMError(f"trace directory {trace_dir} does not exist")
    files = sorted(trace_dir.glob(f"*{TRACE_SUFFIX}"))
    if not files:
        raise PSMError(f"no {TRACE_SUFFIX} trace files in {trace_dir}")
    return files


def _load_traces(trace_dir: Path) -> dict:
    datasets = {}
    for path in _trace_files(trace_dir):
        try:
            ds = parse_trace_file(path)
        except OSError as exc:
            raise PSMError(f"{path}: cannot read trace file: {exc}") from None
        except PSMError as exc:
            msg = str(exc)
            raise type(exc)(msg if str(path) in msg else f"{path}: {msg}") from None
        if ds.schema.id in datasets:
            raise PSMError(f"{path}: executable id {ds.schema.id!r} appears in more than one trace file")
        datasets[ds.schema.id] = ds
    return datasets


# -- subcommands -------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out)
    spec = builtin_corpus()
    traces = generate_traces(spec, args.n, args.seed)
    truth = ground_truth(spec)
    manifest = run_manifest(
        "generate",
        {"n": args.n, "corpus": "builtin"},
        {},
        {"out": args.out},
        args.seed,
    )
    write_corpus(out, traces, truth, manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(traces)} trace files and truth.json to {args.out}")
    return EXIT_OK


def _flow_config(args) -> FlowConfig:
    try:
        return FlowConfig(
            layers=args.layers,
            hidden_width=args.hidden_width,
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            s_max=args.s_max,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    config = _flow_config(args)
    datasets = _load_traces(Path(args.traces))
    model_dir = Path(args.models)
    model_dir.mkdir(parents=True, exist_ok=True)
    for eid in sorted(datasets):
        out_path = model_dir / f"{eid}{MODEL_SUFFIX}"
        manifest = run_manifest(
            "train",
            asdict(config),
            {"traces": args.traces},
            {"models": args.models, "model": str(Path(args.models) / out_path.name)},
            args.seed,
        )
        try:
            model = train_executable(datasets[eid], config, args.seed)
        except PSMError as exc:
            raise type(exc)(f"{eid}: {exc}") from None
        save_model(model, out_path, manifest)
        print(f"{eid}\tfinal_nll={model.train_log['final_nll']:.4f}")
    return EXIT_OK


def _load_models(model_dir: Path) -> dict:
    if not model_dir.is_dir():
        raise PSMError(f"model directory {model_dir} does not exist")
    models = {}
    for path in sorted(model_dir.glob(f"*{MODEL_SUFFIX}")):
        try:
            model = load_model(path)
        except OSError as exc:
            raise PSMError(f"{path}: cannot read model file: {exc}") from None
        if model.schema is None:
            raise PSMError(f"{path}: model file carries no schema")
        models[model.schema.id] = model
    if not models:
        raise PSMError(f"no model files in {model_dir}")
    return models


def cmd_detect(args) -> int:
    datasets = _load_traces(Path(args.traces))
    models = _load_models(Path(args.models))
    truth = None
    if args.truth is not None:
        try:
            truth = read_truth_file(args.truth)
        except (OSError, KeyError, ValueError) as exc:
            raise PSMError(f"{args.truth}: cannot read ground truth: {exc}") from None
    flow_configs = {m.config for m in models.values()}
    flow = flow_configs.pop() if len(flow_configs) == 1 else FlowConfig()
    config = DetectionConfig(
        evaluation=Evaluation(args.evaluation),
        d_fpr=args.d_fpr,
        m_fpr=args.m_fpr,
        pooling=Pooling(args.pooling),
        particles=args.particles,
        seed=args.seed,
        flow=flow,
    )
    inputs = {"models": args.models, "traces": args.traces}
    if args.truth is not None:
        inputs["truth"] = args.truth
    manifest = run_manifest("detect", config.to_json(), inputs, {"out": args.out}, args.seed)
    schemas = [datasets[eid].schema for eid in sorted(datasets)]
    report = run_detection(schemas, datasets, models, config, truth, manifest)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.write(args.out)
    survivors = report.stage_survivors()
    print(
        f"{len(report.candidates)} candidates, {sum(c.decision for c in report.candidates)} clones, "
        f"{report.skipped_candidates} skipped; survivors "
        + ", ".join(f"{k} {v}" for k, v in survivors.items())
    )
    if report.metrics is not None:
        _print_metrics(report.metrics)
    return EXIT_OK


def _print_metrics(m: dict) -> None:
    print(f"TP {m['tp']}  FP {m['fp']}  TN {m['tn']}  FN {m['fn']}")
    print(
        f"precision {m['precision']:.3f}  recall {m['recall']:.3f}  "
        f"F1 {m['f1']:.3f}  MCC {m['mcc']:.3f}"
    )


def cmd_evaluate(args) -> int:
    try:
        report = read_report(args.report)
    except OSError as exc:
        raise PSMError(f"{args.report}: cannot read report: {exc}") from None
    try:
        truth = read_truth_file(args.truth)
    except (OSError, KeyError, ValueError) as exc:
        raise PSMError(f"{args.truth}: cannot read ground truth: {exc}") from None
    counts = confusion(report.candidates, truth)
    _print_metrics({**asdict(counts), **metrics(counts)})
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psmclone", description="Trace-driven semantic clone detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-candidate decisions")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write builtin corpus traces and ground truth")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--n", type=_positive_int, default=400, help="invocations per variant (default 400)")
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=cmd_generate)

    defaults = FlowConfig()
    train = sub.add_parser("train", help="fit one flow model per trace file")
    train.add_argument("--traces", required=True, help="directory of .jsonl trace files")
    train.add_argument("--models", required=True, help="output directory for model files")
    train.add_argument("--layers", type=int, default=defaults.layers)
    train.add_argument("--hidden-width", type=int, default=defaults.hidden_width)
    train.add_argument("--epochs", type=int, default=defaults.epochs)
    train.add_argument("--batch-size", type=int, default=defaults.batch_size)
    train.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    train.add_argument("--s-max", type=float, default=defaults.s_max)
    train.add_argument("--seed", type=int, default=0)
    train.set_defaults(func=cmd_train)

    det = sub.add_parser("detect", help="run the detection pipeline and write a report")
    det.add_argument("--models", required=True)
    det.add_argument("--traces", required=True)
    det.add_argument("--evaluation", choices=[e.value for e in Evaluation], default=Evaluation.SKIP.value)
    det.add_argument("--d-fpr", type=_rate, default=0.100, help="KS significance level (default 0.100)")
    det.add_argument("--m-fpr", type=_rate, default=0.001, help="likelihood-ratio critical value (default 0.001)")
    det.add_argument("--pooling", choices=[p.value for p in Pooling], default=Pooling.SOFT.value)
    det.add_argument("--particles", type=int, default=50)
    det.add_argument("--seed", type=int, default=0)
    det.add_argument("--truth", default=None, help="ground-truth file; adds a metrics block")
    det.add_argument("--out", required=True, help="report file (.jsonl)")
    det.set_defaults(func=cmd_detect)

    ev = sub.add_parser("evaluate", help="score a report against ground truth")
    ev.add_argument("--report", required=True)
    ev.add_argument("--truth", required=True)
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "particles", 2) < 2:
        print("psmclone: error: --particles must be at least 2", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"psmclone: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PSMError, OSError) as exc:
        print(f"psmclone: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        print("psmclone: internal error", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
