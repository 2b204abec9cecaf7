"""Builtin benchmark corpus: clone classes, triggers, traces and ground truth.

Classes
-------
factorial
    ``fa`` (for loop), ``fb`` (while loop), ``fc`` (recursive) and the
    delegate ``fd(n, guard)``, which returns -1 or throws for ``n < 1``
    depending on ``guard``. ``fd`` is a conditional clone of the other three.
fibonacci
    iterative, naive recursive and closed-form (Binet) variants.
echo, mirror, rotate
    the bijections ``n``, ``20 - n`` and ``(n + 10) mod 21`` of the trigger
    domain. Over triggers ``n ~ U{0..20}`` all three classes have the same
    input and output marginals; only the joint IO relation differs, so only
    the model stage can separate them.
sort
    two-element float sorts whose output list is exploded into ``lo`` and
    ``hi`` elements (bubble, insertion, builtin).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EvaluationError
from .seeding import derive_seed
from .trace import (
    AtomicElement,
    DataType,
    ElementRole,
    ExecutableSchema,
    TraceDataset,
    io_elements,
    write_trace_file,
)

TRIGGER_MAX = 20
GUARD_VALUES = ("none", "val", "throw")

Trigger = Callable[[np.random.Generator, int], list]


class GuardError(Exception):
    """A designed exception of a variant; the invocation is dropped from the trace."""


@dataclass(frozen=True)
class Variant:
    schema: ExecutableSchema
    func: Callable[..., tuple]
    # documented conditional divergence from the rest of its class
    conditional: bool = False

    @property
    def id(self) -> str:
        return self.schema.id

    def input_names(self) -> list[str]:
        inputs, _ = io_elements(self.schema)
        return [self.schema.elements[j].name for j in inputs]

    def __call__(self, **inputs) -> tuple:
        return self.func(**inputs)


@dataclass(frozen=True)
class CloneClass:
    name: str
    triggers: Mapping[str, Trigger]
    variants: tuple[Variant, ...]


@dataclass(frozen=True)
class CorpusSpec:
    classes: tuple[CloneClass, ...]

    def variants(self) -> list[Variant]:
        return [v for c in self.classes for v in c.variants]

    def schemas(self) -> list[ExecutableSchema]:
        return [v.schema for v in self.variants()]


# -- builtin implementations ---------------------------------------------

def _fa(n):
    product = 1
    for i in range(1, n + 1):
        product *= i
    return (product,)


def _fb(n):
    product, i = 1, 1
    while i <= n:
        product *= i
        i += 1
    return (product,)


def _fc_rec(n):
    if n <= 1:
        return 1
    return _fc_rec(n - 1) * n


def _fc(n):
    return (_fc_rec(n),)


def _fd(n, guard):
    if n < 1 and guard == "val":
        return (-1,)
    if n < 1 and guard == "throw":
        raise GuardError("guard requested an exception")
    return (_fc_rec(n),)


def _echo_direct(n):
    return (n,)


def _echo_loop(n):
    count = 0
    while count < n:
        count += 1
    return (count,)


def _mirror_sub(n):
    return (TRIGGER_MAX - n,)


def _mirror_loop(n):
    count = 0
    for _ in range(n, TRIGGER_MAX):
        count += 1
    return (count,)


def _rotate_mod(n):
    return ((n + 10) % (TRIGGER_MAX + 1),)


def _rotate_branch(n):
    return (n + 10 if n <= 10 else n - 11,)


def _fib_iter(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return (a,)


def _fib_naive(n):
    return n if n < 2 else _fib_naive(n - 1) + _fib_naive(n - 2)


def _fib_rec(n):
    return (_fib_naive(n),)


def _fib_binet(n):
    phi = (1 + math.sqrt(5)) / 2
    return (int(round(phi**n / math.sqrt(5))),)


def _sort_bubble(x0, x1):
    xs = [x0, x1]
    for i in range(len(xs)):
        for j in range(len(xs) - 1 - i):
            if xs[j] > xs[j + 1]:
                xs[j], xs[j + 1] = xs[j + 1], xs[j]
    return tuple(xs)


def _sort_insertion(x0, x1):
    out = []
    for x in (x0, x1):
        k = len(out)
        while k > 0 and out[k - 1] > x:
            k -= 1
        out.insert(k, x)
    return tuple(out)


def _sort_builtin(x0, x1):
    return tuple(sorted((x0, x1)))


def _schema(sid, display, inputs, outputs, owner=None):
    elements = [AtomicElement(n, ElementRole.PARAMETER_IN, t) for n, t in inputs]
    elements += [AtomicElement(n, ElementRole.RESULT_OUT, t) for n, t in outputs]
    return ExecutableSchema(sid, display, tuple(elements), owner)


def _uniform_int(rng, n):
    return [int(v) for v in rng.integers(0, TRIGGER_MAX + 1, size=n)]


def _uniform_float(rng, n):
    return [float(v) for v in rng.uniform(0.0, TRIGGER_MAX, size=n)]


def _guard(rng, n):
    return [GUARD_VALUES[k] for k in rng.integers(0, len(GUARD_VALUES), size=n)]


def builtin_corpus() -> CorpusSpec:
    I, F, T = DataType.INTEGER, DataType.FLOAT, DataType.TEXT

    def int_fn(sid, display, fn, out, owner):
        return Variant(_schema(sid, display, [("n", I)], [(out, I)], owner), fn)

    factorial = CloneClass(
        "factorial",
        {"n": _uniform_int, "guard": _guard},
        (
            int_fn("fa", "int fa(int n)", _fa, "fa", "ForFactorial"),
            int_fn("fb", "int fb(int n)", _fb, "fb", "WhileFactorial"),
            int_fn("fc", "int fc(int n)", _fc, "fc", "RecursiveFactorial"),
            Variant(
                _schema("fd", "int fd(int n, String guard)", [("n", I), ("guard", T)], [("fd", I)], "DelegateFactorial"),
                _fd,
                conditional=True,
            ),
        ),
    )
    fibonacci = CloneClass(
        "fibonacci",
        {"n": _uniform_int},
        (
            int_fn("fib_binet", "long fib(int n)", _fib_binet, "fib", "BinetFibonacci"),
            int_fn("fib_iter", "long fib(int n)", _fib_iter, "fib", "IterativeFibonacci"),
            int_fn("fib_rec", "long fib(int n)", _fib_rec, "fib", "RecursiveFibonacci"),
        ),
    )
    echo = CloneClass(
        "echo",
        {"n": _uniform_int},
        (
            int_fn("echo_direct", "int echo(int n)", _echo_direct, "r", "DirectEcho"),
            int_fn("echo_loop", "int echo(int n)", _echo_loop, "r", "CountingEcho"),
        ),
    )
    mirror = CloneClass(
        "mirror",
        {"n": _uniform_int},
        (
            int_fn("mirror_loop", "int mirror(int n)", _mirror_loop, "r", "CountingMirror"),
            int_fn("mirror_sub", "int mirror(int n)", _mirror_sub, "r", "SubtractingMirror"),
        ),
    )
    rotate = CloneClass(
        "rotate",
        {"n": _uniform_int},
        (
            int_fn("rotate_branch", "int rotate(int n)", _rotate_branch, "r", "BranchingRotate"),
            int_fn("rotate_mod", "int rotate(int n)", _rotate_mod, "r", "ModularRotate"),
        ),
    )

    def sort_fn(sid, fn, owner):
        return Variant(
            _schema(sid, "double[] sort(double x0, double x1)", [("x0", F), ("x1", F)], [("lo", F), ("hi", F)], owner),
            fn,
        )

    sort = CloneClass(
        "sort",
        {"x0": _uniform_float, "x1": _uniform_float},
        (
            sort_fn("sort_bubble", _sort_bubble, "BubbleSort"),
            sort_fn("sort_builtin", _sort_builtin, "BuiltinSort"),
            sort_fn("sort_insertion", _sort_insertion, "InsertionSort"),
        ),
    )
    return CorpusSpec((factorial, fibonacci, echo, mirror, rotate, sort))


# -- generation ----------------------------------------------------------

def class_triggers(cls: CloneClass, n: int, seed: int, fixed: Mapping[str, object] | None = None) -> dict[str, list]:
    """The shared trigger stream of one clone class (one list per input name)."""
    fixed = fixed or {}
    streams = {}
    for name, gen in cls.triggers.items():
        if name in fixed:
            streams[name] = [fixed[name]] * n
        else:
            streams[name] = gen(np.random.default_rng(derive_seed(seed, "trigger", cls.name, name)), n)
    return streams


def _invoke(variant: Variant, inputs: dict):
    try:
        return variant(**inputs)
    except GuardError:
        raise
    except Exception as exc:
        raise EvaluationError(f"{variant.id} failed on {inputs}: {exc!r}") from exc


def generate_traces(spec: CorpusSpec, n: int, seed: int) -> dict[str, TraceDataset]:
    """Run every variant on its class's shared triggers and record the traces.

    Invocations that raise a designed :class:`GuardError` are dropped; any
    other exception is reported as :class:`EvaluationError`.
    """
    if n < 1:
        raise ValueError("need at least one invocation per variant")
    out = {}
    for cls in spec.classes:
        streams = class_triggers(cls, n, seed)
        for variant in cls.variants:
            names = variant.input_names()
            rows = []
            for i in range(n):
                inputs = {name: streams[name][i] for name in names}
                try:
                    outputs = _invoke(variant, inputs)
                except GuardError:
                    continue
                rows.append(tuple(inputs[name] for name in names) + tuple(outputs))
            out[variant.id] = TraceDataset(variant.schema, tuple(rows))
    return out


def ground_truth(spec: CorpusSpec) -> dict[str, str]:
    truth = {}
    for cls in spec.classes:
        for variant in cls.variants:
            if variant.id in truth:
                raise ValueError(f"executable {variant.id!r} labeled twice")
            truth[variant.id] = cls.name
    return truth


def truth_classes(truth: Mapping[str, str]) -> dict[str, list[str]]:
    classes: dict[str, list[str]] = {}
    for eid, label in sorted(truth.items()):
        classes.setdefault(label, []).append(eid)
    return classes


def positive_pairs(truth: Mapping[str, str]) -> int:
    return sum(len(m) * (len(m) - 1) // 2 for m in truth_classes(truth).values())


def write_truth_file(truth: Mapping[str, str], path, manifest: dict | None = None) -> None:
    obj = {"classes": truth_classes(truth)}
    if manifest is not None:
        obj["manifest"] = manifest
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_truth_file(path) -> dict[str, str]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    truth = {}
    for label, ids in obj["classes"].items():
        for eid in ids:
            if eid in truth:
                raise ValueError(f"{path}: executable {eid!r} labeled twice")
            truth[eid] = label
    return truth


# -- differential testing ------------------------------------------------

@dataclass(frozen=True)
class Divergence:
    variant: str
    reference: str
    inputs: dict
    expected: object
    actual: object
    conditional: bool


@dataclass
class DifferentialReport:
    samples: int
    divergences: dict[str, list[Divergence]] = field(default_factory=dict)

    def equal(self, class_name: str) -> bool:
        """No divergences other than documented conditional ones."""
        return not any(not d.conditional for d in self.divergences.get(class_name, []))

    def for_variant(self, variant_id: str) -> list[Divergence]:
        return [d for ds in self.divergences.values() for d in ds if d.variant == variant_id]


def differential_check(
    spec: CorpusSpec,
    samples: int,
    seed: int,
    fixed: Mapping[str, object] | None = None,
) -> DifferentialReport:
    """Compare every variant against its class's first unconditional variant.

    ``fixed`` pins named trigger inputs to a constant. A designed exception
    is compared as the outcome ``"raised"``.
    """
    report = DifferentialReport(samples=samples)
    for cls in spec.classes:
        streams = class_triggers(cls, samples, seed, fixed)
        reference = next(v for v in cls.variants if not v.conditional)
        found = []
        for variant in cls.variants:
            if variant is reference:
                continue
            for i in range(samples):
                ref_inputs = {k: streams[k][i] for k in reference.input_names()}
                var_inputs = {k: streams[k][i] for k in variant.input_names()}
                expected = _outcome(reference, ref_inputs)
                actual = _outcome(variant, var_inputs)
                if expected != actual:
                    found.append(
                        Divergence(variant.id, reference.id, var_inputs, expected, actual, variant.conditional)
                    )
        report.divergences[cls.name] = found
    return report


def _outcome(variant: Variant, inputs: dict):
    try:
        return _invoke(variant, inputs)
    except GuardError:
        return "raised"


def write_corpus(out_dir, traces: Mapping[str, TraceDataset], truth: Mapping[str, str], manifest: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for eid in sorted(traces):
        path = out_dir / f"{eid}.jsonl"
        write_trace_file(traces[eid], path)
        written.append(path)
    truth_path = out_dir / "truth.json"
    write_truth_file(truth, truth_path, manifest)
    written.append(truth_path)
    return written
