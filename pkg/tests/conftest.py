import pytest
from hypothesis import strategies as st

from psmclone.trace import AtomicElement, DataType, ElementRole, ExecutableSchema

I, F, T = DataType.INTEGER, DataType.FLOAT, DataType.TEXT
PIN, ROUT = ElementRole.PARAMETER_IN, ElementRole.RESULT_OUT


def make_schema(sid, inputs, outputs):
    elements = [AtomicElement(n, PIN, t) for n, t in inputs]
    elements += [AtomicElement(n, ROUT, t) for n, t in outputs]
    return ExecutableSchema(sid, sid, tuple(elements))


@pytest.fixture
def fa_schema():
    return make_schema("fa", [("n", I)], [("fa", I)])


@pytest.fixture
def fd_schema():
    return make_schema("fd", [("n", I), ("guard", T)], [("fd", I)])


@st.composite
def schemas(draw, max_elements=6):
    n = draw(st.integers(0, max_elements))
    roles = draw(st.lists(st.sampled_from(list(ElementRole)), min_size=n, max_size=n))
    dtypes = draw(st.lists(st.sampled_from(list(DataType)), min_size=n, max_size=n))
    sid = draw(st.text("abcdefgh", min_size=1, max_size=6))
    elements = tuple(AtomicElement(f"e{k}", r, d) for k, (r, d) in enumerate(zip(roles, dtypes)))
    return ExecutableSchema(sid, sid, elements)


def injected_report(tp, fn, sizes=(30, 7, 2, 2), singletons=67):
    """A report over synthetic executables whose decisions realize given counts.

    Classes of the given sizes plus singletons; the first ``tp`` positive pairs
    are decided clones, the next ``fn`` are not, and no negative pair is.
    Returns ``(report, truth)``.
    """
    from itertools import combinations

    from psmclone.report import CandidateResult, CloneReport, DetectionConfig, Stage
    from psmclone.search import CandidatePair

    truth = {}
    for k, size in enumerate(sizes):
        for m in range(size):
            truth[f"c{k}_{m:02d}"] = f"class{k}"
    for m in range(singletons):
        truth[f"s{m:02d}"] = f"single{m}"
    positives = [p for p in combinations(sorted(truth), 2) if truth[p[0]] == truth[p[1]]]
    if tp + fn != len(positives):
        raise ValueError(f"{tp} + {fn} does not match {len(positives)} positive pairs")
    accepted = set(positives[:tp])
    candidates = []
    for a, b in combinations(sorted(truth), 2):
        hit = (a, b) in accepted
        candidates.append(CandidateResult(CandidatePair(a, b), Stage.MODEL if hit else Stage.DYNAMIC, hit))
    return CloneReport(DetectionConfig(), candidates, []), truth


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for criterion in sorted(results):
            terminalreporter.write_line(results[criterion])
