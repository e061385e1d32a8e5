import numpy as np
import pytest

from wsner.config import resource_path
from wsner.core import COVIDNEWS, Corpus, EntitySpan, Sentence
from wsner.weaklabel import SynthSpec, generate_synthetic


def random_spans(rng, n, types, max_spans=5):
    """A random valid flat span list over ``n`` tokens."""
    if n == 0:
        return []
    k = int(rng.integers(0, max_spans + 1))
    cuts = sorted(set(int(x) for x in rng.integers(0, n + 1, 2 * k)))
    spans = []
    for a, b in zip(cuts[::2], cuts[1::2]):
        if a < b:
            spans.append(EntitySpan(a, b, str(types[rng.integers(len(types))])))
    return spans


def random_corpus(rng, n_sentences, types=COVIDNEWS.types, max_len=12, max_spans=5, weak=True):
    sents = []
    for _ in range(n_sentences):
        n = int(rng.integers(1, max_len + 1))
        toks = tuple(f"w{rng.integers(50)}" for _ in range(n))
        sents.append(Sentence(toks, random_spans(rng, n, types, max_spans),
                              random_spans(rng, n, types, max_spans) if weak else None))
    return Corpus(tuple(sents), COVIDNEWS if types == COVIDNEWS.types else None)


@pytest.fixture(scope="session")
def synth_small():
    """300 synthetic gold sentences from the packaged grammar."""
    return generate_synthetic(SynthSpec.from_file(resource_path("covid_synth.yaml"), sentence_count=300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance-criterion reporting
# ---------------------------------------------------------------------------

CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")
    config.addinivalue_line("markers", "slow: multi-minute training runs")


@pytest.fixture
def record_criterion(request):
    """record_criterion(ok, detail): store the verdict printed in the terminal summary."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0]

    def record(ok, detail):
        CRITERIA[number] = ("PASS" if ok else "FAIL", detail)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.skipped:
        CRITERIA[n] = ("SKIP", str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "skipped")
    elif rep.failed and (rep.when == "call" or n not in CRITERIA):
        if n not in CRITERIA or CRITERIA[n][0] == "PASS":
            CRITERIA[n] = ("FAIL", f"{rep.when} raised: {call.excinfo.typename if call.excinfo else 'error'}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        verdict, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {verdict} - {detail}")
