import pytest

from rftpy.models import WorldSpec
from rftpy.policy import PolicyParams, init_params
from rftpy.vocab import Vocab


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Add the test docstring to report."""

    outcome = yield
    report = outcome.get_result()

    test_fn = item.obj
    docstring = getattr(test_fn, "__doc__")
    if docstring:
        report.nodeid = docstring


@pytest.fixture
def small_world() -> WorldSpec:
    return WorldSpec(n_close=60, n_open=60, seed=3)


@pytest.fixture
def tiny_vocab() -> Vocab:
    return Vocab.from_symbols(["a", "b", "c", ","])


@pytest.fixture
def tiny_params(tiny_vocab: Vocab) -> PolicyParams:
    return init_params(tiny_vocab, context_window=3, hidden_dim=5, seed=7, embedding_dim=4)
