import numpy as np
import pytest

from confaware.prototypes import CategoryId, CategoryKind, GaussianPrototype, PrototypeSet, Shape

FD_STEP = 1e-5
FD_ATOL = 1e-6
FD_RTOL = 1e-4


def central_diff(fn, arr, step=FD_STEP):
    """Numerical gradient of scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + step
        hi = fn()
        arr[i] = orig - step
        lo = fn()
        arr[i] = orig
        grad[i] = (hi - lo) / (2 * step)
    return grad


def assert_grad_close(analytic, numeric, atol=FD_ATOL, rtol=FD_RTOL):
    np.testing.assert_allclose(analytic, numeric, atol=atol, rtol=rtol)


def random_prototype(rng, dim, index=0, shape=Shape.FULL, spread=0.5):
    chol = np.tril(rng.normal(scale=spread, size=(dim, dim)))
    cat = CategoryId(CategoryKind.LIVE if index == 0 else CategoryKind.ATTACK, f"c{index}", index)
    return GaussianPrototype(cat, rng.normal(size=dim), chol, shape)


def random_set(rng, dim, k, shape=Shape.FULL):
    return PrototypeSet(dim, tuple(random_prototype(rng, dim, i, shape) for i in range(k)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance reporting: one PASS/FAIL line per criterion at the end of the run

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    cid, title = marker.args
    prev = _CRITERIA.get(cid, (title, True))
    _CRITERIA[cid] = (title, prev[1] and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: (int(c.rstrip("abcdefgh")), c)):
        title, ok = _CRITERIA[cid]
        terminalreporter.write_line(f"criterion {cid:<3} {'PASS' if ok else 'FAIL'}  {title}")
