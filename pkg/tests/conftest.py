import time

import pytest

from sicnet.harness import ExperimentConfig, build_detector

# criterion number -> (passed, one-line detail)
_RESULTS: dict[int, tuple[bool, str]] = {}


class Criterion:
    def __init__(self, n: int):
        self.n = n
        self.t0 = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def record(self, ok: bool, detail: str) -> bool:
        _RESULTS[self.n] = (bool(ok), f"{detail} [{self.elapsed:.1f}s]")
        return bool(ok)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return Criterion(marker.args[0])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    n = marker.args[0]
    ok, detail = _RESULTS.get(n, (rep.passed, "no measurement recorded"))
    if rep.failed and ok:
        ok, detail = False, f"{detail}; error: {call.excinfo.typename if call.excinfo else 'failure'}"
    _RESULTS[n] = (ok and rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


class ModelCache:
    """Trains each (config, channel draw) once per session, on first request."""

    def __init__(self):
        self._store = {}

    def get(self, cfg: ExperimentConfig, realization: int = 0):
        key = (cfg.config_hash(), realization)
        if key not in self._store:
            self._store[key] = build_detector(cfg, cfg.channel, realization)
        return self._store[key]


@pytest.fixture(scope="session")
def models():
    return ModelCache()
