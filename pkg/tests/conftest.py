import time
from dataclasses import dataclass

import pytest

from cawarp.config import desk_config
from cawarp.model import PreparedSample, prepare
from cawarp.scene import lf_plane_scene, render
from cawarp.train import TrainResult, train

_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    lines = request.config.stash[_REPORT]

    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {name} ({detail})"
        lines.append(line)
        print(line)
        return passed

    return record


@dataclass
class OverfitRun:
    spec: object
    sample: PreparedSample
    result: TrainResult
    seconds: float


def _overfit(spec, **ablation) -> OverfitRun:
    cfg = desk_config().replace(ablation=ablation)
    sample = prepare(render(spec), cfg)
    start = time.perf_counter()
    result = train(cfg, [sample])
    seconds = time.perf_counter() - start
    return OverfitRun(spec, sample, result, seconds)


@pytest.fixture(scope="session")
def overfit_two_plane():
    """Desk-config overfit on a 32x32 two-plane scene whose near plane occludes part of source 0."""
    spec = lf_plane_scene(resolution=(32, 32), disparities=(1.0, 2.0), seed=0, disparity_margin=1.0,
                          near_extent=(-0.2, -0.2, 0.5, 1.2))
    return _overfit(spec)


def _one_plane():
    # integer disparity keeps each neighbour slot at the same pixel offset across the image
    return lf_plane_scene(resolution=(32, 32), disparities=(1.0,), seed=3, disparity_margin=1.0)


@pytest.fixture(scope="session")
def overfit_one_plane():
    return _overfit(_one_plane())


@pytest.fixture(scope="session")
def overfit_one_plane_unsmoothed():
    return _overfit(_one_plane(), weight_smoothness=False)
