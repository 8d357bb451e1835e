import numpy as np
import pytest

from pose_embed.pose import PoseDataset

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        num, title = marker.args
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        _acceptance[num] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance):
        title, status, detail = _acceptance[num]
        terminalreporter.write_line(f"[{status}] criterion {num:>2}: {title}" + (f"  ({detail})" if detail else ""))


def random_dataset(rng, n, spread=6.0, grid=None, dup_frac=0.0, root=6):
    """Poses scattered around a random base skeleton.

    ``spread`` scales per-joint noise; ``grid`` snaps coordinates to a
    multiple of that step (creating exact ties); a fraction of poses are
    exact translated duplicates of earlier ones.
    """
    base = rng.uniform(0, 200, size=(16, 2))
    scales = rng.uniform(0.2, 1.5, size=n) * spread
    joints = base + rng.normal(size=(n, 16, 2)) * scales[:, None, None]
    joints += rng.uniform(-50, 50, size=(n, 1, 2))
    n_dup = int(dup_frac * n)
    for i in range(1, n_dup + 1):
        src = rng.integers(0, n - i)
        joints[n - i] = joints[src] + rng.integers(-20, 20, size=2)
    if grid:
        joints = np.round(joints / grid) * grid
    ids = [f"p{i:04d}" for i in rng.permutation(n)]
    return PoseDataset(ids, joints, None, root)


@pytest.fixture
def detail(request):
    """Attach a short measured value to the acceptance summary line."""
    return lambda text: request.node.user_properties.append(("detail", text))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
