import numpy as np
import pytest

from legible.data import TrajectoryData
from legible.envgen import G_MAX, Workspace, sample_environment, sample_trajectory, substream
from legible.oracles import ALL_METRICS, metric_scores


def make_data(n, goal_counts=(2, 3), seed=0, metrics=ALL_METRICS, g_max=G_MAX, name="fixture"):
    """In-memory labeled split: one fresh environment per trajectory."""
    ws = Workspace()
    rng = substream(seed, 99)
    points = np.zeros((n, 100, 3))
    goals = np.zeros((n, g_max, 3))
    mask = np.zeros((n, g_max), dtype=bool)
    targets = np.zeros(n, dtype=np.int64)
    labels = {str(m): np.zeros((n, g_max)) for m in metrics}
    for i in range(n):
        k = int(goal_counts[rng.integers(len(goal_counts))])
        env = sample_environment(rng, ws, k, env_id=f"e{i}")
        s = sample_trajectory(rng, env, ws)
        points[i], goals[i, :k], mask[i, :k], targets[i] = s.points, env.goals, True, s.target_index
        for m in metrics:
            labels[str(m)][i, :k] = metric_scores(m, s.points, env.goals)
    return TrajectoryData(name, points, goals, mask, targets, [f"e{i}" for i in range(n)], labels)


# acceptance summary: one line per criterion at the end of the run
_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    # the call phase decides; a setup error (e.g. a failed pipeline fixture) also counts
    if marker is not None and (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        number, title = marker.args
        details = "; ".join(v for k, v in item.user_properties if k == "detail")
        status = "PASS" if rep.passed else "FAIL"
        item.config.stash[_ACCEPTANCE].append((number, f"criterion {number} {title}: {status}  {details}".rstrip()))


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(_ACCEPTANCE, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Attach a human-readable measurement to the current test's summary line."""

    def add(text: str) -> None:
        request.node.user_properties.append(("detail", text))

    return add
