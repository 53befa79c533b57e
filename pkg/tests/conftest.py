import numpy as np
import pytest

from posebench.landmarks import CameraPose
from posebench.synth import BoxRoomScene, place_synthetic_landmarks, synthetic_dataset

_ACCEPTANCE_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.get_closest_marker("acceptance") is None or report.when != "call":
        return
    title = (item.function.__doc__ or item.name).strip().splitlines()[0]
    status = "PASS" if report.passed else "FAIL"
    measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE_LINES.append(f"{status}  {title}" + (f"  [{measured}]" if measured else ""))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def box_scene():
    """Off-centre camera in a 8 x 6 x 3 m room."""
    return BoxRoomScene((4.0, 3.0, 1.5), CameraPose.from_degrees((0.5, -0.3, 0.2)))


@pytest.fixture(scope="session")
def box_landmarks(box_scene):
    return place_synthetic_landmarks(box_scene, 37, seed=7)


@pytest.fixture(scope="session")
def box_dataset_512(box_scene, box_landmarks):
    return synthetic_dataset(box_scene, box_landmarks, 512, 256)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def run_cli(*argv):
    from posebench.cli import main

    return main([str(a) for a in argv])


def run_pipeline(root, width=256, height=128):
    """synth -> sweep -> score -> heatmap -> lowess -> aggregate, all through the CLI."""
    root.mkdir(parents=True, exist_ok=True)
    steps = [
        ("synth", "--width", width, "--height", height, "--position", 0.5, -0.3, 0.2, "--seed", 7,
         "--out", root / "scene"),
        ("sweep", root / "scene" / "depth.pfm", "--image-id", "synth", "--out", root / "pred" / "oracle"),
        ("score", "--predictions", root / "pred", "--model", "oracle", "--dataset", root / "scene" / "dataset.json",
         "--image", "synth", "--out", root / "scores"),
        ("heatmap", root / "scores" / "errors.csv", "--out", root / "heatmap.csv", "--svg", root / "heatmap.svg"),
        ("lowess", root / "scores" / "residuals.csv", "--out", root / "lowess", "--grid", 25),
        ("aggregate", root / "scores" / "errors.csv", "--out", root / "table"),
    ]
    for step in steps:
        code = run_cli(*step)
        assert code == 0, f"{step[0]} exited with {code}"
    return root


@pytest.fixture
def cli():
    return run_cli
