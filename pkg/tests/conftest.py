import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_sphere_distance(h, w, radius=1.0):
    return np.full((h, w), float(radius))


def write_perspective_pair(root, stem, width=48, height=32, seed=0, depth_value=None):
    """A smooth RGB image plus a tilted-plane depth map in the curation layout."""
    from panosphere.raster import RasterKind, write_raster

    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width] / max(width, height)
    rgb = np.stack([x, y, 0.5 + 0.3 * np.sin(6 * x + rng.uniform(0, 3))], axis=-1)
    if depth_value is None:
        depth = 2.0 + x + 0.5 * y
    else:
        depth = np.full((height, width), float(depth_value))
    write_raster(root / f"{stem}_rgb.psr", rgb, RasterKind.RGB)
    write_raster(root / f"{stem}_depth.psr", depth, RasterKind.DISTANCE)
    return rgb, depth


@pytest.fixture
def tiny_datasets(tmp_path):
    """Two dataset roots with a couple of pairs each and a JSON config."""
    import json

    data = tmp_path / "data"
    for name, n in (("hps", 2), ("vk", 3)):
        root = data / name
        root.mkdir(parents=True)
        for i in range(n):
            write_perspective_pair(root, f"f{i:03d}", seed=i)
    cfg = {
        "grid": [128, 64],
        "seed": 5,
        "datasets": [
            {"name": "HPS", "root": "data/hps", "xfov_deg": 60, "sampling_probability": 16.59},
            {"name": "VK", "root": "data/vk", "xfov_deg": 80, "sampling_probability": 14.05},
        ],
    }
    path = tmp_path / "curate.json"
    path.write_text(json.dumps(cfg))
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
