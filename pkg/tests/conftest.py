import json
from pathlib import Path

import numpy as np
import pytest

from aislemap.pipeline import PipelineConfig, run_pipeline, open_bundle
from aislemap.synthetic import (
    CX,
    CY,
    FX,
    FY,
    Rect,
    _camera_pose,
    _rect_cloud,
    generate_store,
    write_store,
)


@pytest.fixture(scope="session")
def pinned_store(tmp_path_factory):
    """The seed-pinned 4-aisle / ~100-product store plus its built bundle.

    Session-scoped: the pose map build and raster work are shared by the
    service, CLI, and acceptance tests.
    """
    root = tmp_path_factory.mktemp("pinned")
    data = root / "data"
    store = generate_store(aisles=4, products=100, seed=7)
    write_store(store, data)
    cfg = PipelineConfig(
        frames=str(data / "frames.jsonl"),
        cloud=str(data / "cloud.xyz"),
        out_dir=str(root / "bundle"),
    )
    bundle = run_pipeline(cfg)
    return {
        "store": store,
        "data": data,
        "bundle_dir": root / "bundle",
        "bundle": bundle,
        "truth": json.loads((data / "truth.json").read_text()),
    }


@pytest.fixture(scope="session")
def pinned_loaded(pinned_store):
    return open_bundle(pinned_store["bundle_dir"])


def make_corridor_scan(out_dir: Path, length_m: float = 8.0,
                       width_m: float = 1.5) -> Path:
    """A straight corridor between two wall slabs, camera walking the
    centerline. No detections; embeddings constant."""
    out_dir.mkdir(parents=True, exist_ok=True)
    y0 = 0.2
    cloud = np.vstack([
        _rect_cloud(Rect(0.0, 0.0, length_m, y0), 0.8),
        _rect_cloud(Rect(0.0, y0 + width_m, length_m, y0 + width_m + 0.2), 0.8),
    ])
    np.savetxt(out_dir / "cloud.xyz", cloud, fmt="%.4f")

    mid_y = y0 + width_m / 2.0
    frames = []
    x = 0.5
    i = 0
    while x <= length_m - 0.5 + 1e-9:
        rot, t = _camera_pose(x, mid_y, 0.0)
        frames.append({
            "frame_id": f"f{i:05d}",
            "timestamp": i * 0.2,
            "intrinsics": {"fx": FX, "fy": FY, "cx": CX, "cy": CY},
            "pose": {
                "R": [round(v, 12) for v in rot.flatten().tolist()],
                "t": [round(v, 6) for v in t.tolist()],
            },
            "embedding": [1.0, 0.0],
            "detections": [],
        })
        x += 0.25
        i += 1
    (out_dir / "frames.jsonl").write_text(
        "\n".join(json.dumps(f) for f in frames) + "\n"
    )
    return out_dir


@pytest.fixture(scope="session")
def corridor_scan():
    """Factory fixture: write a corridor scan and hand back its input paths."""
    def build(out_dir: Path, length_m: float = 8.0, width_m: float = 1.5) -> dict:
        root = make_corridor_scan(out_dir, length_m, width_m)
        return {"frames": root / "frames.jsonl", "cloud": root / "cloud.xyz"}
    return build
