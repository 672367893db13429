import json
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from aislemap.errors import DimensionMismatch, EmptyCloud, EmptyInput, SingularIntrinsics
from aislemap.geometry import CellState, GridPoint, WorldPoint, grid_from_rows
from aislemap.ingest import (
    CameraIntrinsics,
    Detection,
    Frame,
    FramePose,
    ProductLabel,
    build_occupancy,
    cosine_similarity,
    extract_products,
    load_cloud,
    load_frames,
    parse_frame,
    products_from_json,
    products_to_json,
    project,
    refine_position,
    select_keyframes,
    unproject,
)


def random_pose(rng: np.random.Generator) -> FramePose:
    rot = Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix()
    t = rng.uniform(-10, 10, size=3)
    return FramePose(rotation=rot, translation=t)


def random_intrinsics(rng: np.random.Generator) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=float(rng.uniform(100, 1500)),
        fy=float(rng.uniform(100, 1500)),
        cx=float(rng.uniform(100, 900)),
        cy=float(rng.uniform(100, 700)),
    )


class TestCameraRoundTrip:
    def test_pixel_depth_roundtrip(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            intr = random_intrinsics(rng)
            pose = random_pose(rng)
            u = float(rng.uniform(0, 1280))
            v = float(rng.uniform(0, 960))
            depth = float(rng.uniform(0.2, 12.0))
            det = Detection("f0", u, v, depth, ProductLabel(name="x"))
            world = unproject(det, intr, pose)
            u2, v2, d2 = project(world, intr, pose)
            assert abs(u2 - u) <= 1e-9 * max(1.0, abs(u))
            assert abs(v2 - v) <= 1e-9 * max(1.0, abs(v))
            assert abs(d2 - depth) <= 1e-9 * depth

    def test_unproject_center_pixel_is_forward(self):
        intr = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240)
        pose = FramePose(rotation=np.eye(3), translation=np.zeros(3))
        det = Detection("f0", 320.0, 240.0, 2.5, ProductLabel(name="x"))
        world = unproject(det, intr, pose)
        assert np.allclose(world, [0, 0, 2.5])

    def test_zero_focal_rejected(self):
        with pytest.raises((SingularIntrinsics, ValueError)):
            CameraIntrinsics(fx=0.0, fy=500, cx=320, cy=240)


class TestOccupancy:
    def test_band_points_mark_occupied(self):
        # one shelf cell hit 3x inside the z band, clutter outside the band
        pts = []
        for _ in range(3):
            pts.append([1.02, 1.02, 0.8])
        pts += [[1.02, 1.02, 0.02]] * 50     # floor clutter
        pts += [[1.02, 1.02, 2.5]] * 50      # ceiling clutter
        traversal = [WorldPoint(0.2, 0.2), WorldPoint(1.8, 0.2), WorldPoint(1.0, 1.8)]
        grid = build_occupancy(np.array(pts), resolution=0.1, traversal=traversal)
        cell = grid.world_to_grid(WorldPoint(1.02, 1.02))
        assert grid.state_at(cell) == CellState.OCCUPIED

    def test_min_hits_filters_speckle(self):
        pts = np.array([[1.0, 1.0, 0.8], [1.0, 1.0, 0.9]])  # only two hits
        traversal = [WorldPoint(0.2, 0.2), WorldPoint(1.8, 0.2), WorldPoint(1.0, 1.8)]
        grid = build_occupancy(pts, resolution=0.1, min_hits=3, traversal=traversal)
        assert not grid.mask(CellState.OCCUPIED).any()

    def test_traversal_hull_interior_is_free(self):
        pts = np.array([[0.5, 0.5, 0.8]] * 3)
        traversal = [WorldPoint(0.0, 0.0), WorldPoint(2.0, 0.0),
                     WorldPoint(2.0, 2.0), WorldPoint(0.0, 2.0)]
        grid = build_occupancy(pts, resolution=0.1, traversal=traversal)
        inside = grid.world_to_grid(WorldPoint(1.5, 1.5))
        assert grid.state_at(inside) == CellState.FREE
        # corner cells beyond the hull stay unknown
        assert grid.state_at(GridPoint(0, 0)) == CellState.UNKNOWN

    def test_occupied_wins_over_free(self):
        pts = np.array([[1.0, 1.0, 0.8]] * 5)
        traversal = [WorldPoint(0.0, 0.0), WorldPoint(2.0, 0.0),
                     WorldPoint(2.0, 2.0), WorldPoint(0.0, 2.0)]
        grid = build_occupancy(pts, resolution=0.1, traversal=traversal)
        cell = grid.world_to_grid(WorldPoint(1.0, 1.0))
        assert grid.state_at(cell) == CellState.OCCUPIED

    def test_empty_cloud_file_raises(self, tmp_path):
        path = tmp_path / "cloud.xyz"
        path.write_text("")
        with pytest.raises(EmptyCloud):
            load_cloud(path)

    def test_empty_cloud_array_degrades_to_unknown(self):
        grid = build_occupancy(np.zeros((0, 3)))
        assert not grid.mask(CellState.OCCUPIED).any()
        assert not grid.mask(CellState.FREE).any()

    def test_band_excludes_floor_and_ceiling(self):
        pts = np.vstack([
            np.tile([1.0, 1.0, 0.05], (10, 1)),
            np.tile([1.0, 1.0, 1.9], (10, 1)),
        ])
        traversal = [WorldPoint(0.2, 0.2), WorldPoint(1.8, 0.2), WorldPoint(1.0, 1.8)]
        grid = build_occupancy(pts, resolution=0.1, z_min=0.1, z_max=1.6,
                               traversal=traversal)
        assert not grid.mask(CellState.OCCUPIED).any()


def replay_keyframe_filter(embeddings, threshold):
    """Independent oracle: keep frame 0, then every frame whose cosine to
    the last kept embedding drops below the threshold."""
    if not len(embeddings):
        return []
    kept = [0]
    for i in range(1, len(embeddings)):
        a, b = embeddings[kept[-1]], embeddings[i]
        cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        if cos < threshold:
            kept.append(i)
    return kept


class TestKeyframes:
    def _walk(self, n, drift, seed=0):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=8)
        v /= np.linalg.norm(v)
        out = [v.copy()]
        for _ in range(n - 1):
            v = v + drift * rng.normal(size=8)
            v /= np.linalg.norm(v)
            out.append(v.copy())
        return out

    def test_matches_replay_oracle(self):
        for drift in (0.02, 0.1, 0.4):
            embs = self._walk(300, drift, seed=int(drift * 1000))
            got = select_keyframes(embs, 0.85)
            assert got == replay_keyframe_filter(embs, 0.85)

    def test_first_frame_always_kept(self):
        embs = self._walk(50, 0.01)
        assert select_keyframes(embs, 0.85)[0] == 0

    def test_consecutive_kept_below_threshold(self):
        embs = self._walk(400, 0.2, seed=9)
        kept = select_keyframes(embs, 0.85)
        for a, b in zip(kept, kept[1:]):
            assert cosine_similarity(embs[a], embs[b]) < 0.85

    def test_identical_embeddings_keep_only_first(self):
        embs = [np.ones(4)] * 20
        assert select_keyframes(embs, 0.85) == [0]

    def test_empty_input_raises(self):
        with pytest.raises(EmptyInput):
            select_keyframes([], 0.85)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            select_keyframes([np.ones(4), np.ones(5)], 0.85)


class TestRefinePosition:
    def test_pull_back_from_inside_shelf(self):
        grid = grid_from_rows([
            "....##",
            "....##",
        ], resolution=0.5)
        cam = WorldPoint(0.25, 0.25)
        raw = WorldPoint(2.75, 0.25)  # deep inside the occupied block
        refined = refine_position(grid, cam, raw, max_push_m=1.0)
        assert refined.refined
        cell = grid.world_to_grid(refined.position)
        # last free cell before the wall: the shelf-adjacent face cell
        assert grid.state_at(cell) == CellState.FREE
        assert cell.col == 3

    def test_push_forward_onto_face(self):
        grid = grid_from_rows([
            "....##",
            "....##",
        ], resolution=0.5)
        cam = WorldPoint(0.25, 0.25)
        raw = WorldPoint(1.25, 0.25)  # depth came up short of the shelf
        refined = refine_position(grid, cam, raw, max_push_m=2.0)
        assert refined.refined
        cell = grid.world_to_grid(refined.position)
        assert grid.state_at(cell) == CellState.FREE
        assert cell.col == 3  # touching the first wall ahead

    def test_push_capped(self):
        grid = grid_from_rows([
            "........##",
            "........##",
        ], resolution=0.5)
        cam = WorldPoint(0.25, 0.25)
        raw = WorldPoint(0.75, 0.25)  # face is ~3.5 m ahead, cap at 1 m
        refined = refine_position(grid, cam, raw, max_push_m=1.0)
        assert not refined.refined
        assert refined.position == raw


class TestProducts:
    def _frame_with_detection(self):
        intr = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240)
        # camera at origin looking along +x (world) with camera z forward
        rot = np.array([[0.0, 0.0, 1.0],
                        [-1.0, 0.0, 0.0],
                        [0.0, -1.0, 0.0]])
        pose = FramePose(rotation=rot, translation=np.array([0.25, 0.75, 1.2]))
        det = Detection("f0", 320.0, 240.0, 2.0,
                        ProductLabel(name="Basmati Rice", brand="Tilda",
                                     category="rice"))
        return Frame("f0", 0.0, intr, pose, None, [det])

    def test_extract_assigns_sequential_ids(self):
        grid = grid_from_rows(["......", "......"], resolution=1.0)
        frame = self._frame_with_detection()
        records = extract_products([frame, frame], grid)
        assert [r.product_id for r in records] == ["p0000", "p0001"]

    def test_json_roundtrip(self):
        grid = grid_from_rows(["......", "......"], resolution=1.0)
        records = extract_products([self._frame_with_detection()], grid)
        back = products_from_json(products_to_json(records))
        assert back == records

    def test_no_detections_is_empty(self):
        grid = grid_from_rows(["..", ".."], resolution=1.0)
        intr = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240)
        pose = FramePose(rotation=np.eye(3), translation=np.zeros(3))
        frame = Frame("f0", 0.0, intr, pose, None, [])
        assert extract_products([frame], grid) == []


class TestParsing:
    def test_parse_frame_rejects_reflection(self):
        bad = -np.eye(3)  # det = -1
        record = {
            "frame_id": "f0", "timestamp": 0.0,
            "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240},
            "pose": {"R": bad.flatten().tolist(), "t": [0, 0, 0]},
        }
        with pytest.raises(ValueError):
            parse_frame(record)

    def test_load_frames_skips_blank_lines(self, tmp_path):
        record = {
            "frame_id": "f0", "timestamp": 0.0,
            "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240},
            "pose": {"R": np.eye(3).flatten().tolist(), "t": [0, 0, 0]},
            "embedding": [1.0, 0.0],
        }
        path = tmp_path / "frames.jsonl"
        path.write_text(json.dumps(record) + "\n\n" + json.dumps(record) + "\n")
        frames = load_frames(path)
        assert len(frames) == 2
        assert frames[0].embedding is not None

    def test_blurry_detection_parsed(self):
        record = {
            "frame_id": "f0", "timestamp": 0.0,
            "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240},
            "pose": {"R": np.eye(3).flatten().tolist(), "t": [0, 0, 0]},
            "detections": [{"u": 10, "v": 20, "median_depth": 1.5,
                            "label": {"name": "Soap"}, "sharpness": "blurry"}],
        }
        frame = parse_frame(record)
        assert frame.detections[0].sharpness == "blurry"
