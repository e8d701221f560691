"""Blob segmentation against a brute-force flood-fill oracle."""

from collections import deque

import numpy as np
import pytest

from entityrl.frames import (FEATURE_COLUMNS, blobs_to_features, extract_blobs,
                             extract_frame_stack, modal_color, quantize,
                             stack_frames, write_entity_csv)


def flood_fill_blobs(frame, background, min_area=1):
    """Independent oracle: BFS flood fill, 8-connected, exact colors."""
    h, w, _ = frame.shape
    seen = np.zeros((h, w), dtype=bool)
    blobs = []
    for y in range(h):
        for x in range(w):
            if seen[y, x]:
                continue
            color = tuple(int(c) for c in frame[y, x])
            if color == tuple(background):
                seen[y, x] = True
                continue
            queue = deque([(y, x)])
            seen[y, x] = True
            pixels = []
            while queue:
                cy, cx = queue.popleft()
                pixels.append((cy, cx))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] \
                                and tuple(int(c) for c in frame[ny, nx]) == color:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            if len(pixels) < min_area:
                continue
            ys = [p[0] for p in pixels]
            xs = [p[1] for p in pixels]
            blobs.append({
                "color": color,
                "centroid": (sum(xs) / len(xs), sum(ys) / len(ys)),
                "bbox": (max(xs) - min(xs) + 1, max(ys) - min(ys) + 1),
                "min_corner": (min(xs), min(ys)),
                "area": len(pixels),
            })
    blobs.sort(key=lambda b: (b["min_corner"][1], b["min_corner"][0],
                              b["color"], b["area"], b["centroid"]))
    return blobs


def random_frame(rng, size=84, rects=5):
    frame = np.zeros((size, size, 3), dtype=np.uint8)
    for _ in range(rects):
        x0, y0 = rng.integers(0, size - 4, size=2)
        w, h = rng.integers(2, 14, size=2)
        color = rng.integers(1, 255, size=3)  # never the black background
        frame[y0:y0 + h, x0:x0 + w] = color
    return frame


class TestExtractBlobs:
    def test_uniform_frame_empty(self):
        frame = np.zeros((84, 84, 3), dtype=np.uint8)
        assert extract_blobs(frame) == []

    def test_single_red_square(self):
        frame = np.zeros((84, 84, 3), dtype=np.uint8)
        frame[10:12, 10:12] = (255, 0, 0)
        blobs = extract_blobs(frame)
        assert len(blobs) == 1
        blob = blobs[0]
        assert blob.color == (255, 0, 0)
        assert blob.centroid == (10.5, 10.5)
        assert blob.bbox == (2, 2)
        assert blob.area == 4

    def test_two_disjoint_same_color_squares(self):
        frame = np.zeros((84, 84, 3), dtype=np.uint8)
        frame[5:8, 5:8] = (0, 200, 0)
        frame[40:43, 40:43] = (0, 200, 0)
        blobs = extract_blobs(frame)
        assert len(blobs) == 2  # connectivity splits entities, not color identity
        assert all(b.color == (0, 200, 0) and b.area == 9 for b in blobs)

    def test_diagonal_pixels_stay_connected(self):
        frame = np.zeros((10, 10, 3), dtype=np.uint8)
        frame[2, 2] = frame[3, 3] = frame[4, 4] = (9, 9, 9)
        assert len(extract_blobs(frame)) == 1

    def test_min_area_filter(self):
        frame = np.zeros((10, 10, 3), dtype=np.uint8)
        frame[1, 1] = (5, 5, 5)
        frame[5:8, 5:8] = (5, 5, 5)
        blobs = extract_blobs(frame, min_area=2)
        assert len(blobs) == 1 and blobs[0].area == 9

    def test_matches_flood_fill_oracle_on_random_frames(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            frame = random_frame(rng, size=48, rects=int(rng.integers(1, 8)))
            got = extract_blobs(frame, background=(0, 0, 0))
            expected = flood_fill_blobs(frame, (0, 0, 0))
            assert len(got) == len(expected), f"trial {trial}"
            for g, e in zip(got, expected):
                assert g.color == e["color"]
                assert g.area == e["area"]
                assert g.bbox == e["bbox"]
                assert g.min_corner == e["min_corner"]
                assert abs(g.centroid[0] - e["centroid"][0]) <= 1e-9
                assert abs(g.centroid[1] - e["centroid"][1]) <= 1e-9

    def test_partition_property(self):
        rng = np.random.default_rng(1)
        frame = random_frame(rng, size=40)
        background = modal_color(frame)
        blobs = extract_blobs(frame, background=background)
        packed = (frame[:, :, 0].astype(int) << 16) | (frame[:, :, 1].astype(int) << 8) \
            | frame[:, :, 2].astype(int)
        bg = (background[0] << 16) | (background[1] << 8) | background[2]
        assert sum(b.area for b in blobs) + int(np.sum(packed == bg)) == 40 * 40

    def test_translation_equivariance(self):
        rng = np.random.default_rng(2)
        frame = np.zeros((64, 64, 3), dtype=np.uint8)
        frame[5:15, 5:20] = (10, 20, 30)
        frame[30:36, 40:44] = (200, 100, 50)
        shifted = np.zeros_like(frame)
        shifted[5 + 7:15 + 7, 5 + 11:20 + 11] = (10, 20, 30)
        shifted[30 + 7:36 + 7, 40 + 11:44 + 11] = (200, 100, 50)
        a = extract_blobs(frame, background=(0, 0, 0))
        b = extract_blobs(shifted, background=(0, 0, 0))
        for blob_a, blob_b in zip(a, b):
            assert blob_b.centroid[0] - blob_a.centroid[0] == pytest.approx(11)
            assert blob_b.centroid[1] - blob_a.centroid[1] == pytest.approx(7)
            assert blob_a.bbox == blob_b.bbox

    def test_deterministic_ordering(self):
        rng = np.random.default_rng(3)
        frame = random_frame(rng)
        first = extract_blobs(frame)
        second = extract_blobs(frame.copy())
        assert first == second

    def test_modal_background_detection(self):
        frame = np.full((20, 20, 3), (7, 8, 9), dtype=np.uint8)
        frame[0:3, 0:3] = (1, 2, 3)
        assert modal_color(frame) == (7, 8, 9)
        assert len(extract_blobs(frame)) == 1  # modal color excluded automatically

    def test_rejects_bad_frames(self):
        with pytest.raises(ValueError):
            extract_blobs(np.zeros((4, 4), dtype=np.uint8))

    def test_quantize_gate(self):
        frame = np.zeros((8, 8, 3), dtype=np.uint8)
        frame[2:4, 2:4] = (100, 100, 100)
        frame[2, 2] = (101, 101, 101)  # 1-off noise splits the blob
        assert len(extract_blobs(frame)) == 2
        assert len(extract_blobs(quantize(frame, 16))) == 1


class TestFeatures:
    def test_midpoint_normalization(self):
        frame = np.zeros((84, 84, 3), dtype=np.uint8)
        frame[42, 42] = (255, 0, 0)
        blobs = extract_blobs(frame)
        feats = blobs_to_features(blobs, (84, 84), stack_index=0, stack_count=4)
        row = feats[0]
        assert row[0] == 1.0 and row[1] == 0.0 and row[2] == 0.0
        assert row[3] == pytest.approx(0.5) and row[4] == pytest.approx(0.5)
        assert row[7] == 0.0

    def test_full_frame_blob_bbox_is_one(self):
        frame = np.full((30, 40, 3), (50, 60, 70), dtype=np.uint8)
        blobs = extract_blobs(frame, background=(0, 0, 0))
        feats = blobs_to_features(blobs, (40, 30))
        assert feats[0, 5] == 1.0 and feats[0, 6] == 1.0

    def test_all_components_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            frame = random_frame(rng)
            blobs = extract_blobs(frame, background=(0, 0, 0))
            feats = blobs_to_features(blobs, (84, 84), 2, 4)
            assert np.all(feats >= 0.0) and np.all(feats <= 1.0)

    def test_stack_index_bounds(self):
        with pytest.raises(ValueError):
            blobs_to_features([], (84, 84), stack_index=4, stack_count=4)


class TestStacking:
    def test_single_frame_stack(self):
        frame = np.zeros((84, 84, 3), dtype=np.uint8)
        frame[10:12, 10:12] = (255, 0, 0)
        stacked = extract_frame_stack([frame])
        assert stacked.shape == (1, 8)
        assert np.all(stacked[:, 7] == 0.0)

    def test_cardinality_sums(self):
        rng = np.random.default_rng(5)
        frames = [random_frame(rng) for _ in range(4)]
        per_frame = [blobs_to_features(extract_blobs(f, background=(0, 0, 0)), (84, 84), s, 4)
                     for s, f in enumerate(frames)]
        stacked = stack_frames(per_frame)
        assert stacked.shape[0] == sum(len(p) for p in per_frame)

    def test_same_scene_differs_only_in_stack_slot(self):
        frame = np.zeros((84, 84, 3), dtype=np.uint8)
        frame[10:14, 20:26] = (9, 90, 200)
        frame[40:44, 4:9] = (255, 9, 0)
        stacked = extract_frame_stack([frame.copy() for _ in range(4)])
        assert stacked.shape[0] == 8
        per_slot = stacked.reshape(4, 2, 8)
        for s in range(4):
            np.testing.assert_array_equal(per_slot[s][:, :7], per_slot[0][:, :7])
            assert np.all(per_slot[s][:, 7] == s / 4)


def test_entity_csv_format(tmp_path):
    frame = np.zeros((84, 84, 3), dtype=np.uint8)
    frame[10:12, 10:12] = (255, 0, 0)
    feats = blobs_to_features(extract_blobs(frame), (84, 84), 0, 1)
    path = tmp_path / "entities.csv"
    write_entity_csv(path, [(0, feats)])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "frame_index," + ",".join(FEATURE_COLUMNS)
    fields = lines[1].split(",")
    assert fields[0] == "0"
    assert float(fields[1]) == 1.0
    assert float(fields[4]) == pytest.approx(10.5 / 84, abs=1e-12)
    # 9 significant digits on fractional values
    assert fields[4] == f"{10.5 / 84:.9g}"
