import json
import math
from collections import deque

import numpy as np
import pytest

from rootsr.synthgen import SceneParams, generate_scene
from rootsr.traits import analyze, format_trait_table, label_instances, skeleton_edges_length, skeleton_length


def bfs_components(mask: np.ndarray, min_area: int = 5) -> list[set]:
    """8-connected components by breadth-first search, in raster order of first pixel."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            comp, queue = set(), deque([(r, c)])
            seen[r, c] = True
            while queue:
                y, x = queue.popleft()
                comp.add((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            if len(comp) >= min_area:
                comps.append(comp)
    return comps


def m2(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)[:, :, None]


def test_empty_mask():
    assert label_instances(m2(np.zeros((10, 10)))) == []


def test_two_squares():
    m = np.zeros((12, 12))
    m[1:4, 1:4] = 1
    m[7:10, 6:9] = 1
    comps = label_instances(m2(m))
    assert [len(c) for c in comps] == [9, 9]
    assert tuple(comps[0][0]) == (1, 1) and tuple(comps[1][0]) == (7, 6)


def test_diagonal_chain_is_one_component():
    m = np.eye(8)
    assert len(label_instances(m2(m))) == 1


def test_min_area_filter():
    m = np.zeros((10, 10))
    m[0, 0:4] = 1
    m[5, 0:5] = 1
    assert [len(c) for c in label_instances(m2(m))] == [5]
    assert len(label_instances(m2(m), min_area=1)) == 2


def test_non_binary_rejected():
    with pytest.raises(ValueError):
        label_instances(m2(np.full((4, 4), 0.5)))


def test_labeling_matches_bfs_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        m = rng.random((40, 40)) < 0.3
        ours = [{tuple(p) for p in c} for c in label_instances(m2(m))]
        assert ours == bfs_components(m)


def test_bar_length():
    m = np.zeros((5, 104), dtype=bool)
    m[2, 2:102] = True
    assert 97 <= skeleton_length(m) <= 100


def test_single_pixel_length():
    assert skeleton_length(np.array([[3, 4]])) == 0.0


def test_diagonal_line_length():
    m = np.zeros((54, 54), dtype=bool)
    for i in range(50):
        m[2 + i, 2 + i] = True
    want = 49 * math.sqrt(2)
    assert 0.95 * want <= skeleton_length(m) <= want


def test_edge_lengths_hand_counted():
    # L shape: 3 horizontal steps + one diagonal step
    s = np.zeros((4, 6), dtype=bool)
    s[1, 1:5] = True
    s[2, 5] = True
    assert skeleton_edges_length(s) == pytest.approx(3 + math.sqrt(2))
    # staircase corner: 4-neighbours through the corner, diagonal not counted twice
    t = np.zeros((3, 3), dtype=bool)
    t[0, 0] = t[0, 1] = t[1, 1] = True
    assert skeleton_edges_length(t) == 2.0


def test_empty_hair_mask():
    root = np.zeros((20, 20))
    root[:, 8:12] = 1
    r = analyze(m2(root), m2(np.zeros((20, 20))))
    assert r.root_count == 1 and r.hair_count == 0 and r.empty
    assert r.avg_hair_length_mm == 0 and r.avg_hair_area_mm2 == 0 and r.total_hair_length_mm == 0


def test_straight_hair_length_in_mm():
    hair = np.zeros((10, 160))
    hair[5, 4:155] = 1  # 151 pixels -> 150 edges
    r = analyze(m2(np.zeros((10, 160))), m2(hair), mm_per_px=0.01)
    assert r.hair_count == 1
    assert r.per_hair[0]["length_px"] == pytest.approx(150, abs=3)
    assert r.total_hair_length_mm == pytest.approx(r.per_hair[0]["length_px"] * 0.01, abs=1e-12)
    assert r.avg_hair_area_mm2 == pytest.approx(151 * 1e-4)


def test_hair_pixels_under_root_removed():
    root = np.zeros((30, 30))
    root[:, 10:15] = 1
    hair = np.zeros((30, 30))
    hair[8, 5:25] = 1  # crosses the root: two visible pieces
    r = analyze(m2(root), m2(hair))
    assert r.hair_count == 2 and [h["area_px"] for h in r.per_hair] == [5, 10]


def test_analyze_errors():
    a = m2(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        analyze(a, m2(np.zeros((8, 9))))
    with pytest.raises(ValueError):
        analyze(a, a, mm_per_px=0)


def test_analyze_order_invariant():
    rng = np.random.default_rng(1)
    blobs = [np.pad(rng.random((12, 12)) < 0.6, 1) for _ in range(3)]
    a, b = np.zeros((14, 60), dtype=bool), np.zeros((14, 60), dtype=bool)
    for i, j in enumerate((2, 0, 1)):  # same blobs, different left-to-right order
        a[:, 20 * i : 20 * i + 14] = blobs[i]
        b[:, 20 * j : 20 * j + 14] = blobs[i]
    ra = analyze(m2(np.zeros((14, 60))), m2(a))
    rb = analyze(m2(np.zeros((14, 60))), m2(b))
    assert ra.hair_count == rb.hair_count
    assert sorted((h["area_px"], h["length_px"]) for h in ra.per_hair) == sorted((h["area_px"], h["length_px"]) for h in rb.per_hair)
    assert ra.total_hair_length_mm == pytest.approx(rb.total_hair_length_mm, abs=1e-9)


def test_totals_and_averages_consistent():
    sc = generate_scene(SceneParams(seed=4))
    hair = np.clip(sum(m[:, :, 0] for m in sc.hair_masks), 0, 1)
    r = analyze(sc.root_mask, m2(hair), mm_per_px=0.02)
    assert r.total_hair_length_mm == pytest.approx(sum(h["length_px"] for h in r.per_hair) * 0.02, abs=1e-9)
    assert r.avg_hair_length_mm == pytest.approx(r.total_hair_length_mm / r.hair_count)
    json.dumps(r.to_dict())


def union(scene) -> np.ndarray:
    return m2(np.clip(sum(m[:, :, 0] for m in scene.hair_masks), 0, 1))


def test_generator_scene_with_five_hairs():
    for seed in range(200):
        sc = generate_scene(SceneParams(seed=seed, hair_rate=5.0))
        if sc.truth.hair_count == 5:
            break
    else:
        pytest.fail("no five-hair scene in 200 seeds")
    r = analyze(sc.root_mask, union(sc))
    assert r.hair_count == 5 and r.root_count == 1


@pytest.mark.parametrize("seed", range(6))
def test_generator_round_trip(seed):
    sc = generate_scene(SceneParams(seed=seed))
    r = analyze(sc.root_mask, union(sc))
    assert r.hair_count == sc.truth.hair_count
    assert sorted(h["area_px"] for h in r.per_hair) == sorted(int(a) for a in sc.truth.hair_areas_px)
    # match hairs by area then compare skeleton length to nominal length
    got = sorted((h["area_px"], h["length_px"]) for h in r.per_hair)
    want = sorted(zip(sc.truth.hair_areas_px, sc.truth.hair_lengths_px))
    for (_, length), (_, nominal) in zip(got, want):
        assert abs(length - nominal) <= 0.10 * nominal


def test_trait_table_layout():
    sc = generate_scene(SceneParams(seed=2))
    r = analyze(sc.root_mask, union(sc))
    table = format_trait_table({"HR": r, "MI-DRCT": r})
    lines = table.splitlines()
    assert lines[0].split("|")[0].strip() == "Root Trait"
    assert len(lines) == 7 and "Average Root Hair Area (mm^2)" in table
