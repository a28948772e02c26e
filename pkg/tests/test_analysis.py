import numpy as np
import pytest

from seedprop.analysis import (
    LOCALITY_CSV_HEADER,
    SWEEP_CSV_HEADER,
    affinity_stats,
    default_distance_bins,
    locality_profile,
    project_masks_to_tokens,
    sweep_layers,
    sweep_steps,
    write_locality_csv,
    write_sweep_csv,
)
from seedprop.bundle import GridShape
from seedprop.config import PipelineConfig
from seedprop.errors import ValidationError
from seedprop.metrics import SceneAnnotation
from seedprop.synth import default_two_object_spec, generate


# --- locality_profile


def test_locality_uniform_attention_hits_every_bin():
    grid = GridShape(4, 4)
    a = np.full((16, 16), 1.0 / 16.0)
    profile = locality_profile(a, grid)
    assert all(m == pytest.approx(1.0 / 16.0) for m in profile.mean_weight)
    assert sum(profile.pair_count) == 16 * 16


def test_locality_identity_concentrates_at_distance_zero():
    grid = GridShape(4, 4)
    profile = locality_profile(np.eye(16), grid)
    # bin [0, 1) holds exactly the 16 diagonal pairs, every one equal to 1
    assert profile.bins[0] == (0.0, 1.0)
    assert profile.mean_weight[0] == pytest.approx(1.0)
    assert profile.pair_count[0] == 16
    assert all(m == 0.0 for m in profile.mean_weight[1:])


def test_locality_matches_double_loop_on_8x8(rng):
    grid = GridShape(8, 8)
    a = rng.random((64, 64))
    a /= a.sum(axis=1, keepdims=True)
    profile = locality_profile(a, grid, metric="chebyshev")
    rows = np.arange(64) // 8
    cols = np.arange(64) % 8
    for (lo, hi), mean, cnt in zip(profile.bins, profile.mean_weight, profile.pair_count):
        acc, k = 0.0, 0
        last = (lo, hi) == profile.bins[-1]
        for i in range(64):
            for j in range(64):
                d = max(abs(rows[i] - rows[j]), abs(cols[i] - cols[j]))
                if (lo <= d < hi) or (last and lo <= d <= hi):
                    acc += a[i, j]
                    k += 1
        assert cnt == k
        assert mean == pytest.approx(acc / k)


def test_locality_bins_partition_max_distance():
    grid = GridShape(32, 32)
    bins = default_distance_bins(grid)
    assert bins[0][0] == 0.0
    assert bins[-1][1] == 31.0
    for (_, hi), (lo, _) in zip(bins, bins[1:]):
        assert hi == lo


def test_locality_invariant_under_grid_symmetry(rng):
    # transposing the grid layout (a symmetry of the token geometry) must not
    # change the per-bin means
    grid = GridShape(6, 6)
    a = rng.random((36, 36))
    perm = (np.arange(36).reshape(6, 6).T).ravel()
    a_perm = a[np.ix_(perm, perm)]
    p1 = locality_profile(a, grid)
    p2 = locality_profile(a_perm, grid)
    assert np.allclose(p1.mean_weight, p2.mean_weight)


def test_locality_rejects_bad_bins(rng):
    grid = GridShape(4, 4)
    a = np.full((16, 16), 1 / 16)
    with pytest.raises(ValidationError):
        locality_profile(a, grid, bins=[(1.0, 2.0), (2.0, 3.0)])
    with pytest.raises(ValidationError):
        locality_profile(a, grid, bins=[(0.0, 2.0), (2.5, 3.0)])


def test_locality_euclidean_metric_available(rng):
    grid = GridShape(5, 5)
    a = np.full((25, 25), 1 / 25)
    p = locality_profile(a, grid, metric="euclidean")
    assert p.metric == "euclidean"
    assert sum(p.pair_count) == 25 * 25


# --- affinity_stats


def test_affinity_block_constant_recovers_block_values():
    n = 6
    masks = {"a": np.zeros(n, dtype=bool), "b": np.zeros(n, dtype=bool)}
    masks["a"][:2] = True
    masks["b"][2:4] = True
    aff = np.zeros((n, n))
    same = 0.9
    cross = 0.2
    fgbg = 0.05
    for i in range(n):
        for j in range(n):
            ai, bi = masks["a"][i], masks["b"][i]
            aj, bj = masks["a"][j], masks["b"][j]
            if (ai and aj) or (bi and bj):
                aff[i, j] = same
            elif (ai and bj) or (bi and aj):
                aff[i, j] = cross
            elif ai or bi or aj or bj:
                aff[i, j] = fgbg
    stats = affinity_stats(aff, masks, "w_attn")
    assert stats.same_object == pytest.approx(100 * same)
    assert stats.confusable_diff == pytest.approx(100 * cross)
    assert stats.fg_bg == pytest.approx(100 * fgbg)


def test_affinity_uniform_constant():
    n = 8
    masks = {"a": np.zeros(n, dtype=bool), "b": np.zeros(n, dtype=bool)}
    masks["a"][:3] = True
    masks["b"][3:5] = True
    stats = affinity_stats(np.full((n, n), 0.31), masks, "w_cos")
    assert stats.same_object == pytest.approx(31.0)
    assert stats.confusable_diff == pytest.approx(31.0)
    assert stats.fg_bg == pytest.approx(31.0)


def test_affinity_single_object_only_same_defined():
    n = 4
    masks = {"a": np.ones(n, dtype=bool)}
    stats = affinity_stats(np.full((n, n), 0.5), masks, "gated")
    assert stats.same_object == pytest.approx(50.0)
    assert stats.confusable_diff is None
    assert stats.fg_bg is None
    assert set(stats.undefined) == {"confusable_diff", "fg_bg"}


def test_project_masks_majority_rule():
    grid = GridShape(2, 2)
    mask = np.zeros((4, 4), dtype=bool)
    mask[0:2, 0:2] = True  # token (0,0) fully covered
    mask[0, 2] = True  # token (0,1) quarter covered -> excluded
    ann = SceneAnnotation(image_id="x", pixel_h=4, pixel_w=4, masks={"a": mask})
    tokens = project_masks_to_tokens(ann, grid)
    assert tokens["a"].tolist() == [True, False, False, False]


# --- sweeps


@pytest.fixture(scope="module")
def small_scene_pairs():
    scenes = []
    for seed in (31, 32):
        bundle, annotation = generate(default_two_object_spec(rng_seed=seed))
        scenes.append((bundle, annotation))
    return scenes


def test_sweep_steps_zero_gives_anchor_only_mask_metrics(small_scene_pairs):
    rows = sweep_steps(small_scene_pairs, [0], PipelineConfig())
    assert len(rows) == 1
    assert rows[0]["config"] == "0"
    # a one-hot mask barely covers the object
    assert rows[0]["miou_fg"] < 0.2


def test_sweep_steps_row_per_step_and_coverage_direction(small_scene_pairs):
    rows = sweep_steps(small_scene_pairs, [10, 160], PipelineConfig())
    assert [r["config"] for r in rows] == ["10", "160"]
    assert rows[1]["miou_fg"] >= rows[0]["miou_fg"] - 1e-9


def test_sweep_steps_deterministic(small_scene_pairs):
    r1 = sweep_steps(small_scene_pairs, [5, 20], PipelineConfig())
    r2 = sweep_steps(small_scene_pairs, [5, 20], PipelineConfig())
    assert r1 == r2


def test_sweep_layers_ranks_structured_layer_first():
    spec = default_two_object_spec(rng_seed=40)
    spec.layers = (0, 1)
    spec.noise_only_layers = (1,)
    bundle, annotation = generate(spec)
    rows = sweep_layers([(bundle, annotation)], [[0], [1], [0, 1]], PipelineConfig())
    assert len(rows) == 3
    assert rows[0]["config"] in ("L0", "L0+L1")
    by_config = {r["config"]: r for r in rows}
    assert by_config["L0"]["miou_fg"] > by_config["L1"]["miou_fg"]
    assert rows == sorted(rows, key=lambda r: -r["miou_fg"])


def test_sweep_csv_header_and_rows(tmp_path, small_scene_pairs):
    rows = sweep_steps(small_scene_pairs, [3], PipelineConfig())
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(SWEEP_CSV_HEADER)
    assert len(lines) == 2


def test_locality_csv(tmp_path):
    grid = GridShape(4, 4)
    profile = locality_profile(np.full((16, 16), 1 / 16), grid)
    path = tmp_path / "loc.csv"
    write_locality_csv(profile, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(LOCALITY_CSV_HEADER)
    assert len(lines) == len(profile.bins) + 1
