"""Topogram rendering, dataset assembly, and the manifest format."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurotopo import topomap
from neurotopo.topomap import (BaselineMode, DatasetManifest, WindowPlan,
                               baseline_correct, downsample, idw_interpolate,
                               interpolate_scalp, read_pgm, render_field,
                               render_topogram, round_half_away, slice_windows,
                               split_sizes, write_pgm)


class TestWindowPlan:
    def test_default_windows(self):
        plan = WindowPlan()
        assert slice_windows(plan, 10.0) == [(5.5, 7.0), (6.0, 7.5),
                                             (6.5, 8.0), (7.0, 8.5)]

    def test_short_trial_rejected(self):
        with pytest.raises(ValueError):
            slice_windows(WindowPlan(), 8.4)

    def test_windows_avoid_excluded_intervals(self):
        plan = WindowPlan()
        for a, b in plan.windows:
            for lo, hi in plan.excluded:
                assert b <= lo or a >= hi

    def test_wrong_window_length_rejected(self):
        with pytest.raises(ValueError):
            WindowPlan(windows=((5.5, 7.5),))

    def test_overlapping_excluded_rejected(self):
        with pytest.raises(ValueError):
            WindowPlan(windows=((4.9, 6.4),))

    def test_baseline_outside_prefix_rejected(self):
        with pytest.raises(ValueError):
            WindowPlan(baseline_interval=(1.0, 6.0))


class TestBaselineCorrect:
    def test_absolute_subtracts(self):
        out = baseline_correct(np.array([2.0]), np.array([1.0]),
                               BaselineMode.ABSOLUTE)
        assert out[0] == 1.0

    def test_relative_divides(self):
        out = baseline_correct(np.array([2.0]), np.array([1.0]),
                               BaselineMode.RELATIVE)
        assert out[0] == 2.0

    def test_relative_identity_case(self):
        p = np.array([3.0, 0.5, 7.0])
        assert np.array_equal(
            baseline_correct(p, p, BaselineMode.RELATIVE), np.ones(3))

    def test_relative_rejects_nonpositive_baseline(self):
        with pytest.raises(ValueError):
            baseline_correct(np.ones(2), np.array([1.0, 0.0]),
                             BaselineMode.RELATIVE)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            baseline_correct(np.ones(3), np.ones(2), BaselineMode.ABSOLUTE)


class TestIdwInterpolation:
    def test_exact_at_nodes(self, rng):
        pts = rng.uniform(-1, 1, size=(8, 2))
        vals = rng.standard_normal(8)
        out = idw_interpolate(pts, vals, pts)
        assert np.allclose(out, vals)

    def test_constant_values_everywhere(self, rng):
        pts = rng.uniform(-1, 1, size=(8, 2))
        q = rng.uniform(-1, 1, size=(50, 2))
        out = idw_interpolate(pts, np.full(8, 5.0), q)
        assert np.allclose(out, 5.0)

    def test_convex_bounds(self, rng):
        pts = rng.uniform(-1, 1, size=(8, 2))
        vals = rng.standard_normal(8)
        q = rng.uniform(-1, 1, size=(200, 2))
        out = idw_interpolate(pts, vals, q)
        assert np.all(out >= vals.min() - 1e-12)
        assert np.all(out <= vals.max() + 1e-12)

    def test_non_finite_values_rejected(self, rng):
        pts = rng.uniform(-1, 1, size=(4, 2))
        with pytest.raises(ValueError):
            idw_interpolate(pts, np.array([1.0, np.nan, 0.0, 2.0]), pts)


class TestScalpField:
    def test_outside_disc_is_nan_inside_finite(self, montage32):
        field = interpolate_scalp(np.arange(32, dtype=float), montage32, 84, 63)
        assert field.shape == (63, 84)
        assert np.isnan(field[0, 0])       # corner is outside the disc
        assert np.isfinite(field[31, 42])  # center is inside

    def test_constant_input_constant_disc(self, montage32):
        field = interpolate_scalp(np.full(32, 5.0), montage32, 84, 63)
        inside = np.isfinite(field)
        assert np.allclose(field[inside], 5.0)

    def test_wrong_channel_count_rejected(self, montage32):
        with pytest.raises(ValueError):
            interpolate_scalp(np.ones(31), montage32, 84, 63)

    def test_batched_matches_single(self, montage32, rng):
        grid = topomap.ScalpGrid(montage32, 84, 63)
        rows = rng.standard_normal((3, 32))
        batched = grid.interpolate_many(rows)
        for i in range(3):
            single = grid.interpolate(rows[i])
            # batched path sums in a different order; equality up to
            # float reassociation
            np.testing.assert_allclose(
                batched[i][np.isfinite(single)], single[np.isfinite(single)],
                rtol=1e-12, atol=0)


class TestRendering:
    def _field(self, rng):
        field = np.full((630, 840), np.nan)
        yy, xx = np.mgrid[:630, :840]
        inside = (xx - 420) ** 2 + (yy - 315) ** 2 < 300 ** 2
        field[inside] = rng.standard_normal(inside.sum())
        return field

    def test_min_max_hit_0_and_255(self, rng):
        field = self._field(rng)
        img = render_field(field)
        inside = np.isfinite(field)
        assert img[inside].min() == 0
        assert img[inside].max() == 255
        assert np.all(img[~inside] == 0)

    def test_affine_invariance(self, rng):
        field = self._field(rng)
        assert np.array_equal(render_field(field),
                              render_field(3.0 * field + 17.0))

    def test_constant_field_rejected(self):
        field = np.full((630, 840), np.nan)
        field[300:320, 400:420] = 1.0
        with pytest.raises(ValueError):
            render_field(field)

    def test_render_topogram_checks_dimensions(self):
        with pytest.raises(ValueError):
            render_topogram(np.zeros((63, 84)))

    def test_round_half_away(self):
        x = np.array([0.5, 1.5, 2.5, -0.5, -2.5, 0.49])
        assert np.array_equal(round_half_away(x),
                              np.array([1.0, 2.0, 3.0, -1.0, -3.0, 0.0]))


class TestDownsample:
    def test_constant_blocks_preserved(self):
        img = np.full((630, 840), 7, dtype=np.uint8)
        out = downsample(img)
        assert out.shape == (63, 84)
        assert np.all(out == 7)

    def test_single_full_block(self):
        img = np.zeros((630, 840), dtype=np.uint8)
        img[0:10, 0:10] = 255
        out = downsample(img)
        assert out[0, 0] == 255
        assert out.sum() == 255

    def test_half_covered_block_rounds_up(self):
        img = np.zeros((630, 840), dtype=np.uint8)
        img[0:5, 0:10] = 255   # half the 10x10 block -> mean 127.5 -> 128
        assert downsample(img)[0, 0] == 128

    def test_wrong_size_rejected(self):
        with pytest.raises(ValueError):
            downsample(np.zeros((63, 84), dtype=np.uint8))


class TestPgm:
    @given(h=st.integers(1, 20), w=st.integers(1, 20), seed=st.integers(0, 99))
    @settings(max_examples=20, deadline=None)
    def test_roundtrip(self, tmp_path_factory, h, w, seed):
        img = np.random.default_rng(seed).integers(
            0, 256, size=(h, w), dtype=np.uint8)
        path = tmp_path_factory.mktemp("pgm") / "img.pgm"
        write_pgm(path, img)
        assert np.array_equal(read_pgm(path), img)

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "x.pgm"
        write_pgm(path, np.zeros((2, 3), dtype=np.uint8))
        assert path.read_bytes().startswith(b"P5\n3 2\n255\n")

    def test_non_pgm_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError):
            read_pgm(path)


class TestSplit:
    def test_split_sizes_round_to_nearest(self):
        assert split_sizes(939) == (751, 188)
        assert split_sizes(10) == (8, 2)
        assert split_sizes(0) == (0, 0)

    def test_trial_splits_disjoint_exhaustive(self, tiny_trials):
        assignment = topomap.assign_trial_splits(tiny_trials, seed=4)
        assert set(assignment) == {(t.subject_id, t.trial_id)
                                   for t in tiny_trials}
        assert set(assignment.values()) <= {"train", "test"}

    def test_trial_splits_stratified(self, tiny_trials):
        assignment = topomap.assign_trial_splits(tiny_trials, seed=4)
        for label in (0, 1):
            keys = [(t.subject_id, t.trial_id)
                    for t in tiny_trials if t.label == label]
            n_train = sum(assignment[k] == "train" for k in keys)
            want, _ = split_sizes(len(keys))
            assert abs(n_train - want) <= 1

    def test_trial_splits_seeded(self, tiny_trials):
        a = topomap.assign_trial_splits(tiny_trials, seed=4)
        b = topomap.assign_trial_splits(tiny_trials, seed=4)
        c = topomap.assign_trial_splits(tiny_trials, seed=5)
        assert a == b
        assert a != c


class TestBuildDataset:
    def test_image_count_identity(self, tiny_trials, tiny_dataset):
        assert len(tiny_dataset.entries) == len(tiny_trials) * 4 * 2

    def test_all_images_on_disk(self, tiny_dataset):
        for e in tiny_dataset.entries:
            assert tiny_dataset.load_image(e).shape == (63, 84)
            assert read_pgm(tiny_dataset.root / e.full_path).shape == (630, 840)

    def test_entries_cover_all_windows_and_modes(self, tiny_dataset):
        combos = {(e.subject, e.trial, e.window, e.baseline)
                  for e in tiny_dataset.entries}
        assert len(combos) == len(tiny_dataset.entries)
        assert {e.window for e in tiny_dataset.entries} == {0, 1, 2, 3}
        assert {e.baseline for e in tiny_dataset.entries} == \
            {"absolute", "relative"}

    def test_images_of_one_trial_share_split(self, tiny_dataset):
        by_trial = {}
        for e in tiny_dataset.entries:
            by_trial.setdefault((e.subject, e.trial), set()).add(e.split)
        assert all(len(s) == 1 for s in by_trial.values())

    def test_manifest_roundtrip(self, tiny_dataset):
        loaded = DatasetManifest.load(tiny_dataset.root / "manifest.jsonl",
                                      seed=tiny_dataset.seed)
        assert loaded.to_jsonl() == tiny_dataset.to_jsonl()

    def test_same_seed_byte_identical(self, tiny_trials, tmp_path):
        subset = tiny_trials[:2] + tiny_trials[-2:]
        m1 = topomap.build_dataset(subset, tmp_path / "a", seed=9,
                                   store_fullres=False)
        m2 = topomap.build_dataset(subset, tmp_path / "b", seed=9,
                                   store_fullres=False)
        assert m1.to_jsonl() == m2.to_jsonl()
        for e1, e2 in zip(m1.entries, m2.entries):
            assert (m1.root / e1.path).read_bytes() == \
                (m2.root / e2.path).read_bytes()

    def test_empty_trial_list_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            topomap.build_dataset([], tmp_path)

    def test_single_class_rejected(self, tiny_trials, tmp_path):
        lefts = [t for t in tiny_trials if t.label == 1]
        with pytest.raises(ValueError):
            topomap.build_dataset(lefts, tmp_path / "c")
