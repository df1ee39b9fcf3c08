"""Adversarial autoencoder: losses, scoring, thresholding, training."""

import numpy as np
import pytest

from neurotopo import aae, tensor as T
from neurotopo.aae import (AaeConfig, AaeModel, anomaly_score,
                           balanced_accuracy, choose_threshold, rank_auc,
                           resize_bilinear, score_entries,
                           select_labeled_subset, train_aae)


class TestConfig:
    def test_defaults_valid(self):
        AaeConfig()

    def test_labeled_fraction_bounds(self):
        with pytest.raises(ValueError):
            AaeConfig(labeled_fraction=0.0)
        with pytest.raises(ValueError):
            AaeConfig(labeled_fraction=1.5)

    def test_epochs_positive(self):
        with pytest.raises(ValueError):
            AaeConfig(epochs=0)


class TestResize:
    def test_output_shape(self, rng):
        img = rng.integers(0, 256, size=(63, 84), dtype=np.uint8)
        assert resize_bilinear(img).shape == (48, 64)

    def test_uint8_scaled_to_unit_interval(self, rng):
        img = rng.integers(0, 256, size=(63, 84), dtype=np.uint8)
        out = resize_bilinear(img)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_constant_image_stays_constant(self):
        img = np.full((63, 84), 128, dtype=np.uint8)
        assert np.allclose(resize_bilinear(img), 128 / 255.0)

    def test_values_bounded_by_input_range(self, rng):
        img = rng.uniform(0.2, 0.8, size=(63, 84))
        out = resize_bilinear(img)
        assert out.min() >= 0.2 - 1e-12 and out.max() <= 0.8 + 1e-12


class TestLosses:
    @pytest.fixture(scope="class")
    def model64(self):
        return AaeModel(AaeConfig(seed=5), dtype=np.float64)

    def test_loss_d_zero_for_identity_discriminator(self, model64, rng,
                                                    monkeypatch):
        monkeypatch.setattr(model64.d, "forward", lambda x: x)
        x = rng.random((1, 48, 64))
        assert float(aae.loss_d(x, model64).value) == 0.0

    def test_sum_identity(self, model64, rng):
        # lossD + lossG = 2 ||X - D(X)||_1 for a single image
        x = rng.random((1, 48, 64))
        ld = float(aae.loss_d(x, model64).value)
        lg = float(aae.loss_g(x, model64).value)
        xn = T.Node(x[:, None])
        dx = model64.d.forward(xn)
        direct = float(T.l1_loss(xn, dx).value)
        assert ld + lg == pytest.approx(2 * direct, abs=1e-5)

    def test_difference_identity(self, model64, rng):
        # lossG - lossD = 2 ||G(X) - D(G(X))||_1
        x = rng.random((1, 48, 64))
        ld = float(aae.loss_d(x, model64).value)
        lg = float(aae.loss_g(x, model64).value)
        y = model64.g.forward(T.Node(x[:, None]))
        direct = float(T.l1_loss(y, model64.d.forward(y)).value)
        assert lg - ld == pytest.approx(2 * direct, abs=1e-5)

    def test_loss_g_matches_anomaly_score_for_one_image(self, model64, rng):
        x = rng.random((48, 64))
        assert anomaly_score(model64, x) == pytest.approx(
            float(aae.loss_g(x[None], model64).value))


class TestRankAuc:
    def test_perfect_separation(self):
        scores = np.array([1.0, 2.0, 10.0, 11.0])
        pos = np.array([False, False, True, True])
        assert rank_auc(scores, pos) == 1.0

    def test_inverted_separation(self):
        scores = np.array([10.0, 11.0, 1.0, 2.0])
        pos = np.array([False, False, True, True])
        assert rank_auc(scores, pos) == 0.0

    def test_all_ties_is_half(self):
        assert rank_auc(np.ones(6), np.array([1, 0, 1, 0, 1, 0],
                                             dtype=bool)) == 0.5

    def test_random_scores_near_half(self, rng):
        scores = rng.standard_normal(2000)
        pos = rng.random(2000) < 0.5
        assert rank_auc(scores, pos) == pytest.approx(0.5, abs=0.05)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            rank_auc(np.ones(3), np.array([True, True, True]))


class TestThresholding:
    def test_balanced_accuracy_is_mean_recall(self):
        labels = np.array([0, 0, 0, 1, 1])
        pred = np.array([0, 0, 1, 1, 1])
        assert balanced_accuracy(labels, pred) == pytest.approx(
            (2 / 3 + 1.0) / 2)

    def test_threshold_separates_clean_split(self):
        scores = np.array([0.0, 1.0, 2.0, 3.0])
        labels = np.array([0, 0, 1, 1])
        thr = choose_threshold(scores, labels, normal_class=0)
        assert 1.0 < thr < 2.0
        assert np.array_equal(scores > thr, labels.astype(bool))

    def test_ties_break_toward_smaller_threshold(self):
        # thresholds 0.5 and 2.5 both reach balanced accuracy 0.75 here;
        # the tie must resolve to the smaller one
        scores = np.array([0.0, 1.0, 2.0, 3.0])
        labels = np.array([0, 1, 0, 1])
        assert choose_threshold(scores, labels) == pytest.approx(0.5)

    def test_single_class_labels_rejected(self):
        with pytest.raises(ValueError):
            choose_threshold(np.arange(4.0), np.zeros(4, dtype=int))


class TestLabeledSubset:
    def _entries(self):
        from neurotopo.topomap import ManifestEntry
        return [ManifestEntry(path=f"p{i}", full_path=f"p{i}",
                              label=i % 2, split="train", subject=0, trial=i,
                              window=0, baseline="absolute")
                for i in range(40)]

    def test_both_classes_present(self):
        chosen = select_labeled_subset(self._entries(), 0.1, seed=0)
        assert {e.label for e in chosen} == {0, 1}

    def test_per_class_count(self):
        chosen = select_labeled_subset(self._entries(), 0.1, seed=0)
        for label in (0, 1):
            assert sum(e.label == label for e in chosen) == 2

    def test_at_least_one_per_class(self):
        chosen = select_labeled_subset(self._entries(), 0.001, seed=0)
        assert sum(e.label == 0 for e in chosen) == 1
        assert sum(e.label == 1 for e in chosen) == 1

    def test_deterministic(self):
        a = select_labeled_subset(self._entries(), 0.2, seed=3)
        b = select_labeled_subset(self._entries(), 0.2, seed=3)
        assert [e.path for e in a] == [e.path for e in b]


class TestTraining:
    def test_history_length_matches_epochs(self, tiny_dataset, tiny_images):
        cfg = AaeConfig(epochs=2, seed=0)
        _, history = train_aae(tiny_dataset, cfg, images=tiny_images)
        assert len(history) == 2
        assert set(history[0]) == {"epoch", "d_loss", "g_loss", "d_recon_real"}

    def test_deterministic_under_seed(self, tiny_dataset, tiny_images):
        cfg = AaeConfig(epochs=2, seed=4)
        m1, h1 = train_aae(tiny_dataset, cfg, images=tiny_images)
        m2, h2 = train_aae(tiny_dataset, cfg, images=tiny_images)
        assert h1 == h2
        for k in m1.params:
            assert np.array_equal(m1.params[k].value, m2.params[k].value)

    def test_training_separates_classes(self, tiny_dataset, tiny_images):
        # the trained pair scores the held-out non-normal class higher
        # than the normal class it was trained on, for every seed
        for seed in range(3):
            cfg = AaeConfig(epochs=30, seed=seed)
            model, history = train_aae(tiny_dataset, cfg, images=tiny_images)
            assert all(np.isfinite(h["d_recon_real"]) for h in history)
            entries = tiny_dataset.split_entries("test")
            scores = score_entries(model, tiny_dataset, entries,
                                   images=tiny_images)
            labels = np.array([e.label for e in entries])
            assert scores[labels == 1].mean() > scores[labels == 0].mean()

    def test_too_few_normals_rejected(self, tiny_dataset):
        from neurotopo.topomap import DatasetManifest
        anomal_only = DatasetManifest(
            [e for e in tiny_dataset.entries if e.label == 1],
            tiny_dataset.seed, root=tiny_dataset.root)
        with pytest.raises(ValueError):
            train_aae(anomal_only, AaeConfig(epochs=1))


class TestScoringAndEval:
    @pytest.fixture(scope="class")
    def trained(self, tiny_dataset, tiny_images):
        cfg = AaeConfig(epochs=3, seed=0)
        model, _ = train_aae(tiny_dataset, cfg, images=tiny_images)
        return model

    def test_batched_scores_match_single_image_scores(self, trained,
                                                      tiny_dataset,
                                                      tiny_images):
        entries = tiny_dataset.split_entries("test")[:4]
        batched = score_entries(trained, tiny_dataset, entries,
                                images=tiny_images)
        for e, s in zip(entries, batched):
            single = anomaly_score(trained, resize_bilinear(tiny_images[e.path]))
            assert s == pytest.approx(single, rel=1e-4)

    def test_evaluate_structure(self, trained, tiny_dataset, tiny_images):
        entries = tiny_dataset.split_entries("test")
        scores = score_entries(trained, tiny_dataset, entries,
                               images=tiny_images)
        thr = float(np.median(scores))
        acc, confusion, auc = aae.evaluate_aae(trained, thr, tiny_dataset,
                                               images=tiny_images)
        assert 0.0 <= acc <= 1.0
        assert confusion.sum() == len(entries)
        assert 0.0 <= auc <= 1.0

    def test_checkpoint_roundtrip_preserves_scores(self, trained,
                                                   tiny_dataset, tiny_images,
                                                   tmp_path):
        entries = tiny_dataset.split_entries("test")[:2]
        before = score_entries(trained, tiny_dataset, entries,
                               images=tiny_images)
        trained.save(tmp_path / "aae.ntw")
        other = AaeModel(AaeConfig(seed=99))
        other.load(tmp_path / "aae.ntw")
        after = score_entries(other, tiny_dataset, entries, images=tiny_images)
        assert np.allclose(before, after, rtol=1e-6)

    def test_wrong_architecture_checkpoint_rejected(self, tmp_path):
        T.save_checkpoint(tmp_path / "bad.ntw",
                          {"x": np.zeros(2, dtype=np.float32)})
        with pytest.raises(ValueError):
            AaeModel(AaeConfig()).load(tmp_path / "bad.ntw")

    def test_anomaly_score_checks_shape(self, trained, rng):
        with pytest.raises(ValueError):
            anomaly_score(trained, rng.random((63, 84)))
