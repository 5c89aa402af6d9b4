import numpy as np
import pytest

from slimdet import metrics
from slimdet.errors import ConfigError
from slimdet.store import load_manifest, read_embedding
from slimdet.synth import (
    SynthConfig,
    generate_dataset,
    generate_sample,
    sample_rng,
    time_averaged_views,
)

SMALL = dict(latent_dim=6, feat_dim=48, time_steps=8, k_style=3, k_ling=2)


class TestGenerateSample:
    def test_shapes_and_subspaces(self):
        cfg = SynthConfig(seed=1, **SMALL)
        style, ling = generate_sample(cfg, "real", sample_rng(cfg, "x"))
        assert style.data.shape == (3, 48, 8)
        assert ling.data.shape == (2, 48, 8)
        assert style.subspace == "style"
        assert ling.subspace == "linguistics"

    def test_deterministic_given_seed(self):
        cfg = SynthConfig(seed=2, **SMALL)
        a = generate_sample(cfg, "fake", sample_rng(cfg, "id0"))
        b = generate_sample(cfg, "fake", sample_rng(cfg, "id0"))
        assert a[0].data.tobytes() == b[0].data.tobytes()
        assert a[1].data.tobytes() == b[1].data.tobytes()

    def test_all_finite_and_bounded(self):
        cfg = SynthConfig(seed=3, noise_std=0.2, artifact_strength=0.5, **SMALL)
        for label in ("real", "fake"):
            style, ling = generate_sample(cfg, label, sample_rng(cfg, label))
            for emb in (style, ling):
                assert np.all(np.isfinite(emb.data))
                # tanh range plus noise (4 sigma of combined layers) plus artifact
                assert np.max(np.abs(emb.data)) < 1.0 + 4 * 0.3 + 0.5 + 0.1

    def test_noiseless_zero_mismatch_fake_equals_real_law(self):
        cfg = SynthConfig(seed=4, mismatch=0.0, noise_std=0.0,
                          artifact_strength=0.0, **SMALL)
        real = generate_sample(cfg, "real", sample_rng(cfg, "same"))
        fake = generate_sample(cfg, "fake", sample_rng(cfg, "same"))
        # same latent z drives both; with m=0 the extra latent is inert
        np.testing.assert_allclose(real[0].data, fake[0].data, atol=1e-7)
        np.testing.assert_allclose(real[1].data, fake[1].data, atol=1e-7)

    def test_artifact_bump_on_top_features(self):
        cfg = SynthConfig(seed=5, noise_std=0.0, artifact_strength=0.4, **SMALL)
        real = generate_sample(cfg, "real", sample_rng(cfg, "r"))[0].data
        fake = generate_sample(cfg, "fake", sample_rng(cfg, "r"))[0].data
        n_art = max(1, round(cfg.feat_dim * 0.01))
        assert np.all(fake[:, -n_art:, :] > real[:, -n_art:, :] + 0.2)

    def test_validation(self):
        with pytest.raises(ConfigError):
            SynthConfig(mismatch=1.5)
        with pytest.raises(ConfigError):
            SynthConfig(noise_std=-0.1)
        cfg = SynthConfig(**SMALL)
        with pytest.raises(ConfigError):
            generate_sample(cfg, "spoof", sample_rng(cfg, "x"))


class TestMismatchMonotonicity:
    def test_cosine_similarity_non_increasing_in_mismatch(self):
        # one-sided Welch test at each adjacent pair of mismatch levels
        sims = {}
        for m in (0.0, 0.5, 1.0):
            cfg = SynthConfig(seed=11, mismatch=m, **SMALL)
            vals = []
            for i in range(200):
                sid = f"mono_{i}"
                style, ling = time_averaged_views(cfg, "fake", sample_rng(cfg, sid))
                vals.append(1.0 - metrics.cosine_distance(style, ling))
            sims[m] = vals
        assert np.mean(sims[0.0]) >= np.mean(sims[0.5]) >= np.mean(sims[1.0])
        for lo, hi in ((0.0, 0.5), (0.5, 1.0)):
            t, _, p_two = metrics.welch_ttest(sims[lo], sims[hi])
            assert t > 0
            assert p_two / 2 < 0.05


class TestGenerateDataset:
    def test_counts_and_split(self, tmp_path):
        cfg = SynthConfig(seed=6, **SMALL)
        manifest = generate_dataset(cfg, 20, 10, tmp_path / "data", dataset_tag="unit")
        records = load_manifest(manifest)
        assert len(records) == 30
        assert sum(r.label == "real" for r in records) == 20
        assert {r.split for r in records} <= {"train", "valid", "test"}
        # every embedding file validates
        emb = read_embedding(records[0].style_path)
        assert emb.layers == cfg.k_style

    def test_one_class_dataset(self, tmp_path):
        cfg = SynthConfig(seed=7, **SMALL)
        manifest = generate_dataset(cfg, 8, 0, tmp_path / "oneclass")
        records = load_manifest(manifest)
        assert all(r.label == "real" for r in records)

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = SynthConfig(seed=8, **SMALL)
        m1 = generate_dataset(cfg, 5, 5, tmp_path / "a")
        m2 = generate_dataset(cfg, 5, 5, tmp_path / "b")
        assert m1.read_text() == m2.read_text()
        for r1, r2 in zip(load_manifest(m1), load_manifest(m2)):
            assert r1.style_path.read_bytes() == r2.style_path.read_bytes()
            assert r1.linguistics_path.read_bytes() == r2.linguistics_path.read_bytes()

    def test_different_tags_different_samples(self, tmp_path):
        cfg = SynthConfig(seed=9, **SMALL)
        m1 = generate_dataset(cfg, 3, 0, tmp_path / "t1", dataset_tag="one")
        m2 = generate_dataset(cfg, 3, 0, tmp_path / "t2", dataset_tag="two")
        a = read_embedding(load_manifest(m1)[0].style_path)
        b = read_embedding(load_manifest(m2)[0].style_path)
        assert a.data.tobytes() != b.data.tobytes()
