"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavy fixtures
(synthetic benchmark + two-stage training) build lazily on first use and
are shared; total runtime is a few minutes of CPU.

The benchmark configuration is frozen here. Dataset knobs (latent size,
noise, artifact strength) are calibrated so that both feature families
are individually informative but imperfect, which is the regime where
fusion measurably helps; stage-2 uses a desk-scale learning rate because
the published recipe's schedule assumes ~100x more optimizer steps than
a desk-sized corpus provides.
"""

import json
import time

import numpy as np
import pytest
import scipy.special

from slimdet import autodiff as ad
from slimdet import metrics
from slimdet.analysis import cca_fit, cca_group_report, mismatch_report
from slimdet.cli import main as cli_main
from slimdet.losses import stage1_loss
from slimdet.model import ASPProjector, ClassifierHead, CompressionModule, \
    load_checkpoint, model_from_checkpoint, save_checkpoint
from slimdet.store import EmbeddingCache, load_manifest
from slimdet.synth import SynthConfig, generate_dataset, sample_rng, time_averaged_views
from slimdet.trainer import TrainConfig, score_records, train_stage1, train_stage2

from test_metrics import eer_bruteforce

# frozen acceptance benchmark: full embedding geometry (F=1024, T=50,
# K=11/8), full dependency break on fakes, calibrated difficulty
DATA_SEED = 7
TRAIN_SEED = 3
BENCH = dict(seed=DATA_SEED, mismatch=1.0, latent_dim=6, noise_std=0.5,
             artifact_strength=0.12)
N_ONE_CLASS = 300
N_BENCH = 200  # per class
STAGE2 = dict(seed=TRAIN_SEED, lr_start=0.001, lr_end=0.0001)


def report(name, elapsed, detail=""):
    print(f"\n[ACCEPTANCE] {name}: PASS ({elapsed:.1f}s) {detail}")


@pytest.fixture(scope="module")
def bench_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    cfg = SynthConfig(**BENCH)
    one = generate_dataset(cfg, N_ONE_CLASS, 0, root / "one_class", dataset_tag="stage1")
    bench = generate_dataset(cfg, N_BENCH, N_BENCH, root / "bench", dataset_tag="bench")
    return {"root": root, "one_class": one, "bench": bench}


@pytest.fixture(scope="module")
def stage1(bench_paths):
    log = bench_paths["root"] / "stage1.log.jsonl"
    t0 = time.perf_counter()
    ckpt = train_stage1(bench_paths["one_class"], TrainConfig.stage1_defaults(seed=TRAIN_SEED),
                        log_path=log)
    path = bench_paths["root"] / "stage1.slck"
    save_checkpoint(ckpt, path)
    return {"ckpt": ckpt, "path": path, "log": log, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def stage2_eers(bench_paths, stage1):
    records = load_manifest(bench_paths["bench"])
    test_split = [r for r in records if r.split == "test"]
    cache = EmbeddingCache()
    t0 = time.perf_counter()
    eers = {}
    for variant in ("full", "dependency", "subspace"):
        ckpt = train_stage2(bench_paths["bench"], stage1["ckpt"],
                            TrainConfig.stage2_defaults(variant=variant, **STAGE2))
        model = model_from_checkpoint(ckpt)
        _, labels, scores = score_records(model, test_split, cache, 50)
        real = [s for s, l in zip(scores, labels) if l == 0]
        fake = [s for s, l in zip(scores, labels) if l == 1]
        eers[variant], _ = metrics.eer(real, fake)
    return {"eers": eers, "n_test": len(test_split),
            "seconds": time.perf_counter() - t0}


class TestLossOracle:
    def test_loss_oracle(self):
        warm = np.ones((2, 2, 1))
        stage1_loss(ad.Tensor(warm), ad.Tensor(-warm))  # JIT warmup outside the budget
        t0 = time.perf_counter()
        style = ad.Tensor(np.array([[0.5, 0.5], [-0.5, -0.5]]).reshape(2, 2, 1))
        ling = ad.Tensor(np.array([[0.5, -0.5], [-0.5, 0.5]]).reshape(2, 2, 1))
        breakdown = stage1_loss(style, ling, lam=0.007, mode="literal")
        assert abs(breakdown.total.item() - 2.014) < 1e-9
        rng = np.random.default_rng(0)
        for _ in range(100):
            b, f, t = int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(1, 5))
            lam = float(rng.uniform(0, 1))
            mode = ("literal", "gram-scaled")[int(rng.integers(2))]
            bd = stage1_loss(ad.Tensor(rng.normal(size=(b, f, t))),
                             ad.Tensor(rng.normal(size=(b, f, t))), lam, mode)
            assert abs(bd.total.item() - (bd.cross + lam * bd.intra)) < 1e-12
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0
        report("loss-oracle", elapsed, "2x2 example = 2.014, identity on 100 random inputs")


class TestGradientSuite:
    def test_gradient_suite(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        checks = 0

        def trial(f, tensors):
            ok, err = ad.check_gradients(f, tensors, rtol=1e-4)
            assert ok, f"gradient check failed: max rel err {err}"

        for trial_idx in range(20):
            init = np.random.default_rng(100 + trial_idx)
            comp = CompressionModule(feat_dim=5, hidden_dim=3, out_dim=4, rng=init)
            x = ad.Tensor(rng.normal(size=(2, 5, 3)))
            trial(lambda x, *ps: ad.frobenius_sq(comp.forward_pooled(x).frames),
                  [x] + list(comp.params().values()))
            checks += 1

            asp = ASPProjector(feat_dim=4, out_dim=3, rng=init)
            x = ad.Tensor(rng.normal(size=(2, 4, 5)))
            trial(lambda x, *ps: ad.frobenius_sq(asp.forward_pooled(x)),
                  [x] + list(asp.params().values()))
            checks += 1

            head = ClassifierHead(in_dim=6, hidden_dim=4, rng=init)
            labels = rng.integers(0, 2, 3)
            x = ad.Tensor(rng.normal(size=(3, 6)))
            trial(lambda x, *ps: ad.bce_with_logits(head.forward(x), labels),
                  [x] + list(head.params().values()))
            checks += 1

            for mode in ("literal", "gram-scaled"):
                s = ad.Tensor(rng.normal(size=(3, 4, 2)))
                l = ad.Tensor(rng.normal(size=(3, 4, 2)))
                trial(lambda s, l, m=mode: stage1_loss(s, l, 0.007, m).total, [s, l])
                checks += 1
        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0
        report("gradient-suite", elapsed,
               f"{checks} finite-difference checks over 20 trials x 5 modules at rtol 1e-4")


class TestMetricOracles:
    def test_metric_oracles(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        for _ in range(200):
            real = rng.integers(0, 12, int(rng.integers(1, 40))) / 4.0 + rng.normal(0.3, 0.4)
            fake = rng.integers(0, 12, int(rng.integers(1, 40))) / 4.0
            assert metrics.eer(real, fake) == eer_bruteforce(real, fake)
        assert abs(metrics.pearson([1, 2, 3], [1, 2, 4]) - 9 / np.sqrt(84)) < 1e-9
        assert abs(metrics.spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-9
        t, df, _ = metrics.welch_ttest([1, 2, 3], [2, 4, 6])
        assert abs(t - (-2 / np.sqrt(5 / 3))) < 1e-9
        assert abs(df - 50 / 17) < 1e-9
        for _ in range(200):
            tt = float(rng.normal(0, 3))
            dd = float(rng.uniform(1, 80))
            ours = metrics.student_t_two_sided_p(tt, dd)
            ref = float(scipy.special.betainc(dd / 2, 0.5, dd / (dd + tt * tt)))
            assert abs(ours - ref) < 1e-8
        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0
        report("metric-oracles", elapsed,
               "EER == brute force on 200 sets, hand examples at 1e-9, t p-values at 1e-8")


class TestHypothesisReproduction:
    def test_cca_probe_ordering(self):
        t0 = time.perf_counter()
        cfg = SynthConfig(**BENCH)
        fit_s, fit_l = [], []
        for i in range(100):
            s, l = time_averaged_views(cfg, "real", sample_rng(cfg, f"ccafit_{i}"))
            fit_s.append(s)
            fit_l.append(l)
        groups = {}
        for label in ("real", "fake"):
            xs, ys = [], []
            for i in range(200):
                s, l = time_averaged_views(cfg, label, sample_rng(cfg, f"ccaeval_{label}_{i}"))
                xs.append(s)
                ys.append(l)
            groups[label] = (np.array(xs), np.array(ys))
        model = cca_fit(np.array(fit_s), np.array(fit_l), dims=20)
        rep = cca_group_report(model, groups)
        r_real = rep["groups"]["real"]["mean"]
        r_fake = rep["groups"]["fake"]["mean"]
        p = rep["tests"]["real_vs_fake"]["welch_p"]
        assert r_real > r_fake
        assert p < 0.05
        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0
        report("hypothesis-reproduction", elapsed,
               f"mean r(real)={r_real:.3f} > mean r(fake)={r_fake:.3f}, Welch p={p:.2e}")


class TestMismatchReproduction:
    def test_distance_separation_after_stage1(self, bench_paths, stage1):
        t0 = time.perf_counter()
        rows = [json.loads(line) for line in stage1["log"].read_text().splitlines()]
        valid = [r["total"] for r in rows if r.get("split") == "valid"]
        assert min(valid) <= 0.7 * valid[0], "validation loss should drop >= 30%"
        records = load_manifest(bench_paths["bench"])
        rep = mismatch_report(records, stage1["ckpt"])
        mean_real = rep["classes"]["real"]["mean"]
        mean_fake = rep["classes"]["fake"]["mean"]
        p = rep["welch"]["p"]
        assert mean_fake > mean_real
        assert p < 0.01
        elapsed = time.perf_counter() - t0 + stage1["seconds"]
        assert elapsed < 600.0
        report("mismatch-reproduction", elapsed,
               f"distance real={mean_real:.3f} fake={mean_fake:.3f}, Welch p={p:.2e}")


class TestEndToEndDetection:
    def test_full_pipeline_eer(self, stage1, stage2_eers):
        t0 = time.perf_counter()
        eers = stage2_eers["eers"]
        assert eers["full"] <= 0.10, f"full-variant EER {eers['full']:.3f} above 10%"
        assert eers["full"] <= min(eers["dependency"], eers["subspace"]), (
            f"fusion did not match its parts: {eers}"
        )
        elapsed = time.perf_counter() - t0 + stage1["seconds"] + stage2_eers["seconds"]
        assert elapsed < 1200.0
        report("end-to-end-detection", elapsed,
               f"EER full={eers['full']:.3f} dependency={eers['dependency']:.3f} "
               f"subspace={eers['subspace']:.3f} on {stage2_eers['n_test']} test samples")


class TestDeterminism:
    TINY_SYNTH = ["--latent-dim", "4", "--feat-dim", "24", "--time-steps", "6",
                  "--k-style", "2", "--k-ling", "2", "--noise-std", "0.3"]
    TINY_TRAIN = ["--set", "Compression output dim=8", "--set", "Bottleneck dim=8",
                  "--set", "Target T=6", "--set", "Batch size=8", "--set", "Epochs=2"]

    def _run_all(self, root):
        one = root / "one"
        mixed = root / "mixed"
        assert cli_main(["synth", "--out", str(one), "--n-real", "30", "--n-fake", "0",
                         "--seed", "5", "--dataset-tag", "d1", *self.TINY_SYNTH]) == 0
        # 40 per class keeps both classes in every hash-assigned split
        assert cli_main(["synth", "--out", str(mixed), "--n-real", "40", "--n-fake", "40",
                         "--seed", "5", "--dataset-tag", "d2", *self.TINY_SYNTH]) == 0
        ck1 = root / "s1.slck"
        ck2 = root / "s2.slck"
        assert cli_main(["train-stage1", "--manifest", str(one / "manifest.jsonl"),
                         "--ckpt-out", str(ck1), "--seed", "3", *self.TINY_TRAIN]) == 0
        assert cli_main(["train-stage2", "--manifest", str(mixed / "manifest.jsonl"),
                         "--stage1-ckpt", str(ck1), "--ckpt-out", str(ck2),
                         "--seed", "3", *self.TINY_TRAIN]) == 0
        ev = root / "eval"
        assert cli_main(["evaluate", "--manifest", str(mixed / "manifest.jsonl"),
                         "--ckpt", str(ck2), "--report-out", str(ev)]) == 0
        an = root / "mm"
        assert cli_main(["analyze", "--mode", "mismatch",
                         "--manifest", str(mixed / "manifest.jsonl"),
                         "--ckpt", str(ck1), "--out", str(an)]) == 0
        tracked = [ck1, ck2, ev / "report.json", ev / "scores.txt",
                   an / "mismatch_report.json", mixed / "manifest.jsonl"]
        tracked.extend(sorted((mixed / "emb").iterdir()))
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in tracked}

    def test_repeat_runs_byte_identical(self, tmp_path):
        t0 = time.perf_counter()
        a = self._run_all(tmp_path / "runA")
        b = self._run_all(tmp_path / "runB")
        assert a.keys() == b.keys()
        for key in a:
            assert a[key] == b[key], f"output differs between runs: {key}"
        elapsed = time.perf_counter() - t0
        report("determinism", elapsed,
               f"{len(a)} artifacts byte-identical across repeated seeded runs")
