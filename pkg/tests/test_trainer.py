import numpy as np
import pytest

from slimdet import autodiff as ad
from slimdet.errors import ConfigError, NumericalError
from slimdet.model import load_checkpoint, save_checkpoint
from slimdet.store import load_manifest
from slimdet.synth import SynthConfig, generate_dataset
from slimdet.trainer import (
    AdamWState,
    TrainConfig,
    adamw_step,
    global_grad_clip,
    linear_lr,
    train_stage1,
    train_stage2,
)

TINY = dict(latent_dim=4, feat_dim=24, time_steps=6, k_style=2, k_ling=2)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = SynthConfig(seed=5, mismatch=1.0, **TINY)
    stage1_manifest = generate_dataset(cfg, 40, 0, root / "one_class", dataset_tag="s1")
    mixed_manifest = generate_dataset(cfg, 40, 40, root / "mixed", dataset_tag="s2")
    return stage1_manifest, mixed_manifest


def tiny_stage1_config(**overrides):
    base = dict(epochs=4, batch_size=8, target_t=6, seed=3,
                dep_dim=8, hidden_dim=8, lr_start=0.005, lr_end=0.001)
    base.update(overrides)
    return TrainConfig.stage1_defaults(**base)


def tiny_stage2_config(**overrides):
    base = dict(epochs=3, batch_size=8, target_t=6, seed=3,
                dep_dim=8, hidden_dim=8)
    base.update(overrides)
    return TrainConfig.stage2_defaults(**base)


class TestAdamW:
    def test_zero_grad_zero_decay_unchanged(self):
        p = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        state = AdamWState()
        adamw_step({"p": p}, state, lr=0.01, weight_decay=0.0)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_hand_computed_first_step(self):
        p = ad.Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([1.0])
        state = AdamWState()
        adamw_step({"p": p}, state, lr=0.001, weight_decay=0.01)
        expected = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8)) - 0.001 * 0.01 * 1.0
        assert p.data[0] == pytest.approx(expected, abs=1e-12)
        assert p.data[0] == pytest.approx(0.99899, abs=1e-5)

    def test_constant_grad_monotone_decrease(self):
        p = ad.Tensor(np.array([1.0]), requires_grad=True)
        state = AdamWState()
        values = [p.data[0]]
        for _ in range(3):
            p.grad = np.array([1.0])
            adamw_step({"p": p}, state, lr=0.01, weight_decay=0.0)
            values.append(p.data[0])
        assert values[0] > values[1] > values[2] > values[3]

    def test_nonfinite_gradient_aborts_with_name(self):
        p = ad.Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        with pytest.raises(NumericalError, match="some_param"):
            adamw_step({"some_param": p}, AdamWState(), lr=0.01)

    def test_grad_clip_scales(self):
        p = ad.Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 10.0)
        norm = global_grad_clip({"p": p}, max_norm=5.0)
        assert norm == pytest.approx(20.0)
        assert np.linalg.norm(p.grad) == pytest.approx(5.0)


class TestLinearLR:
    def test_endpoints(self):
        assert linear_lr(0, 50, 0.005, 0.0001) == 0.005
        assert linear_lr(49, 50, 0.005, 0.0001) == pytest.approx(0.0001)

    def test_midpoint(self):
        assert linear_lr(25, 50, 0.005, 0.0001) == pytest.approx(0.0025)

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            linear_lr(50, 50, 0.005, 0.0001)
        with pytest.raises(ConfigError):
            linear_lr(-1, 50, 0.005, 0.0001)


class TestTrainConfig:
    def test_defaults_match_recipe(self):
        c1 = TrainConfig.stage1_defaults()
        assert (c1.batch_size, c1.epochs, c1.lr_start, c1.lr_end) == (16, 50, 0.005, 0.0001)
        assert c1.patience == 3 and c1.lam == 0.007
        c2 = TrainConfig.stage2_defaults()
        assert (c2.batch_size, c2.epochs, c2.lr_start, c2.lr_end) == (2, 10, 0.0001, 0.00001)

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig.stage1_defaults(lr_start=0.0001, lr_end=0.005)
        with pytest.raises(ConfigError):
            TrainConfig.stage1_defaults(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig.stage2_defaults(variant="bogus")


class TestStage1Training:
    def test_rejects_fake_in_train_split(self, tiny_data):
        _, mixed_manifest = tiny_data
        with pytest.raises(ConfigError, match="real"):
            train_stage1(mixed_manifest, tiny_stage1_config())

    def test_loss_decreases_and_checkpoint_valid(self, tiny_data, tmp_path):
        stage1_manifest, _ = tiny_data
        log = tmp_path / "log.jsonl"
        ckpt = train_stage1(stage1_manifest, tiny_stage1_config(), log_path=log)
        assert ckpt.stage == 1
        assert all(name.startswith(("style_compress", "ling_compress"))
                   for name in ckpt.params)
        rows = [__import__("json").loads(line) for line in log.read_text().splitlines()]
        train_rows = [r for r in rows if r.get("split") == "train"]
        assert {"cross", "intra", "style", "linguistics", "total", "lr"} <= set(train_rows[0])
        valid_rows = [r for r in rows if r.get("split") == "valid"]
        assert valid_rows[-1]["total"] < valid_rows[0]["total"]

    def test_deterministic_checkpoints(self, tiny_data, tmp_path):
        stage1_manifest, _ = tiny_data
        a = train_stage1(stage1_manifest, tiny_stage1_config())
        b = train_stage1(stage1_manifest, tiny_stage1_config())
        pa, pb = tmp_path / "a.slck", tmp_path / "b.slck"
        save_checkpoint(a, pa)
        save_checkpoint(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_early_stopping_fires_after_patience(self, tiny_data, tmp_path):
        stage1_manifest, _ = tiny_data
        # lr pinned at a huge value so validation stops improving quickly
        cfg = tiny_stage1_config(epochs=20, lr_start=0.5, lr_end=0.49)
        log = tmp_path / "es.jsonl"
        train_stage1(stage1_manifest, cfg, log_path=log)
        rows = [__import__("json").loads(line) for line in log.read_text().splitlines()]
        stops = [r for r in rows if r.get("event") == "early_stop"]
        if stops:  # quantify the contract when it fires
            stop_epoch = stops[0]["epoch"]
            valid = {r["epoch"]: r["total"] for r in rows if r.get("split") == "valid"}
            best_epoch = min(valid, key=valid.get)
            assert stop_epoch - best_epoch == cfg.patience


@pytest.fixture(scope="module")
def stage1_ckpt(tiny_data, tmp_path_factory):
    stage1_manifest, _ = tiny_data
    ckpt = train_stage1(stage1_manifest, tiny_stage1_config())
    path = tmp_path_factory.mktemp("ck") / "stage1.slck"
    save_checkpoint(ckpt, path)
    return path


class TestStage2Training:
    def test_requires_stage1_checkpoint(self, tiny_data, stage1_ckpt, tmp_path):
        _, mixed = tiny_data
        ckpt2 = train_stage2(mixed, stage1_ckpt, tiny_stage2_config())
        path = tmp_path / "stage2.slck"
        save_checkpoint(ckpt2, path)
        with pytest.raises(ConfigError, match="stage-1"):
            train_stage2(mixed, path, tiny_stage2_config())

    def test_stage1_params_frozen(self, tiny_data, stage1_ckpt):
        _, mixed = tiny_data
        stage1 = load_checkpoint(stage1_ckpt)
        ckpt2 = train_stage2(mixed, stage1_ckpt, tiny_stage2_config())
        for name, value in stage1.params.items():
            np.testing.assert_array_equal(ckpt2.params[name], value)

    def test_variant_head_width(self, tiny_data, stage1_ckpt):
        _, mixed = tiny_data
        ckpt = train_stage2(mixed, stage1_ckpt, tiny_stage2_config(variant="dependency"))
        assert ckpt.params["head.fc1_w"].shape[0] == 2 * 8
        assert ckpt.config["variant"] == "dependency"

    def test_deterministic(self, tiny_data, stage1_ckpt, tmp_path):
        _, mixed = tiny_data
        a = train_stage2(mixed, stage1_ckpt, tiny_stage2_config())
        b = train_stage2(mixed, stage1_ckpt, tiny_stage2_config())
        pa, pb = tmp_path / "a.slck", tmp_path / "b.slck"
        save_checkpoint(a, pa)
        save_checkpoint(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_one_class_manifest_rejected(self, tiny_data, stage1_ckpt):
        stage1_manifest, _ = tiny_data
        with pytest.raises(ConfigError, match="both classes"):
            train_stage2(stage1_manifest, stage1_ckpt, tiny_stage2_config())

    def test_augmentation_path_runs(self, tiny_data, stage1_ckpt):
        _, mixed = tiny_data
        ckpt = train_stage2(mixed, stage1_ckpt,
                            tiny_stage2_config(augment=True, epochs=1))
        assert ckpt.stage == 2

    def test_accumulation_steps(self, tiny_data, stage1_ckpt):
        _, mixed = tiny_data
        ckpt = train_stage2(mixed, stage1_ckpt,
                            tiny_stage2_config(accum_steps=2, epochs=1))
        assert ckpt.stage == 2
