import json

import pytest

from slimdet.cli import main, parse_config_file
from slimdet.errors import ConfigError

TINY_SYNTH = ["--latent-dim", "4", "--feat-dim", "24", "--time-steps", "6",
              "--k-style", "2", "--k-ling", "2"]
TINY_TRAIN = ["--set", "Compression output dim=8", "--set", "Bottleneck dim=8",
              "--set", "Target T=6", "--set", "Batch size=8"]


def run(args):
    return main(args)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synth data + both training stages, exercised through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    one_class = root / "one_class"
    mixed = root / "mixed"
    assert run(["synth", "--out", str(one_class), "--n-real", "40", "--n-fake", "0",
                "--seed", "5", "--dataset-tag", "s1", *TINY_SYNTH]) == 0
    assert run(["synth", "--out", str(mixed), "--n-real", "40", "--n-fake", "40",
                "--seed", "5", "--dataset-tag", "s2", *TINY_SYNTH]) == 0
    ckpt1 = root / "stage1.slck"
    assert run(["train-stage1", "--manifest", str(one_class / "manifest.jsonl"),
                "--ckpt-out", str(ckpt1), "--seed", "3",
                "--set", "Epochs=3", *TINY_TRAIN]) == 0
    ckpt2 = root / "stage2.slck"
    assert run(["train-stage2", "--manifest", str(mixed / "manifest.jsonl"),
                "--stage1-ckpt", str(ckpt1), "--ckpt-out", str(ckpt2),
                "--seed", "3", "--set", "Epochs=2", *TINY_TRAIN]) == 0
    return {"root": root, "one_class": one_class, "mixed": mixed,
            "ckpt1": ckpt1, "ckpt2": ckpt2}


class TestSynthCommand:
    def test_file_count(self, workspace):
        emb = workspace["mixed"] / "emb"
        assert len(list(emb.glob("*.slem"))) == 160  # two per sample

    def test_invalid_mismatch_exits_2(self, tmp_path, capsys):
        code = run(["synth", "--out", str(tmp_path / "x"), "--n-real", "1",
                    "--n-fake", "0", "--mismatch", "1.5", *TINY_SYNTH])
        assert code == 2
        assert "mismatch" in capsys.readouterr().err

    def test_rerun_identical(self, tmp_path):
        out = tmp_path / "redo"
        args = ["synth", "--out", str(out), "--n-real", "3", "--n-fake", "2",
                "--seed", "9", *TINY_SYNTH]
        assert run(args) == 0
        snapshot = {p.name: p.read_bytes() for p in (out / "emb").iterdir()}
        manifest_bytes = (out / "manifest.jsonl").read_bytes()
        assert run(args) == 0
        assert manifest_bytes == (out / "manifest.jsonl").read_bytes()
        for p in (out / "emb").iterdir():
            assert snapshot[p.name] == p.read_bytes()

    def test_effective_config_echoed(self, workspace):
        text = (workspace["mixed"] / "effective_config.txt").read_text()
        assert "mismatch = 1.0" in text
        assert "n_real = 40" in text


class TestTrainCommands:
    def test_stage1_log_schema(self, workspace):
        log = workspace["ckpt1"].with_suffix(".log.jsonl")
        rows = [json.loads(line) for line in log.read_text().splitlines()]
        train_rows = [r for r in rows if r.get("split") == "train"]
        assert {"cross", "intra", "style", "linguistics", "lr"} <= set(train_rows[0])

    def test_stage2_without_stage1_flag_exits_2(self, workspace, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["train-stage2", "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                 "--ckpt-out", "x.slck"])
        assert exc.value.code == 2

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("Momentum = 0.9\n")
        code = run(["train-stage1", "--manifest", "unused.jsonl",
                    "--ckpt-out", str(tmp_path / "x.slck"), "--config", str(cfg)])
        assert code == 2
        assert "Momentum" in capsys.readouterr().err

    def test_missing_manifest_exits_3(self, tmp_path, capsys):
        code = run(["train-stage1", "--manifest", str(tmp_path / "nope.jsonl"),
                    "--ckpt-out", str(tmp_path / "x.slck")])
        assert code == 3

    def test_config_file_parsing(self, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(
            "# recipe\n"
            "Batch size = 16\n"
            "Epochs = 50\n"
            "Starting LR = .005\n"
            "End LR = .0001\n"
            "Early-stop patience = 3\n"
            "Lambda = .007\n"
            "Optimizer = AdamW\n"
            "LRscheduler = Linear\n"
        )
        overrides = parse_config_file(cfg)
        assert overrides == {"batch_size": 16, "epochs": 50, "lr_start": 0.005,
                             "lr_end": 0.0001, "patience": 3, "lam": 0.007}

    def test_unsupported_optimizer_rejected(self, tmp_path):
        cfg = tmp_path / "sgd.cfg"
        cfg.write_text("Optimizer = SGD\n")
        with pytest.raises(ConfigError):
            parse_config_file(cfg)


class TestEvaluateCommand:
    def test_report_schema(self, workspace, tmp_path, capsys):
        out = tmp_path / "eval"
        code = run(["evaluate", "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                    "--ckpt", str(workspace["ckpt2"]), "--split", "test",
                    "--report-out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert {"eer", "eer_threshold", "f1", "n_real", "n_fake"} <= set(report)
        scores = (out / "scores.txt").read_text().splitlines()
        assert len(scores) == report["n_real"] + report["n_fake"]
        assert json.loads(capsys.readouterr().out.splitlines()[-1])["eer"] == report["eer"]

    def test_variant_mismatch_rejected(self, workspace, tmp_path):
        code = run(["evaluate", "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                    "--ckpt", str(workspace["ckpt2"]), "--variant", "dependency",
                    "--report-out", str(tmp_path / "x")])
        assert code == 2

    def test_idempotent(self, workspace, tmp_path):
        out = tmp_path / "eval2"
        args = ["evaluate", "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                "--ckpt", str(workspace["ckpt2"]), "--report-out", str(out)]
        assert run(args) == 0
        before = (out / "report.json").read_bytes(), (out / "scores.txt").read_bytes()
        assert run(args) == 0
        assert before == ((out / "report.json").read_bytes(), (out / "scores.txt").read_bytes())


class TestAnalyzeCommand:
    def test_mismatch_mode(self, workspace, tmp_path):
        out = tmp_path / "mm"
        code = run(["analyze", "--mode", "mismatch",
                    "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                    "--ckpt", str(workspace["ckpt1"]), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "mismatch_report.json").read_text())
        assert {"real", "fake"} == set(report["classes"])
        assert "welch" in report
        lines = (out / "mismatch_samples.jsonl").read_text().splitlines()
        assert len(lines) == len(report["samples"])

    def test_cca_mode(self, workspace, tmp_path):
        out = tmp_path / "cca"
        code = run(["analyze", "--mode", "cca",
                    "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                    "--fit-n", "20", "--dims", "4", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "cca_report.json").read_text())
        assert report["dims"] == 4
        assert "real" in report["groups"] and "fake" in report["groups"]

    def test_layers_mode(self, workspace, tmp_path):
        out = tmp_path / "layers"
        code = run(["analyze", "--mode", "layers",
                    "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                    "--n", "4", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "layer_spearman.json").read_text())
        assert report["shape"] == [2, 2]

    def test_mismatch_requires_ckpt(self, workspace):
        with pytest.raises(SystemExit) as exc:
            run(["analyze", "--mode", "mismatch",
                 "--manifest", str(workspace["mixed"] / "manifest.jsonl"),
                 "--out", "x"])
        assert exc.value.code == 2


class TestOutputRoot:
    def test_env_var_used_for_relative_paths(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SLIMDET_OUT_ROOT", str(tmp_path))
        assert run(["synth", "--out", "envtest", "--n-real", "1", "--n-fake", "0",
                    *TINY_SYNTH]) == 0
        assert (tmp_path / "envtest" / "manifest.jsonl").is_file()
