"""Config resolution and the command-line workflow."""

import json

import pytest

from dmae.cli import main
from dmae.config import (
    ConfigError,
    DEFAULTS,
    config_hash,
    format_config,
    load_config,
    model_config,
    parse_config_text,
    render_config,
)

TINY_SETS = [
    "--set", "render.image_size=32", "--set", "model.img_size=32",
    "--set", "model.enc_dim=8", "--set", "model.enc_depth=1", "--set", "model.enc_heads=2",
    "--set", "model.dec_dim=8", "--set", "model.dec_depth=1", "--set", "model.dec_heads=2",
    "--set", "model.cls_head_hidden=0",
]


class TestConfig:
    def test_defaults_are_the_desk_preset(self):
        cfg = load_config()
        assert cfg == DEFAULTS
        assert cfg["pretrain.lr"] == 1e-3
        assert cfg["model.img_size"] == 64

    def test_paper_preset(self):
        cfg = load_config(preset="paper")
        assert cfg["model.enc_dim"] == 768
        assert cfg["pretrain.epochs"] == 100
        assert cfg["pretrain.lr"] == 3e-4
        assert cfg["data.pretrain_count"] == 10_000
        assert cfg["finetune.epochs"] == 150

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            load_config(preset="gpu")

    def test_precedence_defaults_preset_file_overrides(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("pretrain.lr = 5e-4\npretrain.epochs = 7\n")
        cfg = load_config(f, overrides={"pretrain.epochs": "9"}, preset="paper")
        assert cfg["pretrain.lr"] == 5e-4  # file beats preset (3e-4)
        assert cfg["pretrain.epochs"] == 9  # override beats file
        assert cfg["model.enc_dim"] == 768  # preset beats defaults

    def test_empty_file_gives_defaults(self, tmp_path):
        f = tmp_path / "empty.cfg"
        f.write_text("")
        assert load_config(f) == DEFAULTS

    def test_comments_and_blank_lines(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("# run settings\n\nrun.seed = 11  # inline comment\n")
        assert load_config(f)["run.seed"] == 11

    def test_unknown_key_named(self, tmp_path):
        f = tmp_path / "bad.cfg"
        f.write_text("model.enc_dims = 64\n")
        with pytest.raises(ConfigError, match="model.enc_dims"):
            load_config(f)
        with pytest.raises(ConfigError, match="pretrain.momentum"):
            load_config(overrides={"pretrain.momentum": "0.9"})

    def test_type_mismatch_names_expected_type(self):
        with pytest.raises(ConfigError, match="int"):
            load_config(overrides={"pretrain.epochs": "soon"})
        with pytest.raises(ConfigError, match="float"):
            load_config(overrides={"pretrain.lr": "fast"})
        with pytest.raises(ConfigError, match="bool"):
            load_config(overrides={"pretrain.cosine_lr": "maybe"})

    def test_value_coercion(self):
        cfg = load_config(overrides={
            "pretrain.cosine_lr": "true",
            "pretrain.fresh_masks": "0",
            "render.alphas": "0.5, 1.0, 2.0",
            "model.mask_ratio": "0.9",
            "pretrain.lambda_rec": "2",
        })
        assert cfg["pretrain.cosine_lr"] is True
        assert cfg["pretrain.fresh_masks"] is False
        assert cfg["render.alphas"] == (0.5, 1.0, 2.0)
        assert cfg["model.mask_ratio"] == 0.9
        assert cfg["pretrain.lambda_rec"] == 2.0

    def test_malformed_line_reports_number(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("run.seed = 1\nnot a key value line\n")

    def test_snapshot_roundtrips(self, tmp_path):
        cfg = load_config(overrides={"model.mask_ratio": "0.9", "run.seed": "7"})
        snapshot = tmp_path / "snap.cfg"
        snapshot.write_text(format_config(cfg))
        assert "model.mask_ratio = 0.9" in snapshot.read_text()
        assert load_config(snapshot) == cfg

    def test_config_hash(self):
        a = load_config()
        b = load_config(overrides={"run.seed": "1"})
        assert config_hash(a) == config_hash(load_config())
        assert config_hash(a) != config_hash(b)

    def test_bundle_constructors(self):
        cfg = load_config()
        mc = model_config(cfg)
        assert mc.img_size == 64 and mc.enc_dim == 128
        rc = render_config(cfg)
        assert rc.image_size == 64

    def test_render_model_size_mismatch(self):
        cfg = load_config(overrides={"render.image_size": "32"})
        with pytest.raises(ConfigError, match="img_size"):
            render_config(cfg)


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """One tiny dataset + pretrain + finetune run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    gen_args = [
        "gen", "--preset", "desk", "--seed", "3", "--data", str(data), *TINY_SETS,
        "--set", "data.pretrain_count=10", "--set", "data.train_count=10",
        "--set", "data.test_count=10",
    ]
    assert main(gen_args) == 0
    pre_args = [
        "pretrain", "--seed", "3", "--data", str(data), "--out", str(root / "pre"), *TINY_SETS,
        "--set", "pretrain.epochs=1", "--set", "pretrain.batch_size=10",
    ]
    assert main(pre_args) == 0
    fin_args = [
        "finetune", "--seed", "3", "--data", str(data), "--out", str(root / "fin"), *TINY_SETS,
        "--set", "finetune.epochs=1", "--set", "finetune.batch_size=10",
        "--ckpt", str(root / "pre" / "model.ckpt"),
    ]
    assert main(fin_args) == 0
    return root, data, pre_args


class TestCli:
    def test_usage_errors_exit_2(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["trainify"])
        assert e.value.code == 2
        with pytest.raises(SystemExit) as e:
            main(["pretrain", "--learnrate", "1"])
        assert e.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--version"])
        assert e.value.code == 0
        assert capsys.readouterr().out.startswith("dmae ")

    def test_gen_writes_dataset_and_run_records(self, cli_workspace):
        root, data, _ = cli_workspace
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["splits"]["pretrain"]["count"] == 10
        # every run directory records how to reproduce it
        snapshot = (data / "config.txt").read_text()
        assert "data.pretrain_count = 10" in snapshot
        assert "run.seed = 3" in snapshot
        assert (data / "seed.txt").read_text() == "3\n"
        assert (data / "version.txt").read_text().startswith("dmae ")
        # the snapshot itself is a loadable config
        cfg = load_config(data / "config.txt")
        assert cfg["data.pretrain_count"] == 10

    def test_pretrain_outputs(self, cli_workspace):
        root, _, _ = cli_workspace
        assert (root / "pre" / "model.ckpt").exists()
        assert (root / "pre" / "train_log.jsonl").exists()

    def test_pretrain_deterministic_across_invocations(self, cli_workspace, tmp_path):
        root, data, pre_args = cli_workspace
        rerun_args = [a if a != str(root / "pre") else str(tmp_path / "again") for a in pre_args]
        assert main(rerun_args) == 0
        assert (tmp_path / "again" / "model.ckpt").read_bytes() == (root / "pre" / "model.ckpt").read_bytes()

    def test_finetune_requires_init_choice(self, cli_workspace, tmp_path, capsys):
        _, data, _ = cli_workspace
        code = main([
            "finetune", "--data", str(data), "--out", str(tmp_path / "ft"), *TINY_SETS,
            "--set", "finetune.epochs=1",
        ])
        assert code == 1
        assert "--from-scratch" in capsys.readouterr().err

    def test_eval_writes_report(self, cli_workspace, tmp_path):
        root, data, _ = cli_workspace
        code = main([
            "eval", "--data", str(data), "--out", str(tmp_path / "ev"), *TINY_SETS,
            "--ckpt", str(root / "fin" / "finetuned.ckpt"),
        ])
        assert code == 0
        report = json.loads((tmp_path / "ev" / "report.json").read_text())
        assert report["n_samples"] == 10
        assert "overall accuracy" in (tmp_path / "ev" / "report.txt").read_text()

    def test_eval_missing_checkpoint_exits_1(self, cli_workspace, tmp_path, capsys):
        _, data, _ = cli_workspace
        code = main([
            "eval", "--data", str(data), "--out", str(tmp_path / "ev2"), *TINY_SETS,
            "--ckpt", str(tmp_path / "nope.ckpt"),
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_denoise_report_and_previews(self, cli_workspace, tmp_path):
        root, data, _ = cli_workspace
        code = main([
            "denoise", "--data", str(data), "--out", str(tmp_path / "dn"), *TINY_SETS,
            "--ckpt", str(root / "pre" / "model.ckpt"),
            "--count", "2", "--snr", "-5", "--save-images", "1",
        ])
        assert code == 0
        doc = json.loads((tmp_path / "dn" / "denoising.json").read_text())
        assert doc["n_pairs"] == 2
        assert (tmp_path / "dn" / "pair000_denoised.png").exists()

    def test_export_latents(self, cli_workspace, tmp_path):
        root, data, _ = cli_workspace
        code = main([
            "export-latents", "--data", str(data), "--out", str(tmp_path / "lat"), *TINY_SETS,
            "--ckpt", str(root / "pre" / "model.ckpt"), "--split", "test",
        ])
        assert code == 0
        lines = (tmp_path / "lat" / "latents.csv").read_text().splitlines()
        assert len(lines) == 11
        assert lines[0].startswith("label,snr_db,f0")

    def test_ablate_one_row_per_grid_point(self, cli_workspace, tmp_path):
        _, data, _ = cli_workspace
        code = main([
            "ablate", "--data", str(data), "--out", str(tmp_path / "ab"), *TINY_SETS,
            "--set", "pretrain.epochs=1", "--set", "pretrain.batch_size=10",
            "--set", "finetune.epochs=1", "--set", "finetune.batch_size=10",
            "--sweep", "pretrain.lambda_cls=0.05,0.5",
        ])
        assert code == 0
        rows = [json.loads(l) for l in (tmp_path / "ab" / "ablation.jsonl").read_text().splitlines()]
        assert [r["pretrain.lambda_cls"] for r in rows] == ["0.05", "0.5"]
        assert all(0.0 <= r["test_accuracy"] <= 1.0 for r in rows)

    def test_ablate_rejects_bad_sweep(self, cli_workspace, tmp_path, capsys):
        _, data, _ = cli_workspace
        code = main([
            "ablate", "--data", str(data), "--out", str(tmp_path / "ab2"), *TINY_SETS,
            "--sweep", "nonsense",
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_gradcheck_exit_codes(self, monkeypatch, capsys):
        # the real check is exercised by the acceptance suite; here we only
        # care that the command turns error magnitudes into exit codes
        import dmae.gradcheck

        monkeypatch.setattr(dmae.gradcheck, "tiny_model_gradcheck",
                            lambda seed=0: {"enc.w": 3e-7, "dec.w": 8e-7})
        assert main(["gradcheck"]) == 0
        assert "passed" in capsys.readouterr().out
        monkeypatch.setattr(dmae.gradcheck, "tiny_model_gradcheck",
                            lambda seed=0: {"enc.w": 3e-3})
        assert main(["gradcheck"]) == 1
        assert "FAILED" in capsys.readouterr().err
