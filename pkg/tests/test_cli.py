"""End-to-end CLI contract: subcommand behavior, artifacts on disk,
exit codes (0 success, 2 user error, 3 divergence), and reproducibility
from the resolved-config snapshot."""

import os

import numpy as np
import pytest

from numembed import cli, model as model_mod


def run(argv):
    return cli.main(argv)


def _write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SYNTH_CFG = (
    "synth.n = 600\n"
    "synth.seed = 5\n"
    "encoder.buckets = 5\n"
    "encoder.tau = 1.0\n"
    "encoder.tnet_hidden = 4\n"
    "model.dim = 4\n"
    "model.hidden_dims = 6\n"
    "model.use_fm = 0\n"
    "train.epochs = 2\n"
    "train.batch_size = 64\n"
)


def test_synth_round_trip(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "synth.n = 100\nsynth.seed = 3\n")
    out1 = tmp_path / "a.tsv"
    out2 = tmp_path / "b.tsv"
    assert run(["synth", "--config", cfg, "--out", str(out1)]) == 0
    assert run(["synth", "--config", cfg, "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()  # same seed, same bytes
    assert len(out1.read_text().splitlines()) == 100
    assert "wrote 100 instances" in capsys.readouterr().out


def test_synth_invalid_spec_exit_2(tmp_path):
    cfg = _write_cfg(tmp_path, "synth.n = 0\n")
    assert run(["synth", "--config", cfg,
                "--out", str(tmp_path / "x.tsv")]) == 2


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "synth.n = 100\nsynth.sed = 3\n")
    assert run(["synth", "--config", cfg,
                "--out", str(tmp_path / "x.tsv")]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_train_writes_artifacts(tmp_path, capsys):
    outdir = tmp_path / "out"
    cfg = _write_cfg(tmp_path, SYNTH_CFG + f"output.dir = {outdir}\n")
    assert run(["train", "--config", cfg]) == 0
    for name in ("checkpoint.txt", "history.txt", "history.png",
                 "config_resolved.txt", "stats.txt"):
        assert (outdir / name).exists(), name
    stdout = capsys.readouterr().out
    assert "epoch 0" in stdout and "valid_auc" in stdout
    model = model_mod.load_checkpoint(str(outdir / "checkpoint.txt"))
    assert model.config.embed_dim == 4


def test_train_reproducible_from_snapshot(tmp_path):
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    cfg = _write_cfg(tmp_path, SYNTH_CFG + f"output.dir = {out1}\n")
    assert run(["train", "--config", cfg]) == 0
    # Re-run from the resolved snapshot, only redirecting the output dir.
    assert run(["train", "--config", str(out1 / "config_resolved.txt"),
                f"--output.dir={out2}"]) == 0
    c1 = (out1 / "checkpoint.txt").read_text()
    c2 = (out2 / "checkpoint.txt").read_text()
    assert c1 == c2  # bit-identical parameters


def test_cli_override_changes_run(tmp_path):
    outdir = tmp_path / "out"
    cfg = _write_cfg(tmp_path, SYNTH_CFG + f"output.dir = {outdir}\n")
    assert run(["train", "--config", cfg, "--train.seed=9"]) == 0
    snap = (outdir / "config_resolved.txt").read_text()
    assert "train.seed = 9" in snap


def test_eval_reports_four_metrics(tmp_path, capsys):
    outdir = tmp_path / "out"
    cfg = _write_cfg(tmp_path, SYNTH_CFG + f"output.dir = {outdir}\n")
    assert run(["train", "--config", cfg]) == 0
    data_path = tmp_path / "eval.tsv"
    assert run(["synth", "--config", cfg, "--out", str(data_path)]) == 0
    capsys.readouterr()
    assert run(["eval", "--checkpoint", str(outdir / "checkpoint.txt"),
                "--data", str(data_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    keys = [ln.split()[0] for ln in lines]
    assert keys == ["auc", "logloss", "param_count", "batch_inference_ms"]
    auc = float(lines[0].split()[1])
    assert 0.5 < auc <= 1.0  # trained on the same generator: informative


def test_eval_missing_checkpoint_exit_2(tmp_path):
    assert run(["eval", "--checkpoint", str(tmp_path / "nope.txt"),
                "--data", str(tmp_path / "nope.tsv")]) == 2


def test_export_embeddings_and_softdist(tmp_path, capsys):
    outdir = tmp_path / "out"
    cfg = _write_cfg(tmp_path, SYNTH_CFG + f"output.dir = {outdir}\n")
    assert run(["train", "--config", cfg]) == 0
    ckpt = str(outdir / "checkpoint.txt")
    emb_out = tmp_path / "emb.tsv"
    assert run(["export", "--checkpoint", ckpt, "--kind", "embeddings",
                "--field", "0", "--out", str(emb_out)]) == 0
    assert len(emb_out.read_text().splitlines()) == 251  # header + 250
    assert os.path.exists(str(emb_out) + ".png")
    sd_out = tmp_path / "sd.tsv"
    assert run(["export", "--checkpoint", ckpt, "--kind", "softdist",
                "--field", "0", "--points", "40", "--out", str(sd_out)]) == 0
    rows = np.loadtxt(str(sd_out), skiprows=1)
    assert rows.shape == (40, 2 + 5)
    assert np.allclose(rows[:, 2:].sum(axis=1), 1.0, atol=1e-9)
    assert os.path.exists(str(sd_out) + ".png")
    # Explicit value list instead of a grid.
    assert run(["export", "--checkpoint", ckpt, "--kind", "embeddings",
                "--field", "0", "--values", "0.1,0.5,0.9",
                "--out", str(tmp_path / "v.tsv")]) == 0
    assert len((tmp_path / "v.tsv").read_text().splitlines()) == 4


def test_export_bad_field_exit_2(tmp_path):
    outdir = tmp_path / "out"
    cfg = _write_cfg(tmp_path, SYNTH_CFG + f"output.dir = {outdir}\n")
    assert run(["train", "--config", cfg]) == 0
    assert run(["export", "--checkpoint", str(outdir / "checkpoint.txt"),
                "--kind", "embeddings", "--field", "7",
                "--out", str(tmp_path / "x.tsv")]) == 2


def test_ablate_writes_table_and_figure(tmp_path, capsys):
    outdir = tmp_path / "out"
    cfg = _write_cfg(
        tmp_path,
        "synth.n = 400\nsynth.num_fields = 2\nsynth.cat_vocabs = 4\n"
        "encoder.buckets = 4\nencoder.tau = 1.0\nencoder.tnet_hidden = 4\n"
        "model.dim = 4\nmodel.hidden_dims = 6\nmodel.use_fm = 0\n"
        "train.epochs = 1\ntrain.batch_size = 64\n"
        f"output.dir = {outdir}\n")
    assert run(["ablate", "--config", cfg, "--order", "1,2"]) == 0
    lines = (outdir / "ablation.txt").read_text().splitlines()
    assert lines[0] == "fields_included\tauc\tlogloss"
    assert len(lines) == 1 + 3
    assert (outdir / "ablation.png").exists()
    out = capsys.readouterr().out
    assert out.count("fields ") == 3


def test_gradcheck_pass_and_size_guard(tmp_path, capsys):
    cfg = _write_cfg(
        tmp_path,
        "data.schema = cat:5,cat:5,num,num\n"
        "encoder.buckets = 5\nencoder.tau = 1.0\nencoder.tnet_hidden = 8\n"
        "model.dim = 8\nmodel.hidden_dims = 8,4\nmodel.use_fm = 1\n"
        "train.batch_size = 4\n")
    assert run(["gradcheck", "--config", cfg, "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "max_rel_error" in out
    for group in ("me", "w", "W", "W1", "W2", "cat_table", "mlp"):
        assert any(ln.split()[0] == group for ln in out.splitlines()), group
    # Desk-scale guard: oversized configs are a user error.
    assert run(["gradcheck", "--config", cfg,
                "--train.batch_size=1024"]) == 2
    err = capsys.readouterr().err
    assert "desk-scale" in err


def test_unrecognized_flag_rejected(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "synth.n = 10\n")
    with pytest.raises(SystemExit):
        run(["synth", "--config", cfg, "--out", str(tmp_path / "x.tsv"),
             "--bogus-flag"])
