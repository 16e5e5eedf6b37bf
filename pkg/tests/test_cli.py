import numpy as np
import pytest

from eir import checkpoint, training
from eir.cli import main
from eir.config import ARMS, RunConfig, canonical_arm, parse_config
from eir.errors import ConfigError, ContractError, NumericError
from eir.metrics import ScoreReport

TINY = """\
world.corpus_size=30
world.seed=4
model.width=16
model.heads=2
model.ffn=32
model.image_layers=1
model.ct_layers=1
model.decoder_layers=1
model.interp_warmup=10
run.steps=6
run.batch_size=4
run.eval_every=3
run.log_every=2
run.eval_limit=3
"""


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY + f"run.data={tmp_path / 'data'}\nrun.out={tmp_path / 'run'}\n")
    assert main(["gen-data", "--config", str(cfg)]) == 0
    return tmp_path, cfg


# ---------------------------------------------------------------- config


def test_config_text_round_trip():
    cfg = parse_config(TINY)
    assert parse_config(cfg.to_text()) == cfg


def test_unknown_key_names_the_key():
    with pytest.raises(ConfigError, match="model.depth"):
        parse_config("model.depth=3")


@pytest.mark.parametrize("line", ["model.width=30", "optim.lr=-1", "run.batch_size=0",
                                  "model.arm=MV+X", "world.noise=abc"])
def test_out_of_range_values(line):
    with pytest.raises(ConfigError):
        parse_config(line)


def test_add_alias():
    assert canonical_arm("MV+T+G(add)") == "MV+T+G"
    assert RunConfig().run.arms == ARMS


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_bytes():
    rng = np.random.default_rng(0)
    named = [("a.w", rng.normal(size=(3, 4))), ("b", rng.normal(size=5)),
             ("c.deep", rng.normal(size=(2, 2, 2, 2)))]
    blob = checkpoint.dumps(named)
    loaded = checkpoint.loads(blob)
    assert checkpoint.dumps(loaded.items()) == blob
    assert blob[:8] == b"EIRCKPT1"


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(ContractError):
        checkpoint.loads(b"NOTACKPT" + b"\0" * 8)


# ---------------------------------------------------------------- commands


def test_gen_data_prints_counts_and_refuses_rerun(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"world.corpus_size=200\nrun.data={tmp_path / 'd'}\n")
    assert main(["gen-data", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "train\t160" in out and "val\t20" in out and "test\t20" in out
    assert "pneumonia=" in out
    assert main(["gen-data", "--config", str(cfg)]) == 1
    assert main(["gen-data", "--config", str(cfg), "--overwrite"]) == 0


def test_gen_data_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("world.colour=blue\n")
    assert main(["gen-data", "--config", str(cfg)]) == 1
    assert "world.colour" in capsys.readouterr().err


def test_train_eval_generate(workspace, capsys):
    tmp, cfg = workspace
    assert main(["train", "--config", str(cfg), "--plot"]) == 0
    run = tmp / "run"
    for name in ("model.ckpt", "model.meta", "train.log", "curves.tsv", "curves.png"):
        assert (run / name).exists()
    log = (run / "train.log").read_text().splitlines()
    assert log[0].startswith("step=1 ") and "val_BL-4=" in log[-1]
    curves = training.read_curves(run / "curves.tsv")
    assert [r["step"] for r in curves] == [1, 2, 3, 4, 5, 6]
    for r in curves:
        assert r["L_total"] == r["L_C"] + r["L_G"] + r["L_I"]

    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--out", str(tmp / "e1")]) == 0
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--out", str(tmp / "e2")]) == 0
    for name in ("scores.txt", "per_sample.tsv", "generations.txt"):
        assert (tmp / "e1" / name).read_bytes() == (tmp / "e2" / name).read_bytes()
    scores = ScoreReport.from_text((tmp / "e1" / "scores.txt").read_text())
    assert set(scores.corpus) >= {"BL-1", "BL-4", "RG-L", "CE-F1"}

    capsys.readouterr()
    assert main(["generate", "--checkpoint", str(run / "model.ckpt"), "--split", "val"]) == 0
    assert "generated\t" in capsys.readouterr().out


def test_same_seed_same_checkpoint_bytes(workspace):
    tmp, cfg = workspace
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "a")]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "b")]) == 0
    assert (tmp / "a" / "model.ckpt").read_bytes() == (tmp / "b" / "model.ckpt").read_bytes()
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "c"), "--seed", "9"]) == 0
    assert (tmp / "a" / "model.ckpt").read_bytes() != (tmp / "c" / "model.ckpt").read_bytes()


def test_mv_arm_logs_zero_interpreter_loss(workspace):
    tmp, cfg = workspace
    cfg.write_text(cfg.read_text() + "model.arm=MV\n")
    assert main(["train", "--config", str(cfg)]) == 0
    assert all(r["L_I"] == 0.0 for r in training.read_curves(tmp / "run" / "curves.tsv"))


def test_eval_refuses_vocabulary_mismatch(workspace, capsys):
    tmp, cfg = workspace
    assert main(["train", "--config", str(cfg)]) == 0
    other = tmp / "other.cfg"
    other.write_text(f"world.schema=production\nworld.image_size=20\nworld.corpus_size=10\n"
                     f"run.data={tmp / 'prod'}\n")
    assert main(["gen-data", "--config", str(other)]) == 0
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(tmp / "run" / "model.ckpt"), "--data", str(tmp / "prod")])
    err = capsys.readouterr().err
    assert code == 1
    meta = (tmp / "run" / "model.meta").read_text()
    saved = [l.split("=")[1] for l in meta.splitlines() if l.startswith("vocab_hash=")][0]
    assert "vocabulary mismatch" in err and saved in err


def test_numeric_abort_keeps_last_good_checkpoint(workspace, monkeypatch, capsys):
    tmp, cfg = workspace
    real = training.training_step
    calls = {"n": 0}

    def flaky(batch, model, opt):
        calls["n"] += 1
        if calls["n"] == 5:
            raise NumericError("injected non-finite loss")
        return real(batch, model, opt)

    saved = {}
    real_write = training.write_model

    def spy(out, model, cfg_, corpus):
        real_write(out, model, cfg_, corpus)
        saved["bytes"] = (out / "model.ckpt").read_bytes()
        saved["step"] = calls["n"]

    monkeypatch.setattr(training, "training_step", flaky)
    monkeypatch.setattr(training, "write_model", spy)
    assert main(["train", "--config", str(cfg)]) == 2
    assert saved["step"] == 3  # the eval at step 3 was the last save
    assert (tmp / "run" / "model.ckpt").read_bytes() == saved["bytes"]
    assert "abort step=5" in (tmp / "run" / "train.log").read_text()


def test_gradcheck_threshold_override(capsys):
    assert main(["gradcheck", "--scope", "ops"]) == 0
    assert main(["gradcheck", "--scope", "ops", "--threshold", "1e-15"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_ablate_single_arm(workspace, capsys):
    tmp, cfg = workspace
    cfg.write_text(cfg.read_text() + "run.arms=MV\nrun.seeds=3,4\n")
    assert main(["ablate", "--config", str(cfg), "--plot"]) == 0
    lines = (tmp / "run" / "ablation.tsv").read_text().splitlines()
    header = lines[0].split("\t")
    assert len(lines) == 2
    for key in ("BL-1", "BL-2", "BL-3", "BL-4", "RG-L"):
        assert f"{key}_mean" in header
    assert lines[1].split("\t")[:2] == ["MV", "3,4"]
    assert (tmp / "run" / "ablation.png").exists()


def test_ablate_refuses_empty_arm_list(workspace):
    tmp, cfg = workspace
    cfg.write_text(cfg.read_text() + "run.arms=\n")
    assert main(["ablate", "--config", str(cfg)]) == 1
