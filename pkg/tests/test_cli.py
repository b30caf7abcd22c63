import json
import math

import pytest

from avid_acsm.cli import main, parse_overrides
from avid_acsm.errors import AcsmError, InvalidSweepKey
from avid_acsm.experiments import read_jsonl, read_sweep_table, run_sweep
from avid_acsm.config import TrainConfig

TINY = """\
# tiny run for interface tests
n_samples=120
n_classes=4
latent_dim=8
C=4
K=24
epochs=2
batch_size=40
probe_every=0
probe_steps=40
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def config_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert run("train", "--config", missing, "--out-dir", tmp_path / "o") != 0
    err = capsys.readouterr().err
    assert str(missing) in err and len(err.strip().splitlines()) == 1


def test_bad_override_is_rejected(cfg_path, tmp_path, capsys):
    assert run("train", "--config", cfg_path, "--out-dir", tmp_path / "o", "--K=25") != 0
    assert "divisible" in capsys.readouterr().err
    assert run("train", "--config", cfg_path, "--out-dir", tmp_path / "o", "--bogus", "1") != 0


def test_manifests_differ_only_in_mining(cfg_path, tmp_path):
    for mode in ("acsm", "random"):
        assert run("train", "--config", cfg_path, "--out-dir", tmp_path / mode,
                   "--mining", mode) == 0
    a = config_lines(tmp_path / "acsm" / "manifest.txt")
    b = config_lines(tmp_path / "random" / "manifest.txt")
    assert [(x, y) for x, y in zip(a, b) if x != y] == [("mining=acsm", "mining=random")]


def test_same_seed_gives_identical_metrics(cfg_path, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--config", cfg_path, "--seed", 7, "--out-dir", tmp_path / name) == 0
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert len(a.splitlines()) == 2
    rec = json.loads(a.splitlines()[0])
    for key in ("epoch", "loss_v2a", "loss_a2v", "faulty_neg_rate", "classifier_agreement",
                "purity", "nmi", "probe_acc"):
        assert key in rec


def test_manifest_reproduces_run(cfg_path, tmp_path):
    assert run("train", "--config", cfg_path, "--seed", 3, "--out-dir", tmp_path / "a") == 0
    assert run("train", "--config", tmp_path / "a" / "manifest.txt",
               "--out-dir", tmp_path / "b") == 0
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == \
        (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_eval_dimension_mismatch_names_both(cfg_path, tmp_path, capsys):
    run("train", "--config", cfg_path, "--out-dir", tmp_path / "a")
    run("train", "--config", cfg_path, "--out-dir", tmp_path / "b", "--dim_v=12")
    assert run("eval", "--checkpoint", tmp_path / "a" / "checkpoint.json",
               "--dataset", tmp_path / "b" / "dataset.tsv") != 0
    err = capsys.readouterr().err
    assert "v=32" in err and "v=12" in err


def test_eval_missing_artifact(tmp_path, capsys):
    assert run("eval", "--checkpoint", tmp_path / "x.json", "--dataset", tmp_path / "y") != 0
    assert "x.json" in capsys.readouterr().err


def test_eval_twice_is_identical(cfg_path, tmp_path):
    run("train", "--config", cfg_path, "--out-dir", tmp_path / "a")
    for _ in range(2):
        assert run("eval", "--checkpoint", tmp_path / "a" / "checkpoint.json",
                   "--dataset", tmp_path / "a" / "dataset.tsv", "--seed", 5,
                   "--out-dir", tmp_path / "e") == 0
    first, second = (tmp_path / "e" / "eval.jsonl").read_text().splitlines()
    assert first == second


def test_untrained_checkpoint_shuffle_control_is_at_chance(cfg_path, tmp_path):
    out = tmp_path / "u"
    assert run("train", "--config", cfg_path, "--out-dir", out, "--epochs", 0,
               "--n_samples", 1000, "--probe_steps", 300) == 0
    assert run("eval", "--checkpoint", out / "checkpoint.json",
               "--dataset", out / "dataset.tsv", "--out-dir", out) == 0
    rec = read_jsonl(out / "eval.jsonl")[0]
    n_test = 200
    sigma = math.sqrt(rec["chance"] * (1 - rec["chance"]) / n_test)
    assert abs(rec["shuffle_probe_acc"] - rec["chance"]) < 3 * sigma


def test_single_value_sweep_equals_train_plus_eval(cfg_path, tmp_path):
    assert run("sweep", "--config", cfg_path, "--key", "mining", "--values", "random",
               "--seeds", 1, "--out-dir", tmp_path / "s") == 0
    run("train", "--config", cfg_path, "--mining", "random", "--out-dir", tmp_path / "t")
    run("eval", "--checkpoint", tmp_path / "t" / "checkpoint.json",
        "--dataset", tmp_path / "t" / "dataset.tsv", "--out-dir", tmp_path / "t")
    swept = tmp_path / "s" / "mining=random" / "seed=0"
    for name in ("metrics.jsonl", "eval.jsonl", "dataset.tsv"):
        assert (swept / name).read_bytes() == (tmp_path / "t" / name).read_bytes()
    rows = read_sweep_table(tmp_path / "s" / "sweep.tsv")
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    assert rows[0]["mean_probe_acc"] == read_jsonl(swept / "eval.jsonl")[0]["probe_acc"]


def test_sweep_records_invalid_values(cfg_path, tmp_path):
    assert run("sweep", "--config", cfg_path, "--key", "K", "--values", "24,25",
               "--seeds", 1, "--out-dir", tmp_path / "s") == 0
    rows = {r["K"]: r for r in read_sweep_table(tmp_path / "s" / "sweep.tsv")}
    assert rows["24"]["status"] == "ok"
    assert rows["25"]["status"].startswith("error") and math.isnan(rows["25"]["mean_probe_acc"])
    assert not (tmp_path / "s" / "K=25").exists()


def test_sweep_key_must_be_known(tmp_path, capsys):
    with pytest.raises(InvalidSweepKey):
        run_sweep(TrainConfig(), "tau", ["0.1"], tmp_path)
    assert run("sweep", "--key", "tau", "--values", "0.1", "--out-dir", tmp_path) != 0
    assert "sweep key" in capsys.readouterr().err


def test_override_parsing():
    assert parse_overrides(["--K=252", "--mining", "random"]) == {"K": "252", "mining": "random"}
    with pytest.raises(AcsmError):
        parse_overrides(["--K"])
    with pytest.raises(AcsmError):
        parse_overrides(["stray"])
