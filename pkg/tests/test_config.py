import numpy as np
import pytest

from avid_acsm.config import TrainConfig, coerce, load_config, parse_kv, substream
from avid_acsm.errors import InvalidConfig


def test_defaults_are_consistent():
    cfg = TrainConfig().validate()
    assert cfg.capacity * (cfg.n_libraries - 1) == cfg.set_size == 504
    assert cfg.warmup_epochs == 100
    assert (cfg.tau, cfg.momentum) == (0.07, 0.9)


def test_parse_and_coerce():
    raw = parse_kv("# comment\nK = 252\nmining=random  # trailing\n\nclassifier-first=yes\n")
    assert coerce(raw) == {"set_size": 252, "mining": "random", "classifier_first": True}
    with pytest.raises(InvalidConfig):
        parse_kv("just words")
    with pytest.raises(InvalidConfig):
        coerce({"epochs": "many"})
    with pytest.raises(InvalidConfig):
        coerce({"nope": "1"})


@pytest.mark.parametrize("bad", [{"set_size": 500}, {"n_libraries": 1}, {"mining": "hard"},
                                 {"warmup_frac": 1.5}, {"tau": 0.0}, {"momentum": 1.0},
                                 {"library_mode": "stack"}, {"n_classes": 1}])
def test_validation_rejects(bad):
    with pytest.raises(InvalidConfig):
        TrainConfig().replace(**bad).validate()


def test_config_file_round_trip(tmp_path):
    cfg = TrainConfig(lr=3e-4, mining="random", classifier_first=True)
    path = tmp_path / "c.cfg"
    path.write_text("\n".join(cfg.to_lines()))
    assert load_config(path) == cfg
    assert load_config(path, {"K": "252"}).set_size == 252


def test_substreams_are_named_and_reproducible():
    a = substream(0, "data").random(4)
    np.testing.assert_array_equal(a, substream(0, "data").random(4))
    assert not np.array_equal(a, substream(0, "init").random(4))
    assert not np.array_equal(a, substream(1, "data").random(4))


def test_shipped_default_config_matches_dataclass():
    from pathlib import Path
    assert load_config(Path(__file__).parents[1] / "configs" / "default.cfg") == TrainConfig()
