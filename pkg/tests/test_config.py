import pytest

from ltgc.config import RunConfig, load_config
from ltgc.errors import ConfigError


def test_defaults_and_hash_stability():
    a, b = load_config(), load_config()
    assert a == RunConfig()
    assert a.hash() == b.hash() and len(a.hash()) == 64
    assert load_config(overrides={"seed": 1}).hash() != a.hash()


def test_toml_then_overrides(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('seed = 5\n[train]\nloss = "n3"\nepochs = 7\n[eval]\nregions = [2, 4]\n')
    cfg = load_config(str(p), {"train": {"epochs": 9, "lr": None}})
    assert cfg.seed == 5 and cfg.train.loss == "n3"
    assert cfg.train.epochs == 9 and cfg.train.lr == RunConfig().train.lr
    assert cfg.eval.regions == (2.0, 4.0)
    assert cfg.to_json()["eval"]["regions"] == [2.0, 4.0]


@pytest.mark.parametrize("text", [
    "bogus = 1\n",
    "[train]\nbogus = 1\n",
    "[train]\nepochs = 1.5\n",
    "[train]\nlr = \"fast\"\n",
    "[database]\nbinary = 1\n",
    "train = 3\n",
    "[train]\nloss = \"n9\"\n",
    "[scenario]\nlaunch_date = \"2005-13-40\"\n",
    "[homotopy]\nepsilon_final = 0.5\n",
    "workers = 0\n",
    "not toml [",
])
def test_invalid_files_are_rejected(tmp_path, text):
    p = tmp_path / "bad.toml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.toml")


def test_integers_are_accepted_as_floats():
    assert load_config(overrides={"train": {"lr": 1}}).train.lr == 1.0
