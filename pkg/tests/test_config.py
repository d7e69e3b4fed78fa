import json

import numpy as np
import pytest

from weightrelay.config import RunConfig, parse_address
from weightrelay.errors import ConfigError
from weightrelay.nn import param_count
from weightrelay.optim import LrSchedule, lr_at

from conftest import blobs


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_full_config(tmp_path):
    blobs(60, 4, 3, 0).to_csv(tmp_path / "train.csv")
    p = write(tmp_path, """
[run]
topology = fnt
schedule = random
trainers = 3
central_epochs = 4
batch_size = 16
lr = 0-1:0.1,2-3:0.01   ; piecewise
optimizer = adam
seed = 7

[network]
sizes = 4-8-3
dropouts = 1:0.25

[data]
train = train.csv
test_fraction = 0.25
standardize = true

[peers]
1 = 127.0.0.1:7101
2 = 127.0.0.1:7102
3 = :7103
""")
    cfg = RunConfig.from_file(p)
    assert (cfg.topology, cfg.schedule, cfg.trainers, cfg.optimizer) == ("fnt", "random", 3, "adam")
    assert lr_at(cfg.lr, 3) == 0.01
    assert param_count(cfg.spec) == 4 * 8 + 8 + 8 * 3 + 3
    assert cfg.peers[3] == ("127.0.0.1", 7103)
    train, test = cfg.datasets()
    assert len(train) + len(test) == 60 and len(test) in (15, 16)
    assert abs(train.X.mean()) < 1e-12
    shards = cfg.shards(train)
    sizes = [len(s) for s in shards]
    assert sum(sizes) == len(train) and max(sizes) - min(sizes) <= 1
    sim = cfg.sim_config(shards, test)
    assert sim.lr == cfg.lr and sim.seed == 7


def test_preset_and_spec_file(tmp_path):
    assert RunConfig.from_file(write(tmp_path, "[network]\npreset = pima\n")).spec is not None
    spec = RunConfig.from_file(write(tmp_path, "[network]\nsizes = 3-2\n")).spec
    (tmp_path / "net.json").write_text(json.dumps(spec.to_dict()))
    again = RunConfig.from_file(write(tmp_path, "[network]\nspec_file = net.json\n")).spec
    assert again == spec


@pytest.mark.parametrize("text", [
    "[run]\ntopology = ring\n",
    "[run]\ntrainers = 0\n",
    "[run]\noptimizer = lbfgs\n",
    "[run]\ntrainers = 2\norder = 1,3\n",
    "[run]\nbatch_size = many\n",
    "[run]\nlr = 1-5:0.1\n",
    "[network]\nactivation = relu\n",
    "[server]\naddress = nowhere\n",
    "[run]\ntopology = fnt\ntrainers = 2\n[peers]\n1 = :1\n",
    "not an ini file",
])
def test_bad_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        RunConfig.from_file(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "absent.ini")


def test_parse_address():
    assert parse_address("10.0.0.1:80") == ("10.0.0.1", 80)
    with pytest.raises(ConfigError):
        parse_address("10.0.0.1")


def test_defaults_are_constant_lr():
    assert RunConfig().lr == LrSchedule.constant(0.01)
    assert np.isfinite(RunConfig().token_timeout)
