import numpy as np
import pytest

from weightrelay.analysis import centralized_oracle, check_equivalence
from weightrelay.errors import ConfigError
from weightrelay.optim import LrSchedule
from weightrelay.protocol.simulate import SimConfig, simulate

KEY = bytes(range(16))


def cfg(spec, shards, **kw):
    base = dict(central_epochs=2, batch_size=8, lr=0.05, seed=3, dropout=False, monitor=False, key=KEY)
    base.update(kw)
    return SimConfig(spec, shards, **base)


def test_repeat_runs_identical(small_spec, small_shards):
    a = simulate(cfg(small_spec, small_shards))
    b = simulate(cfg(small_spec, small_shards))
    assert np.array_equal(a.final, b.final) and a.schedule == b.schedule


def test_snt_and_fnt_agree(small_spec, small_shards):
    snt = simulate(cfg(small_spec, small_shards, topology="snt", dropout=True))
    fnt = simulate(cfg(small_spec, small_shards, topology="fnt", dropout=True))
    assert snt.schedule == fnt.schedule == [1, 2, 3, 1, 2, 3]
    assert np.array_equal(snt.final, fnt.final)
    assert (snt.channels, fnt.channels) == (3, 3)


@pytest.mark.parametrize("topology", ["snt", "fnt"])
def test_matches_centralized_oracle(small_spec, small_shards, topology):
    res = simulate(cfg(small_spec, small_shards, topology=topology, order=[2, 3, 1]))
    want = centralized_oracle(small_spec, small_shards, res.schedule, res.initial, batch_size=8,
                              lr=LrSchedule.constant(0.05), seed=3)
    assert check_equivalence(res.final, want) == 0.0


def test_single_trainer_is_centralized(small_spec, small_shards):
    res = simulate(cfg(small_spec, small_shards[:1], central_epochs=4))
    assert res.schedule == [1] * 4
    want = centralized_oracle(small_spec, small_shards[:1], res.schedule, res.initial, batch_size=8,
                              lr=LrSchedule.constant(0.05), seed=3)
    assert check_equivalence(res.final, want) == 0.0


@pytest.mark.parametrize("topology", ["snt", "fnt"])
def test_random_schedule_never_repeats(small_spec, small_shards, topology):
    res = simulate(cfg(small_spec, small_shards, topology=topology, schedule="random", central_epochs=5))
    assert len(res.schedule) == 15
    assert all(a != b for a, b in zip(res.schedule, res.schedule[1:]))


def test_server_sees_only_ciphertext(small_spec, small_shards):
    res = simulate(cfg(small_spec, small_shards))
    assert not any(b"WRLY" in f for f in res.server_frames)


def test_zero_epochs_returns_initial(small_spec, small_shards):
    for topology in ("snt", "fnt"):
        res = simulate(cfg(small_spec, small_shards, topology=topology, central_epochs=0))
        assert np.array_equal(res.final, res.initial)


def test_invalid_configs(small_spec, small_shards):
    with pytest.raises(ConfigError):
        simulate(cfg(small_spec, small_shards, topology="star"))
    with pytest.raises(ConfigError):
        simulate(cfg(small_spec, small_shards, order=[1, 1, 2]))
    with pytest.raises(ConfigError):
        simulate(cfg(small_spec, small_shards, batch_size=0))
