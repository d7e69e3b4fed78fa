import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weightrelay.analysis import (
    MNIST_CNN_PROFILE,
    MNIST_MLP_PROFILE,
    REFERENCE_PROFILES,
    TimingProfile,
    centralized_oracle,
    check_equivalence,
    collusion_report,
    connection_count,
    estimate_time,
    telescoping_check,
)
from weightrelay.errors import BlobError, ConfigError
from weightrelay.ledger import RunLedger, dump_ledgers, load_ledgers, merge
from weightrelay.nn import init_params
from weightrelay.optim import LrSchedule
from weightrelay.protocol.simulate import SimConfig, simulate

LR = LrSchedule.constant(0.05)


def test_order_of_shards_matters(small_spec, small_shards):
    w = init_params(small_spec, 0)
    a = centralized_oracle(small_spec, small_shards, [1, 2, 3], w, batch_size=8, lr=LR, seed=0)
    b = centralized_oracle(small_spec, small_shards, [3, 2, 1], w, batch_size=8, lr=LR, seed=0)
    assert check_equivalence(a, b) > 0


def test_tiny_perturbation_reported(small_spec):
    w = init_params(small_spec, 0)
    v = w.copy()
    v[4] += 1e-9
    assert 0 < check_equivalence(w, v) <= 1.1e-9
    with pytest.raises(ValueError):
        check_equivalence(w, w[:-1])


def test_oracle_rejects_unknown_trainer(small_spec, small_shards):
    with pytest.raises(ConfigError):
        centralized_oracle(small_spec, small_shards, [4], init_params(small_spec, 0), batch_size=8, lr=LR, seed=0)


def test_telescoping_zero_gradients():
    lg = RunLedger(np.ones(3))
    for _ in range(5):
        lg.record(0.1, np.zeros(3), 0)
    lg.close(np.ones(3))
    assert telescoping_check(lg) == 0.0


def test_telescoping_fails_for_adam(small_spec, small_shards):
    res = simulate(SimConfig(small_spec, small_shards, central_epochs=1, batch_size=8, lr=0.01, optimizer="adam",
                             dropout=False, monitor=False, record_ledger=True, key=bytes(16)))
    assert max(telescoping_check(lg) for lgs in res.ledgers.values() for lg in lgs) > 1e-6


def test_sgd_ledgers_telescope(small_spec, small_shards):
    res = simulate(SimConfig(small_spec, small_shards, central_epochs=2, batch_size=4, lr=0.05, monitor=False,
                             record_ledger=True, key=bytes(16)))
    for lgs in res.ledgers.values():
        assert max(telescoping_check(lg) for lg in lgs) < 1e-9
        assert telescoping_check(merge(lgs)) > 0 or len(lgs) == 1  # rounds are not contiguous


def test_collusion_boundary():
    assert collusion_report(5, 1, 5).verdict == "determined"
    assert collusion_report(6, 1, 5).verdict == "underdetermined"
    rep = collusion_report(30, 128, 20, n_features=8)
    assert rep.variables == 240 and rep.steps_per_round == 1


def test_all_tabulated_settings_underdetermined():
    assert len(REFERENCE_PROFILES) == 11
    for _, _, n, epochs in REFERENCE_PROFILES:
        assert collusion_report(n, 128, epochs).verdict == "underdetermined"


def test_collusion_needs_every_epoch_tagged(small_spec, small_shards):
    res = simulate(SimConfig(small_spec, small_shards, central_epochs=2, batch_size=8, monitor=False,
                             record_ledger=True, key=bytes(16)))
    lgs = res.ledgers[2]
    rep = collusion_report(len(small_shards[1]), 8, 2, lgs)
    assert len(rep.residuals) == 2 and max(rep.residuals) < 1e-9
    with pytest.raises(ConfigError, match="epoch"):
        collusion_report(len(small_shards[1]), 8, 2, lgs[:1])


def test_timing_presets():
    assert estimate_time(MNIST_MLP_PROFILE) == pytest.approx(58404.6, abs=1e-6)
    assert estimate_time(MNIST_MLP_PROFILE) / 60 == pytest.approx(973.41, abs=1e-6)
    assert estimate_time(MNIST_CNN_PROFILE) == pytest.approx(3466.28, abs=1e-6)


def test_zero_epochs_costs_nothing():
    assert estimate_time(TimingProfile.uniform(5, 1, 1, 1, 1, 1, 0)) == 0


@given(st.lists(st.tuples(*[st.floats(0, 100)] * 5), min_size=1, max_size=6), st.integers(0, 1000))
def test_time_is_additive_over_terms_and_linear_in_epochs(rows, n):
    cols = list(zip(*rows))
    prof = TimingProfile(*cols, n_epoch=n)
    assert estimate_time(prof) == pytest.approx(sum(prof.breakdown().values()), rel=1e-12, abs=1e-9)
    double = TimingProfile(*cols, n_epoch=2 * n)
    assert estimate_time(double) == pytest.approx(2 * estimate_time(prof), rel=1e-12, abs=1e-9)


def test_bad_profiles():
    with pytest.raises(ConfigError):
        TimingProfile((1,), (1,), (1,), (1,), (-1,), 3)
    with pytest.raises(ConfigError):
        TimingProfile((1, 2), (1,), (1,), (1,), (1,), 3)


@pytest.mark.parametrize("L,snt,fnt", [(1, 1, 0), (2, 2, 1), (5, 5, 10), (20, 20, 190)])
def test_connection_counts(L, snt, fnt):
    assert connection_count("snt", L) == snt and connection_count("FNT", L) == fnt


def test_ledger_file_roundtrip(tmp_path, small_spec, small_shards):
    res = simulate(SimConfig(small_spec, small_shards, central_epochs=1, batch_size=8, monitor=False,
                             record_ledger=True, key=bytes(16)))
    lgs = [lg for t in sorted(res.ledgers) for lg in res.ledgers[t]]
    dump_ledgers(tmp_path / "l.bin", small_spec, lgs)
    back = load_ledgers(tmp_path / "l.bin", small_spec)
    assert [(lg.trainer, lg.round, len(lg)) for lg in back] == [(lg.trainer, lg.round, len(lg)) for lg in lgs]
    assert all(np.array_equal(a.replay(), b.replay()) for a, b in zip(back, lgs))
    raw = (tmp_path / "l.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(BlobError):
        load_ledgers(tmp_path / "t.bin", small_spec)
    (tmp_path / "x.bin").write_bytes(raw + b"\0")
    with pytest.raises(BlobError):
        load_ledgers(tmp_path / "x.bin", small_spec)
