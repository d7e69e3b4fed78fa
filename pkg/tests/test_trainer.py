import math

import numpy as np
import pytest

from weightrelay.envelope import seal, unseal
from weightrelay.errors import ConfigError, ProtocolError
from weightrelay.nn import init_params
from weightrelay.optim import LrSchedule
from weightrelay.protocol.messages import ErrorCode, Message, MsgType
from weightrelay.protocol.trainer import LocalTrainer, SntClient, write_accuracy_csv

from oracles import direct_loop

KEY = bytes(16)


def make(spec, shard, **kw):
    kw.setdefault("batch_size", 8)
    kw.setdefault("lr", LrSchedule.constant(0.05))
    kw.setdefault("seed", 11)
    kw.setdefault("dropout", False)
    return LocalTrainer(2, spec, shard, **kw)


def test_zero_local_epochs_returns_input(small_spec, small_shards):
    w = init_params(small_spec, 0)
    out = make(small_spec, small_shards[0], local_epochs=0).train_round(w, 3, 0)
    assert np.array_equal(out, w)


@pytest.mark.parametrize("local_epochs", [1, 3])
def test_matches_direct_loop(small_spec, small_shards, local_epochs):
    w = init_params(small_spec, 1)
    shard = small_shards[1]
    got = make(small_spec, shard, local_epochs=local_epochs).train_round(w, 5, 1)
    want = direct_loop(small_spec, shard, w, batch_size=8, lr=0.05, seed=11, trainer_id=2, round_index=5,
                       local_epochs=local_epochs)
    assert np.array_equal(got, want)


def test_ledger_length_and_replay(small_spec, small_shards):
    shard = small_shards[0]
    tr = make(small_spec, shard, local_epochs=2, record_ledger=True)
    out = tr.train_round(init_params(small_spec, 0), 0, 0)
    (lg,) = tr.ledgers
    assert len(lg) == 2 * math.ceil(len(shard) / 8)
    assert np.array_equal(lg.replay(), out) and np.array_equal(lg.w_final, out)


def test_max_batches_cap(small_spec, small_shards):
    tr = make(small_spec, small_shards[1], max_batches_per_round=2, record_ledger=True)
    tr.train_round(init_params(small_spec, 0), 0, 0)
    assert len(tr.ledgers[0]) == 2


def test_wrong_inputs(small_spec, small_shards):
    with pytest.raises(ConfigError):
        make(small_spec, small_shards[0], local_epochs=-1)
    with pytest.raises(ConfigError):
        make(small_spec, small_shards[0]).train_round(np.zeros(3), 0, 0)


def test_accuracy_history_and_csv(tmp_path, small_spec, small_shards):
    tr = make(small_spec, small_shards[0], test=small_shards[2])
    tr.train_round(init_params(small_spec, 0), 0, 0)
    (rec,) = tr.history
    assert 0 <= rec.train_acc <= 1 and rec.test_acc is not None
    write_accuracy_csv(tmp_path / "a.csv", tr.history)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "central_epoch,train_acc,test_acc,loss"


def test_client_round_trip(small_spec, small_shards):
    w = init_params(small_spec, 0)
    client = SntClient(make(small_spec, small_shards[0]), KEY, initial=w)
    start = client.start()
    assert [m.kind for m in start] == [MsgType.HELLO, MsgType.PUT_WEIGHTS]
    assert client.receive(Message.grant(0, 0))[0].kind == MsgType.GET_WEIGHTS
    put, rel = client.receive(Message.weights(seal(KEY, small_spec, w)))
    assert rel.kind == MsgType.TOKEN_RELEASE
    assert not np.array_equal(unseal(KEY, small_spec, put.payload), w)
    client.receive(Message.simple(MsgType.BYE))
    client.receive(Message.weights(put.payload))
    assert client.finished and client.final is not None


def test_client_surfaces_server_error(small_spec, small_shards):
    client = SntClient(make(small_spec, small_shards[0]), KEY)
    with pytest.raises(ProtocolError, match="already"):
        client.receive(Message.error(ErrorCode.DUPLICATE_ID, "already connected"))
