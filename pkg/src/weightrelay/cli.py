"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 protocol error, 4 failed
verification.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .config import RunConfig, parse_address
from .data import load_csv, partition, stratified_split
from .envelope import keygen, read_key, serialize, write_key
from .errors import ConfigError, RelayError, VerificationError
from .ledger import dump_ledgers, load_ledgers
from .nn import evaluate
from .protocol.fnt import FntPeer, first_holder, run_peer
from .protocol.scheduler import make_scheduler
from .protocol.server import RelayServerCore, serve
from .protocol.simulate import simulate
from .protocol.trainer import SntClient, run_snt_client, write_accuracy_csv

log = logging.getLogger("weightrelay")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for name in ("schedule", "topology"):
        if getattr(args, name, None):
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "central_epochs", None) is not None:
        cfg.central_epochs = args.central_epochs
    if getattr(args, "local_epochs", None) is not None:
        cfg.local_epochs = args.local_epochs
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def cmd_server(args):
    cfg = _load_config(args)
    address = parse_address(args.bind) if args.bind else cfg.server
    if address is None:
        raise ConfigError("no bind address: pass --bind or set [server] address")
    ids = list(range(1, cfg.trainers + 1))
    scheduler = make_scheduler(cfg.schedule, ids, cfg.seed, cfg.order)
    seeder = cfg.order[0] if cfg.order else 1
    core = RelayServerCore(cfg.trainers, scheduler, cfg.central_epochs, seeder=seeder, token_timeout=cfg.token_timeout)
    serve(address, core, tls=cfg.tls, log_path=args.log)
    print(json.dumps({"rounds": core.round, "schedule": core.schedule}))
    return 0


def _trainer_data(cfg, args, tid):
    if args.shard:
        shard = load_csv(args.shard, n_classes=int(cfg.data["n_classes"]) if cfg.data.get("n_classes") else None)
        test = load_csv(args.test) if args.test else None
        return shard, test
    train, test = cfg.datasets()
    return cfg.shards(train)[tid - 1], test


def cmd_trainer(args):
    cfg = _load_config(args)
    tid = args.id
    if not 1 <= tid <= cfg.trainers:
        raise ConfigError(f"trainer id must be in 1..{cfg.trainers}")
    shard, test = _trainer_data(cfg, args, tid)
    shards = [shard] * cfg.trainers  # only this trainer's entry is used
    sim = cfg.sim_config(shards, test, record_ledger=bool(args.ledger_out))
    trainer = sim.make_trainer(tid)
    ids = list(range(1, cfg.trainers + 1))
    if cfg.topology == "snt":
        if not args.key_file:
            raise ConfigError("SNT trainers need --key-file")
        key = read_key(args.key_file)
        address = parse_address(args.server) if args.server else cfg.server
        if address is None:
            raise ConfigError("no server address: pass --server or set [server] address")
        seeder = cfg.order[0] if cfg.order else 1
        client = SntClient(trainer, key, sim.initial_weights() if tid == seeder else None)
        final = run_snt_client(address, client, tls=cfg.tls)
    else:
        if not cfg.peers:
            raise ConfigError("FNT trainers need a [peers] section")
        peer = FntPeer(trainer, ids, cfg.central_epochs * cfg.trainers, cfg.schedule, cfg.order, cfg.seed)
        start = sim.initial_weights() if tid == first_holder(ids, cfg.order) else None
        final = run_peer(peer, cfg.peers, initial=start, tls=cfg.tls)
    if args.accuracy_out:
        write_accuracy_csv(args.accuracy_out, trainer.history)
    if args.ledger_out:
        dump_ledgers(args.ledger_out, sim.spec, trainer.ledgers)
    if args.weights_out:
        Path(args.weights_out).write_bytes(serialize(sim.spec, final))
    return 0


def cmd_simulate(args):
    cfg = _load_config(args)
    train, test = cfg.datasets()
    sim = cfg.sim_config(cfg.shards(train), test, record_ledger=bool(args.ledger_out))
    result = simulate(sim)
    summary = {"topology": sim.topology, "rounds": len(result.schedule), "schedule": result.schedule}
    if test is not None:
        ev = evaluate(sim.spec, result.final, test)
        summary.update(test_accuracy=ev.accuracy, test_loss=ev.loss, f_score=ev.f_score)
    if args.weights_out:
        Path(args.weights_out).write_bytes(serialize(sim.spec, result.final))
    if args.accuracy_dir:
        out = Path(args.accuracy_dir)
        out.mkdir(parents=True, exist_ok=True)
        for tid, hist in result.histories.items():
            write_accuracy_csv(out / f"trainer_{tid}.csv", hist)
    if args.ledger_out:
        dump_ledgers(args.ledger_out, sim.spec, [lg for t in sorted(result.ledgers) for lg in result.ledgers[t]])
    print(json.dumps(summary))
    return 0


def cmd_verify(args):
    cfg = _load_config(args)
    if cfg.optimizer != "sgd":
        raise ConfigError("equivalence with centralized SGD only holds for the sgd optimizer")
    if cfg.local_epochs != 1:
        raise ConfigError("equivalence with centralized SGD needs local_epochs = 1")
    if cfg.max_batches_per_round is not None:
        raise ConfigError("equivalence needs every batch of every shard; unset max_batches_per_round")
    train, _ = cfg.datasets()
    shards = cfg.shards(train)
    report = {}
    ok = True
    for topology in ("snt", "fnt"):
        sim = cfg.sim_config(shards, None, topology=topology, monitor=False)
        res = simulate(sim)
        oracle = analysis.centralized_oracle(
            sim.spec, shards, res.schedule, res.initial, batch_size=sim.batch_size, lr=sim.lr, seed=sim.seed, dropout=sim.dropout
        )
        diff = analysis.check_equivalence(res.final, oracle)
        report[topology] = diff
        ok &= diff == 0.0
    print(json.dumps({"max_abs_diff": report, "equivalent": ok}))
    if not ok:
        raise VerificationError(f"relay weights differ from centralized SGD: {report}")
    return 0


def cmd_collusion(args):
    rows = []
    if args.table:
        for name, net, n, k in analysis.REFERENCE_PROFILES:
            rep = analysis.collusion_report(n, 128, k)
            rows.append((f"{name} ({net})", rep))
    else:
        if args.shard_size is None or args.central_epochs is None:
            raise ConfigError("pass --shard-size and --central-epochs, or --table")
        ledgers = None
        if args.ledger:
            if not args.config:
                raise ConfigError("--ledger needs --config for the network")
            spec = RunConfig.from_file(args.config).require_spec()
            ledgers = load_ledgers(args.ledger, spec)
            if args.trainer is not None:
                ledgers = [lg for lg in ledgers if lg.trainer == args.trainer]
        rep = analysis.collusion_report(args.shard_size, args.batch_size, args.central_epochs, ledgers, args.features)
        rows.append((f"trainer {args.trainer}" if args.trainer is not None else "honest trainer", rep))
    print(f"{'profile':<22}{'unknowns':>10}{'equations':>11}{'variables':>12}  verdict")
    for label, rep in rows:
        variables = "-" if rep.variables is None else str(rep.variables)
        print(f"{label:<22}{rep.unknowns:>10}{rep.equations:>11}{variables:>12}  {rep.verdict}")
        if rep.residuals:
            print(f"  per-round residuals: max {max(rep.residuals):.3e} over {len(rep.residuals)} rounds")
    return 0


_PROFILES = {"mnist-mlp": analysis.MNIST_MLP_PROFILE, "mnist-cnn": analysis.MNIST_CNN_PROFILE}


def cmd_estimate(args):
    if args.profile:
        prof = _PROFILES[args.profile]
        if args.n_epoch is not None or args.trainers is not None:
            prof = analysis.TimingProfile.uniform(
                args.trainers or prof.n_trainers, prof.sgd[0], prof.upload[0], prof.download[0],
                prof.encrypt[0], prof.decrypt[0], prof.n_epoch if args.n_epoch is None else args.n_epoch,
            )
    else:
        needed = (args.sgd, args.upload, args.download, args.encrypt, args.decrypt, args.n_epoch, args.trainers)
        if any(v is None for v in needed):
            raise ConfigError("pass --profile, or all of --sgd --upload --download --encrypt --decrypt --n-epoch --trainers")
        prof = analysis.TimingProfile.uniform(args.trainers, args.sgd, args.upload, args.download, args.encrypt, args.decrypt, args.n_epoch)
    total = analysis.estimate_time(prof)
    for term, secs in prof.breakdown().items():
        print(f"{term:<10}{secs:>14.2f} s")
    print(f"{'total':<10}{total:>14.2f} s = {total / 60:.2f} min")
    return 0


def cmd_partition(args):
    ds = load_csv(args.input, header=args.header)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.test_fraction:
        ds, test = stratified_split(ds, args.test_fraction, args.seed)
        test.to_csv(out / "test.csv")
    plan = partition(ds, args.L, args.seed)
    for i, shard in enumerate(plan.shards(ds), start=1):
        shard.to_csv(out / f"shard_{i}.csv")
    print(json.dumps({"shards": [len(a) for a in plan.assignment]}))
    return 0


def cmd_keygen(args):
    write_key(args.out, keygen())
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="weightrelay", description="Collaborative training by relaying weights.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--central-epochs", type=int)

    s = sub.add_parser("server", help="run the relay server")
    common(s)
    s.add_argument("--bind")
    s.add_argument("--schedule", choices=["round-robin", "random"])
    s.add_argument("--log", help="event log (JSON lines, ciphertext digests only)")
    s.set_defaults(func=cmd_server)

    t = sub.add_parser("trainer", help="run one trainer")
    common(t)
    t.add_argument("--id", type=int, required=True)
    t.add_argument("--shard", help="CSV holding this trainer's rows")
    t.add_argument("--test", help="CSV test set for accuracy monitoring")
    t.add_argument("--key-file")
    t.add_argument("--server")
    t.add_argument("--local-epochs", type=int)
    t.add_argument("--ledger-out")
    t.add_argument("--accuracy-out")
    t.add_argument("--weights-out")
    t.set_defaults(func=cmd_trainer)

    m = sub.add_parser("simulate", help="run a whole relay in-process")
    common(m)
    m.add_argument("--topology", choices=["snt", "fnt"])
    m.add_argument("--schedule", choices=["round-robin", "random"])
    m.add_argument("--local-epochs", type=int)
    m.add_argument("--weights-out")
    m.add_argument("--accuracy-dir")
    m.add_argument("--ledger-out")
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify-equivalence", help="compare relay weights with centralized SGD")
    common(v)
    v.add_argument("--schedule", choices=["round-robin", "random"])
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("analyze-collusion", help="equation/unknown accounting for colluding trainers")
    c.add_argument("--config")
    c.add_argument("--table", action="store_true", help="report the reference dataset profiles")
    c.add_argument("--shard-size", type=int)
    c.add_argument("--batch-size", type=int, default=128)
    c.add_argument("--central-epochs", type=int)
    c.add_argument("--features", type=int)
    c.add_argument("--ledger")
    c.add_argument("--trainer", type=int)
    c.set_defaults(func=cmd_collusion)

    e = sub.add_parser("estimate-time", help="running-time model")
    e.add_argument("--profile", choices=sorted(_PROFILES))
    for name in ("sgd", "upload", "download", "encrypt", "decrypt"):
        e.add_argument(f"--{name}", type=float, help="seconds per trainer per round")
    e.add_argument("--n-epoch", type=int)
    e.add_argument("--trainers", type=int)
    e.set_defaults(func=cmd_estimate)

    pa = sub.add_parser("partition", help="split a CSV into trainer shards")
    pa.add_argument("--input", required=True)
    pa.add_argument("--L", type=int, required=True)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out-dir", required=True)
    pa.add_argument("--header", action="store_true")
    pa.add_argument("--test-fraction", type=float)
    pa.set_defaults(func=cmd_partition)

    k = sub.add_parser("keygen", help="write a fresh shared AES-128 key")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_keygen)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RelayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
