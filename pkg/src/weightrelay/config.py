"""INI run configuration shared by every process of a run.

Example::

    [run]
    topology = snt            ; snt | fnt
    schedule = round-robin    ; round-robin | random
    trainers = 5
    central_epochs = 20
    local_epochs = 1
    batch_size = 32
    lr = 0.05                 ; or 0-40:1e-3,41-60:1e-4
    optimizer = sgd           ; sgd | adam
    seed = 0

    [network]
    sizes = 784-128-10        ; or: preset = pima, or: spec_file = net.json

    [data]
    train = train.csv
    test = test.csv

    [server]
    address = 127.0.0.1:7000

    [peers]                   ; fnt only
    1 = 127.0.0.1:7101
    2 = 127.0.0.1:7102
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path

from .architectures import preset
from .data import Dataset, load_csv, load_idx, partition, standardize, stratified_split
from .errors import ConfigError
from .nn import NetworkSpec, mlp
from .optim import LrSchedule
from .protocol.simulate import SimConfig
from .protocol.transport import TlsConfig


def parse_address(text: str):
    host, sep, port = text.strip().rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"address {text!r} must look like host:port")
    return host or "127.0.0.1", int(port)


def _parse_dropouts(text):
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        pos, rate = part.split(":")
        out[int(pos)] = float(rate)
    return out


@dataclass
class RunConfig:
    topology: str = "snt"
    schedule: str = "round-robin"
    order: list | None = None
    trainers: int = 1
    central_epochs: int = 1
    local_epochs: int = 1
    batch_size: int = 32
    lr: LrSchedule = field(default_factory=lambda: LrSchedule.constant(0.01))
    optimizer: str = "sgd"
    adam_reset: bool = False
    seed: int = 0
    init_seed: int | None = None
    init_scheme: str = "glorot_uniform"
    dropout: bool = True
    max_batches_per_round: int | None = None
    token_timeout: float = 60.0
    spec: NetworkSpec | None = None
    data: dict = field(default_factory=dict)
    server: tuple | None = None
    peers: dict = field(default_factory=dict)
    tls: TlsConfig | None = None
    base_dir: Path = Path(".")

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_parser(parser, path.parent)

    @classmethod
    def from_parser(cls, p: configparser.ConfigParser, base_dir=Path(".")):
        cfg = cls(base_dir=Path(base_dir))
        try:
            if p.has_section("run"):
                r = p["run"]
                cfg.topology = r.get("topology", cfg.topology)
                cfg.schedule = r.get("schedule", cfg.schedule)
                if r.get("order"):
                    cfg.order = [int(x) for x in r["order"].split(",")]
                cfg.trainers = r.getint("trainers", cfg.trainers)
                cfg.central_epochs = r.getint("central_epochs", cfg.central_epochs)
                cfg.local_epochs = r.getint("local_epochs", cfg.local_epochs)
                cfg.batch_size = r.getint("batch_size", cfg.batch_size)
                if r.get("lr"):
                    cfg.lr = LrSchedule.parse(r["lr"])
                cfg.optimizer = r.get("optimizer", cfg.optimizer)
                cfg.adam_reset = r.getboolean("adam_reset", cfg.adam_reset)
                cfg.seed = r.getint("seed", cfg.seed)
                if r.get("init_seed"):
                    cfg.init_seed = r.getint("init_seed")
                cfg.init_scheme = r.get("init_scheme", cfg.init_scheme)
                cfg.dropout = r.getboolean("dropout", cfg.dropout)
                if r.get("max_batches_per_round"):
                    cfg.max_batches_per_round = r.getint("max_batches_per_round")
                cfg.token_timeout = r.getfloat("token_timeout", cfg.token_timeout)
            if p.has_section("network"):
                cfg.spec = cls._spec_from(p["network"], cfg.base_dir)
            if p.has_section("data"):
                cfg.data = dict(p["data"])
            if p.has_section("server") and p["server"].get("address"):
                cfg.server = parse_address(p["server"]["address"])
            if p.has_section("peers"):
                cfg.peers = {int(k): parse_address(v) for k, v in p["peers"].items()}
            if p.has_section("tls"):
                t = p["tls"]
                cfg.tls = TlsConfig(
                    str(cfg.resolve(t["ca"])), str(cfg.resolve(t["cert"])), str(cfg.resolve(t["key"])),
                    t.getboolean("check_hostname", True),
                )
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from exc
        cfg.validate()
        return cfg

    @staticmethod
    def _spec_from(sec, base_dir):
        if sec.get("preset"):
            return preset(sec["preset"])
        if sec.get("spec_file"):
            path = Path(sec["spec_file"])
            path = path if path.is_absolute() else base_dir / path
            try:
                return NetworkSpec.from_dict(json.loads(path.read_text()))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read network spec {path}: {exc}") from exc
        if sec.get("sizes"):
            sizes = [int(s) for s in sec["sizes"].replace(",", "-").split("-")]
            return mlp(sizes, sec.get("activation", "relu"), sec.get("loss"), _parse_dropouts(sec.get("dropouts", "")))
        raise ConfigError("[network] needs one of: preset, spec_file, sizes")

    def validate(self):
        if self.topology not in ("snt", "fnt"):
            raise ConfigError(f"topology must be snt or fnt, not {self.topology!r}")
        if self.schedule not in ("round-robin", "random"):
            raise ConfigError(f"schedule must be round-robin or random, not {self.schedule!r}")
        if self.trainers < 1:
            raise ConfigError("trainers must be >= 1")
        if self.order is not None and sorted(self.order) != list(range(1, self.trainers + 1)):
            raise ConfigError("order must be a permutation of 1..trainers")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, not {self.optimizer!r}")
        if self.batch_size < 1 or self.central_epochs < 0 or self.local_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epoch counts >= 0")
        if self.topology == "fnt" and self.peers and sorted(self.peers) != list(range(1, self.trainers + 1)):
            raise ConfigError("[peers] must list an address for every trainer id 1..trainers")

    def resolve(self, path):
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    def require_spec(self) -> NetworkSpec:
        if self.spec is None:
            raise ConfigError("config has no [network] section")
        return self.spec

    def _load(self, key_prefix):
        d = self.data
        fmt = d.get("format", "csv")
        if fmt == "csv":
            if not d.get(key_prefix):
                return None
            n_classes = int(d["n_classes"]) if d.get("n_classes") else None
            header = d.get("header", "false").lower() in ("1", "true", "yes", "on")
            return load_csv(self.resolve(d[key_prefix]), n_classes=n_classes, header=header)
        if fmt == "idx":
            imgs, labs = d.get(f"{key_prefix}_images"), d.get(f"{key_prefix}_labels")
            if not imgs:
                return None
            limit = int(d[f"{key_prefix}_limit"]) if d.get(f"{key_prefix}_limit") else None
            return load_idx(self.resolve(imgs), self.resolve(labs), limit=limit, seed=self.seed)
        raise ConfigError(f"unknown data format {fmt!r}")

    def datasets(self):
        """``(train, test)`` after the optional split and standardization; ``test`` may be None."""
        train = self._load("train")
        if train is None:
            raise ConfigError("[data] needs a training set")
        test = self._load("test")
        if test is None and self.data.get("test_fraction"):
            train, test = stratified_split(train, float(self.data["test_fraction"]), int(self.data.get("split_seed", self.seed)))
        if self.data.get("standardize", "false").lower() in ("1", "true", "yes", "on"):
            if test is None:
                (train,) = standardize(train)
            else:
                train, test = standardize(train, test)
        return train, test

    def shards(self, train: Dataset):
        return partition(train, self.trainers, int(self.data.get("partition_seed", self.seed))).shards(train)

    def sim_config(self, shards, test=None, **overrides) -> SimConfig:
        kw = dict(
            spec=self.require_spec(),
            shards=shards,
            topology=self.topology,
            schedule=self.schedule,
            order=self.order,
            central_epochs=self.central_epochs,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            optimizer=self.optimizer,
            adam_reset=self.adam_reset,
            seed=self.seed,
            init_seed=self.init_seed,
            init_scheme=self.init_scheme,
            dropout=self.dropout,
            max_batches_per_round=self.max_batches_per_round,
            test=test,
        )
        kw.update(overrides)
        return SimConfig(**kw)
