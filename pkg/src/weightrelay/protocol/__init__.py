"""Relay protocol: wire messages, server and trainer state machines, mesh
peers, transports and the in-process simulator."""

from .fnt import FntPeer, run_peer
from .messages import FrameDecoder, Message, MsgType, decode, encode
from .scheduler import RoundRobin, UniformRandom, make_scheduler
from .server import Event, RelayServerCore, serve
from .simulate import SimConfig, SimResult, simulate
from .trainer import AccuracyRecord, LocalTrainer, SntClient, run_snt_client
from .transport import Connection, TlsConfig

__all__ = [
    "AccuracyRecord", "Connection", "Event", "FntPeer", "FrameDecoder", "LocalTrainer", "Message",
    "MsgType", "RelayServerCore", "RoundRobin", "SimConfig", "SimResult", "SntClient", "TlsConfig",
    "UniformRandom", "decode", "encode", "make_scheduler", "run_peer", "run_snt_client", "serve", "simulate",
]
