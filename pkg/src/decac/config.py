"""Run configuration: schema, validation, file loading, hashing, seeds.

A run is fully described by five blocks (environment, network, actor,
critic, consensus) plus a master seed, a replica count, and an output
directory.  The configuration hash is a sha256 over the canonical JSON
form, so key order in the source file never matters.  Replica RNG
streams are spawned from (seed, replica) pairs, which means adding
replicas never perturbs existing ones.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import ConfigError

REWARD_MODES = ("split", "global")
TOPOLOGIES = ("ring", "star", "complete", "erdos")


@dataclass(frozen=True)
class EnvBlock:
    n_agents: int = 2
    width: int = 13
    height: int = 5
    gamma: float = 0.99
    episode_len: int = 10
    reward_mode: str = "split"
    shift_rewards: bool = True


@dataclass(frozen=True)
class NetBlock:
    m: int = 20
    depth: int = 5
    radius: float = 5.0
    beta: float = 0.001


@dataclass(frozen=True)
class ActorBlock:
    rounds: int = 4000
    batch_len: int = 1
    alpha: float = 0.005
    signal: str = "td_error"
    td_sign: str = "conventional"
    score_cap: bool = False
    train_all: bool = False


@dataclass(frozen=True)
class CriticBlock:
    iters: int = 1
    warm_start: bool = False


@dataclass(frozen=True)
class ConsensusBlock:
    topology: str = "complete"
    t_gossip: int = 10
    erdos_p: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    env: EnvBlock = field(default_factory=EnvBlock)
    net: NetBlock = field(default_factory=NetBlock)
    actor: ActorBlock = field(default_factory=ActorBlock)
    critic: CriticBlock = field(default_factory=CriticBlock)
    consensus: ConsensusBlock = field(default_factory=ConsensusBlock)
    seed: int = 1234
    replicas: int = 20
    out_dir: str = "runs"


_BLOCKS = {
    "env": EnvBlock,
    "net": NetBlock,
    "actor": ActorBlock,
    "critic": CriticBlock,
    "consensus": ConsensusBlock,
}


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: RunConfig) -> RunConfig:
    """Field-level validation; raises ConfigError naming the bad field."""
    e, n, a, c, g = cfg.env, cfg.net, cfg.actor, cfg.critic, cfg.consensus
    _check(e.n_agents >= 1, f"env.n_agents must be >= 1, got {e.n_agents}")
    _check(e.width >= 1 and e.height >= 1,
           f"env.width/env.height must be >= 1, got {e.width}x{e.height}")
    _check(e.width * e.height >= e.n_agents,
           f"env grid has {e.width * e.height} cells for {e.n_agents} landmarks")
    _check(0.0 < e.gamma < 1.0, f"env.gamma must lie in (0,1), got {e.gamma}")
    _check(e.episode_len >= 0, f"env.episode_len must be >= 0, got {e.episode_len}")
    _check(e.reward_mode in REWARD_MODES,
           f"env.reward_mode must be one of {REWARD_MODES}, got {e.reward_mode!r}")
    _check(n.m >= 1, f"net.m must be >= 1, got {n.m}")
    _check(n.depth >= 1, f"net.depth must be >= 1, got {n.depth}")
    _check(n.radius > 0.0, f"net.radius must be positive, got {n.radius}")
    _check(n.beta > 0.0, f"net.beta must be positive, got {n.beta}")
    _check(a.rounds >= 1, f"actor.rounds must be >= 1, got {a.rounds}")
    _check(a.batch_len >= 1, f"actor.batch_len must be >= 1, got {a.batch_len}")
    _check(a.alpha > 0.0, f"actor.alpha must be positive, got {a.alpha}")
    _check(a.signal in ("td_error", "q_value"),
           f"actor.signal must be td_error or q_value, got {a.signal!r}")
    _check(a.td_sign in ("conventional", "verbatim"),
           f"actor.td_sign must be conventional or verbatim, got {a.td_sign!r}")
    _check(c.iters >= 1, f"critic.iters must be >= 1, got {c.iters}")
    _check(g.topology in TOPOLOGIES,
           f"consensus.topology must be one of {TOPOLOGIES}, got {g.topology!r}")
    _check(g.t_gossip >= 0, f"consensus.t_gossip must be >= 0, got {g.t_gossip}")
    _check(0.0 < g.erdos_p <= 1.0,
           f"consensus.erdos_p must lie in (0,1], got {g.erdos_p}")
    _check(cfg.replicas >= 1, f"replicas must be >= 1, got {cfg.replicas}")
    _check(g.topology != "star" or e.n_agents >= 2,
           "consensus.topology star needs env.n_agents >= 2")
    return cfg


def config_from_dict(raw: dict) -> RunConfig:
    """Build and validate a RunConfig from nested plain dicts.

    Unknown keys are rejected so a typo never silently falls back to a
    default.
    """
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a table, got {type(raw).__name__}")
    top_fields = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - top_fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict = {}
    for name, cls in _BLOCKS.items():
        block_raw = raw.get(name, {})
        if not isinstance(block_raw, dict):
            raise ConfigError(f"config section {name!r} must be a table")
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(block_raw) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            kwargs[name] = cls(**block_raw)
        except TypeError as exc:
            raise ConfigError(f"bad [{name}] section: {exc}") from exc
    for name in ("seed", "replicas", "out_dir"):
        if name in raw:
            kwargs[name] = raw[name]
    if not isinstance(kwargs.get("seed", 0), int):
        raise ConfigError(f"seed must be an integer, got {kwargs['seed']!r}")
    if not isinstance(kwargs.get("replicas", 1), int):
        raise ConfigError(f"replicas must be an integer, got {kwargs['replicas']!r}")
    return validate_config(RunConfig(**kwargs))


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path) -> RunConfig:
    """Read a TOML (default) or JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    else:
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(raw)


def config_hash(cfg: RunConfig) -> str:
    """sha256 over the canonical JSON form; stable under key reordering."""
    payload = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def apply_paper_scale(cfg: RunConfig) -> RunConfig:
    """Full-size settings: 20000 rounds, 100 replicas."""
    return dataclasses.replace(
        cfg,
        actor=dataclasses.replace(cfg.actor, rounds=20000),
        replicas=100,
    )


def replica_rngs(seed: int, replica: int) -> dict[str, np.random.Generator]:
    """Independent streams for one replica.

    The (seed, replica) entropy pair keys the spawn, so each replica's
    streams are fixed regardless of how many replicas run or in what
    order.  Children, in order: network initialization, trajectory,
    landmark placement.
    """
    root = np.random.SeedSequence((seed, replica))
    net, traj, land = root.spawn(3)
    return {
        "net_init": np.random.default_rng(net),
        "trajectory": np.random.default_rng(traj),
        "landmarks": np.random.default_rng(land),
    }
