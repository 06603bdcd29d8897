"""Experiment driver: replica runs, sweeps, verification, plot data.

Each replica is built from (config, master seed, replica index) alone
and writes its own directory: a JSONL log with exactly one record per
episode, a JSON meta file carrying the config and its hash, and binary
checkpoints of the final networks.  Nothing in any output depends on
wall-clock time, so reruns are byte-identical.

A sweep varies exactly one axis of a base configuration, reruns every
cell over the same replica seeds, and leaves a tidy CSV for external
plotting.  The verify report runs fast independent checks of the core
math and is the first thing to consult when something looks off.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from . import consensus as cns
from .actor import NetTeam, train
from .config import RunConfig, config_hash, config_to_dict, replica_rngs
from .critic import make_critic_state, run_centralized_critic, run_decentralized_critic
from .envs import GridSpread, GridEncoder, TabularEncoder, TrainingChain, make_random_mdp
from .errors import ConfigError
from .nets import FCNet, flatten_mats, project_layer, save_net
from .oracle import (SoftmaxTeam, fd_net_gradient, fd_objective_gradient,
                     score_advantage_sum, stationary_visitation_gap)

RUNLOG_SCHEMA = 1
MA_WINDOW = 5

_GRAPH_TAG = 0x6772_6170  # fixed spawn tag for the shared communication graph

SWEEP_AXES = {
    "t_gossip": [0, 10, 20],
    "width": [10, 20, 40],
    "depth": [5, 20, 40],
    "n_agents": [2, 3, 4],
    "km": [(1, 1), (1, 5), (5, 1)],
    "signal": ["td_error", "q_value"],
}


# ---------------------------------------------------------------------------
# building and running one replica


def build_graph(cfg: RunConfig) -> cns.CommGraph:
    """Communication graph shared by every replica of a run."""
    n = cfg.env.n_agents
    kind = cfg.consensus.topology
    if kind == "ring":
        return cns.ring_graph(n)
    if kind == "star":
        return cns.star_graph(n)
    if kind == "complete":
        return cns.complete_graph(n)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _GRAPH_TAG)))
    return cns.erdos_graph(n, cfg.consensus.erdos_p, rng)


def build_replica(cfg: RunConfig, replica: int):
    """All components for one replica, in a fixed draw order.

    The network stream initializes the policy networks agent by agent,
    then the shared value network; changing the agent count therefore
    changes every draw after the first policy net, which is intended:
    a different team is a different experiment.
    """
    rngs = replica_rngs(cfg.seed, replica)
    env = GridSpread(
        n_agents=cfg.env.n_agents,
        rng=rngs["landmarks"],
        width=cfg.env.width,
        height=cfg.env.height,
        gamma=cfg.env.gamma,
        episode_len=cfg.env.episode_len,
        reward_mode=cfg.env.reward_mode,
        shift_rewards=cfg.env.shift_rewards,
    )
    encoder = GridEncoder(env)
    team = NetTeam.initialize(
        encoder, env.agent_actions, m=cfg.net.m, depth=cfg.net.depth,
        rng=rngs["net_init"], score_cap=cfg.actor.score_cap,
        train_all=cfg.actor.train_all,
    )
    value_net = FCNet.initialize(
        m=cfg.net.m, depth=cfg.net.depth, input_dim=encoder.pair_dim,
        rng=rngs["net_init"],
    )
    critic = make_critic_state(value_net, cfg.env.n_agents,
                               radius=cfg.net.radius, beta=cfg.net.beta)
    mix = cns.metropolis_weights(build_graph(cfg))
    chain = TrainingChain(env, rngs["trajectory"])
    return env, encoder, team, critic, mix, chain


def run_replica(cfg: RunConfig, replica: int):
    """Train one replica; returns (log, team, critic)."""
    env, encoder, team, critic, mix, chain = build_replica(cfg, replica)
    log = train(
        team, chain, critic, mix,
        rounds=cfg.actor.rounds,
        batch_len=cfg.actor.batch_len,
        critic_iters=cfg.critic.iters,
        alpha=cfg.actor.alpha,
        t_gossip=cfg.consensus.t_gossip,
        signal=cfg.actor.signal,
        td_sign=cfg.actor.td_sign,
        warm_start=cfg.critic.warm_start,
        encoder=encoder,
    )
    return log, team, critic


# ---------------------------------------------------------------------------
# log records and persistence


def episode_records(log) -> list[dict]:
    """One enriched record per episode.

    Round metrics are attributed to the episode that was open when the
    round started; each record carries the means over its rounds plus
    the worst step-norm deviation from the exact alpha / round law.
    """
    records = []
    prev_done = 0
    by_episode: dict[int, list[dict]] = {}
    for row in log.rounds:
        by_episode.setdefault(prev_done, []).append(row)
        prev_done = row["episodes_done"]
    for ep in log.episodes:
        rows = by_episode.get(ep["episode"], [])
        norm_err = 0.0
        skips = 0
        for r in rows:
            for v in r["step_norms"]:
                if v > 0.0:
                    norm_err = max(norm_err, abs(v - r["alpha"]))
                else:
                    skips += 1
        rec = {
            "record": "episode",
            "episode": ep["episode"],
            "steps": ep["steps"],
            "raw_reward_mean": ep["raw_reward_mean"],
            "raw_reward_sum": ep["raw_reward_sum"],
            "rounds": len(rows),
            "td_loss": _mean_of([np.mean(r["td_loss"]) for r in rows]),
            "param_disagreement": _mean_of([r["param_disagreement"] for r in rows]),
            "param_disagreement_mixed": _mean_of([r["param_disagreement_mixed"] for r in rows]),
            "td_disagreement": _mean_of([r["td_disagreement"] for r in rows]),
            "td_disagreement_mixed": _mean_of([r["td_disagreement_mixed"] for r in rows]),
            "step_norm_err": norm_err,
            "skips": skips,
        }
        records.append(rec)
    return records


def _mean_of(values) -> float:
    return float(np.mean(values)) if values else 0.0


def write_replica(cfg: RunConfig, replica: int, out_dir: Path) -> dict:
    """Run and persist one replica; returns its summary row."""
    rep_dir = out_dir / f"replica_{replica:03d}"
    rep_dir.mkdir(parents=True, exist_ok=True)
    log, team, critic = run_replica(cfg, replica)
    records = episode_records(log)
    h = config_hash(cfg)

    with open(rep_dir / "runlog.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
    meta = {
        "schema": RUNLOG_SCHEMA,
        "config": config_to_dict(cfg),
        "config_hash": h,
        "replica": replica,
        "episodes": len(records),
        "rounds": cfg.actor.rounds,
    }
    with open(rep_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for i, net in enumerate(team.nets):
        save_net(net, rep_dir / f"policy_{i}.bin", config_hash=h)
    save_net(critic.net, rep_dir / "value.bin", config_hash=h)

    rewards = np.array([r["raw_reward_mean"] for r in records])
    k = max(1, len(rewards) // 10)
    return {
        "replica": replica,
        "config_hash": h,
        "episodes": len(records),
        "steps": log.total_steps,
        "restarts": log.restart_events,
        "skips": log.skips,
        "first_window_mean": float(rewards[:k].mean()),
        "final_window_mean": float(rewards[-k:].mean()),
        "step_norm_err_max": max((r["step_norm_err"] for r in records), default=0.0),
    }


SUMMARY_FIELDS = ["replica", "config_hash", "episodes", "steps", "restarts",
                  "skips", "first_window_mean", "final_window_mean",
                  "step_norm_err_max"]


def run_training(cfg: RunConfig, out_dir: str | Path, jobs: int = 1) -> list[dict]:
    """All replicas of one configuration; returns the summary rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    replicas = list(range(cfg.replicas))
    if jobs > 1:
        import multiprocessing as mp

        with mp.Pool(jobs) as pool:
            rows = pool.starmap(write_replica,
                                [(cfg, r, out_dir) for r in replicas])
    else:
        rows = [write_replica(cfg, r, out_dir) for r in replicas]
    with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# sweeps


def sweep_cells(cfg: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    """(label, config) pairs for one ablation axis; only that axis varies."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}, expected one of {sorted(SWEEP_AXES)}")
    cells = []
    for value in SWEEP_AXES[axis]:
        if axis == "t_gossip":
            new = dataclasses.replace(
                cfg, consensus=dataclasses.replace(cfg.consensus, t_gossip=value))
            label = f"t_gossip={value}"
        elif axis == "width":
            new = dataclasses.replace(cfg, net=dataclasses.replace(cfg.net, m=value))
            label = f"m={value}"
        elif axis == "depth":
            new = dataclasses.replace(cfg, net=dataclasses.replace(cfg.net, depth=value))
            label = f"D={value}"
        elif axis == "n_agents":
            new = dataclasses.replace(cfg, env=dataclasses.replace(cfg.env, n_agents=value))
            label = f"N={value}"
        elif axis == "km":
            k, m_len = value
            new = dataclasses.replace(
                cfg,
                critic=dataclasses.replace(cfg.critic, iters=k),
                actor=dataclasses.replace(cfg.actor, batch_len=m_len),
            )
            label = f"K={k},M={m_len}"
        else:
            new = dataclasses.replace(cfg, actor=dataclasses.replace(cfg.actor, signal=value))
            label = f"signal={value}"
        cells.append((label, new))
    return cells


def run_sweep(cfg: RunConfig, axis: str, out_dir: str | Path,
              jobs: int = 1) -> list[dict]:
    """Run one ablation axis; returns one summary row per (cell, replica)."""
    out_dir = Path(out_dir)
    rows = []
    for label, cell_cfg in sweep_cells(cfg, axis):
        cell_dir = out_dir / label.replace("=", "_").replace(",", "_")
        cell_rows = run_training(cell_cfg, cell_dir, jobs=jobs)
        for row in cell_rows:
            row = dict(row)
            row["axis"] = axis
            row["cell"] = label
            rows.append(row)
    fields = ["axis", "cell"] + SUMMARY_FIELDS
    with open(out_dir / "sweep_summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# plot data


def moving_average(values, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean over up to `window` points, full-length output."""
    values = np.asarray(values, dtype=float)
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    sums = np.cumsum(values)
    out = np.empty_like(values)
    for i in range(values.size):
        lo = max(0, i - window + 1)
        out[i] = (sums[i] - (sums[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


def collect_plot_rows(log_paths, window: int = MA_WINDOW) -> list[dict]:
    """Tidy rows (one per episode per run) from runlog.jsonl files."""
    rows = []
    for path in sorted(str(p) for p in log_paths):
        path = Path(path)
        meta_path = path.parent / "meta.json"
        replica = -1
        cell = path.parent.parent.name
        if meta_path.exists():
            with open(meta_path, encoding="utf-8") as fh:
                meta = json.load(fh)
            replica = meta.get("replica", -1)
        with open(path, encoding="utf-8") as fh:
            episodes = [json.loads(line) for line in fh if line.strip()]
        rewards = [e["raw_reward_mean"] for e in episodes]
        ma = moving_average(rewards, window)
        for e, m in zip(episodes, ma):
            rows.append({
                "cell": cell,
                "replica": replica,
                "episode": e["episode"],
                "raw_reward": e["raw_reward_mean"],
                "moving_avg": float(m),
            })
    return rows


def write_plot_csv(rows: list[dict], out_path: str | Path) -> None:
    fields = ["cell", "replica", "episode", "raw_reward", "moving_avg"]
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# verification checklist


def verify_checks(corrupt_gradient: bool = False) -> list[tuple[str, bool, str]]:
    """Fast independent checks of the core math.

    corrupt_gradient perturbs the analytic network gradient before the
    comparison, a negative control proving the check can fail.
    """
    checks = []

    rng = np.random.default_rng(20240817)
    worst = 0.0
    for _ in range(10):
        net = FCNet.initialize(m=6, depth=3, input_dim=5, rng=rng)
        x = rng.normal(size=5)
        x /= np.linalg.norm(x)
        _, grads = net.value_and_grad(x)
        analytic = flatten_mats(grads)
        if corrupt_gradient:
            analytic = analytic + 0.01 * (1.0 + np.abs(analytic))
        fd = fd_net_gradient(net, x)
        denom = np.maximum(np.abs(fd), 1e-6)
        worst = max(worst, float(np.max(np.abs(analytic - fd) / denom)))
    checks.append(("network-gradient", worst < 1e-3,
                   f"max relative error {worst:.2e}"))

    worst = 0.0
    for _ in range(5):
        mdp = make_random_mdp(rng, n_states=4, agent_actions=(2, 2), gamma=0.9)
        team = SoftmaxTeam.random(rng, 4, (2, 2), scale=0.5)
        worst = max(worst, stationary_visitation_gap(mdp, team.joint_table()))
    checks.append(("restart-stationary", worst < 1e-8,
                   f"max identity gap {worst:.2e}"))

    ratios, cosines = [], []
    for _ in range(2):
        mdp = make_random_mdp(rng, n_states=3, agent_actions=(2,), gamma=0.7)
        team = SoftmaxTeam.random(rng, 3, (2,), scale=0.5)
        fd = fd_objective_gradient(mdp, team)
        exact = np.concatenate(
            [score_advantage_sum(mdp, team, i) for i in range(team.n_agents)])
        cos = float(fd @ exact / (np.linalg.norm(fd) * np.linalg.norm(exact)))
        ratio = float(np.linalg.norm(fd) / np.linalg.norm(exact))
        cosines.append(cos)
        ratios.append(ratio * (1.0 - mdp.gamma))
    ok = min(cosines) > 0.999 and max(abs(r - 1.0) for r in ratios) < 1e-3
    checks.append(("policy-gradient", ok,
                   f"min cosine {min(cosines):.6f}, ratio error {max(abs(r - 1.0) for r in ratios):.2e}"))

    ok = True
    detail = "idempotent and feasible over 200 samples"
    for _ in range(200):
        w0 = rng.normal(size=(4, 4))
        w = w0 + rng.normal(size=(4, 4)) * rng.uniform(0.0, 3.0)
        p1, _ = project_layer(w, w0, 1.5)
        p2, _ = project_layer(p1, w0, 1.5)
        if not np.array_equal(p1, p2) or np.linalg.norm(p1 - w0) > 1.5 + 1e-9:
            ok = False
            detail = "projection violated idempotence or feasibility"
            break
    checks.append(("projection", ok, detail))

    ok = True
    details = []
    for name, graph in (("ring", cns.ring_graph(4)), ("star", cns.star_graph(4)),
                        ("complete", cns.complete_graph(4))):
        A = cns.metropolis_weights(graph)
        eta = cns.validate_mixing(A, graph)
        bound = cns.consensus_rate_bound(eta, graph.n_agents) + 0.05
        measured = cns.measure_decay_ratio(A, np.random.default_rng(5))
        details.append(f"{name} {measured:.3f}<={bound:.3f}")
        if measured > bound:
            ok = False
    checks.append(("consensus-decay", ok, ", ".join(details)))

    mdp = make_random_mdp(np.random.default_rng(3), n_states=3,
                          agent_actions=(2,), gamma=0.8)
    team = SoftmaxTeam.random(np.random.default_rng(4), 3, (2,), scale=0.5)
    enc = TabularEncoder(mdp)
    outs = []
    for centralized in (False, True):
        net = FCNet.initialize(m=6, depth=2, input_dim=enc.pair_dim, seed=9)
        state = make_critic_state(net, 1, beta=0.05)
        chain = TrainingChain(mdp, np.random.default_rng(10))
        if centralized:
            out = run_centralized_critic(team, chain, state, iters=3, encoder=enc)
        else:
            mix = cns.metropolis_weights(cns.complete_graph(1))
            out = run_decentralized_critic(team, chain, state, iters=3,
                                           mix=mix, t_gossip=0, encoder=enc)
        outs.append(out.flat_out[0])
    ok = bool(np.array_equal(outs[0], outs[1]))
    checks.append(("single-agent-bridge", ok,
                   "bit-identical" if ok else "outputs differ"))

    return checks
