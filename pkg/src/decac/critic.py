"""Temporal-difference policy evaluation with consensus averaging.

Every agent runs projected TD steps on one shared transition stream
using its own reward channel, keeps a running (Polyak) average of its
iterates, and finally mixes the flattened averages over the
communication graph.  The centralized twin trains a single value stack
on the agent-mean reward; with one agent (or identical rewards) and a
paired random stream it reproduces the decentralized run bit for bit,
because both paths share the same update helper.

A TD error here is estimate minus target:

    delta = Qhat(x) - r - gamma * Qhat(x')

evaluated with the agent's own parameters on consecutive state-action
features from the shared chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .consensus import disagreement, gossip
from .envs import TabularMDP, TrainingChain
from .errors import ConfigError, DimensionError
from .nets import FCNet, flatten_mats, project_layers, unflatten_mats
from .oracle import stationary_restart


def td_error(net: FCNet, hidden: list[np.ndarray], x: np.ndarray, reward: float,
             x_next: np.ndarray, gamma: float) -> float:
    """Estimate-minus-target TD error for one transition."""
    return net.value(x, hidden) - reward - gamma * net.value(x_next, hidden)


@dataclass
class CriticState:
    """Per-agent evaluation parameters around one shared snapshot.

    The skeleton network owns the frozen input map and head; its
    snapshot is the ball center every projection pulls back to.  beta
    left unset resolves to 1/sqrt(iters) at run time.
    """

    net: FCNet
    hiddens: list[list[np.ndarray]]
    averages: list[list[np.ndarray]]
    radius: float = 5.0
    beta: float | None = None

    @property
    def n_agents(self) -> int:
        return len(self.hiddens)

    def reset(self) -> None:
        """Cold start: everyone back to the shared snapshot."""
        self.hiddens = [[w.copy() for w in self.net.snapshot] for _ in self.hiddens]
        self.averages = [[w.copy() for w in self.net.snapshot] for _ in self.averages]


def make_critic_state(net: FCNet, n_agents: int, radius: float = 5.0,
                      beta: float | None = None) -> CriticState:
    if n_agents < 1:
        raise ConfigError(f"need at least one agent, got {n_agents}")
    if radius <= 0.0:
        raise ConfigError(f"ball radius must be positive, got {radius}")
    hiddens = [[w.copy() for w in net.snapshot] for _ in range(n_agents)]
    averages = [[w.copy() for w in net.snapshot] for _ in range(n_agents)]
    return CriticState(net=net, hiddens=hiddens, averages=averages,
                       radius=radius, beta=beta)


@dataclass
class CriticRun:
    """Output of one evaluation phase."""

    hiddens_out: list[list[np.ndarray]]
    flat_out: np.ndarray
    handoff_state: object
    td_losses: np.ndarray
    ball_hits: int
    disagreement_before: float
    disagreement_after: float
    log_rows: list[dict] = field(default_factory=list)


def _td_step(net: FCNet, hidden: list[np.ndarray], x: np.ndarray, x_next: np.ndarray,
             reward: float, gamma: float, beta: float, snapshot: list[np.ndarray],
             radius: float):
    """One projected semi-gradient TD update; shared by both critics."""
    q1, grads = net.value_and_grad(x, hidden)
    q2 = net.value(x_next, hidden)
    delta = q1 - reward - gamma * q2
    moved = [w - (beta * delta) * g for w, g in zip(hidden, grads)]
    projected, hits = project_layers(moved, snapshot, radius)
    return projected, delta, any(hits)


def _blend_average(avg: list[np.ndarray], newest: list[np.ndarray], k: int) -> list[np.ndarray]:
    """Running average so that after k+1 updates avg = mean of iterates 0..k+1."""
    a = (k + 1.0) / (k + 2.0)
    b = 1.0 / (k + 2.0)
    return [a * w + b * v for w, v in zip(avg, newest)]


def run_decentralized_critic(team, chain: TrainingChain, state: CriticState,
                             iters: int, mix: np.ndarray, t_gossip: int,
                             encoder=None, collect_log: bool = False) -> CriticRun:
    """K projected TD iterations per agent on one shared chain, then gossip.

    Per iteration, in fixed draw order: the joint action at the current
    state (one uniform per agent), then the chain transition (restart
    coin, then the base draw).  Each agent updates with its own reward
    channel and running-averages its iterates; the flattened averages
    are mixed t_gossip rounds at the end.  Returns the mixed stacks and
    the state that started the last sampled transition, which is where
    the policy phase resumes.
    """
    if iters < 1:
        raise ConfigError(f"need at least one iteration, got {iters}")
    if encoder is None:
        from .envs import encoder_for
        encoder = encoder_for(chain.env)
    n = state.n_agents
    if mix.shape != (n, n):
        raise DimensionError(f"mixing matrix {mix.shape} for {n} agents")
    gamma = chain.env.gamma
    beta = state.beta if state.beta is not None else 1.0 / np.sqrt(iters)

    s = chain.state
    a = team.sample_joint(s, chain.rng)
    x = encoder.encode_pair(s, a)
    deltas = np.empty((iters, n))
    ball_hits = 0
    rows: list[dict] = []
    handoff = s
    for k in range(iters):
        handoff = s
        rewards, s2 = chain.step(a)
        a2 = team.sample_joint(s2, chain.rng)
        x2 = encoder.encode_pair(s2, a2)
        hit_any = False
        for i in range(n):
            new_hidden, delta, hit = _td_step(
                state.net, state.hiddens[i], x, x2, float(rewards[i]),
                gamma, beta, state.net.snapshot, state.radius,
            )
            state.hiddens[i] = new_hidden
            state.averages[i] = _blend_average(state.averages[i], new_hidden, k)
            deltas[k, i] = delta
            hit_any = hit_any or hit
        if hit_any:
            ball_hits += 1
        if collect_log:
            flat_now = np.stack([flatten_mats(h) for h in state.hiddens])
            rows.append({
                "k": k,
                "td_loss": [float(d * d) for d in deltas[k]],
                "ball_hit": bool(hit_any),
                "param_disagreement": disagreement(flat_now),
            })
        s, a, x = s2, a2, x2

    flat_avg = np.stack([flatten_mats(h) for h in state.averages])
    dis_before = disagreement(flat_avg)
    mixed = gossip(mix, flat_avg, t_gossip)
    dis_after = disagreement(mixed)
    hiddens_out = [unflatten_mats(mixed[i], state.net.snapshot) for i in range(n)]
    return CriticRun(
        hiddens_out=hiddens_out,
        flat_out=mixed,
        handoff_state=handoff,
        td_losses=(deltas ** 2),
        ball_hits=ball_hits,
        disagreement_before=dis_before,
        disagreement_after=dis_after,
        log_rows=rows,
    )


def run_centralized_critic(team, chain: TrainingChain, state: CriticState,
                           iters: int, encoder=None,
                           verbatim_offbyone: bool = False) -> CriticRun:
    """Single-stack twin trained on the agent-mean reward.

    Consumes random draws exactly like the decentralized run so the two
    can be paired on one seed.  verbatim_offbyone drops the final
    iteration, reproducing the centralized pseudocode's literal loop
    bound; the default matches the decentralized count so paired
    comparisons are like for like.
    """
    if iters < 1:
        raise ConfigError(f"need at least one iteration, got {iters}")
    if state.n_agents != 1:
        raise ConfigError("centralized critic trains a single stack")
    if encoder is None:
        from .envs import encoder_for
        encoder = encoder_for(chain.env)
    gamma = chain.env.gamma
    beta = state.beta if state.beta is not None else 1.0 / np.sqrt(iters)
    effective = iters - 1 if verbatim_offbyone else iters
    if effective < 1:
        raise ConfigError("verbatim loop bound leaves no iterations; need iters >= 2")

    s = chain.state
    a = team.sample_joint(s, chain.rng)
    x = encoder.encode_pair(s, a)
    deltas = np.empty((effective, 1))
    ball_hits = 0
    handoff = s
    for k in range(effective):
        handoff = s
        rewards, s2 = chain.step(a)
        a2 = team.sample_joint(s2, chain.rng)
        x2 = encoder.encode_pair(s2, a2)
        new_hidden, delta, hit = _td_step(
            state.net, state.hiddens[0], x, x2, float(np.mean(rewards)),
            gamma, beta, state.net.snapshot, state.radius,
        )
        state.hiddens[0] = new_hidden
        state.averages[0] = _blend_average(state.averages[0], new_hidden, k)
        deltas[k, 0] = delta
        if hit:
            ball_hits += 1
        s, a, x = s2, a2, x2

    flat_avg = np.stack([flatten_mats(state.averages[0])])
    return CriticRun(
        hiddens_out=[[w.copy() for w in state.averages[0]]],
        flat_out=flat_avg,
        handoff_state=handoff,
        td_losses=(deltas ** 2),
        ball_hits=ball_hits,
        disagreement_before=0.0,
        disagreement_after=0.0,
    )


# ---------------------------------------------------------------------------
# exact Bellman-error diagnostics (enumeration, small tabular problems only)


def q_table_from_net(net: FCNet, hidden: list[np.ndarray], mdp: TabularMDP,
                     encoder) -> np.ndarray:
    """Evaluate the value network on every (state, joint action) pair."""
    table = np.empty((mdp.n_states, mdp.n_joint_actions))
    for s in range(mdp.n_states):
        for a in range(mdp.n_joint_actions):
            x = encoder.encode_pair(s, mdp.local_actions(a))
            table[s, a] = net.value(x, hidden)
    return table


def exact_msbe(q_table: np.ndarray, mdp: TabularMDP, policy: np.ndarray) -> float:
    """Mean squared Bellman error of a Q table, exactly enumerated.

    The Bellman operator and the stationary weights both live on the
    restart chain, matching what TD training actually samples from.
    """
    q_table = np.asarray(q_table, dtype=float)
    if q_table.shape != (mdp.n_states, mdp.n_joint_actions):
        raise DimensionError(f"q table shape {q_table.shape}")
    policy = np.asarray(policy, dtype=float)
    nu = stationary_restart(mdp, policy)
    P_restart = mdp.restart_mdp().transition
    v_next = (policy * q_table).sum(axis=1)
    target = mdp.mean_rewards() + mdp.gamma * np.einsum("sat,t->sa", P_restart, v_next)
    weights = nu[:, None] * policy
    return float((weights * (q_table - target) ** 2).sum())


def exact_mspbe(net: FCNet, hidden: list[np.ndarray], mdp: TabularMDP,
                policy: np.ndarray, encoder) -> float:
    """Projected variant of exact_msbe for the locally linearized class.

    The function class is the snapshot-linearization
    {Q0(x) + grad_W Q0(x) . (W - W0)}; the Bellman image is projected
    onto it in the stationary-weighted least-squares sense before
    measuring the gap.
    """
    policy = np.asarray(policy, dtype=float)
    nu = stationary_restart(mdp, policy)
    S, A = mdp.n_states, mdp.n_joint_actions
    n_pairs = S * A
    feats = np.empty((n_pairs, net.n_hidden_params))
    q0 = np.empty(n_pairs)
    q_cur = np.empty(n_pairs)
    for s in range(S):
        for a in range(A):
            x = encoder.encode_pair(s, mdp.local_actions(a))
            k = s * A + a
            v0, g0 = net.value_and_grad(x, net.snapshot)
            feats[k] = flatten_mats(g0)
            q0[k] = v0
            q_cur[k] = net.value(x, hidden)

    q_table = q_cur.reshape(S, A)
    v_next = (policy * q_table).sum(axis=1)
    P_restart = mdp.restart_mdp().transition
    target = (mdp.mean_rewards() + mdp.gamma * np.einsum("sat,t->sa", P_restart, v_next)).ravel()
    weights = (nu[:, None] * policy).ravel()
    wsqrt = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(feats * wsqrt[:, None], (target - q0) * wsqrt, rcond=None)
    projected = q0 + feats @ coef
    return float((weights * (q_cur - projected) ** 2).sum())
