"""Policy training: batch collection, TD-error mixing, normalized ascent.

The outer loop alternates a policy-evaluation phase (see critic) with a
policy-update phase on one continuous restart chain.  Each round, every
agent scores its own local actions over a short Markov batch, weights
the scores with mixed TD errors (or with its own action values, the
ablation variant), and takes a normalized step of exactly alpha / round
along the weighted average.  Skips and non-finite directions are
handled explicitly so a run either completes with a full audit trail or
aborts naming the round that failed.

Sign convention: the raw TD error is estimate minus target, so the
standard reward-ascent direction needs the weight negated.  The default
does that; td_sign="verbatim" keeps the raw weight for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consensus import disagreement, gossip
from .critic import CriticState, run_decentralized_critic
from .envs import TrainingChain, encoder_for
from .errors import ConfigError, DimensionError, InternalError
from .nets import FCNet

DIRECTION_SIGNALS = ("td_error", "q_value")
TD_SIGNS = ("conventional", "verbatim")
SKIP_NORM = 1e-12


class NetTeam:
    """Per-agent softmax policy networks over shared state features.

    Action draws, scores, and parameter updates are all keyed by agent
    index; sampling one joint action consumes exactly one uniform per
    agent, in agent order, which keeps paired runs aligned.
    """

    def __init__(self, nets: list[FCNet], encoder, score_cap: bool = False,
                 train_all: bool = False):
        if not nets:
            raise ConfigError("team needs at least one policy network")
        for net in nets:
            if net.input_dim != encoder.state_dim:
                raise DimensionError(
                    f"policy input dim {net.input_dim}, encoder gives {encoder.state_dim}")
        self.nets = nets
        self.encoder = encoder
        self.score_cap = score_cap
        self.train_all = train_all

    @classmethod
    def initialize(cls, encoder, action_counts, m: int, depth: int,
                   rng: np.random.Generator, score_cap: bool = False,
                   train_all: bool = False) -> "NetTeam":
        nets = [FCNet.initialize(m=m, depth=depth, input_dim=encoder.state_dim,
                                 head_rows=int(k), rng=rng)
                for k in action_counts]
        return cls(nets, encoder, score_cap=score_cap, train_all=train_all)

    @property
    def n_agents(self) -> int:
        return len(self.nets)

    def probs(self, i: int, state) -> np.ndarray:
        return self.nets[i].probs(self.encoder.encode_state(state))

    def sample_joint(self, state, rng: np.random.Generator) -> tuple[int, ...]:
        x = self.encoder.encode_state(state)
        return tuple(net.sample_action(x, rng) for net in self.nets)

    def score(self, i: int, state, action: int) -> np.ndarray:
        """Flat gradient of log pi_i(action | state) in trainable order."""
        x = self.encoder.encode_state(state)
        return self.nets[i].log_prob_grad(x, action, cap=self.score_cap,
                                          train_all=self.train_all)

    def flat(self, i: int) -> np.ndarray:
        return self.nets[i].train_flat(self.train_all)

    def add_flat(self, i: int, delta: np.ndarray) -> None:
        self.nets[i].add_train_flat(delta, self.train_all)


@dataclass
class ActorBatch:
    """One Markov batch: M transitions with per-agent scores and signals.

    Column i of both matrices belongs to agent i; its TD errors are
    computed with agent i's own evaluation stack.
    """

    td: np.ndarray
    q: np.ndarray
    scores: list[np.ndarray]
    end_state: object


def collect_batch(team: NetTeam, chain: TrainingChain, value_net: FCNet,
                  value_stacks: list[list[np.ndarray]], batch_len: int,
                  encoder=None) -> ActorBatch:
    """Run batch_len chain steps under the current policies.

    Starts from the chain's current state with a fresh joint action.
    Action values at the shared next features are computed once per
    agent and reused as the following step's current values, since the
    evaluation stacks are fixed for the whole batch.
    """
    if batch_len < 1:
        raise ConfigError(f"batch length must be positive, got {batch_len}")
    if encoder is None:
        encoder = encoder_for(chain.env)
    n = team.n_agents
    if len(value_stacks) != n:
        raise DimensionError(f"{len(value_stacks)} value stacks for {n} agents")
    gamma = chain.env.gamma

    s = chain.state
    a = team.sample_joint(s, chain.rng)
    x = encoder.encode_pair(s, a)
    q_cur = np.array([value_net.value(x, value_stacks[i]) for i in range(n)])
    td = np.empty((batch_len, n))
    q = np.empty((batch_len, n))
    scores = [np.empty((batch_len, team.flat(i).size)) for i in range(n)]
    for m in range(batch_len):
        for i in range(n):
            scores[i][m] = team.score(i, s, a[i])
        rewards, s2 = chain.step(a)
        a2 = team.sample_joint(s2, chain.rng)
        x2 = encoder.encode_pair(s2, a2)
        q_next = np.array([value_net.value(x2, value_stacks[i]) for i in range(n)])
        td[m] = q_cur - rewards - gamma * q_next
        q[m] = q_cur
        s, a, q_cur = s2, a2, q_next
    return ActorBatch(td=td, q=q, scores=scores, end_state=chain.state)


def gossip_td(mix: np.ndarray, td: np.ndarray, rounds: int) -> np.ndarray:
    """Mix the TD matrix across agents; column i is agent i's view.

    Rows index batch steps, columns index agents, so mixing acts on the
    transpose.  rounds=0 returns a copy (every agent keeps its own
    errors); as rounds grows each column approaches the row means.
    """
    if td.ndim != 2 or mix.shape != (td.shape[1], td.shape[1]):
        raise DimensionError(f"td {td.shape} against mixing {mix.shape}")
    return gossip(mix, td.T, rounds).T


def direction(weights: np.ndarray, scores: np.ndarray,
              signal: str = "td_error", td_sign: str = "conventional") -> np.ndarray:
    """Average weighted score direction for one agent.

    weights holds the per-step scalars: mixed TD errors for the
    td_error signal, the agent's own action values for q_value.  The
    conventional sign negates TD-error weights so the step ascends
    reward; q_value weights are used as given.
    """
    if signal not in DIRECTION_SIGNALS:
        raise ConfigError(f"direction signal {signal!r}, expected one of {DIRECTION_SIGNALS}")
    if td_sign not in TD_SIGNS:
        raise ConfigError(f"td sign {td_sign!r}, expected one of {TD_SIGNS}")
    weights = np.asarray(weights, dtype=float)
    if scores.ndim != 2 or weights.shape != (scores.shape[0],):
        raise DimensionError(f"weights {weights.shape} against scores {scores.shape}")
    c = -1.0 if (signal == "td_error" and td_sign == "conventional") else 1.0
    return (c / scores.shape[0]) * (scores.T @ weights)


def update_policy(team: NetTeam, agent: int, d: np.ndarray, alpha_t: float,
                  round_index: int) -> float:
    """Apply the normalized step; returns the realized step norm.

    A direction shorter than SKIP_NORM is skipped (returns 0.0).  A
    non-finite direction aborts the run naming the round and agent, so
    a corrupted signal never silently poisons later rounds.
    """
    if alpha_t <= 0.0:
        raise ConfigError(f"step size must be positive, got {alpha_t}")
    sq = float(d @ d)
    if not np.isfinite(sq):
        raise InternalError(f"round {round_index}: non-finite direction for agent {agent}")
    norm = np.sqrt(sq)
    if norm < SKIP_NORM:
        return 0.0
    step = (alpha_t / norm) * d
    team.add_flat(agent, step)
    return float(np.linalg.norm(step))


@dataclass
class TrainLog:
    """Everything a finished run produced, before serialization."""

    rounds: list[dict]
    episodes: list[dict]
    skips: int
    restart_events: int
    total_steps: int


def train(team: NetTeam, chain: TrainingChain, critic: CriticState,
          mix: np.ndarray, rounds: int, batch_len: int = 1,
          critic_iters: int = 1, alpha: float = 0.005, t_gossip: int = 10,
          signal: str = "td_error", td_sign: str = "conventional",
          warm_start: bool = False, encoder=None) -> TrainLog:
    """Alternate evaluation and policy phases for the given round count.

    Rounds are numbered from 1 and the step size is alpha / round,
    computed exactly.  Each round: reset and run the critic on the
    chain, rewind to the start state of its last transition, collect a
    policy batch from there, mix TD errors, and step every agent.  The
    next round's critic resumes from the batch's end state, keeping one
    continuous chain whose every transition is counted.
    """
    if rounds < 1:
        raise ConfigError(f"need at least one round, got {rounds}")
    if alpha <= 0.0:
        raise ConfigError(f"base step size must be positive, got {alpha}")
    if signal not in DIRECTION_SIGNALS:
        raise ConfigError(f"direction signal {signal!r}, expected one of {DIRECTION_SIGNALS}")
    if td_sign not in TD_SIGNS:
        raise ConfigError(f"td sign {td_sign!r}, expected one of {TD_SIGNS}")
    if encoder is None:
        encoder = encoder_for(chain.env)
    n = team.n_agents
    if critic.n_agents != n:
        raise DimensionError(f"critic holds {critic.n_agents} agents, team {n}")

    round_rows: list[dict] = []
    skips = 0
    for t in range(1, rounds + 1):
        alpha_t = alpha / t
        if not warm_start:
            critic.reset()
        crun = run_decentralized_critic(team, chain, critic, critic_iters,
                                        mix, t_gossip, encoder=encoder)
        chain.set_state(crun.handoff_state)
        batch = collect_batch(team, chain, critic.net, crun.hiddens_out,
                              batch_len, encoder=encoder)
        mixed_td = gossip_td(mix, batch.td, t_gossip)
        step_norms = np.zeros(n)
        for i in range(n):
            weights = mixed_td[:, i] if signal == "td_error" else batch.q[:, i]
            d = direction(weights, batch.scores[i], signal, td_sign)
            step_norms[i] = update_policy(team, i, d, alpha_t, t)
            if step_norms[i] == 0.0:
                skips += 1
        round_rows.append({
            "round": t,
            "alpha": alpha_t,
            "episodes_done": len(chain.finished_episodes),
            "td_loss": [float(v) for v in crun.td_losses.mean(axis=0)],
            "ball_hits": crun.ball_hits,
            "param_disagreement": crun.disagreement_before,
            "param_disagreement_mixed": crun.disagreement_after,
            "td_disagreement": disagreement(batch.td.T),
            "td_disagreement_mixed": disagreement(mixed_td.T),
            "step_norms": [float(v) for v in step_norms],
        })
    chain.flush()
    return TrainLog(
        rounds=round_rows,
        episodes=list(chain.finished_episodes),
        skips=skips,
        restart_events=chain.restart_events,
        total_steps=chain.total_steps,
    )
