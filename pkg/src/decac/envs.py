"""Environments: finite tabular MDPs and the grid coverage game.

Both environments expose the same stepping surface: explicit states,
joint actions given as one local action per agent, and a vector of
per-agent rewards.  Transitions during learning go through
`restart_step`, which with probability 1-gamma teleports the chain back
to the run's initial state while keeping the rewards of the underlying
move.  The stationary distribution of that chain is what the exact
oracles compute against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .nets import sample_index

P_ROW_ATOL = 1e-12

GRID_ACTIONS = ("up", "down", "left", "right", "stay")
# displacement per action index, in (dx, dy)
_GRID_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0), (0, 0))


# ---------------------------------------------------------------------------
# tabular MDPs


@dataclass(frozen=True)
class TabularMDP:
    """Finite multi-agent MDP with an enumerated joint action space.

    transition[s, a, s2] is the base kernel, rewards[i, s, a] the reward
    agent i receives for joint action index a in state s.  Joint action
    indices enumerate per-agent local actions in C order (agent 0 is the
    slowest axis).
    """

    transition: np.ndarray
    rewards: np.ndarray
    gamma: float
    initial_state: int
    agent_actions: tuple[int, ...]

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "agent_actions", tuple(int(k) for k in self.agent_actions))
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError(f"transition tensor must be (S, A, S), got {P.shape}")
        n_joint = int(np.prod(self.agent_actions))
        if P.shape[1] != n_joint:
            raise DimensionError(
                f"transition has {P.shape[1]} joint actions, agent_actions imply {n_joint}"
            )
        if r.ndim != 3 or r.shape[1:] != (P.shape[0], P.shape[1]):
            raise DimensionError(f"rewards must be (n_agents, S, A), got {r.shape}")
        if not (0.0 < self.gamma < 1.0):
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not (0 <= self.initial_state < P.shape[0]):
            raise DomainError(f"initial state {self.initial_state} out of range")
        if np.any(P < 0.0):
            raise ConfigError("transition tensor has negative entries")
        row_err = np.abs(P.sum(axis=2) - 1.0).max()
        if row_err > P_ROW_ATOL:
            raise ConfigError(f"transition rows must sum to 1 (max error {row_err:.2e})")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_joint_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[0]

    def joint_index(self, actions) -> int:
        return int(np.ravel_multi_index(tuple(actions), self.agent_actions))

    def local_actions(self, joint: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(joint, self.agent_actions))

    def mean_rewards(self) -> np.ndarray:
        """Average over agents, shape (S, A)."""
        return self.rewards.mean(axis=0)

    def step_base(self, state: int, actions, rng: np.random.Generator):
        a = self.joint_index(actions)
        s2 = sample_index(self.transition[state, a], rng)
        return s2, self.rewards[:, state, a].copy()

    def restart_mdp(self) -> "TabularMDP":
        """Tabular MDP whose kernel is the restart composition.

        Row-wise: gamma * P + (1 - gamma) * e_{s0}.  Rewards, discount
        and initial state carry over unchanged.
        """
        P2 = self.gamma * self.transition.copy()
        P2[:, :, self.initial_state] += 1.0 - self.gamma
        return TabularMDP(
            transition=P2,
            rewards=self.rewards,
            gamma=self.gamma,
            initial_state=self.initial_state,
            agent_actions=self.agent_actions,
        )

    def is_ergodic_under_restart(self) -> bool:
        """Reachability check for the restart chain.

        The restart kernel returns every state to the initial one with
        probability at least 1-gamma, so the chain is irreducible iff
        every state can be reached from the initial state through the
        support of the base kernel, and the restart self-return makes it
        aperiodic.
        """
        support = (self.transition.sum(axis=1) > 0.0)
        seen = {self.initial_state}
        stack = [self.initial_state]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(support[u]):
                if int(v) not in seen:
                    seen.add(int(v))
                    stack.append(int(v))
        return len(seen) == self.n_states

    def to_json(self) -> str:
        payload = {
            "transition": self.transition.tolist(),
            "rewards": self.rewards.tolist(),
            "gamma": self.gamma,
            "initial_state": self.initial_state,
            "agent_actions": list(self.agent_actions),
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "TabularMDP":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid MDP file: {exc}") from exc
        missing = {"transition", "rewards", "gamma", "initial_state", "agent_actions"} - set(payload)
        if missing:
            raise ConfigError(f"MDP file missing fields: {sorted(missing)}")
        return TabularMDP(
            transition=np.asarray(payload["transition"], dtype=float),
            rewards=np.asarray(payload["rewards"], dtype=float),
            gamma=float(payload["gamma"]),
            initial_state=int(payload["initial_state"]),
            agent_actions=tuple(int(k) for k in payload["agent_actions"]),
        )


def make_random_mdp(rng: np.random.Generator, n_states: int, agent_actions,
                    gamma: float, reward_scale: float = 1.0) -> TabularMDP:
    """Random dense MDP with Dirichlet(1) transition rows, uniform rewards."""
    agent_actions = tuple(int(k) for k in agent_actions)
    n_joint = int(np.prod(agent_actions))
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    r = reward_scale * rng.random(size=(len(agent_actions), n_states, n_joint))
    return TabularMDP(transition=P, rewards=r, gamma=gamma,
                      initial_state=0, agent_actions=agent_actions)


# ---------------------------------------------------------------------------
# grid coverage game


@dataclass
class GridSpread:
    """Agents cover landmarks on a small board.

    Positions are cell indices (cell = x * height + y).  Every move
    shifts one cell and clips at the edges.  The board-wide raw reward
    is minus the sum over landmarks of the l1 distance to the closest
    agent, evaluated on the configuration after the move.

    reward_mode selects how raw rewards are attributed per agent:
      * "split": agent i observes only landmark i's term, scaled by the
        number of agents so the per-agent mean equals the board reward.
        Gossip is then load-bearing: no single agent sees the whole
        objective.
      * "global": every agent observes the full board reward.
    Learning consumes rewards shifted by +reward_offset into
    [0, reward_offset]; raw rewards are what run logs report.
    """

    n_agents: int
    rng: np.random.Generator
    width: int = 13
    height: int = 5
    gamma: float = 0.99
    episode_len: int = 10
    reward_mode: str = "split"
    shift_rewards: bool = True
    landmarks: tuple[int, ...] = field(init=False)
    initial_state: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"board {self.width}x{self.height} is empty")
        if self.n_agents < 1:
            raise ConfigError(f"need at least one agent, got {self.n_agents}")
        if self.reward_mode not in ("split", "global"):
            raise ConfigError(f"unknown reward_mode {self.reward_mode!r}")
        if not (0.0 < self.gamma < 1.0):
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        n_cells = self.width * self.height
        if self.n_agents > n_cells:
            raise ConfigError("more landmarks than board cells")
        picks = self.rng.choice(n_cells, size=self.n_agents, replace=False)
        self.landmarks = tuple(int(c) for c in picks)
        self.initial_state = self.episode_reset(self.rng)

    @property
    def agent_actions(self) -> tuple[int, ...]:
        return (len(GRID_ACTIONS),) * self.n_agents

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def reward_offset(self) -> float:
        """Largest achievable raw penalty, used as the shift into [0, r_max]."""
        if not self.shift_rewards:
            return 0.0
        return float(self.n_agents * ((self.width - 1) + (self.height - 1)))

    def cell_xy(self, cell: int) -> tuple[int, int]:
        return cell // self.height, cell % self.height

    def xy_cell(self, x: int, y: int) -> int:
        return x * self.height + y

    def episode_reset(self, rng: np.random.Generator) -> tuple[int, ...]:
        """Fresh uniform agent positions; landmarks never move."""
        return tuple(int(c) for c in rng.integers(0, self.n_cells, size=self.n_agents))

    def _move(self, cell: int, action: int) -> int:
        x, y = self.cell_xy(cell)
        dx, dy = _GRID_MOVES[action]
        x2 = min(max(x + dx, 0), self.width - 1)
        y2 = min(max(y + dy, 0), self.height - 1)
        return self.xy_cell(x2, y2)

    def raw_rewards(self, state) -> np.ndarray:
        """Per-agent raw reward vector for a configuration."""
        pos = [self.cell_xy(c) for c in state]
        dmin = np.empty(self.n_agents)
        for k, lm in enumerate(self.landmarks):
            lx, ly = self.cell_xy(lm)
            dmin[k] = min(abs(lx - x) + abs(ly - y) for (x, y) in pos)
        if self.reward_mode == "split":
            return -float(self.n_agents) * dmin
        return np.full(self.n_agents, -float(dmin.sum()))

    def step_base(self, state, actions, rng: np.random.Generator):
        if len(actions) != self.n_agents:
            raise DimensionError(f"{len(actions)} actions for {self.n_agents} agents")
        state2 = tuple(self._move(c, int(a)) for c, a in zip(state, actions))
        return state2, self.raw_rewards(state2)


# ---------------------------------------------------------------------------
# restart stepping and the training chain


def restart_step(env, state, actions, rng: np.random.Generator):
    """One transition of the restart chain.

    Draw order is fixed: first the restart coin, then (only if the chain
    continues) the base transition's own draw.  Rewards always come from
    the base move, teleport or not.
    """
    coin = rng.random()
    state_moved, rewards = env.step_base(state, actions, rng)
    if coin < 1.0 - env.gamma:
        return env.initial_state, rewards, True
    return state_moved, rewards, False


class TrainingChain:
    """Single mutable chain of restart transitions with episode resets.

    Owns the chain state, step counting, and per-episode reward
    bookkeeping.  Every env transition during training (critic and actor
    phases alike) must go through `step` so episode accounting sees the
    full stream.  episode_len=0 disables resets.
    """

    def __init__(self, env, rng: np.random.Generator, episode_len: int | None = None):
        self.env = env
        self.rng = rng
        self.state = env.initial_state
        self.episode_len = getattr(env, "episode_len", 0) if episode_len is None else episode_len
        self.steps_in_episode = 0
        self.total_steps = 0
        self.episode_rewards: list[float] = []
        self.finished_episodes: list[dict] = []
        self._restart_events = 0

    def step(self, actions):
        """Advance one transition; returns (rewards_for_learning, next_state).

        Rewards for learning are the raw per-agent rewards plus the
        env's shift offset.  The board-mean raw reward is accumulated
        into the current episode record.
        """
        state2, raw, restarted = restart_step(self.env, self.state, actions, self.rng)
        if restarted:
            self._restart_events += 1
        self.total_steps += 1
        self.steps_in_episode += 1
        self.episode_rewards.append(float(raw.mean()))
        if self.episode_len and self.steps_in_episode >= self.episode_len:
            self._finish_episode()
            state2 = self.env.episode_reset(self.rng)
        self.state = state2
        offset = getattr(self.env, "reward_offset", 0.0)
        return raw + offset, state2

    def _finish_episode(self):
        rewards = self.episode_rewards
        self.finished_episodes.append({
            "episode": len(self.finished_episodes),
            "steps": len(rewards),
            "raw_reward_sum": float(np.sum(rewards)),
            "raw_reward_mean": float(np.mean(rewards)),
        })
        self.episode_rewards = []
        self.steps_in_episode = 0

    def set_state(self, state) -> None:
        """Rewind the chain to a state already visited this run.

        Counters and episode bookkeeping are untouched; this only moves
        the cursor, so a phase can resume from a transition's start
        state after a lookahead consumed it.
        """
        self.state = state

    def flush(self):
        """Close a trailing partial episode, if any."""
        if self.episode_rewards:
            self._finish_episode()

    @property
    def restart_events(self) -> int:
        return self._restart_events


# ---------------------------------------------------------------------------
# feature encoders


class TabularEncoder:
    """Unit-norm one-hot features for an enumerated MDP.

    State features are the bare state one-hot.  State-action features
    concatenate the state one-hot with the joint action one-hot, scaled
    by 1/sqrt(2) to restore unit norm.  Both maps are one-to-one.
    """

    def __init__(self, mdp: TabularMDP):
        self.mdp = mdp
        self.state_dim = mdp.n_states
        self.pair_dim = mdp.n_states + mdp.n_joint_actions

    def encode_state(self, state: int) -> np.ndarray:
        x = np.zeros(self.state_dim)
        x[state] = 1.0
        return x

    def encode_pair(self, state: int, actions) -> np.ndarray:
        x = np.zeros(self.pair_dim)
        x[state] = 1.0 / np.sqrt(2.0)
        x[self.mdp.n_states + self.mdp.joint_index(actions)] = 1.0 / np.sqrt(2.0)
        return x


class GridEncoder:
    """Unit-norm structured one-hots for the grid game.

    One cell one-hot per agent (and one action one-hot per agent for
    state-action features), concatenated and rescaled to unit norm.
    Each agent's block recovers its position/action uniquely, so the map
    is one-to-one without materializing the joint state space.
    """

    def __init__(self, env: GridSpread):
        self.env = env
        self.n_agents = env.n_agents
        self.n_cells = env.n_cells
        self.n_actions = len(GRID_ACTIONS)
        self.state_dim = self.n_agents * self.n_cells
        self.pair_dim = self.n_agents * (self.n_cells + self.n_actions)

    def encode_state(self, state) -> np.ndarray:
        x = np.zeros(self.state_dim)
        scale = 1.0 / np.sqrt(self.n_agents)
        for i, cell in enumerate(state):
            x[i * self.n_cells + cell] = scale
        return x

    def encode_pair(self, state, actions) -> np.ndarray:
        x = np.zeros(self.pair_dim)
        scale = 1.0 / np.sqrt(2 * self.n_agents)
        for i, cell in enumerate(state):
            x[i * self.n_cells + cell] = scale
        base = self.n_agents * self.n_cells
        for i, a in enumerate(actions):
            x[base + i * self.n_actions + int(a)] = scale
        return x


def encoder_for(env):
    if isinstance(env, TabularMDP):
        return TabularEncoder(env)
    if isinstance(env, GridSpread):
        return GridEncoder(env)
    raise ConfigError(f"no feature encoder for {type(env).__name__}")
