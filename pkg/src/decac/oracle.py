"""Brute-force exact references for small tabular problems.

Everything here is computed by direct linear algebra or exhaustive
enumeration and never reuses the learning code paths, so these values
serve as ground truth in tests: exact action values, stationary and
discounted-visitation distributions, the exact scalar objective, and
finite-difference gradients.  Problem sizes are deliberately capped.
"""

from __future__ import annotations

import numpy as np

from .envs import TabularMDP
from .errors import DimensionError, DomainError, InternalError, UnsupportedError
from .nets import FCNet, flatten_mats, sample_index, unflatten_mats

MAX_ORACLE_STATES = 16
MAX_ORACLE_JOINT_ACTIONS = 8

SOLVE_RESIDUAL_ATOL = 1e-10


def _check_size(mdp: TabularMDP) -> None:
    if mdp.n_states > MAX_ORACLE_STATES or mdp.n_joint_actions > MAX_ORACLE_JOINT_ACTIONS:
        raise UnsupportedError(
            f"oracle limited to {MAX_ORACLE_STATES} states x "
            f"{MAX_ORACLE_JOINT_ACTIONS} joint actions, "
            f"got {mdp.n_states} x {mdp.n_joint_actions}"
        )


def _check_policy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.n_states, mdp.n_joint_actions):
        raise DimensionError(
            f"policy table shape {policy.shape}, expected "
            f"({mdp.n_states}, {mdp.n_joint_actions})"
        )
    if np.any(policy < 0.0) or np.abs(policy.sum(axis=1) - 1.0).max() > 1e-9:
        raise DomainError("policy rows must be distributions")
    return policy


def state_kernel(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """State-to-state kernel K[s, s2] = sum_a policy[s, a] P[s, a, s2]."""
    policy = _check_policy(mdp, policy)
    return np.einsum("sa,sat->st", policy, mdp.transition)


def exact_q(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Exact discounted action values under mdp's own kernel, shape (S, A).

    Solves the (S*A)-dimensional linear fixed point directly.  Pass the
    restart-composed MDP to get the fixed point of learning on the
    restart chain, or the base MDP for the plain discounted values.
    """
    _check_size(mdp)
    policy = _check_policy(mdp, policy)
    S, A = mdp.n_states, mdp.n_joint_actions
    # M[(s,a),(s2,a2)] = P[s,a,s2] * policy[s2,a2]
    M = np.einsum("sat,tb->satb", mdp.transition, policy).reshape(S * A, S * A)
    rbar = mdp.mean_rewards().ravel()
    q = np.linalg.solve(np.eye(S * A) - mdp.gamma * M, rbar)
    residual = np.abs(q - mdp.gamma * (M @ q) - rbar).max()
    if residual > SOLVE_RESIDUAL_ATOL:
        raise InternalError(f"action-value solve residual {residual:.2e}")
    return q.reshape(S, A)


def exact_state_values(mdp: TabularMDP, policy: np.ndarray,
                       q: np.ndarray | None = None) -> np.ndarray:
    if q is None:
        q = exact_q(mdp, policy)
    return (np.asarray(policy) * q).sum(axis=1)


def exact_advantage(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    q = exact_q(mdp, policy)
    v = exact_state_values(mdp, policy, q)
    return q - v[:, None]


def exact_objective(mdp: TabularMDP, policy: np.ndarray) -> float:
    """Discounted return from the initial state under the base kernel."""
    v = exact_state_values(mdp, policy)
    return float(v[mdp.initial_state])


def stationary_restart(mdp: TabularMDP, policy: np.ndarray,
                       tol: float = 1e-12, max_iters: int = 200_000) -> np.ndarray:
    """Stationary distribution of the restart chain under `policy`.

    Power iteration on the restart-composed state kernel down to `tol`
    in l1 step size, then cross-checked against a direct null-space
    solve.  Requires the restart chain to be ergodic, which reduces to
    every state being reachable from the initial one.
    """
    _check_size(mdp)
    if not mdp.is_ergodic_under_restart():
        raise DomainError("restart chain is not ergodic: unreachable states exist")
    K = state_kernel(mdp.restart_mdp(), policy)
    n = mdp.n_states
    nu = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = nu @ K
        if np.abs(nxt - nu).sum() <= tol:
            nu = nxt
            break
        nu = nxt
    else:
        raise InternalError(f"power iteration did not reach {tol} in {max_iters} steps")
    nu = nu / nu.sum()

    B = K.T - np.eye(n)
    B[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    direct = np.linalg.solve(B, rhs)
    if np.abs(direct - nu).max() > 1e-10:
        raise InternalError("power iteration and null-space solve disagree")
    return nu


def discounted_visitation(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Discounted state-visit weights from the initial state, base kernel.

    eta = sum_t gamma^t Pr(s_t = s), solved as one linear system.  Its
    total mass is 1/(1-gamma), which is asserted as a sanity check.
    """
    _check_size(mdp)
    K = state_kernel(mdp, policy)
    n = mdp.n_states
    e0 = np.zeros(n)
    e0[mdp.initial_state] = 1.0
    eta = np.linalg.solve(np.eye(n) - mdp.gamma * K.T, e0)
    mass = 1.0 / (1.0 - mdp.gamma)
    if abs(eta.sum() - mass) > 1e-9 * mass:
        raise InternalError(f"visitation mass {eta.sum()!r} != {mass!r}")
    return eta


def stationary_visitation_gap(mdp: TabularMDP, policy: np.ndarray) -> float:
    """Max-norm gap between the restart stationary law and (1-gamma) x visitation."""
    nu = stationary_restart(mdp, policy)
    eta = discounted_visitation(mdp, policy)
    return float(np.abs(nu - (1.0 - mdp.gamma) * eta).max())


# ---------------------------------------------------------------------------
# differentiable tabular team policies


class SoftmaxTeam:
    """Per-agent tabular softmax policies over local actions.

    Agent i holds a logits table of shape (S, |A_i|).  The joint policy
    is the product of the per-agent rows; joint action indices follow
    the same C-order convention as TabularMDP.  Parameters flatten
    agent-major, then row-major within each table.
    """

    def __init__(self, logits: list[np.ndarray]):
        self.logits = [np.array(t, dtype=float) for t in logits]
        if not self.logits:
            raise DimensionError("team needs at least one agent")
        n_states = self.logits[0].shape[0]
        for t in self.logits:
            if t.ndim != 2 or t.shape[0] != n_states:
                raise DimensionError("all logit tables need the same state count")

    @classmethod
    def zeros(cls, n_states: int, agent_actions) -> "SoftmaxTeam":
        return cls([np.zeros((n_states, int(k))) for k in agent_actions])

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int, agent_actions,
               scale: float = 1.0) -> "SoftmaxTeam":
        return cls([scale * rng.normal(size=(n_states, int(k))) for k in agent_actions])

    @property
    def n_agents(self) -> int:
        return len(self.logits)

    @property
    def n_states(self) -> int:
        return self.logits[0].shape[0]

    def agent_probs(self, i: int) -> np.ndarray:
        t = self.logits[i]
        e = np.exp(t - t.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def joint_table(self) -> np.ndarray:
        """Joint policy table of shape (S, prod_i |A_i|)."""
        table = self.agent_probs(0)
        for i in range(1, self.n_agents):
            p = self.agent_probs(i)
            table = (table[:, :, None] * p[:, None, :]).reshape(self.n_states, -1)
        return table

    def score(self, i: int, state: int, action: int) -> np.ndarray:
        """Flat gradient of log pi_i(action | state) in agent i's table."""
        p = self.agent_probs(i)[state]
        g = np.zeros_like(self.logits[i])
        g[state] = -p
        g[state, action] += 1.0
        return g.ravel()

    def sample_joint(self, state: int, rng: np.random.Generator) -> tuple[int, ...]:
        """Draw one local action per agent, in agent order."""
        return tuple(sample_index(self.agent_probs(i)[state], rng)
                     for i in range(self.n_agents))

    def add_flat(self, i: int, delta: np.ndarray) -> None:
        self.logits[i] += delta.reshape(self.logits[i].shape)

    def get_flat(self) -> np.ndarray:
        return flatten_mats(self.logits)

    def set_flat(self, flat: np.ndarray) -> None:
        k = 0
        for t in self.logits:
            t[...] = flat[k:k + t.size].reshape(t.shape)
            k += t.size
        if k != flat.size:
            raise DimensionError(f"flat vector has {flat.size} entries, expected {k}")

    def agent_slice(self, i: int) -> slice:
        start = sum(t.size for t in self.logits[:i])
        return slice(start, start + self.logits[i].size)


def fd_objective_gradient(mdp: TabularMDP, team: SoftmaxTeam,
                          step: float = 1e-5, richardson: bool = False) -> np.ndarray:
    """Central-difference gradient of the exact objective in team logits.

    richardson combines central differences at `step` and 2*step for an
    extrapolated estimate, useful when a larger base step is needed.
    """
    _check_size(mdp)

    def central(h: float) -> np.ndarray:
        flat = team.get_flat()
        g = np.zeros_like(flat)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + h
            team.set_flat(flat)
            up = exact_objective(mdp, team.joint_table())
            flat[k] = saved - h
            team.set_flat(flat)
            dn = exact_objective(mdp, team.joint_table())
            flat[k] = saved
            g[k] = (up - dn) / (2.0 * h)
        team.set_flat(flat)
        return g

    if not richardson:
        return central(step)
    g_h = central(step)
    g_2h = central(2.0 * step)
    return (4.0 * g_h - g_2h) / 3.0


def score_advantage_sum(mdp: TabularMDP, team: SoftmaxTeam, agent: int) -> np.ndarray:
    """Stationary-weighted score-times-advantage sum for one agent.

    sum_s nu(s) sum_a pi(a|s) score_i(s, a_i) Adv(s, a), with nu the
    restart chain's stationary law and Adv the base-kernel advantage.
    The exact objective gradient equals this sum divided by (1-gamma).
    """
    joint = team.joint_table()
    nu = stationary_restart(mdp, joint)
    adv = exact_advantage(mdp, joint)
    total = np.zeros(team.logits[agent].size)
    for s in range(mdp.n_states):
        for a in range(mdp.n_joint_actions):
            w = nu[s] * joint[s, a]
            if w == 0.0:
                continue
            local = mdp.local_actions(a)
            total += w * adv[s, a] * team.score(agent, s, local[agent])
    return total


def policy_gradient_consistency(mdp: TabularMDP, team: SoftmaxTeam,
                                step: float = 1e-5) -> list[dict]:
    """Per-agent comparison of the FD objective gradient with the
    stationary score-advantage sum.

    Returns, per agent, the cosine between the two vectors and the
    least-squares ratio fd / sum, which should equal 1/(1-gamma).
    """
    fd = fd_objective_gradient(mdp, team, step=step)
    out = []
    for i in range(team.n_agents):
        fd_i = fd[team.agent_slice(i)]
        lhs = score_advantage_sum(mdp, team, i)
        denom = float(lhs @ lhs)
        ratio = float(fd_i @ lhs) / denom if denom > 0 else np.nan
        cos = float(fd_i @ lhs / (np.linalg.norm(fd_i) * np.linalg.norm(lhs) + 1e-300))
        out.append({"agent": i, "cosine": cos, "ratio": ratio})
    return out


# ---------------------------------------------------------------------------
# finite differences through the network


def fd_net_gradient(net: FCNet, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar output in hidden weights."""
    if net.head_rows != 1:
        raise DimensionError("finite differences defined for the scalar head")
    hidden = net.clone_hidden()
    flat = flatten_mats(hidden)
    g = np.zeros_like(flat)
    for k in range(flat.size):
        saved = flat[k]
        flat[k] = saved + step
        up = net.value(x, unflatten_mats(flat, hidden))
        flat[k] = saved - step
        dn = net.value(x, unflatten_mats(flat, hidden))
        flat[k] = saved
        g[k] = (up - dn) / (2.0 * step)
    return g


def min_preactivation(net: FCNet, x: np.ndarray) -> float:
    """Smallest |z| over all layers; small values flag relu-kink proximity."""
    _, pres = net.forward_cache(x)
    return float(min(np.abs(z).min() for z in pres))
