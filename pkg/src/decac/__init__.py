"""Decentralized actor-critic on finite worlds, with exact oracles.

Deterministic desk-scale implementation of a gossip-based multi-agent
actor-critic: deep ReLU value/policy networks whose input and output
layers stay frozen, consensus averaging of critic parameters and TD
signals over a communication graph, a restart transition chain, and a
grid coverage game.  Every learnable piece has a brute-force oracle
counterpart used by the test suite.
"""

from .consensus import (
    CommGraph,
    complete_graph,
    consensus_rate_bound,
    disagreement,
    erdos_graph,
    gossip,
    graph_from_edges,
    metropolis_weights,
    ring_graph,
    star_graph,
    validate_mixing,
)
from .envs import GridSpread, TabularMDP, TrainingChain, encoder_for, make_random_mdp, restart_step
from .errors import (
    ConfigError,
    DecacError,
    DimensionError,
    DomainError,
    InternalError,
    UnsupportedError,
)
from .nets import FCNet, flatten_mats, load_net, project_layer, project_layers, save_net, unflatten_mats
from .actor import NetTeam, collect_batch, direction, gossip_td, train, update_policy
from .config import RunConfig, config_hash, load_config, replica_rngs, validate_config
from .critic import (
    CriticState,
    exact_msbe,
    exact_mspbe,
    make_critic_state,
    q_table_from_net,
    run_centralized_critic,
    run_decentralized_critic,
    td_error,
)

__version__ = "0.1.0"
