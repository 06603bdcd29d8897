import dataclasses
import json

import numpy as np
import pytest

from decac.config import (
    ActorBlock,
    ConsensusBlock,
    CriticBlock,
    EnvBlock,
    NetBlock,
    RunConfig,
    apply_paper_scale,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    replica_rngs,
    validate_config,
)
from decac.errors import ConfigError


def default_config():
    return RunConfig(env=EnvBlock(), net=NetBlock(), actor=ActorBlock(),
                     critic=CriticBlock(), consensus=ConsensusBlock())


class TestDefaults:
    def test_block_defaults(self):
        cfg = default_config()
        assert cfg.env.n_agents == 2
        assert (cfg.env.width, cfg.env.height) == (13, 5)
        assert cfg.env.gamma == 0.99
        assert cfg.env.episode_len == 10
        assert cfg.env.reward_mode == "split"
        assert cfg.env.shift_rewards is True
        assert cfg.net.m == 20
        assert cfg.net.depth == 5
        assert cfg.net.radius == 5.0
        assert cfg.net.beta == 0.001
        assert cfg.actor.rounds == 4000
        assert cfg.actor.batch_len == 1
        assert cfg.actor.alpha == 0.005
        assert cfg.actor.signal == "td_error"
        assert cfg.actor.td_sign == "conventional"
        assert cfg.critic.iters == 1
        assert cfg.critic.warm_start is False
        assert cfg.consensus.topology == "complete"
        assert cfg.consensus.t_gossip == 10
        assert cfg.seed == 1234
        assert cfg.replicas == 20

    def test_defaults_validate(self):
        assert validate_config(default_config()) is not None

    def test_empty_dict_gives_defaults(self):
        cfg = config_from_dict({})
        assert config_hash(cfg) == config_hash(default_config())


class TestValidation:
    def test_messages_name_fields(self):
        cases = [
            ({"env": {"gamma": 1.5}}, "env.gamma"),
            ({"env": {"n_agents": 0}}, "env.n_agents"),
            ({"env": {"reward_mode": "sum"}}, "env.reward_mode"),
            ({"net": {"m": 0}}, "net.m"),
            ({"net": {"depth": 0}}, "net.depth"),
            ({"net": {"radius": -1.0}}, "net.radius"),
            ({"actor": {"rounds": 0}}, "actor.rounds"),
            ({"actor": {"alpha": 0.0}}, "actor.alpha"),
            ({"actor": {"signal": "nope"}}, "actor.signal"),
            ({"critic": {"iters": 0}}, "critic.iters"),
            ({"consensus": {"topology": "mesh"}}, "consensus.topology"),
            ({"consensus": {"t_gossip": -1}}, "consensus.t_gossip"),
            ({"replicas": 0}, "replicas"),
        ]
        for raw, needle in cases:
            with pytest.raises(ConfigError, match=needle.replace(".", r"\.")):
                config_from_dict(raw)

    def test_board_must_fit_landmarks(self):
        with pytest.raises(ConfigError):
            config_from_dict({"env": {"n_agents": 5, "width": 2, "height": 2}})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict({"environment": {}})
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict({"env": {"n_agent": 2}})
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict({"actor": {"learning_rate": 0.1}})

    def test_scalar_types_checked(self):
        with pytest.raises(ConfigError):
            config_from_dict({"seed": "abc"})
        with pytest.raises(ConfigError):
            config_from_dict({"replicas": 2.5})


class TestFiles:
    def write_toml(self, path, body):
        path.write_text(body)
        return load_config(path)

    def test_toml_round_trip(self, tmp_path):
        cfg = self.write_toml(tmp_path / "run.cfg", "\n".join([
            "seed = 99",
            "replicas = 3",
            "[env]",
            "n_agents = 3",
            "gamma = 0.95",
            "[actor]",
            "rounds = 17",
        ]))
        assert cfg.seed == 99
        assert cfg.replicas == 3
        assert cfg.env.n_agents == 3
        assert cfg.env.gamma == 0.95
        assert cfg.actor.rounds == 17
        # untouched blocks keep defaults
        assert cfg.net.m == 20

    def test_json_equivalent(self, tmp_path):
        raw = {"seed": 7, "env": {"n_agents": 3}, "actor": {"rounds": 5}}
        jpath = tmp_path / "run.json"
        jpath.write_text(json.dumps(raw))
        from_json = load_config(jpath)
        from_dict = config_from_dict(raw)
        assert config_hash(from_json) == config_hash(from_dict)

    def test_invalid_syntax(self, tmp_path):
        bad_toml = tmp_path / "bad.cfg"
        bad_toml.write_text("seed = = 1")
        with pytest.raises(ConfigError, match="TOML"):
            load_config(bad_toml)
        bad_json = tmp_path / "bad.json"
        bad_json.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(bad_json)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.cfg")

    def test_shipped_configs_load(self):
        desk = load_config("configs/desk_default.cfg")
        paper = load_config("configs/paper_default.cfg")
        assert desk.actor.rounds == 4000
        assert desk.replicas == 20
        assert paper.actor.rounds == 20000
        assert paper.replicas == 100

    def test_paper_scale_matches_shipped_paper_config(self):
        desk = load_config("configs/desk_default.cfg")
        paper = load_config("configs/paper_default.cfg")
        assert config_hash(apply_paper_scale(desk)) == config_hash(paper)


class TestHashing:
    def test_stable_under_key_order(self, tmp_path):
        a = (tmp_path / "a.cfg")
        b = (tmp_path / "b.cfg")
        a.write_text("seed = 5\nreplicas = 2\n[env]\nn_agents = 2\ngamma = 0.9\n")
        b.write_text("replicas = 2\nseed = 5\n[env]\ngamma = 0.9\nn_agents = 2\n")
        assert config_hash(load_config(a)) == config_hash(load_config(b))

    def test_sensitive_to_any_field(self):
        base = default_config()
        seen = {config_hash(base)}
        variants = [
            dataclasses.replace(base, seed=4321),
            dataclasses.replace(base, env=dataclasses.replace(base.env, gamma=0.98)),
            dataclasses.replace(base, net=dataclasses.replace(base.net, m=21)),
            dataclasses.replace(base, actor=dataclasses.replace(base.actor, alpha=0.004)),
            dataclasses.replace(base, consensus=dataclasses.replace(
                base.consensus, t_gossip=9)),
        ]
        for v in variants:
            seen.add(config_hash(v))
        assert len(seen) == 6

    def test_round_trips_through_dict(self):
        cfg = default_config()
        again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
        assert config_hash(again) == config_hash(cfg)


class TestPaperScale:
    def test_overrides(self):
        cfg = apply_paper_scale(default_config())
        assert cfg.actor.rounds == 20000
        assert cfg.replicas == 100
        # everything else untouched
        assert cfg.net.m == 20
        assert cfg.seed == 1234


class TestReplicaRngs:
    def test_streams_and_determinism(self):
        a = replica_rngs(1234, 0)
        b = replica_rngs(1234, 0)
        assert set(a) == {"net_init", "trajectory", "landmarks"}
        for key in a:
            assert a[key].random() == b[key].random()

    def test_replicas_independent(self):
        draws = set()
        for rep in range(6):
            rngs = replica_rngs(1234, rep)
            draws.add(tuple(rngs[k].random() for k in sorted(rngs)))
        assert len(draws) == 6

    def test_replica_streams_stable_under_count(self):
        # replica 3's stream does not depend on how many replicas exist
        x = replica_rngs(7, 3)["trajectory"].random()
        y = replica_rngs(7, 3)["trajectory"].random()
        assert x == y
        z = replica_rngs(8, 3)["trajectory"].random()
        assert x != z

    def test_streams_differ_within_replica(self):
        rngs = replica_rngs(0, 0)
        vals = [rngs[k].random() for k in ("net_init", "trajectory", "landmarks")]
        assert len(set(vals)) == 3
