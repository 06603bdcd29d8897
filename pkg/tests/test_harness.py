import csv
import dataclasses
import json

import numpy as np
import pytest

from decac.actor import TrainLog
from decac.config import (
    ActorBlock,
    ConsensusBlock,
    CriticBlock,
    EnvBlock,
    NetBlock,
    RunConfig,
    config_hash,
)
from decac.errors import ConfigError
from decac.harness import (
    SWEEP_AXES,
    build_graph,
    build_replica,
    collect_plot_rows,
    episode_records,
    moving_average,
    run_sweep,
    run_training,
    sweep_cells,
    verify_checks,
    write_plot_csv,
    write_replica,
)
from decac.nets import flatten_mats


def micro_config(**overrides):
    """Small fast configuration: 20 rounds of K=M=1 on a 5x3 board."""
    base = dict(
        env=EnvBlock(n_agents=2, width=5, height=3),
        net=NetBlock(m=4, depth=2),
        actor=ActorBlock(rounds=20),
        critic=CriticBlock(),
        consensus=ConsensusBlock(t_gossip=2),
        seed=77,
        replicas=2,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestBuildReplica:
    def test_deterministic(self):
        cfg = micro_config()
        env_a, _, team_a, critic_a, mix_a, chain_a = build_replica(cfg, 0)
        env_b, _, team_b, critic_b, mix_b, chain_b = build_replica(cfg, 0)
        assert env_a.landmarks == env_b.landmarks
        assert env_a.initial_state == env_b.initial_state
        assert chain_a.state == chain_b.state
        for i in range(2):
            assert np.array_equal(team_a.flat(i), team_b.flat(i))
        assert np.array_equal(flatten_mats(critic_a.net.snapshot),
                              flatten_mats(critic_b.net.snapshot))
        assert np.array_equal(mix_a, mix_b)

    def test_replicas_differ(self):
        cfg = micro_config()
        _, _, team_a, _, _, _ = build_replica(cfg, 0)
        _, _, team_b, _, _, _ = build_replica(cfg, 1)
        assert not np.array_equal(team_a.flat(0), team_b.flat(0))

    def test_shapes_follow_config(self):
        cfg = micro_config(net=NetBlock(m=4, depth=3))
        env, encoder, team, critic, mix, _ = build_replica(cfg, 0)
        assert team.nets[0].width == 4
        assert team.nets[0].depth == 3
        assert critic.net.input_dim == encoder.pair_dim
        assert mix.shape == (2, 2)


class TestBuildGraph:
    def test_topologies(self):
        assert len(build_graph(micro_config()).edges) == 1
        ring = micro_config(env=EnvBlock(n_agents=4, width=5, height=3),
                            consensus=ConsensusBlock(topology="ring"))
        assert len(build_graph(ring).edges) == 4
        star = micro_config(env=EnvBlock(n_agents=4, width=5, height=3),
                            consensus=ConsensusBlock(topology="star"))
        assert build_graph(star).degrees()[0] == 3

    def test_erdos_keyed_by_seed(self):
        base = dict(env=EnvBlock(n_agents=5, width=5, height=3),
                    consensus=ConsensusBlock(topology="erdos", erdos_p=0.5))
        a = build_graph(micro_config(seed=1, **base))
        b = build_graph(micro_config(seed=1, **base))
        c = build_graph(micro_config(seed=2, **base))
        assert a.edges == b.edges
        assert a.is_connected() and c.is_connected()


class TestEpisodeRecords:
    def synthetic_log(self):
        def row(t, episodes_done, norms, alpha):
            return {
                "round": t, "alpha": alpha, "episodes_done": episodes_done,
                "td_loss": [0.5, 1.5], "ball_hits": 0,
                "param_disagreement": 0.1, "param_disagreement_mixed": 0.01,
                "td_disagreement": 0.2, "td_disagreement_mixed": 0.02,
                "step_norms": norms,
            }

        rounds = [
            row(1, 0, [1.0, 1.0], 1.0),
            row(2, 0, [0.5, 0.0], 0.5),
            row(3, 1, [1.0 / 3.0 + 1e-5, 1.0 / 3.0], 1.0 / 3.0),
            row(4, 1, [0.25, 0.25], 0.25),
            row(5, 2, [0.2, 0.2], 0.2),
        ]
        episodes = [
            {"episode": 0, "steps": 10, "raw_reward_sum": -20.0,
             "raw_reward_mean": -2.0},
            {"episode": 1, "steps": 10, "raw_reward_sum": -10.0,
             "raw_reward_mean": -1.0},
        ]
        return TrainLog(rounds=rounds, episodes=episodes, skips=1,
                        restart_events=0, total_steps=10)

    def test_rounds_attributed_to_open_episode(self):
        recs = episode_records(self.synthetic_log())
        assert len(recs) == 2
        # episode 0 was open at the start of rounds 1-3 (it closed during
        # round 3, whose row reports episodes_done=1); episode 1 spans 4-5
        assert recs[0]["rounds"] == 3
        assert recs[1]["rounds"] == 2
        assert recs[0]["raw_reward_mean"] == -2.0
        assert recs[1]["raw_reward_mean"] == -1.0

    def test_skip_and_norm_error_summary(self):
        recs = episode_records(self.synthetic_log())
        assert recs[0]["skips"] == 1
        assert recs[0]["step_norm_err"] == pytest.approx(1e-5, rel=1e-6)
        assert recs[1]["skips"] == 0
        assert recs[1]["step_norm_err"] == 0.0

    def test_means_over_rounds(self):
        recs = episode_records(self.synthetic_log())
        assert recs[0]["td_loss"] == pytest.approx(1.0)
        assert recs[0]["param_disagreement"] == pytest.approx(0.1)
        assert recs[0]["record"] == "episode"


class TestWriteReplica:
    def test_layout_and_summary(self, tmp_path):
        cfg = micro_config()
        row = write_replica(cfg, 0, tmp_path)
        rep = tmp_path / "replica_000"
        assert (rep / "runlog.jsonl").exists()
        assert (rep / "meta.json").exists()
        for name in ("policy_0.bin", "policy_1.bin", "value.bin"):
            assert (rep / name).exists()
            assert (rep / (name + ".json")).exists()
        lines = (rep / "runlog.jsonl").read_text().splitlines()
        meta = json.loads((rep / "meta.json").read_text())
        assert len(lines) == meta["episodes"] == row["episodes"]
        assert meta["schema"] == 1
        assert meta["replica"] == 0
        assert meta["config_hash"] == config_hash(cfg)
        assert row["config_hash"] == config_hash(cfg)
        # 20 rounds of one critic step plus one batch step, 10 per episode
        assert row["steps"] == 40
        assert row["episodes"] == 4
        assert row["step_norm_err_max"] <= 1e-12

    def test_byte_identical_reruns(self, tmp_path):
        cfg = micro_config()
        write_replica(cfg, 1, tmp_path / "a")
        write_replica(cfg, 1, tmp_path / "b")
        for name in ("runlog.jsonl", "meta.json", "policy_0.bin",
                     "policy_1.bin", "value.bin"):
            fa = (tmp_path / "a" / "replica_001" / name).read_bytes()
            fb = (tmp_path / "b" / "replica_001" / name).read_bytes()
            assert fa == fb, f"{name} differs between identical runs"


class TestRunTraining:
    def test_all_replicas_and_summary(self, tmp_path):
        cfg = micro_config()
        rows = run_training(cfg, tmp_path)
        assert len(rows) == 2
        assert [r["replica"] for r in rows] == [0, 1]
        with open(tmp_path / "summary.csv") as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == 2
        assert parsed[0]["config_hash"] == config_hash(cfg)
        assert int(parsed[1]["replica"]) == 1


class TestSweeps:
    def test_axes_frozen(self):
        assert set(SWEEP_AXES) == {"t_gossip", "width", "depth", "n_agents",
                                   "km", "signal"}
        assert SWEEP_AXES["t_gossip"] == [0, 10, 20]
        assert SWEEP_AXES["km"] == [(1, 1), (1, 5), (5, 1)]

    def test_cells_change_one_axis_only(self):
        cfg = micro_config()
        for axis in SWEEP_AXES:
            for label, cell in sweep_cells(cfg, axis):
                base = dataclasses.asdict(cfg)
                got = dataclasses.asdict(cell)
                diffs = []
                for block in base:
                    if isinstance(base[block], dict):
                        for key in base[block]:
                            if base[block][key] != got[block][key]:
                                diffs.append(f"{block}.{key}")
                    elif base[block] != got[block]:
                        diffs.append(block)
                allowed = {
                    "t_gossip": {"consensus.t_gossip"},
                    "width": {"net.m"},
                    "depth": {"net.depth"},
                    "n_agents": {"env.n_agents"},
                    "km": {"critic.iters", "actor.batch_len"},
                    "signal": {"actor.signal"},
                }[axis]
                assert set(diffs) <= allowed, f"{axis} cell {label} changed {diffs}"

    def test_labels(self):
        cfg = micro_config()
        assert [lbl for lbl, _ in sweep_cells(cfg, "t_gossip")] == [
            "t_gossip=0", "t_gossip=10", "t_gossip=20"]
        assert [lbl for lbl, _ in sweep_cells(cfg, "km")] == [
            "K=1,M=1", "K=1,M=5", "K=5,M=1"]
        assert [lbl for lbl, _ in sweep_cells(cfg, "depth")] == [
            "D=5", "D=20", "D=40"]

    def test_unknown_axis(self):
        with pytest.raises(ConfigError):
            sweep_cells(micro_config(), "radius")

    def test_run_sweep_layout(self, tmp_path):
        cfg = micro_config(replicas=1, actor=ActorBlock(rounds=6))
        rows = run_sweep(cfg, "signal", tmp_path)
        assert len(rows) == 2
        assert {r["cell"] for r in rows} == {"signal=td_error", "signal=q_value"}
        assert (tmp_path / "signal_td_error" / "replica_000" / "runlog.jsonl").exists()
        assert (tmp_path / "signal_q_value" / "summary.csv").exists()
        with open(tmp_path / "sweep_summary.csv") as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == 2
        assert parsed[0]["axis"] == "signal"


class TestMovingAverage:
    def brute(self, values, window):
        values = np.asarray(values, dtype=float)
        out = np.empty_like(values)
        for i in range(values.size):
            lo = max(0, i - window + 1)
            out[i] = values[lo:i + 1].mean()
        return out

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for window in (1, 2, 5, 9):
            vals = rng.normal(size=37)
            got = moving_average(vals, window)
            assert np.abs(got - self.brute(vals, window)).max() < 1e-12

    def test_window_one_is_identity(self):
        vals = np.array([3.0, -1.0, 2.0])
        assert np.allclose(moving_average(vals, 1), vals, atol=1e-15)

    def test_window_larger_than_series_gives_prefix_means(self):
        vals = np.array([2.0, 4.0, 6.0])
        assert np.allclose(moving_average(vals, 10), [2.0, 3.0, 4.0], atol=1e-12)

    def test_bad_window(self):
        with pytest.raises(ConfigError):
            moving_average([1.0], 0)


class TestPlotData:
    def test_rows_from_run_output(self, tmp_path):
        cfg = micro_config(replicas=1)
        run_training(cfg, tmp_path / "cellname")
        logs = list((tmp_path / "cellname").glob("*/runlog.jsonl"))
        rows = collect_plot_rows(logs, window=3)
        assert len(rows) == 4
        assert all(r["cell"] == "cellname" for r in rows)
        assert all(r["replica"] == 0 for r in rows)
        rewards = [r["raw_reward"] for r in rows]
        expected = moving_average(rewards, 3)
        got = [r["moving_avg"] for r in rows]
        assert np.allclose(got, expected, atol=1e-12)

    def test_csv_round_trip(self, tmp_path):
        rows = [{"cell": "c", "replica": 0, "episode": 0,
                 "raw_reward": -1.5, "moving_avg": -1.5}]
        out = tmp_path / "plot.csv"
        write_plot_csv(rows, out)
        with open(out) as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == 1
        assert parsed[0]["cell"] == "c"
        assert float(parsed[0]["raw_reward"]) == -1.5


class TestVerifyChecks:
    def test_all_pass(self):
        checks = verify_checks()
        names = [name for name, _, _ in checks]
        assert names == ["network-gradient", "restart-stationary",
                         "policy-gradient", "projection", "consensus-decay",
                         "single-agent-bridge"]
        for name, ok, detail in checks:
            assert ok, f"{name}: {detail}"

    def test_corrupt_gradient_control_fails(self):
        checks = dict((name, ok) for name, ok, _ in
                      verify_checks(corrupt_gradient=True))
        assert not checks["network-gradient"]
        assert checks["restart-stationary"]
        assert checks["projection"]
