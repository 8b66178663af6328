import numpy as np
import pytest

from advwm import coordinator, wm
from advwm.config import ArmConfig
from advwm.coordinator import init_run_state, run_arm, run_iteration, run_phase1
from advwm.pat_buffer import load_buffer
from advwm.policy import load_policy_checkpoint, policy_checksum
from advwm.wm import load_wm_checkpoint, trunk_checksum, cond_checksum


def tiny_config(**over):
    base = dict(
        mode="prowl",
        run_seed=0,
        total_iterations=9,
        t_wm=4,
        episodes_per_update=4,
        wm_steps_per_cycle=4,
        pat_epochs=2,
        buffer_capacity=6,
        phase1_steps=40,
        phase1_episodes=6,
        phase1_eval_episodes=2,
        phase1_eval_every=20,
        bc_epochs=2,
        trunk_hidden=(16,),
        cond_hidden=(8,),
        policy_hidden=(16,),
    )
    base.update(over)
    return ArmConfig(**base)


@pytest.fixture(scope="module")
def phase1_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("phase1")
    run_phase1(tiny_config(mode="phase1"), d)
    return d


class TestPhase1:
    def test_artifacts_exist(self, phase1_dir):
        for name in ("codec.json", "wm_phase1.ckpt", "ref_policy.ckpt", "phase1_eval.csv"):
            assert (phase1_dir / name).exists()

    def test_zero_steps_equals_initialization(self, tmp_path):
        cfg = tiny_config(mode="phase1", phase1_steps=0)
        run_phase1(cfg, tmp_path)
        params, _ = load_wm_checkpoint(tmp_path / "wm_phase1.ckpt")
        init = wm.init_wm_params(cfg.wm_init_seed, cfg.trunk_hidden, cfg.cond_hidden)
        assert trunk_checksum(params) == trunk_checksum(init)
        assert cond_checksum(params) == cond_checksum(init)

    def test_bitwise_identical_across_runs(self, phase1_dir, tmp_path):
        run_phase1(tiny_config(mode="phase1"), tmp_path)
        for name in ("codec.json", "wm_phase1.ckpt", "ref_policy.ckpt", "phase1_eval.csv"):
            assert (tmp_path / name).read_bytes() == (phase1_dir / name).read_bytes()

    def test_eval_csv_shape(self, phase1_dir):
        lines = (phase1_dir / "phase1_eval.csv").read_text().strip().split("\n")
        assert lines[0] == "step,eval_df_loss"
        assert len(lines) >= 3  # init, mid, final


class TestRunArm:
    def test_metrics_row_per_iteration(self, phase1_dir, tmp_path):
        art = run_arm(tiny_config(), tmp_path, phase1_dir)
        lines = art.metrics_csv.read_text().strip().split("\n")
        assert len(lines) == 1 + 9
        assert lines[0].startswith("iteration,episode_return,k3_kl,camera_velocity")

    def test_episode_seed_rule(self, phase1_dir, tmp_path):
        run_arm(tiny_config(total_iterations=8), tmp_path, phase1_dir)
        buf = load_buffer(tmp_path / "buffer")
        for e in buf.entries:
            it = int(e.traj_id.removeprefix("it"))
            assert e.trajectory.map_seed == 5000 + it
            assert e.trajectory.spawn_seed == 5000 + it
            assert e.trajectory.source.startswith("prowl")

    def test_rerun_byte_identical(self, phase1_dir, tmp_path):
        a = run_arm(tiny_config(), tmp_path / "a", phase1_dir)
        b = run_arm(tiny_config(), tmp_path / "b", phase1_dir)
        assert a.metrics_csv.read_bytes() == b.metrics_csv.read_bytes()
        assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
        assert (a.buffer_dir / "index.json").read_bytes() == (b.buffer_dir / "index.json").read_bytes()

    def test_frozen_ref_equals_prowl_without_ppo(self, phase1_dir, tmp_path):
        frozen = run_arm(tiny_config(mode="frozen_ref"), tmp_path / "f", phase1_dir)
        # PPO disabled by cadence: the update never fires
        noppo = run_arm(
            tiny_config(mode="prowl", episodes_per_update=1000), tmp_path / "n", phase1_dir
        )
        assert frozen.checkpoint.read_bytes() == noppo.checkpoint.read_bytes()
        assert frozen.metrics_csv.read_bytes() == noppo.metrics_csv.read_bytes()

    def test_frozen_ref_k3_zero_and_policy_untouched(self, phase1_dir, tmp_path):
        art = run_arm(tiny_config(mode="frozen_ref"), tmp_path, phase1_dir)
        lines = art.metrics_csv.read_text().strip().split("\n")[1:]
        k3_col = [float(line.split(",")[2]) for line in lines]
        assert all(v == 0.0 for v in k3_col)
        ref = load_policy_checkpoint(phase1_dir / "ref_policy.ckpt")
        final = load_policy_checkpoint(tmp_path / "policy_final.ckpt")
        assert policy_checksum(final) == policy_checksum(ref)

    def test_prowl_ppo_moves_policy(self, phase1_dir, tmp_path):
        run_arm(tiny_config(total_iterations=8), tmp_path, phase1_dir)
        ref = load_policy_checkpoint(phase1_dir / "ref_policy.ckpt")
        final = load_policy_checkpoint(tmp_path / "policy_final.ckpt")
        assert policy_checksum(final) != policy_checksum(ref)

    def test_wm_cycle_trains_cond_only(self, phase1_dir, tmp_path):
        art = run_arm(tiny_config(), tmp_path, phase1_dir)
        phase1, _ = load_wm_checkpoint(phase1_dir / "wm_phase1.ckpt")
        final, _ = load_wm_checkpoint(art.checkpoint)
        assert trunk_checksum(final) == trunk_checksum(phase1)
        assert cond_checksum(final) != cond_checksum(phase1)

    def test_mixture_r_one_uses_only_buffer(self, phase1_dir):
        cfg = tiny_config(mixture_r=1.0, total_iterations=4, t_wm=4)
        state = init_run_state(cfg, phase1_dir)
        state.passive = []  # empty passive set must not be touched at r=1
        for _ in range(4):
            run_iteration(state)
        cycle_rows = [r for r in state.metrics_rows if r.split(",")[6] == "1"]
        assert len(cycle_rows) == 1
        assert int(cycle_rows[0].split(",")[8]) == 0  # passive samples
        assert int(cycle_rows[0].split(",")[7]) == cfg.wm_steps_per_cycle * cfg.pat_epochs

    def test_phase1_mode_rejected(self, phase1_dir, tmp_path):
        with pytest.raises(ValueError, match="adversarial arms"):
            run_arm(tiny_config(mode="phase1"), tmp_path, phase1_dir)

    def test_abort_persists_state(self, phase1_dir, tmp_path, monkeypatch):
        cfg = tiny_config(total_iterations=6)
        calls = {"n": 0}
        orig = coordinator.run_iteration

        def exploding(state):
            if calls["n"] >= 3:
                raise RuntimeError("induced fault")
            calls["n"] += 1
            return orig(state)

        monkeypatch.setattr(coordinator, "run_iteration", exploding)
        with pytest.raises(RuntimeError, match="induced fault"):
            run_arm(cfg, tmp_path, phase1_dir)
        crash = tmp_path / "aborted"
        assert (crash / "wm_state.ckpt").exists()
        assert (crash / "metrics_partial.csv").exists()
        rows = (crash / "metrics_partial.csv").read_text().strip().split("\n")
        assert len(rows) == 1 + 3


class TestMixtureCounts:
    def test_buffer_sample_count_is_binomial(self, phase1_dir, tmp_path):
        # one cycle of M = steps * epochs mixture draws at r = 0.5
        cfg = tiny_config(total_iterations=4, t_wm=4, wm_steps_per_cycle=32, pat_epochs=4)
        art = run_arm(cfg, tmp_path, phase1_dir)
        rows = [l.split(",") for l in art.metrics_csv.read_text().strip().split("\n")[1:]]
        cycle = [r for r in rows if r[6] == "1"][0]
        n_buf, n_pass = int(cycle[7]), int(cycle[8])
        m = cfg.wm_steps_per_cycle * cfg.pat_epochs
        assert n_buf + n_pass == m
        sigma = np.sqrt(m * 0.25)
        assert abs(n_buf - m * 0.5) <= 4 * sigma
