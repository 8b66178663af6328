"""Acceptance suite: every exit criterion, one printed PASS/FAIL line each.

The directional criteria run full desk-scale arms (phase-1 pretraining plus
prowl / frozen_ref / anchoring-sweep arms over three run seeds) under one
session fixture; everything downstream reads those artifacts. Budget is
dominated by the arm runs (about ten minutes total on a desktop CPU).
"""

import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats as scipy_stats

from advwm import wm
from advwm.config import ArmConfig
from advwm.coordinator import run_arm, run_phase1
from advwm.env import NO_OP, Action, gen_passive_dataset
from advwm.evalsuite import eval_checkpoint, long_horizon_eval
from advwm.fingerprint import fingerprint, novel_modes
from advwm.latent import build_codec, load_codec
from advwm.numerics import (
    MlpParams, finite_diff_grad, init_mlp, mlp_backward, mlp_forward,
)
from advwm.pat_buffer import PatBuffer, load_buffer
from advwm.policy import (
    PpoConfig, act, action_logp, analytic_kl, gae, init_policy,
    k3_kl_estimate, head_outputs,
)
from advwm.scoring import (
    TrajectoryScore, afs_epe, composite_score, compute_stats, latent_regret,
    motion_field, pixel_mse, znorm,
)
from advwm.seeding import scoring_rng, substream
from advwm.wm import (
    D_LAT, K, MAX_T, WmTrainConfig, build_window, df_loss, finetune,
    init_train_state, init_wm_params, rollout, sample_chunk, serialize_actions,
    trajectory_df_loss,
)

RUN_SEEDS = (0, 1, 2)
PROWL_KW = dict(advantage_scale=8.0, entropy_coef=0.15)
N_ITER_GAIN = 500
N_ITER_ANCHOR = 200


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Phase-1 checkpoint plus all directional-criterion arms."""
    root = tmp_path_factory.mktemp("acceptance")
    run_phase1(ArmConfig(mode="phase1"), root / "phase1")
    arms = {}
    for rs in RUN_SEEDS:
        arms[("prowl", rs)] = run_arm(
            ArmConfig(mode="prowl", c_kl=1.0, total_iterations=N_ITER_GAIN,
                      run_seed=rs, **PROWL_KW),
            root / f"prowl-s{rs}", root / "phase1",
        )
        arms[("frozen", rs)] = run_arm(
            ArmConfig(mode="frozen_ref", c_kl=1.0, total_iterations=N_ITER_GAIN,
                      run_seed=rs),
            root / f"frozen-s{rs}", root / "phase1",
        )
        arms[("kl0", rs)] = run_arm(
            ArmConfig(mode="prowl", c_kl=0.0, total_iterations=N_ITER_ANCHOR,
                      run_seed=rs, **PROWL_KW),
            root / f"kl0-s{rs}", root / "phase1",
        )
        arms[("kl15", rs)] = run_arm(
            ArmConfig(mode="prowl", c_kl=1.5, total_iterations=N_ITER_ANCHOR,
                      run_seed=rs, **PROWL_KW),
            root / f"kl15-s{rs}", root / "phase1",
        )
    return root, arms


def metric_column(metrics_csv: Path, name: str) -> np.ndarray:
    lines = metrics_csv.read_text().strip().split("\n")
    idx = lines[0].split(",").index(name)
    return np.array([float(l.split(",")[idx]) for l in lines[1:]])


@pytest.fixture(scope="session")
def heldout_medians(workspace):
    """Median held-out metrics (climber+builder, unseen maps) per arm."""
    root, arms = workspace
    codec = load_codec(root / "phase1" / "codec.json")
    dataset = (
        gen_passive_dataset("climber", 32, 12, 700000)
        + gen_passive_dataset("builder", 32, 12, 800000)
    )

    def evaluate(ckpt):
        params, _ = wm.load_wm_checkpoint(ckpt)
        recs = eval_checkpoint(params, codec, dataset, 12345)
        return {m: float(np.mean([r[m] for r in recs]))
                for m in ("l_regret", "l_afs", "pixel_mse")}

    phase1 = evaluate(root / "phase1" / "wm_phase1.ckpt")
    out = {"phase1": phase1}
    for kind in ("prowl", "frozen"):
        per_seed = [evaluate(arms[(kind, rs)].checkpoint) for rs in RUN_SEEDS]
        out[kind] = {m: float(np.median([s[m] for s in per_seed]))
                     for m in ("l_regret", "l_afs", "pixel_mse")}
    return out


class TestGradientCorrectness:
    def test_gradients_match_finite_differences(self):
        """Every trainable net: analytic vs central differences, 20 seeds."""
        worst = 0.0
        for seed in range(20):
            rng = substream(4000 + seed)
            sizes = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(2, 4)) + 1)]
            params = init_mlp(sizes, rng)
            x = rng.standard_normal(sizes[0])
            up = rng.standard_normal(sizes[-1])
            analytic, _ = mlp_backward(params, x, up)

            def loss(arrays):
                return float(np.dot(mlp_forward(MlpParams.from_flat(arrays), x), up))

            numeric = finite_diff_grad(loss, params.flat(), h=1e-6)
            for a, n in zip(analytic, numeric):
                ok = np.allclose(a, n, rtol=1e-5, atol=1e-8)
                gap = float(np.max(np.abs(a - n) / np.maximum(np.abs(n), 1e-8)))
                worst = max(worst, gap)
                assert ok
        report("gradient-correctness", True, f"20 seeded nets, worst rel err {worst:.2e}")


class TestDiffusionForcingSuite:
    def test_zero_loss_oracle(self):
        params = init_wm_params(0, (16,), (8,))
        win = build_window(np.zeros((6, D_LAT)), "idle x3")
        clean = substream(1).standard_normal((K, D_LAT))

        def oracle(x):
            slots = x[: MAX_T * D_LAT].reshape(MAX_T, D_LAT)
            sig = x[MAX_T * D_LAT : MAX_T * D_LAT + MAX_T][win.target_slots][:, None]
            eps = (slots[win.target_slots] - (1 - sig) * clean) / sig
            return (eps - clean).ravel()

        loss, _ = df_loss(params, win, clean, substream(2), dropout_active=False,
                          trunk_fn=oracle)
        report("df-zero-loss-oracle", loss < 1e-18, f"loss {loss:.2e}")

    def test_sigma_endpoint(self):
        params = init_wm_params(0, (16,), (8,))
        clean = substream(3).standard_normal((K, D_LAT))
        win = build_window(np.zeros((2, D_LAT)), "idle", target_sigmas=np.zeros(K))
        seen = {}

        def probe(x):
            seen["slots"] = x[: MAX_T * D_LAT].reshape(MAX_T, D_LAT).copy()
            return np.zeros(K * D_LAT)

        df_loss(params, win, clean, substream(4), dropout_active=False, trunk_fn=probe)
        ok = np.array_equal(seen["slots"][win.target_slots], clean)
        report("df-sigma-endpoint", ok, "sigma=0 slot equals clean latent")

    def test_monte_carlo_zero_model(self):
        params = init_wm_params(0, (16,), (8,))
        win = build_window(np.zeros((6, D_LAT)), "idle x3")
        rng = substream(5)
        zero = lambda x: np.zeros(K * D_LAT)
        losses = [
            df_loss(params, win, rng.standard_normal((K, D_LAT)), rng,
                    dropout_active=False, trunk_fn=zero)[0]
            for _ in range(10000)
        ]
        mean = float(np.mean(losses))
        ok = abs(mean - 2.0) / 2.0 < 0.05
        report("df-monte-carlo", ok, f"mean loss {mean:.4f} vs 2.0 +/-5%, 10000 draws")

    def test_overfit_oracle(self):
        codec = build_codec(11)
        traj = gen_passive_dataset("walker", 1, 12, 40)[0]
        params = init_wm_params(36, trunk_hidden=(256, 256), cond_hidden=(16,))
        initial = trajectory_df_loss(params, traj, codec, substream(37), n_windows=16)
        state = None
        rng = substream(38)
        steps = 0
        for lr, n in ((1e-2, 500), (3e-3, 1000), (5e-4, 500)):
            cfg = WmTrainConfig(lr=lr, subset="all", batch_size=128)
            if state is None:
                state = init_train_state(params, cfg)
            for _ in range(n):
                state, _ = finetune(state, [traj] * 128, codec, rng, cfg)
            steps += n
        final = trajectory_df_loss(state.params, traj, codec, substream(37), n_windows=16)
        ok = final < 0.10 * initial and steps == 2000
        report("df-overfit-oracle", ok,
               f"df_loss {initial:.3f} -> {final:.3f} ({final / initial:.1%}) in {steps} steps")


class TestSamplerRollout:
    def test_cfg_scale_one_identity(self):
        params = init_wm_params(13, (16,), (8,))
        win = build_window(substream(14).standard_normal((6, D_LAT)), "fwd x3")
        got = sample_chunk(params, win, substream(15), cfg_scale=1.0)
        rng = substream(15)
        eps = rng.standard_normal((MAX_T, D_LAT))
        slots = (1.0 - win.sigmas)[:, None] * win.base + win.sigmas[:, None] * eps
        cond = mlp_forward(params.cond_adapter, wm._raw_embedding(params, win.token_str))
        sig = win.sigmas.copy()
        d = 1.0 / 20
        for step in range(20):
            sig[win.target_slots] = 1.0 - step * d
            v = mlp_forward(params.trunk, np.concatenate([slots.ravel(), sig, cond]))
            slots[win.target_slots] = slots[win.target_slots] - d * v.reshape(K, D_LAT)
        ok = np.array_equal(got, slots[win.target_slots])
        report("sampler-cfg1-identity", ok, "bitwise equal to conditional-only sampler")

    def test_constant_velocity_exact(self):
        c = substream(16).standard_normal(K * D_LAT)
        trunk = MlpParams([
            (np.zeros((wm.TRUNK_IN, 4)), np.zeros(4)),
            (np.zeros((4, K * D_LAT)), c.copy()),
        ])
        base = init_wm_params(0, (16,), (8,))
        params = wm.WmParams(trunk, base.cond_adapter, base.embed_table, base.embed_seed)
        win = build_window(np.zeros((6, D_LAT)), "idle x3")
        got = sample_chunk(params, win, substream(17), n_steps=20, cfg_scale=1.5)
        eps = substream(17).standard_normal((MAX_T, D_LAT))
        gap = float(np.abs(got - (eps[win.target_slots] - c.reshape(K, D_LAT))).max())
        report("sampler-constant-velocity", gap < 1e-12, f"max gap {gap:.2e}")

    def test_window_layout(self):
        win = build_window(np.zeros((6, D_LAT)), "idle x3")
        ok = (
            list(win.roles) == [0] * 6 + [1] * 3 + [2] * 12
            and np.all(win.sigmas[9:] == 1.0)
            and np.all(win.sigmas[:6] == wm.HIST_SIGMA)
        )
        report("rollout-window-layout", ok, "slots 0-5 history, 6-8 target, 9-20 pads at sigma 1")

    def test_rollout_bitwise_determinism(self):
        params = init_wm_params(24, (16,), (8,))
        seed_l = substream(26).standard_normal((6, D_LAT))
        a = rollout(params, seed_l, [NO_OP] * 12, 2, substream(27))
        b = rollout(params, seed_l, [NO_OP] * 12, 2, substream(27))
        report("rollout-determinism", np.array_equal(a, b), "identical chunks across reruns")


class TestBufferSuite:
    def test_capacity_eviction_ties(self):
        buf = PatBuffer(capacity=2, lambda_afs=0.0)
        trajs = gen_passive_dataset("walker", 4, 12, 9100)
        buf.insert(trajs[0], TrajectoryScore(0.4, 0.0, 0.0), 0)
        buf.insert(trajs[1], TrajectoryScore(0.6, 0.0, 0.0), 1)
        evicted_tie = buf.insert(trajs[2], TrajectoryScore(0.5, 0.0, 0.0), 2)
        buf2 = PatBuffer(capacity=2, lambda_afs=0.0)
        buf2.insert(trajs[0], TrajectoryScore(0.4, 0.0, 0.0), 0)
        buf2.insert(trajs[1], TrajectoryScore(0.8, 0.0, 0.0), 1)
        evicted_self = buf2.insert(trajs[3], TrajectoryScore(0.2, 0.0, 0.0), 2)
        ok = (evicted_tie == trajs[0].traj_id and evicted_self == trajs[3].traj_id
              and len(buf) == 2 and len(buf2) == 2)
        report("buffer-eviction-rules", ok, "min-priority eviction with age tie-break")

    def test_mixture_sampling_chi_square(self):
        buf = PatBuffer(capacity=4, rho_stale=0.1)
        trajs = gen_passive_dataset("walker", 2, 12, 9200)
        buf.insert(trajs[0], TrajectoryScore(0.9, 0.0, 0.0), 0)
        buf.insert(trajs[1], TrajectoryScore(0.1, 0.0, 0.0), 1)
        buf.entries[0].priority, buf.entries[1].priority = 2.0, 1.0
        buf.entries[0].last_scored_iter = 15
        buf.entries[1].last_scored_iter = 5
        p = buf.sample_probs(20)
        closed_form_ok = np.abs(p - [0.625, 0.375]).max() < 1e-12
        draws = substream(9300).choice(2, size=100000, p=p)
        counts = np.bincount(draws, minlength=2)
        _, pval = scipy_stats.chisquare(counts, 100000 * p)
        ok = closed_form_ok and pval > 0.01
        report("buffer-mixture-sampling", ok,
               f"P=[0.625,0.375] exact, chi-square p={pval:.3f} over 100000 draws")

    def test_znorm_properties(self):
        regrets = substream(9400).random(40).tolist()
        stats = compute_stats(regrets, regrets)
        zs = np.array([znorm(stats, v, "regret") for v in regrets])
        ok = abs(zs.mean()) < 1e-10 and abs(zs.std() - 1.0) < 1e-10
        report("buffer-znorm", ok, f"mean {zs.mean():.1e}, std-1 {zs.std() - 1:.1e}")

    def test_solved_trajectory_rank_drop(self):
        codec = build_codec(11)
        trajs = gen_passive_dataset("walker", 3, 12, 70)
        params = init_wm_params(5, (64, 64), (16,))
        buf = PatBuffer(capacity=8)
        from advwm.scoring import measure_trajectory

        for i, t in enumerate(trajs):
            buf.insert(t, measure_trajectory(params, codec, t, scoring_rng(t.traj_id)), i)
        buf.rescore_all(params, codec, 1)
        target = buf.entries[0]
        state = None
        rng = substream(72)
        for lr, n in ((1e-2, 200), (3e-3, 400), (3e-4, 200)):
            cfg = WmTrainConfig(lr=lr, subset="all", batch_size=32)
            if state is None:
                state = init_train_state(params, cfg)
            for _ in range(n):
                state, _ = finetune(state, [target.trajectory] * 32, codec, rng, cfg)
        buf.rescore_all(state.params, codec, 2)
        order = sorted(buf.entries, key=lambda e: -e.priority)
        ok = order[-1].traj_id == target.traj_id and target.scores.delta_regret < 0
        report("buffer-solved-rank-drop", ok,
               f"trained entry rank last, delta {target.scores.delta_regret:+.3f}")


class TestScoringSuite:
    def test_oracle_equivalence(self):
        rng = substream(9500)
        pred, real = rng.standard_normal((6, 8)), rng.standard_normal((6, 8))
        acc = sum(
            (pred[i, j] - real[i, j]) ** 2 for i in range(6) for j in range(8)
        )
        regret_gap = abs(latent_regret(pred, real) - math.sqrt(acc / 48))
        pf, rf = rng.random((6, 64)), rng.random((6, 64))
        step_norms = []
        for t in range(5):
            s = sum((pf[t + 1, j] - pf[t, j] - rf[t + 1, j] + rf[t, j]) ** 2 for j in range(64))
            step_norms.append(math.sqrt(s))
        afs_gap = abs(afs_epe(pf, rf) - np.mean(step_norms) / 64)
        ok = regret_gap < 1e-12 and afs_gap < 1e-12
        report("scoring-oracle-equivalence", ok,
               f"regret gap {regret_gap:.1e}, afs gap {afs_gap:.1e}")

    def test_order_reversal(self):
        u = substream(9600).standard_normal(64)
        u *= 0.01 / np.linalg.norm(u)
        real = 0.5 + np.stack([t * u for t in range(6)])
        frozen_pred = np.tile(real[0], (6, 1))
        offset_pred = real + 0.1
        mse_a, mse_b = pixel_mse(frozen_pred, real), pixel_mse(offset_pred, real)
        afs_a, afs_b = afs_epe(frozen_pred, real), afs_epe(offset_pred, real)
        ok = mse_a < mse_b and afs_a > afs_b
        report("scoring-order-reversal", ok,
               f"mse {mse_a:.2e}<{mse_b:.2e}, afs {afs_a:.2e}>{afs_b:.2e}")


class TestPpoKlSuite:
    def test_analytic_kl_zero_at_equality(self):
        params = init_policy(6)
        worst = max(
            abs(analytic_kl(params, params, substream(s).random(66))) for s in range(10)
        )
        report("ppo-kl-zero-at-equality", worst < 1e-12, f"max |KL| {worst:.1e}")

    def test_k3_pointwise_nonnegative(self):
        rng = substream(9700)
        vals = []
        for _ in range(10000):
            lp, lq = rng.uniform(-8, 0, size=2)
            vals.append(k3_kl_estimate(lp, lq))
        ok = min(vals) >= 0.0
        report("ppo-k3-nonnegative", ok, f"min over 10000 pairs {min(vals):.2e}")

    def test_ratio_one_at_epoch_start(self):
        params = init_policy(13)
        rng = substream(9800)
        worst = 0.0
        for _ in range(24):
            feats = rng.random(66)
            a, lp, _ = act(params, feats, rng)
            worst = max(worst, abs(lp["joint"] - action_logp(params, feats, a)))
        report("ppo-ratio-one", worst < 1e-12, f"max |logp drift| {worst:.1e}")

    def test_gae_worked_examples(self):
        adv1, ret1 = gae(np.array([1.0]), np.zeros(2), 0.99, 0.95)
        adv2, _ = gae(np.array([0.0, 1.0]), np.zeros(3), 0.99, 0.95)
        ok = adv1[0] == 1.0 and ret1[0] == 1.0 and abs(adv2[0] - 0.9405) < 1e-12 and adv2[1] == 1.0
        report("ppo-gae-examples", ok, f"advantages {adv1[0]:.4f}, {adv2.round(4)}")


class TestPhase1Criterion:
    def test_eval_loss_halves(self, workspace):
        root, _ = workspace
        lines = (root / "phase1" / "phase1_eval.csv").read_text().strip().split("\n")[1:]
        losses = [float(l.split(",")[1]) for l in lines]
        ratio = losses[-1] / losses[0]
        report("phase1-eval-decrease", ratio <= 0.5,
               f"eval df_loss {losses[0]:.3f} -> {losses[-1]:.3f} ({1 - ratio:.0%} decrease)")


class TestAnchoringDirectional:
    def test_kl0_exceeds_kl15_on_k3_and_camera(self, workspace):
        root, arms = workspace
        k3_0, k3_15, cv_0, cv_15 = [], [], [], []
        for rs in RUN_SEEDS:
            k3_0.append(metric_column(arms[("kl0", rs)].metrics_csv, "k3_kl")[-50:].mean())
            k3_15.append(metric_column(arms[("kl15", rs)].metrics_csv, "k3_kl")[-50:].mean())
            cv_0.append(metric_column(arms[("kl0", rs)].metrics_csv, "camera_velocity")[-50:].mean())
            cv_15.append(metric_column(arms[("kl15", rs)].metrics_csv, "camera_velocity")[-50:].mean())
        mk0, mk15 = np.median(k3_0), np.median(k3_15)
        mc0, mc15 = np.median(cv_0), np.median(cv_15)
        ok = mk0 > mk15 and mc0 > mc15
        report("anchoring-directional", ok,
               f"median final-50 k3 {mk0:.3f}>{mk15:.3f}, camvel {mc0:.3f}>{mc15:.3f}")


class TestCurriculumShape:
    def test_rise_then_fall(self, workspace):
        root, arms = workspace
        inits, halfmaxes, finalqs = [], [], []
        for rs in RUN_SEEDS:
            mr = metric_column(arms[("prowl", rs)].metrics_csv, "buffer_mean_regret")
            half, quarter = len(mr) // 2, len(mr) // 4
            inits.append(mr[0])
            halfmaxes.append(mr[:half].max())
            finalqs.append(mr[-quarter:].mean())
        mi, mh, mf = np.median(inits), np.median(halfmaxes), np.median(finalqs)
        ok = mh > mi and mh > mf
        report("curriculum-shape", ok,
               f"median init {mi:.3f} < first-half max {mh:.3f} > final-quartile {mf:.3f}")


class TestAdversarialGain:
    def test_prowl_beats_baselines(self, heldout_medians):
        h = heldout_medians
        vs_frozen = sum(
            h["prowl"][m] <= h["frozen"][m] for m in ("l_regret", "l_afs", "pixel_mse")
        )
        vs_phase1 = (
            h["prowl"]["l_regret"] <= h["phase1"]["l_regret"]
            and h["prowl"]["l_afs"] <= h["phase1"]["l_afs"]
        )
        detail = (
            f"regret p/f/1 {h['prowl']['l_regret']:.4f}/{h['frozen']['l_regret']:.4f}/"
            f"{h['phase1']['l_regret']:.4f}; afs {h['prowl']['l_afs']:.5f}/"
            f"{h['frozen']['l_afs']:.5f}/{h['phase1']['l_afs']:.5f}; "
            f"{vs_frozen}/3 metrics <= frozen_ref"
        )
        report("adversarial-gain", vs_frozen >= 2 and vs_phase1, detail)


class TestNovelModes:
    def test_prowl_buffers_contain_novel_modes(self, workspace):
        root, arms = workspace
        window = lambda trajs: [fingerprint(t.actions[6:12]).label for t in trajs]
        passive = gen_passive_dataset("walker", 200, 12, 100)
        candidates, kl0_sources, frozen_labels = {}, {}, []
        for rs in RUN_SEEDS:
            for kind in ("prowl", "kl15"):
                trajs = [e.trajectory for e in load_buffer(arms[(kind, rs)].buffer_dir).entries]
                candidates[f"{kind}-s{rs}"] = window(trajs)
            frozen_labels += window(
                [e.trajectory for e in load_buffer(arms[("frozen", rs)].buffer_dir).entries]
            )
            kl0_sources[f"kl0-s{rs}"] = window(
                [e.trajectory for e in load_buffer(arms[("kl0", rs)].buffer_dir).entries]
            )
        references = [window(passive), frozen_labels]
        novel = novel_modes(candidates, references)
        kl0_novel = novel_modes(kl0_sources, references)
        ok = len(novel) >= 1
        report("novel-modes", ok,
               f"{len(novel)} strictly novel modes in anchored prowl buffers; "
               f"c_kl=0 arm contributes {len(kl0_novel)} (reported)")


class TestLongHorizonCompounding:
    def test_error_compounds_for_phase1(self, workspace):
        root, _ = workspace
        codec = load_codec(root / "phase1" / "codec.json")
        params, _ = wm.load_wm_checkpoint(root / "phase1" / "wm_phase1.ckpt")
        long_ds = gen_passive_dataset("walker", 12, 60, 900000)
        recs = long_horizon_eval(params, codec, long_ds, 4, horizon_chunks=18)
        first = np.mean([r["l_regret_first"] for r in recs])
        final = np.mean([r["l_regret_final"] for r in recs])
        report("long-horizon-compounding", final >= first,
               f"final-chunk regret {final:.3f} >= first-chunk {first:.3f} over {len(recs)} clips")


class TestEndToEndDeterminism:
    def test_rerun_yields_identical_bytes(self, tmp_path):
        cfg = dict(
            mode="prowl", run_seed=5, total_iterations=9, t_wm=4,
            episodes_per_update=4, wm_steps_per_cycle=4, pat_epochs=2,
            buffer_capacity=6, phase1_steps=40, phase1_episodes=6,
            phase1_eval_episodes=2, phase1_eval_every=20, bc_epochs=2,
            trunk_hidden=(16,), cond_hidden=(8,), policy_hidden=(16,),
        )
        run_phase1(ArmConfig(**{**cfg, "mode": "phase1"}), tmp_path / "p1")
        a = run_arm(ArmConfig(**cfg), tmp_path / "a", tmp_path / "p1")
        b = run_arm(ArmConfig(**cfg), tmp_path / "b", tmp_path / "p1")
        ok = (
            a.metrics_csv.read_bytes() == b.metrics_csv.read_bytes()
            and a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
            and (a.buffer_dir / "index.json").read_bytes()
            == (b.buffer_dir / "index.json").read_bytes()
        )
        report("end-to-end-determinism", ok, "metrics, checkpoint, and buffer bytes identical")
