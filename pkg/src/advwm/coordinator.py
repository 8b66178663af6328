"""Training orchestration: passive pretraining and the adversarial loop.

One adversarial iteration runs six steps in order: roll an episode, score
it against the world model's own prediction of it, insert it into the
prioritized buffer, hand the error back as the terminal reward, update the
policy on its cadence, and on the world-model cadence fine-tune the
conditioning subset on a buffer/passive mixture and rescore the buffer.
The frozen_ref mode is the same loop with the policy pinned to the
reference and the PPO step skipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env, policy, wm
from .config import ArmConfig
from .latent import LatentCodec, build_codec, codec_checksum, load_codec, save_codec
from .pat_buffer import PatBuffer, save_buffer
from .scoring import composite_score, compute_stats, measure_trajectory
from .seeding import (
    STREAM_EPISODE, STREAM_PPO, STREAM_WM_CYCLE, scoring_rng, substream,
)

log = logging.getLogger(__name__)

EPISODE_SEED_BASE = 5000  # episode seed rule: 5000 + iteration

METRICS_HEADER = (
    "iteration,episode_return,k3_kl,camera_velocity,buffer_mean_regret,"
    "buffer_size,wm_cycle,wm_buffer_samples,wm_passive_samples,ppo_update"
)


@dataclass
class RunState:
    """Everything one arm mutates while it runs."""

    cfg: ArmConfig
    codec: LatentCodec
    wm_state: wm.WmTrainState
    ref_policy: policy.MlpParams
    policy_state: policy.PolicyTrainState
    buffer: PatBuffer
    passive: list[env.Trajectory]
    iteration: int = 0
    pending_batches: list[policy.RolloutBatch] = field(default_factory=list)
    metrics_rows: list[str] = field(default_factory=list)


def _fmt(x: float) -> str:
    return repr(float(x))


def rollout_episode(
    actor: policy.MlpParams, cfg: ArmConfig, iteration: int, traj_id: str
) -> tuple[env.Trajectory, policy.RolloutBatch]:
    """One on-policy episode; returns the trajectory and its PPO records."""
    ep_seed = EPISODE_SEED_BASE + iteration
    world, state, frame = env.env_reset(ep_seed, ep_seed)
    rng = substream(cfg.run_seed, STREAM_EPISODE, iteration)
    t_len = cfg.episode_len
    feats = np.empty((t_len, policy.N_FEATURES))
    yaw = np.empty(t_len, dtype=int)
    pitch = np.empty(t_len, dtype=int)
    buttons = np.empty((t_len, 8), dtype=int)
    logps = np.empty(t_len)
    values = np.empty(t_len)
    actions: list[env.Action] = []
    frames = np.empty((t_len, env.N_RAYS))
    for t in range(t_len):
        f = policy.policy_features(frame, state.yaw, state.pitch)
        action, lp, value = policy.act(actor, f, rng)
        feats[t] = f
        yaw[t], pitch[t] = action.yaw_bin, action.pitch_bin
        buttons[t] = action.buttons
        logps[t] = lp["joint"]
        values[t] = value
        actions.append(action)
        state, frame = env.env_step(world, state, action)
        frames[t] = frame
    traj = env.Trajectory(traj_id, ep_seed, ep_seed, cfg.arm_id, actions, frames)
    batch = policy.RolloutBatch(feats, yaw, pitch, buttons, logps, values, reward=0.0)
    return traj, batch


def run_iteration(state: RunState) -> None:
    """One pass of the six-step adversarial loop."""
    cfg = state.cfg
    it = state.iteration
    actor = state.ref_policy if cfg.mode == "frozen_ref" else state.policy_state.params
    # mode-independent id: the per-id scoring stream must be identical
    # across arms for the frozen_ref == prowl-minus-PPO equivalence to be
    # bitwise; the arm identity travels in the trajectory's source field
    traj_id = f"it{it:06d}"

    # (1) explore
    traj, batch = rollout_episode(actor, cfg, it, traj_id)
    if cfg.mode == "frozen_ref":
        k3 = 0.0  # the actor is the reference
    else:
        k3_vals = [
            policy.k3_kl_estimate(
                batch.logp_old[t],
                policy.action_logp(state.ref_policy, batch.features[t], traj.actions[t]),
            )
            for t in range(len(traj))
        ]
        k3 = float(np.mean(k3_vals))
    cam_vel = policy.camera_velocity(traj.actions)

    # (2) score against the world model's own rollout
    scores = measure_trajectory(
        state.wm_state.params, state.codec, traj, scoring_rng(traj_id),
        cfg.seed_chunks, cfg.horizon_chunks,
    )

    # (4) terminal reward (computed before insert so composite uses the
    # same statistics the buffer will assign)
    if cfg.reward_source == "composite":
        stats = compute_stats(
            [e.scores.l_regret for e in state.buffer.entries] + [scores.l_regret],
            [e.scores.l_afs for e in state.buffer.entries] + [scores.l_afs],
        )
        reward = composite_score(scores, stats, cfg.lambda_afs, cfg.beta_prog)
    else:
        reward = scores.l_regret
    batch.reward = reward

    # (3) curate
    state.buffer.insert(traj, scores, it)

    # (5) PPO on its cadence; frozen_ref never updates
    ppo_ran = 0
    if cfg.mode != "frozen_ref":
        state.pending_batches.append(batch)
        if len(state.pending_batches) >= cfg.episodes_per_update:
            update_idx = (it + 1) // cfg.episodes_per_update
            rng = substream(cfg.run_seed, STREAM_PPO, update_idx)
            state.policy_state, _ = policy.ppo_update(
                state.policy_state, state.ref_policy, state.pending_batches, cfg.ppo(), rng
            )
            state.pending_batches = []
            ppo_ran = 1

    # (6) world-model cycle on its cadence
    wm_cycle, n_buf, n_passive = 0, 0, 0
    if (it + 1) % cfg.t_wm == 0:
        wm_cycle = 1
        cycle_idx = (it + 1) // cfg.t_wm
        rng = substream(cfg.run_seed, STREAM_WM_CYCLE, cycle_idx)
        n_samples = cfg.wm_steps_per_cycle * cfg.pat_epochs
        train_cfg = cfg.wm_train("cond_only")
        samples: list[env.Trajectory] = []
        for _ in range(n_samples):
            if rng.random() < cfg.mixture_r:
                samples.append(state.buffer.sample(1, it, rng)[0].trajectory)
                n_buf += 1
            else:
                samples.append(state.passive[int(rng.integers(len(state.passive)))])
                n_passive += 1
        state.wm_state, _ = wm.finetune(state.wm_state, samples, state.codec, rng, train_cfg)
        state.buffer.rescore_all(state.wm_state.params, state.codec, it)

    state.metrics_rows.append(
        ",".join(
            [
                str(it), _fmt(reward), _fmt(k3), _fmt(cam_vel),
                _fmt(state.buffer.mean_regret()), str(len(state.buffer)),
                str(wm_cycle), str(n_buf), str(n_passive), str(ppo_ran),
            ]
        )
    )
    state.iteration += 1


@dataclass
class Phase1Artifacts:
    codec_path: Path
    wm_path: Path
    ref_path: Path
    eval_csv: Path


def run_phase1(cfg: ArmConfig, outdir: str | Path) -> Phase1Artifacts:
    """Pretrain the world model on passive demonstrations (all parameters)
    and behavior-clone the frozen reference policy from the same data."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    codec = build_codec(cfg.codec_seed)
    save_codec(codec, outdir / "codec.json")

    passive = env.gen_passive_dataset(
        cfg.passive_kind, cfg.phase1_episodes, cfg.episode_len, cfg.passive_base_seed
    )
    heldout = env.gen_passive_dataset(
        cfg.passive_kind, cfg.phase1_eval_episodes, cfg.episode_len,
        cfg.passive_base_seed + 500000,
    )

    params = wm.init_wm_params(cfg.wm_init_seed, cfg.trunk_hidden, cfg.cond_hidden)
    train_cfg = wm.WmTrainConfig(
        lr=cfg.phase1_lr, max_grad_norm=cfg.wm_max_grad_norm,
        subset="all", batch_size=cfg.phase1_batch_size,
    )
    state = wm.init_train_state(params, train_cfg)
    rng = substream("phase1-train", cfg.wm_init_seed)
    eval_rows = ["step,eval_df_loss"]

    def eval_loss(params_now: wm.WmParams) -> float:
        ev = substream("phase1-eval", cfg.wm_init_seed)
        return float(
            np.mean([wm.trajectory_df_loss(params_now, t, codec, ev, 4) for t in heldout])
        )

    eval_rows.append(f"0,{_fmt(eval_loss(state.params))}")
    for step in range(1, cfg.phase1_steps + 1):
        batch = [
            passive[int(rng.integers(len(passive)))]
            for _ in range(cfg.phase1_batch_size)
        ]
        state, _ = wm.finetune(state, batch, codec, rng, train_cfg)
        if step % cfg.phase1_eval_every == 0 or step == cfg.phase1_steps:
            eval_rows.append(f"{step},{_fmt(eval_loss(state.params))}")
    (outdir / "phase1_eval.csv").write_text("\n".join(eval_rows) + "\n")
    wm.save_wm_checkpoint(outdir / "wm_phase1.ckpt", state.params, cfg.codec_seed)

    ref = policy.bc_pretrain(
        passive, cfg.bc_epochs, cfg.bc_seed, cfg.policy_hidden
    )
    policy.save_policy_checkpoint(outdir / "ref_policy.ckpt", ref)
    return Phase1Artifacts(
        outdir / "codec.json", outdir / "wm_phase1.ckpt",
        outdir / "ref_policy.ckpt", outdir / "phase1_eval.csv",
    )


@dataclass
class ArmArtifacts:
    checkpoint: Path
    buffer_dir: Path
    metrics_csv: Path


def init_run_state(cfg: ArmConfig, phase1_dir: str | Path) -> RunState:
    phase1_dir = Path(phase1_dir)
    codec = load_codec(phase1_dir / "codec.json")
    if codec.seed != cfg.codec_seed:
        raise ValueError(
            f"config codec_seed {cfg.codec_seed} does not match phase-1 codec {codec.seed}"
        )
    params, _ = wm.load_wm_checkpoint(phase1_dir / "wm_phase1.ckpt")
    ref = policy.load_policy_checkpoint(phase1_dir / "ref_policy.ckpt")
    wm_state = wm.init_train_state(params, cfg.wm_train("cond_only"))
    policy_state = policy.init_policy_train_state(
        policy.MlpParams([(w.copy(), b.copy()) for w, b in ref.layers])
    )
    buffer = PatBuffer(
        capacity=cfg.buffer_capacity, rho_stale=cfg.rho_stale,
        lambda_afs=cfg.lambda_afs, beta_prog=cfg.beta_prog,
        seed_chunks=cfg.seed_chunks, horizon_chunks=cfg.horizon_chunks,
    )
    passive = env.gen_passive_dataset(
        cfg.passive_kind, cfg.phase1_episodes, cfg.episode_len, cfg.passive_base_seed
    )
    return RunState(cfg, codec, wm_state, ref, policy_state, buffer, passive)


def run_arm(
    cfg: ArmConfig, outdir: str | Path, phase1_dir: str | Path
) -> ArmArtifacts:
    """Run one full arm; every artifact is a pure function of the config.

    A fault in any iteration persists the current state under
    outdir/aborted and re-raises.
    """
    if cfg.mode == "phase1":
        raise ValueError("run_arm handles adversarial arms; use run_phase1 for mode=phase1")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    state = init_run_state(cfg, phase1_dir)
    codec_sum = codec_checksum(state.codec)
    ref_sum = policy.policy_checksum(state.ref_policy)
    try:
        for _ in range(cfg.total_iterations):
            run_iteration(state)
            if codec_checksum(state.codec) != codec_sum:
                raise RuntimeError("frozen codec was modified during training")
            if policy.policy_checksum(state.ref_policy) != ref_sum:
                raise RuntimeError("frozen reference policy was modified during training")
    except Exception:
        crash_dir = outdir / "aborted"
        crash_dir.mkdir(parents=True, exist_ok=True)
        wm.save_wm_checkpoint(crash_dir / "wm_state.ckpt", state.wm_state.params, cfg.codec_seed)
        if state.buffer.entries:
            save_buffer(state.buffer, crash_dir / "buffer")
        (crash_dir / "metrics_partial.csv").write_text(
            METRICS_HEADER + "\n" + "\n".join(state.metrics_rows) + "\n"
        )
        log.error("arm %s aborted at iteration %d; state in %s",
                  cfg.arm_id, state.iteration, crash_dir)
        raise

    ckpt = outdir / "wm_final.ckpt"
    wm.save_wm_checkpoint(ckpt, state.wm_state.params, cfg.codec_seed)
    policy.save_policy_checkpoint(outdir / "policy_final.ckpt", state.policy_state.params)
    buffer_dir = outdir / "buffer"
    save_buffer(state.buffer, buffer_dir)
    metrics_csv = outdir / "metrics.csv"
    metrics_csv.write_text(METRICS_HEADER + "\n" + "\n".join(state.metrics_rows) + "\n")
    return ArmArtifacts(ckpt, buffer_dir, metrics_csv)
