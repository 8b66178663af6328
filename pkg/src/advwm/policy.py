"""Factored actor-critic adversary with a KL anchor to a frozen reference.

One shared tanh trunk reads the frame plus two pose features; the output
layer carries every head at once: 9 yaw logits, 9 pitch logits, 8
independent button logits, and the value estimate. The action distribution
is the product of two categoricals and eight Bernoullis, which keeps
entropy and the KL to the reference exactly computable, so both sit in the
PPO loss analytically. The Schulman k3 estimator is logged purely as a
diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np

from .checkpoint import params_checksum, read_container, unpack_arrays, write_container
from .env import Action, N_RAYS, Trajectory, replay_features
from .numerics import (
    AdamState, MlpParams, adam_step, clip_global_norm, init_adam, init_mlp,
    mlp_backward, mlp_forward,
)
from .seeding import substream

log = logging.getLogger(__name__)

N_FEATURES = N_RAYS + 2
N_CAM_BINS = 9
N_BUTTONS = 8
N_OUT = 2 * N_CAM_BINS + N_BUTTONS + 1
_YAW = slice(0, 9)
_PITCH = slice(9, 18)
_BTN = slice(18, 26)
_VALUE = 26

POLICY_MAGIC = b"PRPL"

UNIFORM_NLL = 2 * np.log(N_CAM_BINS) + N_BUTTONS * np.log(2.0)  # ~9.9396
MAX_ENTROPY = UNIFORM_NLL  # factored distribution peaks at uniform logits


def init_policy(seed: int, hidden: Sequence[int] = (64, 64)) -> MlpParams:
    return init_mlp([N_FEATURES, *hidden, N_OUT], substream("policy", seed))


def policy_features(frame: np.ndarray, yaw: float, pitch: float) -> np.ndarray:
    return np.concatenate([frame, [yaw / 360.0, pitch / 90.0]])


def _log_softmax(u: np.ndarray) -> np.ndarray:
    shifted = u - u.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _sigmoid(b: np.ndarray) -> np.ndarray:
    out = np.empty_like(b)
    pos = b >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-b[pos]))
    e = np.exp(b[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class HeadOutputs:
    """Distribution pieces for a batch of states."""

    log_py: np.ndarray  # (B, 9)
    log_pp: np.ndarray  # (B, 9)
    btn_logits: np.ndarray  # (B, 8)
    p_btn: np.ndarray  # (B, 8)
    value: np.ndarray  # (B,)
    # stable Bernoulli log-probs for pressed / released
    log_b1: np.ndarray
    log_b0: np.ndarray


def head_outputs(params: MlpParams, feats: np.ndarray) -> HeadOutputs:
    out = mlp_forward(params, np.atleast_2d(feats))
    b = out[:, _BTN]
    return HeadOutputs(
        log_py=_log_softmax(out[:, _YAW]),
        log_pp=_log_softmax(out[:, _PITCH]),
        btn_logits=b,
        p_btn=_sigmoid(b),
        value=out[:, _VALUE],
        log_b1=-np.logaddexp(0.0, -b),
        log_b0=-np.logaddexp(0.0, b),
    )


def act(
    params: MlpParams, feats: np.ndarray, rng: np.random.Generator
) -> tuple[Action, dict[str, float], float]:
    """Sample one action; returns (action, per-head log-probs, value)."""
    h = head_outputs(params, feats)
    py, pp = np.exp(h.log_py[0]), np.exp(h.log_pp[0])
    yaw = int(rng.choice(N_CAM_BINS, p=py / py.sum()))
    pitch = int(rng.choice(N_CAM_BINS, p=pp / pp.sum()))
    presses = (rng.random(N_BUTTONS) < h.p_btn[0]).astype(int)
    lp_btn = float(np.sum(presses * h.log_b1[0] + (1 - presses) * h.log_b0[0]))
    logps = {
        "yaw": float(h.log_py[0, yaw]),
        "pitch": float(h.log_pp[0, pitch]),
        "buttons": lp_btn,
    }
    logps["joint"] = logps["yaw"] + logps["pitch"] + logps["buttons"]
    return Action(yaw, pitch, tuple(presses)), logps, float(h.value[0])


def action_logp(params: MlpParams, feats: np.ndarray, action: Action) -> float:
    """Joint log-probability of a given action."""
    h = head_outputs(params, feats)
    btns = np.array(action.buttons)
    return float(
        h.log_py[0, action.yaw_bin]
        + h.log_pp[0, action.pitch_bin]
        + np.sum(btns * h.log_b1[0] + (1 - btns) * h.log_b0[0])
    )


def _cat_kl(log_p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    return (np.exp(log_p) * (log_p - log_q)).sum(axis=-1)


def _bern_kl(h_p: HeadOutputs, h_q: HeadOutputs) -> np.ndarray:
    p = h_p.p_btn
    term1 = p * (h_p.log_b1 - h_q.log_b1)
    term0 = (1.0 - p) * (h_p.log_b0 - h_q.log_b0)
    return (term1 + term0).sum(axis=-1)


def analytic_kl(params: MlpParams, ref: MlpParams, feats: np.ndarray) -> float:
    """Exact KL(policy || ref) of the factored distribution at one state."""
    h, r = head_outputs(params, feats), head_outputs(ref, feats)
    kl = _cat_kl(h.log_py, r.log_py) + _cat_kl(h.log_pp, r.log_pp) + _bern_kl(h, r)
    return float(kl[0])


def entropy(params: MlpParams, feats: np.ndarray) -> float:
    h = head_outputs(params, feats)
    return float(_entropy_terms(h)[0])


def _entropy_terms(h: HeadOutputs) -> np.ndarray:
    hy = -(np.exp(h.log_py) * h.log_py).sum(axis=-1)
    hp = -(np.exp(h.log_pp) * h.log_pp).sum(axis=-1)
    hb = -(h.p_btn * h.log_b1 + (1.0 - h.p_btn) * h.log_b0).sum(axis=-1)
    return hy + hp + hb


def k3_kl_estimate(logp_policy: float, logp_ref: float) -> float:
    """Single-sample KL estimate (r - 1) - ln r with r = p_ref / p_policy."""
    d = logp_ref - logp_policy  # ln r
    return float(np.expm1(d) - d)


def camera_velocity(actions: Sequence[Action]) -> float:
    """Mean absolute camera-bin change per step, in bin-index units."""
    if len(actions) < 2:
        raise ValueError("camera velocity needs at least 2 actions")
    yaw = np.array([a.yaw_bin for a in actions])
    pitch = np.array([a.pitch_bin for a in actions])
    return float(np.mean((np.abs(np.diff(yaw)) + np.abs(np.diff(pitch))) / 2.0))


def gae(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation; values carries the T+1 bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1:
        raise ValueError("values must have length T+1 (terminal bootstrap)")
    adv = np.zeros(t_len)
    acc = 0.0
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv, adv + values[:-1]


@dataclass
class PpoConfig:
    c_kl: float = 1.0
    clip_eps: float = 0.2
    c_v: float = 0.5
    c_e: float = 0.05
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch: int = 256
    lr: float = 3e-3  # desk-scale default; full-scale runs used 3e-5
    advantage_scale: float = 1.0  # reward-unit calibration; see config docs
    max_grad_norm: float = 0.5
    episodes_per_update: int = 16
    kl_direction: str = "forward"  # "forward": KL(policy||ref); "reverse" for the ablation


@dataclass
class RolloutBatch:
    """One episode's on-policy records; reward is terminal, one-shot."""

    features: np.ndarray  # (T, N_FEATURES)
    yaw: np.ndarray  # (T,)
    pitch: np.ndarray  # (T,)
    buttons: np.ndarray  # (T, 8)
    logp_old: np.ndarray  # (T,) joint log-probs at collection time
    values: np.ndarray  # (T,)
    reward: float


@dataclass
class PolicyTrainState:
    params: MlpParams
    adam: AdamState


def init_policy_train_state(params: MlpParams) -> PolicyTrainState:
    return PolicyTrainState(params, init_adam(params.flat()))


def _loss_and_upstream(
    params: MlpParams,
    ref_heads: HeadOutputs,
    feats: np.ndarray,
    yaw: np.ndarray,
    pitch: np.ndarray,
    buttons: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
) -> tuple[float, np.ndarray, dict]:
    """Mean PPO loss over a minibatch and its gradient wrt the net output."""
    n = feats.shape[0]
    h = head_outputs(params, feats)
    rows = np.arange(n)
    logp_new = (
        h.log_py[rows, yaw]
        + h.log_pp[rows, pitch]
        + (buttons * h.log_b1 + (1 - buttons) * h.log_b0).sum(axis=1)
    )
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr1 = ratio * adv
    surr2 = clipped * adv
    pg_loss = -np.minimum(surr1, surr2).mean()
    v_err = h.value - returns
    v_loss = float(np.mean(v_err**2))
    ent = _entropy_terms(h)
    py, pp = np.exp(h.log_py), np.exp(h.log_pp)
    qy, qp = np.exp(ref_heads.log_py), np.exp(ref_heads.log_pp)
    if cfg.kl_direction == "forward":
        kl_y = _cat_kl(h.log_py, ref_heads.log_py)
        kl_p = _cat_kl(h.log_pp, ref_heads.log_pp)
        kl_b = _bern_kl(h, ref_heads)
    else:
        kl_y = _cat_kl(ref_heads.log_py, h.log_py)
        kl_p = _cat_kl(ref_heads.log_pp, h.log_pp)
        kl_b = _bern_kl(ref_heads, h)
    kl = kl_y + kl_p + kl_b
    loss = float(pg_loss + cfg.c_v * v_loss - cfg.c_e * ent.mean() + cfg.c_kl * kl.mean())

    # Upstream gradient wrt the raw net output, already scaled for the mean.
    up = np.zeros((n, N_OUT))
    active = (surr1 <= surr2).astype(np.float64)
    dlogp = -adv * ratio * active / n  # clipped branch has zero gradient
    onehot_y = np.zeros((n, N_CAM_BINS))
    onehot_y[rows, yaw] = 1.0
    onehot_p = np.zeros((n, N_CAM_BINS))
    onehot_p[rows, pitch] = 1.0
    up[:, _YAW] += dlogp[:, None] * (onehot_y - py)
    up[:, _PITCH] += dlogp[:, None] * (onehot_p - pp)
    up[:, _BTN] += dlogp[:, None] * (buttons - h.p_btn)
    up[:, _VALUE] += cfg.c_v * 2.0 * v_err / n
    # entropy bonus: d(-c_e H)/d logits
    hy = -(py * h.log_py).sum(axis=1, keepdims=True)
    hp = -(pp * h.log_pp).sum(axis=1, keepdims=True)
    up[:, _YAW] += cfg.c_e / n * py * (h.log_py + hy)
    up[:, _PITCH] += cfg.c_e / n * pp * (h.log_pp + hp)
    pq = h.p_btn * (1.0 - h.p_btn)
    up[:, _BTN] += cfg.c_e / n * h.btn_logits * pq
    # KL penalty
    if cfg.kl_direction == "forward":
        up[:, _YAW] += cfg.c_kl / n * py * ((h.log_py - ref_heads.log_py) - kl_y[:, None])
        up[:, _PITCH] += cfg.c_kl / n * pp * ((h.log_pp - ref_heads.log_pp) - kl_p[:, None])
        up[:, _BTN] += cfg.c_kl / n * (h.btn_logits - ref_heads.btn_logits) * pq
    else:
        up[:, _YAW] += cfg.c_kl / n * (py - qy)
        up[:, _PITCH] += cfg.c_kl / n * (pp - qp)
        up[:, _BTN] += cfg.c_kl / n * (h.p_btn - ref_heads.p_btn)

    stats = {
        "pg_loss": float(pg_loss),
        "v_loss": v_loss,
        "entropy": float(ent.mean()),
        "kl": float(kl.mean()),
    }
    return loss, up, stats


def ppo_update(
    state: PolicyTrainState,
    ref: MlpParams,
    batches: Sequence[RolloutBatch],
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> tuple[PolicyTrainState, dict]:
    """Clipped-surrogate update with analytic entropy and KL terms.

    Advantages are normalized across the whole update batch. A non-finite
    loss aborts the update and keeps the previous parameters.
    """
    if not batches:
        raise ValueError("ppo_update needs at least one episode batch")
    feats = np.concatenate([b.features for b in batches])
    yaw = np.concatenate([b.yaw for b in batches]).astype(int)
    pitch = np.concatenate([b.pitch for b in batches]).astype(int)
    buttons = np.concatenate([b.buttons for b in batches]).astype(np.float64)
    logp_old = np.concatenate([b.logp_old for b in batches])
    advs, rets = [], []
    for b in batches:
        t_len = b.features.shape[0]
        rewards = np.zeros(t_len)
        rewards[-1] = b.reward
        a, r = gae(rewards, np.append(b.values, 0.0), cfg.gamma, cfg.gae_lambda)
        advs.append(a)
        rets.append(r)
    adv = np.concatenate(advs)
    returns = np.concatenate(rets)
    adv = cfg.advantage_scale * (adv - adv.mean()) / max(float(adv.std()), 1e-8)

    ref_heads_all = head_outputs(ref, feats)
    n = feats.shape[0]
    params = state.params
    adam = state.adam
    last_stats: dict = {}
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = perm[start : start + cfg.minibatch]
            ref_heads = HeadOutputs(
                ref_heads_all.log_py[mb], ref_heads_all.log_pp[mb],
                ref_heads_all.btn_logits[mb], ref_heads_all.p_btn[mb],
                ref_heads_all.value[mb], ref_heads_all.log_b1[mb], ref_heads_all.log_b0[mb],
            )
            loss, upstream, last_stats = _loss_and_upstream(
                params, ref_heads, feats[mb], yaw[mb], pitch[mb], buttons[mb],
                logp_old[mb], adv[mb], returns[mb], cfg,
            )
            if not np.isfinite(loss):
                log.warning("non-finite PPO loss; aborting update")
                return state, {"aborted": True}
            grads, _ = mlp_backward(params, feats[mb], upstream)
            grads = clip_global_norm(grads, cfg.max_grad_norm)
            flat, adam = adam_step(params.flat(), grads, adam, cfg.lr)
            params = MlpParams.from_flat(flat)
    last_stats["aborted"] = False
    return PolicyTrainState(params, adam), last_stats


def bc_pretrain(
    demonstrations: Sequence[Trajectory],
    epochs: int,
    seed: int,
    hidden: Sequence[int] = (64, 64),
    lr: float = 1e-3,
    batch_size: int = 64,
    smoothing: float = 0.02,
) -> MlpParams:
    """Behavior-clone the demonstrators into the frozen reference policy.

    Maximizes the joint log-likelihood of demonstrated actions; the result
    doubles as the adversary's initialization. Targets are label-smoothed
    so the reference stays a proper stochastic prior: cloning against hard
    targets drives never-demonstrated actions to vanishing probability,
    which would make any later divergence from the reference absurdly
    expensive in forward KL.
    """
    if not demonstrations:
        raise ValueError("bc_pretrain needs demonstrations")
    feats = np.concatenate([replay_features(t) for t in demonstrations])
    yaw = np.concatenate([[a.yaw_bin for a in t.actions] for t in demonstrations]).astype(int)
    pitch = np.concatenate([[a.pitch_bin for a in t.actions] for t in demonstrations]).astype(int)
    buttons = np.concatenate(
        [[a.buttons for a in t.actions] for t in demonstrations]
    ).astype(np.float64)

    rng = substream("bc", seed)
    params = init_policy(seed, hidden)
    adam = init_adam(params.flat())
    n = feats.shape[0]
    rows_template = np.arange(batch_size)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            mb = perm[start : start + batch_size]
            b = mb.shape[0]
            h = head_outputs(params, feats[mb])
            rows = rows_template[:b]
            py, pp = np.exp(h.log_py), np.exp(h.log_pp)
            onehot_y = np.full((b, N_CAM_BINS), smoothing / N_CAM_BINS)
            onehot_y[rows, yaw[mb]] += 1.0 - smoothing
            onehot_p = np.full((b, N_CAM_BINS), smoothing / N_CAM_BINS)
            onehot_p[rows, pitch[mb]] += 1.0 - smoothing
            btn_targets = np.clip(buttons[mb], smoothing, 1.0 - smoothing)
            up = np.zeros((b, N_OUT))
            up[:, _YAW] = (py - onehot_y) / b
            up[:, _PITCH] = (pp - onehot_p) / b
            up[:, _BTN] = (h.p_btn - btn_targets) / b
            grads, _ = mlp_backward(params, feats[mb], up)
            flat, adam = adam_step(params.flat(), grads, adam, lr)
            params = MlpParams.from_flat(flat)
    return params


def mean_nll(params: MlpParams, demonstrations: Sequence[Trajectory]) -> float:
    """Per-step negative log-likelihood of demonstrated actions."""
    total, count = 0.0, 0
    for t in demonstrations:
        feats = replay_features(t)
        h = head_outputs(params, feats)
        rows = np.arange(feats.shape[0])
        yaw = np.array([a.yaw_bin for a in t.actions])
        pitch = np.array([a.pitch_bin for a in t.actions])
        btns = np.array([a.buttons for a in t.actions], dtype=np.float64)
        lp = (
            h.log_py[rows, yaw]
            + h.log_pp[rows, pitch]
            + (btns * h.log_b1 + (1 - btns) * h.log_b0).sum(axis=1)
        )
        total -= lp.sum()
        count += feats.shape[0]
    return total / count


def policy_checksum(params: MlpParams) -> str:
    return params_checksum(params.flat())


def save_policy_checkpoint(path, params: MlpParams) -> None:
    write_container(
        path, POLICY_MAGIC, {"kind": "policy", "sizes": params.sizes},
        {"net": params.flat()},
    )


def load_policy_checkpoint(path) -> MlpParams:
    header, payload = read_container(path, POLICY_MAGIC)
    shapes: list[tuple[int, ...]] = []
    sizes = header["sizes"]
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        shapes.append((n_in, n_out))
        shapes.append((n_out,))
    return MlpParams.from_flat(unpack_arrays(payload, header["sections"]["net"][0], shapes))
