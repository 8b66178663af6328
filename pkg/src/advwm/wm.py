"""Action-conditioned world model trained with per-slot noise levels.

The trunk is an MLP over a fixed 21-slot latent window: each slot carries
an 8-d latent at its own noise level sigma, and the trunk predicts the
velocity (noise minus clean latent) for the 3 target slots. Actions are
serialized to a token string, hashed into a frozen embedding table, and
passed through a small trainable adapter; classifier-free guidance uses
the zero-embedding branch. Fine-tuning can address the full parameter set
or only the conditioning adapter, leaving the trunk bitwise untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .env import CHUNK, NOOP_BIN, BUTTONS, Action, Trajectory
from .latent import D_LAT, LatentCodec, encode
from .numerics import AdamState, MlpParams, adam_step, clip_global_norm, init_adam, init_mlp, mlp_backward, mlp_forward
from .checkpoint import params_checksum, read_container, unpack_arrays, write_container
from .seeding import stable_hash, substream

K = CHUNK  # target slots per chunk
MAX_T = 21  # window length in latent slots
HIST_SIGMA = 0.05
CFG_DROPOUT = 0.1
EMBED_DIM = 32
COND_DIM = 16
EMBED_VOCAB = 4096
ROLLOUT_HISTORY_SLOTS = 6  # most recent latents kept as context during rollout
DEFAULT_INFERENCE_STEPS = 20
DEFAULT_CFG_SCALE = 1.5

ROLE_HISTORY, ROLE_TARGET, ROLE_PAD = 0, 1, 2

TRUNK_IN = MAX_T * D_LAT + MAX_T + COND_DIM
WM_MAGIC = b"PRWM"


@dataclass
class WmParams:
    trunk: MlpParams  # window latents + sigmas + conditioning -> target velocities
    cond_adapter: MlpParams  # raw action embedding -> conditioning vector
    embed_table: np.ndarray  # frozen (EMBED_VOCAB, EMBED_DIM)
    embed_seed: int

    def copy(self) -> "WmParams":
        return WmParams(self.trunk.copy(), self.cond_adapter.copy(), self.embed_table, self.embed_seed)


def init_wm_params(
    seed: int,
    trunk_hidden: Sequence[int] = (256, 256),
    cond_hidden: Sequence[int] = (32,),
) -> WmParams:
    trunk = init_mlp([TRUNK_IN, *trunk_hidden, K * D_LAT], substream("wm-trunk", seed))
    cond = init_mlp([EMBED_DIM, *cond_hidden, COND_DIM], substream("wm-cond", seed))
    table = substream("wm-embed", seed).standard_normal((EMBED_VOCAB, EMBED_DIM))
    return WmParams(trunk, cond, table, seed)


def serialize_actions(actions: Sequence[Action]) -> str:
    """Chunk actions to a token string with run-length collapsing.

    Per frame: sorted active button names, then cam(yaw,pitch) unless both
    bins are the no-op; an empty frame renders as "idle". Consecutive
    identical frame tokens collapse to "token xN"; frames join with " | ".
    """
    if len(actions) != K:
        raise ValueError(f"expected exactly {K} actions, got {len(actions)}")
    frame_tokens = []
    for a in actions:
        parts = sorted(name for name, b in zip(BUTTONS, a.buttons) if b)
        if a.yaw_bin != NOOP_BIN or a.pitch_bin != NOOP_BIN:
            parts.append(f"cam({a.yaw_bin},{a.pitch_bin})")
        frame_tokens.append(" ".join(parts) if parts else "idle")
    groups: list[tuple[str, int]] = []
    for tok in frame_tokens:
        if groups and groups[-1][0] == tok:
            groups[-1] = (tok, groups[-1][1] + 1)
        else:
            groups.append((tok, 1))
    return " | ".join(tok if n == 1 else f"{tok} x{n}" for tok, n in groups)


def _raw_embedding(params: WmParams, token_str: str) -> np.ndarray:
    """Bag of hashed whitespace tokens summed over the frozen table."""
    raw = np.zeros(EMBED_DIM)
    for tok in token_str.split():
        raw += params.embed_table[stable_hash(tok) % EMBED_VOCAB]
    return raw


def embed_actions(
    params: WmParams,
    token_str: str,
    dropout_active: bool,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Conditioning vector; training dropout swaps in the zero embedding."""
    raw = _raw_embedding(params, token_str)
    if dropout_active:
        if rng is None:
            raise ValueError("dropout requires an rng")
        if rng.random() < CFG_DROPOUT:
            raw = np.zeros(EMBED_DIM)
    return mlp_forward(params.cond_adapter, raw)


@dataclass
class ChunkWindow:
    """Fixed 21-slot layout: history, then K targets, then noise pads."""

    base: np.ndarray  # (MAX_T, D_LAT) clean contents; zeros for targets/pads
    roles: np.ndarray  # (MAX_T,) int: ROLE_HISTORY / ROLE_TARGET / ROLE_PAD
    sigmas: np.ndarray  # (MAX_T,) float
    token_str: str  # serialized actions conditioning the target chunk

    def __post_init__(self):
        tgt = np.flatnonzero(self.roles == ROLE_TARGET)
        if len(tgt) != K or tgt[-1] - tgt[0] != K - 1:
            raise ValueError(f"window needs {K} contiguous target slots, got {tgt}")
        if np.any(self.roles[: tgt[0]] != ROLE_HISTORY):
            raise ValueError("history slots must precede targets")
        if np.any(self.roles[tgt[-1] + 1 :] != ROLE_PAD):
            raise ValueError("slots after targets must be pads")
        if np.any(self.sigmas[self.roles == ROLE_PAD] != 1.0):
            raise ValueError("pad slots must sit at sigma 1.0")

    @property
    def target_slots(self) -> np.ndarray:
        return np.flatnonzero(self.roles == ROLE_TARGET)


def build_window(
    history: np.ndarray, token_str: str, target_sigmas: np.ndarray | None = None
) -> ChunkWindow:
    """Window for one chunk: history latents, K targets, sigma-1 pads."""
    history = np.asarray(history, dtype=np.float64).reshape(-1, D_LAT)
    n_hist = history.shape[0]
    if n_hist > MAX_T - K:
        raise ValueError(f"history of {n_hist} slots does not fit the window")
    base = np.zeros((MAX_T, D_LAT))
    base[:n_hist] = history
    roles = np.full(MAX_T, ROLE_PAD, dtype=np.int64)
    roles[:n_hist] = ROLE_HISTORY
    roles[n_hist : n_hist + K] = ROLE_TARGET
    sigmas = np.ones(MAX_T)
    sigmas[:n_hist] = HIST_SIGMA
    if target_sigmas is not None:
        sigmas[n_hist : n_hist + K] = np.asarray(target_sigmas, dtype=np.float64)
    return ChunkWindow(base, roles, sigmas, token_str)


def _noisy_window(window: ChunkWindow, clean_targets: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Per-slot interpolation (1 - sigma) * clean + sigma * noise.

    Targets take clean_targets as their clean content; pads have none, so
    sigma = 1 leaves them as pure noise.
    """
    base = window.base.copy()
    base[window.target_slots] = clean_targets
    return (1.0 - window.sigmas)[:, None] * base + window.sigmas[:, None] * eps


def _trunk_input(window: ChunkWindow, slots: np.ndarray, cond: np.ndarray) -> np.ndarray:
    return np.concatenate([slots.ravel(), window.sigmas, cond])


@dataclass
class WmGrads:
    trunk: list[np.ndarray] | None
    cond: list[np.ndarray] | None

    def flat(self) -> list[np.ndarray]:
        out = []
        if self.trunk is not None:
            out.extend(self.trunk)
        if self.cond is not None:
            out.extend(self.cond)
        return out


def df_loss(
    params: WmParams,
    window: ChunkWindow,
    clean_targets: np.ndarray,
    rng: np.random.Generator,
    subset: str = "all",
    dropout_active: bool = True,
    trunk_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[float, WmGrads]:
    """Per-slot-noise training loss and gradients over the requested subset.

    Draws one noise matrix for the full window, corrupts every slot at its
    own sigma, and scores the trunk's velocity prediction against
    (noise - clean) on the target slots only, as a mean over target
    elements. trunk_fn is a diagnostics hook replacing the trunk forward
    (no gradients are produced through it).
    """
    if subset not in ("all", "cond_only"):
        raise ValueError(f"unknown subset {subset!r}")
    clean_targets = np.asarray(clean_targets, dtype=np.float64).reshape(K, D_LAT)
    eps = rng.standard_normal((MAX_T, D_LAT))
    slots = _noisy_window(window, clean_targets, eps)
    raw = _raw_embedding(params, window.token_str)
    if dropout_active and rng.random() < CFG_DROPOUT:
        raw = np.zeros(EMBED_DIM)
    cond = mlp_forward(params.cond_adapter, raw)
    x = _trunk_input(window, slots, cond)

    target_velocity = eps[window.target_slots] - clean_targets
    if trunk_fn is not None:
        v = np.asarray(trunk_fn(x)).reshape(K, D_LAT)
        resid = v - target_velocity
        return float(np.mean(resid**2)), WmGrads(None, None)

    v = mlp_forward(params.trunk, x).reshape(K, D_LAT)
    resid = v - target_velocity
    loss = float(np.mean(resid**2))
    if not np.isfinite(loss):
        raise ValueError("non-finite diffusion-forcing loss")

    upstream = (2.0 / resid.size) * resid.ravel()
    trunk_grads, x_grad = mlp_backward(params.trunk, x, upstream)
    cond_grads, _ = mlp_backward(params.cond_adapter, raw, x_grad[-COND_DIM:])
    if subset == "cond_only":
        return loss, WmGrads(None, cond_grads)
    return loss, WmGrads(trunk_grads, cond_grads)


def df_loss_batch(
    params: WmParams,
    windows: Sequence[ChunkWindow],
    clean_targets: Sequence[np.ndarray],
    rng: np.random.Generator,
    subset: str = "all",
    dropout_active: bool = True,
) -> tuple[float, WmGrads]:
    """Vectorized df_loss over a window minibatch; mean loss, mean grads.

    Same objective as df_loss, one trunk pass for the whole batch. Noise
    is drawn as one (B, MAX_T, D_LAT) block, then one dropout coin per
    sample.
    """
    if subset not in ("all", "cond_only"):
        raise ValueError(f"unknown subset {subset!r}")
    n = len(windows)
    if n == 0:
        raise ValueError("empty window batch")
    cleans = np.stack([np.asarray(c).reshape(K, D_LAT) for c in clean_targets])
    eps = rng.standard_normal((n, MAX_T, D_LAT))
    base = np.stack([w.base for w in windows])
    sigmas = np.stack([w.sigmas for w in windows])
    tgt = np.stack([w.target_slots for w in windows])  # (B, K)
    rows = np.arange(n)[:, None]
    base[rows, tgt] = cleans
    slots = (1.0 - sigmas)[..., None] * base + sigmas[..., None] * eps

    raw = np.stack([_raw_embedding(params, w.token_str) for w in windows])
    if dropout_active:
        raw[rng.random(n) < CFG_DROPOUT] = 0.0
    cond = mlp_forward(params.cond_adapter, raw)
    x = np.concatenate([slots.reshape(n, MAX_T * D_LAT), sigmas, cond], axis=1)

    v = mlp_forward(params.trunk, x).reshape(n, K, D_LAT)
    resid = v - (eps[rows, tgt] - cleans)
    loss = float(np.mean(resid**2))
    if not np.isfinite(loss):
        raise ValueError("non-finite diffusion-forcing loss")
    upstream = (2.0 / (K * D_LAT * n)) * resid.reshape(n, K * D_LAT)
    trunk_grads, x_grad = mlp_backward(params.trunk, x, upstream)
    cond_grads, _ = mlp_backward(params.cond_adapter, raw, x_grad[:, -COND_DIM:])
    if subset == "cond_only":
        return loss, WmGrads(None, cond_grads)
    return loss, WmGrads(trunk_grads, cond_grads)


def sample_chunk(
    params: WmParams,
    window: ChunkWindow,
    rng: np.random.Generator,
    n_steps: int = DEFAULT_INFERENCE_STEPS,
    cfg_scale: float = DEFAULT_CFG_SCALE,
) -> np.ndarray:
    """Guided Euler integration of the velocity field from sigma 1 to 0.

    Targets start as pure noise; history is corrupted once at its sigma and
    held fixed; pads stay pure noise. The guided velocity is the affine
    combination (1 - s) * v_uncond + s * v_cond, which makes scale 1 return
    the conditional branch bitwise.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    eps = rng.standard_normal((MAX_T, D_LAT))
    slots = _noisy_window(window, np.zeros((K, D_LAT)), eps)
    tgt = window.target_slots

    cond = mlp_forward(params.cond_adapter, _raw_embedding(params, window.token_str))
    uncond = mlp_forward(params.cond_adapter, np.zeros(EMBED_DIM))

    sigmas = window.sigmas.copy()
    d_sigma = 1.0 / n_steps
    for step in range(n_steps):
        sigmas[tgt] = 1.0 - step * d_sigma
        x_tail = np.concatenate([sigmas, cond])
        v_c = mlp_forward(params.trunk, np.concatenate([slots.ravel(), x_tail])).reshape(K, D_LAT)
        if cfg_scale == 1.0:
            v = v_c
        else:
            x_u = np.concatenate([slots.ravel(), sigmas, uncond])
            v_u = mlp_forward(params.trunk, x_u).reshape(K, D_LAT)
            v = (1.0 - cfg_scale) * v_u + cfg_scale * v_c
        slots[tgt] = slots[tgt] - d_sigma * v
    return slots[tgt].copy()


def rollout(
    params: WmParams,
    seed_latents: np.ndarray,
    actions: Sequence[Action],
    horizon: int,
    rng: np.random.Generator,
    n_steps: int = DEFAULT_INFERENCE_STEPS,
    cfg_scale: float = DEFAULT_CFG_SCALE,
) -> np.ndarray:
    """Sliding-window autoregressive prediction of horizon chunks.

    Each chunk's window holds the most recent history latents (at most
    ROLLOUT_HISTORY_SLOTS), K noise targets, and sigma-1 pads out to the
    full 21 slots; the predicted chunk joins the history for the next one.
    """
    if horizon < 1:
        raise ValueError("rollout horizon must be at least 1 chunk")
    seed_latents = np.asarray(seed_latents, dtype=np.float64).reshape(-1, D_LAT)
    n_seed_chunks = seed_latents.shape[0] // K
    if seed_latents.shape[0] % K:
        raise ValueError("seed latents must be whole chunks")
    if len(actions) < (n_seed_chunks + horizon) * K:
        raise ValueError("not enough actions to cover seed plus horizon")
    history = list(seed_latents)
    preds = []
    for j in range(horizon):
        c = n_seed_chunks + j
        token = serialize_actions(actions[c * K : (c + 1) * K])
        hist = np.array(history[-ROLLOUT_HISTORY_SLOTS:])
        window = build_window(hist, token)
        chunk = sample_chunk(params, window, rng, n_steps=n_steps, cfg_scale=cfg_scale)
        history.extend(chunk)
        preds.append(chunk)
    return np.concatenate(preds, axis=0)


@dataclass
class WmTrainConfig:
    lr: float = 1e-5
    max_grad_norm: float = 1.0
    subset: str = "all"  # "all" (pretraining) or "cond_only" (fine-tuning)
    batch_size: int = 1


@dataclass
class WmTrainState:
    params: WmParams
    adam: AdamState
    subset: str


def init_train_state(params: WmParams, config: WmTrainConfig) -> WmTrainState:
    flat = _subset_flat(params, config.subset)
    return WmTrainState(params, init_adam(flat), config.subset)


def _subset_flat(params: WmParams, subset: str) -> list[np.ndarray]:
    if subset == "all":
        return params.trunk.flat() + params.cond_adapter.flat()
    if subset == "cond_only":
        return params.cond_adapter.flat()
    raise ValueError(f"unknown subset {subset!r}")


def _rebuild_params(params: WmParams, subset: str, flat: list[np.ndarray]) -> WmParams:
    if subset == "all":
        n_trunk = len(params.trunk.flat())
        trunk = MlpParams.from_flat(flat[:n_trunk])
        cond = MlpParams.from_flat(flat[n_trunk:])
        return replace(params, trunk=trunk, cond_adapter=cond)
    return replace(params, cond_adapter=MlpParams.from_flat(flat))


def training_window(
    traj: Trajectory, codec: LatentCodec, rng: np.random.Generator
) -> tuple[ChunkWindow, np.ndarray]:
    """Sample one training window from a trajectory.

    Picks a target chunk (preferring chunks with history), draws its
    per-slot sigmas uniformly above the history noise level (targets carry
    higher noise than history; the sampler only ever queries sigma >=
    HIST_SIGMA), and caps history at the rollout context length so
    training and inference see the same layouts.
    """
    latents = encode(codec, traj.frames)
    n_chunks = latents.shape[0] // K
    if n_chunks < 1:
        raise ValueError(f"trajectory {traj.traj_id} shorter than one chunk")
    c = int(rng.integers(1, n_chunks)) if n_chunks > 1 else 0
    target = latents[c * K : (c + 1) * K]
    hist = latents[max(0, c * K - ROLLOUT_HISTORY_SLOTS) : c * K]
    token = serialize_actions(traj.actions[c * K : (c + 1) * K])
    sigmas = rng.uniform(HIST_SIGMA, 1.0, size=K)
    return build_window(hist, token, sigmas), target


def finetune(
    state: WmTrainState,
    batch: Sequence[Trajectory],
    codec: LatentCodec,
    rng: np.random.Generator,
    config: WmTrainConfig,
) -> tuple[WmTrainState, float]:
    """Train on a batch of trajectories; one Adam step per minibatch.

    Returns the new state and the mean loss over the batch. cond_only
    leaves every trunk array untouched (same objects, no writes).
    """
    if not batch:
        raise ValueError("finetune needs a non-empty batch")
    if config.subset != state.subset:
        raise ValueError("train state was initialized for a different subset")
    params = state.params
    adam = state.adam
    losses = []
    for start in range(0, len(batch), config.batch_size):
        minibatch = batch[start : start + config.batch_size]
        windows, targets = [], []
        for traj in minibatch:
            window, target = training_window(traj, codec, rng)
            windows.append(window)
            targets.append(target)
        loss, grads = df_loss_batch(params, windows, targets, rng, subset=config.subset)
        losses.append(loss)
        clipped = clip_global_norm(grads.flat(), config.max_grad_norm)
        new_flat, adam = adam_step(_subset_flat(params, config.subset), clipped, adam, config.lr)
        params = _rebuild_params(params, config.subset, new_flat)
    return WmTrainState(params, adam, state.subset), float(np.mean(losses))


def trajectory_df_loss(
    params: WmParams,
    traj: Trajectory,
    codec: LatentCodec,
    rng: np.random.Generator,
    n_windows: int = 8,
) -> float:
    """Mean diffusion loss over sampled windows; evaluation only."""
    forward = lambda x: mlp_forward(params.trunk, x)  # hook path: no gradient work
    total = 0.0
    for _ in range(n_windows):
        window, target = training_window(traj, codec, rng)
        loss, _ = df_loss(
            params, window, target, rng, dropout_active=False, trunk_fn=forward
        )
        total += loss
    return total / n_windows


def trunk_checksum(params: WmParams) -> str:
    return params_checksum(params.trunk.flat())


def cond_checksum(params: WmParams) -> str:
    return params_checksum(params.cond_adapter.flat())


def save_wm_checkpoint(path, params: WmParams, codec_seed: int) -> None:
    meta = {
        "kind": "world_model",
        "codec_seed": codec_seed,
        "embed_seed": params.embed_seed,
        "trunk_sizes": params.trunk.sizes,
        "cond_sizes": params.cond_adapter.sizes,
        "embed_vocab": EMBED_VOCAB,
        "embed_dim": EMBED_DIM,
    }
    sections = {
        "trunk": params.trunk.flat(),
        "cond_adapter": params.cond_adapter.flat(),
        "embed_table": [params.embed_table],
    }
    write_container(path, WM_MAGIC, meta, sections)


def _mlp_shapes(sizes: Sequence[int]) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        shapes.append((n_in, n_out))
        shapes.append((n_out,))
    return shapes


def load_wm_checkpoint(path) -> tuple[WmParams, int]:
    header, payload = read_container(path, WM_MAGIC)
    trunk_shapes = _mlp_shapes(header["trunk_sizes"])
    cond_shapes = _mlp_shapes(header["cond_sizes"])
    trunk = MlpParams.from_flat(
        unpack_arrays(payload, header["sections"]["trunk"][0], trunk_shapes)
    )
    cond = MlpParams.from_flat(
        unpack_arrays(payload, header["sections"]["cond_adapter"][0], cond_shapes)
    )
    (table,) = unpack_arrays(
        payload,
        header["sections"]["embed_table"][0],
        [(header["embed_vocab"], header["embed_dim"])],
    )
    return WmParams(trunk, cond, table, header["embed_seed"]), header["codec_seed"]
