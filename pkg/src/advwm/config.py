"""Flat key-value experiment configuration.

One text file per arm, `key = value` lines with `#` comments. Keys follow
the published hyperparameter names (c_kl, lambda_afs, rho_stale, t_wm,
episodes_per_update, mixture_r, ...). Unknown keys fail fast, listed by
name; nothing is read from the environment.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .policy import PpoConfig
from .wm import WmTrainConfig

MODES = ("phase1", "frozen_ref", "prowl")
REWARD_SOURCES = ("latent_regret", "composite")


class ConfigError(Exception):
    """Bad configuration; the CLI maps this to exit code 2."""


@dataclass
class ArmConfig:
    """One experiment arm. Desk-scale defaults; full-scale values noted."""

    mode: str = "prowl"
    arm_id: str = ""  # derived from mode/c_kl/seed when empty
    run_seed: int = 0
    total_iterations: int = 500

    # trajectory score and buffer
    c_kl: float = 1.0
    lambda_afs: float = 0.25
    beta_prog: float = 1.0
    reward_source: str = "latent_regret"
    buffer_capacity: int = 64  # full scale: 256
    rho_stale: float = 0.1

    # cadences and mixtures
    t_wm: int = 24
    episodes_per_update: int = 16
    mixture_r: float = 0.5
    pat_epochs: int = 7
    wm_steps_per_cycle: int = 200  # full scale: 500-1024

    # episode geometry
    episode_len: int = 12
    seed_chunks: int = 2
    horizon_chunks: int = 2

    # world model
    wm_lr: float = 3e-4  # full scale: 1e-5
    wm_batch_size: int = 8  # full scale: 1
    wm_max_grad_norm: float = 1.0
    inference_steps: int = 20
    cfg_scale: float = 1.5
    trunk_hidden: tuple[int, ...] = (256, 256)
    cond_hidden: tuple[int, ...] = (64,)

    # policy / PPO
    policy_lr: float = 3e-3  # full scale: 3e-5
    advantage_scale: float = 8.0  # desk reward-unit calibration; full scale: 1
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.15  # full scale: 0.05
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo_epochs: int = 4
    ppo_minibatch: int = 256
    policy_max_grad_norm: float = 0.5
    kl_direction: str = "forward"
    policy_hidden: tuple[int, ...] = (64, 64)

    # phase-1 pretraining and shared seeds. The published fine-tune lr row
    # covers phase-2 only; phase-1 pretraining has its own desk settings.
    codec_seed: int = 11
    wm_init_seed: int = 3
    bc_seed: int = 7
    bc_epochs: int = 20
    phase1_steps: int = 36000
    phase1_lr: float = 1e-4
    phase1_batch_size: int = 8
    phase1_episodes: int = 200
    phase1_eval_episodes: int = 24
    phase1_eval_every: int = 1000
    passive_base_seed: int = 100
    passive_kind: str = "walker"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reward_source not in REWARD_SOURCES:
            raise ConfigError(
                f"reward_source must be one of {REWARD_SOURCES}, got {self.reward_source!r}"
            )
        if self.kl_direction not in ("forward", "reverse"):
            raise ConfigError(f"kl_direction must be forward or reverse")
        if not self.arm_id:
            self.arm_id = f"{self.mode}-kl{self.c_kl:g}-lam{self.lambda_afs:g}-s{self.run_seed}"

    def ppo(self) -> PpoConfig:
        return PpoConfig(
            c_kl=self.c_kl,
            clip_eps=self.clip_eps,
            c_v=self.value_coef,
            c_e=self.entropy_coef,
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            epochs=self.ppo_epochs,
            minibatch=self.ppo_minibatch,
            lr=self.policy_lr,
            advantage_scale=self.advantage_scale,
            max_grad_norm=self.policy_max_grad_norm,
            episodes_per_update=self.episodes_per_update,
            kl_direction=self.kl_direction,
        )

    def wm_train(self, subset: str) -> WmTrainConfig:
        return WmTrainConfig(
            lr=self.wm_lr,
            max_grad_norm=self.wm_max_grad_norm,
            subset=subset,
            batch_size=self.wm_batch_size,
        )


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


_CONVERTERS = {
    "int": int,
    "float": float,
    "str": str,
    "tuple[int, ...]": _parse_int_tuple,
}
# dataclass annotations are strings here (future annotations)
_FIELD_TYPES = {f.name: str(f.type) for f in fields(ArmConfig)}


def parse_config_text(text: str) -> ArmConfig:
    values: dict = {}
    unknown: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            unknown.append(key)
            continue
        convert = _CONVERTERS[_FIELD_TYPES[key]]
        try:
            values[key] = convert(val)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {val!r}") from e
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return ArmConfig(**values)


def load_config(path: str | Path) -> ArmConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: ArmConfig) -> str:
    lines = []
    for f in fields(ArmConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
