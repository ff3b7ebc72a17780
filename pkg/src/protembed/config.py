"""Run configuration: TOML sections with typed keys.

Every pipeline threshold appears here with its default, so a run with no
config file encodes the reference recipe. Unknown sections or keys are
rejected, and the canonical dictionary form is hashed into every manifest.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .manifest import config_hash


class ConfigError(Exception):
    pass


@dataclass
class DataConfig:
    pfam_min_seq_id: float = 0.7
    pfam_min_cov: float = 0.8
    decontam_min_id: float = 0.5
    decontam_min_cov: float = 0.8
    stage1_min_id: float = 0.65
    stage1_min_cov: float = 0.85
    stage2_min_id: float = 0.50
    stage2_min_cov: float = 0.75
    ppi_min_score: int = 400
    len_min: int = 10
    len_max: int = 1024
    plddt_min: float = 70.0
    dms_test_frac: float = 0.2
    dms_min_group: int = 10
    dms_drop_prefixes: list[str] = field(default_factory=lambda: ["GB1_", "GFP_AEQVI_"])


@dataclass
class HardNegativesConfig:
    per_pos_threshold: float = -1.0
    sum_threshold: float = -16.0
    spacing_min_abs: int = 6
    spacing_len_divisor: int = 8
    k_floor: int = 6
    k_max: int = 50
    proposals_per_k: int = 2048
    family_len_tolerance: float = 0.10
    per_family_cap: int = 100
    len_min: int = 6
    len_max: int = 1023


@dataclass
class SamplerConfig:
    mode: str = "round_robin"  # or "proportional"
    batch_size: int = 64
    max_pairs: int = 70_000_000


@dataclass
class TrainerSection:
    effective_batch_size: int = 1024
    micro_batch_size: int = 64
    lr: float = 3e-4
    min_lr: float = 3e-5
    warmup_steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    scale: float = 20.0
    init_scale: float = 1e-3
    use_bias: bool = False
    epochs: int = 1


@dataclass
class EvalSection:
    knn_k: int = 3
    cv_folds: int = 4
    recall_ks: list[int] = field(default_factory=lambda: [1, 10, 30])
    few_shot_ns: list[int] = field(default_factory=lambda: [50, 100, 500, 1000])


@dataclass
class RunConfig:
    seed: int = 42
    data: DataConfig = field(default_factory=DataConfig)
    hard_negatives: HardNegativesConfig = field(default_factory=HardNegativesConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        out: dict[str, object] = {"seed": self.seed}
        for section in ("data", "hard_negatives", "sampler", "trainer", "eval"):
            obj = getattr(self, section)
            out[section] = {f.name: getattr(obj, f.name) for f in fields(obj)}
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


_SECTIONS = {
    "data": DataConfig,
    "hard_negatives": HardNegativesConfig,
    "sampler": SamplerConfig,
    "trainer": TrainerSection,
    "eval": EvalSection,
}


def load_config(path: str | Path | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    for key, value in raw.items():
        if key == "seed":
            if not isinstance(value, int):
                raise ConfigError("seed must be an integer")
            cfg.seed = value
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section [{key}]")
        section = getattr(cfg, key)
        known = {f.name: f for f in fields(section)}
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table")
        for k, v in value.items():
            if k not in known:
                raise ConfigError(f"unknown key {k!r} in section [{key}]")
            current = getattr(section, k)
            if isinstance(current, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"[{key}] {k} must be a boolean")
            elif isinstance(current, int) and not isinstance(v, int):
                raise ConfigError(f"[{key}] {k} must be an integer")
            elif isinstance(current, float) and not isinstance(v, (int, float)):
                raise ConfigError(f"[{key}] {k} must be a number")
            elif isinstance(current, str) and not isinstance(v, str):
                raise ConfigError(f"[{key}] {k} must be a string")
            elif isinstance(current, list) and not isinstance(v, list):
                raise ConfigError(f"[{key}] {k} must be a list")
            setattr(section, k, float(v) if isinstance(current, float) else v)
    return cfg
