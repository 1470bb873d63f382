"""Run configuration: dataclasses, INI-style parsing, and config hashing.

Every persisted artifact embeds the hash of the configuration that produced
it, so downstream stages can refuse stale inputs.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path


@dataclass
class DatasetSpec:
    """One CSV-backed dataset: column schema plus native units/rate."""

    name: str = "synthetic"
    path: str = ""
    subject_col: str = "subject"
    x_col: str = "x"
    y_col: str = "y"
    z_col: str = "z"
    label_col: str = ""          # empty -> unlabeled
    input_units: str = "g"       # "g" or "m_s2"
    native_hz: float = 80.0
    class_names: tuple[str, ...] = ()


@dataclass
class PipelineConfig:
    sample_rate_hz: float = 80.0
    window_s: float = 10.0
    upstream_overlap: float = 0.0
    downstream_overlap: float = 0.5
    majority_min_frac: float = 0.5
    null_max_frac: float = 0.10
    filter_order: int = 6
    cutoff_hz: float = 0.5
    noise_variance: float = 0.0   # milli-g^2, activity-index floor


@dataclass
class TokenizerConfig:
    min_gap_s: float = 0.050
    amp_threshold_g: float = 0.01
    resample_len: int = 32
    max_tokens: int = 512
    chunk_s: float = 0.5          # equal-chunk baseline


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 5
    n_heads: int = 4
    ff_mult: int = 4
    cnn_channels: tuple[int, int] = (16, 32)
    max_rel_offset: int = 16      # buckets = 2*max_rel_offset + 1
    init_std: float = 0.02

    @property
    def h_dim(self) -> int:
        return self.d_model - 4

    @property
    def ff_dim(self) -> int:
        return self.ff_mult * self.d_model

    @property
    def dec_hidden(self) -> int:
        return 2 * self.d_model

    @property
    def n_buckets(self) -> int:
        return 2 * self.max_rel_offset + 1


@dataclass
class PretrainConfig:
    mask_rate: float = 0.5
    corruption_rate: float = 0.2
    masked_weight: float = 100.0
    lr: float = 1e-4
    batch_size: int = 64          # desk-scale default; 512 for full-scale runs
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 5000
    eval_interval: int = 250
    checkpoint_interval: int = 1000
    holdout_frac: float = 0.02
    ai_threshold: float = 50.0
    strata_cuts: tuple[float, float] = (0.33, 0.9)
    subsample_rates: tuple[float, float, float] = (0.25, 0.5, 1.0)


@dataclass
class ProbeConfig:
    c_grid: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
    inner_folds: int = 3
    max_iter: int = 500
    grad_tol: float = 1e-5


@dataclass
class EvalConfig:
    fractions: tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 1.0)
    k_sweep: tuple[int, ...] = (16, 32, 64, 128, 256)
    bigram_train_frac: float = 0.8
    silhouette_sample: int = 2000
    kmeans_sample: int = 10000
    kmeans_iters: int = 50


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    threads: int = 1
    deterministic: bool = True
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "run": None,
    "dataset": DatasetSpec,
    "pipeline": PipelineConfig,
    "tokenizer": TokenizerConfig,
    "model": ModelConfig,
    "pretrain": PretrainConfig,
    "probe": ProbeConfig,
    "eval": EvalConfig,
}


class ConfigError(ValueError):
    pass


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if not like:
            return tuple(parts)
        elem = like[0]
        return tuple(_coerce(p, elem) for p in parts)
    return raw


def load_config(path: str | Path) -> RunConfig:
    """Parse a sectioned key=value file into a RunConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        target = cfg if section == "run" else getattr(cfg, section)
        known = {f.name: getattr(target, f.name) for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            setattr(target, key, _coerce(raw, known[key]))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Canonical text rendering; the basis for the config hash."""
    lines = []
    top = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    sub = {k: v for k, v in top.items() if k in _SECTIONS and k != "run"}
    plain = {k: v for k, v in top.items() if k not in sub}
    lines.append("[run]")
    for k in sorted(plain):
        lines.append(f"{k} = {_render(plain[k])}")
    for sec in sorted(sub):
        lines.append(f"[{sec}]")
        d = asdict(sub[sec])
        for k in sorted(d):
            lines.append(f"{k} = {_render(d[k])}")
    return "\n".join(lines) + "\n"


def _render(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_render(x) for x in v)
    return str(v)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))
