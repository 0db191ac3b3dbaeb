"""Run configuration: flat ``key = value`` text files with ``#`` comments."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .conditioning import ABLATION_VARIANTS
from .errors import ConfigError


@dataclass
class RunConfig:
    """Every tunable of a training/evaluation run; unknown keys are rejected."""

    values_path: str = ""
    edges_path: str = ""
    coords_path: str = ""
    batch_size: int = 16
    time_length: int = 24
    window_stride: int = 0          # 0 means "same as time_length"
    epochs: int = 50
    learning_rate: float = 1e-3
    lr_min: float = 1e-5
    channel_size: int = 64
    noise_layers: int = 4
    heads: int = 8
    beta_min: float = 1e-4
    beta_max: float = 0.2
    diffusion_steps: int = 50
    virtual_nodes: int = 0
    emb_dim: int = 128
    tcn_kernel: int = 3
    gcn_order: int = 2
    dropout: float = 0.1
    masking_strategy: str = "hybrid"
    schedule: str = "quadratic"
    mean_coef: str = "alpha"
    n_samples: int = 10
    val_samples: int = 4
    seed: int = 0
    ablation: str = "full"

    @property
    def stride(self) -> int:
        return self.window_stride if self.window_stride > 0 else self.time_length


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from exc


def parse_config_text(text: str) -> RunConfig:
    values: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {line_no}: unknown config key {key!r}")
        values[key] = _convert(key, raw)
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def config_text(cfg: RunConfig) -> str:
    """Canonical serialization; parses back to an equal RunConfig."""
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        rendered = repr(val) if isinstance(val, float) else str(val)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def validate_config(cfg: RunConfig) -> None:
    def need(ok: bool, msg: str):
        if not ok:
            raise ConfigError(msg)

    need(cfg.batch_size >= 1, f"batch_size must be >= 1, got {cfg.batch_size}")
    need(cfg.time_length >= 1, f"time_length must be >= 1, got {cfg.time_length}")
    need(cfg.window_stride >= 0, f"window_stride must be >= 0, got {cfg.window_stride}")
    need(cfg.epochs >= 0, f"epochs must be >= 0, got {cfg.epochs}")
    need(cfg.learning_rate > 0, f"learning_rate must be > 0, got {cfg.learning_rate}")
    need(0 < cfg.lr_min <= cfg.learning_rate,
         f"need 0 < lr_min <= learning_rate, got {cfg.lr_min}")
    need(cfg.channel_size >= 1, f"channel_size must be >= 1, got {cfg.channel_size}")
    need(cfg.noise_layers >= 1, f"noise_layers must be >= 1, got {cfg.noise_layers}")
    need(cfg.heads >= 1, f"heads must be >= 1, got {cfg.heads}")
    need(cfg.channel_size % cfg.heads == 0,
         f"channel_size {cfg.channel_size} not divisible by heads {cfg.heads}")
    need(0 < cfg.beta_min <= cfg.beta_max < 1,
         f"need 0 < beta_min <= beta_max < 1, got {cfg.beta_min}, {cfg.beta_max}")
    need(cfg.diffusion_steps >= 1,
         f"diffusion_steps must be >= 1, got {cfg.diffusion_steps}")
    need(cfg.virtual_nodes >= 0,
         f"virtual_nodes must be >= 0, got {cfg.virtual_nodes}")
    need(cfg.emb_dim >= 2 and cfg.emb_dim % 2 == 0,
         f"emb_dim must be even and >= 2, got {cfg.emb_dim}")
    need(cfg.tcn_kernel >= 1, f"tcn_kernel must be >= 1, got {cfg.tcn_kernel}")
    need(cfg.gcn_order >= 1, f"gcn_order must be >= 1, got {cfg.gcn_order}")
    need(0 <= cfg.dropout < 1, f"dropout must be in [0, 1), got {cfg.dropout}")
    need(cfg.masking_strategy in ("point", "block", "hybrid"),
         f"unknown masking_strategy {cfg.masking_strategy!r}")
    need(cfg.schedule in ("linear", "quadratic"),
         f"unknown schedule {cfg.schedule!r}")
    need(cfg.mean_coef in ("alpha", "alpha_bar"),
         f"unknown mean_coef {cfg.mean_coef!r}")
    need(cfg.n_samples >= 1, f"n_samples must be >= 1, got {cfg.n_samples}")
    need(cfg.val_samples >= 1, f"val_samples must be >= 1, got {cfg.val_samples}")
    need(cfg.ablation in ABLATION_VARIANTS,
         f"unknown ablation {cfg.ablation!r}; valid: {sorted(ABLATION_VARIANTS)}")
