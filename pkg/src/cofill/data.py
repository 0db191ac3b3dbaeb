"""Dataset ingestion, masking strategies, windowing, and pre-imputation fills.

Series values are (N, L): one row per sensor node, one column per time step.
The on-disk CSV layout is transposed (one row per time step) with empty cells
marking missing observations.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .graph import Graph, build_adjacency_from_coords, load_coords, load_edge_list


@dataclass
class SpatioTemporalSeries:
    """Sensor values X (N x L), observation mask M, graph, and timestamps."""

    values: np.ndarray
    mask: np.ndarray
    graph: Graph
    timestamps: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.values.shape != self.mask.shape:
            raise ContractError(
                f"values {self.values.shape} and mask {self.mask.shape} disagree"
            )
        if not set(np.unique(self.mask)) <= {0.0, 1.0}:
            raise ContractError("mask entries must be 0 or 1")
        if self.graph.node_count != self.values.shape[0]:
            raise ContractError(
                f"graph has {self.graph.node_count} nodes, values have "
                f"{self.values.shape[0]}"
            )
        if not self.timestamps:
            self.timestamps = [str(i) for i in range(self.values.shape[1])]
        if len(self.timestamps) != self.values.shape[1]:
            raise ContractError(
                f"{len(self.timestamps)} timestamps for {self.values.shape[1]} steps"
            )

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def with_mask(self, mask: np.ndarray) -> "SpatioTemporalSeries":
        return replace(self, mask=np.asarray(mask, dtype=np.float64))

    def slice_steps(self, start: int, stop: int) -> "SpatioTemporalSeries":
        return SpatioTemporalSeries(
            values=self.values[:, start:stop].copy(),
            mask=self.mask[:, start:stop].copy(),
            graph=self.graph,
            timestamps=self.timestamps[start:stop],
        )


@dataclass
class Normalizer:
    """Per-node z-score statistics fitted on observed entries only."""

    means: np.ndarray
    stds: np.ndarray

    EPS = 1e-6

    @classmethod
    def fit(cls, values: np.ndarray, mask: np.ndarray) -> "Normalizer":
        obs = mask > 0
        counts = obs.sum(axis=1)
        means = np.zeros(values.shape[0])
        stds = np.ones(values.shape[0])
        for i in range(values.shape[0]):
            if counts[i] > 0:
                v = values[i, obs[i]]
                means[i] = v.mean()
                stds[i] = max(v.std(), cls.EPS)
        return cls(means=means, stds=stds)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.means[:, None]) / self.stds[:, None]

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.stds[:, None] + self.means[:, None]


@dataclass
class Window:
    """One training/evaluation window cut from a series."""

    values: np.ndarray  # (N, L_w)
    mask: np.ndarray
    start: int


@dataclass
class MaskedBatch:
    """A window with its condition/target split and pre-imputation fills.

    ``cond_mask`` and ``target_mask`` are disjoint and their union is the
    window's observation mask; ``x1`` and ``xg`` are computed from
    condition-visible values only, so targets stay hidden from conditioning.
    """

    values: np.ndarray
    mask: np.ndarray
    cond_mask: np.ndarray
    target_mask: np.ndarray
    x1: np.ndarray
    xg: np.ndarray
    start: int


@dataclass
class TrainingMaskConfig:
    point_ratio_max: float = 1.0
    block_seg_prob: float = 0.05
    block_min_len: int = 2
    block_max_len: int = 8
    block_point_ratio: float = 0.05


@dataclass
class SynthSpec:
    """Knobs for the synthetic sinusoid-mixture generator."""

    n_components: int = 3
    period_range: tuple[float, float] = (6.0, 36.0)
    amp_range: tuple[float, float] = (0.4, 1.2)
    noise_std: float = 0.1
    smooth_passes: int = 2
    smooth_weight: float = 0.6


# ---------------------------------------------------------------------------
# ingestion


def load_series(values_path: str | Path, edge_path: str | Path | None = None,
                coords_path: str | Path | None = None,
                coord_threshold: float = 0.1) -> SpatioTemporalSeries:
    """Read a values CSV plus either an edge list or coordinates into a series.

    Values CSV header is ``time,node_0,...,node_{N-1}``; empty cells mark
    missing observations. Without graph inputs the adjacency is all-zero
    (self-loops only after normalization).
    """
    values_path = Path(values_path)
    with values_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{values_path}: empty file")
        if len(header) < 2 or header[0].strip() != "time":
            raise ParseError(
                f"{values_path}: expected header 'time,node_0,...', got {header}"
            )
        n_nodes = len(header) - 1
        timestamps: list[str] = []
        rows: list[list[float]] = []
        mask_rows: list[list[float]] = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_nodes + 1:
                raise ParseError(
                    f"{values_path}:{row_no}: ragged row, expected "
                    f"{n_nodes + 1} cells, got {len(row)}"
                )
            timestamps.append(row[0])
            vals, msk = [], []
            for col, cell in enumerate(row[1:], start=1):
                cell = cell.strip()
                if cell == "":
                    vals.append(0.0)
                    msk.append(0.0)
                else:
                    try:
                        vals.append(float(cell))
                    except ValueError as exc:
                        raise ParseError(
                            f"{values_path}:{row_no}: column {col} "
                            f"is not numeric: {cell!r}"
                        ) from exc
                    msk.append(1.0)
            rows.append(vals)
            mask_rows.append(msk)
    if not rows:
        raise ParseError(f"{values_path}: no data rows")
    values = np.array(rows).T  # (N, L)
    mask = np.array(mask_rows).T

    if edge_path is not None:
        graph = load_edge_list(edge_path, n_nodes)
    elif coords_path is not None:
        coords = load_coords(coords_path)
        if coords.shape[0] != n_nodes:
            raise ParseError(
                f"{coords_path}: {coords.shape[0]} coordinate rows for "
                f"{n_nodes} value columns"
            )
        graph = build_adjacency_from_coords(coords, threshold=coord_threshold)
    else:
        graph = Graph(adjacency=np.zeros((n_nodes, n_nodes)))
    return SpatioTemporalSeries(values=values, mask=mask, graph=graph,
                                timestamps=timestamps)


def save_series(series: SpatioTemporalSeries, path: str | Path) -> None:
    """Write the transposed values CSV; masked-out cells are left empty."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"node_{i}" for i in range(series.n_nodes)])
        for col in range(series.n_steps):
            row: list[str] = [series.timestamps[col]]
            for i in range(series.n_nodes):
                if series.mask[i, col] > 0:
                    row.append(repr(float(series.values[i, col])))
                else:
                    row.append("")
            writer.writerow(row)


def save_mask(mask: np.ndarray, timestamps: list[str], path: str | Path) -> None:
    """Mask export mirroring the values CSV shape with 0/1 cells."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"node_{i}" for i in range(mask.shape[0])])
        for col in range(mask.shape[1]):
            writer.writerow([timestamps[col]] +
                            [str(int(mask[i, col])) for i in range(mask.shape[0])])


# ---------------------------------------------------------------------------
# synthetic data


def _ring_adjacency(n: int) -> np.ndarray:
    a = np.zeros((n, n))
    if n > 1:
        for i in range(n):
            a[i, (i + 1) % n] = 1.0
            a[(i + 1) % n, i] = 1.0
    return a


def _draw_components(rng: np.random.Generator, n_nodes: int, spec: SynthSpec):
    """Per-node (amp, period, phase) triples for the sinusoid mixture."""
    lo_p, hi_p = spec.period_range
    lo_a, hi_a = spec.amp_range
    amps = rng.uniform(lo_a, hi_a, size=(n_nodes, spec.n_components))
    periods = rng.uniform(lo_p, hi_p, size=(n_nodes, spec.n_components))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_nodes, spec.n_components))
    return amps, periods, phases


def synth_dataset(n_nodes: int, length: int, seed: int,
                  spec: SynthSpec | None = None) -> SpatioTemporalSeries:
    """Seeded sinusoid mixture with ring-graph spatial smoothing plus noise.

    Fully observed; deterministic for a fixed seed.
    """
    if n_nodes < 1:
        raise ContractError(f"need at least one node, got {n_nodes}")
    spec = spec or SynthSpec()
    rng = np.random.default_rng(seed)
    amps, periods, phases = _draw_components(rng, n_nodes, spec)
    steps = np.arange(length)
    x = np.zeros((n_nodes, length))
    for i in range(n_nodes):
        for c in range(spec.n_components):
            x[i] += amps[i, c] * np.sin(2.0 * np.pi * steps / periods[i, c]
                                        + phases[i, c])
    a = _ring_adjacency(n_nodes)
    if n_nodes > 1:
        lam = spec.smooth_weight
        deg = a.sum(axis=1, keepdims=True)
        for _ in range(spec.smooth_passes):
            x = (1.0 - lam) * x + lam * (a @ x) / deg
    if spec.noise_std > 0:
        x = x + spec.noise_std * rng.standard_normal(x.shape)
    return SpatioTemporalSeries(
        values=x,
        mask=np.ones_like(x),
        graph=Graph(adjacency=a),
        timestamps=[str(i) for i in range(length)],
    )


# ---------------------------------------------------------------------------
# missing-pattern simulation


def mask_point(series: SpatioTemporalSeries, ratio: float,
               rng: np.random.Generator) -> np.ndarray:
    """Hide each observed entry independently with probability ``ratio``."""
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"ratio must be in [0, 1], got {ratio}")
    hidden = rng.random(series.mask.shape) < ratio
    return np.where(hidden, 0.0, series.mask)


def _block_hidden(shape: tuple[int, int], point_ratio: float, seg_prob: float,
                  min_len: int, max_len: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean hidden-set for the block pattern (segments union point noise)."""
    n, length = shape
    starts = rng.random(shape) < seg_prob
    lens = rng.integers(min_len, max_len + 1, size=shape)
    hidden = np.zeros(shape, dtype=bool)
    for i in range(n):
        for s in np.nonzero(starts[i])[0]:
            hidden[i, s:s + lens[i, s]] = True
    hidden |= rng.random(shape) < point_ratio
    return hidden


def mask_block(series: SpatioTemporalSeries, point_ratio: float, seg_prob: float,
               min_len: int, max_len: int, rng: np.random.Generator) -> np.ndarray:
    """Per-sensor outage segments (per-step Bernoulli starts) plus point noise."""
    if not (1 <= min_len <= max_len <= series.n_steps):
        raise ContractError(
            f"need 1 <= min_len <= max_len <= L, got {min_len}, {max_len}, "
            f"{series.n_steps}"
        )
    hidden = _block_hidden(series.mask.shape, point_ratio, seg_prob,
                           min_len, max_len, rng)
    return np.where(hidden, 0.0, series.mask)


# ---------------------------------------------------------------------------
# pre-imputation fills


def forward_interpolate(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Carry each node's most recent observed value forward into gaps.

    Leading gaps take the node's first observed value; an all-missing node
    becomes 0 (normalized scale).
    """
    n, length = values.shape
    obs = mask > 0
    idx = np.where(obs, np.arange(length)[None, :], -1)
    last = np.maximum.accumulate(idx, axis=1)
    carried = np.take_along_axis(values, np.clip(last, 0, None), axis=1)
    has_any = obs.any(axis=1)
    first_idx = np.argmax(obs, axis=1)
    first_val = np.where(has_any, values[np.arange(n), first_idx], 0.0)
    out = np.where(last >= 0, carried, first_val[:, None])
    return np.where(has_any[:, None], out, 0.0)


def gaussian_fill(values: np.ndarray, mask: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Replace missing entries with independent standard-normal draws."""
    noise = rng.standard_normal(values.shape)
    return np.where(mask > 0, values, noise)


# ---------------------------------------------------------------------------
# windowing and training masks


def window(series: SpatioTemporalSeries, l_w: int, stride: int) -> list[Window]:
    """Overlapping windows of length ``l_w``; a trailing partial window is dropped."""
    if l_w > series.n_steps:
        raise ContractError(
            f"window length {l_w} exceeds series length {series.n_steps}"
        )
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    out = []
    for start in range(0, series.n_steps - l_w + 1, stride):
        out.append(Window(values=series.values[:, start:start + l_w],
                          mask=series.mask[:, start:start + l_w],
                          start=start))
    return out


def training_mask(win: Window, strategy: str, rng: np.random.Generator,
                  cfg: TrainingMaskConfig | None = None) -> MaskedBatch | None:
    """Split a window's observed entries into condition and target sets.

    Returns None (with a warning) for windows with no observed entries.
    Hybrid picks point or block with probability 0.5 per window.
    """
    if strategy not in ("point", "block", "hybrid"):
        raise ContractError(f"unknown masking strategy {strategy!r}")
    cfg = cfg or TrainingMaskConfig()
    obs = win.mask > 0
    if not obs.any():
        warnings.warn(f"window at step {win.start} has no observed entries; skipped")
        return None
    if strategy == "hybrid":
        strategy = "point" if rng.random() < 0.5 else "block"
    if strategy == "point":
        ratio = rng.uniform(0.0, cfg.point_ratio_max)
        hidden = rng.random(win.mask.shape) < ratio
    else:
        length = win.mask.shape[1]
        max_len = min(cfg.block_max_len, length)
        min_len = min(cfg.block_min_len, max_len)
        hidden = _block_hidden(win.mask.shape, cfg.block_point_ratio,
                               cfg.block_seg_prob, min_len, max_len, rng)
    target = obs & hidden
    cond = obs & ~target
    cond_f = cond.astype(np.float64)
    x1 = forward_interpolate(win.values, cond_f)
    xg = gaussian_fill(np.where(cond, win.values, 0.0), cond_f, rng)
    return MaskedBatch(
        values=win.values,
        mask=win.mask,
        cond_mask=cond_f,
        target_mask=target.astype(np.float64),
        x1=x1,
        xg=xg,
        start=win.start,
    )


def split_series(series: SpatioTemporalSeries,
                 fracs: tuple[float, float, float] = (0.7, 0.1, 0.2)):
    """Contiguous train/validation/test split along the time axis."""
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ContractError(f"split fractions must sum to 1, got {fracs}")
    length = series.n_steps
    a = int(round(fracs[0] * length))
    b = a + int(round(fracs[1] * length))
    return (series.slice_steps(0, a), series.slice_steps(a, b),
            series.slice_steps(b, length))
