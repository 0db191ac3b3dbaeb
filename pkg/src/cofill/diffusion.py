"""Noise schedule, forward noising, training objective, and the reverse
diffusion imputation sampler."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .conditioning import build_conditioning
from .data import (MaskedBatch, Normalizer, SpatioTemporalSeries,
                   TrainingMaskConfig, forward_interpolate, split_series,
                   training_mask, window)
from .errors import ConfigError, ContractError, TrainingDiverged
from .graph import normalize_adjacency
from .noise_model import CoFillModel, predict_noise
from .tensor import Tensor


@dataclass
class NoiseSchedule:
    """Per-step noise levels; index 0 corresponds to diffusion step t=1."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    sigmas: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        prev = np.concatenate([[1.0], self.alpha_bars[:-1]])
        # posterior variance; exactly zero for the final (t=1) step
        var = (1.0 - prev) / (1.0 - self.alpha_bars) * self.betas
        self.sigmas = np.sqrt(var)

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal retention; t=0 is the identity convention."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def build_schedule(n_steps: int, beta_min: float, beta_max: float,
                   kind: str = "quadratic") -> NoiseSchedule:
    """Linear or quadratic (evenly spaced sqrt-beta) schedule."""
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(
            f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )
    if n_steps < 1:
        raise ConfigError(f"need at least one diffusion step, got {n_steps}")
    if n_steps == 1:
        betas = np.array([beta_max])
    elif kind == "linear":
        betas = np.linspace(beta_min, beta_max, n_steps)
    elif kind == "quadratic":
        betas = np.linspace(beta_min ** 0.5, beta_max ** 0.5, n_steps) ** 2
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas=betas)


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if eps.shape != x0.shape:
        raise ContractError(f"noise shape {eps.shape} != signal shape {x0.shape}")
    if not 0 <= t <= schedule.n_steps:
        raise ContractError(f"step {t} outside [0, {schedule.n_steps}]")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray,
                 schedule: NoiseSchedule, rng: np.random.Generator,
                 mean_coef: str = "alpha") -> np.ndarray:
    """One denoising step from t to t-1; no noise is added at t=1.

    ``mean_coef`` selects the leading coefficient: "alpha" uses
    1/sqrt(alpha_t) (the standard derivation), "alpha_bar" the cumulative
    variant, kept inspectable behind this flag.
    """
    if not 1 <= t <= schedule.n_steps:
        raise ContractError(f"step {t} outside [1, {schedule.n_steps}]")
    i = t - 1
    if mean_coef == "alpha":
        lead = 1.0 / np.sqrt(schedule.alphas[i])
    elif mean_coef == "alpha_bar":
        lead = 1.0 / np.sqrt(schedule.alpha_bars[i])
    else:
        raise ConfigError(f"unknown mean_coef {mean_coef!r}")
    mean = lead * (x_t - schedule.betas[i]
                   / np.sqrt(1.0 - schedule.alpha_bars[i]) * eps_hat)
    if t == 1:
        return mean
    return mean + schedule.sigmas[i] * rng.standard_normal(x_t.shape)


# ---------------------------------------------------------------------------
# training objective


def collate(batches: list[MaskedBatch]) -> dict[str, np.ndarray]:
    """Stack per-window arrays into (B, N, L) training inputs."""
    return {
        "values": np.stack([b.values for b in batches]),
        "cond": np.stack([b.cond_mask for b in batches]),
        "target": np.stack([b.target_mask for b in batches]),
        "x1": np.stack([b.x1 for b in batches]),
        "xg": np.stack([b.xg for b in batches]),
    }


def _noisy_input(arrs: dict[str, np.ndarray], ts: np.ndarray,
                 eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Diffusion input: noised truth at targets, clean values at condition
    entries, Gaussian fill at truly-missing entries."""
    cond, target = arrs["cond"], arrs["target"]
    ab = schedule.alpha_bars[ts - 1][:, None, None]
    x_clean = arrs["values"] * (cond + target)
    x_t = np.sqrt(ab) * x_clean + np.sqrt(1.0 - ab) * eps
    return target * x_t + cond * arrs["values"] + (1.0 - cond - target) * arrs["xg"]


def training_loss(batches: list[MaskedBatch], model: CoFillModel,
                  schedule: NoiseSchedule, a_gcn: np.ndarray,
                  rng: np.random.Generator) -> Tensor | None:
    """Mean squared noise-prediction residual over target entries.

    Returns None (skip signal) when the batch has no target entries.
    """
    if not batches:
        raise ContractError("empty batch")
    arrs = collate(batches)
    n_target = arrs["target"].sum()
    if n_target == 0:
        return None
    b = arrs["values"].shape[0]
    ts = rng.integers(1, schedule.n_steps + 1, size=b)
    eps = rng.standard_normal(arrs["values"].shape)
    x_noisy = _noisy_input(arrs, ts, eps, schedule)
    x1 = arrs["x1"] if model.flags.use_forward else arrs["cond"] * arrs["values"]
    eps_hat = model.predict(x1, x_noisy, ts, a_gcn, rng=rng, training=True)
    residual = (Tensor(eps) - eps_hat) * Tensor(arrs["target"])
    return (residual * residual).sum() * (1.0 / n_target)


# ---------------------------------------------------------------------------
# imputation sampler


@dataclass
class ImputationResult:
    """Posterior samples (original units), their medians, and the target mask."""

    samples: np.ndarray        # (S, N, L)
    point_estimate: np.ndarray  # (N, L) per-entry median over samples
    target_mask: np.ndarray    # 1 where entries were imputed


def _chunk_starts(length: int, l_w: int) -> list[int]:
    """Disjoint cover of [0, length) by windows of l_w; the last one is
    end-aligned when length is not a multiple."""
    starts = list(range(0, length - l_w + 1, l_w))
    if not starts:
        return [0]
    if starts[-1] + l_w < length:
        starts.append(length - l_w)
    return starts


def impute(series: SpatioTemporalSeries, model: CoFillModel,
           schedule: NoiseSchedule, normalizer: Normalizer, n_samples: int,
           rng: np.random.Generator, window_length: int | None = None,
           mean_coef: str = "alpha", max_batch: int = 128) -> ImputationResult:
    """Reverse-diffusion imputation of every missing entry.

    Observed entries are clamped to their true values after every reverse
    step and copied bit-exactly into each returned sample.
    """
    if n_samples < 1:
        raise ContractError(f"need n_samples >= 1, got {n_samples}")
    n, length = series.values.shape
    mask = series.mask
    if mask.all():
        warnings.warn("series is fully observed; nothing to impute")
        samples = np.repeat(series.values[None], n_samples, axis=0)
        return ImputationResult(samples=samples,
                                point_estimate=series.values.copy(),
                                target_mask=np.zeros_like(mask))
    l_w = min(window_length or length, length)
    a_gcn = normalize_adjacency(series.graph).a_gcn
    x_norm = normalizer.transform(series.values) * mask
    if model.flags.use_forward:
        x1_full = forward_interpolate(x_norm, mask)
    else:
        x1_full = x_norm

    starts = _chunk_starts(length, l_w)
    jobs = [(s_idx, st) for s_idx in range(n_samples) for st in starts]
    chunk_out: dict[tuple[int, int], np.ndarray] = {}
    with T.no_grad():
        for lo in range(0, len(jobs), max_batch):
            group = jobs[lo:lo + max_batch]
            x1 = np.stack([x1_full[:, st:st + l_w] for _, st in group])
            m = np.stack([mask[:, st:st + l_w] for _, st in group])
            xo = np.stack([x_norm[:, st:st + l_w] for _, st in group])
            # the conditioning is a pure function of x1, invariant over the
            # reverse loop, so it is built once per group
            c_con = build_conditioning(x1, a_gcn, model.cond,
                                       flags=model.flags)
            x = m * xo + (1.0 - m) * rng.standard_normal(x1.shape)
            for t in range(schedule.n_steps, 0, -1):
                eps_hat = predict_noise(x1, x, c_con, a_gcn,
                                        np.full(len(group), t),
                                        model.total_steps, model.noise).data
                x = reverse_step(x, t, eps_hat, schedule, rng,
                                 mean_coef=mean_coef)
                x = m * xo + (1.0 - m) * x
            for row, (s_idx, st) in enumerate(group):
                chunk_out[(s_idx, st)] = x[row]

    samples = np.empty((n_samples, n, length))
    for s_idx in range(n_samples):
        full = np.zeros((n, length))
        covered = 0
        for st in starts:
            lo = max(st, covered)
            full[:, lo:st + l_w] = chunk_out[(s_idx, st)][:, lo - st:]
            covered = st + l_w
        out = normalizer.inverse(full)
        obs = mask > 0
        out[obs] = series.values[obs]
        samples[s_idx] = out
    point = np.median(samples, axis=0)
    point[mask > 0] = series.values[mask > 0]
    return ImputationResult(samples=samples, point_estimate=point,
                            target_mask=1.0 - mask)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: CoFillModel
    normalizer: Normalizer
    schedule: NoiseSchedule
    log_rows: list[dict]
    best_val_mae: float
    best_epoch: int


def _validation_batches(val_series: SpatioTemporalSeries, ratio: float,
                        rng: np.random.Generator) -> SpatioTemporalSeries:
    """Fixed point-masked copy of the validation split for epoch scoring."""
    hidden = (rng.random(val_series.mask.shape) < ratio) & (val_series.mask > 0)
    return val_series.with_mask(np.where(hidden, 0.0, val_series.mask))


def _validation_mae(model: CoFillModel, schedule: NoiseSchedule,
                    val_masked: SpatioTemporalSeries,
                    val_truth: SpatioTemporalSeries, normalizer: Normalizer,
                    l_w: int, n_samples: int, seed: int,
                    mean_coef: str) -> float:
    eval_mask = (val_truth.mask > 0) & (val_masked.mask == 0)
    if not eval_mask.any():
        return float("nan")
    result = impute(val_masked, model, schedule, normalizer, n_samples,
                    np.random.default_rng(seed), window_length=l_w,
                    mean_coef=mean_coef)
    err = np.abs(result.point_estimate - val_truth.values)
    return float(err[eval_mask].mean())


def train(series: SpatioTemporalSeries, model: CoFillModel,
          schedule: NoiseSchedule, *, epochs: int, batch_size: int,
          window_length: int, window_stride: int, lr_max: float,
          lr_min: float, masking_strategy: str, seed: int,
          mask_cfg: TrainingMaskConfig | None = None,
          val_ratio: float = 0.25, val_samples: int = 4,
          mean_coef: str = "alpha") -> TrainResult:
    """Mask, noise, and denoise over epochs; returns the best-validation model.

    The normalizer is fitted on the training split's observed entries only.
    The log has one row per optimizer step; val_mae is filled on each epoch's
    final row.
    """
    train_s, val_s, _ = split_series(series)
    normalizer = Normalizer.fit(train_s.values, train_s.mask)
    mask_cfg = mask_cfg or TrainingMaskConfig()
    a_gcn = normalize_adjacency(series.graph).a_gcn

    train_norm = SpatioTemporalSeries(
        values=normalizer.transform(train_s.values) * train_s.mask,
        mask=train_s.mask, graph=series.graph,
        timestamps=train_s.timestamps)
    windows = window(train_norm, window_length, window_stride)
    if not windows:
        raise ContractError("training split yields no windows")

    seq = np.random.SeedSequence(seed)
    rng_train, rng_val = (np.random.default_rng(s) for s in seq.spawn(2))
    val_masked = _validation_batches(val_s, val_ratio, rng_val)

    params = model.params()
    state = T.AdamState(params)
    log_rows: list[dict] = []
    best_val = float("inf")
    best_epoch = -1
    best_snapshot = {k: p.data.copy() for k, p in params.items()}
    global_step = 0

    for epoch in range(epochs):
        lr = T.cosine_lr(epoch, max(epochs - 1, 1), lr_max, lr_min)
        order = rng_train.permutation(len(windows))
        epoch_rows: list[dict] = []
        for lo in range(0, len(order), batch_size):
            chosen = [windows[i] for i in order[lo:lo + batch_size]]
            batches = []
            for win in chosen:
                mb = training_mask(win, masking_strategy, rng_train, mask_cfg)
                if mb is not None:
                    batches.append(mb)
            if not batches:
                continue
            loss = training_loss(batches, model, schedule, a_gcn, rng_train)
            if loss is None:
                continue
            loss_val = loss.item()
            global_step += 1
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, step "
                    f"{global_step} (batch starting at window index {lo})"
                )
            T.zero_grad(params)
            T.backward(loss, params)
            grads = {k: p.grad for k, p in params.items()}
            T.adam_step(params, grads, state, lr)
            epoch_rows.append({"epoch": epoch + 1, "step": global_step,
                               "loss": loss_val, "lr": lr, "val_mae": ""})
        if epoch_rows:
            val_mae = _validation_mae(model, schedule, val_masked, val_s,
                                      normalizer, window_length, val_samples,
                                      seed, mean_coef)
            epoch_rows[-1]["val_mae"] = val_mae
            if np.isfinite(val_mae) and val_mae < best_val:
                best_val = val_mae
                best_epoch = epoch + 1
                best_snapshot = {k: p.data.copy() for k, p in params.items()}
        log_rows.extend(epoch_rows)

    if best_epoch >= 0:
        for k, p in params.items():
            p.data = best_snapshot[k]
    return TrainResult(model=model, normalizer=normalizer, schedule=schedule,
                       log_rows=log_rows, best_val_mae=best_val,
                       best_epoch=best_epoch)
