"""Conditional diffusion imputation for spatiotemporal sensor data.

Submodules load lazily so the CLI can pin thread environment variables
before numpy is imported.
"""
from __future__ import annotations

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "tensor",
    "CoFillImputer": "imputers",
    "MeanImputer": "imputers",
    "LinearInterpolationImputer": "imputers",
    "CoFillModel": "noise_model",
    "ModelDims": "noise_model",
    "SpatioTemporalSeries": "data",
    "Normalizer": "data",
    "SynthSpec": "data",
    "synth_dataset": "data",
    "load_series": "data",
    "save_series": "data",
    "Graph": "graph",
    "normalize_adjacency": "graph",
    "NoiseSchedule": "diffusion",
    "build_schedule": "diffusion",
    "impute": "diffusion",
    "train": "diffusion",
    "ImputationResult": "diffusion",
    "RunConfig": "config",
    "load_config": "config",
    "AblationFlags": "conditioning",
    "evaluate": "metrics",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
