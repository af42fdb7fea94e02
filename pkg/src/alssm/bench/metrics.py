"""Estimation-error summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from alssm.errors import ParameterError


@dataclass(frozen=True)
class Metrics:
    rmse: float
    emax: float
    mape: float = math.nan
    mape_skipped: int = 0
    cpu_seconds: float = math.nan
    fb_passes: int = 0

    def as_row(self) -> dict:
        return {"rmse": self.rmse, "emax": self.emax, "mape": self.mape, "mape_skipped": self.mape_skipped}


def _aligned(estimates, truth):
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ParameterError(f"estimate shape {est.shape} does not match truth shape {tru.shape}")
    if est.size == 0:
        raise ParameterError("cannot score empty series")
    return est, tru


def mape(estimates, truth) -> tuple[float, int]:
    """Mean of ``|est / truth - 1|`` over non-zero truth entries, and how many zeros were skipped."""
    est, tru = _aligned(estimates, truth)
    keep = tru != 0
    skipped = int(tru.size - keep.sum())
    if not keep.any():
        return math.nan, skipped
    return float(np.mean(np.abs(est[keep] / tru[keep] - 1.0))), skipped


def metrics(estimates, truth, cpu_seconds: float = math.nan, fb_passes: int = 0, with_mape: bool = False) -> Metrics:
    """RMSE over time and dimensions, and the maximum absolute error."""
    est, tru = _aligned(estimates, truth)
    err = est - tru
    m, skipped = mape(est, tru) if with_mape else (math.nan, 0)
    return Metrics(
        rmse=float(np.sqrt(np.mean(err**2))),
        emax=float(np.max(np.abs(err))),
        mape=m,
        mape_skipped=skipped,
        cpu_seconds=float(cpu_seconds),
        fb_passes=int(fb_passes),
    )
