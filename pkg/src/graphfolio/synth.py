"""Correlated geometric random walks emitted as OHLCV series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market_data import OhlcvSeries


@dataclass(frozen=True)
class SynthSpec:
    assets: int = 5
    days: int = 400
    start: str = "2010-01-04"
    drift: tuple[float, ...] | float = 0.0  # daily log drift, per asset or shared
    volatility: tuple[float, ...] | float = 0.01  # daily log-return sd
    correlation: float = 0.0
    intraday: float = 0.5  # high/low excursion as a multiple of volatility
    start_price: float = 100.0
    volume: float = 1e6

    def vector(self, v) -> np.ndarray:
        arr = np.broadcast_to(np.asarray(v, dtype=float), (self.assets,)).copy()
        return arr


def business_days(start, count: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(count), roll="forward")


def correlation_factor(m: int, rho: float) -> np.ndarray:
    """Cholesky factor of the equicorrelation matrix."""
    if m > 1 and not -1.0 / (m - 1) < rho < 1.0:
        raise ValueError(f"pairwise correlation {rho} is not valid for {m} assets")
    c = np.full((m, m), rho)
    np.fill_diagonal(c, 1.0)
    return np.linalg.cholesky(c)


def generate(spec: SynthSpec, seed: int, names: Sequence[str] | None = None) -> list[OhlcvSeries]:
    m, n = spec.assets, spec.days
    names = list(names) if names else [f"SYN{i:02d}" for i in range(m)]
    if len(names) != m:
        raise ValueError(f"{len(names)} names for {m} assets")
    rng = np.random.default_rng(seed)
    mu = spec.vector(spec.drift)
    sd = spec.vector(spec.volatility)
    if np.any(sd < 0):
        raise ValueError("volatility must be non-negative")
    shocks = rng.standard_normal((n, m)) @ correlation_factor(m, spec.correlation).T
    log_ret = mu + sd * shocks
    close = spec.start_price * np.exp(np.cumsum(log_ret, axis=0))
    opens = np.vstack([np.full((1, m), spec.start_price), close[:-1]])
    wiggle = np.abs(rng.standard_normal((2, n, m))) * sd * spec.intraday
    high = np.maximum(opens, close) * np.exp(wiggle[0])
    low = np.minimum(opens, close) * np.exp(-wiggle[1])
    vol = np.round(spec.volume * np.exp(0.1 * rng.standard_normal((n, m))))
    dates = business_days(spec.start, n)
    return [
        OhlcvSeries(names[j], dates, opens[:, j].copy(), high[:, j].copy(), low[:, j].copy(),
                    close[:, j].copy(), vol[:, j].copy())
        for j in range(m)
    ]
