"""Technical indicators over daily OHLCV arrays.

Every function is causal (the value at index ``i`` uses rows ``<= i`` only)
and returns a float array of the input length with ``NaN`` before the
indicator's warm-up index.  ``warmup(name, params)`` reports that index.

Definitions follow the textbook forms in J. J. Murphy, *Technical Analysis
of the Financial Markets* (1999), and J. W. Wilder, *New Concepts in
Technical Trading Systems* (1978), where the two agree:

ATR (Wilder)
    TR_i = max(H_i - L_i, |H_i - C_{i-1}|, |L_i - C_{i-1}|) for i >= 1.
    ATR_n = mean(TR_1..TR_n); ATR_i = (ATR_{i-1} * (n - 1) + TR_i) / n.
CCI (Lambert)
    TP = (H + L + C) / 3; CCI = (TP - SMA_n(TP)) / (0.015 * MD_n), MD the mean
    absolute deviation of TP from its SMA over the same window.  0 when MD = 0.
CSI (Wilder)
    CSI = ADXR * ATR * (V / sqrt(M)) / (150 + C) * 100 with big-point value V,
    margin M and commission C (defaults 1, 1, 0 for cash equities).  ADXR is the
    mean of today's ADX and the ADX ``n - 1`` bars ago; ADX is the Wilder
    smoothing of DX = 100 |+DI - -DI| / (+DI + -DI).
Demand index (Sibbet)
    WP = H + L + 2C; P = (WP_i - WP_{i-1}) / WP_{i-1}; A = SMA_10 of the two-day
    range max(H_i, H_{i-1}) - min(L_i, L_{i-1}); K = 3 C / A; V = volume over
    its 10-day SMA.  On up days BP = V, SP = V exp(-K P); on down days SP = V,
    BP = V exp(K P).  DI = 100 (BPs - SPs) / max(BPs, SPs) with BPs, SPs the
    10-day SMAs; 0 when both vanish.
DMI (Chande dynamic momentum index)
    Vi = std_5(C) / SMA_10(std_5(C)); period = clamp(int(14 / Vi), 5, 30);
    DMI = RSI over the last ``period`` close changes (simple averages).  A flat
    window (no gains, no losses) reads 50; Vi is taken as 1 when the
    volatility average is 0.
EMA
    lambda = 2 / (n + 1), seeded with SMA_n at index n - 1.
HMA (Hull)
    WMA(2 WMA_{n//2}(C) - WMA_n(C), floor(sqrt(n))), linear weights 1..len.
Momentum
    C_i - C_{i-n}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INDICATOR_NAMES = ("atr", "cci", "csi", "demand", "dmi", "ema", "hma", "momentum")


@dataclass(frozen=True)
class IndicatorParams:
    atr: int = 14
    cci: int = 20
    csi: int = 14
    csi_point_value: float = 1.0
    csi_margin: float = 1.0
    csi_commission: float = 0.0
    demand: int = 10
    dmi_base: int = 14
    dmi_std: int = 5
    dmi_avg: int = 10
    dmi_min: int = 5
    dmi_max: int = 30
    ema: int = 12
    hma: int = 9
    momentum: int = 10

    def __post_init__(self):
        for name in ("atr", "cci", "csi", "demand", "dmi_base", "dmi_std", "dmi_avg",
                     "dmi_min", "dmi_max", "ema", "momentum"):
            if getattr(self, name) < 1:
                raise ValueError(f"indicator window {name} must be >= 1")
        if self.hma < 2:
            raise ValueError("hma window must be >= 2")
        if self.dmi_min > self.dmi_max:
            raise ValueError("dmi_min must not exceed dmi_max")


def warmup(name: str, p: IndicatorParams = IndicatorParams()) -> int:
    """First index at which indicator ``name`` is defined."""
    if name == "atr":
        return p.atr
    if name == "cci":
        return p.cci - 1
    if name == "csi":
        # ATR/DI at n, first ADX at 2n - 1, ADXR needs ADX n - 1 bars back
        return max(2 * p.csi - 1 + p.csi - 1, p.csi)
    if name == "demand":
        return 2 * p.demand - 1
    if name == "dmi":
        return max(p.dmi_std - 1 + p.dmi_avg - 1, p.dmi_max)
    if name == "ema":
        return p.ema - 1
    if name == "hma":
        return p.hma - 1 + int(math.isqrt(p.hma)) - 1
    if name == "momentum":
        return p.momentum
    raise KeyError(name)


def max_warmup(p: IndicatorParams = IndicatorParams()) -> int:
    return max(warmup(n, p) for n in INDICATOR_NAMES)


def _nan(n: int) -> np.ndarray:
    return np.full(n, np.nan)


def sma(x: np.ndarray, n: int) -> np.ndarray:
    out = _nan(len(x))
    if len(x) >= n:
        out[n - 1 :] = sliding_window_view(x, n).mean(axis=1)
    return out


def wma(x: np.ndarray, n: int) -> np.ndarray:
    """Linearly weighted moving average; NaNs in the input propagate."""
    out = _nan(len(x))
    if len(x) >= n:
        w = np.arange(1, n + 1, dtype=float)
        out[n - 1 :] = sliding_window_view(x, n) @ w / w.sum()
    return out


def wilder_smooth(x: np.ndarray, n: int, start: int) -> np.ndarray:
    """Mean of x[start-n+1..start], then s_i = (s_{i-1}(n-1) + x_i)/n."""
    out = _nan(len(x))
    if len(x) <= start:
        return out
    out[start] = x[start - n + 1 : start + 1].mean()
    for i in range(start + 1, len(x)):
        out[i] = (out[i - 1] * (n - 1) + x[i]) / n
    return out


def true_range(high, low, close) -> np.ndarray:
    tr = _nan(len(close))
    prev = close[:-1]
    tr[1:] = np.maximum.reduce(
        [high[1:] - low[1:], np.abs(high[1:] - prev), np.abs(low[1:] - prev)]
    )
    return tr


def atr(high, low, close, n: int = 14) -> np.ndarray:
    return wilder_smooth(true_range(high, low, close), n, n)


def cci(high, low, close, n: int = 20) -> np.ndarray:
    tp = (high + low + close) / 3.0
    out = _nan(len(tp))
    if len(tp) < n:
        return out
    win = sliding_window_view(tp, n)
    mu = win.mean(axis=1)
    md = np.abs(win - mu[:, None]).mean(axis=1)
    dev = tp[n - 1 :] - mu
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(md > 0, dev / (0.015 * np.where(md > 0, md, 1.0)), 0.0)
    out[n - 1 :] = val
    return out


def adx(high, low, close, n: int = 14) -> np.ndarray:
    up = np.zeros(len(close))
    dn = np.zeros(len(close))
    up_move = high[1:] - high[:-1]
    dn_move = low[:-1] - low[1:]
    up[1:] = np.where((up_move > dn_move) & (up_move > 0), up_move, 0.0)
    dn[1:] = np.where((dn_move > up_move) & (dn_move > 0), dn_move, 0.0)
    tr = true_range(high, low, close)
    tr_s = wilder_smooth(tr, n, n)
    up_s = wilder_smooth(up, n, n)
    dn_s = wilder_smooth(dn, n, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        pdi = np.where(tr_s > 0, 100.0 * up_s / tr_s, 0.0)
        mdi = np.where(tr_s > 0, 100.0 * dn_s / tr_s, 0.0)
        tot = pdi + mdi
        dx = np.where(tot > 0, 100.0 * np.abs(pdi - mdi) / tot, 0.0)
    dx[: n] = np.nan
    return wilder_smooth(dx, n, 2 * n - 1)


def csi(high, low, close, n: int = 14, point_value: float = 1.0, margin: float = 1.0,
        commission: float = 0.0) -> np.ndarray:
    a = adx(high, low, close, n)
    adxr = _nan(len(a))
    lag = n - 1
    adxr[lag:] = 0.5 * (a[lag:] + a[: len(a) - lag])
    scale = point_value / math.sqrt(margin) / (150.0 + commission) * 100.0
    return adxr * atr(high, low, close, n) * scale


def demand_index(high, low, close, volume, n: int = 10) -> np.ndarray:
    T = len(close)
    wp = high + low + 2.0 * close
    p = _nan(T)
    p[1:] = (wp[1:] - wp[:-1]) / wp[:-1]
    rng2 = _nan(T)
    rng2[1:] = np.maximum(high[1:], high[:-1]) - np.minimum(low[1:], low[:-1])
    avg_range = _nan(T)
    if T > n:
        avg_range[n:] = sliding_window_view(rng2[1:], n).mean(axis=1)
    avg_vol = sma(volume, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(avg_range > 0, 3.0 * close / np.where(avg_range > 0, avg_range, 1.0), 0.0)
        v = np.where(avg_vol > 0, volume / np.where(avg_vol > 0, avg_vol, 1.0), 0.0)
    k[np.isnan(avg_range)] = np.nan
    v[np.isnan(avg_vol)] = np.nan
    kp = k * p
    bp = np.where(p >= 0, v, v * np.exp(np.minimum(kp, 0.0)))
    sp = np.where(p >= 0, v * np.exp(-np.maximum(kp, 0.0)), v)
    bp[np.isnan(kp)] = np.nan
    sp[np.isnan(kp)] = np.nan
    bps = _nan(T)
    sps = _nan(T)
    first = n  # first defined bp
    if T >= first + n:
        bps[first + n - 1 :] = sliding_window_view(bp[first:], n).mean(axis=1)
        sps[first + n - 1 :] = sliding_window_view(sp[first:], n).mean(axis=1)
    big = np.maximum(bps, sps)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(big > 0, 100.0 * (bps - sps) / np.where(big > 0, big, 1.0), 0.0)
    out[np.isnan(big)] = np.nan
    return out


def _rsi_simple(changes: np.ndarray) -> float:
    gains = changes[changes > 0].sum()
    losses = -changes[changes < 0].sum()
    if gains == 0 and losses == 0:
        return 50.0
    return 100.0 * gains / (gains + losses)


def dmi(close, base: int = 14, std_n: int = 5, avg_n: int = 10, lo: int = 5, hi: int = 30) -> np.ndarray:
    T = len(close)
    out = _nan(T)
    sd = _nan(T)
    if T >= std_n:
        sd[std_n - 1 :] = sliding_window_view(close, std_n).std(axis=1)
    avg = _nan(T)
    if T >= std_n + avg_n - 1:
        avg[std_n + avg_n - 2 :] = sliding_window_view(sd[std_n - 1 :], avg_n).mean(axis=1)
    diffs = np.diff(close, prepend=np.nan)
    start = max(std_n + avg_n - 2, hi)
    for i in range(start, T):
        vi = sd[i] / avg[i] if avg[i] > 0 else 1.0
        period = hi if vi <= 0 else int(min(max(base / vi, lo), hi))
        out[i] = _rsi_simple(diffs[i - period + 1 : i + 1])
    return out


def ema(x: np.ndarray, n: int = 12) -> np.ndarray:
    out = _nan(len(x))
    if len(x) < n:
        return out
    lam = 2.0 / (n + 1.0)
    out[n - 1] = x[:n].mean()
    for i in range(n, len(x)):
        out[i] = lam * x[i] + (1.0 - lam) * out[i - 1]
    return out


def hma(x: np.ndarray, n: int = 9) -> np.ndarray:
    half = wma(x, n // 2)
    full = wma(x, n)
    raw = 2.0 * half - full
    s = int(math.isqrt(n))
    out = _nan(len(x))
    if len(x) >= n - 1 + s:
        out[n - 1 + s - 1 :] = wma(raw[n - 1 :], s)[s - 1 :]
    return out


def momentum(x: np.ndarray, n: int = 10) -> np.ndarray:
    out = _nan(len(x))
    out[n:] = x[n:] - x[:-n]
    return out


@dataclass
class IndicatorSet:
    """Indicator streams aligned with the source series' dates."""

    dates: np.ndarray
    values: dict[str, np.ndarray] = field(default_factory=dict)
    params: IndicatorParams = IndicatorParams()

    def matrix(self) -> np.ndarray:
        """(T, 8) array in ``INDICATOR_NAMES`` order."""
        return np.column_stack([self.values[k] for k in INDICATOR_NAMES])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


def compute_all(high, low, close, volume, p: IndicatorParams = IndicatorParams()) -> dict[str, np.ndarray]:
    high, low, close, volume = (np.asarray(a, dtype=float) for a in (high, low, close, volume))
    return {
        "atr": atr(high, low, close, p.atr),
        "cci": cci(high, low, close, p.cci),
        "csi": csi(high, low, close, p.csi, p.csi_point_value, p.csi_margin, p.csi_commission),
        "demand": demand_index(high, low, close, volume, p.demand),
        "dmi": dmi(close, p.dmi_base, p.dmi_std, p.dmi_avg, p.dmi_min, p.dmi_max),
        "ema": ema(close, p.ema),
        "hma": hma(close, p.hma),
        "momentum": momentum(close, p.momentum),
    }
