"""Price/indicator normalization and the restricted stacked autoencoder.

Each asset-day is described by 11 ratios: low, close and high over the same
day's open, then each of the 8 indicators over its previous-day value.  The
autoencoder compresses the 11 ratios to 3 latent values but is trained to
reconstruct only the three price ratios.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .indicators import INDICATOR_NAMES
from .market_data import DataError, Panel

logger = logging.getLogger(__name__)

N_PRICE = 3
N_FEATURES = N_PRICE + len(INDICATOR_NAMES)
LATENT = 3
ENCODER_WIDTHS = (N_FEATURES, 8, 5, LATENT)
DECODER_WIDTHS = (LATENT, 3, 3)
assert LATENT < N_FEATURES


def indicator_ratio(cur: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """cur / prev with 0/0 read as "unchanged" (1).  NaN marks x/0, x != 0."""
    cur = np.asarray(cur, dtype=float)
    prev = np.asarray(prev, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = cur / np.where(prev == 0, 1.0, prev)
    r = np.where(prev == 0, np.where(cur == 0, 1.0, np.nan), r)
    return r


@dataclass(frozen=True)
class NormalizedWindow:
    """Ratios for days t-n+1..t; arrays are (m, n) and fi is (m, n, 8)."""

    lo: np.ndarray
    cl: np.ndarray
    hi: np.ndarray
    fi: np.ndarray
    dates: np.ndarray

    @property
    def n(self) -> int:
        return self.lo.shape[1]

    def stacked(self) -> np.ndarray:
        """(m, n, 11) feature array: lo, cl, hi, then indicators."""
        return np.concatenate([self.lo[..., None], self.cl[..., None], self.hi[..., None], self.fi], axis=2)


def normalize_window(panel: Panel, indicators: np.ndarray, t: int, n: int) -> NormalizedWindow:
    """Normalize the ``n`` days ending at index ``t``.

    ``indicators`` is the (m, T, 8) cube from :meth:`Panel.indicators`.
    """
    lo = t - n + 1
    if n < 1 or lo - 1 < 0 or t >= len(panel):
        raise DataError(f"window of {n} days ending at index {t} needs indices {lo - 1}..{t}")
    days = slice(lo, t + 1)
    op = panel.open[:, days]
    cur = indicators[:, lo : t + 1, :]
    prev = indicators[:, lo - 1 : t, :]
    if np.isnan(prev).any() or np.isnan(cur).any():
        a, d, _ = np.argwhere(np.isnan(prev) | np.isnan(cur))[0]
        raise DataError(
            f"{panel.assets[a]} {panel.dates[lo + d]}: indicator undefined (inside warm-up)"
        )
    fi = indicator_ratio(cur, prev)
    if np.isnan(fi).any():
        a, d, k = np.argwhere(np.isnan(fi))[0]
        raise DataError(
            f"{panel.assets[a]} {panel.dates[lo + d]}: division by zero "
            f"(previous {INDICATOR_NAMES[k]} is 0)"
        )
    return NormalizedWindow(
        lo=panel.low[:, days] / op,
        cl=panel.close[:, days] / op,
        hi=panel.high[:, days] / op,
        fi=fi,
        dates=panel.dates[days],
    )


def feature_table(panel: Panel, indicators: np.ndarray) -> np.ndarray:
    """(m, T, 11) per-day ratios; NaN inside warm-up, +-inf where the previous
    indicator value is 0 and the current one is not."""
    m, n_days = panel.close.shape
    out = np.full((m, n_days, N_FEATURES), np.nan)
    out[:, :, 0] = panel.low / panel.open
    out[:, :, 1] = panel.close / panel.open
    out[:, :, 2] = panel.high / panel.open
    cur, prev = indicators[:, 1:, :], indicators[:, :-1, :]
    r = indicator_ratio(cur, prev)
    # x / 0 becomes a signed infinity for condition() to clip; NaN stays "undefined"
    jump = (prev == 0) & (cur != 0)
    r[jump] = np.copysign(np.inf, cur[jump])
    out[:, 1:, N_PRICE:] = r
    return out


def first_valid_index(table: np.ndarray) -> int:
    """Smallest day index from which every asset's 11 features are defined."""
    ok = ~np.isnan(table).any(axis=(0, 2))
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return 0
    if bad[-1] + 1 >= len(ok):
        raise DataError("no day with a complete feature vector")
    return int(bad[-1] + 1)


def condition(features: np.ndarray, clip: float | None) -> np.ndarray:
    """Clip indicator ratios to [-clip, clip]; price ratios pass through."""
    if clip is None:
        return features
    out = np.array(features, dtype=float, copy=True)
    np.clip(out[..., N_PRICE:], -clip, clip, out=out[..., N_PRICE:])
    return out


class RsaeModel:
    """11 -> 8 -> 5 -> 3 sigmoid encoder; 3 -> 3 (sigmoid) -> 3 (linear) decoder.

    Inputs are standardized with a fixed per-feature ``shift``/``scale`` before
    the first layer; the reconstruction target stays in raw ratio units.
    """

    def __init__(self, rng: np.random.Generator, activation: str = "sigmoid"):
        self.activation = activation
        self.shift = np.zeros(N_FEATURES)
        self.scale = np.ones(N_FEATURES)
        self.fitted_scaling = False
        self.params = T.ParamStore()
        for i, (a, b) in enumerate(zip(ENCODER_WIDTHS[:-1], ENCODER_WIDTHS[1:])):
            self.params.add(f"enc{i}.w", T.uniform_init(rng, (a, b), a))
            self.params.add(f"enc{i}.b", T.uniform_init(rng, (b,), a))
        for i, (a, b) in enumerate(zip(DECODER_WIDTHS[:-1], DECODER_WIDTHS[1:])):
            self.params.add(f"dec{i}.w", T.uniform_init(rng, (a, b), a))
            self.params.add(f"dec{i}.b", T.uniform_init(rng, (b,), a))
        self.n_enc = len(ENCODER_WIDTHS) - 1
        self.n_dec = len(DECODER_WIDTHS) - 1

    def encode(self, x: T.Tensor) -> T.Tensor:
        if x.ndim != 2 or x.shape[1] != N_FEATURES:
            raise T.ShapeError(f"RSAE input must be (N, {N_FEATURES}), got {x.shape}")
        h = (x - self.shift) * (1.0 / self.scale)
        for i in range(self.n_enc):
            h = T.activation(h @ self.params[f"enc{i}.w"] + self.params[f"enc{i}.b"], self.activation)
        return h

    def fit_scaling(self, rows: np.ndarray) -> None:
        self.shift = rows.mean(axis=0)
        sd = rows.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)
        self.fitted_scaling = True

    def decode(self, z: T.Tensor) -> T.Tensor:
        h = z
        for i in range(self.n_dec):
            h = h @ self.params[f"dec{i}.w"] + self.params[f"dec{i}.b"]
            if i < self.n_dec - 1:
                h = T.activation(h, self.activation)
        return h

    def loss(self, x: T.Tensor) -> T.Tensor:
        """Mean squared error on the (lo, cl, hi) ratios only."""
        target = x.data[:, :N_PRICE]
        diff = self.decode(self.encode(x)) - T.Tensor(target)
        return T.mean(T.square(diff))


def _as_rows(data) -> np.ndarray:
    if isinstance(data, NormalizedWindow):
        data = data.stacked()
    arr = np.asarray(data, dtype=float)
    if arr.shape[-1] != N_FEATURES:
        raise T.ShapeError(f"expected {N_FEATURES} features per row, got {arr.shape[-1]}")
    return arr.reshape(-1, N_FEATURES)


@dataclass
class RsaeTrainResult:
    model: RsaeModel
    losses: list[float]  # full-data loss before training, then after each epoch


def rsae_loss(model: RsaeModel, rows: np.ndarray) -> float:
    with T.no_grad():
        return model.loss(T.Tensor(rows)).item()


def rsae_train(windows, epochs: int, seed: int | None = None, *, model: RsaeModel | None = None,
               lr: float = 1e-2, batch_size: int = 256, clip: float | None = None,
               optimizer: T.Adam | None = None) -> RsaeTrainResult:
    """Fit the autoencoder to the price ratios of every asset-day in ``windows``.

    ``windows`` is a NormalizedWindow, an (..., 11) array, or an iterable of
    either.  ``model``/``optimizer`` continue training an existing model; a
    model without fitted input scaling is first standardized on ``windows``.
    """
    if isinstance(windows, (NormalizedWindow, np.ndarray)):
        windows = [windows]
    parts = [_as_rows(w) for w in windows]
    if not parts or sum(len(p) for p in parts) == 0:
        raise ValueError("rsae_train needs at least one training window")
    rows = condition(np.concatenate(parts), clip)
    if not np.isfinite(rows).all():
        raise DataError("non-finite RSAE training features")
    rng = np.random.default_rng(seed)
    if model is None:
        model = RsaeModel(rng)
    if not model.fitted_scaling:
        model.fit_scaling(rows)
    opt = optimizer or T.Adam(model.params, lr=lr)
    losses = [rsae_loss(model, rows)]
    for _ in range(epochs):
        order = rng.permutation(len(rows))
        for lo in range(0, len(rows), batch_size):
            batch = rows[order[lo : lo + batch_size]]
            model.params.zero_grad()
            model.loss(T.Tensor(batch)).backward()
            opt.step()
        losses.append(rsae_loss(model, rows))
    return RsaeTrainResult(model, losses)


@dataclass
class LatentScaler:
    """Per-channel standardization of the latent code, fixed after fitting."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls) -> LatentScaler:
        return cls(np.zeros(LATENT), np.ones(LATENT))

    @classmethod
    def fit(cls, latent: np.ndarray) -> LatentScaler:
        """``latent`` is (3, ...); statistics pool every other axis."""
        flat = latent.reshape(LATENT, -1)
        sd = flat.std(axis=1)
        return cls(flat.mean(axis=1), np.where(sd > 1e-12, sd, 1.0))

    def __call__(self, latent: np.ndarray) -> np.ndarray:
        shape = (LATENT,) + (1,) * (latent.ndim - 1)
        return (latent - self.shift.reshape(shape)) / self.scale.reshape(shape)


def rsae_encode(model: RsaeModel, window, clip: float | None = None) -> np.ndarray:
    """Latent tensor (3, m, n) for a window whose features are (m, n, 11)."""
    arr = window.stacked() if isinstance(window, NormalizedWindow) else np.asarray(window, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != N_FEATURES:
        raise T.ShapeError(f"RSAE window must be (m, n, {N_FEATURES}), got {arr.shape}")
    m, n, _ = arr.shape
    with T.no_grad():
        z = model.encode(T.Tensor(condition(arr, clip).reshape(-1, N_FEATURES))).data
    return z.reshape(m, n, LATENT).transpose(2, 0, 1).copy()
