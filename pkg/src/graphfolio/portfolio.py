"""Portfolio accounting: price relatives, weight drift, commissions, returns.

Weight vectors have length m + 1 with cash at index 0.  Rebalancing from the
drifted weights ``w'`` to a target ``w`` shrinks the portfolio by the
transaction factor ``mu``, the fixed point of

    mu = [1 - c_b w'_0 - (c_s + c_b - c_s c_b) sum_{i>=1} relu(w'_i - mu w_i)]
         / (1 - c_b w_0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIMPLEX_TOL = 1e-12


class PortfolioError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    def __init__(self, msg: str, last: float):
        super().__init__(msg)
        self.last = last


def check_weights(w, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise PortfolioError("weights must be a non-empty vector")
    if np.any(w < -tol) or abs(w.sum() - 1.0) > tol or not np.all(np.isfinite(w)):
        raise PortfolioError(f"weights are not on the simplex (sum={w.sum()!r}, min={w.min()!r})")
    return w


def all_cash(m: int) -> np.ndarray:
    w = np.zeros(m + 1)
    w[0] = 1.0
    return w


@dataclass(frozen=True)
class CommissionSchedule:
    sell: float = 0.0025
    buy: float = 0.0025

    def __post_init__(self):
        for name, c in (("sell", self.sell), ("buy", self.buy)):
            if not 0.0 <= c < 1.0:
                raise PortfolioError(f"{name} commission must lie in [0, 1), got {c}")

    @property
    def frictionless(self) -> bool:
        return self.sell == 0.0 and self.buy == 0.0


@dataclass(frozen=True)
class PortfolioState:
    weights: np.ndarray
    value: float
    last_mu: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise PortfolioError(f"portfolio value must be positive, got {self.value}")
        if not 0.0 < self.last_mu <= 1.0:
            raise PortfolioError(f"transaction factor must lie in (0, 1], got {self.last_mu}")

    @classmethod
    def initial(cls, m: int, value: float = 1.0) -> PortfolioState:
        return cls(all_cash(m), value, 1.0)


def price_relatives(v_t, v_prev) -> np.ndarray:
    v_t = np.asarray(v_t, dtype=float)
    v_prev = np.asarray(v_prev, dtype=float)
    if v_t.shape != v_prev.shape or v_t.ndim != 1:
        raise PortfolioError(f"price vectors must be equal-length 1-d, got {v_t.shape} and {v_prev.shape}")
    if np.any(v_t <= 0) or np.any(v_prev <= 0):
        raise PortfolioError("prices must be positive")
    return np.concatenate([[1.0], v_t / v_prev])


def growth(y: np.ndarray, w: np.ndarray) -> float:
    """Y . w, normalized by sum(w) so an all-ones Y gives exactly 1."""
    return float((y * w).sum() / w.sum())


def drift_weights(w_prev, y) -> np.ndarray:
    w_prev = np.asarray(w_prev, dtype=float)
    y = np.asarray(y, dtype=float)
    if w_prev.shape != y.shape:
        raise PortfolioError(f"weights {w_prev.shape} and price relatives {y.shape} differ in length")
    out = y * w_prev
    return out / out.sum()


def _mu_rhs(mu: float, w_drift: np.ndarray, w_target: np.ndarray, cs: float, cb: float) -> float:
    traded = np.maximum(w_drift[1:] - mu * w_target[1:], 0.0).sum()
    return (1.0 - cb * w_drift[0] - (cs + cb - cs * cb) * traded) / (1.0 - cb * w_target[0])


def transaction_factor(w_drift, w_target, fees: CommissionSchedule, tol: float = 1e-12,
                       max_iter: int = 200, return_iterations: bool = False):
    """Solve for mu by fixed-point iteration started at c_s + c_b."""
    w_drift = np.asarray(w_drift, dtype=float)
    w_target = np.asarray(w_target, dtype=float)
    if w_drift.shape != w_target.shape:
        raise PortfolioError(f"weight vectors differ in length: {w_drift.shape} vs {w_target.shape}")
    if tol <= 0:
        raise PortfolioError("tol must be positive")
    if fees.frictionless or np.array_equal(w_drift, w_target):
        return (1.0, 0) if return_iterations else 1.0
    cs, cb = fees.sell, fees.buy
    mu = cs + cb
    for it in range(1, max_iter + 1):
        nxt = _mu_rhs(mu, w_drift, w_target, cs, cb)
        if abs(nxt - mu) < tol:
            mu = nxt
            break
        mu = nxt
    else:
        raise ConvergenceError(f"transaction factor did not converge in {max_iter} iterations", mu)
    # the map contracts, so a few more passes land on the floating-point fixed point
    for _ in range(3):
        nxt = _mu_rhs(mu, w_drift, w_target, cs, cb)
        if nxt == mu:
            break
        mu = nxt
    if not 0.0 < mu <= 1.0:
        if 1.0 < mu <= 1.0 + 4 * tol:
            mu = 1.0
        else:
            raise PortfolioError(f"transaction factor {mu} outside (0, 1]: invalid weights")
    return (mu, it) if return_iterations else mu


def trade_volumes(w_drift, w_target, mu: float) -> tuple[float, float]:
    """(gross sold, gross bought) as fractions of the pre-trade value."""
    w_drift = np.asarray(w_drift, dtype=float)
    w_target = np.asarray(w_target, dtype=float)
    sold = float(np.maximum(w_drift[1:] - mu * w_target[1:], 0.0).sum())
    bought = float(np.maximum(mu * w_target[1:] - w_drift[1:], 0.0).sum())
    return sold, bought


@dataclass(frozen=True)
class StepResult:
    state: PortfolioState
    rate: float  # rho_t
    log_return: float  # R_t
    mu: float
    w_drift: np.ndarray


def step_value(state: PortfolioState, y, w_target, fees: CommissionSchedule, tol: float = 1e-12,
               max_iter: int = 200) -> StepResult:
    """Advance one period: drift by ``y``, then rebalance into ``w_target``."""
    y = np.asarray(y, dtype=float)
    w_target = check_weights(w_target)
    g = growth(y, state.weights)
    w_drift = drift_weights(state.weights, y)
    mu = transaction_factor(w_drift, w_target, fees, tol, max_iter)
    factor = mu * g
    new = PortfolioState(np.array(w_target, copy=True), float(state.value * factor), float(mu))
    return StepResult(new, factor - 1.0, math.log(factor), mu, w_drift)


def episode_reward(log_returns, t_f: int | None = None) -> float:
    r = np.asarray(log_returns, dtype=float)
    if r.size == 0:
        raise PortfolioError("empty trajectory")
    t_f = r.size if t_f is None else t_f
    if t_f < 1:
        raise PortfolioError("t_f must be >= 1")
    return float(math.fsum(r) / t_f)
