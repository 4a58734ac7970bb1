"""Offline training on random spans, online learning over a rolling buffer,
episode simulation and risk metrics."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .agent import Agent, AgentState, StepDiagnostics, Transition, sample_action, train_step
from .features import (LATENT, N_FEATURES, LatentScaler, RsaeModel, condition, feature_table, first_valid_index,
                       rsae_train)
from .graph_conv import AssetGraph, build_graph
from .indicators import IndicatorParams
from .market_data import DataError, DatasetSplit, Panel
from .portfolio import (CommissionSchedule, PortfolioState, all_cash, check_weights, growth,
                        price_relatives, step_value)

logger = logging.getLogger(__name__)


class CausalityError(AssertionError):
    """Training touched data dated after the current trading day."""


@dataclass(frozen=True)
class TrainConfig:
    window: int = 30
    corr_window: int = 10
    corr_field: str = "close"
    cheb_order: int = 3
    kappa: float = 50.0
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    rsae_lr: float = 1e-2
    rsae_epochs: int = 30
    rsae_batch: int = 64
    feature_clip: float | None = 5.0
    sell_fee: float = 0.0025
    buy_fee: float = 0.0025
    span: int = 90
    epochs: int = 50
    batches_per_epoch: int = 64
    buffer_days: int = 11
    online_rsae_epochs: int = 1
    use_gcn: bool = True
    critic_uses_weights: bool = False
    cvar_alpha: float = 0.95
    initial_value: float = 1.0
    indicators: IndicatorParams = field(default_factory=IndicatorParams)

    def __post_init__(self):
        if self.window < 3:
            raise ValueError("window must be >= 3")
        if self.span < 2:
            raise ValueError("span must cover at least 2 days")
        if self.buffer_days < 2:
            raise ValueError("buffer must hold at least 2 days")
        if self.corr_field not in ("close", "log_return"):
            raise ValueError(f"corr_field must be close or log_return, got {self.corr_field!r}")
        if not 0.0 < self.cvar_alpha < 1.0:
            raise ValueError("cvar_alpha must lie in (0, 1)")

    @property
    def fees(self) -> CommissionSchedule:
        return CommissionSchedule(self.sell_fee, self.buy_fee)

    @property
    def batches(self) -> int:
        return self.epochs * self.batches_per_epoch


# -- features, latent windows and graphs for one panel --------------------------------------
class MarketView:
    """Feature table, latent cube and per-day graphs over a panel.

    ``horizon`` is the last day index that may be read; anything later raises
    :class:`CausalityError`.
    """

    def __init__(self, panel: Panel, cfg: TrainConfig):
        self.panel, self.cfg = panel, cfg
        cube = panel.indicators(cfg.indicators)
        self.features = condition(feature_table(panel, cube), cfg.feature_clip)
        self.first = first_valid_index(self.features)
        bad = np.argwhere(~np.isfinite(self.features[:, self.first :]))
        if bad.size:
            a, d, k = bad[0]
            raise DataError(f"{panel.assets[a]} {panel.dates[self.first + d]}: feature {k} divides by a "
                            "zero indicator value (set feature_clip to bound such ratios)")
        lag = cfg.corr_window - 1 if cfg.corr_field == "close" else cfg.corr_window
        self.min_t = max(self.first + cfg.window - 1, lag, 1)
        self.latent = np.full((LATENT, panel.m, len(panel)), np.nan)
        self.horizon = len(panel) - 1
        self._graphs: dict[int, AssetGraph] = {}

    def __len__(self) -> int:
        return len(self.panel)

    def _check(self, t: int) -> None:
        if t > self.horizon:
            raise CausalityError(f"read of day {self.panel.dates[t]} beyond horizon {self.panel.dates[self.horizon]}")

    def rows(self, lo: int, hi: int) -> np.ndarray:
        """Feature rows for days lo..hi inclusive, flattened to (m * days, 11)."""
        self._check(hi)
        lo = max(lo, self.first)
        return self.features[:, lo : hi + 1].reshape(-1, N_FEATURES)

    def encode(self, rsae: RsaeModel, lo: int | None = None, hi: int | None = None,
               scaler: LatentScaler | None = None) -> None:
        lo = self.first if lo is None else max(lo, self.first)
        hi = self.horizon if hi is None else hi
        self._check(hi)
        block = self.features[:, lo : hi + 1]
        m, d, _ = block.shape
        with T.no_grad():
            z = rsae.encode(T.Tensor(block.reshape(-1, N_FEATURES))).data
        z = z.reshape(m, d, LATENT).transpose(2, 0, 1)
        self.latent[:, :, lo : hi + 1] = z if scaler is None else scaler(z)

    def graph(self, t: int) -> AssetGraph:
        self._check(t)
        g = self._graphs.get(t)
        if g is None:
            g = self._graphs[t] = build_graph(self.panel, t, self.cfg.corr_window, self.cfg.corr_field)
        return g

    def state(self, t: int, prev_weights: np.ndarray, with_graph: bool = True) -> AgentState:
        self._check(t)
        if t < self.min_t:
            raise DataError(f"day {self.panel.dates[t]} precedes the first full feature window")
        z = self.latent[:, :, t - self.cfg.window + 1 : t + 1]
        if np.isnan(z).any():
            raise DataError(f"latent window ending {self.panel.dates[t]} not encoded")
        return AgentState(z, prev_weights, self.graph(t) if with_graph else None)

    def relatives(self, t: int) -> np.ndarray:
        """Price relatives from day t - 1 to day t, cash first."""
        self._check(t)
        return price_relatives(self.panel.close[:, t], self.panel.close[:, t - 1])


# -- models -----------------------------------------------------------------------------------
@dataclass
class Models:
    rsae: RsaeModel
    agent: Agent
    rsae_opt: T.Adam
    scaler: LatentScaler = field(default_factory=LatentScaler.identity)

    def stores(self) -> dict[str, T.ParamStore]:
        out = {"rsae": self.rsae.params}
        out.update(self.agent.stores())
        return out


def model_arrays(models: Models) -> dict[str, np.ndarray]:
    """Every learnable and fitted array, keyed ``<store>.<param>``."""
    out = {}
    for prefix, store in models.stores().items():
        for k, v in store.arrays().items():
            out[f"{prefix}.{k}"] = v
    out["rsae_input.shift"] = models.rsae.shift
    out["rsae_input.scale"] = models.rsae.scale
    out["latent.shift"] = models.scaler.shift
    out["latent.scale"] = models.scaler.scale
    return out


def restore_models(models: Models, arrays: dict[str, np.ndarray]) -> None:
    for prefix, store in models.stores().items():
        store.load(arrays, prefix + ".")
    for key, shape in (("rsae_input.shift", (N_FEATURES,)), ("rsae_input.scale", (N_FEATURES,)),
                       ("latent.shift", (LATENT,)), ("latent.scale", (LATENT,))):
        if key not in arrays:
            raise KeyError(f"missing parameter {key!r}")
        if arrays[key].shape != shape:
            raise T.ShapeError(f"parameter {key!r}: expected shape {shape}, got {arrays[key].shape}")
    models.rsae.shift = arrays["rsae_input.shift"].copy()
    models.rsae.scale = arrays["rsae_input.scale"].copy()
    models.rsae.fitted_scaling = True
    models.scaler = LatentScaler(arrays["latent.shift"].copy(), arrays["latent.scale"].copy())


def _seeds(seed: int, k: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k)]


def build_models(m: int, cfg: TrainConfig, seed: int) -> Models:
    rsae_seed, agent_seed = _seeds(seed, 2)
    rsae = RsaeModel(np.random.default_rng(rsae_seed))
    agent = Agent(m, cfg.window, seed=agent_seed, K=cfg.cheb_order, kappa=cfg.kappa, gamma=cfg.gamma,
                  actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr, use_gcn=cfg.use_gcn,
                  critic_uses_weights=cfg.critic_uses_weights)
    return Models(rsae, agent, T.Adam(rsae.params, lr=cfg.rsae_lr))


# -- episode roll --------------------------------------------------------------------------------
@dataclass
class RollResult:
    steps: list[StepDiagnostics]
    mean_weights: np.ndarray
    final_value: float


def roll_span(agent: Agent, view: MarketView, days: Sequence[int], fees: CommissionSchedule,
              rng: np.random.Generator, learn: bool = True,
              on_step: Callable[[StepDiagnostics], None] | None = None) -> RollResult:
    """Trade sampled actions over consecutive ``days`` from an all-cash start.

    The action chosen on day t earns ln(mu_t * Y_{t+1} . a_t); with ``learn``
    each transition feeds one train_step.
    """
    days = list(days)
    if len(days) < 2:
        raise ValueError("a span needs at least two days")
    port = PortfolioState.initial(agent.m)
    s = view.state(days[0], port.weights)
    steps, means = [], []
    for t, t_next in zip(days[:-1], days[1:]):
        if t_next != t + 1:
            raise DataError("span days must be consecutive")
        dist = agent.distribution(s)
        means.append(dist.mean)
        a, lp = sample_action(dist, rng)
        res = step_value(port, view.relatives(t), a, fees)
        reward = math.log(res.mu) + math.log(growth(view.relatives(t_next), a))
        nxt = view.state(t_next, a)
        if learn:
            d = train_step(agent, Transition(s, a, lp, reward, nxt))
            steps.append(d)
            if on_step is not None:
                on_step(d)
        port, s = res.state, nxt
    return RollResult(steps, np.mean(means, axis=0), port.value)


# -- offline training -----------------------------------------------------------------------
@dataclass
class BatchDiagnostics:
    batch: int
    start: str
    mean_reward: float
    mean_delta: float
    critic_loss: float
    actor_grad_norm: float
    mean_weights: np.ndarray
    final_value: float


@dataclass
class OfflineResult:
    models: Models
    view: MarketView
    batches: list[BatchDiagnostics]
    rsae_losses: list[float]


def train_offline(panel: Panel, split: DatasetSplit | None, cfg: TrainConfig, seed: int,
                  models: Models | None = None,
                  on_step: Callable[[StepDiagnostics], None] | None = None) -> OfflineResult:
    """Fit the RSAE on the training range, then train the agent on random spans."""
    if split is not None:
        lo = panel.index_on_or_after(split.train_start)
        hi = panel.index_on_or_before(split.train_end)
        panel = panel.window(lo, hi + 1)
    view = MarketView(panel, cfg)
    need = view.min_t + cfg.span
    if len(panel) < need:
        raise DataError(
            f"training range has {len(panel)} days; needs at least {need} "
            f"(indicator warm-up and window {view.min_t} + span {cfg.span})"
        )
    models = models or build_models(panel.m, cfg, seed)
    rsae_seed, sample_seed = _seeds(seed + 1, 2)
    fit = rsae_train(view.rows(view.first, view.horizon), cfg.rsae_epochs, rsae_seed, model=models.rsae,
                     batch_size=cfg.rsae_batch, optimizer=models.rsae_opt)
    view.encode(models.rsae)
    models.scaler = LatentScaler.fit(view.latent[:, :, view.first :])
    view.latent[:, :, view.first :] = models.scaler(view.latent[:, :, view.first :])

    rng = np.random.default_rng(sample_seed)
    fees = cfg.fees
    out = []
    last_start = len(panel) - cfg.span
    for b in range(cfg.batches):
        t0 = int(rng.integers(view.min_t, last_start + 1))
        r = roll_span(models.agent, view, range(t0, t0 + cfg.span), fees, rng, on_step=on_step)
        out.append(BatchDiagnostics(
            batch=b,
            start=str(panel.dates[t0]),
            mean_reward=float(np.mean([d.reward for d in r.steps])),
            mean_delta=float(np.mean([d.delta for d in r.steps])),
            critic_loss=float(np.mean([d.critic_loss for d in r.steps])),
            actor_grad_norm=float(np.mean([d.actor_grad_norm for d in r.steps])),
            mean_weights=r.mean_weights,
            final_value=r.final_value,
        ))
    return OfflineResult(models, view, out, fit.losses)


# -- online learning ----------------------------------------------------------------------------
class OnlineBuffer:
    """The most recent ``capacity`` trading days, oldest first."""

    def __init__(self, capacity: int = 11):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def push(self, date, index: int) -> None:
        date = np.datetime64(date, "D")
        if self._items and date <= self._items[-1][0]:
            raise ValueError(f"buffer push out of order: {date} after {self._items[-1][0]}")
        self._items.append((date, index))

    def __len__(self) -> int:
        return len(self._items)

    @property
    def dates(self) -> list:
        return [d for d, _ in self._items]

    @property
    def indices(self) -> list[int]:
        return [i for _, i in self._items]

    @property
    def max_date(self):
        return self._items[-1][0] if self._items else None


@dataclass
class EpisodeReport:
    assets: tuple[str, ...]
    dates: np.ndarray
    values: np.ndarray
    weights: np.ndarray  # (days, m + 1)
    initial_value: float
    mdd: float  # fraction
    sharpe: float
    var: float
    cvar: float
    alpha: float

    def __post_init__(self):
        if np.any(self.values <= 0):
            raise ValueError("value curve must stay positive")

    @property
    def roi(self) -> float:
        return (self.values[-1] / self.initial_value - 1.0) * 100.0

    def roi_at(self, days: int) -> float:
        if days > len(self.values):
            return float("nan")
        return (self.values[days - 1] / self.initial_value - 1.0) * 100.0

    @property
    def returns(self) -> np.ndarray:
        prev = np.concatenate([[self.initial_value], self.values[:-1]])
        return self.values / prev - 1.0


def make_report(assets, dates, values, weights, initial_value: float, alpha: float = 0.95,
                benchmark=None) -> EpisodeReport:
    values = np.asarray(values, dtype=float)
    prev = np.concatenate([[initial_value], values[:-1]])
    rets = values / prev - 1.0
    try:
        sr = sharpe_ratio(rets, benchmark)
    except ValueError:
        sr = float("nan")
    var, cv = cvar(-rets, alpha)
    curve = np.concatenate([[initial_value], values])
    return EpisodeReport(tuple(assets), np.asarray(dates), values, np.asarray(weights), initial_value,
                         max_drawdown(curve), sr, var, cv, alpha)


def run_online(panel: Panel, start_date, days: int, models: Models, cfg: TrainConfig,
               seed: int = 0, store: list | None = None, benchmark=None,
               view: MarketView | None = None) -> EpisodeReport:
    """Trade ``days`` sessions from ``start_date``, learning from the buffer each day.

    Each day: push it into the buffer, refresh the RSAE and replay the buffered
    span once through train_step, then trade the deterministic action.
    """
    view = view or MarketView(panel, cfg)
    t_start = panel.index_on_or_after(start_date)
    if t_start + days > len(panel):
        raise DataError(
            f"online run needs {days} trading days from {panel.dates[t_start]}, "
            f"panel ends {panel.dates[-1]} ({len(panel) - t_start} available)"
        )
    first_needed = t_start - (cfg.buffer_days - 1)
    if first_needed < view.min_t:
        raise DataError(f"online start {panel.dates[t_start]} leaves too little history for the "
                        f"feature window and buffer (first usable day {panel.dates[min(view.min_t, len(panel) - 1)]})")
    agent, fees = models.agent, cfg.fees
    rng = np.random.default_rng(_seeds(seed + 2, 1)[0])
    buf = OnlineBuffer(cfg.buffer_days)
    for t in range(first_needed, t_start):
        buf.push(panel.dates[t], t)

    port = PortfolioState.initial(panel.m, cfg.initial_value)
    values, weights = [], []
    for t in range(t_start, t_start + days):
        view.horizon = t
        buf.push(panel.dates[t], t)
        if buf.max_date > panel.dates[t] or max(buf.indices) > t:
            raise CausalityError(f"buffer holds data after {panel.dates[t]}")
        span = buf.indices
        lo = span[0] - cfg.window + 1
        if cfg.online_rsae_epochs > 0:
            rsae_train(view.rows(span[0], t), cfg.online_rsae_epochs, int(rng.integers(2**32)),
                       model=models.rsae, batch_size=cfg.rsae_batch, optimizer=models.rsae_opt)
        view.encode(models.rsae, lo, t, models.scaler)
        roll_span(agent, view, span, fees, rng)

        a = check_weights(agent.policy_mean(view.state(t, port.weights)), tol=1e-12)
        res = step_value(port, view.relatives(t), a, fees)
        port = res.state
        values.append(port.value)
        weights.append(a)
        if store is not None:
            store.append(panel.dates[t])
    view.horizon = len(panel) - 1
    return make_report(panel.assets, panel.dates[t_start : t_start + days], values, weights,
                       cfg.initial_value, cfg.cvar_alpha, benchmark)


# -- risk metrics --------------------------------------------------------------------------------
def max_drawdown(curve) -> float:
    """Largest peak-to-later-trough decline as a fraction of the peak."""
    c = np.asarray(curve, dtype=float)
    if c.size == 0:
        raise ValueError("empty value curve")
    if np.any(c <= 0):
        raise ValueError("value curve must be positive")
    peak = np.maximum.accumulate(c)
    return float(np.max((peak - c) / peak))


def sharpe_ratio(returns, benchmark=None) -> float:
    r = np.asarray(returns, dtype=float)
    b = np.zeros_like(r) if benchmark is None else np.asarray(benchmark, dtype=float)
    if r.shape != b.shape or r.ndim != 1:
        raise ValueError(f"returns {r.shape} and benchmark {b.shape} must be equal-length vectors")
    if r.size < 2:
        raise ValueError("Sharpe ratio needs at least 2 returns")
    ex = r - b
    sd = float(np.std(ex, ddof=1))
    scale = float(np.max(np.abs(ex)))
    if sd <= 16 * np.finfo(float).eps * scale or sd == 0.0:
        raise ValueError("excess returns have zero standard deviation")
    return float(np.mean(ex) / sd)


def cvar(losses, alpha: float = 0.95) -> tuple[float, float]:
    """(VaR, CVaR): the order statistic at ceil(alpha N) and the mean at or above it."""
    x = np.sort(np.asarray(losses, dtype=float))
    if x.size == 0:
        raise ValueError("no loss samples")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    k = max(math.ceil(round(alpha * x.size, 9)), 1)
    var = float(x[k - 1])
    return var, float(np.mean(x[x >= var]))


# -- report files ------------------------------------------------------------------------------
def _fmt(x: float) -> str:
    return repr(float(x))


def write_report(report: EpisodeReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.csv", out / "weights.csv", out / "metrics.txt"]
    with paths[0].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "value", "roi"])
        for d, v in zip(report.dates, report.values):
            w.writerow([str(d), _fmt(v), _fmt((v / report.initial_value - 1.0) * 100.0)])
    with paths[1].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "cash", *report.assets])
        for d, row in zip(report.dates, report.weights):
            w.writerow([str(d), *(_fmt(x) for x in row)])
    lines = [
        f"days {len(report.values)}",
        f"roi {report.roi:.2f}",
        *(f"roi_{k}d {report.roi_at(k):.2f}" for k in (30, 60, 90)),
        f"mdd {report.mdd * 100.0:.2f}",
        f"sharpe {report.sharpe:.6f}",
        f"var_{report.alpha:g} {report.var:.6f}",
        f"cvar_{report.alpha:g} {report.cvar:.6f}",
    ]
    paths[2].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


def read_metrics(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            k, v = line.split()
            out[k] = float(v)
    return out
