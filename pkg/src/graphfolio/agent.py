"""Actor and critic networks and the one-step actor-critic update.

The actor maps the post-GCN feature tensor X (3, m, n) and the previous
weights to a point on the (m + 1)-simplex:

    conv 1x3 (tanh) -> conv 1x(n-2) (tanh) -> + previous weights channel
    -> conv 1x1 (tanh) -> prepend cash bias -> softmax

Exploration samples a Dirichlet centred on that point with concentration
``kappa``; evaluation uses the mean.  The critic is

    conv 1x1 (relu) -> conv 1x1 to n channels (relu)
    -> conv spanning the m assets (relu) -> dense -> V(s)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from . import tensor as T
from .graph_conv import AssetGraph, GCNLayer
from .portfolio import check_weights

MEAN_FLOOR = 1e-8
SAMPLE_FLOOR = 1e-12


class NumericalError(FloatingPointError):
    def __init__(self, msg: str, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass
class AgentState:
    """Latent window (3, m, n), previous weights (m + 1,), and the day's graph.

    With ``graph=None`` the latent is fed to the networks without graph
    convolution.
    """

    latent: np.ndarray
    prev_weights: np.ndarray
    graph: AssetGraph | None = None

    def __post_init__(self):
        if self.latent.ndim != 3:
            raise T.ShapeError(f"latent must be (channels, m, n), got {self.latent.shape}")
        if self.prev_weights.shape != (self.latent.shape[1] + 1,):
            raise T.ShapeError(
                f"previous weights {self.prev_weights.shape} do not match {self.latent.shape[1]} assets"
            )

    @property
    def m(self) -> int:
        return self.latent.shape[1]


class ActorNet:
    def __init__(self, m: int, n: int, rng: np.random.Generator, channels: int = 3, depth: int = 3):
        if n < 3:
            raise ValueError("trading window n must be >= 3 for the 1x3 kernel")
        self.m, self.n, self.channels, self.depth = m, n, channels, depth
        f = depth
        p = self.params = T.ParamStore()
        p.add("conv1.w", T.uniform_init(rng, (f, channels, 3), channels * 3))
        p.add("conv1.b", T.uniform_init(rng, (f,), channels * 3))
        k2 = n - 2
        p.add("conv2.w", T.uniform_init(rng, (f, f, k2), f * k2))
        p.add("conv2.b", T.uniform_init(rng, (f,), f * k2))
        p.add("conv3.w", T.uniform_init(rng, (1, f + 1, 1), f + 1))
        p.add("conv3.b", T.uniform_init(rng, (1,), f + 1))
        p.add("cash_bias", np.zeros(1))

    def logits(self, x: T.Tensor, prev_weights: np.ndarray) -> T.Tensor:
        if x.shape != (self.channels, self.m, self.n):
            raise T.ShapeError(f"actor expects input {(self.channels, self.m, self.n)}, got {x.shape}")
        if prev_weights.shape != (self.m + 1,):
            raise T.ShapeError(f"actor expects {self.m + 1} previous weights, got {prev_weights.shape}")
        p = self.params
        h = T.tanh(T.conv1xk(x, p["conv1.w"], p["conv1.b"]))
        h = T.tanh(T.conv1xk(h, p["conv2.w"], p["conv2.b"]))
        w = T.Tensor(prev_weights[1:].reshape(1, self.m, 1))
        h = T.concat([h, w], axis=0)
        h = T.tanh(T.conv1xk(h, p["conv3.w"], p["conv3.b"])).reshape(self.m)
        return T.concat([p["cash_bias"], h], axis=0)

    def __call__(self, x: T.Tensor, prev_weights: np.ndarray) -> T.Tensor:
        return T.softmax(self.logits(x, prev_weights))


class CriticNet:
    def __init__(self, m: int, n: int, rng: np.random.Generator, channels: int = 3, depth: int = 3,
                 use_weights: bool = False):
        self.m, self.n, self.channels, self.depth = m, n, channels, depth
        self.use_weights = use_weights
        c_in = channels + (1 if use_weights else 0)
        f = depth
        p = self.params = T.ParamStore()
        p.add("conv1.w", T.uniform_init(rng, (f, c_in, 1), c_in))
        p.add("conv1.b", T.uniform_init(rng, (f,), c_in))
        p.add("conv2.w", T.uniform_init(rng, (n, f, 1), f))
        p.add("conv2.b", T.uniform_init(rng, (n,), f))
        p.add("conv3.w", T.uniform_init(rng, (1, n, m), n * m))
        p.add("conv3.b", T.uniform_init(rng, (1,), n * m))
        p.add("dense.w", T.uniform_init(rng, (n,), n))
        p.add("dense.b", T.uniform_init(rng, (1,), n))

    def __call__(self, x: T.Tensor, prev_weights: np.ndarray | None = None) -> T.Tensor:
        if x.shape != (self.channels, self.m, self.n):
            raise T.ShapeError(f"critic expects input {(self.channels, self.m, self.n)}, got {x.shape}")
        p = self.params
        if self.use_weights:
            if prev_weights is None:
                raise ValueError("critic configured to read previous weights, none given")
            chan = np.broadcast_to(prev_weights[1:, None], (self.m, self.n))[None]
            x = T.concat([x, T.Tensor(chan)], axis=0)
        h = T.relu(T.conv1xk(x, p["conv1.w"], p["conv1.b"]))
        h = T.relu(T.conv1xk(h, p["conv2.w"], p["conv2.b"]))  # (n, m, n)
        h = T.relu(T.conv1xk(h.swapaxes(1, 2), p["conv3.w"], p["conv3.b"]))  # (1, n, 1)
        h = h.reshape(self.n)
        return (h * p["dense.w"]).sum() + p["dense.b"].sum()


# -- policy distribution ------------------------------------------------------------
def _clamp_mean(mean: np.ndarray) -> np.ndarray:
    c = np.maximum(mean, MEAN_FLOOR)
    return c / c.sum()


@dataclass(frozen=True)
class PolicyDistribution:
    """Dirichlet with mean ``mean`` and total concentration ``kappa``."""

    mean: np.ndarray
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"concentration must be positive, got {self.kappa}")

    @property
    def alpha(self) -> np.ndarray:
        return self.kappa * _clamp_mean(np.asarray(self.mean, dtype=float))

    def log_prob(self, x) -> float:
        x = np.asarray(x, dtype=float)
        a = self.alpha
        return float(gammaln(a.sum()) - gammaln(a).sum() + ((a - 1.0) * np.log(x)).sum())

    def variance(self) -> np.ndarray:
        a = self.alpha
        a0 = a.sum()
        return a * (a0 - a) / (a0 * a0 * (a0 + 1.0))


def sample_action(dist: PolicyDistribution, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    x = rng.dirichlet(dist.alpha)
    if not np.all(x >= SAMPLE_FLOOR) or not np.all(np.isfinite(x)):
        x = np.maximum(np.nan_to_num(x, nan=0.0), SAMPLE_FLOOR)
        x = x / x.sum()
    return x, dist.log_prob(x)


def dirichlet_log_prob(mean: T.Tensor, x: np.ndarray, kappa: float) -> T.Tensor:
    """log Dir(x; kappa * mean) as a differentiable function of ``mean``."""
    md = mean.data
    raw = np.maximum(md, MEAN_FLOOR)
    total = raw.sum()
    a_norm = raw / total
    alpha = kappa * a_norm
    logx = np.log(x)
    lp = gammaln(kappa) - gammaln(alpha).sum() + ((alpha - 1.0) * logx).sum()

    def backward(g):
        g_a = g * kappa * (logx - digamma(alpha))  # sum(alpha) == kappa is held fixed
        g_raw = (g_a - (g_a * a_norm).sum()) / total
        return (np.where(md > MEAN_FLOOR, g_raw, 0.0),)

    return T.Tensor._result(np.array(lp), (mean,), backward, "dirichlet_log_prob")


def td_error(r: float, v_s: float, v_next: float, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount must lie in [0, 1], got {gamma}")
    return r + gamma * v_next - v_s


# -- agent bundle ----------------------------------------------------------------------
@dataclass
class Transition:
    state: AgentState
    action: np.ndarray
    log_prob: float
    reward: float
    next_state: AgentState


@dataclass
class StepDiagnostics:
    delta: float
    critic_loss: float
    actor_loss: float
    actor_grad_norm: float
    critic_grad_norm: float
    value: float
    next_value: float
    reward: float


class Agent:
    """GCN, actor and critic with their optimizers."""

    def __init__(self, m: int, n: int, *, seed: int = 0, K: int = 3, kappa: float = 50.0,
                 gamma: float = 0.99, actor_lr: float = 1e-4, critic_lr: float = 1e-3,
                 use_gcn: bool = True, critic_uses_weights: bool = False, channels: int = 3):
        rng = np.random.default_rng(seed)
        self.m, self.n, self.K = m, n, K
        self.kappa, self.gamma = kappa, gamma
        self.gcn = GCNLayer(channels, channels, K, rng) if use_gcn else None
        self.actor = ActorNet(m, n, rng, channels=channels)
        self.critic = CriticNet(m, n, rng, channels=channels, use_weights=critic_uses_weights)
        self.actor_opts = [T.Adam(self.actor.params, lr=actor_lr)]
        if self.gcn is not None:
            self.actor_opts.append(T.Adam(self.gcn.params, lr=actor_lr))
        self.critic_opt = T.Adam(self.critic.params, lr=critic_lr)

    # parameters grouped by checkpoint prefix
    def stores(self) -> dict[str, T.ParamStore]:
        out = {"actor": self.actor.params, "critic": self.critic.params}
        if self.gcn is not None:
            out["gcn"] = self.gcn.params
        return out

    def features(self, state: AgentState) -> T.Tensor:
        if state.graph is None or self.gcn is None:
            return T.Tensor(state.latent)
        return self.gcn(T.Tensor(state.latent), state.graph)

    def policy_mean(self, state: AgentState) -> np.ndarray:
        with T.no_grad():
            return self.actor(self.features(state), state.prev_weights).data.copy()

    def value(self, state: AgentState) -> float:
        with T.no_grad():
            return self.critic(self.features(state), state.prev_weights).item()

    def distribution(self, state: AgentState) -> PolicyDistribution:
        return PolicyDistribution(self.policy_mean(state), self.kappa)

    def act(self, state: AgentState, rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
        """Sample an action (or return the mean when ``rng`` is None)."""
        dist = self.distribution(state)
        if rng is None:
            mean = dist.mean
            return mean, dist.log_prob(_clamp_mean(mean))
        return sample_action(dist, rng)


def train_step(agent: Agent, tr: Transition, gamma: float | None = None) -> StepDiagnostics:
    """One critic and one actor update driven by the same TD error."""
    gamma = agent.gamma if gamma is None else gamma
    x_s = agent.features(tr.state)
    with T.no_grad():
        v_next = agent.critic(agent.features(tr.next_state), tr.next_state.prev_weights).item()

    for store in agent.stores().values():
        store.zero_grad()

    v_s = agent.critic(x_s.detach(), tr.state.prev_weights)
    delta = td_error(tr.reward, v_s.item(), v_next, gamma)
    if not math.isfinite(delta):
        nan = float("nan")
        raise NumericalError("non-finite TD error in train_step; update skipped",
                             StepDiagnostics(delta, nan, nan, nan, nan, v_s.item(), v_next, tr.reward))
    target = tr.reward + gamma * v_next
    critic_loss = 0.5 * T.square(v_s - target)
    critic_loss.backward()

    mean = agent.actor(x_s, tr.state.prev_weights)
    logp = dirichlet_log_prob(mean, tr.action, agent.kappa)
    actor_loss = -delta * logp
    actor_loss.backward()

    c_norm = agent.critic.params.grad_norm()
    a_norm = math.sqrt(sum(s.grad_norm() ** 2 for k, s in agent.stores().items() if k != "critic"))
    diag = StepDiagnostics(delta, critic_loss.item(), actor_loss.item(), a_norm, c_norm,
                           v_s.item(), v_next, tr.reward)
    if not all(math.isfinite(v) for v in (delta, c_norm, a_norm, diag.critic_loss, diag.actor_loss)):
        raise NumericalError("non-finite gradient in train_step; update skipped", diag)
    agent.critic_opt.step()
    for opt in agent.actor_opts:
        opt.step()
    return diag


def validate_action(w) -> np.ndarray:
    return check_weights(w, tol=1e-12)
