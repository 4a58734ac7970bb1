"""Correlation graphs over assets and Chebyshev spectral filtering.

The asset graph is rebuilt for each decision day from the Pearson
correlation of the last ``n_corr`` observations: ``w_ij = 1 - corr_ij``, so
strongly correlated assets sit close together.  Filters act through the
symmetric normalized Laplacian rescaled to [-1, 1]:

    L_sym = D^-1/2 (D - W) D^-1/2,   L~ = 2 L_sym / lambda_max - I

and a filter of order K is y = sum_k theta_k T_k(L~) x, evaluated with the
three-term recurrence T_k = 2 L~ T_{k-1} - T_{k-2}.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import tensor as T
from .market_data import Panel

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ascending eigenvalues and column eigenvectors, each column signed
    so its largest-magnitude entry is positive.
    """
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, atol=1e-12, rtol=0):
        raise GraphError("jacobi_eigh needs a square symmetric matrix")
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # theta^2 would overflow; this is the limit of the exact formula
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise GraphError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    flip = v[np.argmax(np.abs(v), axis=0), np.arange(n)] < 0
    v[:, flip] *= -1.0
    return w, v


@dataclass
class AssetGraph:
    weights: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = w.shape[0]
        if w.shape != (m, m):
            raise GraphError(f"weight matrix must be square, got {w.shape}")
        if not np.allclose(w, w.T, atol=1e-12, rtol=0):
            raise GraphError("weight matrix must be symmetric")
        if np.any(np.diag(w) != 0):
            raise GraphError("weight matrix must have a zero diagonal")
        if np.any(w < 0):
            raise GraphError("weights must be non-negative")
        self.weights = 0.5 * (w + w.T)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @cached_property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.degrees) - self.weights

    @cached_property
    def sym_laplacian(self) -> np.ndarray:
        d = self.degrees
        inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
        ls = inv[:, None] * self.laplacian * inv[None, :]
        return 0.5 * (ls + ls.T)

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        return jacobi_eigh(self.sym_laplacian)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eig[1]

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @cached_property
    def scaled_laplacian(self) -> np.ndarray:
        lm = self.lambda_max
        if lm <= 1e-12:
            raise GraphError("lambda_max is 0: the graph has no edges")
        return 2.0 * self.sym_laplacian / lm - np.eye(self.m)

    def cheb_polys(self, K: int) -> np.ndarray:
        """(K, m, m) stack of T_k(L~)."""
        cache = self.__dict__.setdefault("_cheb_cache", {})
        if K not in cache:
            lt = self.scaled_laplacian
            out = np.empty((K, self.m, self.m))
            out[0] = np.eye(self.m)
            if K > 1:
                out[1] = lt
            for k in range(2, K):
                out[k] = 2.0 * lt @ out[k - 1] - out[k - 2]
            cache[K] = out
        return cache[K]


def correlation_matrix(x: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Pearson correlation of the rows of ``x``; zero-variance rows get corr 0."""
    xc = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((xc * xc).sum(axis=1))
    flat = [i for i in range(len(norms)) if norms[i] <= 1e-14 * max(1.0, np.abs(x[i]).max())]
    safe = norms.copy()
    safe[flat] = 1.0
    z = xc / safe[:, None]
    z[flat] = 0.0
    corr = np.clip(z @ z.T, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr, flat


def build_graph(panel: Panel, t: int, n_corr: int = 10, field_: str = "close") -> AssetGraph:
    """Correlation graph from the ``n_corr`` observations ending at day ``t``."""
    if n_corr < 3:
        raise GraphError("correlation window needs at least 3 observations")
    if field_ == "close":
        lo = t - n_corr + 1
        if lo < 0 or t >= len(panel):
            raise GraphError(f"correlation window {lo}..{t} outside panel")
        x = panel.close[:, lo : t + 1]
    elif field_ == "log_return":
        lo = t - n_corr
        if lo < 0 or t >= len(panel):
            raise GraphError(f"correlation window {lo}..{t} outside panel")
        x = np.diff(np.log(panel.close[:, lo : t + 1]), axis=1)
    else:
        raise GraphError(f"unknown correlation field {field_!r}")
    corr, flat = correlation_matrix(x)
    warns = []
    for i in flat:
        msg = f"{panel.assets[i]} constant over {panel.dates[max(lo, 0)]}..{panel.dates[t]}: corr set to 0"
        logger.warning(msg)
        warns.append(msg)
    w = 1.0 - corr
    np.fill_diagonal(w, 0.0)
    return AssetGraph(w, warns)


def graph_fourier(x: np.ndarray, graph: AssetGraph) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != graph.m:
        raise GraphError(f"signal length {x.shape[0]} does not match graph size {graph.m}")
    return graph.eigenvectors.T @ x


def inverse_graph_fourier(xt: np.ndarray, graph: AssetGraph) -> np.ndarray:
    xt = np.asarray(xt, dtype=float)
    if xt.shape[0] != graph.m:
        raise GraphError(f"spectrum length {xt.shape[0]} does not match graph size {graph.m}")
    return graph.eigenvectors @ xt


def cheb_basis(lt: np.ndarray, x: np.ndarray, K: int) -> np.ndarray:
    """[T_0(L~)x, ..., T_{K-1}(L~)x] by recurrence; x is (m,) or (..., m, n)."""
    out = np.empty((K,) + x.shape)
    out[0] = x
    if K > 1:
        out[1] = lt @ x
    for k in range(2, K):
        out[k] = 2.0 * (lt @ out[k - 1]) - out[k - 2]
    return out


def cheb_apply(graph: AssetGraph, x: np.ndarray, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 1:
        raise GraphError("theta must be a non-empty vector")
    x = np.asarray(x, dtype=float)
    if x.shape[0] != graph.m:
        raise GraphError(f"signal length {x.shape[0]} does not match graph size {graph.m}")
    basis = cheb_basis(graph.scaled_laplacian, x, theta.size)
    return np.tensordot(theta, basis, axes=1)


def cheb_conv(x: T.Tensor, graph: AssetGraph, theta: T.Tensor) -> T.Tensor:
    """Multi-channel Chebyshev filtering, differentiable in ``x`` and ``theta``.

    ``x`` is (q_in, m, n); ``theta`` is (q_in, q_out, K).  Output channel o is
    sum_i sum_k theta[i, o, k] T_k(L~) x_i.
    """
    if x.ndim != 3 or theta.ndim != 3 or theta.shape[0] != x.shape[0] or x.shape[1] != graph.m:
        raise T.ShapeError(
            f"cheb_conv: input {x.shape}, filters {theta.shape}, graph of {graph.m} nodes"
        )
    K = theta.shape[2]
    lt = graph.scaled_laplacian
    basis = cheb_basis(lt, x.data, K)  # (K, q, m, n)
    th = theta.data
    out = np.einsum("iok,kimn->omn", th, basis)

    def backward(g):
        g_theta = np.einsum("omn,kimn->iok", g, basis)
        h = np.einsum("iok,omn->kimn", th, g)
        polys = graph.cheb_polys(K)
        g_x = np.einsum("kab,kibn->ian", polys, h)
        return g_x, g_theta

    return T.Tensor._result(out, (x, theta), backward, "cheb_conv")


@dataclass
class ChebFilterBank:
    K: int
    theta: np.ndarray  # (q_in, q_out, K)

    def __post_init__(self):
        if self.K < 1:
            raise GraphError("Chebyshev order K must be >= 1")
        if self.theta.ndim != 3 or self.theta.shape[2] != self.K:
            raise GraphError(f"filter coefficients must be (q_in, q_out, {self.K}), got {self.theta.shape}")


class GCNLayer:
    """One graph-convolution layer with sigmoid output and no bias."""

    def __init__(self, q_in: int, q_out: int, K: int, rng: np.random.Generator):
        if K < 1:
            raise GraphError("Chebyshev order K must be >= 1")
        self.q_in, self.q_out, self.K = q_in, q_out, K
        self.params = T.ParamStore()
        self.params.add("theta", T.uniform_init(rng, (q_in, q_out, K), q_in * K))

    @property
    def bank(self) -> ChebFilterBank:
        return ChebFilterBank(self.K, self.params["theta"].data.copy())

    def __call__(self, x, graph: AssetGraph) -> T.Tensor:
        return gcn_layer(T.as_tensor(x), graph, self.params["theta"])


def gcn_layer(x: T.Tensor, graph: AssetGraph, theta: T.Tensor) -> T.Tensor:
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(x.shape + (1,))
    y = T.sigmoid(cheb_conv(x, graph, theta))
    return y.reshape(y.shape[:2]) if squeeze else y


def hop_distances(weights: np.ndarray, threshold: float) -> np.ndarray:
    """All-pairs hop counts over edges with weight >= threshold (-1 = unreachable)."""
    m = weights.shape[0]
    adj = [np.nonzero((weights[i] >= threshold) & (np.arange(m) != i))[0] for i in range(m)]
    dist = np.full((m, m), -1, dtype=int)
    for s in range(m):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
    return dist


@dataclass
class LocalityReport:
    K: int
    threshold: float
    max_outside: float  # largest |response| beyond K-1 hops
    worst: tuple[int, int] | None  # (source, node) realizing max_outside
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_outside < self.tol


def k_locality_check(graph: AssetGraph, K: int, threshold: float = 1e-12,
                     theta=None, tol: float = 1e-9) -> LocalityReport:
    """Filter a unit impulse at each node and measure leakage past K-1 hops."""
    theta = np.ones(K) if theta is None else np.asarray(theta, dtype=float)
    dist = hop_distances(graph.weights, threshold)
    worst, where = 0.0, None
    for s in range(graph.m):
        e = np.zeros(graph.m)
        e[s] = 1.0
        y = cheb_apply(graph, e, theta)
        far = (dist[s] < 0) | (dist[s] > K - 1)
        if far.any():
            j = int(np.argmax(np.where(far, np.abs(y), -1.0)))
            if abs(y[j]) > worst or where is None:
                worst, where = float(abs(y[j])), (s, j)
    return LocalityReport(K, threshold, worst, where, tol)
