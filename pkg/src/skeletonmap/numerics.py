"""Numerical kernels: finite-difference Jacobians, singular values, numerical
rank, mollified spline surrogates and sup-distance estimates."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import NdBSpline, make_interp_spline
from scipy.stats import qmc

from .errors import EvaluationFailed, GridTooCoarse, OutOfBox

DEFAULT_REL_TOL = 1e-6
DEFAULT_FD_STEP = 1e-6


@dataclass
class JetSample:
    x: np.ndarray
    value: np.ndarray
    jacobian: np.ndarray
    singular_values: np.ndarray
    flags: dict = field(default_factory=dict)


def fd_jacobian(fun, x, step=DEFAULT_FD_STEP):
    """Central differences; ``fun`` maps (P, d) -> (P, q).  Returns (q, d) or (P, q, d)."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    P, d = X.shape
    E = np.eye(d) * step
    pts = np.concatenate([X[:, None, :] + E[None], X[:, None, :] - E[None]], axis=1)
    try:
        V = np.asarray(fun(pts.reshape(-1, d)), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise EvaluationFailed(f"map failed on the difference stencil: {exc}") from exc
    if not np.all(np.isfinite(V)):
        raise EvaluationFailed("map returned non-finite values on the difference stencil")
    V = V.reshape(P, 2 * d, -1)
    J = np.transpose((V[:, :d] - V[:, d:]) / (2 * step), (0, 2, 1))
    return J[0] if single else J


def singular_values(A):
    """Non-increasing singular values (batched over leading axes)."""
    return np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)


def numerical_rank(sv, rel_tol=DEFAULT_REL_TOL):
    sv = np.asarray(sv, dtype=float)
    top = sv[..., :1]
    count = np.sum(sv > rel_tol * top, axis=-1)
    return np.where(top[..., 0] > 0, count, 0)


def rank_ratio(sv, r):
    """sigma_{r+1} / sigma_1, with 0/0 read as 0."""
    sv = np.asarray(sv, dtype=float)
    top = sv[..., 0]
    safe = np.where(top > 0, top, 1.0)
    return np.where(top > 0, sv[..., r] / safe, 0.0)


# ---------------------------------------------------------------------------
# Smooth surrogates

def bump_weights(eps, h):
    """Discrete separable mollifier of radius eps on a grid of spacing h (sums to 1)."""
    K = math.ceil(eps / h)
    j = np.arange(-K, K + 1) * h / eps
    w = np.zeros_like(j)
    inside = np.abs(j) < 1
    w[inside] = np.exp(-1.0 / (1.0 - j[inside] ** 2))
    return w / w.sum()


def _mollify_axis(V, w, axis):
    """'valid'-mode correlation with a symmetric kernel along one axis."""
    n_out = V.shape[axis] - len(w) + 1
    out = np.zeros(V.shape[:axis] + (n_out,) + V.shape[axis + 1:])
    for j, wj in enumerate(w):
        if wj:
            out += wj * np.take(V, np.arange(j, j + n_out), axis=axis)
    return out


def _collocation_inverse(x, order):
    """Matrix taking samples at nodes x to interpolating spline coefficients, plus knots."""
    spl = make_interp_spline(x, np.eye(len(x)), k=order - 1)
    return spl.t, spl.c


@dataclass
class SmoothSurrogate:
    lo: np.ndarray
    hi: np.ndarray
    grid_res: int
    eps: float
    order: int
    knots: tuple
    coeffs: np.ndarray       # (grid_res,)*d + (q,)
    fit_residual: float = 0.0

    def __post_init__(self):
        self._spline = NdBSpline(tuple(self.knots), self.coeffs, self.order - 1)

    @property
    def dim(self):
        return len(self.lo)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        tol = 1e-12 * np.max(self.hi - self.lo)
        if np.any(X < self.lo - tol) or np.any(X > self.hi + tol):
            raise OutOfBox("query point lies outside the surrogate box")
        return X

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        flat = self._check(X.reshape(-1, self.dim))
        out = self._spline(flat)
        return out.reshape(X.shape[:-1] + (self.coeffs.shape[-1],))

    def derivative(self, X, nu):
        return self._spline(self._check(X), nu=np.asarray(nu, dtype=int))

    def save(self, path):
        header = {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "grid_res": self.grid_res,
                  "eps": self.eps, "order": self.order, "fit_residual": self.fit_residual,
                  "knots": [np.asarray(t).tolist() for t in self.knots],
                  "shape": list(self.coeffs.shape), "dtype": "<f8"}
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.coeffs, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (size,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(size))
            coeffs = np.frombuffer(fh.read(), dtype="<f8").reshape(header["shape"])
        return cls(np.array(header["lo"]), np.array(header["hi"]), header["grid_res"],
                   header["eps"], header["order"],
                   tuple(np.array(t) for t in header["knots"]), coeffs.copy(),
                   header["fit_residual"])


def smooth_surrogate(fun, lo, hi, grid_res, eps, order=4, chunk=200_000):
    """Sample ``fun`` on a grid, mollify at scale ``eps``, fit a tensor B-spline of ``order``.

    The sampling grid extends beyond the box by the kernel radius so the
    mollified values are available on the whole box.  A spline of order p
    is C^(p-2).
    """
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    d = lo.size
    if grid_res < order:
        raise GridTooCoarse(f"need at least {order} nodes per axis for order {order}")
    h = (hi - lo) / (grid_res - 1)
    if eps <= 0 or np.any(h > eps):
        raise GridTooCoarse(f"grid spacing {h.max():.3g} exceeds the smoothing scale {eps:.3g}")
    axes_w = [bump_weights(eps, hj) for hj in h]
    axes = [lo[j] + h[j] * np.arange(-(len(axes_w[j]) // 2), grid_res + len(axes_w[j]) // 2)
            for j in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = mesh.shape[:-1]
    flat = mesh.reshape(-1, d)
    vals = [np.asarray(fun(flat[a:a + chunk]), dtype=float) for a in range(0, len(flat), chunk)]
    V = np.concatenate(vals).reshape(shape + (-1,))
    for j, w in enumerate(axes_w):
        V = _mollify_axis(V, w, j)
    nodes = [lo[j] + h[j] * np.arange(grid_res) for j in range(d)]
    knots, C = [], V
    for j in range(d):
        t, M = _collocation_inverse(nodes[j], order)
        knots.append(t)
        C = np.moveaxis(np.tensordot(M, C, axes=([1], [j])), 0, j)
    sur = SmoothSurrogate(lo, hi, grid_res, float(eps), order, tuple(knots), C)
    node_pts = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1).reshape(-1, d)
    pick = np.linspace(0, len(node_pts) - 1, min(len(node_pts), 4096)).astype(int)
    fit = sur(node_pts[pick]) - V.reshape(-1, V.shape[-1])[pick]
    sur.fit_residual = float(np.max(np.abs(fit)))
    return sur


def surrogate_jacobian(sur: SmoothSurrogate, X):
    """Exact spline derivatives, shape (q, d) or (P, q, d)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = sur._check(np.atleast_2d(X))
    cols = [sur.derivative(X2, np.eye(sur.dim, dtype=int)[j]) for j in range(sur.dim)]
    J = np.stack(cols, axis=-1)
    return J[0] if single else J


# ---------------------------------------------------------------------------
# Sampling

def box_samples(lo, hi, n_samples, seed=0):
    """Deterministic scrambled Halton points in the box."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    pts = qmc.Halton(d=lo.size, seed=seed).random(n_samples)
    return qmc.scale(pts, lo, hi)


def sup_distance(map1, map2, lo, hi, n_samples=10_000, seed=0):
    X = box_samples(lo, hi, n_samples, seed)
    diff = np.asarray(map1(X)) - np.asarray(map2(X))
    return float(np.max(np.linalg.norm(diff, axis=-1)))
