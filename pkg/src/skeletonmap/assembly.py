"""Base map F0, the self-similar recursive evaluator for F, and the padded map f."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .blocks import (DiffeoPipeline, TransitionProfile, axis_suspension_H, build_G1,
                     build_G2, projection_margins, skeleton_project, skeleton_project_nearest,
                     smoothstep)
from .errors import NearSingularSetWarning
from .instance import (BallLayout, InstanceParams, Similarity, address_similarities,
                       child_similarities, make_instance, pack_balls)
from .spheremaps import SphereMapSpec, make_sphere_map, phi

FORMAT_VERSION = 1


@dataclass
class Construction:
    """Everything needed to evaluate F for one instance."""

    params: InstanceParams
    layout: BallLayout
    hmap: SphereMapSpec
    g1: DiffeoPipeline
    g2: DiffeoPipeline
    profile: TransitionProfile

    @property
    def m1(self):
        return self.params.m + 1

    @property
    def k1(self):
        return self.params.k + 1

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "params": self.params.to_dict(),
            "derived": {"gamma": self.params.gamma, "rho": self.params.rho,
                        "N": self.params.N, "inscribed_radius": self.params.inscribed_radius,
                        "inflation": self.params.inflation,
                        "slot_heights": self.layout.aligned_centers[:, -1].tolist()},
            "layout": self.layout.to_dict(),
            "sphere_map": self.hmap.to_dict(),
            "G1": self.g1.to_list(),
            "G2": self.g2.to_list(),
        }

    def to_json(self) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Construction":
        params = InstanceParams.from_dict(d["params"])
        layout = BallLayout.from_dict(d["layout"], params)
        sm = d["sphere_map"]
        if sm["kind"] == "custom":
            raise ValueError("custom sphere maps cannot be restored from JSON")
        hmap = make_sphere_map(params.k, params.m, sm["kind"], degree=sm.get("degree") or 2)
        return cls(params, layout, hmap, DiffeoPipeline.from_list(d["G1"]),
                   DiffeoPipeline.from_list(d["G2"]), TransitionProfile(params.s))

    @classmethod
    def from_json(cls, text: str) -> "Construction":
        return cls.from_dict(json.loads(text))


def build_construction(params: InstanceParams, hmap: SphereMapSpec | None = None) -> Construction:
    layout = pack_balls(params)
    if hmap is None:
        hmap = make_sphere_map(params.k, params.m)
    return Construction(params, layout, hmap, build_G1(layout, params),
                        build_G2(layout, params), TransitionProfile(params.s))


def default_construction(**overrides) -> Construction:
    kw = dict(m=3, k=4, n=2, r_b=0.15, s=0.05, mode="desk", seed=7)
    kw.update(overrides)
    return build_construction(make_instance(**kw))


# ---------------------------------------------------------------------------
# Base map

def pre_projection(con: Construction, X):
    """Z = G2(H(G1(x))), the point handed to the skeleton projection."""
    return con.g2(axis_suspension_H(con.g1(X), con.hmap))


def base_map_F0(con: Construction, X, check=True, projection="central"):
    """F0 = P o G2 o H o G1 on the unit ball minus the open first-generation balls.

    ``projection="nearest"`` swaps P for the nearest-point projection followed by
    R, kept for comparison only: it does not glue exactly to the child balls.
    """
    X = np.asarray(X, dtype=float)
    flat = X.reshape(-1, con.k1)
    Z = pre_projection(con, flat)
    if projection == "central":
        out = skeleton_project(Z, con.params.n, con.params.inscribed_radius, check=check)
    elif projection == "nearest":
        out = skeleton_project_nearest(Z, con.params.n, con.profile)
    else:
        raise ValueError(f"unknown projection {projection!r}")
    return out.reshape(X.shape[:-1] + (con.m1,))


def boundary_map(con: Construction, X):
    """phi = cubify o suspend(h) on the unit sphere."""
    return phi(con.hmap, X)


def glued_boundary_map(con: Construction, i: int, X):
    """tau_i o phi o sigma_i^{-1}, the prescribed values of F on the boundary of B_i."""
    sig, tau = child_similarities(con.layout, i)
    U = sig.apply_inverse(X)
    U = U / np.linalg.norm(U, axis=-1, keepdims=True)
    return tau(phi(con.hmap, U))


# ---------------------------------------------------------------------------
# Recursive evaluation

@dataclass
class EvalResult:
    value: np.ndarray
    depth_used: int
    address_path: tuple
    error_bound: float


@dataclass
class BatchEval:
    values: np.ndarray          # (P, m+1)
    depth_used: np.ndarray      # (P,) length of the address path
    addresses: np.ndarray       # (P, max_depth+1), -1 padded
    error_bound: np.ndarray     # (P,)
    local: np.ndarray           # (P, k+1) point in the frame where it was resolved
    dom_scale: np.ndarray       # (P,) r_b ** depth_used
    img_scale: np.ndarray       # (P,)
    img_shift: np.ndarray       # (P, m+1)
    boundary_distance: np.ndarray  # (P,) distance to the nearest generation sphere crossed or seen

    @property
    def truncated(self):
        return self.error_bound > 0

    def result(self, j: int) -> EvalResult:
        d = int(self.depth_used[j])
        return EvalResult(self.values[j].copy(), d,
                          tuple(int(a) for a in self.addresses[j, :d]), float(self.error_bound[j]))


def descend(con: Construction, X, max_depth: int):
    """Locate each point in the ball hierarchy; stop after ``max_depth`` descents."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = len(X)
    lay = con.layout
    r_b = lay.radius
    local = X.copy()
    depth = np.zeros(P, dtype=int)
    addr = np.full((P, max_depth + 1), -1, dtype=int)
    trunc = np.zeros(P, dtype=bool)
    dom_scale = np.ones(P)
    img_scale = np.ones(P)
    img_shift = np.zeros((P, con.m1))
    bdist = np.full(P, np.inf)
    active = np.arange(P)
    level = 0
    while active.size:
        x = local[active]
        dist = np.linalg.norm(x[:, None, :] - lay.centers[None, :, :], axis=-1)
        j = np.argmin(dist, axis=1)
        dj = dist[np.arange(len(active)), j]
        bdist[active] = np.minimum(bdist[active], np.abs(dj - r_b) * dom_scale[active])
        inside = dj < r_b
        idx = active[inside]
        if idx.size == 0:
            break
        ji = j[inside]
        addr[idx, level] = ji
        depth[idx] = level + 1
        local[idx] = (local[idx] - lay.centers[ji]) / r_b
        dom_scale[idx] *= r_b
        img_shift[idx] += img_scale[idx, None] * lay.cell_centers[ji]
        img_scale[idx] /= lay.n
        if level == max_depth:
            trunc[idx] = True
            break
        active = idx
        level += 1
    values = np.empty((P, con.m1))
    res = ~trunc
    if np.any(res):
        values[res] = img_shift[res] + img_scale[res, None] * base_map_F0(con, local[res])
    values[trunc] = img_shift[trunc]
    err = np.where(trunc, math.sqrt(con.m1) * img_scale, 0.0)
    return BatchEval(values, depth, addr, err, local, dom_scale, img_scale, img_shift, bdist)


def eval_F(con: Construction, x, max_depth: int) -> EvalResult:
    """F(x) via self-similar descent; truncated addresses return the image cell centre."""
    x = np.asarray(x, dtype=float)
    if x.shape != (con.k1,):
        raise ValueError(f"expected a point in R^{con.k1}")
    return descend(con, x[None, :], max_depth).result(0)


def eval_F_batch(con: Construction, X, max_depth: int) -> np.ndarray:
    return descend(con, X, max_depth).values


def F_map(con: Construction, max_depth: int):
    """Vectorised callable x -> F(x)."""
    def f(X):
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1, con.k1)
        return eval_F_batch(con, flat, max_depth).reshape(X.shape[:-1] + (con.m1,))
    return f


# ---------------------------------------------------------------------------
# Geometry of the non-smooth set

def _stencil(X, h):
    P, d = X.shape
    E = np.eye(d) * h
    return np.concatenate([X[:, None, :] + E[None], X[:, None, :] - E[None]], axis=1)


def _fd(fun, X, h):
    P, d = X.shape
    V = fun(_stencil(X, h).reshape(-1, d)).reshape(P, 2 * d, -1)
    return np.transpose((V[:, :d] - V[:, d:]) / (2 * h), (0, 2, 1))


@dataclass
class SingularMargins:
    """Distances (in units of the finite-difference step) to the non-smooth set of F."""

    generation: np.ndarray
    axis: np.ndarray
    ridge: np.ndarray
    branch: np.ndarray
    truncated: np.ndarray

    def excluded(self, factor=10.0):
        return (self.truncated | (self.generation < factor) | (self.axis < factor)
                | (self.ridge < factor) | (self.branch < factor))


def singular_margins(con: Construction, X, depth: int, fd_step: float) -> SingularMargins:
    """How far each point sits from generation spheres, the axis of H, and projection ridges.

    Every margin is expressed as a multiple of the finite-difference step,
    measured through the local linearisation of the stage that creates it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ev = descend(con, X, depth)
    h_loc = fd_step / ev.dom_scale
    gen = ev.boundary_distance / fd_step
    L = ev.local
    Y = con.g1(L)
    probe = min(float(h_loc.min()), 1e-3)
    JY = _fd(con.g1, L, probe)
    lipY = np.linalg.norm(JY, ord=2, axis=(1, 2))
    axis = np.linalg.norm(Y[:, :-1], axis=1) / (h_loc * lipY)
    Z = pre_projection(con, L)
    JZ = _fd(lambda Q: pre_projection(con, Q), L, probe)
    lipZ = np.linalg.norm(JZ, ord=2, axis=(1, 2))
    ridge, branch = projection_margins(Z, con.params.n)
    return SingularMargins(gen, axis, ridge / (h_loc * lipZ), branch / (h_loc * lipZ),
                           ev.truncated)


def jacobian_F(con: Construction, x, depth: int, fd_step: float = 1e-6, warn=True):
    """Central-difference Jacobian of F, shape (m+1, k+1) (or batched)."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if warn:
        mg = singular_margins(con, X, depth, fd_step)
        if np.any(mg.excluded()):
            warnings.warn("finite-difference stencil may straddle a non-smooth set of F",
                          NearSingularSetWarning, stacklevel=2)
    J = _fd(lambda Q: eval_F_batch(con, Q, depth), X, fd_step)
    return J[0] if single else J


# ---------------------------------------------------------------------------
# Skeleton faces

def grid_level(depth_used):
    """The image of a point resolved after ``d`` descents lies on the n^-(d+1) grid skeleton."""
    return np.asarray(depth_used) + 1


def skeleton_distance(Y, n, level):
    """Max-norm distance to the m-skeleton of the n^level grid of the cube (for points in the cube)."""
    Y = np.asarray(Y, dtype=float)
    G = (float(n) ** np.asarray(level, dtype=float))[..., None]
    q = (Y + 0.5) * G
    return np.min(np.abs(q - np.round(q)), axis=-1) / G[..., 0]


def face_id(Y, n, level):
    """Label 'L<level>:<axis>:<i0>.<i1>...' of the skeleton face carrying each point.

    <axis> is the coordinate pinned to a grid plane and its entry in the index
    list is that plane; the other entries are cell indices.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    level = np.broadcast_to(np.asarray(level), (len(Y),))
    out = []
    for y, L in zip(Y, level):
        G = float(n) ** int(L)
        q = (y + 0.5) * G
        j = int(np.argmin(np.abs(q - np.round(q))))
        plane = int(round(q[j]))
        cells = np.clip(np.floor(q), 0, G - 1).astype(int)
        cells[j] = plane
        out.append(f"L{int(L)}:{j}:" + ".".join(str(c) for c in cells))
    return out


# ---------------------------------------------------------------------------
# Padding to f: R^l -> R^r

@dataclass(frozen=True)
class PaddedMapSpec:
    ell: int = 5
    r: int = 4
    t0: float = 0.75
    depth: int = 3

    def radial(self, t):
        """Monotone radial profile: identity on [0, t0], blowing up as t -> 1."""
        t = np.asarray(t, dtype=float)
        u = np.clip((t - self.t0) / (1.0 - self.t0), 0.0, None)
        with np.errstate(divide="ignore"):
            extra = np.where(u > 0, smoothstep(u) * u / np.maximum(1.0 - u, 0.0), 0.0)
        return t + extra

    def radial_inverse(self, s):
        s = np.asarray(s, dtype=float)
        out = s.copy()
        big = s > self.t0
        if np.any(big):
            lo = np.full(big.sum(), self.t0)
            hi = np.minimum(s[big], 1.0)
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                over = self.radial(mid) > s[big]
                hi = np.where(over, mid, hi)
                lo = np.where(over, lo, mid)
            out[big] = 0.5 * (lo + hi)
        return out

    def Phi(self, X):
        X = np.asarray(X, dtype=float)
        t = np.linalg.norm(X, axis=-1, keepdims=True)
        safe = np.where(t > 0, t, 1.0)
        return np.where(t > self.t0, X * self.radial(t) / safe, X)

    def Phi_inverse(self, Y):
        Y = np.asarray(Y, dtype=float)
        s = np.linalg.norm(Y, axis=-1, keepdims=True)
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > self.t0, Y * self.radial_inverse(s) / safe, Y)


def make_padded_spec(con: Construction, ell=5, r=4, t0=0.75, depth=3) -> PaddedMapSpec:
    if ell < con.k1 or r < con.m1:
        raise ValueError(f"need ell >= {con.k1} and r >= {con.m1}")
    if not 0.5 <= t0 < 1:
        raise ValueError("the identity region must contain the Cantor set (t0 >= 1/2)")
    return PaddedMapSpec(ell, r, t0, depth)


def pad_map_f(con: Construction, X, spec: PaddedMapSpec):
    """f(x', y) = (F(Phi^{-1}(x')), 0)."""
    X = np.asarray(X, dtype=float)
    flat = X.reshape(-1, spec.ell)
    xp = spec.Phi_inverse(flat[:, :con.k1])
    out = np.zeros((len(flat), spec.r))
    out[:, :con.m1] = eval_F_batch(con, xp, spec.depth)
    return out.reshape(X.shape[:-1] + (spec.r,))


def project_pi(Z, m1: int):
    return np.asarray(Z, dtype=float)[..., :m1]


def address_frame(con: Construction, address) -> tuple[Similarity, Similarity]:
    return address_similarities(con.layout, address)
