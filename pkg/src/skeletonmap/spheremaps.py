"""Sphere maps h, their suspension, central projection onto the cube boundary,
and a linking-number certificate for Hopf fibres.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (CurvesTooClose, NotOnSphere, ProjectionPoleOnCurve,
                     TraceDiverged, ZeroVector)

SPHERE_TOL = 1e-9


def _check_unit(x, tol=SPHERE_TOL):
    r = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(r - 1.0) > tol):
        raise NotOnSphere(f"input norm deviates from 1 by {np.max(np.abs(r - 1.0)):.3g}")


def hopf(p):
    """Hopf map S^3 -> S^2, (a,b,c,d) -> (2(ac+bd), 2(bc-ad), a^2+b^2-c^2-d^2)."""
    p = np.asarray(p, dtype=float)
    _check_unit(p)
    a, b, c, d = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    return np.stack([2 * (a * c + b * d), 2 * (b * c - a * d),
                     a * a + b * b - c * c - d * d], axis=-1)


def hopf_jacobian(p):
    p = np.asarray(p, dtype=float)
    a, b, c, d = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    rows = [
        [2 * c, 2 * d, 2 * a, 2 * b],
        [-2 * d, 2 * c, 2 * b, -2 * a],
        [2 * a, 2 * b, -2 * c, -2 * d],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def circle_power(degree: int) -> Callable:
    """z -> z^degree on the unit circle, as a map of unit vectors in R^2."""

    def h(p):
        p = np.asarray(p, dtype=float)
        _check_unit(p)
        z = (p[..., 0] + 1j * p[..., 1]) ** degree
        z = z / np.abs(z)
        return np.stack([z.real, z.imag], axis=-1)

    return h


@dataclass
class SphereMapSpec:
    """A map h: S^{source_dim} -> S^{target_dim} between unit spheres."""

    source_dim: int
    target_dim: int
    kind: str
    evaluator: Callable = field(repr=False)
    degree: int | None = None

    def __call__(self, p):
        return self.evaluator(p)

    def to_dict(self) -> dict:
        return {"source_dim": self.source_dim, "target_dim": self.target_dim,
                "kind": self.kind, "degree": self.degree}


def make_sphere_map(k: int, m: int, kind: str = "auto", degree: int = 2,
                    evaluator: Callable | None = None) -> SphereMapSpec:
    """Sphere map S^{k-1} -> S^{m-1} for the construction with parameters (k, m)."""
    if kind == "auto":
        if (k, m) == (4, 3):
            kind = "hopf"
        elif (k, m) == (2, 2):
            kind = "circle_degree"
        else:
            raise ValueError(f"no built-in non-trivial sphere map S^{k - 1} -> S^{m - 1}; "
                             "pass kind='custom' with an evaluator")
    if kind == "hopf":
        if (k, m) != (4, 3):
            raise ValueError("the Hopf map needs k=4, m=3")
        return SphereMapSpec(3, 2, "hopf", hopf)
    if kind == "circle_degree":
        if (k, m) != (2, 2):
            raise ValueError("circle maps need k=2, m=2")
        return SphereMapSpec(1, 1, "circle_degree", circle_power(degree), degree=degree)
    if kind == "custom":
        if evaluator is None:
            raise ValueError("custom sphere map needs an evaluator")
        return SphereMapSpec(k - 1, m - 1, "custom", evaluator)
    raise ValueError(f"unknown sphere map kind {kind!r}")


def suspend(h, x):
    """Suspension (w, t) -> (|w| h(w/|w|), t) of a unit-sphere map."""
    x = np.asarray(x, dtype=float)
    _check_unit(x)
    return _suspend_unchecked(h, x)


def _suspend_unchecked(h, x):
    w, t = x[..., :-1], x[..., -1]
    r = np.linalg.norm(w, axis=-1)
    flat_w = w.reshape(-1, w.shape[-1])
    flat_r = r.reshape(-1)
    nz = flat_r > 0
    dim_out = _target_ambient_dim(h, w.shape[-1])
    head = np.zeros((flat_w.shape[0], dim_out))
    if np.any(nz):
        head[nz] = flat_r[nz, None] * h(flat_w[nz] / flat_r[nz, None])
    head = head.reshape(w.shape[:-1] + (dim_out,))
    return np.concatenate([head, t[..., None]], axis=-1)


def _target_ambient_dim(h, source_ambient: int) -> int:
    if isinstance(h, SphereMapSpec):
        return h.target_dim + 1
    probe = np.zeros(source_ambient)
    probe[0] = 1.0
    return int(np.asarray(h(probe)).shape[-1])


def cubify(u):
    """Central projection of a nonzero vector onto the boundary of [-1/2, 1/2]^d."""
    u = np.asarray(u, dtype=float)
    mx = np.max(np.abs(u), axis=-1, keepdims=True)
    if np.any(mx == 0):
        raise ZeroVector("cannot project the zero vector onto the cube boundary")
    return u / (2.0 * mx)


def phi(h, x):
    """Boundary map S^k -> boundary of the cube: cubify o suspend(h)."""
    return cubify(suspend(h, x))


# ---------------------------------------------------------------------------
# Fibres and the linking certificate

@dataclass
class FiberCurve:
    points: np.ndarray   # (n, d) samples; the closing segment is implicit
    closed: bool
    theta: np.ndarray    # curve parameter in [0, 2 pi)

    def reversed(self) -> "FiberCurve":
        return FiberCurve(self.points[::-1].copy(), self.closed,
                          (2 * np.pi - self.theta[::-1]) % (2 * np.pi))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta"] + [f"x{i + 1}" for i in range(self.points.shape[1])])
            for t, p in zip(self.theta, self.points):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in p])


def hopf_fiber(target, n_samples: int = 512) -> FiberCurve:
    """Closed-form Hopf fibre over a point of S^2 (a great circle)."""
    p = np.asarray(target, dtype=float)
    p = p / np.linalg.norm(p)
    if p[2] > -1.0 + 1e-15:
        z1 = np.sqrt((1 + p[2]) / 2)
        z2 = (p[0] - 1j * p[1]) / (2 * z1)
    else:
        z1, z2 = 0.0 + 0j, 1.0 + 0j
    th = 2 * np.pi * np.arange(n_samples) / n_samples
    e = np.exp(1j * th)
    w1, w2 = e * z1, e * z2
    pts = np.stack([w1.real, w1.imag, w2.real, w2.imag], axis=-1)
    return FiberCurve(pts, True, th)


def _fiber_residual(h, x, frame):
    hx = h(x / np.linalg.norm(x))
    return np.concatenate([[x @ x - 1.0], frame @ hx])


def _numeric_jacobian(fun, x, step=1e-7):
    f0 = fun(x)
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        J[:, j] = (fun(x + e) - fun(x - e)) / (2 * step)
    return J


def _correct(res, x, tol=1e-13, max_iter=60):
    for _ in range(max_iter):
        r = res(x)
        if np.linalg.norm(r) < tol:
            return x
        J = _numeric_jacobian(res, x)
        dx = np.linalg.lstsq(J, r, rcond=1e-8)[0]
        nrm = np.linalg.norm(dx)
        if nrm > 0.25:
            dx *= 0.25 / nrm
        x = x - dx
    if np.linalg.norm(res(x)) < 1e-10:
        return x
    raise TraceDiverged(f"corrector stalled at residual {np.linalg.norm(res(x)):.3g}")


def _circle_fiber(h: SphereMapSpec, target) -> FiberCurve:
    """Discrete fibre of z -> z^d: the d-th roots of the target direction."""
    t = np.asarray(target, dtype=float)
    ang = np.arctan2(t[1], t[0])
    d = h.degree
    th = (ang + 2 * np.pi * np.arange(d)) / d
    return FiberCurve(np.stack([np.cos(th), np.sin(th)], axis=-1), False, np.mod(th, 2 * np.pi))


def trace_fiber(h, target, n_samples: int = 512, step: float = 0.02, seed: int = 0,
                max_steps: int = 20000) -> FiberCurve:
    """Predictor-corrector tracing of the fibre h^{-1}(target) on the unit sphere.

    Works for maps whose fibres are curves (source_dim = target_dim + 1).
    Circle maps return their discrete fibre.
    """
    if isinstance(h, SphereMapSpec) and h.kind == "circle_degree":
        return _circle_fiber(h, target)
    target = np.asarray(target, dtype=float)
    target = target / np.linalg.norm(target)
    # orthonormal frame of the tangent plane of the target sphere at `target`
    q, _ = np.linalg.qr(np.column_stack([target, np.eye(target.size)]))
    frame = q[:, 1:target.size].T
    src = (h.source_dim + 1) if isinstance(h, SphereMapSpec) else target.size + 1
    res = lambda x: _fiber_residual(h, x, frame)

    rng = np.random.default_rng(seed)
    x0 = None
    for _ in range(50):
        x = rng.normal(size=src)
        x /= np.linalg.norm(x)
        full = lambda y: np.concatenate([[y @ y - 1.0], h(y / np.linalg.norm(y)) - target])
        try:
            x = _correct(full, x)
        except TraceDiverged:
            continue
        if np.linalg.norm(h(x / np.linalg.norm(x)) - target) < 1e-10:
            x0 = x / np.linalg.norm(x)
            break
    if x0 is None:
        raise TraceDiverged("could not find a point of the fibre")

    pts = [x0]
    tangent = None
    x = x0
    length = 0.0
    for it in range(max_steps):
        J = _numeric_jacobian(res, x)
        t = np.linalg.svd(J)[2][-1]
        if tangent is not None and t @ tangent < 0:
            t = -t
        tangent = t
        x_new = _correct(res, x + step * t)
        length += np.linalg.norm(x_new - x)
        x = x_new
        if it > 3 and np.linalg.norm(x - x0) < 0.75 * step:
            break
        pts.append(x)
    else:
        raise TraceDiverged("fibre did not close")

    poly = np.array(pts)
    closed_poly = np.vstack([poly, poly[:1]])
    seg = np.linalg.norm(np.diff(closed_poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = total * np.arange(n_samples) / n_samples
    out = np.empty((n_samples, src))
    for j in range(src):
        out[:, j] = np.interp(targets, s, closed_poly[:, j])
    out = np.array([_correct(res, p) for p in out])
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    if np.max(np.linalg.norm(h(out) - target, axis=1)) > 1e-8:
        raise TraceDiverged("resampled fibre left the target level set")
    return FiberCurve(out, True, 2 * np.pi * targets / total)


def stereographic(points, pole):
    """Stereographic projection of S^3 (or any S^d) from `pole` onto R^d."""
    pole = np.asarray(pole, dtype=float)
    pole = pole / np.linalg.norm(pole)
    q, _ = np.linalg.qr(np.column_stack([pole, np.eye(pole.size)]))
    basis = q[:, 1:pole.size]
    dots = points @ pole
    return (points @ basis) / (1.0 - dots)[:, None]


def _choose_pole(c1, c2):
    d = c1.shape[1]
    eye = np.eye(d)
    cands = [s * eye[i] for i in range(d) for s in (1.0, -1.0)]
    cands += [(2.0 * np.array(sg) - 1.0) / np.sqrt(d) for sg in np.ndindex(*(2,) * d)]
    best, best_d = None, -1.0
    for c in cands:
        dist = min(np.min(np.linalg.norm(c1 - c, axis=1)), np.min(np.linalg.norm(c2 - c, axis=1)))
        if dist > best_d:
            best, best_d = c, dist
    return best


def gauss_linking_integral(c1: FiberCurve, c2: FiberCurve, pole=None) -> float:
    """Gauss double integral of two closed curves on S^3, after stereographic projection."""
    p1, p2 = c1.points, c2.points
    gap = np.min(np.linalg.norm(p1[:, None, :] - p2[None, :, :], axis=-1))
    if gap < 1e-6:
        raise CurvesTooClose(f"curves come within {gap:.3g} of each other")
    if p1.shape[1] == 4:
        if pole is None:
            pole = _choose_pole(p1, p2)
        pole = np.asarray(pole, dtype=float)
        pole = pole / np.linalg.norm(pole)
        clearance = min(np.min(np.linalg.norm(p1 - pole, axis=1)),
                        np.min(np.linalg.norm(p2 - pole, axis=1)))
        if clearance < 1e-3:
            raise ProjectionPoleOnCurve(f"projection pole within {clearance:.3g} of a curve")
        p1, p2 = stereographic(p1, pole), stereographic(p2, pole)
    # midpoint rule on closed polygons
    a = np.vstack([p1, p1[:1]])
    b = np.vstack([p2, p2[:1]])
    ma, da = 0.5 * (a[1:] + a[:-1]), np.diff(a, axis=0)
    mb, db = 0.5 * (b[1:] + b[:-1]), np.diff(b, axis=0)
    r = ma[:, None, :] - mb[None, :, :]
    cross = np.cross(da[:, None, :], db[None, :, :])
    num = np.einsum("ijk,ijk->ij", r, cross)
    den = np.linalg.norm(r, axis=-1) ** 3
    return float(np.sum(num / den) / (4 * np.pi))


def linking_number(c1: FiberCurve, c2: FiberCurve, pole=None) -> int:
    return int(round(gauss_linking_integral(c1, c2, pole)))


def winding_number(h, n_samples: int = 1024) -> int:
    """Degree of a circle map, from the accumulated angle of h along S^1."""
    th = 2 * np.pi * np.arange(n_samples + 1) / n_samples
    vals = h(np.stack([np.cos(th), np.sin(th)], axis=-1))
    ang = np.unwrap(np.arctan2(vals[:, 1], vals[:, 0]))
    return int(round((ang[-1] - ang[0]) / (2 * np.pi)))
