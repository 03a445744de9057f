"""Building blocks of the base map: the snapping profile and R, the axis
suspension H, ball-transport diffeomorphisms G1 and G2, and the skeleton
projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CellCenterSingularity, InsideExcludedBall, TubeObstructed
from .instance import BallLayout, InstanceParams, Similarity
from .spheremaps import _suspend_unchecked, cubify

# max of the derivative of the smoothstep below (attained at u = 1/2)
SMOOTHSTEP_MAX_SLOPE = 2.0
# slide step as a fraction of the transition width; keeps each slide's
# displacement field 0.8-Lipschitz
STEP_FRACTION = 0.4
BOUNDARY_MARGIN = 0.05
EPS_CLEAR = 1e-4


def _bump(u):
    out = np.zeros_like(u, dtype=float)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smoothstep(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    a, b = _bump(u), _bump(1.0 - u)
    return a / (a + b)


def smoothstep_deriv(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = (u > 0) & (u < 1)
    v = u[inside]
    a, b = np.exp(-1.0 / v), np.exp(-1.0 / (1.0 - v))
    da, db = a / v ** 2, -b / (1.0 - v) ** 2
    out[inside] = (da * b - a * db) / (a + b) ** 2
    return out


@dataclass(frozen=True)
class TransitionProfile:
    """Odd, non-decreasing, smooth snapping function with plateau value 1/2."""

    s: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self(t[None])[0]
        a = np.abs(t)
        s = self.s
        out = a.copy()
        inner = (a > 0.5 - 2 * s) & (a < 0.5 - s)
        u = (a[inner] - (0.5 - 2 * s)) / s
        out[inner] = a[inner] + smoothstep(u) * (0.5 - a[inner])
        out[(a >= 0.5 - s) & (a <= 0.5 + s)] = 0.5
        outer = (a > 0.5 + s) & (a < 0.5 + 2 * s)
        u = (a[outer] - (0.5 + s)) / s
        out[outer] = 0.5 + smoothstep(u) * (a[outer] - 0.5)
        return np.sign(t) * out


def lambda_s(t, profile: TransitionProfile):
    return profile(t)


def R(x, profile: TransitionProfile):
    """Coordinatewise snapping; sends a neighbourhood of the cube boundary onto it."""
    return profile(x)


def axis_suspension_H(x, h):
    """(w, t) -> (|w| h(w/|w|), t): spheres around the vertical axis go to spheres of equal radius."""
    return _suspend_unchecked(h, np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Diffeomorphism stages

def _shrink_profile(rho, a, r, R_):
    out = rho.copy()
    lo = rho <= r
    out[lo] = a * rho[lo]
    mid = (rho > r) & (rho < R_)
    u = (rho[mid] - r) / (R_ - r)
    out[mid] = rho[mid] * (a + (1 - a) * smoothstep(u))
    return out


def _shrink_profile_deriv(rho, a, r, R_):
    u = (rho - r) / (R_ - r)
    return a + (1 - a) * smoothstep(u) + rho * (1 - a) * smoothstep_deriv(u) / (R_ - r)


def _shrink_profile_inverse(q, a, r, R_):
    out = q.copy()
    lo = q <= a * r
    out[lo] = q[lo] / a
    mid = (q > a * r) & (q < R_)
    if np.any(mid):
        target = q[mid]
        lo_b = np.full_like(target, r)
        hi_b = np.full_like(target, R_)
        for _ in range(40):
            c = 0.5 * (lo_b + hi_b)
            big = _shrink_profile(c, a, r, R_) > target
            hi_b = np.where(big, c, hi_b)
            lo_b = np.where(big, lo_b, c)
        x = 0.5 * (lo_b + hi_b)
        for _ in range(3):
            x = x - (_shrink_profile(x, a, r, R_) - target) / _shrink_profile_deriv(x, a, r, R_)
        out[mid] = np.clip(x, r, R_)
    return out


class RadialScale:
    """Similarity of ratio ``alpha`` on ball(center, r_in); identity outside ball(center, r_out)."""

    kind = "radial_scale"

    def __init__(self, center, r_in, r_out, alpha):
        self.center = np.asarray(center, dtype=float)
        self.r_in, self.r_out, self.alpha = float(r_in), float(r_out), float(alpha)
        if self.alpha <= 1:
            if not self.r_in < self.r_out:
                raise ValueError("radial scale needs r_in < r_out")
            self._shrink = (self.alpha, self.r_in, self.r_out)
            self._grow = False
        else:
            if not self.alpha * self.r_in < self.r_out:
                raise ValueError("growth must stay inside the support")
            self._shrink = (1.0 / self.alpha, self.alpha * self.r_in, self.r_out)
            self._grow = True

    @property
    def support_radius(self):
        return self.r_out

    def _radial(self, X, fn):
        X = np.array(X, dtype=float, copy=True)
        d = X - self.center
        rho = np.linalg.norm(d, axis=-1)
        mask = (rho < self.r_out) & (rho > 0)
        if np.any(mask):
            new = fn(rho[mask], *self._shrink)
            X[mask] = self.center + d[mask] * (new / rho[mask])[:, None]
        return X

    def forward(self, X):
        return self._radial(X, _shrink_profile_inverse if self._grow else _shrink_profile)

    def inverse(self, Y):
        return self._radial(Y, _shrink_profile if self._grow else _shrink_profile_inverse)

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "r_in": self.r_in,
                "r_out": self.r_out, "alpha": self.alpha}


class SegmentTransport:
    """Carry ball(start, r) rigidly to ball(end, r) by ``n_steps`` compactly supported slides.

    Each slide is ``x -> x + beta(|x - p_j|) * delta`` with ``beta = 1`` on the
    ball and ``0`` beyond radius ``r + w``.
    """

    kind = "segment"

    def __init__(self, start, end, r, w, n_steps):
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        self.r, self.w, self.n_steps = float(r), float(w), int(n_steps)
        self.delta = (self.end - self.start) / self.n_steps

    @property
    def lipschitz(self):
        return np.linalg.norm(self.delta) * SMOOTHSTEP_MAX_SLOPE / self.w

    def _beta(self, rho):
        return 1.0 - smoothstep((rho - self.r) / self.w)

    def _beta_deriv(self, rho):
        return -smoothstep_deriv((rho - self.r) / self.w) / self.w

    def _mask(self, X):
        return segment_distance(X, self.start, self.end) < self.r + self.w

    def forward(self, X):
        X = np.array(X, dtype=float, copy=True)
        mask = self._mask(X)
        if not np.any(mask):
            return X
        Z = X[mask]
        for j in range(self.n_steps):
            p = self.start + j * self.delta
            rho = np.linalg.norm(Z - p, axis=-1)
            Z += self._beta(rho)[:, None] * self.delta
        X[mask] = Z
        return X

    def inverse(self, Y):
        Y = np.array(Y, dtype=float, copy=True)
        mask = self._mask(Y)
        if not np.any(mask):
            return Y
        Z = Y[mask]
        for j in reversed(range(self.n_steps)):
            p = self.start + j * self.delta
            Z = self._slide_inverse(Z, p)
        Y[mask] = Z
        return Y

    def _slide_inverse(self, Y, p):
        # x = y - s*delta with s = beta(|x - p|); phi(s) = s - beta(|y - s delta - p|) is increasing
        rho0 = np.linalg.norm(Y - p, axis=-1)
        active = rho0 < self.r + self.w + np.linalg.norm(self.delta)
        if not np.any(active):
            return Y
        y = Y[active]
        lo = np.zeros(len(y))
        hi = np.ones(len(y))
        for _ in range(30):
            s = 0.5 * (lo + hi)
            ph = s - self._beta(np.linalg.norm(y - s[:, None] * self.delta - p, axis=-1))
            hi = np.where(ph > 0, s, hi)
            lo = np.where(ph > 0, lo, s)
        s = 0.5 * (lo + hi)
        for _ in range(3):
            v = y - s[:, None] * self.delta - p
            rho = np.linalg.norm(v, axis=-1)
            safe = np.where(rho > 0, rho, 1.0)
            ph = s - self._beta(rho)
            dph = 1.0 + self._beta_deriv(rho) * (v @ self.delta) / safe
            s = s - ph / dph
        out = Y.copy()
        out[active] = y - s[:, None] * self.delta
        return out

    def to_dict(self):
        return {"kind": self.kind, "start": self.start.tolist(), "end": self.end.tolist(),
                "r": self.r, "w": self.w, "n_steps": self.n_steps}


class GlobalScale:
    kind = "scale"

    def __init__(self, factor):
        self.factor = float(factor)

    def forward(self, X):
        return self.factor * np.asarray(X, dtype=float)

    def inverse(self, Y):
        return np.asarray(Y, dtype=float) / self.factor

    def to_dict(self):
        return {"kind": self.kind, "factor": self.factor}


STAGE_TYPES = {cls.kind: cls for cls in (RadialScale, SegmentTransport, GlobalScale)}


def stage_from_dict(d):
    d = dict(d)
    cls = STAGE_TYPES[d.pop("kind")]
    return cls(**d)


def segment_distance(X, a, b):
    X = np.asarray(X, dtype=float)
    ab = b - a
    L2 = ab @ ab
    if L2 == 0:
        return np.linalg.norm(X - a, axis=-1)
    t = np.clip((X - a) @ ab / L2, 0.0, 1.0)
    return np.linalg.norm(X - a - t[..., None] * ab, axis=-1)


@dataclass
class DiffeoPipeline:
    """Ordered composition of invertible stages."""

    stages: list = field(default_factory=list)

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        for st in self.stages:
            X = st.forward(X)
        return X

    __call__ = forward

    def inverse(self, Y):
        Y = np.asarray(Y, dtype=float)
        for st in reversed(self.stages):
            Y = st.inverse(Y)
        return Y

    def to_list(self):
        return [st.to_dict() for st in self.stages]

    @classmethod
    def from_list(cls, items):
        return cls([stage_from_dict(d) for d in items])


# ---------------------------------------------------------------------------
# Transport construction with clearance validation

@dataclass
class TransportSpec:
    source_center: np.ndarray
    source_radius: float
    target_center: np.ndarray
    target_radius: float
    obstacles: list = field(default_factory=list)   # [(center, radius)]
    domain_radius: float = 1.0
    waypoints: list = field(default_factory=list)
    margin: float = BOUNDARY_MARGIN
    eps_clear: float = EPS_CLEAR


def _clearance_to_obstacles(a, b, r, obstacles):
    best, who = np.inf, None
    for idx, (c, rc) in enumerate(obstacles):
        d = float(segment_distance(np.asarray(c)[None, :], a, b)[0]) - rc - r
        if d < best:
            best, who = d, idx
    return best, who


def segment_stage(a, b, r, obstacles, domain_radius, margin=BOUNDARY_MARGIN,
                  eps_clear=EPS_CLEAR):
    """SegmentTransport from a to b whose support width adapts to the available clearance."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    d_obs, who = _clearance_to_obstacles(a, b, r, obstacles)
    d_bdy = domain_radius * (1 - margin) - max(np.linalg.norm(a), np.linalg.norm(b)) - r
    avail = min(d_obs, d_bdy)
    w = min(0.8 * avail, 0.25 * domain_radius)
    if avail <= 0 or avail - w < eps_clear:
        what = f"obstacle {who}" if d_obs <= d_bdy else "the domain boundary"
        raise TubeObstructed(f"segment {a.round(4).tolist()} -> {b.round(4).tolist()} "
                             f"blocked by {what} (clearance {avail:.3g})")
    length = float(np.linalg.norm(b - a))
    n_steps = max(1, math.ceil(length / (STEP_FRACTION * w)))
    return SegmentTransport(a, b, r, w, n_steps)


def radial_stage(center, r_in, r_out, alpha, obstacles, domain_radius,
                 margin=BOUNDARY_MARGIN, eps_clear=EPS_CLEAR):
    center = np.asarray(center, dtype=float)
    for idx, (c, rc) in enumerate(obstacles):
        gap = np.linalg.norm(center - c) - rc - r_out
        if gap < eps_clear:
            raise TubeObstructed(f"rescaling support at {center.round(4).tolist()} hits obstacle {idx}")
    if np.linalg.norm(center) + r_out > domain_radius * (1 - margin):
        raise TubeObstructed("rescaling support reaches the domain boundary")
    return RadialScale(center, r_in, r_out, alpha)


def _route(start, end, r, obstacles, domain_radius, waypoints=(), rng=None, tries=16,
           eps_clear=EPS_CLEAR):
    """Stages carrying ball(start, r) to ball(end, r); reroutes through random waypoints if blocked."""
    pts = [np.asarray(start, float)] + [np.asarray(w, float) for w in waypoints] + [np.asarray(end, float)]
    attempt = 0
    while True:
        try:
            stages = []
            for a, b in zip(pts[:-1], pts[1:]):
                if np.linalg.norm(b - a) > 0:
                    stages.append(segment_stage(a, b, r, obstacles, domain_radius, eps_clear=eps_clear))
            return stages
        except TubeObstructed:
            attempt += 1
            if rng is None or attempt > tries:
                raise
            mid = 0.5 * (pts[0] + pts[-1])
            scale = 0.5 * np.linalg.norm(pts[-1] - pts[0]) + 4 * r
            pts = [pts[0], mid + scale * rng.normal(size=mid.size) / math.sqrt(mid.size), pts[-1]]


def make_transport(spec: TransportSpec, rng=None) -> DiffeoPipeline:
    """Diffeomorphism moving the source ball onto the target ball as a similarity."""
    src = np.asarray(spec.source_center, dtype=float)
    tgt = np.asarray(spec.target_center, dtype=float)
    r0, r1 = float(spec.source_radius), float(spec.target_radius)
    if np.array_equal(src, tgt) and r0 == r1:
        return DiffeoPipeline([])
    stages = []
    r_move = min(r0, r1)
    if r1 < r0:
        width = min(r0, _free_radius(src, r0, spec) - r0)
        stages.append(radial_stage(src, r0, r0 + 0.9 * width, r1 / r0, spec.obstacles,
                                   spec.domain_radius, spec.margin, spec.eps_clear))
    stages += _route(src, tgt, r_move, spec.obstacles, spec.domain_radius, spec.waypoints, rng,
                     eps_clear=spec.eps_clear)
    if r1 > r0:
        width = min(r1, _free_radius(tgt, r1, spec) - r1)
        stages.append(radial_stage(tgt, r0, r1 + 0.9 * width, r1 / r0, spec.obstacles,
                                   spec.domain_radius, spec.margin, spec.eps_clear))
    return DiffeoPipeline(stages)


def _free_radius(center, r, spec):
    free = spec.domain_radius * (1 - spec.margin) - np.linalg.norm(center)
    for c, rc in spec.obstacles:
        free = min(free, np.linalg.norm(center - c) - rc)
    if free <= r:
        raise TubeObstructed(f"no room to rescale the ball at {np.round(center, 4).tolist()}")
    return free


# ---------------------------------------------------------------------------
# G1 and G2

def _others(balls, i):
    return [b for j, b in enumerate(balls) if j != i]


def build_G1(layout: BallLayout, params: InstanceParams) -> DiffeoPipeline:
    """Realign the first-generation balls onto the vertical axis (identity near the unit sphere)."""
    rng = np.random.default_rng(params.seed)
    centers = layout.centers
    N = len(centers)
    rho = layout.aligned_radius
    if N > 1:
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        gap = dist.min() - 2 * layout.radius
    else:
        gap = 1.0 - 2 * layout.radius
    balls = [(centers[i].copy(), layout.radius) for i in range(N)]
    stages = []
    for i in range(N):
        stages.append(radial_stage(centers[i], layout.radius, layout.radius + 0.45 * gap,
                                   rho / layout.radius, _others(balls, i), 1.0))
        balls[i] = (centers[i].copy(), rho)
    # lift each ball to its slot height inside its own column
    for i in range(N):
        a = balls[i][0]
        b = a.copy()
        b[-1] = layout.aligned_centers[i, -1]
        stages += _route(a, b, rho, _others(balls, i), 1.0, rng=rng)
        balls[i] = (b, rho)
    # slide horizontally onto the axis
    for i in range(N):
        a = balls[i][0]
        stages += _route(a, layout.aligned_centers[i], rho, _others(balls, i), 1.0, rng=rng)
        balls[i] = (layout.aligned_centers[i].copy(), rho)
    return DiffeoPipeline(stages)


def build_G2(layout: BallLayout, params: InstanceParams) -> DiffeoPipeline:
    """Inflate by sqrt(m+1)/2 and carry the aligned image balls into their grid cells."""
    rng = np.random.default_rng(params.seed + 1)
    c = params.inflation
    N = layout.N
    m1 = params.m + 1
    rho = c * layout.aligned_radius
    R_in = params.inscribed_radius
    starts = np.zeros((N, m1))
    starts[:, -1] = c * layout.aligned_centers[:, -1]
    targets = layout.cell_centers
    stages = [GlobalScale(c)]
    balls = [(starts[i].copy(), rho) for i in range(N)]
    for i in range(N):
        b = starts[i].copy()
        b[:-1] = targets[i, :-1]
        stages += _route(starts[i], b, rho, _others(balls, i), c, rng=rng)
        balls[i] = (b, rho)
    pending = list(range(N))
    while pending:
        moved = False
        for i in list(pending):
            try:
                st = _route(balls[i][0], targets[i], rho, _others(balls, i), c)
            except TubeObstructed:
                continue
            stages += st
            balls[i] = (targets[i].copy(), rho)
            pending.remove(i)
            moved = True
        if not moved:
            i = pending[0]
            stages += _route(balls[i][0], targets[i], rho, _others(balls, i), c, rng=rng)
            balls[i] = (targets[i].copy(), rho)
            pending.remove(i)
    half_cell = 1.0 / (2 * params.n)
    for i in range(N):
        stages.append(radial_stage(targets[i], rho, half_cell, R_in / rho, _others(balls, i), c))
        balls[i] = (targets[i].copy(), R_in)
    return DiffeoPipeline(stages)


def G1_on_ball_similarity(layout: BallLayout, i: int) -> Similarity:
    s = layout.aligned_radius / layout.radius
    return Similarity(s, layout.aligned_centers[i] - s * layout.centers[i])


def G2_on_ball_similarity(layout: BallLayout, params: InstanceParams, i: int) -> Similarity:
    s = params.inscribed_radius / layout.aligned_radius
    axis_pt = np.zeros(params.m + 1)
    axis_pt[-1] = layout.aligned_centers[i, -1]
    return Similarity(s, layout.cell_centers[i] - s * axis_pt)


# ---------------------------------------------------------------------------
# Skeleton projection

def cell_of(z, n):
    idx = np.clip(np.floor((np.asarray(z) + 0.5) * n), 0, n - 1)
    return -0.5 + (idx + 0.5) / n


def skeleton_project(z, n, inscribed_radius=None, check=True):
    """Project onto the m-skeleton of the n-grid of [-1/2, 1/2]^{m+1}.

    Outside the cube: central projection onto its boundary.  Inside a cell:
    radial projection from the cell centre onto the cell boundary.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    sup = np.max(np.abs(z), axis=-1)
    outer = sup >= 0.5
    if np.any(outer):
        out[outer] = cubify(z[outer])
    inner = ~outer
    if np.any(inner):
        zi = z[inner]
        cc = cell_of(zi, n)
        u = zi - cc
        un = np.max(np.abs(u), axis=-1, keepdims=True)
        if check:
            if np.any(un == 0):
                raise CellCenterSingularity("point sits at a cell centre")
            if inscribed_radius is not None:
                r = np.linalg.norm(u, axis=-1)
                if np.any(r < inscribed_radius * (1 - 1e-9)):
                    raise InsideExcludedBall("point lies inside an inscribed ball")
        out[inner] = cc + u / (2 * n * un)
    return out


def projection_margins(z, n):
    """Distances (in image units) from z to where the projection switches face or branch.

    Returns ``(ridge_gap, branch_gap)``: the gap between the two largest
    coordinates driving the projection, and the distance of ``|z|_inf`` from 1/2.
    """
    z = np.asarray(z, dtype=float)
    sup = np.max(np.abs(z), axis=-1)
    outer = sup >= 0.5
    u = np.where(outer[..., None], z, z - cell_of(z, n))
    a = np.sort(np.abs(u), axis=-1)
    return a[..., -1] - a[..., -2], np.abs(sup - 0.5)


def skeleton_project_nearest(z, n, profile: TransitionProfile):
    """Comparison variant: nearest-point projection onto the cube, then R in cell coordinates."""
    z = np.clip(np.asarray(z, dtype=float), -0.5, 0.5)
    cc = cell_of(z, n)
    return cc + R((z - cc) * n, profile) / n
