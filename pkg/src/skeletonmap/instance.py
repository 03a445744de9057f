"""Instance parameters, first-generation ball layout, similarities and Cantor addressing.

Ball and cell indices are 0-based throughout.  A Cantor address is a tuple
``(j_1, ..., j_d)`` of ball indices; the empty tuple addresses the unit ball.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DimensionHypothesisViolated, NotContracting, PackingInfeasible

MODES = ("faithful", "desk", "toy")

# Axis slots for the realigned balls live in [-AXIS_HALF_LENGTH, AXIS_HALF_LENGTH].
AXIS_HALF_LENGTH = 0.42
# Aligned radius as a fraction of the slot spacing.
ALIGNED_FRACTION = 0.25
# Default extra spacing between neighbouring first-generation balls.
DEFAULT_GAP = 0.02
# Largest layout we are willing to enumerate explicitly.
MAX_ENUMERATED_BALLS = 200_000


@dataclass(frozen=True)
class InstanceParams:
    m: int
    k: int
    n: int
    N: int
    r_b: float
    s: float
    rho: float
    theta: float
    seed: int
    mode: str
    gamma: float
    gap: float = DEFAULT_GAP

    @property
    def domain_dim(self) -> int:
        return self.k + 1

    @property
    def image_dim(self) -> int:
        return self.m + 1

    @property
    def slot_spacing(self) -> float:
        return 2.0 * AXIS_HALF_LENGTH / self.N

    @property
    def inscribed_radius(self) -> float:
        return (1.0 - self.theta) / (2.0 * self.n)

    @property
    def inflation(self) -> float:
        return 0.5 * math.sqrt(self.m + 1)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "k": self.k, "n": self.n, "N": self.N, "r_b": self.r_b,
            "s": self.s, "rho": self.rho, "theta": self.theta, "seed": self.seed,
            "mode": self.mode, "gamma": self.gamma, "gap": self.gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceParams":
        return cls(**{f: d[f] for f in cls.__dataclass_fields__})


def make_instance(m: int, k: int, n: int, r_b: float | None = None, s: float = 0.05,
                  mode: str = "desk", seed: int = 7, theta: float = 0.1,
                  gap: float = DEFAULT_GAP) -> InstanceParams:
    """Validate construction parameters.

    ``r_b`` defaults to ``2/n`` (the faithful choice).  Only ``mode="toy"``
    may violate ``m+1 <= k < 2m-1``; only non-faithful modes may have a
    contraction ratio ``gamma = (1/n)/r_b >= 1``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    for name, v in (("m", m), ("k", k), ("n", n), ("seed", seed)):
        if int(v) != v:
            raise ValueError(f"{name} must be an integer")
    m, k, n, seed = int(m), int(k), int(n), int(seed)
    if m < 1 or k < 1:
        raise ValueError("m and k must be positive")
    if n < 2:
        raise ValueError("n must be at least 2")
    if mode != "toy" and not (m + 1 <= k < 2 * m - 1):
        raise DimensionHypothesisViolated(
            f"need m+1 <= k < 2m-1, got m={m}, k={k} (use mode='toy' to bypass)")
    if r_b is None:
        r_b = 2.0 / n
    r_b = float(r_b)
    if not 0.0 < r_b < 0.5:
        raise ValueError(f"ball radius must lie in (0, 1/2), got {r_b}")
    if not 0.0 < s < 0.25:
        raise ValueError(f"s must lie in (0, 1/4), got {s}")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    gamma = (1.0 / n) / r_b
    if mode == "faithful" and gamma >= 1.0:
        raise NotContracting(f"contraction ratio {gamma} >= 1 in faithful mode")
    N = n ** (m + 1)
    # Volume comparison: N balls of radius r_b inside the ball of radius 1/2.
    if N * r_b ** (k + 1) > 0.5 ** (k + 1):
        raise PackingInfeasible(
            f"{N} balls of radius {r_b} exceed the volume of the radius-1/2 ball")
    rho = ALIGNED_FRACTION * 2.0 * AXIS_HALF_LENGTH / N
    return InstanceParams(m=m, k=k, n=n, N=N, r_b=r_b, s=float(s), rho=rho,
                          theta=float(theta), seed=seed, mode=mode, gamma=gamma,
                          gap=float(gap))


@dataclass(frozen=True)
class Similarity:
    """x -> scale * x + translation (no rotation)."""

    scale: float
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")

    def apply(self, x):
        return self.scale * np.asarray(x, dtype=float) + self.translation

    __call__ = apply

    def inverse(self) -> "Similarity":
        return Similarity(1.0 / self.scale, -self.translation / self.scale)

    def apply_inverse(self, y):
        return (np.asarray(y, dtype=float) - self.translation) / self.scale

    def compose(self, other: "Similarity") -> "Similarity":
        """Return ``self o other``."""
        return Similarity(self.scale * other.scale,
                          self.scale * other.translation + self.translation)

    @classmethod
    def identity(cls, dim: int) -> "Similarity":
        return cls(1.0, np.zeros(dim))


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float


@dataclass
class BallLayout:
    centers: np.ndarray          # (N, k+1)
    radius: float
    aligned_centers: np.ndarray  # (N, k+1), on the last coordinate axis
    aligned_radius: float
    cell_centers: np.ndarray     # (N, m+1)
    cell_index: np.ndarray       # (N, m+1) multi-index of the cell assigned to ball i
    slots: np.ndarray            # (N,) axis slot used by ball i
    n: int
    params: InstanceParams = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "radius": self.radius,
            "aligned_centers": self.aligned_centers.tolist(),
            "aligned_radius": self.aligned_radius,
            "cell_centers": self.cell_centers.tolist(),
            "cell_index": self.cell_index.tolist(),
            "slots": self.slots.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, params: InstanceParams) -> "BallLayout":
        return cls(centers=np.array(d["centers"], dtype=float), radius=d["radius"],
                   aligned_centers=np.array(d["aligned_centers"], dtype=float),
                   aligned_radius=d["aligned_radius"],
                   cell_centers=np.array(d["cell_centers"], dtype=float),
                   cell_index=np.array(d["cell_index"], dtype=int),
                   slots=np.array(d["slots"], dtype=int), n=params.n, params=params)


def _lattice_offsets(params: InstanceParams) -> np.ndarray:
    """Integer-centred lattice offsets (in units of the spacing) in the first k coordinates."""
    m, k, n, N = params.m, params.k, params.n, params.N
    if k >= m + 1:
        shape = (n,) * (m + 1) + (1,) * (k - m - 1)
        grid = np.array(list(np.ndindex(*shape)), dtype=float)
        return grid - (np.array(shape, dtype=float) - 1.0) / 2.0
    side = math.ceil(N ** (1.0 / k) - 1e-9)
    if side ** k < N:
        side += 1
    grid = np.array(list(np.ndindex(*(side,) * k)), dtype=float) - (side - 1) / 2.0
    order = sorted(range(len(grid)), key=lambda i: (round(float(grid[i] @ grid[i]), 12), i))
    return grid[sorted(order[:N])]


def _analytic_lattice_check(params: InstanceParams, spacing: float) -> None:
    m, k, n, r_b = params.m, params.k, params.n, params.r_b
    if k >= m + 1:
        corner = spacing * (n - 1) / 2.0 * math.sqrt(m + 1)
        if corner > 0.5 - r_b + 1e-12:
            raise PackingInfeasible(
                f"lattice corner ball at distance {corner:.6g} exceeds 1/2 - r_b = {0.5 - r_b:.6g}")
    if params.N > MAX_ENUMERATED_BALLS:
        raise PackingInfeasible(f"{params.N} balls is too many to enumerate")


def pack_balls(params: InstanceParams) -> BallLayout:
    """Deterministic lattice packing of the first-generation balls in the hyperplane x_{k+1} = 0."""
    m, k, n, N, r_b = params.m, params.k, params.n, params.N, params.r_b
    if N * r_b ** (k + 1) > 0.5 ** (k + 1):
        raise PackingInfeasible(
            f"volume: {N} * {r_b}^{k + 1} > 2^-{k + 1}")
    spacing = 2.0 * r_b + params.gap
    _analytic_lattice_check(params, spacing)
    offsets = _lattice_offsets(params)
    centers = np.zeros((N, k + 1))
    centers[:, :k] = spacing * offsets
    validate_packing(centers, r_b)

    cell_index = np.array(list(np.ndindex(*(n,) * (m + 1))), dtype=int)
    cell_centers = -0.5 + (cell_index + 0.5) / n
    # Axis slots ordered by the target cell's last coordinate, ties by index.
    order = np.lexsort((np.arange(N), cell_centers[:, -1]))
    slots = np.empty(N, dtype=int)
    slots[order] = np.arange(N)
    spacing_axis = params.slot_spacing
    t = -AXIS_HALF_LENGTH + (slots + 0.5) * spacing_axis
    aligned = np.zeros((N, k + 1))
    aligned[:, -1] = t
    return BallLayout(centers=centers, radius=r_b, aligned_centers=aligned,
                      aligned_radius=params.rho, cell_centers=cell_centers,
                      cell_index=cell_index, slots=slots, n=n, params=params)


def validate_packing(centers: np.ndarray, radius: float, container: float = 0.5,
                     margin: float = 1e-12) -> None:
    norms = np.linalg.norm(centers, axis=1)
    bad = np.flatnonzero(norms + radius > container + margin)
    if bad.size:
        i = int(bad[0])
        raise PackingInfeasible(
            f"ball {i} at distance {norms[i]:.6g} leaves the radius-{container} ball")
    if len(centers) > 1:
        d = squareform(pdist(centers))
        np.fill_diagonal(d, np.inf)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] <= 2 * radius + margin:
            raise PackingInfeasible(
                f"balls {min(i, j)} and {max(i, j)} overlap: distance {d[i, j]:.6g} <= {2 * radius:.6g}")


def child_similarities(layout: BallLayout, i: int) -> tuple[Similarity, Similarity]:
    """Domain similarity sigma_i (unit ball -> B_i) and image similarity tau_i (cube -> cell i)."""
    sigma = Similarity(layout.radius, layout.centers[i])
    tau = Similarity(1.0 / layout.n, layout.cell_centers[i])
    return sigma, tau


def address_similarities(layout: BallLayout, address) -> tuple[Similarity, Similarity]:
    """Sigma = sigma_{j1} o ... o sigma_{jd} and T = tau_{j1} o ... o tau_{jd}."""
    k1, m1 = layout.centers.shape[1], layout.cell_centers.shape[1]
    sig, tau = Similarity.identity(k1), Similarity.identity(m1)
    for j in address:
        s_j, t_j = child_similarities(layout, j)
        sig, tau = sig.compose(s_j), tau.compose(t_j)
    return sig, tau


def address_to_ball(layout: BallLayout, address) -> Ball:
    sig, _ = address_similarities(layout, address)
    return Ball(center=sig.translation.copy(), radius=sig.scale)


def cantor_point(layout: BallLayout, address) -> np.ndarray:
    return address_to_ball(layout, address).center


def all_addresses(N: int, depth: int):
    return itertools.product(range(N), repeat=depth)
