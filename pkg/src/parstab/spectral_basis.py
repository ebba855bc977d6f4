"""Weighted eigenbasis for constant-drift reaction-diffusion operators on boxes.

The operator family handled here acts on a box (0,l_1) x ... x (0,l_d) as

    A f = -laplace(f) - b . grad(f) - c f

with constant per-axis drift b and constant reaction c. Multiplying by the
weight mu(x) = exp(b . x) puts the operator in divergence form with
coefficients a_i(x) = mu(x) on every axis and reaction term -c mu(x). The
eigenfunctions separate per axis:

    phi_k(x) = prod_i sqrt(2/l_i) exp(-b_i x_i / 2) sin(k_i pi x_i / l_i)
    lambda_k = sum_i ((k_i pi / l_i)^2 + b_i^2 / 4) - c

and psi_k = mu phi_k forms the bi-orthonormal partner family under the plain
L2 inner product. Everything downstream (lifting, synthesis, certification,
simulation) consumes only eigenvalues, point values and conormal traces, so
this module is the single basis provider.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss


class DomainError(ValueError):
    """A point lies outside the box or off the requested face."""


class SearchRadiusError(RuntimeError):
    """Eigenvalue enumeration bound proved too small; never truncate silently."""


class PatternError(ValueError):
    """Unstable-mode multiplicity pattern outside the supported shapes."""


QUAD_ORDER = 16
PANELS_PER_HALFWAVE = 8


@dataclass(frozen=True)
class FaceId:
    """One axis-aligned face of the box: coordinate `axis` pinned at 0 or l_axis."""

    axis: int
    side: int  # 0 for the x_axis = 0 face, 1 for x_axis = l_axis

    def __post_init__(self):
        if self.side not in (0, 1):
            raise ValueError("face side must be 0 (low) or 1 (high)")


@dataclass(frozen=True)
class PlantConfig:
    """Coefficients and geometry of one plant.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 to 3.
    lengths : tuple of float
        Box side lengths, all positive. Default pi per axis.
    drift : tuple of float
        Constant drift vector b.
    reaction : float
        Constant reaction coefficient c.
    control_face : FaceId
        The face carrying the boundary control; the rest of the boundary is
        homogeneous Dirichlet.
    nu : float or None
        Norm-equivalence shift. None selects the default
        max(0, -c_tilde_m / mu_m + 1), which for this family equals
        max(0, c + 1).
    delta : float
        Target exponential decay rate, positive.
    """

    dim: int
    lengths: tuple = ()
    drift: tuple = ()
    reaction: float = 0.0
    control_face: FaceId = None
    nu: float = None
    delta: float = 0.5

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        lengths = tuple(float(v) for v in self.lengths) or (math.pi,) * self.dim
        drift = tuple(float(v) for v in self.drift) or (0.0,) * self.dim
        if len(lengths) != self.dim or len(drift) != self.dim:
            raise ValueError("lengths and drift must have one entry per axis")
        if any(v <= 0 for v in lengths):
            raise ValueError("all side lengths must be positive")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "drift", drift)
        face = self.control_face or FaceId(axis=self.dim - 1, side=0)
        if not (0 <= face.axis < self.dim):
            raise ValueError("control face axis out of range")
        object.__setattr__(self, "control_face", face)
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.nu is None:
            object.__setattr__(self, "nu", nu_default(self))
        if self.reaction_shift_margin() <= 0:
            raise ValueError(
                "nu too small: reaction term plus nu*mu must stay positive"
            )

    # mu(x) = exp(b . x) is monotone per axis, so its extrema sit at corners.
    @property
    def mu_min(self) -> float:
        return math.exp(sum(min(0.0, b * l) for b, l in zip(self.drift, self.lengths)))

    @property
    def mu_max(self) -> float:
        return math.exp(sum(max(0.0, b * l) for b, l in zip(self.drift, self.lengths)))

    def mu(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.exp(x @ np.asarray(self.drift))

    def reaction_shift_margin(self, nu: float = None) -> float:
        """Exact min over the box of (-c mu + nu mu) = (nu - c) mu."""
        nu = self.nu if nu is None else nu
        fac = nu - self.reaction
        return fac * (self.mu_min if fac >= 0 else self.mu_max)

    def reaction_shift_max(self, nu: float = None) -> float:
        """Exact max over the box of (nu - c) mu."""
        nu = self.nu if nu is None else nu
        fac = nu - self.reaction
        return fac * (self.mu_max if fac >= 0 else self.mu_min)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = x >= -tol
        hi = x <= np.asarray(self.lengths) + tol
        return np.all(lo & hi, axis=1)


def nu_default(plant: PlantConfig) -> float:
    """Smallest convenient shift keeping the reaction margin at least one.

    For the separable family the sharp pairing of corner extrema gives a
    margin (nu - c) mu_min once nu >= c, so the unit-margin choice is
    max(0, c + 1).
    """
    return max(0.0, plant.reaction + 1.0)


@dataclass(frozen=True)
class Eigenpair:
    """One mode: multi-index, eigenvalue and evaluation data."""

    multi_index: tuple
    lam: float
    norm_const: float
    group_id: int
    plant: PlantConfig = field(repr=False, compare=False)

    @property
    def wavenumbers(self) -> tuple:
        return tuple(
            k * math.pi / l for k, l in zip(self.multi_index, self.plant.lengths)
        )


def mode_eigenvalue(plant: PlantConfig, multi_index) -> float:
    kap = [k * math.pi / l for k, l in zip(multi_index, plant.lengths)]
    return sum(k * k for k in kap) + sum(b * b for b in plant.drift) / 4.0 - plant.reaction


def enumerate_eigenpairs(plant: PlantConfig, count: int) -> list:
    """First `count` eigenpairs in ascending eigenvalue order.

    Candidate multi-indices are all k with sum(k_i^2) <= 2*count^(2/d) + 64.
    The bound is validated a posteriori: the (count+1)-th candidate must exist
    and dominate the count-th, otherwise the enumeration refuses rather than
    truncate silently. Ties in the eigenvalue sort break lexicographically on
    the multi-index so runs are reproducible.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    d = plant.dim
    bound = 2.0 * count ** (2.0 / d) + 64.0
    radius = int(math.isqrt(int(bound))) + 1
    candidates = []
    for k in itertools.product(range(1, radius + 1), repeat=d):
        if sum(v * v for v in k) <= bound:
            candidates.append((mode_eigenvalue(plant, k), k))
    if len(candidates) <= count:
        raise SearchRadiusError(
            f"enumeration bound {bound:.1f} produced only {len(candidates)} "
            f"candidates for count={count}"
        )
    candidates.sort()
    # a-posteriori sufficiency: every unseen index has sum k_i^2 > bound, so its
    # eigenvalue exceeds pi^2/max(l)^2 * bound + |b|^2/4 - c; that floor must
    # dominate the accepted eigenvalues.
    floor = (
        (math.pi / max(plant.lengths)) ** 2 * bound
        + sum(b * b for b in plant.drift) / 4.0
        - plant.reaction
    )
    if candidates[count][0] < candidates[count - 1][0] - 1e-12 or floor < candidates[count - 1][0]:
        raise SearchRadiusError("enumeration bound not provably sufficient")
    norm = math.prod(math.sqrt(2.0 / l) for l in plant.lengths)
    out = []
    group = -1
    prev = None
    for lam, k in candidates[:count]:
        if prev is None or lam > prev + 1e-9:
            group += 1
        prev = lam
        out.append(Eigenpair(multi_index=k, lam=lam, norm_const=norm, group_id=group, plant=plant))
    return out


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != dim:
        raise DomainError(f"points must have {dim} coordinates")
    return pts, scalar


def eval_phi(e: Eigenpair, x):
    """Forward eigenfunction value phi_n(x); x may be one point or a stack."""
    plant = e.plant
    pts, scalar = _as_points(x, plant.dim)
    if not np.all(plant.contains(pts, tol=1e-12)):
        raise DomainError("point outside the box closure")
    out = np.full(pts.shape[0], e.norm_const)
    for ax in range(plant.dim):
        kap = e.wavenumbers[ax]
        out = out * np.exp(-0.5 * plant.drift[ax] * pts[:, ax]) * np.sin(kap * pts[:, ax])
    return float(out[0]) if scalar else out


def eval_psi(e: Eigenpair, x):
    """Dual value psi_n(x) = mu(x) phi_n(x)."""
    plant = e.plant
    pts, scalar = _as_points(x, plant.dim)
    out = plant.mu(pts) * eval_phi(e, pts)
    return float(out[0]) if scalar else out


def eval_phi_gradient(e: Eigenpair, x) -> np.ndarray:
    """Analytic gradient of phi_n, shape (npts, d)."""
    plant = e.plant
    pts, scalar = _as_points(x, plant.dim)
    if not np.all(plant.contains(pts, tol=1e-12)):
        raise DomainError("point outside the box closure")
    axis_vals = []
    axis_ders = []
    for ax in range(plant.dim):
        kap = e.wavenumbers[ax]
        b = plant.drift[ax]
        envelope = np.exp(-0.5 * b * pts[:, ax])
        s = np.sin(kap * pts[:, ax])
        cvals = np.cos(kap * pts[:, ax])
        axis_vals.append(envelope * s)
        axis_ders.append(envelope * (kap * cvals - 0.5 * b * s))
    grad = np.empty((pts.shape[0], plant.dim))
    for ax in range(plant.dim):
        col = np.full(pts.shape[0], e.norm_const)
        for other in range(plant.dim):
            col = col * (axis_ders[other] if other == ax else axis_vals[other])
        grad[:, ax] = col
    return grad[0] if scalar else grad


def _on_face(plant: PlantConfig, pts, face: FaceId, tol=1e-10):
    coord = pts[:, face.axis]
    target = 0.0 if face.side == 0 else plant.lengths[face.axis]
    return np.all(np.abs(coord - target) <= tol) and np.all(plant.contains(pts, tol=tol))


def conormal_trace(e: Eigenpair, s):
    """Conormal flux of phi_n on the control face.

    The divergence-form flux is sum_i n_i a_i d_i(phi) with a_i = mu and
    outward normal n. On the low face of the control axis this evaluates to

        -sqrt(2/l_a) kappa_a  *  prod_{i != a} sqrt(2/l_i) e^{+b_i s_i/2} sin(kappa_i s_i)

    (the mu weight cancels the e^{-b x/2} envelope into e^{+b x/2}); on the
    high face the prefactor picks up (-1)^{k_a} e^{b_a l_a / 2} and a sign
    flip from the normal.
    """
    plant = e.plant
    face = plant.control_face
    pts, scalar = _as_points(s, plant.dim)
    if not _on_face(plant, pts, face):
        raise DomainError("point not on the control face")
    a = face.axis
    kap_a = e.wavenumbers[a]
    la = plant.lengths[a]
    if face.side == 0:
        lead = -math.sqrt(2.0 / la) * kap_a
    else:
        lead = (
            math.sqrt(2.0 / la)
            * kap_a
            * (-1) ** e.multi_index[a]
            * math.exp(0.5 * plant.drift[a] * la)
        )
    out = np.full(pts.shape[0], lead)
    for ax in range(plant.dim):
        if ax == a:
            continue
        kap = e.wavenumbers[ax]
        out = (
            out
            * math.sqrt(2.0 / plant.lengths[ax])
            * np.exp(0.5 * plant.drift[ax] * pts[:, ax])
            * np.sin(kap * pts[:, ax])
        )
    return float(out[0]) if scalar else out


def riesz_constants(plant: PlantConfig) -> tuple:
    """Frame constants (c1, c2) = (1/mu_max, 1/mu_min) of the mode expansion."""
    return 1.0 / plant.mu_max, 1.0 / plant.mu_min


def count_unstable(eigs: list, delta: float, allow_general: bool = False) -> tuple:
    """Number of modes with lam <= delta plus their multiplicity pattern.

    The supported shapes are an all-simple prefix or a prefix whose second
    distinct eigenvalue is double; anything else raises unless
    `allow_general` is set. The list must be long enough to witness the first
    eigenvalue beyond delta.
    """
    lams = [e.lam for e in eigs]
    n0 = sum(1 for lam in lams if lam <= delta)
    if n0 >= len(lams):
        raise ValueError("eigenvalue list too short to witness the threshold")
    pattern = []
    last_gid = None
    for e in eigs[:n0]:
        if pattern and e.group_id == last_gid:
            pattern[-1] += 1
        else:
            pattern.append(1)
        last_gid = e.group_id
    pattern = tuple(pattern)
    if not allow_general:
        simple = all(m == 1 for m in pattern)
        double_second = (
            len(pattern) >= 2
            and pattern[1] == 2
            and all(m == 1 for i, m in enumerate(pattern) if i != 1)
        )
        if not (simple or double_second):
            raise PatternError(
                f"multiplicity pattern {pattern} unsupported without the "
                "generalized-pattern flag"
            )
    return n0, pattern


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class Quadrature:
    """Composite tensor Gauss-Legendre rule.

    `points` are full d-coordinates; for face rules the pinned axis is filled
    with the face value and `local` carries the in-face coordinates.
    """

    points: np.ndarray
    weights: np.ndarray
    local: np.ndarray = None


def gauss_panels(length: float, panels: int, order: int = QUAD_ORDER):
    nodes, wts = leggauss(order)
    edges = np.linspace(0.0, length, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (half[:, None] * nodes[None, :] + mid[:, None]).ravel()
    w = (half[:, None] * wts[None, :]).ravel()
    return x, w


def _panel_count(kmax: int) -> int:
    return max(PANELS_PER_HALFWAVE, PANELS_PER_HALFWAVE * kmax)


def interior_quadrature(plant: PlantConfig, kmax: int, extra_panels: int = 0) -> Quadrature:
    axes = [
        gauss_panels(l, _panel_count(kmax) + extra_panels) for l in plant.lengths
    ]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    w = axes[0][1]
    for a in axes[1:]:
        w = np.multiply.outer(w, a[1])
    return Quadrature(points=pts, weights=np.ravel(w))


def face_quadrature(plant: PlantConfig, kmax: int, extra_panels: int = 0) -> Quadrature:
    """Rule over the control face. In one dimension the face is a single
    point and the measure is counting measure (weight one)."""
    face = plant.control_face
    coord = 0.0 if face.side == 0 else plant.lengths[face.axis]
    if plant.dim == 1:
        pts = np.array([[coord]])
        return Quadrature(points=pts, weights=np.array([1.0]), local=np.zeros((1, 0)))
    other = [ax for ax in range(plant.dim) if ax != face.axis]
    axes = [
        gauss_panels(plant.lengths[ax], _panel_count(kmax) + extra_panels)
        for ax in other
    ]
    if len(axes) == 1:
        loc = axes[0][0][:, None]
        w = axes[0][1]
    else:
        g = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
        loc = np.column_stack([v.ravel() for v in g])
        w = np.multiply.outer(axes[0][1], axes[1][1]).ravel()
    pts = np.empty((loc.shape[0], plant.dim))
    pts[:, face.axis] = coord
    for j, ax in enumerate(other):
        pts[:, ax] = loc[:, j]
    return Quadrature(points=pts, weights=w, local=loc)


def max_wavenumber(eigs: list) -> int:
    return max(max(e.multi_index) for e in eigs)


def phi_matrix(eigs: list, points: np.ndarray) -> np.ndarray:
    """Row n holds phi_n sampled at `points`."""
    return np.vstack([eval_phi(e, points) for e in eigs]) if eigs else np.zeros((0, len(points)))


def trace_matrix(eigs: list, quad: Quadrature) -> np.ndarray:
    """Row n holds the conormal trace of mode n on the face rule."""
    return np.vstack([conormal_trace(e, quad.points) for e in eigs])


def biorthonormality_defect(eigs: list, quad: Quadrature = None) -> float:
    """max |<phi_i, psi_j> - delta_ij| over the supplied modes."""
    plant = eigs[0].plant
    if quad is None:
        quad = interior_quadrature(plant, max_wavenumber(eigs))
    vals = phi_matrix(eigs, quad.points)
    mu = plant.mu(quad.points)
    gram = (vals * (quad.weights * mu)) @ vals.T
    return float(np.max(np.abs(gram - np.eye(len(eigs)))))
