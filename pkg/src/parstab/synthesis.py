"""Controller and observer synthesis for the head/tail mode decomposition.

Given the eigenbasis and two interior point sensors, this module picks the
spectral split parameters (eta shift, shift ladder gamma_1 < ... <
gamma_N0), forms the boundary Gram family B_k = Lam_k B Lam_k and its
normalizer A = (sum B_k)^-1, places an observer gain L on the unstable head
block and assembles the closed-loop system matrix F together with the maps
needed later by certification and simulation.

All Hurwitz claims are verified by dense eigenvalue computation at build
time; nothing is trusted from formulas alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import place_poles

from . import lifting
from .spectral_basis import DomainError, conormal_trace, eval_phi

log = logging.getLogger(__name__)


class SynthesisError(RuntimeError):
    """Ladder search or gain placement failed with diagnostics attached."""


class SensorPlacementError(ValueError):
    """Sensor locations fail a visibility or observability condition."""


def abscissa(M) -> float:
    """Largest real part over the spectrum of a dense matrix."""
    return float(np.max(np.linalg.eigvals(M).real))


def select_eta(unstable_lambdas) -> float:
    """Splitting shift for the repeated second eigenvalue.

    Half the smallest gap between lam_2 and the other distinct head
    eigenvalues (lam_1 and lam_4 onward), clamped to [0.1, 1]. With a single
    unstable mode no resonance constraint is active and the clamp floor is
    returned. The non-resonance condition lam_2 + eta != lam_j is asserted
    after clamping.
    """
    lams = [float(v) for v in unstable_lambdas]
    n0 = len(lams)
    if n0 < 1:
        raise ValueError("need at least one unstable eigenvalue")
    if n0 == 1:
        return 0.1
    others = [lams[0]] + lams[3:]
    gaps = [abs(l - lams[1]) for l in others]
    if not gaps or max(gaps) == 0.0:
        raise ValueError("degenerate head spectrum: no nonzero gap around lam_2")
    eta = min(1.0, max(0.1, 0.5 * min(g for g in gaps if g > 0)))
    shifted = lams[1] + eta
    if any(abs(shifted - l) < 1e-12 for l in others):
        raise ValueError(f"eta={eta} resonates with a head eigenvalue")
    return eta


def eta_shift_matrix(n0: int, eta: float) -> np.ndarray:
    xi = np.zeros((n0, n0))
    if n0 >= 2:
        xi[1, 1] = eta
    return xi


def select_gamma_ladder(
    context: lifting.LiftingContext,
    B: np.ndarray,
    eta: float,
    delta: float,
    c_ratio: float = 2.0,
    gamma_base: float = 10.0,
    cond_max: float = 1e12,
):
    """Pick shifts gamma_k = base*(1 + (k-1)*rho), rho = (c_ratio-1)/(N0-1).

    The base doubles until (i) every shift clears the eigenvalue
    admissibility rule over the cached mode range, (ii) sum B_k is invertible
    with condition below `cond_max`, and (iii) the gain block
    -sum gamma_k B_k A + Xi has spectral abscissa below -delta. Returns
    (gammas, A, margin) where margin is that abscissa.
    """
    if c_ratio <= 1.0:
        raise ValueError("c_ratio must exceed 1")
    n0 = context.n0
    lams = context.lams
    xi = eta_shift_matrix(n0, eta)
    rho = 0.0 if n0 == 1 else (c_ratio - 1.0) / (n0 - 1)
    base = float(gamma_base)
    cap = float(gamma_base) * 2.0**20
    last_diag = "no attempt made"
    while base <= cap:
        gammas = tuple(base * (1.0 + k * rho) for k in range(n0))
        try:
            for g in gammas:
                lifting.check_gamma_admissible(g, eta, lams, n0, len(lams))
        except lifting.AdmissibilityError as err:
            last_diag = str(err)
            base *= 2.0
            continue
        lam_mats = [lifting.lambda_gamma(g, eta, lams[:n0]) for g in gammas]
        Bks = [L @ B @ L for L in lam_mats]
        S = sum(Bks)
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond >= cond_max:
            last_diag = f"cond(sum B_k) = {cond:.3e} at base {base}"
            base *= 2.0
            continue
        A = np.linalg.inv(S)
        gain_block = -sum(g * Bk for g, Bk in zip(gammas, Bks)) @ A + xi
        margin = abscissa(gain_block)
        if margin < -delta:
            log.debug("gamma ladder accepted at base %.6g (margin %.4f)", base, margin)
            return gammas, A, margin
        last_diag = f"gain-block abscissa {margin:.4f} >= {-delta} at base {base}"
        base *= 2.0
    raise SynthesisError(
        f"no admissible gamma ladder up to base {cap:.3e}: {last_diag}"
    )


def validate_sensors(xi1, xi2, eigs, n0: int, tol: float = 1e-3) -> np.ndarray:
    """Check mode visibility at the two sensors and return C0 (2 x N0).

    Simple head modes need |phi_i(xi1)| + |phi_i(xi2)| > tol. A double pair
    (positions 2 and 3) needs the 2x2 determinant of its values at the two
    sensors to clear tol, which is the separability condition on sensor
    placement. The (A0, C0) pair must then be observable at full numerical
    rank.
    """
    plant = eigs[0].plant
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if np.allclose(xi1, xi2):
        raise SensorPlacementError("sensors coincide")
    for xi in (xi1, xi2):
        inside = np.all(xi > 0) and np.all(xi < np.asarray(plant.lengths))
        if not inside:
            raise DomainError("sensors must be interior points")
    head = eigs[:n0]
    C0 = np.vstack([[eval_phi(e, xi1) for e in head], [eval_phi(e, xi2) for e in head]])
    groups = {}
    for i, e in enumerate(head):
        groups.setdefault(e.group_id, []).append(i)
    for members in groups.values():
        if len(members) == 1:
            i = members[0]
            if abs(C0[0, i]) + abs(C0[1, i]) <= tol:
                raise SensorPlacementError(
                    f"head mode {i + 1} invisible at both sensors"
                )
        elif len(members) == 2:
            i, j = members
            det = C0[0, i] * C0[1, j] - C0[0, j] * C0[1, i]
            if abs(det) <= tol:
                raise SensorPlacementError(
                    f"double pair ({i + 1},{j + 1}) not separated: det {det:.3e}"
                )
        else:
            raise SensorPlacementError(
                f"multiplicity {len(members)} head group unsupported"
            )
    A0 = -np.diag([e.lam for e in head])
    obs = np.vstack([C0 @ np.linalg.matrix_power(A0, k) for k in range(n0)])
    rank = np.linalg.matrix_rank(obs, tol=1e-10 * max(1.0, np.linalg.norm(obs)))
    if rank < n0:
        raise SensorPlacementError(f"observability rank {rank} < {n0}")
    return C0


def place_observer_gain(A0: np.ndarray, C0: np.ndarray, delta: float, spread: float) -> np.ndarray:
    """Gain L (N0 x 2) putting the spectrum of A0 - L C0 below -delta.

    Targets are the distinct reals -delta - spread*k. For a single head mode
    the minimum-norm row solving the scalar placement is used directly;
    otherwise the placement runs on the transposed pair. Only the abscissa
    requirement is the contract, checked with a 1e-6 allowance.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    C0 = np.atleast_2d(np.asarray(C0, dtype=float))
    n0 = A0.shape[0]
    targets = [-delta - spread * (k + 1) for k in range(n0)]
    if n0 == 1:
        ct = C0[:, 0]
        denom = float(ct @ ct)
        if denom <= 1e-14:
            raise SynthesisError("head mode invisible, cannot place observer pole")
        L = ((A0[0, 0] - targets[0]) / denom) * ct[None, :]
    else:
        try:
            res = place_poles(A0.T, C0.T, targets)
        except ValueError as err:
            raise SynthesisError(f"pole placement failed: {err}") from err
        L = res.gain_matrix.T
    got = abscissa(A0 - L @ C0)
    if got >= -delta + 1e-6:
        raise SynthesisError(
            f"observer abscissa {got:.6f} misses the -{delta} requirement"
        )
    return L


@dataclass(frozen=True)
class SynthesisArtifacts:
    """Everything the closed loop is made of, for one design size N."""

    plant: object
    eigs: list = field(repr=False)
    n0: int = 0
    N: int = 0
    delta: float = 0.0
    eta: float = 0.0
    gammas: tuple = ()
    head_lifts: list = field(default_factory=list, repr=False)  # Lam_k diagonals
    trace_gram: np.ndarray = None  # B
    shifted_grams: list = field(default_factory=list, repr=False)  # B_k
    gram_inverse: np.ndarray = None  # A
    gain_block: np.ndarray = None  # -sum gamma_k B_k A + Xi
    head_drift: np.ndarray = None  # A0
    tail_drift: np.ndarray = None  # diag values of A1, length N - N0
    sensor_head: np.ndarray = None  # C0
    sensor_tail: np.ndarray = None  # C1
    sensor_tail_scaled: np.ndarray = None  # C1 with inverse tail eigenvalue columns
    observer_gain: np.ndarray = None  # L
    closed_loop: np.ndarray = None  # F
    stacked_gain: np.ndarray = None  # G
    tail_input_map: np.ndarray = None  # forcing of tail modes per head input
    sensors: tuple = ()
    margins: dict = field(default_factory=dict)
    context: lifting.LiftingContext = field(default=None, repr=False, compare=False)

    @property
    def head_lams(self) -> np.ndarray:
        return np.array([e.lam for e in self.eigs[: self.n0]])

    def lift_sum(self) -> np.ndarray:
        """sum_k Lam_{gamma_k}, the combined head lifting diagonal."""
        return sum(self.head_lifts)


def sensor_matrices(eigs, n0: int, N: int, xi1, xi2):
    head = eigs[:n0]
    tail = eigs[n0:N]
    C0 = np.vstack([[eval_phi(e, xi1) for e in head], [eval_phi(e, xi2) for e in head]])
    C1 = np.vstack([[eval_phi(e, xi1) for e in tail], [eval_phi(e, xi2) for e in tail]])
    return C0, C1


def assemble_F(gain_block, A0, LC0, L, C1t, tail_lams):
    """Closed-loop matrix F and stacked gain G = (L; -L; 0).

    Block rows: observer head estimate, head estimation error, tail modes.
    The structure is block upper triangular, so the spectrum is the union of
    the three diagonal blocks.
    """
    n0 = A0.shape[0]
    nt = len(tail_lams)
    n = 2 * n0 + nt
    F = np.zeros((n, n))
    F[:n0, :n0] = gain_block
    F[:n0, n0 : 2 * n0] = LC0
    F[:n0, 2 * n0 :] = L @ C1t
    F[n0 : 2 * n0, n0 : 2 * n0] = A0 - LC0
    F[n0 : 2 * n0, 2 * n0 :] = -L @ C1t
    F[2 * n0 :, 2 * n0 :] = -np.diag(tail_lams)
    G = np.zeros((n, 2))
    G[:n0] = L
    G[n0 : 2 * n0] = -L
    return F, G


def synthesize(
    context: lifting.LiftingContext,
    xi1,
    xi2,
    N: int,
    delta: float,
    *,
    c_ratio: float = 2.0,
    gamma_base: float = 10.0,
    spread: float = None,
    sensor_tol: float = 1e-3,
    cond_max: float = 1e12,
) -> SynthesisArtifacts:
    """Full design pipeline at truncation size N."""
    eigs = context.eigs
    n0 = context.n0
    if N <= n0:
        raise ValueError(f"N={N} must exceed the unstable count {n0}")
    if N > len(eigs):
        raise ValueError(f"context holds {len(eigs)} modes, N={N} requested")
    head_lams = context.lams[:n0]
    tail_lams = context.lams[n0:N]
    if np.any(tail_lams <= delta):
        raise SynthesisError("tail eigenvalues must clear the decay target")
    eta = select_eta(head_lams)
    B = context.head_gram
    gammas, A, gain_margin = select_gamma_ladder(
        context, B, eta, delta, c_ratio=c_ratio, gamma_base=gamma_base, cond_max=cond_max
    )
    head_lifts = [lifting.lambda_gamma(g, eta, head_lams) for g in gammas]
    Bks = [L @ B @ L for L in head_lifts]
    gain_block = -sum(g * Bk for g, Bk in zip(gammas, Bks)) @ A + eta_shift_matrix(n0, eta)
    C0 = validate_sensors(xi1, xi2, eigs, n0, tol=sensor_tol)
    _, C1 = sensor_matrices(eigs, n0, N, xi1, xi2)
    C1t = C1 / tail_lams[None, :]
    A0 = -np.diag(head_lams)
    if spread is None:
        spread = 0.5 * delta
    L = place_observer_gain(A0, C0, delta, spread)
    F, G = assemble_F(gain_block, A0, L @ C0, L, C1t, tail_lams)
    margins = {
        "gain_block_abscissa": gain_margin,
        "observer_abscissa": abscissa(A0 - L @ C0),
        "F_abscissa": abscissa(F),
    }
    if margins["F_abscissa"] >= -delta:
        raise SynthesisError(
            f"closed-loop abscissa {margins['F_abscissa']:.4f} misses -{delta}"
        )
    lift_sum = sum(head_lifts)
    # forcing of modes n > N0 by the head input U: rows of the cross Gram
    # against the combined lifted trace, with a leading minus sign
    tail_map = -context.cross_cols[n0:N] @ lift_sum @ A
    return SynthesisArtifacts(
        plant=context.plant,
        eigs=eigs,
        n0=n0,
        N=N,
        delta=delta,
        eta=eta,
        gammas=gammas,
        head_lifts=head_lifts,
        trace_gram=B,
        shifted_grams=Bks,
        gram_inverse=A,
        gain_block=gain_block,
        head_drift=A0,
        tail_drift=tail_lams.copy(),
        sensor_head=C0,
        sensor_tail=C1,
        sensor_tail_scaled=C1t,
        observer_gain=L,
        closed_loop=F,
        stacked_gain=G,
        tail_input_map=tail_map,
        sensors=(tuple(np.asarray(xi1, dtype=float)), tuple(np.asarray(xi2, dtype=float))),
        margins=margins,
        context=context,
    )


def control_trace(artifacts: SynthesisArtifacts, U, s):
    """Boundary control value u(s) = sum_k <Lam_k A U, traces(s)> at s on the face."""
    U = np.asarray(U, dtype=float)
    if U.shape != (artifacts.n0,):
        raise ValueError(f"U must have {artifacts.n0} components")
    coeff = artifacts.lift_sum() @ artifacts.gram_inverse @ U
    stack = np.vstack(
        [np.atleast_1d(conormal_trace(e, s)) for e in artifacts.eigs[: artifacts.n0]]
    )
    out = coeff @ stack
    return float(out[0]) if np.ndim(s) == 1 else out


def report_dict(artifacts: SynthesisArtifacts) -> dict:
    """JSON-ready synthesis report with pinned field names."""
    m = artifacts
    return {
        "schema_version": 1,
        "eigenvalues": [e.lam for e in m.eigs[: m.N]],
        "eta": m.eta,
        "gamma": list(m.gammas),
        "B": m.trace_gram.tolist(),
        "Bk": [b.tolist() for b in m.shifted_grams],
        "A": m.gram_inverse.tolist(),
        "L": m.observer_gain.tolist(),
        "C0": m.sensor_head.tolist(),
        "F_abscissa": m.margins["F_abscissa"],
        "gain_block_abscissa": m.margins["gain_block_abscissa"],
        "observer_abscissa": m.margins["observer_abscissa"],
        "sensors": [list(m.sensors[0]), list(m.sensors[1])],
        "N": m.N,
        "N0": m.n0,
        "delta": m.delta,
    }
