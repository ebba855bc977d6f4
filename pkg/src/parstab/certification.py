"""Lyapunov decay certificates for the synthesized closed loop.

A certificate at truncation size N consists of the solution P of the
shifted Lyapunov equation F'P + PF + 2*delta*P = -I together with three
tail sums (S1, S2, Sphi) that bound the influence of the modes the
controller never sees. Two scalar checks close the argument: the bordered
matrix Theta1 must be negative semidefinite and the tail decay bound Theta2
must be nonpositive. The certifier doubles N until both hold or a budget
runs out, returning an honest failure record in the latter case.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import lifting
from .spectral_basis import eval_phi, riesz_constants
from .synthesis import SynthesisArtifacts, abscissa

log = logging.getLogger(__name__)

NEG_SLACK = 1e-9  # absolute slack on "<= 0" checks
LYAP_RESIDUAL_TOL = 1e-8


class CertificationError(RuntimeError):
    pass


class NotYetCertifiable(CertificationError):
    """Precondition tied to N failed; a larger N may fix it."""


def solve_lyapunov(F: np.ndarray, delta: float) -> np.ndarray:
    """P solving F'P + PF + 2*delta*P = -I, symmetric positive definite."""
    F = np.asarray(F, dtype=float)
    if abscissa(F) >= -delta:
        raise CertificationError(
            f"F + {delta}*I is not Hurwitz (abscissa {abscissa(F):.4f}), "
            "no certificate exists"
        )
    shifted = F + delta * np.eye(F.shape[0])
    P = scipy.linalg.solve_continuous_lyapunov(shifted.T, -np.eye(F.shape[0]))
    P = 0.5 * (P + P.T)
    residual = F.T @ P + P @ F + 2.0 * delta * P + np.eye(F.shape[0])
    res = float(np.max(np.abs(residual)))
    if res >= LYAP_RESIDUAL_TOL:
        raise CertificationError(f"Lyapunov residual {res:.3e} too large")
    if float(np.min(np.linalg.eigvalsh(P))) <= 0.0:
        raise CertificationError("Lyapunov solution not positive definite")
    return P


def _s_sum(artifacts: SynthesisArtifacts, N: int, N_tail: int, with_gamma_sq: bool) -> float:
    c1, _ = riesz_constants(artifacts.plant)
    A = artifacts.gram_inverse
    total = 0.0
    for k, gamma in enumerate(artifacts.gammas):
        lift_diag = np.diag(artifacts.head_lifts[k])
        for l in range(1, artifacts.n0 + 1):
            row_sq = float(A[l - 1] @ A[l - 1])
            coef = lift_diag[l - 1] ** 2 * row_sq
            if with_gamma_sq:
                coef *= gamma**2
            total += coef * artifacts.context.residual_norm_sq(gamma, l, N, N_tail)
    return c1 * total


def compute_S1(artifacts: SynthesisArtifacts, N: int, N_tail: int) -> float:
    """Tail coupling sum with the gamma_k^2 weights."""
    return _s_sum(artifacts, N, N_tail, with_gamma_sq=True)


def compute_S2(artifacts: SynthesisArtifacts, N: int, N_tail: int) -> float:
    """Same sum as compute_S1 without the gamma_k^2 factor."""
    return _s_sum(artifacts, N, N_tail, with_gamma_sq=False)


def sphi_terms(eigs, xi1, xi2, N: int, N_tail: int, nu: float) -> np.ndarray:
    """Per-mode sensor tail terms (phi_n(xi1)^2 + phi_n(xi2)^2)/(lam_n+nu)^2."""
    if N_tail < N:
        raise ValueError("N_tail must be at least N")
    if N_tail > len(eigs):
        raise ValueError(f"only {len(eigs)} modes available, N_tail={N_tail}")
    tail = eigs[N:N_tail]
    if not tail:
        return np.zeros(0)
    lams = np.array([e.lam for e in tail])
    if np.any(lams + nu <= 0):
        raise ValueError("lam_n + nu must be positive beyond N")
    v1 = np.array([eval_phi(e, np.asarray(xi1, dtype=float)) for e in tail])
    v2 = np.array([eval_phi(e, np.asarray(xi2, dtype=float)) for e in tail])
    return (v1**2 + v2**2) / (lams + nu) ** 2


def compute_Sphi(eigs, xi1, xi2, N: int, N_tail: int, nu: float) -> float:
    return float(np.add.reduce(sphi_terms(eigs, xi1, xi2, N, N_tail, nu)))


def eta_cert_rule(S_phi: float, N: int) -> float:
    """Border weight 1/sqrt(Sphi), with N standing in when the tail is empty."""
    return float(N) if S_phi == 0.0 else 1.0 / math.sqrt(S_phi)


def check_theta1(P, artifacts: SynthesisArtifacts, S1, S2, eps, eta_cert) -> float:
    """Largest eigenvalue of the bordered certificate matrix.

    Layout: state block of size n_F = 2*N0 + (N - N0) bordered by the two
    output channels. E1 picks the observer head out of the state; E2 stacks
    the head rows of the full loop including the input channel.
    """
    m = artifacts
    F, G, P = m.closed_loop, m.stacked_gain, np.asarray(P, dtype=float)
    n_F = F.shape[0]
    n0 = m.n0
    if P.shape != F.shape:
        raise ValueError("P and F dimensions differ")
    E1 = np.zeros((n0, n_F))
    E1[:, :n0] = np.eye(n0)
    LC0 = m.observer_gain @ m.sensor_head
    LC1t = m.observer_gain @ m.sensor_tail_scaled
    E2 = np.hstack([m.gain_block, LC0, LC1t, m.observer_gain])
    top = F.T @ P + P @ F + 2.0 * m.delta * P + eps * S1 * (E1.T @ E1)
    theta = np.zeros((n_F + 2, n_F + 2))
    theta[:n_F, :n_F] = top
    theta[:n_F, n_F:] = P @ G
    theta[n_F:, :n_F] = G.T @ P
    theta[n_F:, n_F:] = -eta_cert * np.eye(2)
    theta += eps * S2 * (E2.T @ E2)
    theta = 0.5 * (theta + theta.T)
    return float(np.max(np.linalg.eigvalsh(theta)))


def check_psi(lambda_next, nu, delta, eps, eta_cert, S_phi, n0: int = None) -> float:
    """Tail decay bound Theta2 = -lambda_{N+1}/2 + 3*nu/2 + 2*delta.

    Before returning, the per-mode slope -2*(1 - N0^2/eps) + eta_cert*S_phi
    must clear -1/2, which under eps = 2*N0^2 reduces to
    eta_cert*S_phi <= 1/2. Violation means N is not yet large enough.
    """
    if lambda_next <= 0:
        raise NotYetCertifiable(
            f"lambda_(N+1) = {lambda_next} not positive; N below the unstable range"
        )
    if n0 is not None and eps != 2 * n0**2:
        raise ValueError(f"eps must equal 2*N0^2, got {eps}")
    slope = -1.0 + eta_cert * S_phi if n0 is None else -2.0 * (1.0 - n0**2 / eps) + eta_cert * S_phi
    if slope > -0.5 + NEG_SLACK:
        raise NotYetCertifiable(
            f"tail slope {slope:.4f} exceeds -1/2 (eta_cert*S_phi = "
            f"{eta_cert * S_phi:.4f} > 1/2); increase N"
        )
    return -0.5 * lambda_next + 1.5 * nu + 2.0 * delta


@dataclass(frozen=True)
class Certificate:
    N: int
    nu: float
    delta: float
    epsilon: float
    eta_cert: float
    S1: float
    S2: float
    Sphi: float
    theta1_max: float
    psi_bound: float
    P_norm: float
    status: str
    P: np.ndarray = field(default=None, repr=False, compare=False)
    N_tail: int = 0
    rounds: tuple = ()

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "N": self.N,
            "nu": self.nu,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "eta_cert": self.eta_cert,
            "S1": self.S1,
            "S2": self.S2,
            "Sphi": self.Sphi,
            "theta1_max": self.theta1_max,
            "psi_bound": self.psi_bound,
            "P_norm": self.P_norm,
            "status": self.status,
        }


def choose_tail(artifacts: SynthesisArtifacts, N: int, nu: float, block_frac: float = 0.01) -> int:
    """Tail length for the certificate sums.

    Starts at max(4N, 400). The contribution of the last half-block to each
    sum must stay below `block_frac` of its total, else the tail doubles up
    to the cap max(16N, start). Available modes bound everything; hitting
    that bound logs a warning instead of failing.
    """
    m = artifacts
    start = lifting.default_tail(N)
    cap = lifting.tail_cap(N)
    have = len(m.context.eigs)
    n_tail = min(start, have)
    if n_tail < start:
        log.warning("tail truncated to %d available modes (wanted %d)", have, start)
    xi1, xi2 = m.sensors
    while True:
        ok = True
        for terms in _policy_term_arrays(m, N, n_tail, nu, xi1, xi2):
            total = float(np.add.reduce(terms))
            if total <= 0.0:
                continue
            half = (n_tail - N) // 2
            block = float(np.add.reduce(terms[len(terms) - half :])) if half else 0.0
            if block >= block_frac * total:
                ok = False
                break
        if ok:
            return n_tail
        nxt = min(2 * n_tail, cap, have)
        if nxt <= n_tail:
            log.info(
                "tail block heuristic saturated at N_tail=%d (cap %d, available %d)",
                n_tail,
                cap,
                have,
            )
            return n_tail
        n_tail = nxt


def _policy_term_arrays(m: SynthesisArtifacts, N, n_tail, nu, xi1, xi2):
    c1, _ = riesz_constants(m.plant)
    agg = None
    for k, gamma in enumerate(m.gammas):
        lift_diag = np.diag(m.head_lifts[k])
        for l in range(1, m.n0 + 1):
            row_sq = float(m.gram_inverse[l - 1] @ m.gram_inverse[l - 1])
            coef = c1 * gamma**2 * lift_diag[l - 1] ** 2 * row_sq
            terms = coef * m.context.residual_terms(gamma, l, N, n_tail)
            agg = terms if agg is None else agg + terms
    yield agg if agg is not None else np.zeros(0)
    yield sphi_terms(m.eigs, xi1, xi2, N, n_tail, nu)


def certify_round(artifacts: SynthesisArtifacts, nu: float) -> Certificate:
    """Run every certificate check at the size the artifacts were built for."""
    m = artifacts
    N = m.N
    eps = 2.0 * m.n0**2
    blocking = None
    P = None
    S1 = S2 = S_phi = float("nan")
    eta_cert = float("nan")
    theta1 = float("nan")
    psi = float("nan")
    n_tail = 0
    try:
        P = solve_lyapunov(m.closed_loop, m.delta)
    except CertificationError as err:
        blocking = f"lyapunov: {err}"
    if P is not None:
        n_tail = choose_tail(m, N, nu)
        S1 = compute_S1(m, N, n_tail)
        S2 = compute_S2(m, N, n_tail)
        xi1, xi2 = m.sensors
        S_phi = compute_Sphi(m.eigs, xi1, xi2, N, n_tail, nu)
        eta_cert = eta_cert_rule(S_phi, N)
        lam_next = m.context.lams[N] if N < len(m.context.lams) else None
        if lam_next is None:
            blocking = "tail: no eigenvalue beyond N available"
        else:
            try:
                psi = check_psi(lam_next, nu, m.delta, eps, eta_cert, S_phi, n0=m.n0)
            except NotYetCertifiable as err:
                blocking = f"psi precondition: {err}"
            theta1 = check_theta1(P, m, S1, S2, eps, eta_cert)
            if blocking is None:
                if theta1 > NEG_SLACK:
                    blocking = f"theta1: largest eigenvalue {theta1:.4e} > 0"
                elif psi > NEG_SLACK:
                    blocking = f"psi: Theta2 = {psi:.4e} > 0"
    status = "certified" if blocking is None else f"failed: {blocking}"
    return Certificate(
        N=N,
        nu=nu,
        delta=m.delta,
        epsilon=eps,
        eta_cert=eta_cert,
        S1=S1,
        S2=S2,
        Sphi=S_phi,
        theta1_max=theta1,
        psi_bound=psi,
        P_norm=float(np.linalg.norm(P, 2)) if P is not None else float("nan"),
        status=status,
        P=P,
        N_tail=n_tail,
    )


def certify(artifacts_builder, N_start: int, N_max: int, nu: float) -> Certificate:
    """Search N in {N_start, 2*N_start, ...} <= N_max for a valid certificate.

    `artifacts_builder` maps N to SynthesisArtifacts (rebuilding the
    N-dependent blocks each round). Returns the first certified round, or the
    last round's failure record with the blocking check in its status. The
    Lyapunov solution norm is tracked across rounds; growth beyond 2x per
    doubling is logged since the decay argument quietly assumes it stays
    bounded.
    """
    if N_max < N_start:
        raise ValueError(f"N_max={N_max} < N_start={N_start}")
    rounds = []
    prev_norm = None
    cert = None
    N = N_start
    while N <= N_max:
        cert = certify_round(artifacts_builder(N), nu)
        rounds.append((N, cert.status))
        if prev_norm is not None and np.isfinite(cert.P_norm) and cert.P_norm > 2.0 * prev_norm:
            log.warning(
                "Lyapunov norm grew %.2fx across doubling to N=%d",
                cert.P_norm / prev_norm,
                N,
            )
        prev_norm = cert.P_norm if np.isfinite(cert.P_norm) else prev_norm
        if cert.certified:
            break
        N *= 2
    return dataclasses.replace(cert, rounds=tuple(rounds))
