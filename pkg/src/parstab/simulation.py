"""Closed-loop time integration in modal coordinates.

The simulated plant carries N_sim modes, the observer exactly the N the
design was built for. Both evolve jointly as one linear system. The stiff
diagonal part (the open-loop eigenvalues) is integrated exactly through its
exponential; the boundary-input and output-injection couplings go through a
two-stage midpoint correction, so the scheme is second order in h with no
stiffness limit from the diagonal.

Forcing enters the plant row n as minus the face inner product of the
control against trace_n; the observer head adds output injection L(y - yhat)
and the observer tail copies the plant-tail forcing map exactly, which keeps
the tail estimation error autonomous. These sign conventions are the
load-bearing part of this module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .lifting import LiftingContext, boundary_inner
from .spectral_basis import eval_phi, face_quadrature, max_wavenumber, trace_matrix
from .synthesis import SynthesisArtifacts

log = logging.getLogger(__name__)

MAX_HALVINGS = 20
CSV_COLUMNS = (
    "t",
    "l2_proxy",
    "h1_proxy",
    "y1",
    "y2",
    "u_l2_gamma1",
    "err_finite",
    "err_residual",
    "zeta1",
    "zeta2",
    "composite",
)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimState:
    """Plant coefficients z (length N_sim) and observer coefficients zhat (length N)."""

    t: float
    z: np.ndarray
    zhat: np.ndarray


def default_n_sim(N: int) -> int:
    return max(4 * N, 200)


def default_step(lam_top: float) -> float:
    """min(0.5/lam_{N_sim}, 1e-2); accuracy of the coupling stage, not
    stiffness, is what actually limits h, so treat this as a starting point."""
    return min(0.5 / max(lam_top, 1e-12), 1e-2)


def init_state(z0_coeffs, N_sim: int, N: int) -> SimState:
    """Initial state: z0 padded or truncated to N_sim, observer at zero."""
    z0 = np.asarray(z0_coeffs, dtype=float).ravel()
    if N < 1 or N_sim < N:
        raise ValueError(f"need 1 <= N <= N_sim, got N={N}, N_sim={N_sim}")
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial coefficients must be finite")
    z = np.zeros(N_sim)
    m = min(len(z0), N_sim)
    z[:m] = z0[:m]
    return SimState(t=0.0, z=z, zhat=np.zeros(N))


class ClosedLoop:
    """Coupled plant + observer matrices for one design at one N_sim.

    With x = (z, zhat), the dynamics are x' = (D + C) x where D is the stiff
    open-loop diagonal and C collects every coupling block:

      * plant rows get the control forcing W U with U = zhat[:N0],
      * observer head rows get the gain block plus L(y - yhat),
      * observer tail rows copy the plant forcing map of modes N0+1..N.

    `open_loop` disables the controller entirely (U forced to zero, observer
    frozen at zero), which reduces the plant to pure modal decay/growth.
    """

    def __init__(
        self,
        artifacts: SynthesisArtifacts,
        N_sim: int = None,
        nu: float = None,
        open_loop: bool = False,
    ):
        m = artifacts
        ctx: LiftingContext = m.context
        N = m.N
        n0 = m.n0
        if N_sim is None:
            N_sim = default_n_sim(N)
        if N_sim < N:
            raise ValueError(f"N_sim={N_sim} below design size N={N}")
        if N_sim > len(ctx.eigs):
            raise ValueError(
                f"context holds {len(ctx.eigs)} modes, N_sim={N_sim} requested"
            )
        self.artifacts = m
        self.N = N
        self.n0 = n0
        self.N_sim = N_sim
        self.nu = m.plant.nu if nu is None else nu
        self.open_loop = open_loop
        lams = ctx.lams[:N_sim]
        self.lams = lams
        A = m.gram_inverse
        cross = ctx.cross_cols[:N_sim]  # <trace_n, trace_l>, n <= N_sim

        # lifted projection maps: column l of M_k is d(gamma_k)_n per unit U_l
        Mks = []
        for k, g in enumerate(m.gammas):
            Mk = np.zeros((N_sim, n0))
            Mk[:n0] = -m.shifted_grams[k] @ A
            den = g + lams[n0:]
            Mk[n0:] = -(cross[n0:] @ m.head_lifts[k] @ A) / den[:, None]
            Mks.append(Mk)
        self.lift_maps = Mks
        self.lift_all = sum(Mks)

        # plant forcing: -<u, trace_n> expressed through the lifted maps
        W = np.zeros((N_sim, n0))
        for k, g in enumerate(m.gammas):
            fac = np.array(
                [
                    g - lams[j] - (m.eta if j == 1 and n0 >= 2 else 0.0)
                    for j in range(n0)
                ]
            )
            W[:n0] += fac[:, None] * Mks[k][:n0]
            W[n0:] += (lams[n0:, None] + g) * Mks[k][n0:]
        self.forcing = W

        sensors = [np.asarray(s, dtype=float) for s in m.sensors]
        self.C_sim = np.vstack(
            [[eval_phi(e, xi) for e in ctx.eigs[:N_sim]] for xi in sensors]
        )
        self.C_N = self.C_sim[:, :N]
        L = m.observer_gain

        n_tot = N_sim + N
        Acl = np.zeros((n_tot, n_tot))
        Acl[:N_sim, :N_sim] = -np.diag(lams)
        obs = slice(N_sim, n_tot)
        head = slice(N_sim, N_sim + n0)
        if not open_loop:
            Acl[:N_sim, head] += W
            # head estimate: gain block plus output injection against
            # yhat = C_N (zhat - lift_head U) + C_sim lift_all U
            Acl[head, head] += m.gain_block
            Acl[head, obs] += -L @ self.C_N
            Acl[head, head] += L @ (self.C_N @ self.lift_all[:N]) - L @ (
                self.C_sim @ self.lift_all
            )
            Acl[head, :N_sim] += L @ self.C_sim
            tail = slice(N_sim + n0, n_tot)
            Acl[tail, tail] += -np.diag(lams[n0:N])
            Acl[tail, head] += m.tail_input_map
        self.full_matrix = Acl
        obs_diag = np.zeros(N) if open_loop else -ctx.lams[:N]
        self.diag_stiff = np.concatenate([-lams, obs_diag])
        self.coupling = Acl - np.diag(self.diag_stiff)
        self._exp_cache = {}

        w = np.maximum(lams + self.nu, self.nu + lams[0] + 1.0)
        self.h1_weights = w
        self._check_ctx = None

    # -- derived quantities ------------------------------------------------

    def U(self, state: SimState) -> np.ndarray:
        return np.zeros(self.n0) if self.open_loop else state.zhat[: self.n0]

    def lifted_part(self, state: SimState) -> np.ndarray:
        """sum_k D_{gamma_k} u_k in coefficients, length N_sim."""
        return self.lift_all @ self.U(state)

    def w(self, state: SimState) -> np.ndarray:
        return state.z - self.lifted_part(state)

    def what(self, state: SimState) -> np.ndarray:
        return state.zhat - self.lift_all[: self.N] @ self.U(state)

    def outputs(self, state: SimState) -> np.ndarray:
        return self.C_sim @ state.z

    def control_norm(self, state: SimState) -> float:
        """L2 norm of the boundary control over the face."""
        U = self.U(state)
        v = self.artifacts.lift_sum() @ self.artifacts.gram_inverse @ U
        return float(np.sqrt(max(v @ self.artifacts.trace_gram @ v, 0.0)))

    def residual_outputs(self, state: SimState) -> np.ndarray:
        """Sensor contribution of modes the observer never models."""
        wn = self.w(state)
        return self.C_sim[:, self.N :] @ wn[self.N :]

    def certificate_energy(self, state: SimState, P: np.ndarray) -> float:
        """V = X'PX + sum_(N<n<=N_sim) (lam_n+nu) w_n^2 for soundness checks."""
        X = self.finite_part(state)
        wn = self.w(state)
        tail = wn[self.N :]
        lam_tail = self.lams[self.N :]
        return float(X @ P @ X + np.add.reduce((lam_tail + self.nu) * tail**2))

    def finite_part(self, state: SimState) -> np.ndarray:
        """X = (head estimate, head error, scaled tail error), the F coordinates."""
        n0, N = self.n0, self.N
        zh = state.zhat
        err = state.z[:N] - zh
        return np.concatenate(
            [zh[:n0], err[:n0], self.lams[n0:N] * err[n0:N]]
        )

    # -- integration -------------------------------------------------------

    def _phases(self, h: float):
        got = self._exp_cache.get(h)
        if got is None:
            got = (np.exp(0.5 * h * self.diag_stiff), np.exp(h * self.diag_stiff))
            self._exp_cache[h] = got
        return got

    def _onestep(self, x: np.ndarray, h: float) -> np.ndarray:
        Eh, E1 = self._phases(h)
        C = self.coupling
        xm = Eh * (x + 0.5 * h * (C @ x))
        return E1 * x + h * Eh * (C @ xm)

    def _advance(self, x: np.ndarray, h: float, depth: int) -> np.ndarray:
        y = self._onestep(x, h)
        if np.all(np.isfinite(y)):
            return y
        if depth >= MAX_HALVINGS:
            raise SimulationError(
                f"state non-finite after {MAX_HALVINGS} step halvings"
            )
        half = 0.5 * h
        return self._advance(self._advance(x, half, depth + 1), half, depth + 1)

    def step(self, state: SimState, h: float) -> SimState:
        if h <= 0:
            raise ValueError("step size must be positive")
        x = np.concatenate([state.z, state.zhat])
        y = self._advance(x, h, 0)
        return SimState(t=state.t + h, z=y[: self.N_sim], zhat=y[self.N_sim :])

    # -- consistency check -------------------------------------------------

    def projection_check(self, state: SimState) -> float:
        """Dual-route check of the head lifted projections.

        Matrix route: -B_k A U. Quadrature route: rebuild u_k on an
        independent face grid (offset panel count), integrate it against each
        head trace and scale by the head lifting coefficient. Returns the max
        absolute deviation over k.
        """
        m = self.artifacts
        if self._check_ctx is None:
            plant = m.plant
            quad = face_quadrature(plant, max_wavenumber(m.eigs[: self.n0]), extra_panels=3)
            self._check_ctx = (quad, trace_matrix(m.eigs[: self.n0], quad))
        quad, traces = self._check_ctx
        U = self.U(state)
        worst = 0.0
        for k, g in enumerate(m.gammas):
            coeff = m.head_lifts[k] @ m.gram_inverse @ U
            u_samples = coeff @ traces
            inner = np.array(
                [boundary_inner(quad, u_samples, traces[n]) for n in range(self.n0)]
            )
            lift_diag = np.diag(m.head_lifts[k])
            route_quad = -lift_diag * inner
            route_matrix = -m.shifted_grams[k] @ m.gram_inverse @ U
            worst = max(worst, float(np.max(np.abs(route_quad - route_matrix))))
        return worst


@dataclass(frozen=True)
class SimulationRun:
    times: np.ndarray
    records: dict
    rate: float
    final_state: SimState
    diagnostics: dict = field(default_factory=dict)
    states: np.ndarray = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return self.records[name]


def estimate_decay_rate(times, values, t_skip: float) -> float:
    """Least-squares slope of log(values) vs time on [t_skip, end].

    Values are floored at 1e-300 before the log so exact zeros do not poison
    the fit. At least 10 samples must survive the skip.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = times >= t_skip
    if int(mask.sum()) < 10:
        raise ValueError("need at least 10 samples after t_skip")
    logs = np.log(np.maximum(values[mask], 1e-300))
    slope = np.polyfit(times[mask], logs, 1)[0]
    return float(slope)


def run(
    z0_coeffs,
    T: float,
    h: float,
    artifacts: SynthesisArtifacts,
    *,
    N_sim: int = None,
    nu: float = None,
    open_loop: bool = False,
    t_skip: float = 2.0,
    check_every: int = 100,
    check_tol: float = 1e-8,
    keep_states: bool = False,
) -> SimulationRun:
    """Integrate the loop over [0, T] and collect the standard diagnostics.

    Every `check_every`-th step the lifted-projection identity is re-derived
    by independent quadrature and must agree with the matrix route to
    `check_tol`; disagreement is a hard failure since it means the simulated
    forcing is not the designed forcing.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    system = ClosedLoop(artifacts, N_sim=N_sim, nu=nu, open_loop=open_loop)
    if h is None:
        h = default_step(system.lams[-1])
    state = init_state(z0_coeffs, system.N_sim, system.N)
    n_steps = max(1, int(round(T / h)))
    cols = {name: np.empty(n_steps + 1) for name in CSV_COLUMNS}
    states = np.empty((n_steps + 1, system.N_sim + system.N)) if keep_states else None
    check_max = 0.0

    def record(i: int, s: SimState):
        wn = system.w(s)
        y = system.outputs(s)
        zeta = system.residual_outputs(s)
        err = s.z[: system.N] - s.zhat
        head_abs = float(np.add.reduce(np.abs(s.zhat[: system.n0])))
        h1 = float(np.sqrt(np.add.reduce(system.h1_weights * wn**2)))
        cols["t"][i] = s.t
        cols["l2_proxy"][i] = float(np.linalg.norm(s.z))
        cols["h1_proxy"][i] = h1
        cols["y1"][i], cols["y2"][i] = float(y[0]), float(y[1])
        cols["u_l2_gamma1"][i] = system.control_norm(s)
        cols["err_finite"][i] = float(np.linalg.norm(err))
        cols["err_residual"][i] = float(np.linalg.norm(s.z[system.N :]))
        cols["zeta1"][i], cols["zeta2"][i] = float(zeta[0]), float(zeta[1])
        cols["composite"][i] = h1 + head_abs
        if keep_states:
            states[i] = np.concatenate([s.z, s.zhat])

    record(0, state)
    for i in range(1, n_steps + 1):
        state = system.step(state, h)
        if not open_loop and check_every and i % check_every == 0:
            dev = system.projection_check(state)
            check_max = max(check_max, dev)
            if dev > check_tol:
                raise SimulationError(
                    f"lifted-projection routes disagree by {dev:.3e} at t={state.t:.3f}"
                )
        record(i, state)
    series = cols["composite"] if not open_loop else cols["l2_proxy"]
    try:
        rate = estimate_decay_rate(cols["t"], series, t_skip)
    except ValueError:
        rate = float("nan")
    return SimulationRun(
        times=cols["t"],
        records=cols,
        rate=rate,
        final_state=state,
        diagnostics={
            "projection_check_max": check_max,
            "h": h,
            "N_sim": system.N_sim,
            "open_loop": open_loop,
        },
        states=states,
    )


def write_csv(run_result: SimulationRun, path) -> None:
    """One row per record; floats formatted with repr so they round-trip."""
    cols = run_result.records
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(len(run_result.times)):
            fh.write(",".join(repr(float(cols[name][i])) for name in CSV_COLUMNS) + "\n")


def project_bump(plant, eigs, center, width: float, amplitude: float, count: int) -> np.ndarray:
    """Coefficients <bump, psi_n> of a Gaussian bump by interior quadrature."""
    from .spectral_basis import interior_quadrature, phi_matrix

    quad = interior_quadrature(plant, max_wavenumber(eigs[:count]))
    center = np.asarray(center, dtype=float)
    d2 = np.add.reduce((quad.points - center) ** 2, axis=1)
    bump = amplitude * np.exp(-d2 / (2.0 * width**2))
    vals = phi_matrix(eigs[:count], quad.points)
    mu = plant.mu(quad.points)
    return vals @ (quad.weights * mu * bump)
