import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson

from parstab.certification import solve_lyapunov
from parstab.simulation import (
    CSV_COLUMNS,
    ClosedLoop,
    SimState,
    SimulationError,
    default_n_sim,
    default_step,
    estimate_decay_rate,
    init_state,
    project_bump,
    run,
    write_csv,
)
from parstab.spectral_basis import eval_phi

from conftest import EXAMPLE_SENSOR_1, EXAMPLE_SENSOR_2


def test_defaults():
    assert default_n_sim(60) == 240
    assert default_n_sim(30) == 200
    assert default_step(50.0) == pytest.approx(1e-2)
    assert default_step(1000.0) == pytest.approx(5e-4)


def test_init_state_pads_and_truncates():
    s = init_state([1.0, 2.0], 6, 3)
    assert np.array_equal(s.z, [1, 2, 0, 0, 0, 0])
    assert np.array_equal(s.zhat, np.zeros(3))
    assert s.t == 0.0
    long = init_state(np.ones(100), 6, 3)
    assert np.array_equal(long.z, np.ones(6))


def test_init_state_rejects_bad_input():
    with pytest.raises(ValueError):
        init_state([1.0], 3, 6)
    with pytest.raises(ValueError):
        init_state([np.nan], 6, 3)


def test_bump_projection_against_simpson(example_plant, example_eigs):
    coeffs = project_bump(example_plant, example_eigs, (1.2, 2.0), 0.4, 2.0, 5)
    xs = np.linspace(0.0, np.pi, 801)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    bump = 2.0 * np.exp(-((X - 1.2) ** 2 + (Y - 2.0) ** 2) / (2 * 0.4**2))
    mu = np.exp(3.0 * (X + Y))
    for n, e in enumerate(example_eigs[:5]):
        i, j = e.multi_index
        phi = (
            (2 / np.pi)
            * np.exp(-1.5 * (X + Y))
            * np.sin(i * X)
            * np.sin(j * Y)
        )
        want = simpson(simpson(bump * mu * phi, x=xs, axis=1), x=xs)
        assert coeffs[n] == pytest.approx(want, rel=1e-8, abs=1e-12)


def test_open_loop_step_is_exact_modal_decay(example_art30):
    system = ClosedLoop(example_art30, N_sim=60, open_loop=True)
    state = init_state(np.ones(60), 60, 30)
    h = 1e-3
    out = system.step(state, h)
    assert np.allclose(out.z, np.exp(-system.lams * h), rtol=1e-13)
    assert not np.any(out.zhat)


def test_outputs_and_controls_at_start(example_art30):
    system = ClosedLoop(example_art30, N_sim=60)
    state = init_state([1.0], 60, 30)
    y = system.outputs(state)
    assert y[0] == pytest.approx(float(eval_phi(example_art30.eigs[0], EXAMPLE_SENSOR_1)))
    assert y[1] == pytest.approx(float(eval_phi(example_art30.eigs[0], EXAMPLE_SENSOR_2)))
    # observer starts at zero, so no control authority yet
    assert system.control_norm(state) == 0.0
    assert not np.any(system.U(state))


def test_step_linearity(example_art30):
    system = ClosedLoop(example_art30, N_sim=60)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(60)
    zh = rng.standard_normal(30)
    a = SimState(t=0.0, z=x, zhat=zh)
    b = SimState(t=0.0, z=3.7 * x, zhat=3.7 * zh)
    sa = system.step(a, 1e-3)
    sb = system.step(b, 1e-3)
    assert np.allclose(3.7 * sa.z, sb.z, rtol=1e-10, atol=1e-12)
    assert np.allclose(3.7 * sa.zhat, sb.zhat, rtol=1e-10, atol=1e-12)


def test_zero_state_stays_zero(example_art30):
    result = run(np.zeros(5), 0.2, 1e-3, example_art30, N_sim=60, check_every=50)
    for name in CSV_COLUMNS:
        if name == "t":
            continue
        assert not np.any(result.column(name))


def test_tail_error_is_autonomous(example_art30):
    # modes between N0 and N receive the same forcing in plant and observer,
    # so their error decays exactly modally even while the loop is active
    system = ClosedLoop(example_art30, N_sim=60)
    state = init_state(np.ones(10), 60, 30)
    n0, N = 3, 30
    e0 = system.lams[n0:N] * (state.z[n0:N] - state.zhat[n0:N])
    h, t_end = 2e-4, 1.0
    for _ in range(int(round(t_end / h))):
        state = system.step(state, h)
    et = system.lams[n0:N] * (state.z[n0:N] - state.zhat[n0:N])
    want = e0 * np.exp(-system.lams[n0:N] * t_end)
    assert np.max(np.abs(et - want)) < 1e-7


def test_projection_check_consistency(example_art30):
    system = ClosedLoop(example_art30, N_sim=60)
    state = SimState(t=0.0, z=np.zeros(60), zhat=np.ones(30))
    assert system.projection_check(state) < 1e-8


def test_run_bookkeeping(example_art30):
    result = run(np.ones(5), 0.25, 1e-3, example_art30, N_sim=60, check_every=50)
    assert len(result.times) == 251
    assert result.times[0] == 0.0
    assert np.allclose(np.diff(result.times), 1e-3)
    assert math.isnan(result.rate)  # nothing survives the default 2 s skip
    assert result.diagnostics["N_sim"] == 60
    assert result.diagnostics["open_loop"] is False
    assert 0.0 <= result.diagnostics["projection_check_max"] < 1e-8


def test_composite_column_definition(example_art30):
    result = run(
        np.ones(5), 0.1, 1e-3, example_art30, N_sim=60, check_every=0, keep_states=True
    )
    system = ClosedLoop(example_art30, N_sim=60)
    last = SimState(t=result.times[-1], z=result.states[-1, :60], zhat=result.states[-1, 60:])
    wn = system.w(last)
    h1 = math.sqrt(float(np.add.reduce(system.h1_weights * wn**2)))
    head = float(np.add.reduce(np.abs(last.zhat[:3])))
    assert result.column("composite")[-1] == pytest.approx(h1 + head, rel=1e-12)
    assert result.column("h1_proxy")[-1] == pytest.approx(h1, rel=1e-12)


def test_certificate_energy_decays_on_certified_design(mild_art30):
    P = solve_lyapunov(mild_art30.closed_loop, mild_art30.delta)
    h = 1e-3
    result = run(
        np.ones(8), 3.0, h, mild_art30, N_sim=200, check_every=200, keep_states=True
    )
    system = ClosedLoop(mild_art30, N_sim=200)
    decay = math.exp(-2.0 * mild_art30.delta * h)
    values = np.empty(len(result.times))
    for i in range(len(result.times)):
        s = SimState(t=result.times[i], z=result.states[i, :200], zhat=result.states[i, 200:])
        values[i] = system.certificate_energy(s, P)
    ratios = values[1:] / (values[:-1] * decay)
    assert np.max(ratios) < 1.0 + 1e-3


def test_advance_gives_up_on_non_finite(example_art30):
    system = ClosedLoop(example_art30, N_sim=60)
    with np.errstate(invalid="ignore"), pytest.raises(SimulationError):
        system._advance(np.full(90, np.inf), 1e-3, 0)


def test_step_rejects_nonpositive_h(example_art30):
    system = ClosedLoop(example_art30, N_sim=60)
    with pytest.raises(ValueError):
        system.step(init_state([1.0], 60, 30), 0.0)


def test_n_sim_bounds(example_art30):
    with pytest.raises(ValueError):
        ClosedLoop(example_art30, N_sim=20)
    with pytest.raises(ValueError):
        ClosedLoop(example_art30, N_sim=10_000)


def test_estimate_decay_rate_cases():
    t = np.linspace(0.0, 10.0, 1001)
    assert estimate_decay_rate(t, np.exp(-2.0 * t), 2.0) == pytest.approx(-2.0, abs=1e-9)
    wobble = np.exp(-2.0 * t) * (2.0 + np.cos(5.0 * t))
    assert -2.2 < estimate_decay_rate(t, wobble, 2.0) < -1.8
    assert estimate_decay_rate(t, np.full_like(t, 3.0), 2.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        estimate_decay_rate(t[:5], np.exp(-t[:5]), 0.0)


@settings(max_examples=25, deadline=None)
@given(rate=st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
def test_estimate_decay_rate_recovers_pure_exponentials(rate):
    t = np.linspace(0.0, 10.0, 501)
    got = estimate_decay_rate(t, np.exp(rate * t), 2.0)
    assert got == pytest.approx(rate, abs=1e-6)


def test_csv_round_trip(tmp_path, example_art30):
    result = run(np.ones(5), 0.05, 1e-3, example_art30, N_sim=60, check_every=0)
    path = tmp_path / "series.csv"
    write_csv(result, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(CSV_COLUMNS)
    assert len(rows) == len(result.times) + 1
    for j, name in enumerate(CSV_COLUMNS):
        col = result.column(name)
        for i, row in enumerate(rows[1:]):
            assert float(row[j]) == col[i]
