import json

import numpy as np
import pytest

from parstab.certification import (
    CertificationError,
    NotYetCertifiable,
    certify,
    certify_round,
    check_psi,
    check_theta1,
    choose_tail,
    compute_S1,
    compute_S2,
    compute_Sphi,
    eta_cert_rule,
    solve_lyapunov,
)
from parstab.spectral_basis import PlantConfig, enumerate_eigenpairs

from conftest import EXAMPLE_SENSOR_1, EXAMPLE_SENSOR_2, MILD_SENSOR_1, MILD_SENSOR_2
import conftest


def test_solve_lyapunov_scalars():
    assert solve_lyapunov(np.array([[-1.0]]), 0.0)[0, 0] == pytest.approx(0.5)
    assert solve_lyapunov(np.array([[-2.0]]), 1.0)[0, 0] == pytest.approx(0.5)


def test_solve_lyapunov_rejects_shifted_unstable():
    with pytest.raises(CertificationError):
        solve_lyapunov(np.array([[-0.5]]), 1.0)


def test_solve_lyapunov_example_loop(example_art30):
    F = example_art30.closed_loop
    P = solve_lyapunov(F, 0.5)
    residual = F.T @ P + P @ F + 2 * 0.5 * P + np.eye(F.shape[0])
    assert np.max(np.abs(residual)) < 1e-8
    assert np.min(np.linalg.eigvalsh(P)) > 0
    assert np.array_equal(P, P.T)


def test_s_sums_empty_tail(example_art60):
    assert compute_S1(example_art60, 60, 60) == 0.0
    assert compute_S2(example_art60, 60, 60) == 0.0


def test_s_sums_scale_with_gamma_ladder(example_art60):
    S1 = compute_S1(example_art60, 60, 400)
    S2 = compute_S2(example_art60, 60, 400)
    assert S1 > 0 and S2 > 0
    gmin, gmax = min(example_art60.gammas), max(example_art60.gammas)
    assert gmin**2 * S2 <= S1 <= gmax**2 * S2


def test_s_sums_shrink_when_truncation_grows(example_art60):
    assert compute_S1(example_art60, 60, 400) < compute_S1(example_art60, 30, 400)
    assert compute_S2(example_art60, 60, 400) < compute_S2(example_art60, 30, 400)


def test_sphi_monotone_and_blocks_flatten(example_eigs):
    args = (example_eigs, EXAMPLE_SENSOR_1, EXAMPLE_SENSOR_2)
    assert compute_Sphi(*args, 100, 100, 11.0) == 0.0
    full = compute_Sphi(*args, 100, 400, 11.0)
    tail = compute_Sphi(*args, 200, 400, 11.0)
    assert 0 < tail < full
    # Cauchy blocks of the sensor series shrink as the window doubles
    b1 = compute_Sphi(*args, 100, 200, 11.0)
    b2 = compute_Sphi(*args, 200, 400, 11.0)
    assert b2 < b1


def test_sphi_line_bound():
    plant = PlantConfig(dim=1, nu=1.0, delta=0.5)
    eigs = enumerate_eigenpairs(plant, 200)
    got = compute_Sphi(eigs, (1.0,), (2.0,), 50, 200, 1.0)
    # |phi_n|^2 <= 2/pi per sensor
    bound = (4 / np.pi) * sum(1.0 / (n**2 + 1.0) ** 2 for n in range(51, 201))
    assert 0 < got <= bound


def test_eta_cert_rule():
    assert eta_cert_rule(0.0, 60) == 60.0
    assert eta_cert_rule(0.25, 60) == pytest.approx(2.0)


def test_check_psi_values():
    assert check_psi(10.0, 1.0, 0.5, 2, 1.0, 0.0, n0=1) == pytest.approx(-2.5)
    assert check_psi(5.0, 1.0, 0.5, 2, 1.0, 0.0, n0=1) == pytest.approx(0.0)


def test_check_psi_rejections():
    with pytest.raises(NotYetCertifiable):
        check_psi(-1.0, 1.0, 0.5, 2, 1.0, 0.0, n0=1)
    with pytest.raises(NotYetCertifiable):
        check_psi(10.0, 1.0, 0.5, 2, 100.0, 1.0, n0=1)
    with pytest.raises(ValueError):
        check_psi(10.0, 1.0, 0.5, 4, 1.0, 0.0, n0=1)


def test_theta1_border_threshold(mild_art30):
    m = mild_art30
    P = solve_lyapunov(m.closed_loop, m.delta)
    threshold = np.linalg.norm(P @ m.stacked_gain, 2) ** 2
    eps = 2 * m.n0**2
    assert check_theta1(P, m, 0.0, 0.0, eps, 1.1 * threshold) < 0
    assert check_theta1(P, m, 0.0, 0.0, eps, 0.9 * threshold) > 0
    assert check_theta1(P, m, 0.0, 0.0, eps, 0.0) >= 0


def test_theta1_dimension_guard(mild_art30):
    with pytest.raises(ValueError):
        check_theta1(np.eye(3), mild_art30, 0.0, 0.0, 2, 1.0)


def test_choose_tail_hits_cap(example_art30, mild_art30):
    assert choose_tail(example_art30, 30, 11.0) == 480
    assert choose_tail(mild_art30, 30, 1.5) == 480


def test_certify_round_mild_design(mild_art30):
    cert = certify_round(mild_art30, 1.5)
    assert cert.certified
    assert cert.status == "certified"
    assert cert.N == 30
    assert cert.N_tail == 480
    assert cert.epsilon == 2.0
    assert cert.theta1_max == pytest.approx(-0.5408, abs=5e-3)
    assert cert.psi_bound == pytest.approx(-19.5, abs=0.5)
    assert cert.eta_cert == pytest.approx(17.242, abs=5e-2)
    assert cert.S1 == pytest.approx(0.1087, abs=2e-3)
    assert cert.S2 == pytest.approx(0.0272, abs=1e-3)
    assert cert.Sphi == pytest.approx(3.36e-3, abs=1e-4)
    assert cert.P_norm == pytest.approx(1.748, abs=1e-2)
    assert cert.theta1_max <= 1e-9
    assert cert.psi_bound < 0
    assert np.min(np.linalg.eigvalsh(cert.P)) > 0


def test_certify_stops_at_first_passing_round(mild_ctx):
    cert = certify(lambda n: conftest.mild_synthesize(mild_ctx, n), 30, 120, 1.5)
    assert cert.certified
    assert cert.N == 30
    assert len(cert.rounds) == 1


def test_certify_reports_failure_with_reason(example_ctx):
    from parstab import synthesis

    def builder(n):
        return synthesis.synthesize(
            example_ctx, EXAMPLE_SENSOR_1, EXAMPLE_SENSOR_2, n, 0.5
        )

    cert = certify(builder, 30, 30, 11.0)
    assert not cert.certified
    assert cert.status.startswith("failed")
    assert "theta1" in cert.status
    assert cert.theta1_max > 0
    assert len(cert.rounds) == 1


def test_certify_argument_order(mild_ctx):
    with pytest.raises(ValueError):
        certify(lambda n: conftest.mild_synthesize(mild_ctx, n), 60, 30, 1.5)


def test_certificate_json_shape(mild_art30):
    cert = certify_round(mild_art30, 1.5)
    payload = cert.to_json_dict()
    assert set(payload) == {
        "schema_version",
        "N",
        "nu",
        "delta",
        "epsilon",
        "eta_cert",
        "S1",
        "S2",
        "Sphi",
        "theta1_max",
        "psi_bound",
        "P_norm",
        "status",
    }
    back = json.loads(json.dumps(payload))
    assert back["status"] == "certified"
    assert back["theta1_max"] == cert.theta1_max
