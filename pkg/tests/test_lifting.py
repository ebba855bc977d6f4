import numpy as np
import pytest

from parstab.lifting import (
    AdmissibilityError,
    LiftingContext,
    boundary_inner,
    build_projection_table,
    check_gamma_admissible,
    default_tail,
    gram_matrix,
    head_denominator,
    lambda_gamma,
    lifted_projection,
    residual_norm_sq,
    tail_cap,
)
from parstab.spectral_basis import (
    PlantConfig,
    Quadrature,
    enumerate_eigenpairs,
    gauss_panels,
)


def test_head_denominator_shifts_second_mode_only():
    assert head_denominator(10.0, -3.5, 1, 0.25) == pytest.approx(13.5)
    assert head_denominator(10.0, -0.5, 2, 0.25) == pytest.approx(10.25)
    assert head_denominator(10.0, -0.5, 3, 0.25) == pytest.approx(10.5)


def test_lambda_gamma_values():
    single = lambda_gamma(1.0, 0.0, (0.0,))
    assert single.shape == (1, 1)
    assert single[0, 0] == pytest.approx(1.0)

    lifted = lambda_gamma(10.0, 0.25, (-3.5, -0.5, -0.5))
    assert np.allclose(lifted, np.diag([1 / 13.5, 1 / 10.25, 1 / 10.5]))


def test_lambda_gamma_rejects_eigenvalue_hit():
    with pytest.raises(AdmissibilityError, match="1"):
        lambda_gamma(-3.5, 0.0, (-3.5, -0.5, -0.5))


def test_projection_table_head_and_tail_signs():
    # plain Laplacian on (0, pi): lam_1 = 1
    plant = PlantConfig(dim=1)
    eigs = enumerate_eigenpairs(plant, 3)
    head = build_projection_table(2.0, 0.0, eigs, n0=1)
    assert lifted_projection(head, 1.0, 1) == pytest.approx(-1.0)
    tail = build_projection_table(2.0, 0.0, eigs, n0=0)
    assert lifted_projection(tail, 1.0, 1) == pytest.approx(-1.0 / 3.0)


def test_projection_table_marks_collisions():
    plant = PlantConfig(dim=1)
    eigs = enumerate_eigenpairs(plant, 3)
    table = build_projection_table(-1.0, 0.0, eigs, n0=0)  # gamma + lam_1 = 0
    with pytest.raises(AdmissibilityError):
        lifted_projection(table, 1.0, 1)
    assert lifted_projection(table, 1.0, 2) == pytest.approx(-1.0 / 3.0)
    with pytest.raises(IndexError):
        lifted_projection(table, 1.0, 4)


def test_check_gamma_admissible(example_ctx):
    lams = example_ctx.lams
    check_gamma_admissible(10.0, 1.0, lams, 3, 100)
    with pytest.raises(AdmissibilityError):
        check_gamma_admissible(-lams[50], 1.0, lams, 3, 100)


def test_boundary_inner_values():
    x, w = gauss_panels(np.pi, 16)
    quad = Quadrature(points=x[:, None], weights=w)
    s = x
    assert boundary_inner(quad, np.zeros_like(s), np.sin(s)) == 0.0
    assert boundary_inner(quad, np.sin(s), np.sin(s)) == pytest.approx(
        np.pi / 2, abs=1e-12
    )
    # int_0^pi e^{6x} sin x sin 2x dx by antiderivative
    closed = -24.0 * (np.exp(6 * np.pi) + 1.0) / 1665.0
    got = boundary_inner(quad, np.exp(3 * s) * np.sin(s), np.exp(3 * s) * np.sin(2 * s))
    assert got == pytest.approx(closed, rel=1e-10)


def test_boundary_inner_grid_mismatch():
    x, w = gauss_panels(np.pi, 4)
    quad = Quadrature(points=x[:, None], weights=w)
    with pytest.raises(ValueError):
        boundary_inner(quad, np.sin(x), np.sin(x[:-1]))


def test_gram_matrix_line_counting_measure(d1_eigs):
    gram = gram_matrix(d1_eigs, 2)
    # single-point face, trace_k(0) = -k sqrt(2/pi) times the unit drift weight
    base = 2.0 / np.pi
    assert np.allclose(gram, base * np.array([[1.0, 2.0], [2.0, 4.0]]), rtol=1e-12)


def test_gram_matrix_symmetric_psd(example_ctx):
    gram = example_ctx.head_gram
    assert gram.shape == (3, 3)
    assert np.array_equal(gram, gram.T)
    assert np.min(np.linalg.eigvalsh(gram)) >= -1e-10


def test_context_cross_columns_extend_head_gram(example_ctx):
    assert example_ctx.cross_cols.shape == (len(example_ctx.eigs), 3)
    assert np.allclose(example_ctx.cross_cols[:3], example_ctx.head_gram)


def test_residual_norm_empty_and_monotone(example_ctx):
    assert residual_norm_sq(example_ctx, 50.0, 1, 100, 100) == 0.0
    r400 = residual_norm_sq(example_ctx, 50.0, 1, 100, 400)
    r480 = residual_norm_sq(example_ctx, 50.0, 1, 100, 480)
    assert 0.0 <= r400 <= r480


def test_residual_norm_decays_with_truncation(example_ctx):
    # tail terms fall off slowly (roughly n^-1.4 here), so doubling N only
    # roughly halves the sum; strict decrease is the guaranteed part
    r100 = residual_norm_sq(example_ctx, 50.0, 1, 100, 480)
    r200 = residual_norm_sq(example_ctx, 50.0, 1, 200, 480)
    assert r200 < r100
    assert r100 / r200 > 1.5


def test_residual_norm_argument_errors(example_ctx):
    with pytest.raises(ValueError):
        residual_norm_sq(example_ctx, 50.0, 1, 100, 99)
    with pytest.raises(ValueError):
        residual_norm_sq(example_ctx, 50.0, 1, 100, len(example_ctx.eigs) + 1)
    with pytest.raises(ValueError):
        residual_norm_sq(example_ctx, 50.0, 7, 100, 400)
    with pytest.raises(AdmissibilityError):
        residual_norm_sq(example_ctx, -example_ctx.lams[150], 1, 100, 400)


def test_tail_defaults():
    assert default_tail(30) == 400
    assert default_tail(200) == 800
    assert tail_cap(30) == 480
    assert tail_cap(200) == 3200
