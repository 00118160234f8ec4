import math

import numpy as np
import pytest

from impheat.analysis import (
    check_frequency_inequality,
    check_gaussian_monotonicity,
    check_log_convexity,
    fit_localized,
    fit_observability,
    gaussian_refinement_study,
    localized_parts,
    log_norm,
    smooth_field,
)
from impheat.errors import ContractViolation, DegenerateRegionError
from impheat.mesh import DomainSpec, Region
from impheat.operators import WeightFunction
from impheat.spectral import random_state

OMEGA = Region.interval(0.3, 0.7)


@pytest.fixture(scope="module")
def fit50(line200):
    op, basis = line200
    return fit_observability(op, basis, OMEGA, 0.5, samples=50, seed=3)


def test_fit_is_self_consistent(fit50):
    assert fit50.violations() == []
    assert fit50.beta_star in set(np.round(fit50.beta_grid, 12))
    bound = fit50.bound()
    assert np.all(fit50.lhs <= bound * (1 + 1e-12))
    assert fit50.contraction_ok


def test_fit_constant_is_tight(fit50):
    # at β* the worst sample sits exactly on the bound
    ratio = fit50.lhs / fit50.bound()
    assert ratio.max() == pytest.approx(1.0, rel=1e-10)


def test_fit_reproducible(line200, fit50):
    op, basis = line200
    again = fit_observability(op, basis, OMEGA, 0.5, samples=50, seed=3)
    assert again.c_star == fit50.c_star and np.array_equal(again.lhs, fit50.lhs)


def test_localized_parts_cover_domain(line200, rng):
    op, basis = line200
    u = random_state(basis, rng)
    a, b = localized_parts(op, Region.ball([0.5], 2.0), u)
    assert math.hypot(a, b) == pytest.approx(op.norm(u), rel=1e-13)
    inner_a, inner_b = localized_parts(op, Region.ball([0.5], 0.2), u)
    assert inner_b == 0.0 and inner_a < a


def test_localized_reduces_to_global(line200, fit50):
    op, basis = line200
    loc = fit_localized(op, basis, OMEGA, Region.ball([0.5], 2.0), 0.5, samples=50, seed=3, combine="l2")
    assert np.allclose(loc.lhs, fit50.lhs, rtol=1e-13)
    assert loc.c_star == pytest.approx(fit50.c_star, rel=1e-12, abs=1e-14)
    assert loc.beta_star == fit50.beta_star


def test_localized_fit_consistent(line200):
    op, basis = line200
    loc = fit_localized(op, basis, Region.ball([0.5], 0.05), Region.ball([0.5], 0.2), 0.5, samples=30, seed=1)
    assert loc.violations() == []


def test_localized_ball_missing_mesh(line200):
    op, basis = line200
    with pytest.raises(DegenerateRegionError):
        fit_localized(op, basis, OMEGA, Region.ball([5.0], 0.1), 0.5, samples=10)


def test_log_norm_matches_direct(line200, rng):
    op, basis = line200
    from impheat.evolution import propagate

    u = random_state(basis, rng)
    c = basis.coefficients(u)
    for t in (0.0, 0.01, 0.3):
        assert log_norm(basis, c, t) == pytest.approx(math.log(op.norm(propagate(basis, u, t))), abs=1e-12)


def test_single_mode_convexity_is_tight(line200):
    _, basis = line200
    slacks = check_log_convexity(basis, basis.mode(4), [(0.01, 0.05, 0.2), (0.1, 0.15, 0.3)])
    assert all(abs(s.slack) <= 1e-12 for s in slacks)


def test_two_mode_convexity_strict(line200):
    _, basis = line200
    u = basis.mode(1) + basis.mode(6)
    slacks = check_log_convexity(basis, u, [(0.01, 0.05, 0.2), (0.02, 0.1, 0.3)])
    assert all(s.slack < -1e-6 for s in slacks)


def test_random_convexity(line200, rng):
    _, basis = line200
    for _ in range(200):
        u = random_state(basis, rng)
        t = np.sort(rng.uniform(1e-3, 1.0, 3))
        assert check_log_convexity(basis, u, [tuple(t)])[0].slack <= 1e-10


def test_degenerate_triples(line200):
    _, basis = line200
    u = basis.mode(1) + basis.mode(3)
    s = check_log_convexity(basis, u, [(0.1, 0.1, 0.2), (0.1, 0.2, 0.2)])
    assert s[0].theta == 0.0 and s[0].slack == 0.0
    assert s[1].theta == 1.0 and s[1].slack == 0.0
    with pytest.raises(ContractViolation):
        check_log_convexity(basis, u, [(0.2, 0.2, 0.2)])
    with pytest.raises(ContractViolation):
        check_log_convexity(basis, u, [(0.0, 0.1, 0.2)])
    with pytest.raises(ContractViolation):
        check_log_convexity(basis, np.zeros(len(u)), [(0.1, 0.15, 0.2)])


def test_gaussian_monotone_on_fine_mesh(line400, rng):
    op, basis = line400
    w = WeightFunction.gaussian([0.5], 0.1, 0.5)
    for _ in range(3):
        u0 = random_state(basis, rng)
        rep = check_gaussian_monotonicity(op, basis, u0, w, np.linspace(0, 0.5, 20))
        assert rep.ok and rep.violations == []


def test_gaussian_sample_times_checked(line40):
    op, basis = line40
    w = WeightFunction.gaussian([0.5], 0.1, 0.5)
    with pytest.raises(ContractViolation):
        check_gaussian_monotonicity(op, basis, op.ones(), w, [0.0, 0.6])


def test_gaussian_refinement_study():
    w = WeightFunction.gaussian([0.5], 0.1, 0.5)
    f = smooth_field(np.random.default_rng(4), 1)
    out = gaussian_refinement_study(lambda r: DomainSpec.interval(1.0, r), [50, 100], f, w, np.linspace(0, 0.5, 20))
    assert [r for r, _ in out] == [50, 100]
    assert all(len(rep.values) == 20 for _, rep in out)


def test_frequency_eigenmode_exact(line200):
    op, basis = line200
    for i in (1, 2, 5):
        rep = check_frequency_inequality(op, basis, basis.mode(i), np.linspace(0, 0.2, 11))
        assert np.allclose(rep.quotients, basis.eigenvalues[i - 1], atol=1e-12 * max(1, basis.eigenvalues[i - 1]))
        # uᵀKu carries rounding of order eps·‖K‖, i.e. eps·λ_max
        assert rep.max_exact_residual <= 1e-14 * basis.lambda_max
        assert rep.monotone_violations == []


def test_frequency_fd_second_order(line200):
    op, basis = line200
    u = basis.mode(1) + basis.mode(3) + 0.5 * basis.mode(6)
    r1 = check_frequency_inequality(op, basis, u, np.linspace(0.05, 0.25, 11))
    r2 = check_frequency_inequality(op, basis, u, np.linspace(0.05, 0.25, 21))
    assert r1.monotone_violations == [] and r1.max_exact_residual <= 1e-14 * basis.lambda_max
    assert 3.5 <= r1.max_fd_residual / r2.max_fd_residual <= 4.5
