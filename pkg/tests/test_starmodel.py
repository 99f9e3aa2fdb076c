"""One-parameter ascent model and general star exponential families.

Independent references used here:

* Gauss-Legendre quadrature of the model density g recomputes the pair
  density as 2 * integral of g * G and the entropy as -integral of g log g;
  both must match the closed forms to near machine precision because g is
  analytic on the square.
* The ascent generating polynomial of S_n factors as prod_j (1 + z + ... +
  z^j), so an exact integer convolution reproduces the log-space table;
  its total is n! and the coefficient list is palindromic.
* At zero exponents every star family reduces to the uniform law, where
  the density of a (r, s) star pattern is known by pure combinatorics:
  the integral of x^(r+s) u^r (1-u)^s / (r! s!) is 1/((r+s+1) (r+s+1)!),
  and multiplying by (r+s+1)! gives 1/(r+s+1) choose weights, e.g. 1/2 and
  1/3 for the ascent pair and the two-star-max triple.
"""

import math

import numpy as np
import pytest

from permutons import (
    ConvergenceError,
    StarModel,
    free_energy,
    grad_free_energy,
    hessian_free_energy,
    mahonian_log_gf,
    region_star23_boundary,
    solve_star,
    star12_cdf,
    star12_density,
    star12_entropy,
    star12_grid,
    star12_r_from_rho,
    star12_rho,
    star_densities,
    uniform_grid,
)

STAR23 = ((1, 0), (2, 0))


def gl_nodes(n=96):
    xg, wg = np.polynomial.legendre.leggauss(n)
    return 0.5 * (xg + 1.0), 0.5 * wg


def test_zero_parameter_values_are_exact():
    assert star12_rho(0.0) == 0.5
    assert star12_entropy(0.0) == 0.0


def test_rho_symmetry_and_entropy_evenness():
    for r in (0.5, 2.0, 6.0):
        assert abs(star12_rho(r) + star12_rho(-r) - 1.0) <= 1e-9
        assert abs(star12_entropy(r) - star12_entropy(-r)) <= 1e-9


def test_rho_strictly_decreasing():
    rs = np.linspace(-8.0, 8.0, 81)
    vals = np.array([star12_rho(r) for r in rs])
    assert np.all(np.diff(vals) < 0.0)
    assert np.all((vals > 0.0) & (vals < 1.0))


def test_series_branch_joins_closed_form():
    # the evaluation switches expansions near zero; the closed form loses
    # ~eps/r^2 = 1e-10 digits to cancellation there, which bounds the seam
    for seam in (1e-3, -1e-3):
        lo, hi = seam * (1 - 1e-9), seam * (1 + 1e-9)
        assert abs(star12_rho(lo) - star12_rho(hi)) <= 2e-9
        assert abs(star12_entropy(lo) - star12_entropy(hi)) <= 2e-9


def test_r_from_rho_round_trip():
    for r in (-6.0, -2.0, -0.3, 1e-4, 0.0, 0.7, 3.0, 6.0):
        assert star12_r_from_rho(star12_rho(r)) == pytest.approx(r, abs=1e-9)
    for rho in (1e-3, 0.25, 0.5, 0.999):
        assert star12_rho(star12_r_from_rho(rho)) == pytest.approx(
            rho, abs=1e-12)
    for bad in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(ValueError):
            star12_r_from_rho(bad)


def test_density_quadrature_recovers_rho_and_entropy():
    x, wq = gl_nodes()
    X, Y = np.meshgrid(x, x, indexing="ij")
    W2 = np.outer(wq, wq)
    for r in (-4.0, -1.0, 1.0, 4.0):
        g = star12_density(r, X, Y)
        G = star12_cdf(r, X, Y)
        assert np.all(g > 0.0)
        assert np.sum(W2 * g) == pytest.approx(1.0, abs=1e-12)
        assert 2.0 * np.sum(W2 * g * G) == pytest.approx(
            star12_rho(r), abs=1e-12)
        assert -np.sum(W2 * g * np.log(g)) == pytest.approx(
            star12_entropy(r), abs=1e-12)


def test_cdf_marginals_and_zero_limit():
    x = np.linspace(0.0, 1.0, 17)
    for r in (-3.0, 0.7):
        assert np.abs(star12_cdf(r, x, np.ones_like(x)) - x).max() <= 1e-12
        assert np.abs(star12_cdf(r, np.ones_like(x), x) - x).max() <= 1e-12
        assert star12_cdf(r, 0.0, 0.5) == 0.0
    X, Y = np.meshgrid(x, x, indexing="ij")
    assert np.array_equal(star12_cdf(0.0, X, Y), X * Y)


def test_grid_cells_are_cdf_increments():
    r, m = -2.5, 8
    g = star12_grid(r, m)
    edges = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(edges, edges, indexing="ij")
    F = star12_cdf(r, X, Y)
    ref = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
    assert np.abs(g.w - ref).max() <= 1e-13


def test_grid_zero_parameter_is_uniform():
    g = star12_grid(0.0, 12)
    assert np.array_equal(g.w, uniform_grid(12).w)


def test_grid_pair_density_tracks_closed_form():
    from permutons import PatternSpec, density_grid_exact
    tau = PatternSpec.parse("12")
    for r, m in ((-3.0, 16), (-3.0, 64), (1.5, 32)):
        gap = abs(density_grid_exact(star12_grid(r, m), tau) - star12_rho(r))
        assert gap <= 1.0 / m


def test_mahonian_small_table():
    lgf = mahonian_log_gf(3)
    assert np.allclose(np.exp(lgf), [1.0, 2.0, 2.0, 1.0], rtol=1e-14)


def test_mahonian_matches_integer_convolution():
    for n in (2, 5, 10, 25):
        coeffs = [1]
        for j in range(1, n):
            # multiply by 1 + z + ... + z^j exactly
            out = [0] * (len(coeffs) + j)
            for i, c in enumerate(coeffs):
                for d in range(j + 1):
                    out[i + d] += c
            coeffs = out
        lgf = mahonian_log_gf(n)
        assert lgf.size == len(coeffs) == n * (n - 1) // 2 + 1
        ref = np.log(np.array(coeffs, dtype=float))
        assert np.abs(lgf - ref).max() <= 1e-11 * max(1.0, np.abs(ref).max())


def test_mahonian_total_and_palindrome():
    for n in (4, 40, 200):
        lgf = mahonian_log_gf(n)
        from scipy.special import logsumexp
        assert logsumexp(lgf) == pytest.approx(math.lgamma(n + 1), abs=1e-10)
        assert np.abs(lgf - lgf[::-1]).max() <= 1e-10


def test_free_energy_zero_and_uniform_gradient():
    model = StarModel(((1, 0, 0.0), (2, 0, 0.0)))
    assert free_energy(model) == pytest.approx(0.0, abs=1e-14)
    grad = grad_free_energy(model)
    assert grad[0] == pytest.approx(1.0 / (2 * math.factorial(2)), abs=1e-12)
    assert grad[1] == pytest.approx(1.0 / (3 * math.factorial(3)), abs=1e-12)
    dens = star_densities(model)
    assert dens[0] == pytest.approx(0.5, abs=1e-12)
    assert dens[1] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_free_energy_matches_one_parameter_model():
    # a single (1, 0) term is the ascent model; a positive weight favors
    # the pattern, while the closed-form rate measures the opposite tilt,
    # so the two parameters are negatives of each other
    for a in (-3.0, 1.2):
        model = StarModel(((1, 0, a),))
        rho = float(star_densities(model)[0])
        assert rho == pytest.approx(star12_rho(-a), abs=1e-10)
        F = free_energy(model)
        H = F - a * float(grad_free_energy(model)[0])
        assert H == pytest.approx(star12_entropy(a), abs=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(77)
    for _ in range(4):
        alpha = rng.uniform(-4.0, 4.0, size=2)
        grad = grad_free_energy(StarModel(((1, 0, alpha[0]),
                                           (2, 0, alpha[1]))))
        eps = 1e-6
        for i in range(2):
            a_hi, a_lo = alpha.copy(), alpha.copy()
            a_hi[i] += eps
            a_lo[i] -= eps
            fd = (free_energy(StarModel(((1, 0, a_hi[0]), (2, 0, a_hi[1]))))
                  - free_energy(StarModel(((1, 0, a_lo[0]),
                                           (2, 0, a_lo[1]))))) / (2 * eps)
            assert grad[i] == pytest.approx(fd, abs=1e-6)


def test_hessian_positive_definite():
    rng = np.random.default_rng(83)
    for _ in range(20):
        alpha = rng.uniform(-6.0, 6.0, size=2)
        hess = hessian_free_energy(StarModel(((1, 0, alpha[0]),
                                              (2, 0, alpha[1]))))
        assert np.abs(hess - hess.T).max() <= 1e-12
        assert np.linalg.eigvalsh(hess).min() > 0.0


def test_solver_at_uniform_targets():
    sol = solve_star(STAR23, (0.5, 1.0 / 3.0))
    assert np.abs(sol.alpha).max() <= 1e-8
    assert abs(sol.entropy) <= 1e-8
    assert np.abs(sol.densities - (0.5, 1.0 / 3.0)).max() <= 1e-10


def test_solver_interior_target():
    sol = solve_star(STAR23, (0.5, 0.53))
    assert np.abs(sol.densities - (0.5, 0.53)).max() <= 1e-10
    assert sol.alpha[0] == pytest.approx(-21.825635947717203, abs=1e-6)
    assert sol.alpha[1] == pytest.approx(57.832559905281009, abs=1e-6)
    assert sol.entropy == pytest.approx(-0.85295297934253811, abs=1e-9)
    assert sol.free_energy == pytest.approx(-1.2008191746626247, abs=1e-9)
    assert sol.entropy == pytest.approx(
        sol.free_energy - float(np.dot(sol.alpha, grad_free_energy(
            StarModel(tuple((r, s, a) for (r, s), a
                            in zip(STAR23, sol.alpha)))))), abs=1e-9)
    assert np.linalg.eigvalsh(sol.hessian).min() > 0.0


def test_solver_single_constraint_matches_closed_form():
    rho = 0.3
    sol = solve_star(((1, 0),), (rho,))
    assert sol.alpha[0] == pytest.approx(-star12_r_from_rho(rho), abs=1e-8)
    assert sol.entropy == pytest.approx(
        star12_entropy(star12_r_from_rho(rho)), abs=1e-10)


def test_solver_reports_divergence_outside_region():
    with pytest.raises(ConvergenceError) as err:
        solve_star(STAR23, (0.5, 0.2), max_iter=60)
    assert err.value.residual > 0.0
    assert np.asarray(err.value.alpha).shape == (2,)


def test_solver_input_validation():
    with pytest.raises(ValueError):
        solve_star(STAR23, (0.5,))
    with pytest.raises(ValueError):
        solve_star(((0, 0),), (0.5,))
    with pytest.raises(ValueError):
        solve_star(STAR23, (1.2, 0.3))


def test_star23_boundary_curves():
    t = np.array([0.0, 0.5, 1.0])
    lower, upper = region_star23_boundary(t)
    assert lower.label == "star23-lower" and upper.label == "star23-upper"
    assert np.array_equal(lower.points[0], (0.0, 0.0))
    assert np.array_equal(lower.points[-1], (1.0, 1.0))
    # midpoint values of the parametrizations
    assert np.abs(lower.points[1] - (0.75, 0.5)).max() <= 1e-15
    assert np.abs(upper.points[1] - (0.75, 0.875)).max() <= 1e-15
    # both curves trace from one corner of the region to the other
    assert {tuple(upper.points[0]), tuple(upper.points[-1])} == {
        (0.0, 0.0), (1.0, 1.0)}


def test_boundary_brackets_solver_feasibility():
    # halfway targets between the curves solve; targets below the lower
    # curve diverge
    t = np.linspace(0.0, 1.0, 257)
    lower, _ = region_star23_boundary(t)
    x = 0.5
    y_low = np.interp(x, lower.points[:, 0], lower.points[:, 1])
    inside = solve_star(STAR23, (x, y_low + 0.05))
    assert np.abs(inside.densities - (x, y_low + 0.05)).max() <= 1e-9
    with pytest.raises(ConvergenceError):
        solve_star(STAR23, (x, max(y_low - 0.05, 1e-3)), max_iter=60)
