"""Eigenbasis, quadrature, projection, and actuator-matrix tests.

Analytic benchmarks:
- Dirichlet, L=1: lambda_n = (n pi)^2, phi_n = sqrt(2) sin(n pi x)
- Neumann, L=1: lambda_1 = 0 with phi_1 = 1; lambda_n = ((n-1) pi)^2
- mixed Dirichlet/Neumann, L=1: lambda_n = ((n - 1/2) pi)^2
- Dirichlet at 0 + Robin (phi + phi' = 0) at 1: sqrt(lambda_1) solves
  tan s = -s, s_1 = 2.02875783811043...
- parabola projection: <x(1-x), sqrt(2) sin(n pi x)> = 2 sqrt(2) (1-(-1)^n)/(n pi)^3
- indicator shapes: <chi_[(j-1)/5, j/5), phi_n> = sqrt(2)(cos(n pi (j-1)/5)
  - cos(n pi j/5))/(n pi)
"""

import numpy as np
import pytest

from parastab.errors import ActuatorSingularError, PlantSpecError
from parastab.model import ShapeFunctionSet
from parastab.spectral import (BoundaryConditions, DIRICHLET, NEUMANN,
                               ModalState, actuator_matrix, eigenpairs,
                               make_grid, project, reconstruct,
                               shape_projections)


@pytest.fixture(scope="module")
def dirichlet_basis():
    return eigenpairs(DIRICHLET, 1.0, 64)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1.0, 64, breakpoints=tuple(j / 5 for j in range(6)))


class TestBoundaryConditions:
    def test_rejects_zero_condition(self):
        with pytest.raises(PlantSpecError):
            BoundaryConditions(0.0, 0.0, 1.0, 0.0)

    def test_flags(self):
        assert DIRICHLET.is_dirichlet and not DIRICHLET.is_neumann
        assert NEUMANN.is_neumann and not NEUMANN.is_dirichlet


class TestGrid:
    def test_weights_sum_to_length(self):
        g = make_grid(2.5, 40)
        assert abs(g.weights.sum() - 2.5) < 1e-12

    def test_resolves_highest_mode(self):
        g = make_grid(1.0, 48)
        # at least 8 quadrature points per half-wave of mode 48
        assert len(g.points) >= 8 * 48

    def test_breakpoints_become_panel_edges(self):
        g = make_grid(1.0, 10, breakpoints=(0.3141,))
        # no quadrature point may straddle the breakpoint inside one panel:
        # panel edges are discontinuities of indicator integrands
        left = g.points[g.points < 0.3141]
        right = g.points[g.points >= 0.3141]
        assert len(left) % 8 == 0 and len(right) % 8 == 0


class TestEigenpairsClosedForm:
    def test_dirichlet_eigenvalues(self, dirichlet_basis):
        assert dirichlet_basis.lambdas[0] == pytest.approx(np.pi ** 2, abs=1e-12)
        assert dirichlet_basis.lambdas[1] == pytest.approx(4 * np.pi ** 2, abs=1e-12)

    def test_neumann_first_mode_constant(self):
        basis = eigenpairs(NEUMANN, 1.0, 8)
        assert basis.lambdas[0] == 0.0
        x = np.linspace(0, 1, 11)
        assert np.allclose(basis.phi(1, x), 1.0, atol=1e-12)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            eigenpairs(DIRICHLET, 1.0, 0)
        with pytest.raises(PlantSpecError):
            eigenpairs(DIRICHLET, -1.0, 4)


class TestEigenpairsNumeric:
    def test_mixed_dirichlet_neumann(self):
        bc = BoundaryConditions(1.0, 0.0, 0.0, 1.0)
        basis = eigenpairs(bc, 1.0, 12)
        expected = ((np.arange(1, 13) - 0.5) * np.pi) ** 2
        assert np.allclose(basis.lambdas, expected, rtol=1e-10)

    def test_dirichlet_robin_first_root(self):
        bc = BoundaryConditions(1.0, 0.0, 1.0, 1.0)
        basis = eigenpairs(bc, 1.0, 6)
        s1 = 2.02875783811043
        assert basis.lambdas[0] == pytest.approx(s1 ** 2, rel=1e-9)

    def test_numeric_orthonormality(self):
        bc = BoundaryConditions(1.0, 0.5, 1.0, 1.0)
        basis = eigenpairs(bc, 1.0, 12)
        g = make_grid(1.0, 24)
        table = basis.sample(g.points, 12)
        gram = table.T @ (g.weights[:, None] * table)
        assert np.abs(gram - np.eye(12)).max() < 1e-8

    def test_eigen_residual_by_finite_differences(self):
        # Richardson-extrapolated central second derivative; residual of the
        # defining equation phi'' + lambda phi = 0 at interior points
        bc = BoundaryConditions(1.0, 0.0, 1.0, 1.0)
        basis = eigenpairs(bc, 1.0, 8)
        x = np.linspace(0.1, 0.9, 41)
        for n in range(1, 9):
            lam = basis.lambdas[n - 1]
            h = 5e-4

            def d2(step):
                return (basis.phi(n, x + step) - 2 * basis.phi(n, x)
                        + basis.phi(n, x - step)) / step ** 2

            second = (4.0 * d2(h / 2) - d2(h)) / 3.0
            resid = np.abs(second + lam * basis.phi(n, x)).max()
            assert resid < 1e-6, f"mode {n}: residual {resid:.2e}"

    def test_negative_eigenvalue_branch(self):
        # strongly sign-flipped Robin data admits a negative eigenvalue:
        # phi' = 5 phi at both ends keeps an exponential profile
        bc = BoundaryConditions(5.0, -1.0, 5.0, -1.0)
        basis = eigenpairs(bc, 1.0, 4)
        assert basis.lambdas[0] < 0
        g = make_grid(1.0, 8)
        v = basis.phi(1, g.points)
        assert abs(g.integrate(v * v) - 1.0) < 1e-8


class TestOrthonormality:
    def test_dirichlet_gram_matrix(self, dirichlet_basis, grid):
        table = dirichlet_basis.sample(grid.points, 40)
        gram = table.T @ (grid.weights[:, None] * table)
        assert np.abs(gram - np.eye(40)).max() <= 1e-8


class TestProjection:
    def test_single_mode_projects_to_unit_coefficient(self, dirichlet_basis, grid):
        field = lambda x: np.column_stack(
            [dirichlet_basis.phi(3, x), np.zeros_like(x), np.zeros_like(x)])
        state = project(field, dirichlet_basis, grid, 10)
        expected = np.zeros((10, 3))
        expected[2, 0] = 1.0
        assert np.abs(state.coeffs - expected).max() < 1e-8

    def test_parabola_closed_form(self, dirichlet_basis, grid):
        field = lambda x: np.column_stack(
            [x * (1 - x), np.zeros_like(x), np.zeros_like(x)])
        state = project(field, dirichlet_basis, grid, 12)
        n = np.arange(1, 13)
        expected = 2 * np.sqrt(2) * (1 - (-1.0) ** n) / (n * np.pi) ** 3
        assert np.abs(state.coeffs[:, 0] - expected).max() < 1e-10
        assert np.abs(state.coeffs[:, 1:]).max() < 1e-14

    def test_zero_field(self, dirichlet_basis, grid):
        state = project(lambda x: np.zeros((len(x), 3)), dirichlet_basis, grid, 8)
        assert np.all(state.coeffs == 0)

    def test_round_trip_finite_expansion(self, dirichlet_basis, grid):
        c = np.zeros((6, 3))
        c[1, 0] = 1.0   # phi_2 in component 1
        c[4, 1] = 1.0   # phi_5 in component 2
        state = ModalState(c)
        samples = reconstruct(state, dirichlet_basis, grid)
        back = project(samples, dirichlet_basis, grid, 6)
        assert np.abs(back.coeffs - c).max() < 1e-8

    def test_single_tail_coefficient_reconstructs_mode(self, dirichlet_basis, grid):
        c = np.zeros((3, 3))
        c[0, 1] = 1.0
        samples = reconstruct(ModalState(c), dirichlet_basis, grid)
        assert np.allclose(samples[:, 1], dirichlet_basis.phi(1, grid.points))
        assert np.abs(samples[:, [0, 2]]).max() == 0.0

    def test_parseval_defect_smooth_field(self, dirichlet_basis, grid):
        # oracle: field L2 norm by direct quadrature, refined grid
        rng = np.random.default_rng(7)
        a = rng.standard_normal(5)

        def field(x):
            smooth = sum(a[k] * np.sin((k + 1) * np.pi * x) * np.exp(-x) for k in range(5))
            return np.column_stack([smooth, 0.5 * smooth, np.zeros_like(x)])

        fine = make_grid(1.0, 128)
        vals = field(fine.points)
        norm_sq = float(fine.integrate((vals ** 2).sum(axis=1)))
        defects = []
        for M in (20, 40, 60):
            state = project(field, dirichlet_basis, grid, M)
            defects.append(abs(norm_sq - (state.coeffs ** 2).sum()))
        assert defects[-1] <= 1e-6
        assert defects[0] >= defects[1] >= defects[2]

    def test_too_many_modes_rejected(self, dirichlet_basis, grid):
        with pytest.raises(ValueError):
            project(lambda x: np.zeros((len(x), 3)), dirichlet_basis, grid, 65)


class TestActuatorMatrix:
    def test_indicator_entry_closed_form(self, dirichlet_basis, grid):
        shapes = ShapeFunctionSet.indicator_partition(5, 1.0)
        act = actuator_matrix(shapes, dirichlet_basis, grid)
        b11 = np.sqrt(2) * (1 - np.cos(np.pi / 5)) / np.pi
        assert act.B_NN[0, 0] == pytest.approx(b11, abs=1e-12)
        assert b11 == pytest.approx(0.08598, abs=1e-5)

    def test_indicator_matches_quadrature(self, dirichlet_basis, grid):
        # closed form against the quadrature path (custom kind, same shapes)
        shapes = ShapeFunctionSet.indicator_partition(5, 1.0)
        quad_shapes = ShapeFunctionSet(5, shapes.evaluators, "custom",
                                       shapes.breakpoints, 1.0)
        closed = shape_projections(shapes, dirichlet_basis, grid, 12)
        quad = shape_projections(quad_shapes, dirichlet_basis, grid, 12)
        assert np.abs(closed - quad).max() < 1e-12

    def test_reference_shapes_invertible(self, dirichlet_basis, grid):
        shapes = ShapeFunctionSet.indicator_partition(5, 1.0)
        act = actuator_matrix(shapes, dirichlet_basis, grid)
        assert act.cond < 10
        assert np.abs(act.B_NN @ act.inverse - np.eye(5)).max() < 1e-8
        assert act.tail_mass >= -1e-10

    def test_eigenfunction_shapes_are_identity(self, dirichlet_basis, grid):
        shapes = ShapeFunctionSet.eigenfunctions(5, dirichlet_basis)
        act = actuator_matrix(shapes, dirichlet_basis, grid)
        assert np.abs(act.B_NN - np.eye(5)).max() < 1e-8
        assert abs(act.tail_mass) < 1e-8

    def test_singular_shapes_rejected(self, dirichlet_basis, grid):
        same = lambda x: np.sin(np.pi * np.asarray(x))
        shapes = ShapeFunctionSet(2, (same, same), "custom", (), 1.0)
        with pytest.raises(ActuatorSingularError):
            actuator_matrix(shapes, dirichlet_basis, grid)
