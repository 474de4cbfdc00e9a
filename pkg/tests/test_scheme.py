"""Backward stepper tests: fixed points, hand-checked steps, solver behavior."""

import math

import numpy as np
import pytest

from fbsde2.coeffs import compute_coefficients, unscale
from fbsde2.errors import (
    DivergedError,
    MissingExactError,
    NonConvergenceError,
    OutOfDomainError,
    SingularDenominatorError,
)
from fbsde2.grid import GridFunction, build_grid
from fbsde2.problems import ExactSolution, ProblemSpec, example1
from fbsde2.quadrature import expect_increment, gauss_hermite
from fbsde2.scheme import (
    SolverConfig,
    TimeGrid,
    coupled_step,
    decoupled_step,
    run_backward,
    solve_y,
    warm_start,
)


def constant_problem(value=5.0):
    """f = 0 with constant terminal data: Y = const, Z = Gamma = A = 0."""
    const = lambda t, x: np.full_like(np.asarray(x, dtype=float), value)
    zero = lambda t, x: np.zeros_like(np.asarray(x, dtype=float))
    return ProblemSpec(
        name="const",
        b=lambda t, x, y, z, g: np.sin(t + x),
        sigma=lambda t, x, y, z, g: 0.3 * np.cos(t + x),
        f=lambda t, x, y, z, g: 0 * x,
        g=lambda x: np.full_like(np.asarray(x, dtype=float), value),
        coupled=False, t0=0.0, x0=0.0, horizon=1.0,
        exact=ExactSolution(const, zero, zero, zero),
    )


def linear_problem():
    """b = 0, sigma = 1, f = 0, g(x) = x: Y = x, Z = 1, Gamma = A = 0."""
    ident = lambda t, x: np.asarray(x, dtype=float) + 0.0
    one = lambda t, x: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda t, x: np.zeros_like(np.asarray(x, dtype=float))
    return ProblemSpec(
        name="linear",
        b=lambda t, x, y, z, g: 0 * x,
        sigma=lambda t, x, y, z, g: 1.0 + 0 * x,
        f=lambda t, x, y, z, g: 0 * x,
        g=lambda x: np.asarray(x, dtype=float) + 0.0,
        coupled=False, t0=0.0, x0=0.0, horizon=1.0,
        exact=ExactSolution(ident, one, zero, zero),
    )


class TestSolverConfig:
    def test_validation(self):
        for bad in (dict(k=0), dict(k=9), dict(k=2, ng=1), dict(k=2, ni=0),
                    dict(k=2, epsilon0=0.0), dict(k=2, max_iters=0),
                    dict(k=2, y_solver="bisect"), dict(k=2, precision="quad")):
            with pytest.raises(ValueError):
                SolverConfig(**bad)

    def test_defaults_scale_with_precision(self):
        assert SolverConfig(k=2).tolerance == 1e-10
        assert SolverConfig(k=2, precision="extended").tolerance == 5e-16
        assert SolverConfig(k=2, epsilon0=1e-8).tolerance == 1e-8
        assert SolverConfig(k=3, ni=7).balancing_degree == 7
        assert SolverConfig(k=3, ni=7, r=9).balancing_degree == 9


class TestTimeGrid:
    def test_basic(self):
        tg = TimeGrid(0.0, 1.0, 4)
        assert tg.dt == 0.25
        assert tg.t(3) == pytest.approx(0.75)

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(0.0, 1.0, 0)
        with pytest.raises(ValueError):
            TimeGrid(1.0, 1.0, 4)


class TestWarmStart:
    def test_fills_top_levels(self):
        problem = example1()
        tg = TimeGrid(0.0, 1.0, 16)
        grid = build_grid(0.5, tg.dt, 2, 5, -3.0, 3.0)
        levels = warm_start(problem, grid, tg, 2)
        assert [lvl.n for lvl in levels] == [15, 16]
        np.testing.assert_allclose(levels[-1].y.values, problem.g(grid.points),
                                   rtol=0, atol=1e-15)
        t15 = tg.t(15)
        np.testing.assert_allclose(levels[0].z.values,
                                   problem.exact.z(t15, grid.points), rtol=0, atol=0)
        assert all(lvl.all_finite() for lvl in levels)

    def test_terminal_z_value(self):
        problem = example1(c=0.1)
        tg = TimeGrid(0.0, 1.0, 8)
        grid = build_grid(0.5, tg.dt, 1, 5, -3.0, 3.0)
        (last,) = warm_start(problem, grid, tg, 1)
        idx = grid.index_of(0.5)
        assert last.y.values[idx] == pytest.approx(math.sin(1.5), abs=1e-15)
        assert last.z.values[idx] == pytest.approx(0.1 * math.cos(1.5) ** 2, abs=1e-15)

    def test_requires_exact(self):
        problem = ProblemSpec(
            name="bare", b=lambda *a: 0.0, sigma=lambda *a: 1.0,
            f=lambda *a: 0.0, g=lambda x: x, coupled=False,
            t0=0.0, x0=0.0, horizon=1.0)
        tg = TimeGrid(0.0, 1.0, 8)
        grid = build_grid(0.0, tg.dt, 1, 3, -2.0, 2.0)
        with pytest.raises(MissingExactError):
            warm_start(problem, grid, tg, 1)


class TestSolveY:
    def test_constant_generator_one_update(self):
        cfg = SolverConfig(k=1, epsilon0=1e-13, max_iters=50)
        got = solve_y(cfg, alpha0=-4.0, rhs_known=2.0, f_of_y=lambda y: 1.5,
                      y_init=10.0)
        assert got == pytest.approx((2.0 + 1.5) / 4.0, rel=1e-14)

    def test_linear_generator_closed_form(self):
        # fixed point of -a0 y = rhs + lam*y is y = -rhs/(a0 + lam)
        cfg = SolverConfig(k=1, epsilon0=1e-14, max_iters=200)
        a0, lam, rhs = -8.0, 0.4, 3.0
        got = solve_y(cfg, a0, rhs, lambda y: lam * y, y_init=0.0)
        assert got == pytest.approx(-rhs / (a0 + lam), rel=1e-12)

    def test_newton_matches_picard(self):
        cfg_p = SolverConfig(k=1, epsilon0=1e-14, y_solver="picard")
        cfg_n = SolverConfig(k=1, epsilon0=1e-14, y_solver="newton")
        f = lambda y: 0.3 * y + math.sin(y) * 0.05
        f_dy = lambda y: 0.3 + math.cos(y) * 0.05
        got_p = solve_y(cfg_p, -6.0, 1.0, f, 0.0)
        got_n = solve_y(cfg_n, -6.0, 1.0, f, 0.0, f_dy=f_dy)
        assert got_n == pytest.approx(got_p, abs=1e-12)

    def test_newton_singular_denominator(self):
        cfg = SolverConfig(k=1, y_solver="newton")
        with pytest.raises(SingularDenominatorError):
            solve_y(cfg, -4.0, 1.0, lambda y: -(-4.0) * y, y_init=0.3,
                    f_dy=lambda y: 4.0)

    def test_newton_requires_derivative(self):
        cfg = SolverConfig(k=1, y_solver="newton")
        with pytest.raises(ValueError):
            solve_y(cfg, -4.0, 1.0, lambda y: y, y_init=0.0)

    def test_picard_non_convergence(self):
        # lam = a0 gives the period-2 map y -> -rhs/a0 - y: bounded, never converges
        cfg = SolverConfig(k=1, epsilon0=1e-14, max_iters=30)
        with pytest.raises(NonConvergenceError):
            solve_y(cfg, -4.0, 1.0, lambda y: -4.0 * y, y_init=0.7)

    def test_picard_divergence_detected(self):
        cfg = SolverConfig(k=1, epsilon0=1e-14, max_iters=500)
        with pytest.raises(DivergedError):
            solve_y(cfg, -1.0, 1.0, lambda y: 10.0 * y**2 + 5.0, y_init=3.0)


class TestDecoupledStep:
    def test_constant_fixed_point_single_step(self):
        problem = constant_problem(5.0)
        tg = TimeGrid(0.0, 1.0, 8)
        cfg = SolverConfig(k=2, ng=8, ni=4)
        grid = build_grid(0.0, tg.dt, cfg.k, cfg.balancing_degree, -6.0, 6.0)
        history = warm_start(problem, grid, tg, 2)
        state = decoupled_step(problem, cfg, grid, history, tg.t(6), tg.dt)
        assert state.n == 6
        np.testing.assert_allclose(state.y.values, 5.0, rtol=0, atol=1e-11)
        np.testing.assert_allclose(state.z.values, 0.0, atol=1e-11)
        np.testing.assert_allclose(state.gamma.values, 0.0, atol=1e-11)
        np.testing.assert_allclose(state.a.values, 0.0, atol=1e-10)

    def test_hand_computed_linear_step(self):
        # g(x) = x with unit diffusion: Z = E[(x + w) w]/dt = 1, Y = x,
        # Gamma = A = 0; matches a by-hand quadrature evaluation
        problem = linear_problem()
        tg = TimeGrid(0.0, 1.0, 8)
        cfg = SolverConfig(k=1, ng=3, ni=2)
        grid = build_grid(0.0, tg.dt, 1, 2, -8.0, 8.0)
        history = warm_start(problem, grid, tg, 1)
        state = decoupled_step(problem, cfg, grid, history, tg.t(7), tg.dt)
        interior = slice(10, -10)
        np.testing.assert_allclose(state.z.values[interior], 1.0, rtol=1e-12)
        np.testing.assert_allclose(state.y.values[interior],
                                   grid.points[interior], atol=1e-12)
        np.testing.assert_allclose(state.gamma.values[interior], 0.0, atol=1e-11)
        np.testing.assert_allclose(state.a.values[interior], 0.0, atol=1e-11)

    def test_matches_expect_increment_route(self):
        # the batched level update equals the per-node expectation operator
        problem = example1()
        tg = TimeGrid(0.0, 1.0, 16)
        cfg = SolverConfig(k=2, ng=6, ni=4)
        grid = build_grid(0.5, tg.dt, cfg.k, cfg.balancing_degree, -4.0, 4.0)
        history = warm_start(problem, grid, tg, cfg.k)
        state = decoupled_step(problem, cfg, grid, history, tg.t(14), tg.dt)
        rule = gauss_hermite(cfg.ng)
        alpha = unscale(compute_coefficients(cfg.k), tg.dt)
        idx = grid.index_of(0.5)
        x = float(grid.points[idx])
        b = math.sin(tg.t(14) + x)
        sig = 0.1 * math.cos(tg.t(14) + x)
        z_ref = 0.0
        for j in (1, 2):
            level = history[j - 1]

            def payoff(dw, j=j, level=level):
                from fbsde2.grid import interpolate
                return interpolate(level.y, x + b * j * tg.dt + sig * dw, cfg.ni,
                                   cfg.domain_tol_cells) * dw

            z_ref += alpha[j] * expect_increment(rule, j * tg.dt, payoff)
        assert state.z.values[idx] == pytest.approx(z_ref, rel=1e-12)

    def test_out_of_domain_bubbles(self):
        problem = linear_problem()
        tg = TimeGrid(0.0, 1.0, 8)
        cfg = SolverConfig(k=1, ng=4, ni=2, domain_tol_cells=1e-6)
        grid = build_grid(0.0, tg.dt, 1, 2, -2.0, 2.0)
        history = warm_start(problem, grid, tg, 1)
        with pytest.raises(OutOfDomainError):
            decoupled_step(problem, cfg, grid, history, tg.t(7), tg.dt)

    def test_rejects_coupled_problem(self):
        from fbsde2.problems import example3
        problem = example3()
        tg = TimeGrid(0.0, 1.0, 8)
        cfg = SolverConfig(k=1, ng=4, ni=2)
        grid = build_grid(1.0, tg.dt, 1, 2, -4.0, 4.0)
        history = warm_start(problem, grid, tg, 1)
        with pytest.raises(ValueError):
            decoupled_step(problem, cfg, grid, history, tg.t(7), tg.dt)


class TestRunBackward:
    def test_constant_solution_all_levels(self):
        problem = constant_problem(5.0)
        cfg = SolverConfig(k=2, ng=8, ni=4)
        tg = TimeGrid(0.0, 1.0, 12)
        grid = build_grid(0.0, tg.dt, cfg.k, cfg.balancing_degree, -6.0, 6.0)
        run = run_backward(problem, cfg, grid, tg)
        assert len(run.levels) == 13
        for lvl in run.levels:
            np.testing.assert_allclose(lvl.y.values, 5.0, rtol=0, atol=1e-10)
            np.testing.assert_allclose(lvl.z.values, 0.0, atol=1e-10)
            np.testing.assert_allclose(lvl.gamma.values, 0.0, atol=1e-10)
            np.testing.assert_allclose(lvl.a.values, 0.0, atol=1e-9)
        assert run.point.y == pytest.approx(5.0, abs=1e-11)

    def test_coupled_stepper_matches_decoupled(self):
        problem = example1()
        cfg = SolverConfig(k=2, ng=8, ni=5)
        tg = TimeGrid(0.0, 1.0, 16)
        grid = build_grid(0.5, tg.dt, cfg.k, cfg.balancing_degree, -6.0, 6.0)
        auto = run_backward(problem, cfg, grid, tg)
        forced = run_backward(problem, cfg, grid, tg, use_coupled=True)
        # A carries the leading stencil weight, so its agreement scales with it
        alpha0 = abs(unscale(compute_coefficients(cfg.k), tg.dt)[0])
        tol = {"y": cfg.tolerance, "z": cfg.tolerance, "gamma": cfg.tolerance,
               "a": cfg.tolerance * (1 + alpha0)}
        for lvl_a, lvl_c in zip(auto.levels, forced.levels):
            for field in ("y", "z", "gamma", "a"):
                diff = np.max(np.abs(getattr(lvl_a, field).values
                                     - getattr(lvl_c, field).values))
                assert diff <= tol[field], (lvl_a.n, field, diff)

    def test_deterministic_reruns(self):
        problem = example1()
        cfg = SolverConfig(k=3, ng=10, ni=5)
        tg = TimeGrid(0.0, 1.0, 32)
        grid = build_grid(0.5, tg.dt, cfg.k, cfg.balancing_degree, -8.0, 8.0)
        first = run_backward(problem, cfg, grid, tg)
        second = run_backward(problem, cfg, grid, tg)
        assert first.point.y == second.point.y
        assert first.point.z == second.point.z
        for lvl1, lvl2 in zip(first.levels, second.levels):
            np.testing.assert_array_equal(lvl1.y.values, lvl2.y.values)
            np.testing.assert_array_equal(lvl1.z.values, lvl2.z.values)
            np.testing.assert_array_equal(lvl1.gamma.values, lvl2.gamma.values)
            np.testing.assert_array_equal(lvl1.a.values, lvl2.a.values)

    def test_error_reports_level(self):
        problem = linear_problem()
        cfg = SolverConfig(k=1, ng=4, ni=2, domain_tol_cells=1e-6)
        tg = TimeGrid(0.0, 1.0, 8)
        grid = build_grid(0.0, tg.dt, 1, 2, -2.0, 2.0)
        with pytest.raises(OutOfDomainError, match="level n=7"):
            run_backward(problem, cfg, grid, tg)

    def test_needs_enough_steps(self):
        problem = example1()
        cfg = SolverConfig(k=3)
        tg = TimeGrid(0.0, 1.0, 3)
        grid = build_grid(0.5, tg.dt, 3, 5, -6.0, 6.0)
        with pytest.raises(ValueError):
            run_backward(problem, cfg, grid, tg)

    def test_cannot_force_decoupled_on_coupled(self):
        from fbsde2.problems import example3
        problem = example3()
        cfg = SolverConfig(k=1)
        tg = TimeGrid(0.0, 1.0, 8)
        grid = build_grid(1.0, tg.dt, 1, 5, -6.0, 6.0)
        with pytest.raises(ValueError):
            run_backward(problem, cfg, grid, tg, use_coupled=False)

    def test_newton_requires_f_dy(self):
        problem = linear_problem()  # has no f_dy
        cfg = SolverConfig(k=1, y_solver="newton")
        tg = TimeGrid(0.0, 1.0, 8)
        grid = build_grid(0.0, tg.dt, 1, 5, -4.0, 4.0)
        with pytest.raises(ValueError, match="f_dy"):
            run_backward(problem, cfg, grid, tg)

    def test_newton_matches_picard_on_example1(self):
        problem = example1()
        tg = TimeGrid(0.0, 1.0, 16)
        base = dict(k=2, ng=8, ni=5)
        grid = build_grid(0.5, tg.dt, 2, 5, -6.0, 6.0)
        picard = run_backward(problem, SolverConfig(**base), grid, tg)
        newton = run_backward(problem, SolverConfig(y_solver="newton", **base), grid, tg)
        assert newton.point.y == pytest.approx(picard.point.y, abs=1e-11)
        assert newton.point.z == pytest.approx(picard.point.z, abs=1e-12)

    def test_divergence_detected_for_unstable_stencil(self):
        problem = example1()
        cfg = SolverConfig(k=8, ng=10, ni=20)
        tg = TimeGrid(0.0, 1.0, 256)
        grid = build_grid(0.5, tg.dt, cfg.k, cfg.balancing_degree, -20.0, 20.0)
        with pytest.raises(DivergedError):
            run_backward(problem, cfg, grid, tg)


class TestCoupledStep:
    def test_reports_sweeps(self):
        from fbsde2.problems import example4
        problem = example4()
        cfg = SolverConfig(k=1, ng=8, ni=4)
        tg = TimeGrid(0.0, 1.0, 16)
        grid = build_grid(0.5, tg.dt, 1, 4, -6.0, 6.0)
        history = warm_start(problem, grid, tg, 1)
        state = coupled_step(problem, cfg, grid, history, tg.t(15), tg.dt)
        assert state.n == 15
        assert state.iterations >= 2
        assert state.all_finite()

    def test_non_convergence_when_capped(self):
        from fbsde2.problems import example4
        problem = example4()
        cfg = SolverConfig(k=1, ng=8, ni=4, max_iters=1)
        tg = TimeGrid(0.0, 1.0, 16)
        grid = build_grid(0.5, tg.dt, 1, 4, -6.0, 6.0)
        history = warm_start(problem, grid, tg, 1)
        with pytest.raises(NonConvergenceError):
            coupled_step(problem, cfg, grid, history, tg.t(15), tg.dt)
