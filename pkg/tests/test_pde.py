import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from crossdiff.initial import InitialCondition, project_to_grid
from crossdiff.model import builtin_model
from crossdiff.pde import (CFLError, SolverParams, mass_bound_check, rhs,
                           solve, step)


def gaussian_field(mass=1.0, std=1.0, cells=160, half=7.0, M=1):
    specs = [InitialCondition(mass, "gaussian", std=std) for _ in range(M)]
    return project_to_grid(specs, [-half], [half], [cells])


def test_rhs_zero_for_zero_coefficients():
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.0, r=0.0)
    u = gaussian_field()
    dudt, a_sup = rhs(u, m)
    np.testing.assert_allclose(dudt, 0.0, atol=1e-14)
    assert a_sup == 0.0


def test_rhs_pure_growth_is_r_times_u():
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.0, r=0.7)
    u = gaussian_field()
    dudt, _ = rhs(u, m)
    np.testing.assert_allclose(dudt[0], 0.7 * u.values[0], rtol=1e-12)


def test_rhs_laplacian_of_gaussian_second_order():
    # a_eff = sigma0^2 (sqrt(2) convention); rhs = a_eff * u'' for constant a
    sigma0 = 0.5
    m = builtin_model("constant-coefficients", 1, 1, sigma0=sigma0)
    errs = []
    for cells in (100, 200):
        u = gaussian_field(cells=cells, half=7.0)
        x = u.centers()[:, 0]
        dudt, a_sup = rhs(u, m)
        exact = sigma0 ** 2 * (x ** 2 - 1.0) * np.exp(-0.5 * x ** 2) \
            / math.sqrt(2 * math.pi)
        errs.append(np.max(np.abs(dudt[0] - exact)))
        assert a_sup == pytest.approx(sigma0 ** 2)
    # halving h divides the central-difference error by about 4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_pure_growth_exponential_mass():
    r = 0.5
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.0, r=r, rbar=r)
    u0 = gaussian_field()
    sol = solve(m, u0, SolverParams(dt=0.001, t_end=1.0,
                                    snapshot_times=(0.0, 1.0)))
    # explicit Euler on m' = r m: (1 + r dt)^n, compare to that exactly
    n = 1000
    expect = (1 + r * 0.001) ** n
    assert sol.masses[-1][0] == pytest.approx(expect, rel=1e-10)
    assert sol.masses[-1][0] == pytest.approx(math.exp(r), rel=1e-3)


def test_heat_equation_variance_growth():
    # pure diffusion: Var(t) = Var(0) + 2 a_eff t with a_eff = sigma0^2
    sigma0 = 0.4
    m = builtin_model("constant-coefficients", 1, 1, sigma0=sigma0)
    u0 = gaussian_field(std=0.8, cells=256, half=8.0)
    sol = solve(m, u0, SolverParams(dt=0.002, t_end=1.0,
                                    snapshot_times=(0.0, 0.5, 1.0)))
    for snap in sol.snapshots:
        x = snap.centers()[:, 0]
        w = snap.values[0] * snap.cell_volume
        mass = w.sum()
        mean = (x * w).sum() / mass
        var = ((x - mean) ** 2 * w).sum() / mass
        expect = 0.8 ** 2 + 2.0 * sigma0 ** 2 * snap.time
        assert var == pytest.approx(expect, rel=0.02)
    assert not sol.leak_flag


def test_lotka_volterra_masses_match_ode_oracle():
    # constant kernels + constant coefficients: masses follow the
    # competitive Lotka-Volterra ODE m_i' = m_i (r_i - sum_j c_ij m_j)
    r = np.array([1.0, 0.8])
    c = np.array([[1.0, 0.5], [0.6, 1.2]])
    from crossdiff.kernels import KernelSpec
    C = [[KernelSpec("constant", 1, amplitude=c[i, j]) for j in range(2)]
         for i in range(2)]
    m = builtin_model("constant-coefficients", 2, 1, sigma0=0.3,
                      r=list(r), rbar=list(r), C=C)
    u0 = project_to_grid([InitialCondition(0.4, "gaussian", std=0.6),
                          InitialCondition(0.6, "gaussian", std=0.6)],
                         [-7.0], [7.0], [160])
    sol = solve(m, u0, SolverParams(dt=0.004, t_end=1.0,
                                    snapshot_times=(1.0,)))

    def f(t, y):
        return y * (r - c @ y)

    ode = solve_ivp(f, (0.0, 1.0), [0.4, 0.6], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(sol.masses[-1], ode.y[:, -1], rtol=1e-3)


def test_second_order_spatial_convergence():
    sigma0 = 0.4
    m = builtin_model("constant-coefficients", 1, 1, sigma0=sigma0)
    t, std = 0.25, 0.8
    errs = []
    for cells in (64, 128):
        u0 = gaussian_field(std=std, cells=cells, half=8.0)
        sol = solve(m, u0, SolverParams(dt=5e-4, t_end=t))
        snap = sol.snapshots[-1]
        x = snap.centers()[:, 0]
        var = std ** 2 + 2.0 * sigma0 ** 2 * t
        exact = np.exp(-0.5 * x ** 2 / var) / math.sqrt(2 * math.pi * var)
        errs.append(np.max(np.abs(snap.values[0] - exact)))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_cfl_violation_raises():
    m = builtin_model("constant-coefficients", 1, 1, sigma0=1.0)
    u0 = gaussian_field(cells=256, half=4.0)
    with pytest.raises(CFLError):
        step(u0, m, dt=0.01)


def test_time_grid_validation():
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.0)
    u0 = gaussian_field()
    with pytest.raises(ValueError):
        solve(m, u0, SolverParams(dt=0.3, t_end=1.0))
    with pytest.raises(ValueError):
        solve(m, u0, SolverParams(dt=0.25, t_end=1.0,
                                  snapshot_times=(0.13,)))
    with pytest.raises(ValueError):
        SolverParams(dt=-0.1, t_end=1.0)
    with pytest.raises(ValueError):
        SolverParams(dt=0.1, t_end=1.0, mode="implicit")


def test_local_mode_requires_comp():
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.0)
    u0 = gaussian_field()
    with pytest.raises(ValueError):
        solve(m, u0, SolverParams(dt=0.1, t_end=0.2, mode="local"))


def test_local_mode_pointwise_logistic_decay():
    # sigma = 0, r = 0, local competition c: du/dt = -c u^2 pointwise,
    # so u(t, x) = u0(x) / (1 + c t u0(x))
    c = 1.5
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.0,
                      comp=np.array([[c]]))
    u0 = gaussian_field()
    sol = solve(m, u0, SolverParams(dt=0.001, t_end=1.0, mode="local"))
    expect = u0.values[0] / (1.0 + c * 1.0 * u0.values[0])
    np.testing.assert_allclose(sol.snapshots[-1].values[0], expect,
                               rtol=2e-3, atol=1e-12)


def test_mass_bound_check_rows():
    r = 0.5
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.0, r=r, rbar=r)
    u0 = gaussian_field()
    sol = solve(m, u0, SolverParams(dt=0.001, t_end=0.5,
                                    snapshot_times=(0.0, 0.25, 0.5)))
    rep = mass_bound_check(sol, m)
    assert rep.passed
    assert len(rep.rows) == 3
    t, i, mass, bound, ok = rep.rows[-1]
    assert t == pytest.approx(0.5)
    assert mass <= bound + 1e-4
    # with rbar declared below the true rate the bound must fail
    m_bad = builtin_model("constant-coefficients", 1, 1, sigma0=0.0, r=r,
                          rbar=0.0)
    sol_bad = solve(m_bad, u0, SolverParams(dt=0.001, t_end=0.5,
                                            snapshot_times=(0.0, 0.5)))
    assert not mass_bound_check(sol_bad, m_bad).passed


def test_clamp_mass_reported_nonnegative():
    m = builtin_model("constant-coefficients", 1, 1, sigma0=0.3)
    u0 = gaussian_field(cells=128, half=6.0)
    sol = solve(m, u0, SolverParams(dt=0.002, t_end=0.1))
    assert sol.clamp_mass >= 0.0
    assert sol.clamp_mass < 1e-6
