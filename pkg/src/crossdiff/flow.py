"""Stochastic flows frozen on a PDE solution: forward/inverse paths,
variational Jacobians, determinant evolution and Feynman-Kac estimators.

All SDEs use the package noise convention: the forward flow is

    dX = b(i, t, X) dt + s_eff(i, t, X) dB,    s_eff = noise_scale * sigma.

The inverse map eta_{s,t}(y), run as Z_s(y) = eta_{t-s,t}(y), satisfies the
classic Ito equation dZ = A(s, Z) dW + beta(s, Z) ds with

    A(s, y)    = s_eff(i, t - s, y)
    beta(s, y) = -b_hat(i, t - s, y)
    b_hat_k    = b_k - sum_{l,q} s_eff_{lq} d_l s_eff_{kq}

driven by the time-reversed Brownian motion W_s = B_{t-s} - B_t.  The
Jacobian solves the linear variational system and the determinant is
integrated both from the Jacobian matrix and from its own scalar SDE
(Stratonovich divergence form, integrated here in Ito form); the two
routes must agree along paths.

Coefficient derivatives are central finite differences: coefficients are
tabulated compositions with convolved fields, not closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import GridField
from .kernels import convolve_field
from .model import CoefficientModel
from .pde import PDESolution


class FlowError(RuntimeError):
    """Blow-up or diffeomorphism violation along a path."""


# ---------------------------------------------------------------------

class FrozenCoefficients:
    """Time-indexed coefficient fields sigma(i,t,x), b(i,t,x).

    Built either from a PDE solution (the coefficients of the limit flow)
    or from explicit callables for synthetic tests.  Linear interpolation
    in time between stored snapshots.
    """

    def __init__(self, model: CoefficientModel, times=None, fields=None,
                 sigma_fn=None, drift_fn=None, rate_fn=None,
                 density0=None):
        self.model = model
        self.noise_scale = model.noise_scale
        self._sigma_fn = sigma_fn
        self._drift_fn = drift_fn
        self._rate_fn = rate_fn
        self._density0 = density0
        self.times = None if times is None else np.asarray(times, float)
        self.fields = fields

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_pde(cls, model: CoefficientModel,
                 solution: PDESolution) -> "FrozenCoefficients":
        times = np.array([s.time for s in solution.snapshots])
        if times.size < 1:
            raise ValueError("PDE solution has no snapshots")
        return cls(model, times=times, fields=list(solution.snapshots))

    @classmethod
    def from_callables(cls, model: CoefficientModel, sigma_fn, drift_fn,
                       rate_fn=None, density0=None) -> "FrozenCoefficients":
        """sigma_fn(i, t, X)->(n,d,d); drift_fn(i, t, X)->(n,d)."""
        return cls(model, sigma_fn=sigma_fn, drift_fn=drift_fn,
                   rate_fn=rate_fn, density0=density0)

    # -- time handling ---------------------------------------------------

    @property
    def time_varying(self) -> bool:
        return self.times is not None and self.times.size > 1

    @property
    def max_spacing(self) -> float:
        if not self.time_varying:
            return 0.0
        return float(np.max(np.diff(self.times)))

    def check_spacing(self, dt: float):
        if self.time_varying and self.max_spacing > 10.0 * dt + 1e-12:
            raise ValueError(
                f"snapshot spacing {self.max_spacing:g} exceeds 10 dt = "
                f"{10 * dt:g}; store denser PDE snapshots")

    def _interp_values(self, t: float) -> np.ndarray:
        times = self.times
        if t <= times[0]:
            return self.fields[0].values
        if t >= times[-1]:
            return self.fields[-1].values
        j = int(np.searchsorted(times, t, side="right"))
        w = (t - times[j - 1]) / (times[j] - times[j - 1])
        return (1.0 - w) * self.fields[j - 1].values + w * self.fields[j].values

    def _field_at(self, t: float) -> GridField:
        g0 = self.fields[0]
        return GridField(g0.lo, g0.hi, self._interp_values(t), t)

    # -- coefficient evaluation -------------------------------------------

    def _v_args(self, kmat, i: int, t: float, X: np.ndarray) -> np.ndarray:
        u = self._field_at(t)
        return np.stack(
            [np.atleast_1d(convolve_field(kmat[i][j], u, j, X))
             for j in range(self.model.M)], axis=1)

    def sigma(self, i: int, t: float, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self._sigma_fn is not None:
            return np.asarray(self._sigma_fn(i, t, X), float).reshape(
                X.shape[0], self.model.d, self.model.d)
        return self.model.eval_sigma(i, X, self._v_args(self.model.G, i, t, X))

    def sigma_eff(self, i: int, t: float, X: np.ndarray) -> np.ndarray:
        return self.noise_scale * self.sigma(i, t, X)

    def drift(self, i: int, t: float, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self._drift_fn is not None:
            return np.asarray(self._drift_fn(i, t, X), float).reshape(
                X.shape[0], self.model.d)
        return self.model.eval_drift(i, X, self._v_args(self.model.H, i, t, X))

    def fk_rate(self, i: int, t: float, X: np.ndarray) -> np.ndarray:
        """r_i(x) - sum_j C^ij * xi^j_t(x), the Feynman-Kac exponent rate."""
        X = np.atleast_2d(X)
        if self._rate_fn is not None:
            return np.asarray(self._rate_fn(i, t, X), float).reshape(X.shape[0])
        r = self.model.eval_growth(i, X)
        if self.model.C is not None:
            u = self._field_at(t)
            for j in range(self.model.M):
                r = r - convolve_field(self.model.C[i][j], u, j, X)
        elif self.model.comp is not None:
            u = self._field_at(t)
            for j in range(self.model.M):
                r = r - self.model.comp[i, j] * u.interpolate(j, X)
        return r

    def initial_density(self, i: int, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self._density0 is not None:
            return np.asarray(self._density0(i, X), float).reshape(X.shape[0])
        return self.fields[0].interpolate(i, X)

    def domain_scale(self) -> float:
        if self.fields is not None:
            return float(np.max(self.fields[0].hi - self.fields[0].lo))
        return 1.0


# ---------------------------------------------------------------------
# path containers

@dataclass
class FlowPaths:
    times: np.ndarray        # (m+1,)
    paths: np.ndarray        # (m+1, n, d)
    increments: np.ndarray   # (m, n, d) Brownian increments used

    @property
    def terminal(self):
        return self.paths[-1]


@dataclass
class InverseFlowResult:
    times: np.ndarray            # Z-time grid s in [0, t]
    paths: np.ndarray            # Z_s(y) = eta_{t-s,t}(y), (m+1, n, d)
    jacobians: np.ndarray        # (m+1, n, d, d), grad_y Z_s
    det_matrix: np.ndarray       # (m+1, n) determinant of the Jacobian
    det_sde: np.ndarray          # (m+1, n) determinant from its own SDE
    increments: np.ndarray       # (m, n, d) increments of W

    @property
    def eta0(self):
        """eta_{0,t}(y), the initial position mapped back."""
        return self.paths[-1]


# ---------------------------------------------------------------------
# derivative helpers (central differences on the coefficient fields)

def _fd_grad(fn, X, h):
    """Gradient stack [d_p f(X)]: fn returns (n, ...); result (n, d, ...)."""
    d = X.shape[1]
    cols = []
    for p in range(d):
        dx = np.zeros(d)
        dx[p] = h
        cols.append((fn(X + dx) - fn(X - dx)) / (2.0 * h))
    return np.stack(cols, axis=1)


def _guard(arr, what):
    if not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > 1e8:
        raise FlowError(f"blow-up in {what}")


# ---------------------------------------------------------------------

def forward_flow(coeffs: FrozenCoefficients, i: int, s: float, t: float,
                 x0: np.ndarray, dt: float, rng: np.random.Generator = None,
                 increments: np.ndarray = None) -> FlowPaths:
    """Euler-Maruyama paths of X_{s,t}(x) for a batch of starting points."""
    if t < s:
        raise ValueError("need s <= t")
    coeffs.check_spacing(dt)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    m = max(1, int(round((t - s) / dt))) if t > s else 0
    times = s + (t - s) * np.arange(m + 1) / max(m, 1)
    h = (t - s) / m if m else 0.0
    if increments is None:
        if m and rng is None:
            raise ValueError("need an rng or precomputed increments")
        increments = (rng.standard_normal((m, n, d)) * math.sqrt(h)
                      if m else np.zeros((0, n, d)))
    paths = np.empty((m + 1, n, d))
    paths[0] = x0
    x = x0.copy()
    for k in range(m):
        tk = times[k]
        b = coeffs.drift(i, tk, x)
        se = coeffs.sigma_eff(i, tk, x)
        x = x + b * h + np.einsum("nkl,nl->nk", se, increments[k])
        _guard(x, "forward flow")
        paths[k + 1] = x
    return FlowPaths(times, paths, increments)


def _inverse_coeff_fns(coeffs, i, t):
    """A(s, y) and beta(s, y) of the reverted Ito equation."""
    def A(s, Y):
        return coeffs.sigma_eff(i, t - s, Y)

    def beta(s, Y, h_fd):
        b = coeffs.drift(i, t - s, Y)
        dse = _fd_grad(lambda Z: coeffs.sigma_eff(i, t - s, Z), Y, h_fd)
        # b_hat_k = b_k - sum_{l,q} s_eff_{lq} d_l s_eff_{kq}
        corr = np.einsum("nlq,nlkq->nk", coeffs.sigma_eff(i, t - s, Y), dse)
        return -(b - corr)
    return A, beta


def inverse_flow(coeffs: FrozenCoefficients, i: int, t: float,
                 y: np.ndarray, dt: float, rng: np.random.Generator = None,
                 increments: np.ndarray = None, h_fd: float = None,
                 det_tol: float = 0.0) -> InverseFlowResult:
    """Inverse flow eta_{., t}(y) with Jacobian and determinant evolution.

    Integrates Z_s(y) = eta_{t-s,t}(y), its variational Jacobian and the
    determinant by two independent routes (matrix determinant and the
    scalar determinant SDE).  Aborts if any determinant becomes <= 0.
    """
    coeffs.check_spacing(dt)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, d = y.shape
    m = max(1, int(round(t / dt)))
    h = t / m
    times = np.arange(m + 1) * h
    if h_fd is None:
        h_fd = 1e-4 * coeffs.domain_scale()
    if increments is None:
        if rng is None:
            raise ValueError("need an rng or precomputed increments")
        increments = rng.standard_normal((m, n, d)) * math.sqrt(h)

    A_fn, beta_fn = _inverse_coeff_fns(coeffs, i, t)
    paths = np.empty((m + 1, n, d))
    jac = np.empty((m + 1, n, d, d))
    det_m = np.empty((m + 1, n))
    det_s = np.empty((m + 1, n))
    z = y.copy()
    J = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    D = np.ones(n)
    paths[0], jac[0], det_m[0], det_s[0] = z, J, 1.0, 1.0

    for k in range(m):
        s_k = times[k]
        dW = increments[k]
        A = A_fn(s_k, z)
        beta = beta_fn(s_k, z, h_fd)
        dA = _fd_grad(lambda Y: A_fn(s_k, Y), z, h_fd)      # (n, p, k, q)
        dbeta = _fd_grad(lambda Y: beta_fn(s_k, Y, h_fd), z, h_fd)  # (n, p, k)

        # divergence of each noise column and of the Stratonovich drift
        div_A = np.einsum("nkkq->nq", dA)                   # f^q
        ddivA = _fd_grad(
            lambda Y: np.einsum("nkkq->nq",
                                _fd_grad(lambda Z: A_fn(s_k, Z), Y, h_fd)),
            z, h_fd)                                        # (n, p, q)
        # beta_circ = beta - 1/2 sum_{l,q} A_{lq} d_l A_{.q}
        strat = 0.5 * np.einsum("nlq,nlkq->nk", A, dA)
        div_beta_circ = np.einsum("nkk->n", dbeta) \
            - 0.5 * _div_strat(A_fn, s_k, z, h_fd)

        # state
        z_new = z + np.einsum("nkq,nq->nk", A, dW) + beta * h
        # variational Jacobian: dJ = (dA^q J) dW^q + (dbeta J) ds
        noise = np.einsum("npkq,nq,npl->nkl", dA, dW, J)
        driftJ = np.einsum("npk,npl->nkl", dbeta, J)
        J_new = J + noise + driftJ * h
        # determinant SDE in Ito form
        ito_corr = 0.5 * (np.einsum("nq,nq->n", div_A, div_A)
                          + np.einsum("npq,npq->n", ddivA,
                                      np.swapaxes(A, 1, 2)))
        D_new = D + D * (np.einsum("nq,nq->n", div_A, dW)
                         + (div_beta_circ + ito_corr) * h)

        z, J, D = z_new, J_new, D_new
        _guard(z, "inverse flow")
        _guard(J, "inverse flow Jacobian")
        det = np.linalg.det(J)
        if np.any(det <= det_tol) or np.any(D <= det_tol):
            raise FlowError("nonpositive Jacobian determinant along an "
                            "inverse-flow path (diffeomorphism violated)")
        paths[k + 1], jac[k + 1], det_m[k + 1], det_s[k + 1] = z, J, det, D
    return InverseFlowResult(times, paths, jac, det_m, det_s, increments)


def _div_strat(A_fn, s, z, h_fd):
    """Divergence of the Stratonovich correction sum_lq A_lq d_l A_(.q)."""
    def corr(Y):
        A = A_fn(s, Y)
        dA = _fd_grad(lambda Z: A_fn(s, Z), Y, h_fd)
        return np.einsum("nlq,nlkq->nk", A, dA)
    dcorr = _fd_grad(corr, z, h_fd)
    return np.einsum("nkk->n", dcorr)


def compose_inverse_forward(coeffs: FrozenCoefficients, i: int, t: float,
                            y: np.ndarray, dt: float,
                            rng: np.random.Generator) -> np.ndarray:
    """|X_{0,t}(eta_{0,t}(y)) - y| per path under common noise."""
    inv = inverse_flow(coeffs, i, t, y, dt, rng)
    # W_s = B_{t-s} - B_t  =>  forward increments are the negated,
    # time-reversed inverse-flow increments
    fwd_inc = -inv.increments[::-1]
    fwd = forward_flow(coeffs, i, 0.0, t, inv.eta0, dt,
                       increments=fwd_inc)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return np.sqrt(np.sum((fwd.terminal - y) ** 2, axis=1))


# ---------------------------------------------------------------------
# Feynman-Kac estimators

@dataclass
class MonteCarloEstimate:
    value: float
    stderr: float
    n_paths: int


def feynman_kac_functional(coeffs: FrozenCoefficients, model: CoefficientModel,
                           phi, i: int, t: float, n_paths: int, dt: float,
                           rng: np.random.Generator) -> MonteCarloEstimate:
    """Estimate <xi^i_t, phi> by the exponentially weighted forward flow.

    The outer integral over xi^i_0 is a quadrature over the initial grid;
    the expectation is Monte Carlo over n_paths replicas of the flow.
    """
    u0 = coeffs.fields[0]
    pts = u0.centers()
    w = u0.values[i].ravel() * u0.cell_volume
    keep = w > 0
    pts, w = pts[keep], w[keep]
    nc = pts.shape[0]
    m = max(1, int(round(t / dt)))
    h = t / m
    x = np.repeat(pts, n_paths, axis=0)
    weights = np.tile(w, (1,)).repeat(n_paths) / n_paths
    logw = np.zeros(x.shape[0])
    rate_prev = coeffs.fk_rate(i, 0.0, x)
    for k in range(m):
        tk = k * h
        b = coeffs.drift(i, tk, x)
        se = coeffs.sigma_eff(i, tk, x)
        dW = rng.standard_normal(x.shape) * math.sqrt(h)
        x = x + b * h + np.einsum("nkl,nl->nk", se, dW)
        _guard(x, "Feynman-Kac forward flow")
        rate_new = coeffs.fk_rate(i, (k + 1) * h, x)
        logw += 0.5 * h * (rate_prev + rate_new)   # trapezoid in time
        rate_prev = rate_new
    vals = np.asarray(phi(x), dtype=float).reshape(-1) * np.exp(logw)
    # replicate p = sum over initial cells with that path index
    per_rep = (vals * weights * n_paths).reshape(nc, n_paths).sum(axis=0)
    mean = float(per_rep.mean())
    stderr = float(per_rep.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    return MonteCarloEstimate(mean, stderr, n_paths)


def density_estimate(coeffs: FrozenCoefficients, model: CoefficientModel,
                     i: int, y: np.ndarray, t: float, n_paths: int,
                     dt: float, rng: np.random.Generator,
                     density0=None):
    """Monte-Carlo density xi^i_t(y) from the inverse-flow identity.

    Returns (values, stderrs) arrays over the query batch: the mean of
    exp{int fk_rate along eta} * xi0(eta_{0,t}(y)) * det grad eta_{0,t}(y).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    nq, d = y.shape
    yy = np.repeat(y, n_paths, axis=0)
    inv = inverse_flow(coeffs, i, t, yy, dt, rng)
    m = inv.times.shape[0] - 1
    h = t / m
    # int_0^t fk_rate(i, r, eta_{r,t}) dr over the reversed clock
    rates = np.empty((m + 1, yy.shape[0]))
    for k in range(m + 1):
        rates[k] = coeffs.fk_rate(i, t - inv.times[k], inv.paths[k])
    integral = h * (0.5 * rates[0] + rates[1:-1].sum(axis=0) + 0.5 * rates[-1]) \
        if m >= 1 else np.zeros(yy.shape[0])
    if density0 is None:
        xi0 = coeffs.initial_density(i, inv.eta0)
    else:
        xi0 = np.asarray(density0(inv.eta0), dtype=float).reshape(-1)
    psi = np.exp(integral) * xi0 * inv.det_matrix[-1]
    psi = psi.reshape(nq, n_paths)
    vals = psi.mean(axis=1)
    errs = psi.std(axis=1, ddof=1) / math.sqrt(n_paths)
    return vals, errs


# ---------------------------------------------------------------------
# semigroup diagnostics

@dataclass
class SemigroupReport:
    lipschitz: list      # per test function: empirical Lip of P_{s,t} phi
    gaps: list           # per test function: sup_x |P phi - P~ phi|
    probe_points: np.ndarray


def semigroup_perturbation_check(coeffs: FrozenCoefficients,
                                 coeffs_alt: FrozenCoefficients,
                                 phis: list, s: float, t: float,
                                 x_probe: np.ndarray, dt: float,
                                 n_paths: int,
                                 rng: np.random.Generator) -> SemigroupReport:
    """Common-noise estimate of semigroup Lipschitz constants and gaps."""
    x_probe = np.atleast_2d(np.asarray(x_probe, dtype=float))
    nq, d = x_probe.shape
    xx = np.repeat(x_probe, n_paths, axis=0)
    m = max(1, int(round((t - s) / dt)))
    h = (t - s) / m
    inc = rng.standard_normal((m, xx.shape[0], d)) * math.sqrt(h)
    f1 = forward_flow(coeffs, 0, s, t, xx, dt, increments=inc)
    f2 = forward_flow(coeffs_alt, 0, s, t, xx, dt, increments=inc)
    lips, gaps = [], []
    for phi in phis:
        p1 = np.asarray(phi(f1.terminal), float).reshape(nq, n_paths).mean(axis=1)
        p2 = np.asarray(phi(f2.terminal), float).reshape(nq, n_paths).mean(axis=1)
        diff = np.abs(p1[:, None] - p1[None, :])
        dist = np.sqrt(np.sum((x_probe[:, None, :] - x_probe[None, :, :]) ** 2,
                              axis=2))
        mask = dist > 1e-12
        lips.append(float(np.max(diff[mask] / dist[mask])) if mask.any() else 0.0)
        gaps.append(float(np.max(np.abs(p1 - p2))))
    return SemigroupReport(lips, gaps, x_probe)
