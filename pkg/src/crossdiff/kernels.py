"""Nonnegative interaction kernels and their convolutions.

Kernels are immutable after construction and every operation here is pure,
so they are safe to share across threads.  Convolutions against empirical
measures are exact O(N) sums per query point; grid convolutions have a
direct quadrature path and an FFT fast path that must agree to 1e-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, signal

from .grids import GridField

FAMILIES = ("gaussian", "compact-bump", "constant", "tabulated")

# Gaussian tails are cut at 6 bandwidths in fast paths; the discarded mass
# is below 2e-9, under every test tolerance in the suite.
GAUSSIAN_CUTOFF = 6.0


@lru_cache(maxsize=None)
def _bump_norm(dim: int) -> float:
    """Integral of exp(-1/(1-|u|^2)) over the unit ball."""
    prof = lambda r: math.exp(-1.0 / (1.0 - r * r)) if r < 1.0 else 0.0
    if dim == 1:
        val, _ = integrate.quad(prof, -1.0, 1.0)
    elif dim == 2:
        val, _ = integrate.quad(lambda r: 2.0 * math.pi * r * prof(r), 0.0, 1.0)
    else:
        raise ValueError("compact-bump supported for d in {1, 2}")
    return val


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A nonnegative bounded Lipschitz kernel on R^d.

    amplitude is the total mass for the integrable families (gaussian,
    compact-bump, tabulated after normalization is up to the caller) and
    the constant value for the constant family.
    """

    family: str
    dim: int
    bandwidth: float = 1.0
    amplitude: float = 1.0
    table: tuple | None = None   # (radii, values) for the tabulated family

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        if self.amplitude < 0.0:
            raise ValueError("amplitude must be nonnegative")
        if self.family == "tabulated":
            if self.table is None:
                raise ValueError("tabulated kernel needs a table")
            r = np.asarray(self.table[0], dtype=float)
            v = np.asarray(self.table[1], dtype=float)
            if r.ndim != 1 or r.shape != v.shape or r.size < 2:
                raise ValueError("table must be two equal 1-d columns")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ValueError("table radii must be increasing and >= 0")
            if np.any(v < 0):
                raise ValueError("table values must be nonnegative")
            object.__setattr__(self, "table", (r, v))

    # -- evaluation ---------------------------------------------------

    def _eval_radius2(self, r2: np.ndarray) -> np.ndarray:
        eps = self.bandwidth
        if self.family == "gaussian":
            norm = self.amplitude * (2.0 * math.pi * eps * eps) ** (-0.5 * self.dim)
            return norm * np.exp(-0.5 * r2 / (eps * eps))
        if self.family == "compact-bump":
            u2 = r2 / (eps * eps)
            out = np.zeros_like(u2)
            inside = u2 < 1.0
            out[inside] = np.exp(-1.0 / (1.0 - u2[inside]))
            norm = self.amplitude / (_bump_norm(self.dim) * eps ** self.dim)
            return norm * out
        if self.family == "constant":
            return np.full_like(r2, self.amplitude)
        # tabulated: linear interpolation in |x|, clamped to 0 outside
        r_tab, v_tab = self.table
        return self.amplitude * np.interp(np.sqrt(r2), r_tab, v_tab,
                                          left=v_tab[0], right=0.0)

    def evaluate_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}")
        return self._eval_radius2(np.einsum("nk,nk->n", x, x))

    # -- declared bounds ----------------------------------------------

    @property
    def sup_bound(self) -> float:
        eps = self.bandwidth
        if self.family == "gaussian":
            return self.amplitude * (2.0 * math.pi * eps * eps) ** (-0.5 * self.dim)
        if self.family == "compact-bump":
            return self.amplitude * math.exp(-1.0) / (_bump_norm(self.dim) * eps ** self.dim)
        if self.family == "constant":
            return self.amplitude
        return self.amplitude * float(np.max(self.table[1]))

    @property
    def support_radius(self) -> float:
        """Radius beyond which the kernel is (numerically) zero."""
        if self.family == "gaussian":
            return GAUSSIAN_CUTOFF * self.bandwidth
        if self.family == "compact-bump":
            return self.bandwidth
        if self.family == "tabulated":
            return float(self.table[0][-1])
        return math.inf

    def lipschitz_estimate(self, n_probe: int = 4096, seed: int = 0) -> float:
        """Sampled difference-quotient bound for the Lipschitz constant."""
        if self.family == "constant":
            return 0.0
        rad = self.support_radius * 1.2
        rng = np.random.default_rng(seed)
        x = rng.uniform(-rad, rad, size=(n_probe, self.dim))
        h = 1e-5 * rad
        quot = 0.0
        for axis in range(self.dim):
            dx = np.zeros(self.dim)
            dx[axis] = h
            d = np.abs(self.evaluate_batch(x + dx) - self.evaluate_batch(x - dx))
            quot = max(quot, float(np.max(d)) / (2.0 * h))
        return quot


def evaluate(k: KernelSpec, x) -> float:
    """Evaluate the kernel at a single d-vector."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("kernel argument must be finite")
    return float(k.evaluate_batch(x[None, :])[0])


def tabulated_from_csv(path, dim: int, amplitude: float = 1.0) -> KernelSpec:
    """Load a tabulated kernel from a two-column CSV (abscissa, value)."""
    data = np.loadtxt(path, delimiter=",", dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("tabulated kernel CSV needs two columns")
    return KernelSpec("tabulated", dim, amplitude=amplitude,
                      table=(data[:, 0], data[:, 1]))


# ---------------------------------------------------------------------
# quadrature checks

def kernel_mass(k: KernelSpec, n: int = 4001) -> float:
    """Numerical integral of the kernel over its truncation box."""
    if k.family == "constant":
        raise ValueError("constant kernels are not integrable")
    rad = k.support_radius
    if k.dim == 1:
        x = np.linspace(-rad, rad, n)[:, None]
        return float(np.trapezoid(k.evaluate_batch(x), x[:, 0]))
    r = np.linspace(0.0, rad, n)
    vals = k._eval_radius2(r * r)
    return float(np.trapezoid(2.0 * math.pi * r * vals, r))


def first_abs_moment(k: KernelSpec, n: int = 4001) -> float:
    """Quadrature of |x| k(x) dx over the truncation box."""
    rad = k.support_radius
    if k.dim == 1:
        x = np.linspace(-rad, rad, n)[:, None]
        return float(np.trapezoid(np.abs(x[:, 0]) * k.evaluate_batch(x), x[:, 0]))
    r = np.linspace(0.0, rad, n)
    vals = k._eval_radius2(r * r)
    return float(np.trapezoid(2.0 * math.pi * r * r * vals, r))


def mollifier(gamma: KernelSpec, eps: float) -> KernelSpec:
    """Rescale a unit-mass kernel to gamma(x/eps) eps^{-d}."""
    if eps <= 0.0:
        raise ValueError("mollifier scale must be positive")
    if gamma.family == "constant":
        raise ValueError("constant kernels have no unit mass")
    if abs(kernel_mass(gamma) - 1.0) > 1e-6:
        raise ValueError("mollifier base must have unit mass")
    if gamma.family == "tabulated":
        r, v = gamma.table
        return KernelSpec("tabulated", gamma.dim,
                          bandwidth=gamma.bandwidth * eps,
                          amplitude=gamma.amplitude,
                          table=(r * eps, v * eps ** (-gamma.dim)))
    return KernelSpec(gamma.family, gamma.dim,
                      bandwidth=gamma.bandwidth * eps,
                      amplitude=gamma.amplitude)


# ---------------------------------------------------------------------
# empirical measures

@dataclass
class EmpiricalMeasure:
    """Weighted point measure (1/K) sum of Diracs for one species."""

    atoms: np.ndarray    # (N, d)
    K: int
    species: int = 0

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        if self.atoms.ndim == 1:
            self.atoms = self.atoms[:, None]
        if self.K < 1:
            raise ValueError("charge capacity K must be >= 1")
        if not np.all(np.isfinite(self.atoms)):
            raise ValueError("atom coordinates must be finite")

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def mass(self) -> float:
        return self.n_atoms / self.K


def convolve_empirical(k: KernelSpec, nu: EmpiricalMeasure, x,
                       chunk: int = 2 ** 22) -> np.ndarray | float:
    """(k * nu)(x) = (1/K) sum_n k(x - x_n), exact.

    x may be a single d-vector or an (n, d) batch; empty measures give 0.
    """
    single = np.asarray(x, dtype=float).ndim == 1
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    if nu.n_atoms == 0:
        out = np.zeros(xq.shape[0])
        return float(out[0]) if single else out
    if k.family == "constant":
        out = np.full(xq.shape[0], k.amplitude * nu.mass)
        return float(out[0]) if single else out
    out = np.zeros(xq.shape[0])
    block = max(1, chunk // max(1, nu.n_atoms))
    for start in range(0, xq.shape[0], block):
        q = xq[start:start + block]
        diff = q[:, None, :] - nu.atoms[None, :, :]
        r2 = np.einsum("qnk,qnk->qn", diff, diff)
        out[start:start + block] = k._eval_radius2(r2).sum(axis=1) / nu.K
    return float(out[0]) if single else out


# ---------------------------------------------------------------------
# grid-field convolutions

def convolve_field(k: KernelSpec, u: GridField, species: int, x,
                   chunk: int = 2 ** 22) -> np.ndarray | float:
    """Midpoint-rule quadrature of int k(x - y) u(y) dy at query points."""
    if k.dim != u.dim:
        raise ValueError("kernel and field dimensions differ")
    single = np.asarray(x, dtype=float).ndim == 1
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    if k.family == "constant":
        out = np.full(xq.shape[0], k.amplitude * u.mass(species))
        return float(out[0]) if single else out
    centers = u.centers()
    vals = u.values[species].ravel() * u.cell_volume
    out = np.zeros(xq.shape[0])
    block = max(1, chunk // max(1, centers.shape[0]))
    for start in range(0, xq.shape[0], block):
        q = xq[start:start + block]
        diff = q[:, None, :] - centers[None, :, :]
        r2 = np.einsum("qnk,qnk->qn", diff, diff)
        out[start:start + block] = k._eval_radius2(r2) @ vals
    return float(out[0]) if single else out


def convolve_field_grid(k: KernelSpec, u: GridField, species: int,
                        method: str = "fft") -> np.ndarray:
    """Whole-grid convolution, same quadrature as convolve_field.

    method "fft" is the zero-padded discrete-Fourier fast path; "direct"
    is the O(n^2) oracle retained for tests.
    """
    if k.dim != u.dim:
        raise ValueError("kernel and field dimensions differ")
    if k.family == "constant":
        return np.full(u.shape, k.amplitude * u.mass(species))
    if method == "direct":
        centers = u.centers()
        return convolve_field(k, u, species, centers).reshape(u.shape)
    if method != "fft":
        raise ValueError("method must be 'fft' or 'direct'")
    h = u.spacing
    offs = [np.arange(-(n - 1), n) * h[axis]
            for axis, n in enumerate(u.shape)]
    mesh = np.meshgrid(*offs, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    kk = k.evaluate_batch(pts).reshape([2 * n - 1 for n in u.shape])
    conv = signal.fftconvolve(u.values[species], kk, mode="same")
    return np.maximum(conv * u.cell_volume, 0.0)
