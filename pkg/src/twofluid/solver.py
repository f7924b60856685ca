"""Pseudo-spectral integrator for the nonlinear two-fluid system.

Periodic box, Fourier collocation, 2/3-rule dealiasing.  Time stepping is
Strang splitting: the stiff linear part (pressure coupling, viscosity and
the third-order capillary term) advances exactly per mode through the
semigroup decomposition, and the nonlinear terms advance with explicit RK2.
The per-mode closure evaluation inside the nonlinear terms is the hot loop;
it runs through :mod:`twofluid.kernels`.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .closure import (
    ConvergenceError,
    FluidParams,
    linear_coefficients,
    nonlinear_coefficients,
    closure_state,
)
from .spectral import decompose_batch

CHECKPOINT_MAGIC = b"TF2F"
CHECKPOINT_VERSION = 1


class BlowUpError(RuntimeError):
    """Solution left the small-perturbation regime (NaN or |n| > 0.5)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class Grid:
    """Periodic uniform grid with its spectral bookkeeping."""

    dim: int
    n: int
    length: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if self.n < 4 or (self.n & (self.n - 1)) != 0:
            raise ValueError("n must be a power of two >= 4")
        if self.length <= 0:
            raise ValueError("box length must be positive")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def spectral_shape(self):
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @property
    def dx(self):
        return self.length / self.n

    @property
    def volume(self):
        return self.length**self.dim

    def axes(self):
        return [np.arange(self.n) * self.dx for _ in range(self.dim)]

    def k_axes(self):
        """Wavenumber along each axis, rfft layout on the last one."""
        full = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        half = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.dx)
        out = []
        for d in range(self.dim):
            k = half if d == self.dim - 1 else full
            shape = [1] * self.dim
            shape[d] = k.size
            out.append(k.reshape(shape))
        return out

    def k_mag(self):
        k2 = sum(k**2 for k in self.k_axes())
        return np.sqrt(k2)

    def dealias_mask(self):
        cut = self.n // 3
        idx_full = np.abs(np.fft.fftfreq(self.n) * self.n)
        idx_half = np.abs(np.fft.rfftfreq(self.n) * self.n)
        mask = np.ones(self.spectral_shape, dtype=bool)
        for d in range(self.dim):
            idx = idx_half if d == self.dim - 1 else idx_full
            shape = [1] * self.dim
            shape[d] = idx.size
            mask &= idx.reshape(shape) <= cut
        return mask


@dataclass
class FieldState:
    """Perturbation fields on a grid; physical arrays are canonical."""

    grid: Grid
    n_plus: np.ndarray
    n_minus: np.ndarray
    u_plus: np.ndarray   # (dim,) + shape
    u_minus: np.ndarray
    time: float = 0.0

    def copy(self):
        return FieldState(self.grid, self.n_plus.copy(), self.n_minus.copy(),
                          self.u_plus.copy(), self.u_minus.copy(), self.time)

    def spectra(self):
        """Spectral twin of every field (rfft layout, Hermitian by reality)."""
        return {
            "n+": np.fft.rfftn(self.n_plus),
            "n-": np.fft.rfftn(self.n_minus),
            "u+": np.stack([np.fft.rfftn(c) for c in self.u_plus]),
            "u-": np.stack([np.fft.rfftn(c) for c in self.u_minus]),
        }

    def check_positivity(self):
        if np.min(self.n_plus) <= -1.0 or np.min(self.n_minus) <= -1.0:
            raise ValueError("perturbation violates positivity of the fraction densities")


@dataclass(frozen=True)
class InitSpec:
    """Initial-condition recipe: equilibrium, one mode, a bump, or random band."""

    kind: str = "zero"           # zero | mode | gaussian | random
    amplitude: float = 0.0
    mode: tuple = (1,)           # wave index per axis (kind="mode")
    width: float = 0.5           # fraction of the box (kind="gaussian")
    band: tuple = (1, 4)         # wave-index band (kind="random")
    seed: int = 0


@dataclass(frozen=True)
class EnergyReport:
    e0: float
    d0: float
    mass_plus: float
    mass_minus: float
    ek_weighted: dict | None = None


def params_digest(params: FluidParams) -> bytes:
    """Stable 16-byte digest of the physical configuration."""
    payload = ",".join(
        f"{name}={getattr(params, name)!r}"
        for name in sorted(params.__dataclass_fields__))
    return hashlib.sha256(payload.encode()).digest()[:16]


# ---------------------------------------------------------------------------
# initial conditions


def init_state(grid: Grid, spec: InitSpec) -> FieldState:
    shape = grid.shape
    n_p = np.zeros(shape)
    n_m = np.zeros(shape)
    u_p = np.zeros((grid.dim,) + shape)
    u_m = np.zeros((grid.dim,) + shape)
    if spec.kind == "zero" or spec.amplitude == 0.0:
        pass
    elif spec.kind == "mode":
        axes = grid.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        phase = sum(2.0 * np.pi * m / grid.length * x
                    for m, x in zip(spec.mode, mesh))
        n_p[...] = spec.amplitude * np.cos(phase)
    elif spec.kind == "gaussian":
        axes = grid.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        r2 = sum((x - grid.length / 2.0) ** 2 for x in mesh)
        w = spec.width * grid.length
        n_p[...] = spec.amplitude * np.exp(-r2 / (2.0 * w * w))
        n_p -= n_p.mean()  # keep zero mean so the background stays rbar
    elif spec.kind == "random":
        rng = np.random.default_rng(spec.seed)
        idx = [np.abs(np.fft.fftfreq(grid.n) * grid.n) for _ in range(grid.dim - 1)]
        idx.append(np.abs(np.fft.rfftfreq(grid.n) * grid.n))
        kidx = np.zeros(grid.spectral_shape)
        for d, ax in enumerate(idx):
            shape_d = [1] * grid.dim
            shape_d[d] = ax.size
            kidx = np.maximum(kidx, ax.reshape(shape_d))
        band = (kidx >= spec.band[0]) & (kidx <= spec.band[1])

        def rand_field():
            spec_arr = np.zeros(grid.spectral_shape, dtype=complex)
            vals = rng.normal(size=band.sum()) + 1j * rng.normal(size=band.sum())
            spec_arr[band] = vals
            f = np.fft.irfftn(spec_arr, s=shape, axes=range(len(shape)))
            m = np.abs(f).max()
            return f * (spec.amplitude / m) if m > 0 else f

        n_p[...] = rand_field()
        n_m[...] = rand_field()
        for d in range(grid.dim):
            u_p[d] = rand_field()
            u_m[d] = rand_field()
    else:
        raise ValueError(f"unknown init kind {spec.kind!r}")
    # keep every field inside the 2/3 band so products never alias back
    mask = grid.dealias_mask()
    shape = grid.shape

    def truncate(f):
        return np.fft.irfftn(mask * np.fft.rfftn(f), s=shape, axes=range(len(shape)))

    n_p = truncate(n_p)
    n_m = truncate(n_m)
    u_p = np.stack([truncate(c) for c in u_p])
    u_m = np.stack([truncate(c) for c in u_m])
    state = FieldState(grid, n_p, n_m, u_p, u_m, time=0.0)
    state.check_positivity()
    return state


# ---------------------------------------------------------------------------
# Hodge split on the grid


def hodge_split_grid(u_spec: np.ndarray, grid: Grid):
    """Split a spectral velocity into compressible scalar and solenoidal rest.

    Returns ``(phi_hat, remainder_hat)`` with ``phi_hat = -i (k . u_hat)/|k|``
    (zero at k = 0) and ``remainder_hat = u_hat - i k phi_hat / |k|``, which
    is divergence free.
    """
    ks = grid.k_axes()
    kmag = grid.k_mag()
    inv = np.where(kmag > 0, 1.0 / np.where(kmag > 0, kmag, 1.0), 0.0)
    k_dot_u = sum(k * u_spec[d] for d, k in enumerate(ks))
    phi = -1j * k_dot_u * inv
    remainder = np.stack([u_spec[d] - 1j * ks[d] * phi * inv for d in range(grid.dim)])
    return phi, remainder


# ---------------------------------------------------------------------------
# exact linear propagation

_PROP_CACHE: dict = {}
_PROP_CACHE_MAX = 8


def _linear_propagator(grid: Grid, params: FluidParams, dt: float):
    key = (grid.dim, grid.n, grid.length, params, float(dt))
    hit = _PROP_CACHE.get(key)
    if hit is not None:
        return hit
    co = linear_coefficients(params)
    kflat = grid.k_mag().ravel()
    dec = decompose_batch(kflat, co)
    S = dec.semigroup(dt).real.astype(np.float64)
    heat_p = np.exp(-co.nu1_plus * kflat**2 * dt).reshape(grid.spectral_shape)
    heat_m = np.exp(-co.nu1_minus * kflat**2 * dt).reshape(grid.spectral_shape)
    if len(_PROP_CACHE) >= _PROP_CACHE_MAX:
        _PROP_CACHE.pop(next(iter(_PROP_CACHE)))
    _PROP_CACHE[key] = (S, heat_p, heat_m)
    return S, heat_p, heat_m


def linear_propagator_step(state: FieldState, dt: float, params: FluidParams) -> FieldState:
    """Advance the linearized system exactly by ``dt`` (per-mode semigroup)."""
    grid = state.grid
    S, heat_p, heat_m = _linear_propagator(grid, params, dt)
    ks = grid.k_axes()
    kmag = grid.k_mag()
    inv = np.where(kmag > 0, 1.0 / np.where(kmag > 0, kmag, 1.0), 0.0)

    sp = state.spectra()
    out = {}
    for tag, u_spec in (("+", sp["u+"]), ("-", sp["u-"])):
        k_dot_u = sum(k * u_spec[d] for d, k in enumerate(ks))
        w = 1j * k_dot_u * inv                     # compressible scalar feeding the 4x4 block
        rem = np.stack([u_spec[d] - (-1j) * ks[d] * w * inv for d in range(grid.dim)])
        out[tag] = (w, rem)

    V = np.stack([sp["n+"].ravel(), out["+"][0].ravel(),
                  sp["n-"].ravel(), out["-"][0].ravel()], axis=1)
    V = np.einsum("mij,mj->mi", S, V)
    n_p_hat = V[:, 0].reshape(grid.spectral_shape)
    w_p = V[:, 1].reshape(grid.spectral_shape)
    n_m_hat = V[:, 2].reshape(grid.spectral_shape)
    w_m = V[:, 3].reshape(grid.spectral_shape)

    u_p_hat = np.stack([-1j * ks[d] * w_p * inv for d in range(grid.dim)]) + heat_p * out["+"][1]
    u_m_hat = np.stack([-1j * ks[d] * w_m * inv for d in range(grid.dim)]) + heat_m * out["-"][1]

    shape = grid.shape
    return FieldState(
        grid,
        _irfft(n_p_hat, shape),
        _irfft(n_m_hat, shape),
        np.stack([_irfft(u_p_hat[d], shape) for d in range(grid.dim)]),
        np.stack([_irfft(u_m_hat[d], shape) for d in range(grid.dim)]),
        state.time + dt,
    )


# ---------------------------------------------------------------------------
# nonlinear tendencies


def _irfft(spec, shape):
    return np.fft.irfftn(spec, s=shape, axes=range(len(shape)))


def nonlinear_rhs(state: FieldState, params: FluidParams, rho_guess=None):
    """Tendencies (F1, F2, F3, F4) of the reformulated system, dealiased.

    Derivatives are spectral, products pointwise; every assembled tendency
    passes once through the 2/3 mask.  ``rho_guess`` warm-starts the
    pointwise closure (the previous step's rho+ field).
    """
    grid = state.grid
    shape = grid.shape
    ks = grid.k_axes()
    mask = grid.dealias_mask()
    sp = state.spectra()

    dn_p = [_irfft(1j * k * sp["n+"], shape) for k in ks]
    dn_m = [_irfft(1j * k * sp["n-"], shape) for k in ks]
    du_p = [[_irfft(1j * ks[j] * sp["u+"][i], shape) for j in range(grid.dim)]
            for i in range(grid.dim)]
    du_m = [[_irfft(1j * ks[j] * sp["u-"][i], shape) for j in range(grid.dim)]
            for i in range(grid.dim)]
    div_u_p = sum(du_p[d][d] for d in range(grid.dim))
    div_u_m = sum(du_m[d][d] for d in range(grid.dim))
    k2 = sum(k**2 for k in ks)
    lap_u_p = [_irfft(-k2 * sp["u+"][d], shape) for d in range(grid.dim)]
    lap_u_m = [_irfft(-k2 * sp["u-"][d], shape) for d in range(grid.dim)]
    div_spec_p = sum(1j * ks[d] * sp["u+"][d] for d in range(grid.dim))
    div_spec_m = sum(1j * ks[d] * sp["u-"][d] for d in range(grid.dim))
    grad_div_p = [_irfft(1j * ks[d] * div_spec_p, shape) for d in range(grid.dim)]
    grad_div_m = [_irfft(1j * ks[d] * div_spec_m, shape) for d in range(grid.dim)]

    Rp = state.n_plus + params.rbar_plus
    Rm = state.n_minus + params.rbar_minus
    if np.min(Rp) <= 0 or np.min(Rm) <= 0:
        bad = np.unravel_index(int(np.argmin(np.minimum(Rp, Rm))), shape)
        raise ValueError(f"closure undefined: nonpositive fraction density at index {bad}")
    rho_p = kernels.solve_rho_plus_batch(Rp, Rm, params.gamma_plus, params.gamma_minus,
                                         x0=rho_guess)
    if np.any(np.isnan(rho_p)):
        bad = np.unravel_index(int(np.argmax(np.isnan(rho_p))), shape)
        raise ConvergenceError(f"pointwise closure failed to converge at index {bad}")
    st = closure_state(Rp, Rm, params, x0=rho_p)
    nc = nonlinear_coefficients(state.n_plus, state.n_minus, params, state=st)

    def dealias(f):
        return _irfft(mask * np.fft.rfftn(f), shape)

    # continuity: F = -div(n u)
    f1_spec = -sum(1j * ks[d] * np.fft.rfftn(state.n_plus * state.u_plus[d])
                   for d in range(grid.dim))
    f3_spec = -sum(1j * ks[d] * np.fft.rfftn(state.n_minus * state.u_minus[d])
                   for d in range(grid.dim))
    F1 = _irfft(mask * f1_spec, shape)
    F3 = _irfft(mask * f3_spec, shape)

    mu_p, la_p = params.mu_plus, params.lambda_plus
    mu_m, la_m = params.mu_minus, params.lambda_minus
    F2 = np.empty_like(state.u_plus)
    F4 = np.empty_like(state.u_minus)
    for i in range(grid.dim):
        conv_p = sum(state.u_plus[j] * du_p[i][j] for j in range(grid.dim))
        cross_p = sum(nc.h_plus * dn_p[j] * (du_p[i][j] + du_p[j][i])
                      + nc.k_plus * dn_m[j] * (du_p[i][j] + du_p[j][i])
                      for j in range(grid.dim))
        F2[i] = dealias(
            -nc.g_plus * dn_p[i] - nc.gbar_plus * dn_m[i] - conv_p
            + mu_p * cross_p
            + la_p * (nc.h_plus * dn_p[i] + nc.k_plus * dn_m[i]) * div_u_p
            + mu_p * nc.l_plus * lap_u_p[i]
            + (mu_p + la_p) * nc.l_plus * grad_div_p[i])
        conv_m = sum(state.u_minus[j] * du_m[i][j] for j in range(grid.dim))
        cross_m = sum(nc.h_minus * dn_p[j] * (du_m[i][j] + du_m[j][i])
                      + nc.k_minus * dn_m[j] * (du_m[i][j] + du_m[j][i])
                      for j in range(grid.dim))
        F4[i] = dealias(
            -nc.g_minus * dn_m[i] - nc.gbar_minus * dn_p[i] - conv_m
            + mu_m * cross_m
            + la_m * (nc.h_minus * dn_p[i] + nc.k_minus * dn_m[i]) * div_u_m
            + mu_m * nc.l_minus * lap_u_m[i]
            + (mu_m + la_m) * nc.l_minus * grad_div_m[i])
    return F1, F2, F3, F4, rho_p


def step(state: FieldState, dt: float, params: FluidParams,
         c_cfl: float = 0.5, rho_guess=None) -> FieldState:
    """One Strang step: half linear, RK2 nonlinear, half linear."""
    grid = state.grid
    umax = max(np.abs(state.u_plus).max(), np.abs(state.u_minus).max())
    if umax > 0 and dt > c_cfl * grid.dx / umax:
        raise ValueError(f"dt={dt:g} violates the advective bound "
                         f"{c_cfl * grid.dx / umax:g}")
    s = linear_propagator_step(state, 0.5 * dt, params)
    F1, F2, F3, F4, rho_p = nonlinear_rhs(s, params, rho_guess=rho_guess)
    mid = FieldState(grid, s.n_plus + dt * F1, s.n_minus + dt * F3,
                     s.u_plus + dt * F2, s.u_minus + dt * F4, s.time)
    G1, G2, G3, G4, rho_p = nonlinear_rhs(mid, params, rho_guess=rho_p)
    s = FieldState(grid,
                   s.n_plus + 0.5 * dt * (F1 + G1),
                   s.n_minus + 0.5 * dt * (F3 + G3),
                   s.u_plus + 0.5 * dt * (F2 + G2),
                   s.u_minus + 0.5 * dt * (F4 + G4),
                   s.time)
    s = linear_propagator_step(s, 0.5 * dt, params)
    bad = not (np.isfinite(s.n_plus).all() and np.isfinite(s.n_minus).all()
               and np.isfinite(s.u_plus).all() and np.isfinite(s.u_minus).all())
    if bad or max(np.abs(s.n_plus).max(), np.abs(s.n_minus).max()) > 0.5:
        raise BlowUpError(f"solution left the small-data regime at t={s.time:g}", state=s)
    return s


# ---------------------------------------------------------------------------
# diagnostics


def _l2sq_weights(grid: Grid):
    w = np.full(grid.spectral_shape, 2.0)
    sl = [slice(None)] * grid.dim
    sl[-1] = 0
    w[tuple(sl)] = 1.0
    if grid.n % 2 == 0:
        sl[-1] = grid.n // 2
        w[tuple(sl)] = 1.0
    return w * grid.volume / float(np.prod(grid.shape)) ** 2


def spectrum_l2sq(grid: Grid, spec):
    """Box integral of |f|^2 from the rfft spectrum (Parseval)."""
    return float(np.sum(_l2sq_weights(grid) * np.abs(spec) ** 2))


def gradient_l2sq(grid: Grid, spec, order: int = 1):
    kmag2 = grid.k_mag() ** (2 * order)
    return float(np.sum(_l2sq_weights(grid) * kmag2 * np.abs(spec) ** 2))


def energy_report(state: FieldState, params: FluidParams) -> EnergyReport:
    """Natural energy, dissipation and phase masses, evaluated spectrally."""
    grid = state.grid
    co = linear_coefficients(params)
    sp = state.spectra()
    ks = grid.k_axes()
    combo = co.beta_plus * sp["n+"] + co.beta_minus * sp["n-"]
    e0 = 0.5 * (
        spectrum_l2sq(grid, combo)
        + co.sigma_plus / co.beta2 * gradient_l2sq(grid, sp["n+"])
        + co.sigma_minus / co.beta3 * gradient_l2sq(grid, sp["n-"])
        + sum(spectrum_l2sq(grid, sp["u+"][d]) for d in range(grid.dim)) / co.beta2
        + sum(spectrum_l2sq(grid, sp["u-"][d]) for d in range(grid.dim)) / co.beta3
    )
    div_p = sum(1j * ks[d] * sp["u+"][d] for d in range(grid.dim))
    div_m = sum(1j * ks[d] * sp["u-"][d] for d in range(grid.dim))
    d0 = (
        (co.nu1_plus * sum(gradient_l2sq(grid, sp["u+"][d]) for d in range(grid.dim))
         + co.nu2_plus * spectrum_l2sq(grid, div_p)) / co.beta2
        + (co.nu1_minus * sum(gradient_l2sq(grid, sp["u-"][d]) for d in range(grid.dim))
           + co.nu2_minus * spectrum_l2sq(grid, div_m)) / co.beta3
    )
    return EnergyReport(
        e0=e0, d0=d0,
        mass_plus=float(state.n_plus.mean() * grid.volume),
        mass_minus=float(state.n_minus.mean() * grid.volume),
    )


def weighted_sup_functionals(times, norms: dict, ell: int = 3):
    """Running time-weighted suprema from sampled norm histories.

    ``norms[(variable, j)]`` holds ``||grad^j variable||_L2`` over ``times``
    for variables combo, u+, u-, n+, n-.  Returns ``(E_k arrays for k =
    0..ell, E_0 array)``; each array is nondecreasing.
    """
    times = np.asarray(times, dtype=float)

    def sobolev(variable, k_lo, k_hi):
        acc = np.zeros_like(times)
        for j in range(k_lo, k_hi + 1):
            acc += np.asarray(norms[(variable, j)]) ** 2
        return np.sqrt(acc)

    e_k = {}
    for k in range(ell + 1):
        inner = (sobolev("combo", k, ell) + sobolev("u+", k, ell)
                 + sobolev("u-", k, ell)
                 + sobolev("n+", k + 1, ell + 1) + sobolev("n-", k + 1, ell + 1))
        weighted = (1.0 + times) ** (0.75 + k / 2.0) * inner
        e_k[k] = np.maximum.accumulate(weighted)
    l2 = np.asarray(norms[("n+", 0)]) + np.asarray(norms[("n-", 0)])
    e_0 = np.maximum.accumulate((1.0 + times) ** 0.25 * l2)
    return e_k, e_0


# ---------------------------------------------------------------------------
# checkpoints


def write_checkpoint(state: FieldState, params: FluidParams, path):
    grid = state.grid
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, grid.dim))
        fh.write(struct.pack("<I", grid.n))
        fh.write(struct.pack("<d", grid.length))
        fh.write(params_digest(params))
        fh.write(struct.pack("<d", state.time))
        for arr in (state.n_plus, state.n_minus, *state.u_plus, *state.u_minus):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path, params: FluidParams | None = None) -> FieldState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a twofluid checkpoint")
        version, dim = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", fh.read(4))
        (length,) = struct.unpack("<d", fh.read(8))
        digest = fh.read(16)
        if params is not None and digest != params_digest(params):
            raise ValueError("checkpoint was written with different physical parameters")
        (time,) = struct.unpack("<d", fh.read(8))
        grid = Grid(dim=dim, n=n, length=length)
        count = int(np.prod(grid.shape))

        def read_arr():
            return np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(grid.shape).copy()

        n_p = read_arr()
        n_m = read_arr()
        u_p = np.stack([read_arr() for _ in range(dim)])
        u_m = np.stack([read_arr() for _ in range(dim)])
    return FieldState(grid, n_p, n_m, u_p, u_m, time=time)
