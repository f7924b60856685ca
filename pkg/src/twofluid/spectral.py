"""Per-frequency analysis of the linearized compressible subsystem.

After the Hodge split, the compressible unknowns ``(n+, phi+, n-, phi-)``
evolve mode-by-mode under a 4x4 Green matrix ``A1(|xi|)``.  This module
builds ``A1``, computes its quartic spectrum, assembles the semigroup
``exp(t A1)`` from spectral projectors (with a dedicated branch for the
near-double diffusive pair, where the Lagrange denominators degenerate and
the semigroup picks up a ``t*exp(lambda*t)`` term), and provides the smooth
low/high frequency splitting.

Batch helpers operate on whole arrays of frequencies; the dataclass API
wraps them one mode at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .closure import LinearCoefficients

# Relative gap below which the diffusive pair is treated as confluent.  At
# the window edge the distinct-branch projectors carry ~1/gap cancellation,
# so the switch must happen well before the gap reaches sqrt(eps).
EPS_CONFLUENT = 2e-6

_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_I4 = np.eye(4)


class UnsupportedDegeneracyError(ValueError):
    """Eigenvalue collision outside the lone diffusive-pair case."""


@dataclass(frozen=True)
class ModeSystem:
    """Green matrix of one frequency magnitude, with its coefficient snapshot."""

    xi: float
    a1: np.ndarray
    coeffs: LinearCoefficients


@dataclass(frozen=True)
class SemigroupDecomposition:
    """Spectral decomposition of ``exp(t A1)`` at one frequency.

    ``branch`` is ``"distinct"`` (four Lagrange projectors) or
    ``"confluent"`` (diffusive pair collapsed: the fourth term enters the
    semigroup weighted by ``t``).  ``ordering_fallback`` marks modes where
    the acoustic/diffusive pair structure was ambiguous and a plain
    magnitude sort was used.
    """

    xi: float
    branch: str
    eigenvalues: np.ndarray
    projectors: np.ndarray
    discriminant_R: complex
    lambda_tilde3: complex
    lambda_tilde4: complex
    ordering_fallback: bool


@dataclass(frozen=True)
class FrequencyCutoff:
    """Smooth radial symbol: 1 inside ``eta/2``, 0 outside ``eta``."""

    eta: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("cutoff radius eta must be positive")

    def profile(self, xi):
        xi = np.asarray(xi, dtype=float)
        y = np.clip((2.0 * xi / self.eta - 1.0), 0.0, 1.0)

        def bump(z):
            out = np.zeros_like(z)
            pos = z > 0
            out[pos] = np.exp(-1.0 / z[pos])
            return out

        a = bump(1.0 - y)
        b = bump(y)
        return a / (a + b)


def spectral_constants(coeffs: LinearCoefficients):
    """Pair discriminant R, the two diffusive slopes, and the damping floor.

    The damping floor ``nubar`` is the minimum of the acoustic decay rate
    and the slower diffusive rate; its definition depends on whether R is
    real or imaginary (at R = 0 the two coincide).
    """
    b1, b4 = coeffs.beta1, coeffs.beta4
    S = b1 + b4
    X = b1 * coeffs.nu_minus + b4 * coeffs.nu_plus
    Y = b1 * coeffs.sigma_minus + b4 * coeffs.sigma_plus
    R = np.sqrt(complex(X * X - 4.0 * S * Y))
    lt3 = (-X + R) / (2.0 * S)
    lt4 = (-X - R) / (2.0 * S)
    acoustic = (b1 * coeffs.nu_plus + b4 * coeffs.nu_minus) / (2.0 * S)
    if abs(R.imag) > 0:
        nubar = min(acoustic, X / (2.0 * S))
    else:
        nubar = min(acoustic, -lt3.real)
    return R, lt3, lt4, acoustic, nubar


def build_mode_system(xi: float, coeffs: LinearCoefficients) -> ModeSystem:
    """Green matrix at frequency magnitude ``xi`` (zero matrix at xi=0)."""
    if xi < 0:
        raise ValueError("frequency magnitude must be >= 0")
    return ModeSystem(xi=float(xi), a1=batch_green(np.asarray([xi]), coeffs)[0], coeffs=coeffs)


def batch_green(xis, coeffs: LinearCoefficients):
    xis = np.asarray(xis, dtype=float)
    A = np.zeros(xis.shape + (4, 4))
    x3 = xis**3
    x2 = xis**2
    A[..., 0, 1] = -xis
    A[..., 1, 0] = coeffs.beta1 * xis + coeffs.sigma_plus * x3
    A[..., 1, 1] = -coeffs.nu_plus * x2
    A[..., 1, 2] = coeffs.beta2 * xis
    A[..., 2, 3] = -xis
    A[..., 3, 0] = coeffs.beta3 * xis
    A[..., 3, 2] = coeffs.beta4 * xis + coeffs.sigma_minus * x3
    A[..., 3, 3] = -coeffs.nu_minus * x2
    return A


def characteristic_coeffs(mode: ModeSystem):
    """Coefficients (c3, c2, c1, c0) of ``l^4 + c3 l^3 + c2 l^2 + c1 l + c0``."""
    c3, c2, c1, c0 = batch_char_coeffs(np.asarray([mode.xi]), mode.coeffs)
    return float(c3[0]), float(c2[0]), float(c1[0]), float(c0[0])


def batch_char_coeffs(xis, coeffs: LinearCoefficients):
    xis = np.asarray(xis, dtype=float)
    a2 = xis * xis
    b1, b4 = coeffs.beta1, coeffs.beta4
    np_, nm_ = coeffs.nu_plus, coeffs.nu_minus
    sp, sm = coeffs.sigma_plus, coeffs.sigma_minus
    c3 = (np_ + nm_) * a2
    c2 = (b1 + b4) * a2 + (sp + sm + np_ * nm_) * a2 * a2
    c1 = (b1 * nm_ + b4 * np_) * a2 * a2 + (np_ * sm + nm_ * sp) * a2**3
    c0 = (b1 * sm + b4 * sp) * a2**3 + sp * sm * a2**4
    return c3, c2, c1, c0


def _polish_roots(lam, c3, c2, c1, c0, steps: int = 2):
    """Guarded Newton refinement of eigenvalues on the quartic.

    The direct eigensolve is well conditioned near clustered pairs but its
    absolute error scales with the matrix norm, which drowns the tiny
    diffusive eigenvalues at small frequencies.  Newton on the quartic fixes
    those (its coefficients scale out), and is skipped whenever the
    polynomial value is at the level of its own evaluation noise.
    """
    c3e, c2e, c1e, c0e = (np.atleast_1d(c)[:, None] for c in (c3, c2, c1, c0))
    for _ in range(steps):
        p = (((lam + c3e) * lam + c2e) * lam + c1e) * lam + c0e
        noise = np.finfo(float).eps * (
            np.abs(lam) ** 4 + np.abs(c3e * lam**3) + np.abs(c2e * lam**2)
            + np.abs(c1e * lam) + np.abs(c0e))
        dp = ((4.0 * lam + 3.0 * c3e) * lam + 2.0 * c2e) * lam + c1e
        ok = (np.abs(p) > 4.0 * noise) & (np.abs(dp) > 0)
        lam = np.where(ok, lam - p / np.where(ok, dp, 1.0), lam)
    return lam


def batch_eigenvalues(xis, coeffs: LinearCoefficients):
    """Eigenvalues of the Green matrix for an array of frequencies."""
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    A = batch_green(xis, coeffs).astype(complex)
    lam = np.linalg.eigvals(A)
    c3, c2, c1, c0 = batch_char_coeffs(xis, coeffs)
    return _polish_roots(lam, c3, c2, c1, c0)


def _order_roots_distinct(lam):
    """Acoustic pair first (by descending Im), then the remaining pair by Re.

    Returns (ordered roots, fallback flag); fallback = plain magnitude sort
    when no pair stands out by imaginary part.
    """
    n = lam.shape[0]
    scale = np.abs(lam).max(axis=1)
    aim = np.abs(lam.imag)
    order = np.argsort(-aim, axis=1, kind="stable")
    a_im = np.take_along_axis(aim, order, axis=1)
    # ambiguous when the 2nd and 3rd largest |Im| are indistinguishable,
    # including the all-real case
    fallback = (a_im[:, 1] - a_im[:, 2]) <= 1e-9 * np.maximum(scale, 1e-300)
    out = np.empty_like(lam)
    idx_a = order[:, :2]
    la = np.take_along_axis(lam, idx_a, axis=1)
    swap = la[:, 0].imag < la[:, 1].imag
    la[swap] = la[swap][:, ::-1]
    lb = np.take_along_axis(lam, order[:, 2:], axis=1)
    # conjugate pairs carry eps-level real-part differences; compare with a
    # relative tolerance so the tie-break by imaginary part stays stable
    pair_mag = np.maximum(np.abs(lb[:, 0]), np.abs(lb[:, 1]))
    near = np.abs(lb[:, 0].real - lb[:, 1].real) <= 1e-7 * pair_mag
    swap_b = np.where(near, lb[:, 0].imag < lb[:, 1].imag,
                      lb[:, 0].real < lb[:, 1].real)
    lb[swap_b] = lb[swap_b][:, ::-1]
    out[:, 0], out[:, 1], out[:, 2], out[:, 3] = la[:, 0], la[:, 1], lb[:, 0], lb[:, 1]
    if fallback.any():
        for r in np.nonzero(fallback)[0]:
            out[r] = sorted(lam[r], key=lambda z: (-abs(z), -z.real, -z.imag))
    return out, fallback


@dataclass
class BatchDecomposition:
    """Semigroup decompositions for an array of frequency magnitudes."""

    xis: np.ndarray
    coeffs: LinearCoefficients
    eigenvalues: np.ndarray   # (n, 4); confluent rows hold (l1, l2, mu, mu)
    projectors: np.ndarray    # (n, 4, 4, 4) complex
    confluent: np.ndarray     # (n,) bool
    fallback: np.ndarray      # (n,) bool

    def weights(self, t: float):
        w = np.exp(self.eigenvalues * t)
        if self.confluent.any():
            w[self.confluent, 3] = t * np.exp(self.eigenvalues[self.confluent, 2] * t)
        return w

    def semigroup(self, t: float):
        """``exp(t A1)`` for every mode, shape (n, 4, 4)."""
        return np.einsum("ni,nijk->njk", self.weights(t), self.projectors)

    def apply(self, t: float, U0):
        """Evolve mode vectors: shape (n, 4) -> (n, 4)."""
        return np.einsum("ni,nijk,nk->nj", self.weights(t), self.projectors,
                         np.asarray(U0, dtype=complex))


def decompose_batch(xis, coeffs: LinearCoefficients, eps_conf: float = EPS_CONFLUENT) -> BatchDecomposition:
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    n = xis.shape[0]
    A = batch_green(xis, coeffs).astype(complex)
    c3, c2, c1, c0 = batch_char_coeffs(xis, coeffs)
    lam = batch_eigenvalues(xis, coeffs)
    scale = np.abs(lam).max(axis=1)

    d = np.stack([np.abs(lam[:, i] - lam[:, j]) for i, j in _PAIRS], axis=1)
    imin = d.argmin(axis=1)
    dmin = d[np.arange(n), imin]
    zero = scale == 0.0
    conf = (~zero) & (dmin <= eps_conf * scale)

    lam_o = np.zeros((n, 4), dtype=complex)
    P = np.zeros((n, 4, 4, 4), dtype=complex)
    fallback = np.zeros(n, dtype=bool)

    if zero.any():
        P[zero, 0] = _I4

    dist = (~zero) & (~conf)
    if dist.any():
        ld, fb = _order_roots_distinct(lam[dist])
        lam_o[dist] = ld
        fallback[dist] = fb
        Ad = A[dist]
        for i in range(4):
            others = [j for j in range(4) if j != i]
            li = ld[:, i]
            M = np.broadcast_to(_I4, Ad.shape).astype(complex)
            den = np.ones(Ad.shape[0], dtype=complex)
            for j in others:
                lj = ld[:, j]
                M = M @ (lj[:, None, None] * _I4 - Ad)
                den = den * (lj - li)
            P[dist, i] = M / den[:, None, None]

    if conf.any():
        rows = np.nonzero(conf)[0]
        for r in rows:
            l = lam[r]
            i3, i4 = _PAIRS[imin[r]]
            rest = [k for k in range(4) if k not in (i3, i4)]
            l1, l2 = l[rest[0]], l[rest[1]]
            if l1.imag < l2.imag:
                l1, l2 = l2, l1
            mx = scale[r]
            if abs(l1 - l2) <= eps_conf * mx:
                raise UnsupportedDegeneracyError(
                    f"more than one eigenvalue collision at xi={xis[r]:.6g}")
            mu = -(c3[r] + l1 + l2) / 2.0  # pair midpoint via the trace (stable)
            if min(abs(l1 - mu), abs(l2 - mu)) <= eps_conf * mx:
                raise UnsupportedDegeneracyError(
                    f"acoustic/diffusive eigenvalue collision at xi={xis[r]:.6g}")
            Am = A[r]
            B2 = (mu * _I4 - Am) @ (mu * _I4 - Am)
            P1 = (l2 * _I4 - Am) @ B2 / ((l2 - l1) * (mu - l1) ** 2)
            P2 = (l1 * _I4 - Am) @ B2 / ((l1 - l2) * (mu - l2) ** 2)
            den = (l1 - mu) * (l2 - mu)
            C12 = (l1 * _I4 - Am) @ (l2 * _I4 - Am)
            P4 = -C12 @ (mu * _I4 - Am) / den
            P3 = C12 / den + (l1 + l2 - 2.0 * mu) / den * P4
            lam_o[r] = (l1, l2, mu, mu)
            P[r, 0], P[r, 1], P[r, 2], P[r, 3] = P1, P2, P3, P4

    return BatchDecomposition(xis=xis, coeffs=coeffs, eigenvalues=lam_o,
                              projectors=P, confluent=conf, fallback=fallback)


def projector_residuals(batch: BatchDecomposition):
    """Worst scaled residual of the projector algebra per mode.

    Distinct rows check resolution of identity, idempotence, mutual
    annihilation and spectral reconstruction; confluent rows check the
    three-projector resolution of identity.  Idempotence and annihilation
    are scaled by the projector magnitudes (they grow near confluence),
    reconstruction by the matrix magnitude.
    """
    P = batch.projectors
    lam = batch.eigenvalues
    A = batch_green(batch.xis, batch.coeffs)
    n = batch.xis.shape[0]
    res = np.zeros(n)
    pmax = np.abs(P).max(axis=(2, 3))
    psum = P.sum(axis=1)
    conf = batch.confluent
    ident = np.abs(psum - _I4).max(axis=(1, 2))
    if conf.any():
        ident[conf] = np.abs(P[conf, 0] + P[conf, 1] + P[conf, 2] - _I4).max(axis=(1, 2))
    res = np.maximum(res, ident)
    recon = np.einsum("ni,nijk->njk", lam, P)
    if conf.any():
        # confluent rows: A = l1 P1 + l2 P2 + mu P3 + P4 (P4 is the nilpotent)
        recon[conf] += (1.0 - lam[conf, 3])[:, None, None] * P[conf, 3]
    rec = np.abs(recon - A).max(axis=(1, 2)) / (1.0 + np.abs(A).max(axis=(1, 2)))
    res = np.maximum(res, rec)
    dist = ~conf
    if dist.any():
        Pd = P[dist]
        pm = pmax[dist]
        for i in range(4):
            idem = np.abs(Pd[:, i] @ Pd[:, i] - Pd[:, i]).max(axis=(1, 2)) / (1.0 + pm[:, i] ** 2)
            res[dist] = np.maximum(res[dist], idem)
            for j in range(4):
                if j != i:
                    ann = (np.abs(Pd[:, i] @ Pd[:, j]).max(axis=(1, 2))
                           / ((1.0 + pm[:, i]) * (1.0 + pm[:, j])))
                    res[dist] = np.maximum(res[dist], ann)
    return res


def eigenvalues_exact(mode: ModeSystem):
    """Ordered quartic eigenvalues of the mode's Green matrix."""
    if mode.xi == 0.0:
        return np.zeros(4, dtype=complex)
    lam = batch_eigenvalues(np.asarray([mode.xi]), mode.coeffs)
    ordered, _ = _order_roots_distinct(lam)
    return ordered[0]


def eigenvalues_asymptotic(xi, coeffs: LinearCoefficients):
    """Leading small-frequency expansions of the four eigenvalues."""
    R, lt3, lt4, acoustic, _ = spectral_constants(coeffs)
    xi = np.asarray(xi, dtype=float)
    S = coeffs.beta1 + coeffs.beta4
    osc = 1j * np.sqrt(S) * xi
    lam = np.empty(xi.shape + (4,), dtype=complex)
    lam[..., 0] = -acoustic * xi**2 + osc
    lam[..., 1] = -acoustic * xi**2 - osc
    lam[..., 2] = lt3 * xi**2
    lam[..., 3] = lt4 * xi**2
    return lam


def semigroup_decomposition(mode: ModeSystem, eps_conf: float = EPS_CONFLUENT) -> SemigroupDecomposition:
    """Projector (or confluent-pair) decomposition of one mode's semigroup."""
    if mode.xi <= 0:
        raise ValueError("semigroup decomposition requires xi > 0")
    batch = decompose_batch(np.asarray([mode.xi]), mode.coeffs, eps_conf=eps_conf)
    R, lt3, lt4, _, _ = spectral_constants(mode.coeffs)
    return SemigroupDecomposition(
        xi=mode.xi,
        branch="confluent" if batch.confluent[0] else "distinct",
        eigenvalues=batch.eigenvalues[0],
        projectors=batch.projectors[0],
        discriminant_R=complex(R),
        lambda_tilde3=complex(lt3),
        lambda_tilde4=complex(lt4),
        ordering_fallback=bool(batch.fallback[0]),
    )


def semigroup_eval(decomp: SemigroupDecomposition, t: float):
    """``exp(t A1)`` as a 4x4 complex matrix; identity at t = 0."""
    if t < 0:
        raise ValueError("t must be >= 0")
    lam = decomp.eigenvalues
    w = np.exp(lam * t)
    if decomp.branch == "confluent":
        w = w.copy()
        w[3] = t * np.exp(lam[2] * t)
    return np.einsum("i,ijk->jk", w, decomp.projectors)


def matrix_exp_oracle(M, t: float):
    """Independent check: ``exp(t M)`` by scaling-and-squaring (Pade kernel)."""
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix entries must be finite")
    E = scipy.linalg.expm(t * M)
    if not np.all(np.isfinite(E)):
        raise OverflowError("matrix exponential overflowed; ||tM|| too extreme")
    return E


def heat_factor(xi, nu1: float, t: float):
    """Scalar decay of the incompressible (heat) channels: exp(-nu1 xi^2 t)."""
    return np.exp(-nu1 * np.asarray(xi, dtype=float) ** 2 * t)


def frequency_split(field, xi, cutoff: FrequencyCutoff):
    """Split a spectral field into low and high parts; low + high == field."""
    field = np.asarray(field)
    phi = cutoff.profile(xi)
    low = phi * field
    return low, field - low


def choose_eta(coeffs: LinearCoefficients, rel_tol: float = 0.1, cap: float = 1.0) -> float:
    """Largest cutoff radius where the eigenvalue asymptotics hold to ``rel_tol``."""
    from itertools import permutations

    xis = np.geomspace(1e-4, cap, 160)
    ex = batch_eigenvalues(xis, coeffs)
    ay = eigenvalues_asymptotic(xis, coeffs)
    # match exact to asymptotic roots by minimum total distance (the two
    # branches can have equal real parts, so sorting is not reliable)
    perms = np.array(list(permutations(range(4))))
    cost = np.abs(ex[:, perms] - ay[:, None, :]).sum(axis=2)
    best = cost.argmin(axis=1)
    matched = ex[np.arange(len(xis))[:, None], perms[best]]
    rel = np.abs(matched - ay) / np.maximum(np.abs(matched), 1e-300)
    ok = (rel < rel_tol).all(axis=1)
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return cap
    if bad[0] == 0:
        return float(xis[0])
    return float(xis[bad[0] - 1])
