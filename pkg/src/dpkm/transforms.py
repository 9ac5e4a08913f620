"""Deterministic signal transforms used by the smoothers.

Both the DCT and the Haar transform are orthonormal, so i.i.d. noise added
to coefficients has the same per-entry variance after synthesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import ParameterError

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Transform-domain coefficients.

    For Haar the coefficients describe the signal after symmetric padding to
    a power of two; ``original_length`` is what synthesis truncates back to.
    """

    coeffs: np.ndarray
    original_length: int

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float, copy=True).reshape(-1)
        c.flags.writeable = False
        if self.original_length < 1 or c.size < self.original_length:
            raise ParameterError(
                f"original_length {self.original_length} incompatible with {c.size} coefficients"
            )
        object.__setattr__(self, "coeffs", c)

    def __len__(self) -> int:
        return int(self.coeffs.size)

    def with_coeffs(self, coeffs) -> "CoefficientVector":
        return CoefficientVector(coeffs, self.original_length)


def _as_signal(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ParameterError("transform input must be nonempty")
    return v


def dct_forward(values) -> CoefficientVector:
    """Orthonormal type-II DCT."""
    v = _as_signal(values)
    return CoefficientVector(fft.dct(v, type=2, norm="ortho"), v.size)


def dct_inverse(coeffs: CoefficientVector) -> np.ndarray:
    """Orthonormal type-III DCT, the exact inverse of :func:`dct_forward`."""
    c = coeffs.coeffs
    if c.size != coeffs.original_length:
        raise ParameterError("DCT coefficient vectors are never padded")
    return fft.idct(c, type=2, norm="ortho")


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def haar_decompose(values) -> CoefficientVector:
    """Full-depth orthonormal Haar analysis.

    The input is symmetrically padded (``x[N-1], x[N-2], ...``) to the next
    power of two. Output layout is ``[approx, d_coarsest, ..., d_finest]``
    where level ``j`` detail block has ``2**j`` entries.
    """
    v = _as_signal(values)
    n = v.size
    padded_len = _next_pow2(n)
    a = np.pad(v, (0, padded_len - n), mode="symmetric") if padded_len > n else v.copy()
    details = []
    while a.size > 1:
        even, odd = a[0::2], a[1::2]
        details.append((even - odd) / _SQRT2)
        a = (even + odd) / _SQRT2
    return CoefficientVector(np.concatenate([a] + details[::-1]), n)


def haar_reconstruct(coeffs: CoefficientVector) -> np.ndarray:
    """Inverse of :func:`haar_decompose`, truncated to ``original_length``."""
    c = coeffs.coeffs
    m = c.size
    if m == 0 or m & (m - 1):
        raise ParameterError(f"Haar coefficient count must be a power of two, got {m}")
    a = c[:1]
    pos = 1
    while pos < m:
        d = c[pos : 2 * pos]
        out = np.empty(2 * pos)
        out[0::2] = (a + d) / _SQRT2
        out[1::2] = (a - d) / _SQRT2
        a = out
        pos *= 2
    return a[: coeffs.original_length].copy()


def _condat_prox(y: np.ndarray, lam: float) -> np.ndarray:
    """argmin_x 0.5*||x - y||^2 + lam * sum|x[k+1] - x[k]|.

    Condat's direct (non-iterative) taut-string style algorithm; worst case
    O(N^2), linear in practice.
    """
    n = y.size
    x = np.empty(n)
    k = k0 = kplus = kminus = 0
    umin, umax = lam, -lam
    vmin, vmax = y[0] - lam, y[0] + lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                x[k0 : kminus + 1] = vmin
                k0 = kminus + 1
                k = kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                x[k0 : kplus + 1] = vmax
                k0 = kplus + 1
                k = kplus = k0
                vmax = y[k0]
                umax = -lam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                x[k0 : k + 1] = vmin
                return x
        umin += y[k + 1] - vmin
        if umin < -lam:
            x[k0 : kminus + 1] = vmin
            k0 = kminus + 1
            k = kplus = kminus = k0
            vmin = y[k0]
            vmax = vmin + 2.0 * lam
            umin, umax = lam, -lam
            continue
        umax += y[k + 1] - vmax
        if umax > lam:
            x[k0 : kplus + 1] = vmax
            k0 = kplus + 1
            k = kplus = kminus = k0
            vmax = y[k0]
            vmin = vmax - 2.0 * lam
            umin, umax = lam, -lam
            continue
        k += 1
        if umin >= lam:
            kminus = k
            vmin += (umin - lam) / (kminus - k0 + 1)
            umin = lam
        if umax <= -lam:
            kplus = k
            vmax += (umax + lam) / (kplus - k0 + 1)
            umax = -lam


def tv_objective(x, y, lam: float) -> float:
    """``||x - y||^2 + lam * TV(x)``, the objective minimised by :func:`tv_denoise`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum((x - y) ** 2) + lam * np.sum(np.abs(np.diff(x))))


def tv_denoise(y, lam: float) -> np.ndarray:
    """Exact minimiser of ``||x - y||^2 + lam * TV(x)``.

    The squared error carries no 1/2 factor here, so the proximal weight
    handed to the solver is ``lam / 2``.
    """
    if not (lam >= 0 and math.isfinite(lam)):
        raise ParameterError(f"TV weight must be finite and non-negative, got {lam}")
    v = _as_signal(y)
    # constant input is already optimal; skip the solver's running-mean drift
    if lam == 0 or v.size == 1 or np.all(v == v[0]):
        return v.copy()
    return _condat_prox(v, lam / 2.0)


def adaptive_tv_weight(n: int, lambda0: float, n0: int, alpha: float) -> float:
    """lambda(n) = lambda0 * (n / n0)**alpha * sqrt(ln(n + 1))."""
    if n < 1:
        raise ParameterError(f"node size must be at least 1, got {n}")
    return lambda0 * (n / n0) ** alpha * math.sqrt(math.log(n + 1))
