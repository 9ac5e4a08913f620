"""Privacy layer: budgets, Laplace noise, the four one-shot smoothers and
the clip + cumulative-minimum projection onto legal survival curves.

Every smoother draws a fixed number of Laplace variates per call so the
privacy accounting can be audited through :attr:`NoiseSource.draws`:

============  ==========================================
DCT           K (one per coefficient)
Wavelet       padded length (next power of two >= K)
TV            K
Weibull       2 (shape, then scale)
============  ==========================================
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import transforms
from .errors import ParameterError
from .survival import SurvivalCurve, WeibullParams, weibull_fit, weibull_survival

WEIBULL_PARAM_FLOOR = 1e-6
_MASK64 = (1 << 64) - 1


class SmootherKind(str, enum.Enum):
    DCT = "dct"
    WAVELET = "wavelet"
    TV = "tv"
    WEIBULL = "weibull"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon_global: float
    num_nodes: int = 3

    def __post_init__(self):
        if not (math.isfinite(self.epsilon_global) and self.epsilon_global > 0):
            raise ParameterError(f"epsilon must be positive, got {self.epsilon_global}")
        if self.num_nodes < 1:
            raise ParameterError(f"need at least one node, got {self.num_nodes}")

    @property
    def per_node_epsilon(self) -> float:
        return self.epsilon_global / self.num_nodes


@dataclass(frozen=True)
class TVParams:
    lambda0: float = 0.12
    n0: int = 50
    alpha: float = 0.25


class NoiseSource:
    """Seeded, single-owner stream of uniforms and Laplace variates.

    Two sources built from the same 64-bit seed yield identical streams.
    ``draws`` counts Laplace variates handed out so far.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    def _uniform(self, size):
        u = self._rng.random(size)
        # u == 0 maps to an infinite variate; redraw (probability 2**-53)
        if size is None:
            while u == 0.0:
                u = self._rng.random()
            return u
        bad = u == 0.0
        while bad.any():
            u[bad] = self._rng.random(int(bad.sum()))
            bad = u == 0.0
        return u

    def laplace(self, scale: float, size: int | None = None):
        """Laplace(0, scale) by inverse CDF: ``-b * sign(h) * ln(1 - 2|h|)``, h = u - 1/2."""
        h = self._uniform(size) - 0.5
        self.draws += 1 if size is None else int(size)
        out = -scale * np.sign(h) * np.log1p(-2.0 * np.abs(h))
        return float(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return self._rng.permutation(n)

    def multinomial(self, n: int, probs) -> np.ndarray:
        return self._rng.multinomial(n, probs)


class ZeroNoise(NoiseSource):
    """Noise source whose Laplace draws are all exactly zero.

    Still counts draws, so the audit contract can be checked noiselessly.
    """

    def laplace(self, scale: float, size: int | None = None):
        self.draws += 1 if size is None else int(size)
        return 0.0 if size is None else np.zeros(size)


def sensitivity(K: int) -> float:
    """Node-level l-infinity sensitivity of a K-point KM release."""
    if K < 1:
        raise ParameterError(f"grid length must be positive, got {K}")
    return 1.0 / K


def laplace_scale(budget: PrivacyBudget, K: int) -> float:
    """b = (1/K) / (epsilon / M) = M / (K * epsilon)."""
    return sensitivity(K) / budget.per_node_epsilon


def laplace_sample(scale: float, rng: NoiseSource) -> float:
    if not scale > 0:
        raise ParameterError(f"Laplace scale must be positive, got {scale}")
    return rng.laplace(scale)


def project_values(values) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    return np.minimum.accumulate(v)


def project_curve(raw: SurvivalCurve) -> SurvivalCurve:
    """Clip to [0, 1], then cumulative minimum. Idempotent."""
    return raw.with_values(project_values(raw.values))


def smooth_dct(curve: SurvivalCurve, scale: float, rng: NoiseSource) -> SurvivalCurve:
    c = transforms.dct_forward(curve.values)
    noisy = c.with_coeffs(c.coeffs + rng.laplace(scale, len(c)))
    return curve.with_values(project_values(transforms.dct_inverse(noisy)))


def smooth_wavelet(curve: SurvivalCurve, scale: float, rng: NoiseSource) -> SurvivalCurve:
    w = transforms.haar_decompose(curve.values)
    # every coefficient is perturbed, including those coming from padding
    noisy = w.with_coeffs(w.coeffs + rng.laplace(scale, len(w)))
    return curve.with_values(project_values(transforms.haar_reconstruct(noisy)))


def smooth_tv(
    curve: SurvivalCurve,
    n: int,
    scale: float,
    tv_params: TVParams,
    rng: NoiseSource,
) -> SurvivalCurve:
    """TV-denoise the local curve, then add zero-centred Laplace noise.

    The noise vector has its own empirical mean removed, so the perturbation
    sums to zero before projection.
    """
    lam = transforms.adaptive_tv_weight(n, tv_params.lambda0, tv_params.n0, tv_params.alpha)
    x_hat = transforms.tv_denoise(curve.values, lam)
    eta = rng.laplace(scale, curve.grid.K)
    return curve.with_values(project_values(x_hat + (eta - eta.mean())))


def perturb_weibull(params: WeibullParams, scale: float, rng: NoiseSource) -> WeibullParams:
    shape = params.shape + rng.laplace(scale)
    lam = params.scale + rng.laplace(scale)
    return WeibullParams(max(shape, WEIBULL_PARAM_FLOOR), max(lam, WEIBULL_PARAM_FLOOR))


def smooth_weibull(curve: SurvivalCurve, scale: float, rng: NoiseSource) -> SurvivalCurve:
    """Fit, perturb both parameters once, re-evaluate on the grid.

    Raises :class:`~dpkm.errors.FitError` if the curve admits no fit.
    """
    params = perturb_weibull(weibull_fit(curve), scale, rng)
    with np.errstate(over="ignore"):
        smooth = weibull_survival(params, curve.grid)
    return project_curve(smooth)


def smooth(
    kind: SmootherKind,
    curve: SurvivalCurve,
    scale: float,
    rng: NoiseSource,
    *,
    n: int | None = None,
    tv_params: TVParams | None = None,
) -> SurvivalCurve:
    kind = SmootherKind(kind)
    if kind is SmootherKind.DCT:
        return smooth_dct(curve, scale, rng)
    if kind is SmootherKind.WAVELET:
        return smooth_wavelet(curve, scale, rng)
    if kind is SmootherKind.TV:
        if n is None:
            raise ParameterError("the TV smoother needs the local sample size n")
        return smooth_tv(curve, n, scale, tv_params or TVParams(), rng)
    return smooth_weibull(curve, scale, rng)


def expected_draws(kind: SmootherKind, K: int) -> int:
    kind = SmootherKind(kind)
    if kind is SmootherKind.WAVELET:
        return 1 << (K - 1).bit_length()
    if kind is SmootherKind.WEIBULL:
        return 2
    return K
