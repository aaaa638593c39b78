"""Image losses for delighting/relighting: pixel-wise, focal frequency, and their
cycle-consistent compositions over residual operators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .metrics import _arr, _pair, l1_map


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite image loss. Defaults are the published values."""

    lambda_l1: float = 1.0
    lambda_perc: float = 0.3
    lambda_freq: float = 0.2
    lambda_adv: float = 0.15
    lambda_cycle: float = 0.25

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"{k} must be a finite non-negative number")


def l1_loss(a, b) -> float:
    return l1_map(a, b)


def l1_grad(a, b) -> np.ndarray:
    """Subgradient of :func:`l1_loss` with respect to ``a`` (zero at ties)."""
    a, b = _pair(a, b)
    return np.sign(a - b) / a.size


def smooth_l1_loss(a, b, eps: float) -> float:
    """Charbonnier surrogate ``mean(sqrt(d**2 + eps**2) - eps)``; equals L1 when ``eps == 0``."""
    if eps == 0.0:
        return l1_loss(a, b)
    a, b = _pair(a, b)
    return float(np.mean(np.sqrt((a - b) ** 2 + eps * eps) - eps))


def smooth_l1_grad(a, b, eps: float) -> np.ndarray:
    if eps == 0.0:
        return l1_grad(a, b)
    a, b = _pair(a, b)
    d = a - b
    return d / np.sqrt(d * d + eps * eps) / a.size


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def _as_hwc(a):
    return a[..., None] if a.ndim == 2 else a


def _spectra(a, b):
    a, b = _pair(a, b)
    a, b = _as_hwc(a), _as_hwc(b)
    h, w = a.shape[:2]
    shape = (_next_pow2(h), _next_pow2(w))
    fa = np.fft.fft2(a, s=shape, axes=(0, 1), norm="ortho")
    fb = np.fft.fft2(b, s=shape, axes=(0, 1), norm="ortho")
    return fa - fb, a.shape


def focal_frequency_loss(a, b) -> float:
    """Focal frequency loss with spectrum weight ``|dF|`` normalised to max 1.

    Inputs are zero-padded to the next power of two per axis; DFTs are orthonormal.
    """
    diff, _ = _spectra(a, b)
    d = (diff * diff.conj()).real
    dmax = d.max(axis=(0, 1), keepdims=True)
    safe = np.where(dmax > 0.0, dmax, 1.0)
    w = np.where(dmax > 0.0, np.sqrt(d / safe), 0.0)
    return float(np.mean(w * d))


def focal_frequency_grad(a, b) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient with respect to ``a``.

    The spectrum weight is differentiated too (including the max normaliser),
    so the gradient matches finite differences of :func:`focal_frequency_loss`.
    """
    diff, shape = _spectra(a, b)
    P, Q, C = diff.shape
    d = (diff * diff.conj()).real
    flat = d.reshape(P * Q, C)
    arg = flat.argmax(axis=0)
    dmax = flat[arg, np.arange(C)]
    loss_c = np.zeros(C)
    dl_dd = np.zeros_like(flat)
    for c in range(C):
        if dmax[c] <= 0.0:
            continue
        root = math.sqrt(dmax[c])
        s15 = np.sum(flat[:, c] ** 1.5)
        loss_c[c] = s15 / root
        dl_dd[:, c] = 1.5 * np.sqrt(flat[:, c]) / root
        dl_dd[arg[c], c] -= 0.5 * s15 / dmax[c] ** 1.5
    n = P * Q * C
    coef = dl_dd.reshape(P, Q, C) / n
    back = np.fft.ifft2(coef * diff, axes=(0, 1), norm="ortho").real
    grad = 2.0 * back[:shape[0], :shape[1]]
    if _arr(a).ndim == 2:
        grad = grad[..., 0]
    return float(loss_c.sum() / n), grad


Plugin = Callable[[np.ndarray, np.ndarray], float]


def image_loss(a, b, weights: LossWeights = LossWeights(), perceptual: Plugin | None = None,
               adversarial: Plugin | None = None, l1_eps: float = 0.0) -> float:
    """Weighted pixel + perceptual + frequency + adversarial loss.

    The perceptual and adversarial terms need trained networks; they are slots
    that contribute nothing unless a callable is supplied. A positive ``l1_eps``
    swaps the pixel term for its Charbonnier surrogate.
    """
    total = 0.0
    if weights.lambda_l1:
        total += weights.lambda_l1 * smooth_l1_loss(a, b, l1_eps)
    if weights.lambda_freq:
        total += weights.lambda_freq * focal_frequency_loss(a, b)
    if perceptual is not None and weights.lambda_perc:
        total += weights.lambda_perc * float(perceptual(a, b))
    if adversarial is not None and weights.lambda_adv:
        total += weights.lambda_adv * float(adversarial(a, b))
    return total


def image_loss_grad(a, b, weights: LossWeights = LossWeights(),
                    l1_eps: float = 0.0) -> tuple[float, np.ndarray]:
    """Value and gradient (w.r.t. ``a``) of the L1 + frequency part of :func:`image_loss`."""
    a_, _ = _pair(a, b)
    total, grad = 0.0, np.zeros_like(a_)
    if weights.lambda_l1:
        total += weights.lambda_l1 * smooth_l1_loss(a, b, l1_eps)
        grad += weights.lambda_l1 * smooth_l1_grad(a, b, l1_eps)
    if weights.lambda_freq:
        f, g = focal_frequency_grad(a, b)
        total += weights.lambda_freq * f
        grad += weights.lambda_freq * g
    return total, grad


class ResidualOperator:
    """Maps ``x`` to ``x + residual(x)`` with a signed RGB residual."""

    def __init__(self, residual: Callable[[np.ndarray], np.ndarray]):
        self.residual = residual

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        r = np.asarray(self.residual(x), dtype=np.float64)
        if r.shape != x.shape:
            raise ValueError(f"residual shape {r.shape} differs from input {x.shape}")
        return x + r

    @classmethod
    def zero(cls) -> ResidualOperator:
        return cls(np.zeros_like)

    @classmethod
    def constant(cls, c) -> ResidualOperator:
        return cls(lambda x: np.broadcast_to(np.asarray(c, float), x.shape).copy())


def cycle_loss(i_d, i_l, delight: ResidualOperator, relight: ResidualOperator,
               weights: LossWeights = LossWeights(), **plugins) -> float:
    """Round-trip consistency: diffuse -> lit -> diffuse and lit -> diffuse -> lit."""
    i_d = np.asarray(getattr(i_d, "data", i_d), float)
    i_l = np.asarray(getattr(i_l, "data", i_l), float)
    return (image_loss(i_d, delight(relight(i_d)), weights, **plugins)
            + image_loss(i_l, relight(delight(i_l)), weights, **plugins))


def full_loss(i_d, i_l, delight: ResidualOperator, relight: ResidualOperator,
              weights: LossWeights = LossWeights(), **plugins) -> float:
    i_d = np.asarray(getattr(i_d, "data", i_d), float)
    i_l = np.asarray(getattr(i_l, "data", i_l), float)
    direct = (image_loss(i_d, delight(i_l), weights, **plugins)
              + image_loss(i_l, relight(i_d), weights, **plugins))
    if not weights.lambda_cycle:
        return direct
    return direct + weights.lambda_cycle * cycle_loss(i_d, i_l, delight, relight, weights,
                                                      **plugins)


@dataclass(frozen=True)
class Standardizer:
    """Per-channel affine normaliser ``(x - mean) / std`` computed over a corpus."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def apply(self, x) -> np.ndarray:
        s = np.where(np.asarray(self.std) > 0, self.std, 1.0)
        return (np.asarray(getattr(x, "data", x), float) - np.asarray(self.mean)) / s

    def invert(self, z) -> np.ndarray:
        s = np.where(np.asarray(self.std) > 0, self.std, 1.0)
        return np.asarray(z, float) * s + np.asarray(self.mean)
