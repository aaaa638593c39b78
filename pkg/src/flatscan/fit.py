"""Inverse rendering by gradient descent on per-pixel latent maps.

Latents are unconstrained; decoding maps them into the material domains:
sigmoid for albedo/specular/roughness/transmittance, ``tanh`` for the
square-domain normal coordinates followed by the elliptical grid mapping, and
opacity re-derived from transmittance by thresholding. Gradients are analytic
(chain rule through the renderer) and the optimiser is bias-corrected Adam.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _tiles
from .losses import LossWeights, image_loss, image_loss_grad
from .material import (DEFAULT_OPACITY_TAU, MaterialMaps, TextureMap, normal_decode,
                       opacity_mask, resize_array)
from .shading import DEFAULT_ELEVATION, IlluminationModel, render, render_arrays, render_vjp

log = logging.getLogger(__name__)

LATENT_NAMES = ("albedo", "normal", "specular", "roughness", "transmittance", "opacity")
_UV_LIMIT = 1.0 - 1e-9
_TV_EPS = 1e-3


@dataclass(frozen=True)
class Observation:
    image: np.ndarray
    illum: IlluminationModel

    def __post_init__(self):
        img = np.asarray(getattr(self.image, "data", self.image), dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("observations must be (H, W, 3) RGB images")
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 100
    lr: float = 0.002
    lr_halving: int = 30
    weights: LossWeights = field(default_factory=LossWeights)
    observations: tuple[Observation, ...] = ()
    levels: tuple[float, ...] = (0.25, 0.5, 1.0)
    seed: int = 0
    tv_weight: float = 1e-3
    prior_weight: float = 1e-4
    tau: float = DEFAULT_OPACITY_TAU
    init_transmittance: float = 0.01
    init_specular: float = 0.2
    init_noise: float = 1e-3
    l1_smoothing: float = 1e-2
    frozen: frozenset = frozenset()
    threads: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not self.l1_smoothing >= 0:
            raise ValueError("l1_smoothing must be non-negative")
        if self.lr_halving < 1:
            raise ValueError("lr_halving must be >= 1")
        if not self.levels or any(not 0 < f <= 1 for f in self.levels):
            raise ValueError("levels must be scale factors in (0, 1]")
        unknown = set(self.frozen) - set(LATENT_NAMES)
        if unknown:
            raise ValueError(f"unknown latents to freeze: {sorted(unknown)}")
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        object.__setattr__(self, "observations", tuple(self.observations))

    def lr_at(self, step: int) -> float:
        return self.lr * 0.5 ** (step // self.lr_halving)


@dataclass(frozen=True)
class FitState:
    """Latent maps, Adam moment buffers and the step counter."""

    latents: dict
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def from_latents(cls, latents: dict) -> FitState:
        lat = {k: np.asarray(latents[k], dtype=np.float64) for k in LATENT_NAMES}
        for k, a in lat.items():
            if not np.all(np.isfinite(a)):
                raise ValueError(f"latent {k} is not finite")
        return cls(lat, {k: np.zeros_like(a) for k, a in lat.items()},
                   {k: np.zeros_like(a) for k, a in lat.items()}, 0)

    @classmethod
    def zeros(cls, height: int, width: int) -> FitState:
        return cls.from_latents(_latent_zeros(height, width))

    @property
    def shape(self) -> tuple[int, int]:
        return self.latents["albedo"].shape[:2]


def _latent_zeros(h, w):
    return {"albedo": np.zeros((h, w, 3)), "normal": np.zeros((h, w, 2)),
            "specular": np.zeros((h, w)), "roughness": np.zeros((h, w)),
            "transmittance": np.zeros((h, w)), "opacity": np.zeros((h, w))}


def _sigmoid(x):
    # exp of a non-positive argument only, so large latents do not overflow
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _logit(p):
    p = np.asarray(p, float)
    return np.log(p) - np.log1p(-p)


def _decode_arrays(lat: dict, tau: float):
    A = _sigmoid(lat["albedo"])
    uv = np.clip(np.tanh(lat["normal"]), -_UV_LIMIT, _UV_LIMIT)
    N = normal_decode(uv[..., 0], uv[..., 1])
    S = _sigmoid(lat["specular"])
    R = _sigmoid(lat["roughness"])
    T = _sigmoid(lat["transmittance"])
    O = opacity_mask(T, tau)
    return A, N, S, R, O, T, uv


def decode_params(state: FitState, tau: float = DEFAULT_OPACITY_TAU,
                  ppi: float = 1200.0) -> MaterialMaps:
    A, N, S, R, O, T, _ = _decode_arrays(state.latents, tau)
    return MaterialMaps.from_arrays(A, N, S, R, O, T, ppi=ppi)


# --- priors ----------------------------------------------------------------------

def _tv(p):
    """Smoothed isotropic total variation (zero on constant maps), mean over pixels."""
    dx = np.zeros_like(p)
    dy = np.zeros_like(p)
    dx[:, :-1] = p[:, 1:] - p[:, :-1]
    dy[:-1] = p[1:] - p[:-1]
    mag = np.sqrt(dx * dx + dy * dy + _TV_EPS ** 2)
    n = p.shape[0] * p.shape[1]
    val = float(np.sum(mag - _TV_EPS) / n)
    gx, gy = dx / mag / n, dy / mag / n
    g = np.zeros_like(p)
    g[:, :-1] -= gx[:, :-1]
    g[:, 1:] += gx[:, :-1]
    g[:-1] -= gy[:-1]
    g[1:] += gy[:-1]
    return val, g


def _priors(lat: dict, config: FitConfig, grads: dict | None):
    total = 0.0
    if config.tv_weight:
        val, g = _tv(lat["normal"])
        total += config.tv_weight * val
        if grads is not None:
            grads["normal"] += config.tv_weight * g
    if config.prior_weight:
        for k in ("specular", "roughness"):
            x = lat[k]
            total += config.prior_weight * float(np.mean(x * x))
            if grads is not None:
                grads[k] += config.prior_weight * 2.0 * x / x.size
    return total


def _check_obs(state: FitState, config: FitConfig):
    if not config.observations:
        raise ValueError("at least one observation is required")
    for ob in config.observations:
        if ob.image.shape[:2] != state.shape:
            raise ValueError(f"observation shape {ob.image.shape[:2]} does not match "
                             f"latent shape {state.shape}")


def _render_tiled(A, N, S, R, O, T, illum, threads):
    return _tiles.map_rows(lambda **m: render_arrays(illum=illum, **m),
                           dict(A=A, N=N, S=S, R=R, O=O, T=T), A.shape, threads)


def objective(state: FitState, config: FitConfig) -> float:
    """Data term summed over observations plus the normal-smoothness and latent priors."""
    _check_obs(state, config)
    A, N, S, R, O, T, _ = _decode_arrays(state.latents, config.tau)
    total = 0.0
    for ob in config.observations:
        img = _render_tiled(A, N, S, R, O, T, ob.illum, config.threads)
        total += image_loss(img, ob.image, config.weights, l1_eps=config.l1_smoothing)
    return total + _priors(state.latents, config, None)


def _decode_normal_vjp(uv, gN):
    u, v = uv[..., 0], uv[..., 1]
    uu, vv = u * u, v * v
    su = np.sqrt(1.0 - 0.5 * uu)
    sv = np.sqrt(1.0 - 0.5 * vv)
    z = np.sqrt((1.0 - uu) * (1.0 - vv))
    gx, gy, gz = gN[..., 0], gN[..., 1], gN[..., 2]
    g_u = gx * sv + gy * (-u * v / (2.0 * su)) + gz * (-u * (1.0 - vv) / z)
    g_v = gx * (-u * v / (2.0 * sv)) + gy * su + gz * (-v * (1.0 - uu) / z)
    return g_u, g_v


def objective_and_gradient(state: FitState, config: FitConfig):
    _check_obs(state, config)
    lat = state.latents
    A, N, S, R, O, T, uv = _decode_arrays(lat, config.tau)
    gA = np.zeros_like(A)
    gN = np.zeros_like(N)
    gS = np.zeros_like(S)
    gR = np.zeros_like(R)
    gT = np.zeros_like(T)
    total = 0.0
    for ob in config.observations:
        img = _render_tiled(A, N, S, R, O, T, ob.illum, config.threads)
        val, g_img = image_loss_grad(img, ob.image, config.weights, config.l1_smoothing)
        total += val
        dA, dN, dS, dR, dT = _tiles.map_rows_multi(
            lambda G, **m: render_vjp(illum=ob.illum, G=G, **m),
            dict(A=A, N=N, S=S, R=R, O=O, T=T, G=g_img), A.shape[0], config.threads)
        gA += dA
        gN += dN
        gS += dS
        gR += dR
        gT += dT

    g_u, g_v = _decode_normal_vjp(uv, gN)
    grads = {
        "albedo": gA * A * (1.0 - A),
        "normal": np.stack([g_u * (1.0 - uv[..., 0] ** 2), g_v * (1.0 - uv[..., 1] ** 2)],
                           axis=-1),
        "specular": gS * S * (1.0 - S),
        "roughness": gR * R * (1.0 - R),
        "transmittance": gT * T * (1.0 - T),
        "opacity": np.zeros_like(lat["opacity"]),
    }
    total += _priors(lat, config, grads)
    for k in config.frozen:
        grads[k] = np.zeros_like(grads[k])
    return total, grads


def gradient(state: FitState, config: FitConfig) -> dict:
    """Analytic gradient of :func:`objective` for every latent map."""
    return objective_and_gradient(state, config)[1]


# --- optimiser -----------------------------------------------------------------------

def adam_update(params: dict, grads: dict, m: dict, v: dict, step: int, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(params, m, v, step)``."""
    t = step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        mk = beta1 * m[k] + (1.0 - beta1) * g
        vk = beta2 * v[k] + (1.0 - beta2) * (g * g)
        new_p[k] = p - lr * (mk / bc1) / (np.sqrt(vk / bc2) + eps)
        new_m[k], new_v[k] = mk, vk
    return new_p, new_m, new_v, t


def adam_step(state: FitState, grads: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> FitState:
    p, m, v, t = adam_update(state.latents, grads, state.m, state.v, state.step, lr,
                             beta1, beta2, eps)
    return FitState(p, m, v, t)


# --- driver ----------------------------------------------------------------------------

def _downsample(img: np.ndarray, h: int, w: int) -> np.ndarray:
    H, W = img.shape[:2]
    if (h, w) == (H, W):
        return img
    if H % h == 0 and W % w == 0:
        fy, fx = H // h, W // w
        return img.reshape(h, fy, w, fx, *img.shape[2:]).mean(axis=(1, 3))
    return resize_array(img, h, w)


def initial_state(observations, height: int, width: int, config: FitConfig) -> FitState:
    """Latents that already explain the first observation with flat, diffuse-only geometry."""
    lat = _latent_zeros(height, width)
    t0 = config.init_transmittance
    lat["transmittance"][:] = _logit(t0)
    lat["specular"][:] = _logit(config.init_specular)
    albedo = None
    # a diffuse observation gives the albedo directly, so it takes priority
    for ob in sorted(observations, key=lambda o: o.illum.kind != "diffuse"):
        il = ob.illum
        if il.kind == "directional":
            cos = max(il.light[2], 1e-3)
            albedo = ob.image / (il.intensity * cos * (1.0 / math.pi + t0))
        elif il.kind == "diffuse":
            albedo = ob.image / il.intensity
        if albedo is not None:
            break
    if albedo is not None:
        lat["albedo"] = _logit(np.clip(albedo, 0.01, 0.99))
    if config.init_noise:
        rng = np.random.default_rng(config.seed)
        lat["normal"] += config.init_noise * rng.standard_normal(lat["normal"].shape)
    return FitState.from_latents(lat)


@dataclass
class FitResult:
    maps: MaterialMaps
    state: FitState
    history: list[float]

    @property
    def final_objective(self) -> float:
        return self.history[-1]


def fit_material_detailed(observations, config: FitConfig = FitConfig(),
                          ppi: float = 1200.0) -> FitResult:
    observations = tuple(o if isinstance(o, Observation) else Observation(*o)
                         for o in observations)
    if not observations:
        raise ValueError("at least one observation is required")
    H, W = observations[0].image.shape[:2]
    if any(o.image.shape[:2] != (H, W) for o in observations):
        raise ValueError("observations must be pixel-aligned")

    state = start = None
    history: list[float] = []
    for level, f in enumerate(config.levels):
        h, w = max(1, round(H * f)), max(1, round(W * f))
        obs = tuple(Observation(_downsample(o.image, h, w), o.illum) for o in observations)
        cfg = dataclasses.replace(config, observations=obs)
        fresh = initial_state(obs, h, w, cfg)
        if state is None:
            state = fresh
        else:
            # carry the coarse correction up; per-pixel detail comes from the
            # fresh initialisation at this resolution
            state = FitState.from_latents({
                k: fresh.latents[k] + resize_array(state.latents[k] - start.latents[k], h, w)
                for k in LATENT_NAMES})
        start = fresh
        for it in range(cfg.iterations):
            val, grads = objective_and_gradient(state, cfg)
            history.append(val)
            state = adam_step(state, grads, cfg.lr_at(it), cfg.beta1, cfg.beta2, cfg.eps)
        log.debug("level %d (%dx%d): objective %.6g", level, w, h, history[-1])
    final_cfg = dataclasses.replace(config, observations=observations)
    history.append(objective(state, final_cfg))
    log.info("fit finished: objective %.6g", history[-1])
    return FitResult(decode_params(state, config.tau, ppi), state, history)


def fit_material(observations, config: FitConfig = FitConfig(), ppi: float = 1200.0):
    """Recover material maps from pixel-aligned observations (coarse to fine)."""
    return fit_material_detailed(observations, config, ppi).maps


def delight_material(i_l, led_elevation: float = DEFAULT_ELEVATION,
                     config: FitConfig = FitConfig(), intensity: float = 1.0,
                     ppi: float | None = None, illum: IlluminationModel | None = None):
    """Like :func:`delight` but also returns the fitted material bundle."""
    if ppi is None:
        ppi = i_l.ppi if isinstance(i_l, TextureMap) else 1200.0
    img = np.asarray(getattr(i_l, "data", i_l), dtype=np.float64)
    if illum is None:
        illum = IlluminationModel.scanner(led_elevation, intensity)
    elif illum.kind != "directional":
        raise ValueError("delighting needs a directional observation")
    intensity = illum.intensity
    maps = fit_material([Observation(img, illum)], config, ppi)
    i_d_hat = render(maps, IlluminationModel.diffuse(intensity), config.threads).data
    return TextureMap(i_d_hat, ppi), TextureMap(i_d_hat - img, ppi), maps


def delight(i_l, led_elevation: float = DEFAULT_ELEVATION, config: FitConfig = FitConfig(),
            intensity: float = 1.0, ppi: float | None = None,
            illum: IlluminationModel | None = None):
    """Remove shading and highlights from a single-LED scan.

    Fits a material to the scan and re-renders it under diffuse light. Returns
    ``(i_d_hat, residual)`` where the signed RGB residual is ``i_d_hat - i_l``.
    ``illum`` overrides the scanner light built from ``led_elevation`` and
    ``intensity``.
    """
    i_d_hat, residual, _ = delight_material(i_l, led_elevation, config, intensity, ppi, illum)
    return i_d_hat, residual
