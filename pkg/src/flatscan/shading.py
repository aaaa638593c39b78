"""Per-pixel evaluation of the thin-layer SVBSDF and fronto-planar scanner rendering.

    f_bsdf = O * (A / pi + s_lv(N, S, R) + T * A)

The specular lobe is grayscale isotropic GGX with height-correlated Smith
masking and Schlick Fresnel. Roughness is remapped as ``alpha = r**2`` and the
specular map scales a dielectric-range reflectance ``F0 = 0.08 * s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _tiles
from .material import MaterialError, MaterialMaps, TextureMap

ALPHA_MIN = 1e-3
F0_SCALE = 0.08
DEFAULT_ELEVATION = 55.0
DIFFUSE_SAMPLES = 64

# normalisation constant of the GGX distribution; selftest perturbs it to prove
# the normalisation check can fail
_GGX_NORM = math.pi

Z_AXIS = np.array([0.0, 0.0, 1.0])


def _unit(v, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit length")
    if v[2] < 0.0:
        raise ValueError(f"{name} must lie on the upper hemisphere")
    return v


@dataclass(frozen=True)
class DirectionPair:
    """A light direction ``l`` and view direction ``v`` on the upper hemisphere."""

    l: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "l", _unit(self.l, "light"))
        object.__setattr__(self, "v", _unit(self.v, "view"))


def light_from_elevation(elevation_deg: float, azimuth_deg: float = 0.0) -> np.ndarray:
    e, a = math.radians(elevation_deg), math.radians(azimuth_deg)
    return np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])


@dataclass(frozen=True)
class IlluminationModel:
    """How a fronto-planar sample is lit.

    ``kind`` is ``"directional"`` (uses ``light``), ``"diffuse"`` or ``"backlight"``.
    """

    kind: str
    intensity: float = 1.0
    light: np.ndarray | None = None
    view: np.ndarray = field(default_factory=lambda: Z_AXIS.copy())

    def __post_init__(self):
        if self.kind not in ("directional", "diffuse", "backlight"):
            raise ValueError(f"unknown illumination kind {self.kind!r}")
        if not self.intensity > 0:
            raise ValueError("intensity must be positive")
        object.__setattr__(self, "view", _unit(self.view, "view"))
        if self.kind == "directional":
            if self.light is None:
                raise ValueError("directional illumination needs a light direction")
            object.__setattr__(self, "light", _unit(self.light, "light"))
        elif self.light is not None:
            raise ValueError(f"{self.kind} illumination takes no light direction")

    @classmethod
    def directional(cls, light, intensity: float = 1.0, view=Z_AXIS) -> IlluminationModel:
        return cls("directional", intensity, np.asarray(light, float), np.asarray(view, float))

    @classmethod
    def scanner(cls, elevation_deg: float = DEFAULT_ELEVATION, intensity: float = 1.0):
        """Directional light at ``elevation_deg`` along the scan axis (+x)."""
        if not 0.0 < elevation_deg < 90.0:
            raise ValueError("LED elevation must lie in (0, 90) degrees")
        return cls.directional(light_from_elevation(elevation_deg), intensity)

    @classmethod
    def diffuse(cls, intensity: float = 1.0) -> IlluminationModel:
        return cls("diffuse", intensity)

    @classmethod
    def backlight(cls, intensity: float = 1.0) -> IlluminationModel:
        return cls("backlight", intensity)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "intensity": self.intensity, "view": self.view.tolist()}
        if self.light is not None:
            d["light"] = self.light.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> IlluminationModel:
        d = dict(d)
        if "elevation" in d:
            if d.get("kind", "directional") != "directional":
                raise ValueError("elevation only applies to directional light")
            return cls.directional(light_from_elevation(d["elevation"], d.get("azimuth", 0.0)),
                                   d.get("intensity", 1.0), d.get("view", Z_AXIS))
        light = d.get("light")
        return cls(d["kind"], float(d.get("intensity", 1.0)),
                   None if light is None else np.asarray(light, float),
                   np.asarray(d.get("view", Z_AXIS), float))


# --- GGX lobe ------------------------------------------------------------------

def roughness_to_alpha(r):
    return np.maximum(np.asarray(r, dtype=np.float64) ** 2, ALPHA_MIN)


def ggx_distribution(cos_h, alpha):
    """GGX normal distribution ``D(h)`` for ``cos_h = n.h``."""
    a2 = np.asarray(alpha, dtype=np.float64) ** 2
    q = np.asarray(cos_h) ** 2 * (a2 - 1.0) + 1.0
    return a2 / (_GGX_NORM * q * q)


def _lobe(nh, nl, nv, vh, s, alpha, grad=False):
    """Grayscale GGX lobe from cosines. With ``grad`` also returns partials.

    Partials are with respect to ``nh, nl, nv, vh, s, alpha`` and are zero
    wherever the lobe is masked out (``nl <= 0`` or ``nv <= 0``).
    """
    a2 = alpha * alpha
    mask = (nl > 0.0) & (nv > 0.0)
    nl_ = np.where(mask, nl, 1.0)
    nv_ = np.where(mask, nv, 1.0)

    q = nh * nh * (a2 - 1.0) + 1.0
    D = a2 / (_GGX_NORM * q * q)
    lam_v = np.sqrt(nv_ * nv_ * (1.0 - a2) + a2)
    lam_l = np.sqrt(nl_ * nl_ * (1.0 - a2) + a2)
    W = nl_ * lam_v + nv_ * lam_l
    vis = 0.5 / W
    f0 = F0_SCALE * s
    p4 = (1.0 - vh) ** 4
    p5 = p4 * (1.0 - vh)
    F = f0 + (1.0 - f0) * p5
    spec = np.where(mask, s * D * vis * F, 0.0)
    if not grad:
        return spec

    sDF = s * D * F
    sVF = s * vis * F
    sDV = s * D * vis
    dD_dnh = -4.0 * a2 * nh * (a2 - 1.0) / (_GGX_NORM * q ** 3)
    dD_da2 = (q - 2.0 * a2 * nh * nh) / (_GGX_NORM * q ** 3)
    dvis_dW = -vis / W
    dW_dnl = lam_v + nv_ * nl_ * (1.0 - a2) / lam_l
    dW_dnv = nl_ * nv_ * (1.0 - a2) / lam_v + lam_l
    dW_da2 = nl_ * (1.0 - nv_ * nv_) / (2.0 * lam_v) + nv_ * (1.0 - nl_ * nl_) / (2.0 * lam_l)

    z = np.zeros_like(spec)
    g = {
        "nh": np.where(mask, sVF * dD_dnh, z),
        "nl": np.where(mask, sDF * dvis_dW * dW_dnl, z),
        "nv": np.where(mask, sDF * dvis_dW * dW_dnv, z),
        "vh": np.where(mask, sDV * (-5.0 * (1.0 - f0) * p4), z),
        "s": np.where(mask, D * vis * (F + s * F0_SCALE * (1.0 - p5)), z),
        "alpha": np.where(mask, (sVF * dD_da2 + sDF * dvis_dW * dW_da2) * 2.0 * alpha, z),
    }
    return spec, g


def _half(l, v):
    h = np.asarray(l, float) + np.asarray(v, float)
    return h / np.linalg.norm(h, axis=-1, keepdims=True)


def ggx_specular(n, s, r, dp: DirectionPair):
    """Specular lobe ``s * D * G * F / (4 (n.l)(n.v))``; zero for back-facing geometry.

    ``n`` may be a single normal or an array with a trailing axis of 3; ``s`` and
    ``r`` broadcast against ``n[..., 0]``.
    """
    n = np.asarray(n, dtype=np.float64)
    h = _half(dp.l, dp.v)
    nh = n @ h
    nl = n @ dp.l
    nv = n @ dp.v
    vh = float(dp.v @ h)
    out = _lobe(nh, nl, nv, vh, np.asarray(s, float), roughness_to_alpha(r))
    return out if out.ndim else float(out)


def eval_brdf_pixel(albedo, n, s, r, dp: DirectionPair):
    """Reflectance ``A / pi + s_lv`` with the grayscale lobe added to every channel."""
    spec = np.asarray(ggx_specular(n, s, r, dp))
    return np.asarray(albedo, float) / math.pi + spec[..., None]


def eval_bsdf_pixel(albedo, n, s, r, o, t, dp: DirectionPair):
    """Full model ``O * (A / pi + s_lv + T * A)``."""
    albedo = np.asarray(albedo, float)
    o = np.asarray(o, float)[..., None]
    t = np.asarray(t, float)[..., None]
    return o * (eval_brdf_pixel(albedo, n, s, r, dp) + t * albedo)


# --- diffuse-light quadrature -------------------------------------------------

def _build_diffuse_directions(n: int = DIFFUSE_SAMPLES):
    """Cosine-weighted stratified directions around +z, mirror-symmetric in x.

    Returns the directions and, for each, the index of its x-mirror.
    """
    k = int(round(math.sqrt(n)))
    if k * k != n or k % 4:
        raise ValueError("diffuse sample count must be a square with side divisible by 4")
    radial = (np.arange(k) + 0.5) / k
    phi = 2.0 * math.pi * (np.arange(k) + 0.5) / k
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    # azimuth stratum j mirrors onto (k/2 - 1 - j) mod k under x -> -x
    mirror = (k // 2 - 1 - np.arange(k)) % k
    for j in range(k):
        if j < mirror[j]:
            cos_p[mirror[j]] = -cos_p[j]
            sin_p[mirror[j]] = sin_p[j]
    rr = np.sqrt(radial)[:, None]
    dirs = np.stack([
        (rr * cos_p[None, :]).ravel(),
        (rr * sin_p[None, :]).ravel(),
        np.broadcast_to(np.sqrt(1.0 - radial)[:, None], (k, k)).ravel(),
    ], axis=-1)
    idx = np.arange(k * k).reshape(k, k)
    mirror_idx = idx[:, mirror].ravel()
    return dirs, mirror_idx


DIFFUSE_DIRECTIONS, _DIFFUSE_MIRROR = _build_diffuse_directions()


def specular_diffuse_average(nv, s, alpha, grad=False):
    """Cosine-weighted hemispherical integral of the lobe around the local normal.

    The quadrature frame is aligned with the projected view direction, so the
    result depends on the geometry only through ``nv = n.v``. With ``grad``
    returns partials with respect to ``nv``, ``s`` and ``alpha``.
    """
    L = DIFFUSE_DIRECTIONS
    N = len(L)
    c = np.asarray(nv, float)[..., None]
    s_ = np.asarray(s, float)[..., None]
    a_ = np.asarray(alpha, float)[..., None]
    sin_v = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    sin_v = np.maximum(sin_v, 1e-7)
    lx, lz = L[:, 0], L[:, 2]
    ldv = lx * sin_v + lz * c
    m = np.sqrt(2.0 + 2.0 * ldv)
    nh = (lz + c) / m
    vh = 0.5 * m
    scale = math.pi / N
    if not grad:
        return scale * _lobe(nh, lz, c, vh, s_, a_).sum(-1)

    spec, g = _lobe(nh, lz, c, vh, s_, a_, grad=True)
    # d spec / d ldv at fixed c, through m
    dnh_dm = -(lz + c) / (m * m)
    G = (g["nh"] * dnh_dm + g["vh"] * 0.5) / m
    # d ldv / dc = lz - c lx / sin_v; the lx part is antisymmetrised over mirror
    # pairs so it stays finite as sin_v -> 0
    G_mirror = G[..., _DIFFUSE_MIRROR]
    d_lx = -c * lx * (G - G_mirror) / (2.0 * sin_v)
    d_c = g["nh"] / m + g["nv"] + G * lz + d_lx
    return (scale * spec.sum(-1), scale * d_c.sum(-1),
            scale * g["s"].sum(-1), scale * g["alpha"].sum(-1))


# --- rendering ----------------------------------------------------------------

def _check_arrays(A, N, S, R, O, T):
    h, w = A.shape[:2]
    for x in (N, S, R, O, T):
        if x.shape[:2] != (h, w):
            raise MaterialError("map shape mismatch")


def render_arrays(A, N, S, R, O, T, illum: IlluminationModel) -> np.ndarray:
    """Render raw arrays. ``A, N`` are ``(H, W, 3)``; ``S, R, O, T`` are ``(H, W)``."""
    K = illum.intensity
    if illum.kind == "backlight":
        return K * (O * T)[..., None] * A
    alpha = roughness_to_alpha(R)
    v = illum.view
    if illum.kind == "diffuse":
        nv = N @ v
        spec = specular_diffuse_average(nv, S, alpha)
        return K * O[..., None] * (A + spec[..., None])
    l = illum.light
    h = _half(l, v)
    nl = N @ l
    spec = _lobe(N @ h, nl, N @ v, float(v @ h), S, alpha)
    bsdf = A * (1.0 / math.pi + T[..., None]) + spec[..., None]
    return K * (O * np.maximum(nl, 0.0))[..., None] * bsdf


def render_vjp(A, N, S, R, O, T, illum: IlluminationModel, G):
    """Vector-Jacobian product of :func:`render_arrays` with upstream ``G`` (H, W, 3).

    Returns gradients for ``A`` (H,W,3), ``N`` (H,W,3), ``S``, ``R`` and ``T``
    (each H,W). Opacity is a hard gate and receives no gradient.
    """
    K = illum.intensity
    zeros = np.zeros(S.shape)
    if illum.kind == "backlight":
        w = K * (O * T)[..., None]
        gT = K * O * np.sum(G * A, axis=-1)
        return G * w, np.zeros_like(N), zeros, zeros.copy(), gT

    alpha = roughness_to_alpha(R)
    dalpha_dr = np.where(R * R > ALPHA_MIN, 2.0 * R, 0.0)
    v = illum.view
    if illum.kind == "diffuse":
        nv = N @ v
        _, d_c, d_s, d_a = specular_diffuse_average(nv, S, alpha, grad=True)
        gspec = K * O * G.sum(-1)
        gA = K * O[..., None] * G
        gN = (gspec * d_c)[..., None] * v
        return gA, gN, gspec * d_s, gspec * d_a * dalpha_dr, zeros

    l = illum.light
    h = _half(l, v)
    nl = N @ l
    spec, g = _lobe(N @ h, nl, N @ v, float(v @ h), S, alpha, grad=True)
    lit = nl > 0.0
    cos_ = np.where(lit, nl, 0.0)
    wgt = K * O * cos_
    gA = G * (wgt[..., None] * (1.0 / math.pi + T[..., None]))
    gT = wgt * np.sum(G * A, axis=-1)
    gspec = wgt * G.sum(-1)
    bsdf = A * (1.0 / math.pi + T[..., None]) + spec[..., None]
    gcos = np.where(lit, K * O * np.sum(G * bsdf, axis=-1), 0.0)
    gN = ((gspec * g["nh"])[..., None] * h + (gspec * g["nl"] + gcos)[..., None] * l
          + (gspec * g["nv"])[..., None] * v)
    return gA, gN, gspec * g["s"], gspec * g["alpha"] * dalpha_dr, gT


def material_arrays(m: MaterialMaps):
    return (m.albedo.data, m.normals.data, m.specular.data[..., 0], m.roughness.data[..., 0],
            m.opacity.data[..., 0], m.transmittance.data[..., 0])


def render(maps: MaterialMaps, illum: IlluminationModel, threads: int | None = None) -> TextureMap:
    """Render a fronto-planar image in linear radiance (no tonemapping)."""
    A, N, S, R, O, T = material_arrays(maps)
    _check_arrays(A, N, S, R, O, T)

    def kernel(A, N, S, R, O, T):
        return render_arrays(A, N, S, R, O, T, illum)

    img = _tiles.map_rows(kernel, dict(A=A, N=N, S=S, R=R, O=O, T=T),
                          A.shape, threads)
    return TextureMap(img, maps.ppi)


def scanner_pair(maps: MaterialMaps, led_elevation: float = DEFAULT_ELEVATION,
                 intensity: float = 1.0, threads: int | None = None):
    """Pixel-aligned ``(I_d, I_l)``: diffuse capture and single-LED capture."""
    directional = IlluminationModel.scanner(led_elevation, intensity)
    i_d = render(maps, IlluminationModel.diffuse(intensity), threads)
    i_l = render(maps, directional, threads)
    return i_d, i_l
