"""Texture and material containers plus the pixel-grid operations shared by every module.

Maps are stored as ``(height, width, channels)`` float64 arrays in linear light.
Normals live in tangent space with +z pointing out of the material plane.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields

import numpy as np

#: Default threshold above which transmittance is treated as a hole.
DEFAULT_OPACITY_TAU = 0.95
#: PPI range covered by rescaling augmentation.
PPI_RANGE = (300.0, 1200.0)

_UNIT_TOL = 1e-5


class InvalidNormalError(ValueError):
    """A normal vector is not unit length or points into the material."""


class DomainError(ValueError):
    """A square-domain coordinate lies outside ``[-1, 1]``."""


class MaterialError(ValueError):
    """A map or material bundle violates its invariants."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TextureMap:
    """A 2-D grid of per-pixel float channels.

    ``data`` has shape ``(height, width, channels)`` with ``channels`` 1 or 3.
    The array is copied on construction and marked read-only.
    """

    data: np.ndarray
    ppi: float = 1200.0

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise MaterialError(f"expected (H, W, 1|3) data, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise MaterialError("map must be at least 1x1")
        if not np.all(np.isfinite(a)):
            raise MaterialError("map contains NaN or Inf")
        if not (self.ppi > 0 and math.isfinite(self.ppi)):
            raise MaterialError(f"ppi must be positive, got {self.ppi}")
        object.__setattr__(self, "data", _readonly(a))
        object.__setattr__(self, "ppi", float(self.ppi))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> TextureMap:
        return TextureMap(data, self.ppi)

    def __eq__(self, other):
        if not isinstance(other, TextureMap):
            return NotImplemented
        return self.ppi == other.ppi and np.array_equal(self.data, other.data)

    __hash__ = None


MAP_NAMES = ("albedo", "normals", "specular", "roughness", "opacity", "transmittance")
_MAP_CHANNELS = {"albedo": 3, "normals": 3, "specular": 1, "roughness": 1,
                 "opacity": 1, "transmittance": 1}


@dataclass(frozen=True, eq=False)
class MaterialMaps:
    """The six per-pixel maps of the SVBSDF model (A, N, S, R, O, T)."""

    albedo: TextureMap
    normals: TextureMap
    specular: TextureMap
    roughness: TextureMap
    opacity: TextureMap
    transmittance: TextureMap

    def __post_init__(self):
        validate_material(self)

    @classmethod
    def from_arrays(cls, albedo, normals, specular, roughness, opacity, transmittance,
                    ppi: float = 1200.0) -> MaterialMaps:
        return cls(*(TextureMap(a, ppi) for a in
                     (albedo, normals, specular, roughness, opacity, transmittance)))

    @property
    def height(self) -> int:
        return self.albedo.height

    @property
    def width(self) -> int:
        return self.albedo.width

    @property
    def ppi(self) -> float:
        return self.albedo.ppi

    def maps(self) -> dict[str, TextureMap]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> MaterialMaps:
        m = self.maps()
        for k, v in changes.items():
            if k not in m:
                raise KeyError(k)
            m[k] = v if isinstance(v, TextureMap) else TextureMap(v, self.ppi)
        return MaterialMaps(**m)

    def map_each(self, fn) -> MaterialMaps:
        """Apply ``fn(name, TextureMap) -> TextureMap`` to every map."""
        return MaterialMaps(**{k: fn(k, v) for k, v in self.maps().items()})

    def __eq__(self, other):
        if not isinstance(other, MaterialMaps):
            return NotImplemented
        return all(getattr(self, k) == getattr(other, k) for k in MAP_NAMES)

    __hash__ = None


def validate_material(m: MaterialMaps) -> None:
    ref = m.albedo
    for name in MAP_NAMES:
        t = getattr(m, name)
        if not isinstance(t, TextureMap):
            raise MaterialError(f"{name} is not a TextureMap")
        if t.channels != _MAP_CHANNELS[name]:
            raise MaterialError(f"{name} must have {_MAP_CHANNELS[name]} channels, got {t.channels}")
        if (t.height, t.width) != (ref.height, ref.width) or t.ppi != ref.ppi:
            raise MaterialError(f"{name} does not match albedo size/ppi")
    for name in ("albedo", "specular", "roughness", "transmittance"):
        d = getattr(m, name).data
        if d.min() < 0.0 or d.max() > 1.0:
            raise MaterialError(f"{name} values outside [0, 1]")
    o = m.opacity.data
    if not np.all((o == 0.0) | (o == 1.0)):
        raise MaterialError("opacity must be binary")
    n = m.normals.data
    if np.max(np.abs(np.linalg.norm(n, axis=-1) - 1.0)) > _UNIT_TOL:
        raise MaterialError("normals are not unit length")
    if np.any(n[..., 2] <= 0.0):
        raise MaterialError("normals must have z > 0")


# --- normal parameterization (elliptical grid mapping) ------------------------

def normal_decode(u, v) -> np.ndarray:
    """Map square-domain coordinates to unit normals on the upper hemisphere.

    The square is sent to the unit disc with the elliptical grid mapping and the
    disc point is lifted to the hemisphere. Accepts scalars or arrays; returns an
    array with a trailing axis of size 3.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(np.abs(u) > 1.0) or np.any(np.abs(v) > 1.0):
        raise DomainError("square-domain coordinates must lie in [-1, 1]")
    uu, vv = u * u, v * v
    x = u * np.sqrt(1.0 - 0.5 * vv)
    y = v * np.sqrt(1.0 - 0.5 * uu)
    # 1 - x^2 - y^2 factors exactly as (1 - u^2)(1 - v^2)
    z = np.sqrt(np.maximum(0.0, (1.0 - uu) * (1.0 - vv)))
    return np.stack([x, y, z], axis=-1)


def normal_encode(n) -> np.ndarray:
    """Inverse of :func:`normal_decode`; returns ``(..., 2)`` square coordinates."""
    n = np.asarray(n, dtype=np.float64)
    if n.shape[-1] != 3:
        raise InvalidNormalError("normals need a trailing axis of size 3")
    if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1.0) > _UNIT_TOL):
        raise InvalidNormalError("normal is not unit length")
    if np.any(n[..., 2] < 0.0):
        raise InvalidNormalError("normal points below the material plane")
    x, y = n[..., 0], n[..., 1]
    d = x * x - y * y
    r2 = 2.0 * math.sqrt(2.0)
    u = 0.5 * (np.sqrt(np.maximum(0.0, 2.0 + d + r2 * x))
               - np.sqrt(np.maximum(0.0, 2.0 + d - r2 * x)))
    v = 0.5 * (np.sqrt(np.maximum(0.0, 2.0 - d + r2 * y))
               - np.sqrt(np.maximum(0.0, 2.0 - d - r2 * y)))
    return np.clip(np.stack([u, v], axis=-1), -1.0, 1.0)


def normal_angles(n) -> tuple[np.ndarray, np.ndarray]:
    """Polar and azimuth angles (radians) of tangent-space normals."""
    n = np.asarray(n, dtype=np.float64)
    return np.arccos(np.clip(n[..., 2], -1.0, 1.0)), np.arctan2(n[..., 1], n[..., 0])


def opacity_from_transmittance(t: TextureMap, tau: float = DEFAULT_OPACITY_TAU) -> TextureMap:
    """Binary opacity: 0 where transmittance exceeds ``tau`` (a hole), 1 elsewhere."""
    return t.with_data(opacity_mask(t.data, tau))


def opacity_mask(t: np.ndarray, tau: float = DEFAULT_OPACITY_TAU) -> np.ndarray:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"opacity threshold must lie in (0, 1), got {tau}")
    return np.where(np.asarray(t) > tau, 0.0, 1.0)


def flat_normals(height: int, width: int) -> np.ndarray:
    n = np.zeros((height, width, 3))
    n[..., 2] = 1.0
    return n


# --- resampling and augmentation ---------------------------------------------

def _axis_weights(n_src: int, n_dst: int):
    # pixel-centre aligned source coordinates, clamped at the borders
    x = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    x = np.clip(x, 0.0, n_src - 1)
    i0 = np.floor(x).astype(int)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, x - i0


def resize_array(a: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an ``(H, W, ...)`` array to ``(height, width, ...)``."""
    if height < 1 or width < 1:
        raise ValueError("target dimensions must be >= 1")
    a = np.asarray(a, dtype=np.float64)
    if (height, width) == a.shape[:2]:
        return a.copy()
    i0, i1, fy = _axis_weights(a.shape[0], height)
    fy = fy.reshape((-1,) + (1,) * (a.ndim - 1))
    a = a[i0] * (1.0 - fy) + a[i1] * fy
    j0, j1, fx = _axis_weights(a.shape[1], width)
    fx = fx.reshape((1, -1) + (1,) * (a.ndim - 2))
    return a[:, j0] * (1.0 - fx) + a[:, j1] * fx


def resample(m: TextureMap, target_ppi: float) -> TextureMap:
    """Bilinearly resample ``m`` to a new physical resolution."""
    lo, hi = PPI_RANGE
    if not lo <= target_ppi <= hi:
        warnings.warn(f"target ppi {target_ppi} outside augmentation range {PPI_RANGE}",
                      stacklevel=2)
    scale = target_ppi / m.ppi
    h, w = round(m.height * scale), round(m.width * scale)
    if h < 1 or w < 1:
        raise ValueError(f"resampling to {target_ppi} ppi gives an empty map")
    return TextureMap(resize_array(m.data, h, w), target_ppi)


def crop(m: TextureMap, x0: int, y0: int, w: int, h: int) -> TextureMap:
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > m.width or y0 + h > m.height:
        raise ValueError(f"crop ({x0}, {y0}, {w}, {h}) outside {m.width}x{m.height} map")
    return m.with_data(m.data[y0:y0 + h, x0:x0 + w])


def flip_h(m: TextureMap) -> TextureMap:
    """Mirror left-right."""
    return m.with_data(m.data[:, ::-1])


def flip_v(m: TextureMap) -> TextureMap:
    """Mirror top-bottom."""
    return m.with_data(m.data[::-1])


def resample_material(m: MaterialMaps, target_ppi: float) -> MaterialMaps:
    """Resample every map, keeping the bundle valid.

    Normals are renormalised after interpolation and opacity is snapped back to
    {0, 1} at 0.5.
    """
    def one(name, t):
        r = resample(t, target_ppi)
        if name == "normals":
            n = r.data / np.linalg.norm(r.data, axis=-1, keepdims=True)
            n[..., 2] = np.maximum(n[..., 2], 1e-6)
            return r.with_data(n / np.linalg.norm(n, axis=-1, keepdims=True))
        if name == "opacity":
            return r.with_data(np.where(r.data >= 0.5, 1.0, 0.0))
        return r.with_data(np.clip(r.data, 0.0, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = m.map_each(one)
    return out

