"""Per-map and render-aware error metrics for estimated materials.

The render-aware metrics compare materials through the reflectance model over
a fixed set of light/view pairs. That set is a deterministic Fibonacci-spiral
construction, so absolute values are only comparable between runs of this
package.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import _tiles
from .color import linear_rgb_to_lab, srgb_to_linear
from .material import MaterialMaps, TextureMap
from .shading import _half, _lobe, roughness_to_alpha

SCHEMA_VERSION = 1
DEFAULT_DIRECTION_COUNT = 50
#: finite stand-in for PSNR of identical images in serialised reports
PSNR_CAP = 100.0

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class ShapeMismatchError(ValueError):
    pass


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, TextureMap) else np.asarray(x, dtype=np.float64)


def _pair(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True)
class DirectionSet:
    lights: np.ndarray
    views: np.ndarray

    def __len__(self):
        return len(self.lights)

    @property
    def pairs(self):
        from .shading import DirectionPair
        return [DirectionPair(l, v) for l, v in zip(self.lights, self.views)]


def direction_set(count: int = DEFAULT_DIRECTION_COUNT, seed: int = 0) -> DirectionSet:
    """Light/view pairs taken alternately from one hemispherical Fibonacci spiral.

    The seed only rotates the spiral about the z-axis.
    """
    if count < 1:
        raise ValueError("direction count must be >= 1")
    n = 2 * count
    i = np.arange(n)
    z = 1.0 - (i + 0.5) / n
    rho = np.sqrt(1.0 - z * z)
    phi0 = np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi)
    phi = phi0 + i * _GOLDEN_ANGLE
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
    return DirectionSet(pts[0::2].copy(), pts[1::2].copy())


# --- per-map metrics ------------------------------------------------------------

def l1_map(a, b) -> float:
    """Mean absolute difference over pixels and channels."""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def angular_error(na, nb) -> float:
    """Mean angle between normal maps, in degrees."""
    na, nb = _pair(na, nb)
    # atan2 keeps small angles exact (arccos bottoms out near 1e-8 rad)
    sin = np.linalg.norm(np.cross(na, nb), axis=-1)
    cos = np.sum(na * nb, axis=-1)
    return float(np.degrees(np.mean(np.arctan2(sin, cos))))


def jaccard(a, b) -> float:
    """Intersection over union of two binary masks (1 if both are empty)."""
    a, b = _pair(a, b)
    for m in (a, b):
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("jaccard needs binary masks")
    a, b = a.astype(bool), b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def pearson_flagged(a, b) -> tuple[float, bool]:
    """Pearson correlation plus a flag that is True when either input is constant."""
    a, b = _pair(a, b)
    x, y = a.ravel(), b.ravel()
    if x.size < 2:
        raise ValueError("pearson needs at least two values")
    # exact test: the mean of a constant array need not equal its value
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0, True
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    r = np.dot(dx, dy) / math.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0)), False


def pearson(a, b) -> float:
    return pearson_flagged(a, b)[0]


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Single-scale SSIM, averaged over pixels and channels (mirror-padded borders)."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    w = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]

        def filt(z):
            return ndimage.correlate(z, w, mode="reflect")

        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(num / den)
    return float(np.mean(np.stack(vals)))


def delta_e(a, b, encoding: str = "linear") -> float:
    """Mean CIE76 colour difference between two RGB images.

    ``encoding`` says whether inputs are linear-light or sRGB-encoded values.
    """
    a, b = _pair(a, b)
    if a.shape[-1] != 3:
        raise ValueError("delta_e needs RGB images")
    if encoding == "srgb":
        a, b = srgb_to_linear(a), srgb_to_linear(b)
    elif encoding != "linear":
        raise ValueError(f"unknown encoding {encoding!r}")
    d = linear_rgb_to_lab(a) - linear_rgb_to_lab(b)
    return float(np.mean(np.sqrt(np.sum(d * d, axis=-1))))


# --- render-aware metrics ---------------------------------------------------------

def _check_materials(gt: MaterialMaps, pred: MaterialMaps):
    if (gt.height, gt.width) != (pred.height, pred.width):
        raise ShapeMismatchError("material sizes differ")


def _brdf_gated(A, N, S, alpha, O, l, v):
    h = _half(l, v)
    spec = _lobe(N @ h, N @ l, N @ v, float(v @ h), S, alpha)
    return (A / math.pi + spec[..., None]) * O[..., None]


def l_brdf_per_pixel(gt: MaterialMaps, pred: MaterialMaps, dirs: DirectionSet,
                     threads: int | None = None) -> np.ndarray:
    """Per-pixel root of the direction-averaged, cosine-weighted cube-root error."""
    _check_materials(gt, pred)

    def kernel(A1, N1, S1, a1, O1, A2, N2, S2, a2, O2):
        acc = np.zeros(A1.shape[:2])
        for l, v in zip(dirs.lights, dirs.views):
            d = _brdf_gated(A1, N1, S1, a1, O1, l, v) - _brdf_gated(A2, N2, S2, a2, O2, l, v)
            acc += np.cbrt(l[2] * l[2] * np.mean(d * d, axis=-1))
        return np.sqrt(acc / len(dirs))

    arrays = dict(
        A1=gt.albedo.data, N1=gt.normals.data, S1=gt.specular.data[..., 0],
        a1=roughness_to_alpha(gt.roughness.data[..., 0]), O1=gt.opacity.data[..., 0],
        A2=pred.albedo.data, N2=pred.normals.data, S2=pred.specular.data[..., 0],
        a2=roughness_to_alpha(pred.roughness.data[..., 0]), O2=pred.opacity.data[..., 0])
    return _tiles.map_rows(kernel, arrays, (gt.height, gt.width), threads)


def l_brdf(gt: MaterialMaps, pred: MaterialMaps, dirs: DirectionSet | None = None,
           threads: int | None = None) -> float:
    """Render-space reflectance error, ground truth first."""
    dirs = dirs or direction_set()
    return float(np.mean(l_brdf_per_pixel(gt, pred, dirs, threads)))


def l_btdf(gt: MaterialMaps, pred: MaterialMaps) -> float:
    """Mean absolute difference of the transmitted colour ``T * A * O``."""
    _check_materials(gt, pred)

    def tao(m):
        return (m.transmittance.data * m.opacity.data) * m.albedo.data

    return float(np.mean(np.abs(tao(gt) - tao(pred))))


def l_bsdf(gt: MaterialMaps, pred: MaterialMaps, dirs: DirectionSet | None = None,
           w_brdf: float = 0.5, threads: int | None = None) -> float:
    if not 0.0 <= w_brdf <= 1.0:
        raise ValueError("w_brdf must lie in [0, 1]")
    return combine_bsdf(l_brdf(gt, pred, dirs, threads), l_btdf(gt, pred), w_brdf)


def combine_bsdf(brdf: float, btdf: float, w_brdf: float = 0.5) -> float:
    return w_brdf * brdf + (1.0 - w_brdf) * btdf


# --- report -----------------------------------------------------------------------

@dataclass
class MetricReport:
    l1_albedo: float
    angular_normals: float
    l1_roughness: float
    l1_specular: float
    l1_transmittance: float
    jaccard_opacity: float
    pearson_r: float
    pearson_s: float
    pearson_t: float
    psnr: float
    ssim: float
    delta_e: float
    l_brdf: float
    l_btdf: float
    l_bsdf: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        d = dict(d)
        if d.pop("schema", None) != SCHEMA_VERSION:
            raise ValueError("unsupported metric report schema")
        return cls(**d)

    def csv_row(self, header: bool = False, label: str | None = None) -> str:
        d = asdict(self)
        d["flags"] = ";".join(d["flags"])
        if label is not None:
            d = {"label": label, **d}
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(d), lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow(d)
        return buf.getvalue()


def evaluate(gt: MaterialMaps, pred: MaterialMaps, dirs: DirectionSet | None = None,
             w_brdf: float = 0.5, threads: int | None = None) -> MetricReport:
    """Compute every metric; image metrics (PSNR, SSIM, ΔE) compare the albedo maps."""
    _check_materials(gt, pred)
    dirs = dirs or direction_set()
    flags = []
    corr = {}
    for key, name in (("r", "roughness"), ("s", "specular"), ("t", "transmittance")):
        val, degenerate = pearson_flagged(getattr(gt, name), getattr(pred, name))
        corr[key] = val
        if degenerate:
            flags.append(f"pearson_{key}_degenerate")
    p = psnr(gt.albedo, pred.albedo)
    if p > PSNR_CAP:
        p = PSNR_CAP
        flags.append("psnr_capped")
    brdf = l_brdf(gt, pred, dirs, threads)
    btdf = l_btdf(gt, pred)
    return MetricReport(
        l1_albedo=l1_map(gt.albedo, pred.albedo),
        angular_normals=angular_error(gt.normals, pred.normals),
        l1_roughness=l1_map(gt.roughness, pred.roughness),
        l1_specular=l1_map(gt.specular, pred.specular),
        l1_transmittance=l1_map(gt.transmittance, pred.transmittance),
        jaccard_opacity=jaccard(gt.opacity, pred.opacity),
        pearson_r=corr["r"], pearson_s=corr["s"], pearson_t=corr["t"],
        psnr=p,
        ssim=ssim(gt.albedo, pred.albedo),
        delta_e=delta_e(gt.albedo, pred.albedo),
        l_brdf=brdf, l_btdf=btdf, l_bsdf=combine_bsdf(brdf, btdf, w_brdf),
        flags=flags,
    )
