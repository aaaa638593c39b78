"""Procedural ground-truth materials and pixel-aligned scanner image pairs.

Three families cover the hard cases for delighting: ``weave`` (periodic thread
relief with specular crowns), ``grain`` (leather-like wrinkles and creases) and
``mesh`` (perforated sheet with through-holes).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io as fio
from .material import (MaterialMaps, TextureMap, crop, flip_h, flip_v, resample,
                       resample_material)
from .shading import DEFAULT_ELEVATION, scanner_pair

FAMILIES = ("weave", "grain", "mesh")
SCHEMA_VERSION = 1


def sub_seed(seed: int, *keys: int) -> int:
    """Independent, stable seed for a named sub-stream (e.g. sample index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class MaterialRecipe:
    """Parameters of one procedural sample.

    ``period`` is the weave repeat (and hole spacing for ``mesh``) in pixels;
    ``bump_amplitude`` is the steepest normal tilt in degrees.
    """

    family: str = "weave"
    size: int = 256
    ppi: float = 1200.0
    seed: int = 0
    period: int = 16
    hole_radius: float = 3.0
    hole_density: float = 0.6
    bump_amplitude: float = 15.0
    base_color: tuple[float, float, float] = (0.55, 0.35, 0.25)
    second_color: tuple[float, float, float] = (0.30, 0.40, 0.60)
    specular_range: tuple[float, float] = (0.2, 0.6)
    roughness_range: tuple[float, float] = (0.35, 0.7)
    transmittance: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.size < 32:
            raise ValueError("size must be >= 32")
        if not 4 <= self.period <= self.size // 2 or self.period % 2:
            raise ValueError("period must be even and within [4, size/2]")
        if not 0.0 <= self.hole_density <= 1.0:
            raise ValueError("hole_density must lie in [0, 1]")
        if not 0.0 < self.hole_radius < self.period / 2:
            raise ValueError("hole_radius must lie in (0, period/2)")
        if not 0.0 <= self.bump_amplitude < 60.0:
            raise ValueError("bump_amplitude must lie in [0, 60) degrees")
        for name in ("base_color", "second_color"):
            c = getattr(self, name)
            if len(c) != 3 or min(c) < 0.0 or max(c) > 1.0:
                raise ValueError(f"{name} must be an RGB triple in [0, 1]")
        for name in ("specular_range", "roughness_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1")
        if not 0.0 <= self.transmittance <= 0.9:
            raise ValueError("transmittance must lie in [0, 0.9]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> MaterialRecipe:
        d = dict(d)
        for k in ("base_color", "second_color", "specular_range", "roughness_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def random_recipe(family: str, seed: int, size: int = 256, ppi: float = 1200.0,
                  **overrides) -> MaterialRecipe:
    """Draw family parameters from their documented ranges."""
    rng = np.random.default_rng(seed)
    params = dict(
        family=family, size=size, ppi=ppi, seed=seed,
        period=int(rng.choice([p for p in (12, 16, 20, 24) if p <= size // 2] or [size // 2 & ~1])),
        hole_density=float(rng.uniform(0.4, 0.9)),
        bump_amplitude=float(rng.uniform(8.0, 18.0)),
        base_color=tuple(float(x) for x in rng.uniform(0.15, 0.8, 3)),
        second_color=tuple(float(x) for x in rng.uniform(0.15, 0.8, 3)),
        specular_range=(float(rng.uniform(0.1, 0.3)), float(rng.uniform(0.4, 0.8))),
        roughness_range=(float(rng.uniform(0.3, 0.45)), float(rng.uniform(0.55, 0.8))),
    )
    params["hole_radius"] = float(rng.uniform(0.2, 0.35) * params["period"])
    params.update(overrides)
    return MaterialRecipe(**params)


# --- procedural fields ---------------------------------------------------------------

def _smooth_noise(rng, size, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return f / (f.std() + 1e-12)


def _normals_from_height(h, amplitude_deg):
    gy, gx = np.gradient(h)
    gmax = np.max(np.hypot(gx, gy))
    k = math.tan(math.radians(amplitude_deg)) / gmax if gmax > 0 else 0.0
    n = np.stack([-k * gx, -k * gy, np.ones_like(h)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _lerp_range(rng_pair, t):
    lo, hi = rng_pair
    return lo + (hi - lo) * np.clip(t, 0.0, 1.0)


def _weave(r: MaterialRecipe, rng):
    n = r.size
    cell = r.period // 2
    y, x = np.mgrid[0:n, 0:n].astype(float) + 0.5
    i, j = np.floor(x / cell), np.floor(y / cell)
    fx, fy = x / cell - i, y / cell - j
    warp_on_top = ((i + j) % 2) == 0
    # warp runs along y: profile across x, rising over the crossing along y
    across = np.where(warp_on_top, fx, fy)
    along = np.where(warp_on_top, fy, fx)
    crown = np.sin(math.pi * across)
    height = crown * (0.6 + 0.4 * np.sin(math.pi * along))
    height = ndimage.gaussian_filter(height, 0.7, mode="wrap")
    base = np.asarray(r.base_color)
    second = np.asarray(r.second_color)
    color = np.where(warp_on_top[..., None], base, second)
    fiber = 1.0 + 0.05 * _smooth_noise(rng, n, 0.8)[..., None]
    shade = 0.85 + 0.15 * crown[..., None]
    albedo = color * fiber * shade
    spec = _lerp_range(r.specular_range, crown ** 2)
    rough = _lerp_range(r.roughness_range, 1.0 - crown + 0.1 * _smooth_noise(rng, n, 2.0))
    trans = np.full((n, n), r.transmittance)
    return albedo, height, spec, rough, trans, np.zeros((n, n), bool)


def _grain(r: MaterialRecipe, rng):
    n = r.size
    s = r.period / 2.0
    height = (_smooth_noise(rng, n, s) + 0.5 * _smooth_noise(rng, n, s / 2.5)
              + 0.25 * _smooth_noise(rng, n, s / 6.0))
    crease = np.exp(-(_smooth_noise(rng, n, s * 0.8) ** 2) / 0.05)
    height = height - 1.5 * crease
    low = _smooth_noise(rng, n, s * 3.0)
    base = np.asarray(r.base_color)
    albedo = base * (1.0 + 0.08 * low[..., None]) * (1.0 - 0.25 * crease[..., None])
    t = 0.5 + 0.25 * _smooth_noise(rng, n, s)
    spec = _lerp_range(r.specular_range, t)
    rough = _lerp_range(r.roughness_range, 1.0 - t)
    trans = np.full((n, n), r.transmittance)
    return albedo, height, spec, rough, trans, np.zeros((n, n), bool)


def _mesh(r: MaterialRecipe, rng):
    n = r.size
    p = r.period
    y, x = np.mgrid[0:n, 0:n].astype(float) + 0.5
    i, j = np.floor(x / p), np.floor(y / p)
    cx, cy = (i + 0.5) * p, (j + 0.5) * p
    dist = np.hypot(x - cx, y - cy)
    sites = rng.uniform(size=(int(math.ceil(n / p)),) * 2) < r.hole_density
    has_hole = sites[j.astype(int), i.astype(int)]
    hole = has_hole & (dist <= r.hole_radius)
    rim = np.where(has_hole, np.exp(-((dist - r.hole_radius - 1.5) ** 2) / 2.0), 0.0)
    height = 0.4 * _smooth_noise(rng, n, 3.0) + 1.5 * rim
    base = np.asarray(r.base_color)
    albedo = base * (1.0 + 0.06 * _smooth_noise(rng, n, 4.0)[..., None])
    t = 0.5 + 0.25 * _smooth_noise(rng, n, 6.0)
    spec = _lerp_range(r.specular_range, t)
    rough = _lerp_range(r.roughness_range, 1.0 - t)
    trans = np.where(hole, 1.0, r.transmittance)
    return albedo, height, spec, rough, trans, hole


_GENERATORS = {"weave": _weave, "grain": _grain, "mesh": _mesh}


def generate_material(recipe: MaterialRecipe) -> MaterialMaps:
    """Deterministically build a material bundle from a recipe."""
    rng = np.random.default_rng(recipe.seed)
    albedo, height, spec, rough, trans, hole = _GENERATORS[recipe.family](recipe, rng)
    normals = _normals_from_height(height, recipe.bump_amplitude)
    opacity = np.where(hole, 0.0, 1.0)
    return MaterialMaps.from_arrays(
        np.clip(albedo, 0.0, 1.0), normals, np.clip(spec, 0.0, 1.0),
        np.clip(rough, 0.0, 1.0), opacity, np.clip(trans, 0.0, 1.0), ppi=recipe.ppi)


# --- samples, pairs and augmentation ------------------------------------------------

@dataclass(frozen=True)
class Sample:
    maps: MaterialMaps
    i_d: TextureMap
    i_l: TextureMap
    augmentations: tuple[str, ...] = ()


def generate_pair(maps: MaterialMaps, led_elevation: float = DEFAULT_ELEVATION,
                  intensity: float = 1.0, threads: int | None = None):
    """Pixel-aligned ``(I_d, I_l)`` for a ground-truth bundle."""
    return scanner_pair(maps, led_elevation, intensity, threads)


def make_sample(recipe: MaterialRecipe, led_elevation: float = DEFAULT_ELEVATION,
                intensity: float = 1.0, threads: int | None = None) -> Sample:
    maps = generate_material(recipe)
    i_d, i_l = generate_pair(maps, led_elevation, intensity, threads)
    return Sample(maps, i_d, i_l)


def _parse_op(op: str):
    name, _, arg = op.partition(":")
    if name.startswith("crop") and name[4:].isdigit():
        return "crop", int(name[4:])
    if name == "crop":
        return "crop", int(arg or 128)
    if name == "rescale":
        return "rescale", float(arg) if arg else None
    if name in ("flip_h", "flip_v"):
        return name, None
    raise ValueError(f"unknown augmentation {op!r}")


def augment(sample: Sample, ops, seed: int = 0) -> Sample:
    """Apply the same augmentation chain to the maps and both images.

    ``ops`` items: ``"crop128"`` (or ``"crop:N"``), ``"rescale"`` (random PPI in
    [300, 1200]) or ``"rescale:PPI"``, ``"flip_h"``, ``"flip_v"``.
    """
    rng = np.random.default_rng(seed)
    maps, i_d, i_l = sample.maps, sample.i_d, sample.i_l
    applied = list(sample.augmentations)
    for op in ops:
        kind, arg = _parse_op(op)
        if kind == "crop":
            if arg > maps.width or arg > maps.height:
                raise ValueError(f"crop {arg} larger than {maps.width}x{maps.height} sample")
            x0 = int(rng.integers(0, maps.width - arg + 1))
            y0 = int(rng.integers(0, maps.height - arg + 1))

            def f(t, x0=x0, y0=y0, arg=arg):
                return crop(t, x0, y0, arg, arg)

            applied.append(f"crop:{arg}@{x0},{y0}")
        elif kind == "rescale":
            ppi = arg if arg is not None else float(rng.uniform(300.0, 1200.0))
            maps = resample_material(maps, ppi)
            i_d, i_l = resample(i_d, ppi), resample(i_l, ppi)
            applied.append(f"rescale:{ppi:.6g}")
            continue
        else:
            f = flip_h if kind == "flip_h" else flip_v
            applied.append(kind)
        maps = maps.map_each(lambda _name, t: f(t))
        i_d, i_l = f(i_d), f(i_l)
    return Sample(maps, i_d, i_l, tuple(applied))


# --- corpus statistics and manifest -----------------------------------------------------

def image_stats(images) -> dict:
    """Pooled per-channel mean and (population) std over a list of images."""
    images = [np.asarray(getattr(im, "data", im), float) for im in images]
    if not images:
        raise ValueError("empty corpus")
    flat = np.concatenate([im.reshape(-1, im.shape[-1]) for im in images])
    mean = flat.mean(axis=0)
    std = np.sqrt(np.mean((flat - mean) ** 2, axis=0))
    return {"mean": mean.tolist(), "std": std.tolist()}


@dataclass
class DatasetManifest:
    root: Path
    samples: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, **self.meta, "samples": self.samples,
                "stats": self.stats}

    def write(self, path=None) -> Path:
        path = Path(path or self.root / "manifest.json")
        fio.write_json(path, self.to_dict())
        return path

    @classmethod
    def read(cls, path) -> DatasetManifest:
        path = Path(path)
        d = json.loads(path.read_text())
        if d.pop("schema", None) != SCHEMA_VERSION:
            raise ValueError("unsupported dataset manifest schema")
        samples = d.pop("samples")
        stats = d.pop("stats", {})
        return cls(path.parent, samples, stats, d)


def corpus_stats(manifest: DatasetManifest) -> dict:
    """Per-illumination channel statistics; also stored on the manifest."""
    if not manifest.samples:
        raise ValueError("empty corpus")
    stats = {}
    for key in ("i_d", "i_l"):
        imgs = [fio.read_png(manifest.root / s[key]) for s in manifest.samples]
        stats[key] = image_stats(imgs)
    manifest.stats = stats
    return stats


def write_sample(sample: Sample, directory) -> dict:
    d = Path(directory)
    fio.save_material(sample.maps, d / "material")
    fio.write_png(d / "i_d.png", sample.i_d, transfer="linear", bits=16)
    fio.write_png(d / "i_l.png", sample.i_l, transfer="linear", bits=16)
    return {"material": "material", "i_d": "i_d.png", "i_l": "i_l.png"}


def generate_dataset(out_dir, count: int, seed: int = 0, size: int = 256, ppi: float = 1200.0,
                     families=FAMILIES, led_elevation: float = DEFAULT_ELEVATION,
                     intensity: float = 1.0, augmentations=(), recipe_overrides=None,
                     threads: int | None = None) -> DatasetManifest:
    """Generate ``count`` samples (families cycled) with per-sample sub-seeds."""
    if count < 1:
        raise ValueError("count must be >= 1")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx in range(count):
        family = families[idx % len(families)]
        recipe = random_recipe(family, sub_seed(seed, idx, 0), size, ppi,
                               **(recipe_overrides or {}))
        sample = make_sample(recipe, led_elevation, intensity, threads)
        if augmentations:
            sample = augment(sample, augmentations, sub_seed(seed, idx, 1))
        name = f"sample_{idx:04d}"
        files = write_sample(sample, root / name)
        entries.append({"index": idx, "recipe": recipe.to_dict(),
                        "material": f"{name}/{files['material']}",
                        "i_d": f"{name}/{files['i_d']}", "i_l": f"{name}/{files['i_l']}",
                        "augmentations": list(sample.augmentations)})
    manifest = DatasetManifest(root, entries, meta={
        "seed": seed, "count": count, "led_elevation": led_elevation,
        "intensity": intensity, "image_transfer": "linear"})
    corpus_stats(manifest)
    manifest.write()
    return manifest
