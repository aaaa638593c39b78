"""PNG/EXR image I/O and the on-disk material bundle format.

A bundle is a directory holding ``albedo.png``, ``normals.png``, ``specular.png``,
``roughness.png``, ``opacity.png``, ``transmittance.png`` and a ``material.json``
manifest with the physical resolution and per-map channel semantics.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import cv2
import numpy as np

from .color import linear_to_srgb, srgb_to_linear
from .material import MAP_NAMES, MaterialError, MaterialMaps, TextureMap

SCHEMA_VERSION = 1
MANIFEST = "material.json"

_MAP_SPEC = {
    "albedo": {"channels": 3, "transfer": "srgb", "encoding": "unorm", "bits": 16},
    "normals": {"channels": 3, "transfer": "linear", "encoding": "signed_unit", "bits": 16},
    "specular": {"channels": 1, "transfer": "linear", "encoding": "unorm", "bits": 16},
    "roughness": {"channels": 1, "transfer": "linear", "encoding": "unorm", "bits": 16},
    "opacity": {"channels": 1, "transfer": "linear", "encoding": "binary", "bits": 8},
    "transmittance": {"channels": 1, "transfer": "linear", "encoding": "unorm", "bits": 16},
}


class BundleError(MaterialError):
    """A material directory is missing files or is malformed."""


def read_png(path, transfer: str = "linear") -> np.ndarray:
    """Read an 8/16-bit PNG as float ``(H, W, C)`` in [0, 1], linearising sRGB if asked."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        raise ValueError(f"unsupported PNG sample type {raw.dtype}")
    if img.ndim == 2:
        img = img[..., None]
    elif img.shape[2] == 4:
        img = img[..., :3]
    if img.shape[2] == 3:
        img = img[..., ::-1]
    if transfer == "srgb":
        img = srgb_to_linear(img)
    elif transfer != "linear":
        raise ValueError(f"unknown transfer function {transfer!r}")
    return np.ascontiguousarray(img)


def write_png(path, img, transfer: str = "linear", bits: int = 16) -> None:
    """Write a float image (clamped to [0, 1]) as an 8/16-bit PNG."""
    img = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if transfer == "srgb":
        img = linear_to_srgb(img)
    elif transfer != "linear":
        raise ValueError(f"unknown transfer function {transfer!r}")
    img = np.clip(img, 0.0, 1.0)
    if bits == 16:
        q = np.round(img * 65535.0).astype(np.uint16)
    elif bits == 8:
        q = np.round(img * 255.0).astype(np.uint8)
    else:
        raise ValueError("bits must be 8 or 16")
    if q.shape[2] == 3:
        q = q[..., ::-1]
    elif q.shape[2] == 1:
        q = q[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise OSError(f"failed to write {path}")


def write_exr(path, img) -> None:
    """Write a linear float RGB image as OpenEXR (needs the optional ``OpenEXR`` package)."""
    try:
        import OpenEXR
    except ImportError as e:
        raise RuntimeError("EXR output needs the 'OpenEXR' package (pip install openexr)") from e
    img = np.asarray(getattr(img, "data", img), dtype=np.float32)
    channels = {"RGB": np.ascontiguousarray(img[..., :3])}
    header = {"compression": OpenEXR.ZIP_COMPRESSION, "type": OpenEXR.scanlineimage}
    with OpenEXR.File(header, channels) as f:
        f.write(str(path))


def write_image(path, img, transfer: str = "srgb", bits: int = 16) -> None:
    """Write by extension: ``.exr`` stays linear float, ``.png`` is quantised."""
    if str(path).lower().endswith(".exr"):
        write_exr(path, img)
    else:
        write_png(path, img, transfer=transfer, bits=bits)


def save_material(m: MaterialMaps, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    maps = {}
    for name in MAP_NAMES:
        spec = _MAP_SPEC[name]
        data = getattr(m, name).data
        if spec["encoding"] == "signed_unit":
            data = (data + 1.0) * 0.5
        fname = f"{name}.png"
        write_png(d / fname, data, transfer=spec["transfer"], bits=spec["bits"])
        maps[name] = {"file": fname, **spec}
    manifest = {"schema": SCHEMA_VERSION, "ppi": m.ppi, "width": m.width,
                "height": m.height, "maps": maps}
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_material(directory) -> MaterialMaps:
    d = Path(directory)
    if not d.is_dir():
        raise BundleError(f"{d} is not a directory")
    mpath = d / MANIFEST
    if not mpath.exists():
        raise BundleError(f"{d} has no {MANIFEST}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("schema") != SCHEMA_VERSION:
        raise BundleError(f"unsupported material schema {manifest.get('schema')!r}")
    ppi = float(manifest["ppi"])
    arrays = {}
    for name in MAP_NAMES:
        entry = manifest.get("maps", {}).get(name, {"file": f"{name}.png", **_MAP_SPEC[name]})
        path = d / entry["file"]
        if not path.exists():
            raise BundleError(f"missing map {path}")
        img = read_png(path, transfer=entry.get("transfer", "linear"))
        enc = entry.get("encoding", "unorm")
        if enc == "signed_unit":
            n = img * 2.0 - 1.0
            n[..., 2] = np.maximum(n[..., 2], 1e-6)
            img = n / np.linalg.norm(n, axis=-1, keepdims=True)
        elif enc == "binary":
            img = np.where(img >= 0.5, 1.0, 0.0)
        arrays[name] = img
    try:
        return MaterialMaps(**{k: TextureMap(v, ppi) for k, v in arrays.items()})
    except MaterialError as e:
        raise BundleError(f"{d}: {e}") from e


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
