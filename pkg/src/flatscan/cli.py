"""``flatscan`` command-line interface.

Exit codes: 0 success, 2 usage or input error, 3 data mismatch, 4 selftest failure.
Settings come from built-in defaults, then an optional TOML ``--config`` file,
then command-line flags; later sources win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import io as fio
from .fit import FitConfig, Observation, delight_material, fit_material_detailed
from .losses import LossWeights
from .material import MaterialError
from .metrics import SCHEMA_VERSION, ShapeMismatchError, direction_set, evaluate
from .shading import DEFAULT_ELEVATION, IlluminationModel, render

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("flatscan")

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH, EXIT_SELFTEST = 0, 2, 3, 4

# keys accepted at the top level of a config file, with their types
_TOP_KEYS = {"seed": int, "threads": int, "ppi": float, "elevation": float,
             "intensity": float, "iterations": int, "lr": float, "out": str}
_FIT_KEYS = {"lr_halving": int, "levels": tuple, "tv_weight": float, "prior_weight": float,
             "tau": float, "init_transmittance": float, "init_specular": float,
             "init_noise": float, "l1_smoothing": float}
_WEIGHT_KEYS = {f.name for f in dataclasses.fields(LossWeights)}


class UsageError(Exception):
    """Bad flags, config or input files (exit code 2)."""


def load_config(path) -> dict:
    """Read and validate a TOML config; unknown keys are rejected."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError as e:
        raise UsageError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"invalid config {path}: {e}") from e
    cfg = {"fit": {}, "weights": {}}
    for key, val in raw.items():
        if key == "fit" and isinstance(val, dict):
            bad = set(val) - set(_FIT_KEYS)
            if bad:
                raise UsageError(f"unknown [fit] keys: {sorted(bad)}")
            cfg["fit"] = {k: _FIT_KEYS[k](v) for k, v in val.items()}
        elif key == "weights" and isinstance(val, dict):
            bad = set(val) - _WEIGHT_KEYS
            if bad:
                raise UsageError(f"unknown [weights] keys: {sorted(bad)}")
            cfg["weights"] = {k: float(v) for k, v in val.items()}
        elif key in _TOP_KEYS:
            cfg[key] = _TOP_KEYS[key](val)
        else:
            raise UsageError(f"unknown config key {key!r}")
    return cfg


def _settings(args) -> dict:
    """Merge defaults < config file < explicit flags."""
    s = {"seed": 0, "threads": None, "ppi": None, "elevation": DEFAULT_ELEVATION,
         "intensity": 1.0, "iterations": None, "lr": None, "out": None,
         "fit": {}, "weights": {}}
    if getattr(args, "config", None):
        s.update(load_config(args.config))
    for key in _TOP_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            s[key] = val
    return s


def _fit_config(s: dict) -> FitConfig:
    kw = dict(s["fit"])
    if s["iterations"] is not None:
        kw["iterations"] = s["iterations"]
    if s["lr"] is not None:
        kw["lr"] = s["lr"]
    return FitConfig(weights=LossWeights(**s["weights"]), seed=s["seed"], threads=s["threads"],
                     **kw)


def _require_out(s: dict) -> Path:
    if not s["out"]:
        raise UsageError("--out is required")
    return Path(s["out"])


def _load_bundle(path):
    try:
        return fio.load_material(path)
    except (fio.BundleError, OSError) as e:
        raise UsageError(str(e)) from e


def _read_image(path, transfer):
    if not Path(path).is_file():
        raise UsageError(f"input image not found: {path}")
    img = fio.read_png(path, transfer=transfer)
    if img.shape[2] != 3:
        raise UsageError(f"{path}: expected an RGB image")
    return img


def _illumination(args, s) -> IlluminationModel:
    if args.light == "directional":
        return IlluminationModel.scanner(s["elevation"], s["intensity"])
    if args.light == "diffuse":
        return IlluminationModel.diffuse(s["intensity"])
    return IlluminationModel.backlight(s["intensity"])


# --- subcommands ---------------------------------------------------------------------

def cmd_render(args, s) -> int:
    out = _require_out(s)
    maps = _load_bundle(args.material)
    img = render(maps, _illumination(args, s), threads=s["threads"])
    fio.write_image(out, img, transfer=args.transfer)
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_delight(args, s) -> int:
    out = _require_out(s)
    i_l = _read_image(args.image, args.transfer)
    ppi = s["ppi"] or 1200.0
    i_d_hat, residual, maps = delight_material(i_l, s["elevation"], _fit_config(s),
                                               s["intensity"], ppi)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_png(out / "i_d_hat.png", i_d_hat, transfer=args.transfer)
    # signed residual stored offset-encoded as (r + 1) / 2
    fio.write_png(out / "residual.png", (residual.data + 1.0) * 0.5, transfer="linear")
    fio.save_material(maps, out / "material")
    fio.write_json(out / "delight.json", {
        "schema": SCHEMA_VERSION, "input": str(args.image), "elevation": s["elevation"],
        "intensity": s["intensity"], "ppi": ppi, "seed": s["seed"],
        "image_transfer": args.transfer, "residual_encoding": "(r+1)/2",
        "files": {"i_d_hat": "i_d_hat.png", "residual": "residual.png",
                  "material": "material"}})
    log.info("wrote %s", out)
    return EXIT_OK


def read_observation_manifest(path):
    """Parse a fit manifest: ``{"schema": 1, "ppi": .., "observations": [..]}``.

    Each observation has ``image`` (relative to the manifest), an optional
    ``transfer`` and an ``illumination`` dict accepted by
    :meth:`IlluminationModel.from_dict` (``elevation`` is allowed for directional light).
    """
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"observation manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from e
    if doc.get("schema") != SCHEMA_VERSION:
        raise UsageError(f"{path}: unsupported schema {doc.get('schema')!r}")
    entries = doc.get("observations") or []
    if not entries:
        raise UsageError(f"{path}: no observations listed")
    obs = []
    for e in entries:
        try:
            illum = IlluminationModel.from_dict(e["illumination"])
            img = _read_image(path.parent / e["image"], e.get("transfer", "linear"))
        except (KeyError, TypeError, ValueError) as err:
            raise UsageError(f"{path}: bad observation entry {e!r}: {err}") from err
        obs.append(Observation(img, illum))
    if any(o.image.shape != obs[0].image.shape for o in obs):
        raise ShapeMismatchError("observations are not pixel-aligned")
    return obs, doc.get("ppi")


def cmd_fit(args, s) -> int:
    out = _require_out(s)
    obs, manifest_ppi = read_observation_manifest(args.manifest)
    ppi = s["ppi"] or manifest_ppi or 1200.0
    result = fit_material_detailed(obs, _fit_config(s), ppi)
    fio.save_material(result.maps, out)
    fio.write_json(out / "fit.json", {
        "schema": SCHEMA_VERSION, "manifest": str(args.manifest), "seed": s["seed"],
        "final_objective": result.final_objective, "iterations": len(result.history) - 1})
    log.info("final objective %.6g; wrote %s", result.final_objective, out)
    return EXIT_OK


def cmd_metrics(args, s) -> int:
    gt, pred = _load_bundle(args.gt), _load_bundle(args.pred)
    report = evaluate(gt, pred, direction_set(args.directions, s["seed"]), args.w_brdf,
                      threads=s["threads"])
    text = report.to_json()
    if s["out"]:
        Path(s["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(s["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(report.csv_row(header=True, label=args.label))
    return EXIT_OK


def cmd_gen(args, s) -> int:
    from .datasetgen import FAMILIES, generate_dataset
    out = _require_out(s)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    families = tuple(args.families.split(",")) if args.families else FAMILIES
    bad = set(families) - set(FAMILIES)
    if bad:
        raise UsageError(f"unknown families: {sorted(bad)}")
    ops = tuple(args.augment.split(",")) if args.augment else ()
    manifest = generate_dataset(out, args.count, seed=s["seed"], size=args.size,
                                ppi=s["ppi"] or 1200.0, families=families,
                                led_elevation=s["elevation"], intensity=s["intensity"],
                                augmentations=ops, threads=s["threads"])
    log.info("wrote %d samples to %s", len(manifest.samples), out)
    return EXIT_OK


def cmd_selftest(args, s) -> int:
    from . import selftest
    results = selftest.run()
    print(selftest.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master random seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads for tiled kernels")
    common.add_argument("--config", help="TOML file with default settings")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    light = argparse.ArgumentParser(add_help=False)
    light.add_argument("--elevation", type=float, help="LED elevation in degrees (default 55)")
    light.add_argument("--intensity", type=float, help="light intensity (default 1)")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--iterations", type=int, help="Adam iterations per level")
    fitting.add_argument("--lr", type=float, help="initial learning rate")
    fitting.add_argument("--ppi", type=float, help="resolution recorded in outputs")

    p = argparse.ArgumentParser(prog="flatscan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", parents=[common, light], help="render a material bundle")
    r.add_argument("material", help="material bundle directory")
    r.add_argument("--light", choices=("directional", "diffuse", "backlight"),
                   default="directional")
    r.add_argument("--transfer", choices=("srgb", "linear"), default="srgb",
                   help="PNG transfer function (ignored for .exr)")
    r.set_defaults(func=cmd_render)

    d = sub.add_parser("delight", parents=[common, light, fitting],
                       help="remove shading from a single-LED scan")
    d.add_argument("image", help="directionally lit RGB PNG")
    d.add_argument("--transfer", choices=("srgb", "linear"), default="linear",
                   help="transfer function of the input and of i_d_hat.png")
    d.set_defaults(func=cmd_delight)

    f = sub.add_parser("fit", parents=[common, fitting], help="fit a material to observations")
    f.add_argument("manifest", help="JSON observation manifest")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("metrics", parents=[common], help="compare two material bundles")
    m.add_argument("gt", help="ground-truth bundle")
    m.add_argument("pred", help="predicted bundle")
    m.add_argument("--csv", help="also write a one-row CSV here")
    m.add_argument("--label", help="label column for the CSV row")
    m.add_argument("--directions", type=int, default=50, help="light/view pairs")
    m.add_argument("--w-brdf", type=float, default=0.5, help="reflection weight in L_BSDF")
    m.set_defaults(func=cmd_metrics)

    g = sub.add_parser("gen", parents=[common, light], help="generate a synthetic dataset")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--size", type=int, default=256)
    g.add_argument("--ppi", type=float)
    g.add_argument("--families", help="comma-separated subset of weave,grain,mesh")
    g.add_argument("--augment", help="comma-separated ops, e.g. crop128,flip_h,rescale")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("selftest", parents=[common], help="run oracle and identity checks")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        s = _settings(args)
        if s["threads"] is not None and s["threads"] < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args, s)
    except ShapeMismatchError as e:
        print(f"flatscan: shape mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except (UsageError, MaterialError, FileNotFoundError, ValueError) as e:
        print(f"flatscan: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
