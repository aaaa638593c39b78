"""Release-gate checks comparing production code with the naive oracles."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import metrics, oracles, shading
from .fit import FitConfig, FitState, Observation, objective, objective_and_gradient
from .losses import focal_frequency_loss
from .material import MaterialMaps, normal_decode, normal_encode


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def random_material(rng, h=8, w=8, holes=True) -> MaterialMaps:
    """Small random material with valid maps; used by tests and self-checks."""
    uv = rng.uniform(-0.9, 0.9, size=(h, w, 2))
    t = rng.uniform(0.0, 1.0, size=(h, w, 1))
    o = (rng.uniform(size=(h, w, 1)) > 0.2).astype(float) if holes else np.ones((h, w, 1))
    return MaterialMaps.from_arrays(
        rng.uniform(0.0, 1.0, size=(h, w, 3)), normal_decode(uv[..., 0], uv[..., 1]),
        rng.uniform(0.0, 1.0, size=(h, w, 1)), rng.uniform(0.0, 1.0, size=(h, w, 1)),
        o, t)


def check_ggx_normalization(alphas=(0.1, 0.5, 1.0), tol=0.01) -> CheckResult:
    vals = [oracles.ggx_normalization(a) for a in alphas]
    worst = max(abs(v - 1.0) for v in vals)
    detail = ", ".join(f"a={a}: {v:.4f}" for a, v in zip(alphas, vals))
    return CheckResult("ggx normalization", worst <= tol, detail)


def check_mapping_roundtrip(n=64, tol_deg=1e-6) -> CheckResult:
    g = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    u, v = np.meshgrid(g, g, indexing="ij")
    nrm = normal_decode(u, v)
    back = normal_encode(nrm)
    again = normal_decode(back[..., 0], back[..., 1])
    # atan2 form stays accurate for tiny angles, unlike arccos of the dot product
    cross = np.linalg.norm(np.cross(nrm, again), axis=-1)
    ang = np.degrees(np.arctan2(cross, np.sum(nrm * again, axis=-1)))
    unit = np.abs(np.linalg.norm(nrm, axis=-1) - 1.0).max()
    ok = ang.max() <= tol_deg and unit <= 1e-12
    return CheckResult("mapping round-trip", ok,
                       f"max angle {ang.max():.2e} deg, max |norm-1| {unit:.1e}")


def check_metric_oracles(trials=5, seed=0, tol=1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    dirs = metrics.direction_set(4, seed=seed)
    worst = 0.0
    for _ in range(trials):
        gt, pred = random_material(rng), random_material(rng)
        pairs = [
            (metrics.l1_map(gt.albedo, pred.albedo), oracles.l1(gt.albedo, pred.albedo)),
            (metrics.angular_error(gt.normals, pred.normals),
             oracles.angular_deg(gt.normals, pred.normals)),
            (metrics.jaccard(gt.opacity, pred.opacity), oracles.jaccard(gt.opacity, pred.opacity)),
            (metrics.pearson(gt.roughness, pred.roughness),
             oracles.pearson(gt.roughness, pred.roughness)),
            (metrics.psnr(gt.albedo, pred.albedo), oracles.psnr(gt.albedo, pred.albedo)),
            (metrics.ssim(gt.albedo, pred.albedo), oracles.ssim(gt.albedo, pred.albedo)),
            (metrics.delta_e(gt.albedo, pred.albedo), oracles.delta_e(gt.albedo, pred.albedo)),
            (metrics.l_brdf(gt, pred, dirs),
             oracles.l_brdf(gt, pred, dirs.lights, dirs.views)),
            (metrics.l_btdf(gt, pred), oracles.l_btdf(gt, pred)),
        ]
        for got, want in pairs:
            worst = max(worst, abs(got - want))
    return CheckResult("metric oracles", worst <= tol, f"max abs diff {worst:.1e}")


def check_ggx_scalar(trials=200, seed=1, tol=1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        uv = rng.uniform(-0.95, 0.95, 2)
        n = normal_decode(uv[0], uv[1])
        lv = [normal_decode(*rng.uniform(-0.95, 0.95, 2)) for _ in range(2)]
        s, r = rng.uniform(size=2)
        got = shading.ggx_specular(n, s, r, shading.DirectionPair(lv[0], lv[1]))
        want = oracles.ggx_specular(n, s, r, lv[0], lv[1])
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    return CheckResult("ggx vs scalar oracle", worst <= tol, f"max rel diff {worst:.1e}")


def check_focal_frequency(seed=2, tol=1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(3, 5, 2)), rng.uniform(size=(3, 5, 2))
    got, want = focal_frequency_loss(a, b), oracles.focal_frequency(a, b)
    return CheckResult("focal frequency vs DFT", abs(got - want) <= tol,
                       f"abs diff {abs(got - want):.1e}")


def gradient_check(states=5, coords=20, seed=3, size=6, h=1e-4):
    """Worst relative error of analytic vs central-difference latent gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(states):
        truth = random_material(rng, size, size, holes=False)
        obs = tuple(
            Observation(shading.render(truth, il).data, il)
            for il in (shading.IlluminationModel.scanner(), shading.IlluminationModel.diffuse(),
                       shading.IlluminationModel.backlight()))
        lat = {
            "albedo": rng.normal(0, 1, (size, size, 3)),
            "normal": rng.normal(0, 0.5, (size, size, 2)),
            "specular": rng.normal(0, 1, (size, size)),
            "roughness": rng.normal(0, 1, (size, size)),
            "transmittance": rng.normal(-1, 1, (size, size)),
            "opacity": np.zeros((size, size)),
        }
        cfg = FitConfig(observations=obs, seed=0)
        state = FitState.from_latents(lat)
        _, grads = objective_and_gradient(state, cfg)
        names = [k for k in lat if k != "opacity"]
        for _ in range(coords):
            k = names[rng.integers(len(names))]
            idx = tuple(int(rng.integers(n)) for n in lat[k].shape)
            plus = {kk: vv.copy() for kk, vv in lat.items()}
            minus = {kk: vv.copy() for kk, vv in lat.items()}
            plus[k][idx] += h
            minus[k][idx] -= h
            fd = (objective(FitState.from_latents(plus), cfg)
                  - objective(FitState.from_latents(minus), cfg)) / (2 * h)
            an = grads[k][idx]
            err = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst


def check_gradients(tol=1e-4) -> CheckResult:
    worst = gradient_check(states=2, coords=10)
    return CheckResult("gradient check", worst <= tol, f"max rel err {worst:.1e}")


def check_bsdf_identities(seed=4) -> CheckResult:
    rng = np.random.default_rng(seed)
    m = random_material(rng)
    A, N, S, R, O, T = shading.material_arrays(m)
    worst = 0.0
    for il in (shading.IlluminationModel.scanner(), shading.IlluminationModel.diffuse(),
               shading.IlluminationModel.backlight()):
        img = shading.render_arrays(A, N, S, R, np.zeros_like(O), T, il)
        worst = max(worst, float(np.abs(img).max()))
    dp = shading.DirectionPair(shading.light_from_elevation(40.0), shading.Z_AXIS)
    for y in range(m.height):
        for x in range(m.width):
            f = shading.eval_bsdf_pixel(A[y, x], N[y, x], S[y, x], R[y, x], 1.0, 0.0, dp)
            g = shading.eval_brdf_pixel(A[y, x], N[y, x], S[y, x], R[y, x], dp)
            worst = max(worst, float(np.abs(f - g).max()))
    return CheckResult("bsdf identities", worst <= 1e-12, f"max abs diff {worst:.1e}")


CHECKS = (check_ggx_normalization, check_mapping_roundtrip, check_ggx_scalar,
          check_bsdf_identities, check_focal_frequency, check_metric_oracles, check_gradients)


def run(checks=CHECKS) -> list[CheckResult]:
    out = []
    for fn in checks:
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as e:  # a crashing check is a failing check
            res = CheckResult(fn.__name__.removeprefix("check_").replace("_", " "), False,
                              f"{type(e).__name__}: {e}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  "
                     f"{r.seconds:5.2f}s  {r.detail}")
    n_ok = sum(r.passed for r in results)
    lines.append(f"{n_ok}/{len(results)} checks passed")
    return "\n".join(lines)
