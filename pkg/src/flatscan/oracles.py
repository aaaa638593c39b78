"""Naive reference implementations used to cross-check the vectorised code.

Everything here is written with explicit Python loops and the ``math`` module,
sharing no code with the production paths beyond plain data containers. Keep it
that way: these functions are only useful while they stay independent.
"""

import cmath
import math

import numpy as np


def _flat_pixels(a):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return a


def l1(a, b):
    a, b = _flat_pixels(a), _flat_pixels(b)
    h, w, c = a.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            for k in range(c):
                total += abs(a[y, x, k] - b[y, x, k])
    return total / (h * w * c)


def angular_deg(na, nb):
    na, nb = _flat_pixels(na), _flat_pixels(nb)
    h, w, _ = na.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            d = sum(na[y, x, k] * nb[y, x, k] for k in range(3))
            total += math.degrees(math.acos(max(-1.0, min(1.0, d))))
    return total / (h * w)


def jaccard(a, b):
    a, b = _flat_pixels(a), _flat_pixels(b)
    inter = union = 0
    for p, q in zip(a.ravel(), b.ravel()):
        inter += int(p == 1.0 and q == 1.0)
        union += int(p == 1.0 or q == 1.0)
    return 1.0 if union == 0 else inter / union


def pearson(a, b):
    xs = [float(v) for v in _flat_pixels(a).ravel()]
    ys = [float(v) for v in _flat_pixels(b).ravel()]
    n = len(xs)
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        return 0.0
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def psnr(a, b):
    a, b = _flat_pixels(a), _flat_pixels(b)
    vals = [(p - q) ** 2 for p, q in zip(a.ravel(), b.ravel())]
    mse = sum(vals) / len(vals)
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def ssim(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03):
    a, b = _flat_pixels(a), _flat_pixels(b)
    h, w, c = a.shape
    r = size // 2
    g = [math.exp(-((i - r) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    norm = sum(g) ** 2
    c1, c2 = k1 ** 2, k2 ** 2

    def mirror(i, n):
        # half-sample symmetric extension: ... b a | a b ... | y z | z y ...
        period = 2 * n
        i %= period
        return i if i < n else period - 1 - i

    total = 0.0
    for k in range(c):
        for y in range(h):
            for x in range(w):
                sa = sb = saa = sbb = sab = 0.0
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        wt = g[dy + r] * g[dx + r] / norm
                        p = a[mirror(y + dy, h), mirror(x + dx, w), k]
                        q = b[mirror(y + dy, h), mirror(x + dx, w), k]
                        sa += wt * p
                        sb += wt * q
                        saa += wt * p * p
                        sbb += wt * q * q
                        sab += wt * p * q
                va, vb, cov = saa - sa * sa, sbb - sb * sb, sab - sa * sb
                total += ((2 * sa * sb + c1) * (2 * cov + c2)
                          / ((sa * sa + sb * sb + c1) * (va + vb + c2)))
    return total / (h * w * c)


def _lab(rgb):
    m = ((0.4124564, 0.3575761, 0.1804375),
         (0.2126729, 0.7151522, 0.0721750),
         (0.0193339, 0.1191920, 0.9503041))
    xyz = [sum(m[i][j] * rgb[j] for j in range(3)) for i in range(3)]
    white = [sum(row) for row in m]
    eps, kappa = 216 / 24389, 24389 / 27

    def f(t):
        return t ** (1.0 / 3.0) if t > eps else (kappa * t + 16) / 116

    fx, fy, fz = (f(xyz[i] / white[i]) for i in range(3))
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def delta_e(a, b):
    a, b = _flat_pixels(a), _flat_pixels(b)
    h, w, _ = a.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            la, lb = _lab(a[y, x]), _lab(b[y, x])
            total += math.sqrt(sum((p - q) ** 2 for p, q in zip(la, lb)))
    return total / (h * w)


# --- shading ---------------------------------------------------------------------

def _dot(p, q):
    return p[0] * q[0] + p[1] * q[1] + p[2] * q[2]


def ggx_specular(n, s, r, l, v):
    """Scalar GGX lobe written straight from the textbook formulas."""
    nl, nv = _dot(n, l), _dot(n, v)
    if nl <= 0 or nv <= 0:
        return 0.0
    alpha = max(r * r, 1e-3)
    hx, hy, hz = l[0] + v[0], l[1] + v[1], l[2] + v[2]
    hn = math.sqrt(hx * hx + hy * hy + hz * hz)
    hv = (hx / hn, hy / hn, hz / hn)
    nh, vh = _dot(n, hv), _dot(v, hv)
    a2 = alpha * alpha
    d = a2 / (math.pi * (nh * nh * (a2 - 1) + 1) ** 2)
    # height-correlated Smith G2 via the Lambda functions
    def lam(c):
        t2 = (1 - c * c) / (c * c)
        return (-1 + math.sqrt(1 + a2 * t2)) / 2

    g = 1.0 / (1.0 + lam(nl) + lam(nv))
    f0 = 0.08 * s
    f = f0 + (1 - f0) * (1 - vh) ** 5
    return s * d * g * f / (4 * nl * nv)


def brdf(albedo, n, s, r, l, v):
    sp = ggx_specular(n, s, r, l, v)
    return [albedo[k] / math.pi + sp for k in range(3)]


def l_brdf(gt, pred, lights, views):
    h, w = gt.height, gt.width
    total = 0.0
    for y in range(h):
        for x in range(w):
            px = []
            for m in (gt, pred):
                px.append((m.albedo.data[y, x], m.normals.data[y, x],
                           m.specular.data[y, x, 0], m.roughness.data[y, x, 0],
                           m.opacity.data[y, x, 0]))
            acc = 0.0
            for l, v in zip(lights, views):
                fg = brdf(px[0][0], px[0][1], px[0][2], px[0][3], l, v)
                fp = brdf(px[1][0], px[1][1], px[1][2], px[1][3], l, v)
                sq = 0.0
                for k in range(3):
                    sq += (fg[k] * px[0][4] - fp[k] * px[1][4]) ** 2
                acc += (l[2] * l[2] * sq / 3.0) ** (1.0 / 3.0)
            total += math.sqrt(acc / len(lights))
    return total / (h * w)


def l_btdf(gt, pred):
    h, w = gt.height, gt.width
    total = 0.0
    for y in range(h):
        for x in range(w):
            for k in range(3):
                g = (gt.transmittance.data[y, x, 0] * gt.albedo.data[y, x, k]
                     * gt.opacity.data[y, x, 0])
                p = (pred.transmittance.data[y, x, 0] * pred.albedo.data[y, x, k]
                     * pred.opacity.data[y, x, 0])
                total += abs(g - p)
    return total / (h * w * 3)


def ggx_normalization(alpha, n=1000):
    """Midpoint quadrature of the projected GGX distribution over an n x n grid.

    Integrates D(h)(n.h) over the hemisphere on a (cos theta, phi) grid; the
    integrand has no azimuth dependence but every grid cell is still visited.
    """
    from .shading import ggx_distribution
    mu = (np.arange(n) + 0.5) / n
    phi = (np.arange(n) + 0.5) / n * 2 * math.pi
    mu_grid, _ = np.meshgrid(mu, phi, indexing="ij")
    vals = ggx_distribution(mu_grid, alpha) * mu_grid
    return float(vals.sum() * (1.0 / n) * (2 * math.pi / n))


# --- losses ------------------------------------------------------------------------

def dft2(x):
    """Orthonormal 2-D DFT by direct summation."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            s = 0j
            for y in range(h):
                for k in range(w):
                    s += x[y, k] * cmath.exp(-2j * math.pi * (u * y / h + v * k / w))
            out[u, v] = s / math.sqrt(h * w)
    return out


def focal_frequency(a, b):
    a, b = _flat_pixels(a), _flat_pixels(b)
    h, w, c = a.shape
    ph, pw = 1 << (h - 1).bit_length(), 1 << (w - 1).bit_length()
    total = 0.0
    for k in range(c):
        pa = np.zeros((ph, pw))
        pb = np.zeros((ph, pw))
        pa[:h, :w] = a[..., k]
        pb[:h, :w] = b[..., k]
        fa, fb = dft2(pa), dft2(pb)
        d = [[abs(fa[i, j] - fb[i, j]) ** 2 for j in range(pw)] for i in range(ph)]
        dmax = max(max(row) for row in d)
        for row in d:
            for val in row:
                wt = math.sqrt(val / dmax) if dmax > 0 else 0.0
                total += wt * val
    return total / (ph * pw * c)


def adam_scalar(x0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Sequence of iterates of textbook Adam on a scalar."""
    x, m, v = x0, 0.0, 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (math.sqrt(vh) + eps)
        out.append(x)
    return out
