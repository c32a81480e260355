"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Selected at import by :mod:`bellshadow.kernels` when the extension is not
built. Outputs match the compiled path element for element.
"""
import numpy as np
from scipy.special import bdtr, gammaln, ndtri

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
SEED_SALT = np.uint64(0x243F6A8885A308D3)
UNIT_MULT = np.uint64(0x9E3779B97F4A7C15)
RUN_MULT = np.uint64(0xD1B54A32D192ED03)
DRAW_MULT = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed, unit_ids, n_runs, n_draws):
    with np.errstate(over="ignore"):
        k1 = _mix(np.uint64(seed) ^ SEED_SALT)
        units = np.asarray(unit_ids, dtype=np.uint64)
        k2 = _mix(k1 + units * UNIT_MULT)[:, None]
        runs = np.arange(n_runs, dtype=np.uint64)[None, :]
        k3 = _mix(k2 + runs * RUN_MULT)[:, :, None]
        draws = np.arange(1, n_draws + 1, dtype=np.uint64)[None, None, :]
        bits = _mix(k3 + draws * DRAW_MULT)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def _pmf(k, nf, p):
    kf = k.astype(np.float64)
    return np.exp(gammaln(nf + 1.0) - gammaln(kf + 1.0) - gammaln(nf - kf + 1.0)
                  + kf * np.log(p) + (nf - kf) * np.log1p(-p))


def _refresh(pmf, a, k, nf, p):
    """Recompute pmf entries that underflowed to zero during the recursion."""
    z = a[pmf[a] == 0.0]
    if z.size:
        pmf[z] = _pmf(k[z], nf[z], p[z])


def binom_ppf(u, n, p):
    u, n, p = np.broadcast_arrays(np.asarray(u, dtype=np.float64),
                                  np.asarray(n, dtype=np.int64),
                                  np.asarray(p, dtype=np.float64))
    shape = u.shape
    u, n, p = u.ravel(), n.ravel(), p.ravel()
    out = np.zeros(u.shape, dtype=np.int64)

    full = (n > 0) & (u > 0.0) & (p > 0.0) & ((p >= 1.0) | (u >= 1.0))
    out[full] = n[full]
    idx = np.flatnonzero((n > 0) & (u > 0.0) & (p > 0.0) & (p < 1.0) & (u < 1.0))
    if idx.size == 0:
        return out.reshape(shape)

    uu, nn, pp = u[idx], n[idx], p[idx]
    nf = nn.astype(np.float64)
    q = 1.0 - pp
    mu = nf * pp
    sd = np.sqrt(mu * q)
    k = np.clip(np.floor(mu + sd * ndtri(uu)), 0, nf).astype(np.int64)
    f = bdtr(k.astype(np.float64), nn, pp)
    pmf = _pmf(k, nf, pp)
    ratio = pp / q

    down = f >= uu
    anchor = f.copy()
    active = down & (k > 0)
    while active.any():
        a = np.flatnonzero(active)
        g = f[a] - pmf[a]
        lost = g < 1e-3 * anchor[a]
        if lost.any():
            # subtraction has eaten the leading digits; re-anchor on the exact cdf
            b = a[lost]
            g[lost] = bdtr((k[b] - 1).astype(np.float64), nn[b], pp[b])
            anchor[b] = g[lost]
        step = g >= uu[a]
        a, g = a[step], g[step]
        f[a] = g
        pmf[a] = pmf[a] * k[a] / ((nn[a] - k[a] + 1.0) * ratio[a])
        k[a] -= 1
        _refresh(pmf, a, k, nf, pp)
        active[:] = False
        active[a] = k[a] > 0

    active = ~down & (k < nn)
    while active.any():
        a = np.flatnonzero(active)
        pmf[a] = pmf[a] * (nn[a] - k[a]) / (k[a] + 1.0) * ratio[a]
        k[a] += 1
        _refresh(pmf, a, k, nf, pp)
        f[a] += pmf[a]
        active[a] = (f[a] < uu[a]) & (k[a] < nn[a])

    out[idx] = k
    return out.reshape(shape)
