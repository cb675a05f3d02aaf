"""Independent reference implementations used by the tests.

Written as plain loops over the defining sums so they share no code path
with the vectorised package implementations.
"""

import math


def trapezoid(values, times):
    total = 0.0
    for k in range(len(values) - 1):
        total += 0.5 * (values[k] + values[k + 1]) * (times[k + 1] - times[k])
    return total


def features(samples, sample_rate, t_start, toa):
    """Return (r_max, tau_m, tau_ds, energy, t_rise, kurtosis)."""
    n = len(samples)
    t = [t_start + k / sample_rate - toa for k in range(n)]
    mag = [abs(float(s)) for s in samples]
    power = [m * m for m in mag]

    energy = trapezoid(power, t)
    tau_m = trapezoid([t[k] * power[k] for k in range(n)], t) / energy
    tau_ds = trapezoid([(t[k] - tau_m) ** 2 * power[k] for k in range(n)], t) / energy

    r_max = max(mag)
    k10 = next(k for k in range(n) if mag[k] / r_max > 0.1)
    k90 = next(k for k in range(n) if mag[k] / r_max > 0.9)
    t_rise = t[k90] - t[k10]

    span = t[-1] - t[0]
    mu = trapezoid(mag, t) / span
    var = trapezoid([(m - mu) ** 2 for m in mag], t) / span
    kurt = trapezoid([(m - mu) ** 4 for m in mag], t) / (var * var * span)
    return r_max, tau_m, tau_ds, energy, t_rise, kurt


def rel_close(a, b, rel):
    return abs(a - b) <= rel * max(abs(a), abs(b)) or a == b


def argmax_vertex(score, xs, ys):
    """Exhaustive scan of ``score(x, y)`` over the lattice; first maximiser in x-major order."""
    best, best_xy = -math.inf, None
    for x in xs:
        for y in ys:
            s = score(float(x), float(y))
            if s > best:
                best, best_xy = s, (float(x), float(y))
    return best_xy, best


def qmc_box_integral(density, log2_points=17, seed=0, batch=1 << 14):
    """Scrambled-Sobol estimate of the integral of ``density.evaluate`` over its support box."""
    import numpy as np
    from scipy.stats import qmc

    lo, hi = density.support
    u = qmc.Sobol(density.dims, scramble=True, seed=seed).random_base2(log2_points)
    total = 0.0
    for i in range(0, u.shape[0], batch):
        total += density.evaluate(lo + u[i:i + batch] * (hi - lo)).sum()
    return total / u.shape[0] * float(np.prod(hi - lo))


def ml_scores(links, density, dims, grid):
    """Re-score every vertex through ``density.evaluate`` on the full joint points.

    Links whose features have zero marginal fall back to the bias marginal.
    """
    import numpy as np

    from uwbnlos.estimators import LOG_FLOOR, link_feature_values
    from uwbnlos.synth import C0

    verts = grid.vertices()
    total = np.zeros(len(verts))
    for l in links:
        d = np.hypot(verts[:, 0] - l.anchor.position[0], verts[:, 1] - l.anchor.position[1])
        b = l.toa - d / C0
        x = link_feature_values(l.features, dims)
        if density.feature_marginal(x) > 0:
            f = density.evaluate(np.column_stack([b, np.tile(x, (b.size, 1))]))
        else:
            f = density.bias_marginal()(b)
        total += np.log(np.maximum(f, LOG_FLOOR))
    return verts, total
