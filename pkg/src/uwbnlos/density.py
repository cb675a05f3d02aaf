"""Joint densities of the NLOS bias and waveform features.

Joint densities put the bias (seconds) on axis 0 and features on the
remaining axes.  Every density supports vectorised evaluation on ``(n, dims)``
point arrays plus a few bias-axis operations used by the estimators:

* :meth:`Density.bias_slice` returns ``b -> f(b, x)`` for fixed features;
* :meth:`Density.feature_marginal` integrates the bias out;
* :meth:`Density.bias_posterior_mean` / :meth:`Density.bias_map` give point
  estimates of the bias conditioned on the features.

The LOS bias is a Dirac mass, which cannot be histogrammed; LOS models are
:class:`SeparableDensity` objects with a Gaussian bias axis (the Dirac mass
convolved with the ranging noise) times a features-only density.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import ndimage
from scipy.interpolate import make_interp_spline

from uwbnlos.errors import ConfigError, DomainError, FitError, ParseError


def _as_points(points, dims):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1) if dims > 1 else pts.reshape(-1, 1)
    if pts.shape[1] != dims:
        raise DomainError(f"expected points with {dims} coordinates, got {pts.shape[1]}")
    return pts


class Density:
    """Common interface; subclasses define ``axes``, ``support`` and ``evaluate``."""

    axes: tuple = ()
    kind = "abstract"

    @property
    def dims(self) -> int:
        return len(self.axes)

    def evaluate(self, points) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, points):
        return self.evaluate(points)

    def bias_quadrature(self):
        """Nodes and weights integrating functions along the bias axis."""
        raise NotImplementedError

    def bias_slice(self, features):
        x = np.asarray(features, dtype=float).ravel()

        def g(b):
            b = np.asarray(b, dtype=float).ravel()
            pts = np.column_stack([b, np.broadcast_to(x, (b.size, x.size))])
            return self.evaluate(pts)

        return g

    def feature_marginal(self, features) -> float:
        nodes, weights = self.bias_quadrature()
        return float(weights @ self.bias_slice(features)(nodes))

    def bias_posterior_mean(self, features):
        nodes, weights = self.bias_quadrature()
        g = self.bias_slice(features)(nodes) * weights
        total = g.sum()
        return float(g @ nodes / total) if total > 0 else None

    def bias_marginal_mean(self) -> float:
        """Mean bias with the features integrated out (midpoint of the support by default)."""
        lo, hi = self.support
        return float(0.5 * (lo[0] + hi[0]))

    def bias_marginal(self):
        """Callable ``b -> integral f(b, x) dx`` (the features integrated out)."""
        raise NotImplementedError

    def bias_map(self, features):
        nodes, _ = self.bias_quadrature()
        g = self.bias_slice(features)(nodes)
        return float(nodes[np.argmax(g)]) if g.max() > 0 else None


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------

class HistogramDensity(Density):
    """Piecewise-constant density over an equal-width binning."""

    kind = "hist"

    def __init__(self, edges, mass, axes=None):
        self.edges = tuple(np.asarray(e, dtype=float) for e in edges)
        self.mass = np.asarray(mass, dtype=float)
        if self.mass.shape != tuple(e.size - 1 for e in self.edges):
            raise DomainError("mass shape does not match the bin edges")
        for e in self.edges:
            if e.size < 2 or np.any(np.diff(e) <= 0):
                raise DomainError("bin edges must be strictly increasing")
        if np.any(self.mass < 0):
            raise DomainError("histogram masses must be non-negative")
        self.axes = tuple(axes) if axes is not None else tuple(f"x{i}" for i in range(len(self.edges)))
        if len(self.axes) != len(self.edges):
            raise DomainError("one axis name per dimension required")

    @property
    def shape(self):
        return self.mass.shape

    @property
    def support(self):
        return np.array([e[0] for e in self.edges]), np.array([e[-1] for e in self.edges])

    @property
    def centers(self):
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @property
    def widths(self):
        return tuple(np.diff(e) for e in self.edges)

    def cell_volumes(self):
        vol = np.ones(())
        for w in self.widths:
            vol = np.multiply.outer(vol, w)
        return vol

    def pdf_values(self):
        return self.mass / self.cell_volumes()

    def _cell_index(self, pts):
        idx = []
        inside = np.ones(pts.shape[0], dtype=bool)
        for j, e in enumerate(self.edges):
            k = np.searchsorted(e, pts[:, j], side="right") - 1
            k = np.where(pts[:, j] == e[-1], e.size - 2, k)
            inside &= (k >= 0) & (k < e.size - 1)
            idx.append(np.clip(k, 0, e.size - 2))
        return tuple(idx), inside

    def evaluate(self, points):
        pts = _as_points(points, self.dims)
        idx, inside = self._cell_index(pts)
        return np.where(inside, self.pdf_values()[idx], 0.0)

    def bias_quadrature(self):
        return self.centers[0], self.widths[0]

    def bias_marginal_mean(self):
        m = self.mass.reshape(self.shape[0], -1).sum(axis=1)
        return float(m @ self.centers[0] / m.sum())

    def bias_marginal(self):
        edges = self.edges[0]
        pdf = self.mass.reshape(self.shape[0], -1).sum(axis=1) / self.widths[0]

        def g(b):
            b = np.asarray(b, dtype=float).ravel()
            k = np.clip(np.searchsorted(edges, b, side="right") - 1, 0, pdf.size - 1)
            k = np.where(b == edges[-1], pdf.size - 1, k)
            return np.where((b >= edges[0]) & (b <= edges[-1]), pdf[k], 0.0)

        return g


def fit_histogram(samples, bins_per_dim, axes=None) -> HistogramDensity:
    """Equal-width histogram spanning ``[min, max]`` of the samples per axis.

    Args:
        samples: ``(n, dims)`` array (a 1-D array is treated as one axis).
        bins_per_dim: Bin count, scalar or one per axis (each >= 2).
        axes: Optional axis names.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] == 0:
        raise DomainError("cannot build a histogram from an empty sample set")
    dims = x.shape[1]
    bins = np.broadcast_to(np.asarray(bins_per_dim, dtype=int), (dims,))
    if np.any(bins < 2):
        raise ConfigError("bins_per_dim must be >= 2")
    edges = []
    for j in range(dims):
        lo, hi = x[:, j].min(), x[:, j].max()
        if hi <= lo:
            pad = max(abs(lo) * 1e-6, 1e-300)
            lo, hi = lo - pad, hi + pad
        edges.append(np.linspace(lo, hi, bins[j] + 1))
    counts, _ = np.histogramdd(x, bins=edges)
    return HistogramDensity(edges, counts / x.shape[0], axes)


# ---------------------------------------------------------------------------
# Smoothed lattice densities
# ---------------------------------------------------------------------------

def _uniform_weights(nodes, x):
    """Linear-interpolation indices/weights of ``x`` on uniform ``nodes``."""
    h = nodes[1] - nodes[0]
    s = (np.asarray(x, dtype=float) - nodes[0]) / h
    inside = (s >= 0) & (s <= nodes.size - 1)
    i0 = np.clip(np.floor(s).astype(int), 0, nodes.size - 2)
    frac = np.clip(s - i0, 0.0, 1.0)
    return i0, frac, inside


class SmoothedDensity(Density):
    """Density on a uniform node lattice, multilinear between nodes.

    The outermost node layer is zero, so the exact integral of the
    interpolant equals the Riemann sum ``values.sum() * cell_volume``.
    """

    kind = "smooth"

    def __init__(self, nodes, values, axes, norm=1.0):
        self.nodes = tuple(np.asarray(n, dtype=float) for n in nodes)
        self.values = np.asarray(values, dtype=float)
        self.axes = tuple(axes)
        self.norm = float(norm)
        if self.values.shape != tuple(n.size for n in self.nodes):
            raise DomainError("lattice values do not match the node axes")
        if any(n.size < 2 for n in self.nodes):
            raise DomainError("each lattice axis needs at least two nodes")

    @property
    def steps(self):
        return np.array([n[1] - n[0] for n in self.nodes])

    @property
    def support(self):
        return np.array([n[0] for n in self.nodes]), np.array([n[-1] for n in self.nodes])

    def riemann_sum(self) -> float:
        return float(self.values.sum() * np.prod(self.steps))

    def _interp(self, values, nodes, pts):
        weights = [_uniform_weights(n, pts[:, j]) for j, n in enumerate(nodes)]
        inside = np.logical_and.reduce([w[2] for w in weights])
        out = np.zeros(pts.shape[0])
        for corner in itertools.product((0, 1), repeat=len(nodes)):
            idx = tuple(w[0] + c for w, c in zip(weights, corner))
            wt = np.ones(pts.shape[0])
            for w, c in zip(weights, corner):
                wt *= w[1] if c else 1.0 - w[1]
            out += wt * values[idx]
        return np.where(inside, out, 0.0)

    def evaluate(self, points):
        pts = _as_points(points, self.dims)
        return self._interp(self.values, self.nodes, pts)

    def bias_profile(self, features):
        """Values on the bias nodes after interpolating the feature axes at ``features``."""
        x = np.asarray(features, dtype=float).ravel()
        prof = self.values
        for j in range(self.dims - 1, 0, -1):
            i0, frac, inside = _uniform_weights(self.nodes[j], x[j - 1])
            if not inside:
                return np.zeros(self.nodes[0].size)
            prof = np.take(prof, int(i0), axis=j) * (1.0 - frac) + np.take(prof, int(i0) + 1, axis=j) * frac
        return prof

    def bias_slice(self, features):
        prof = self.bias_profile(features)
        nodes = self.nodes[0]
        return lambda b: np.interp(np.asarray(b, dtype=float), nodes, prof, left=0.0, right=0.0)

    def bias_quadrature(self):
        # Trapezoid on zero-terminated nodes is exact for the interpolant.
        nodes = self.nodes[0]
        return nodes, np.full(nodes.size, nodes[1] - nodes[0])

    def bias_marginal_mean(self):
        m = self.values.reshape(self.values.shape[0], -1).sum(axis=1)
        return float(m @ self.nodes[0] / m.sum())

    def bias_marginal(self):
        nodes = self.nodes[0]
        prof = self.values.reshape(nodes.size, -1).sum(axis=1) * np.prod(self.steps[1:])
        return lambda b: np.interp(np.asarray(b, dtype=float).ravel(), nodes, prof, left=0.0, right=0.0)

    def resample(self, edges) -> HistogramDensity:
        """Histogram on ``edges`` from the values at the cell centres."""
        centers = [0.5 * (np.asarray(e)[1:] + np.asarray(e)[:-1]) for e in edges]
        grid = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1).reshape(-1, len(edges))
        h = HistogramDensity(edges, np.ones(tuple(c.size for c in centers)), self.axes)
        mass = self.evaluate(grid).reshape(h.shape) * h.cell_volumes()
        if mass.sum() <= 0:
            raise FitError("smoothed density vanishes at every requested cell centre")
        return HistogramDensity(edges, mass / mass.sum(), self.axes)


def _odd_window(cells, fraction):
    w = fraction * cells
    return max(1, 2 * int(round((w - 1) / 2)) + 1)


def smooth(h: HistogramDensity, refine_factor=4, window_fraction=1 / 15, bias_blur=None) -> SmoothedDensity:
    """Cubic-spline refinement followed by a moving average.

    The pdf values at the bin centres are interpolated per axis (tensor
    product of not-a-knot cubic splines) onto a lattice ``refine_factor``
    times finer, filtered by a moving average whose width is
    ``window_fraction`` of the lattice extent on each axis (rounded to an odd
    cell count), clamped at zero and renormalised.  The lattice is padded so
    the filter can spread mass by at most half a window beyond the data.

    Args:
        h: Histogram to smooth.
        refine_factor: Lattice cells per histogram bin along every axis.
        window_fraction: Moving-average width relative to the lattice extent.
        bias_blur: Optional Gaussian standard deviation (seconds) applied
            along the bias axis (axis 0), emulating convolution with the
            ranging-noise pdf.
    """
    refine_factor = int(refine_factor)
    if refine_factor < 2:
        raise ConfigError("refine_factor must be >= 2")
    if not 0 < window_fraction:
        raise ConfigError("window_fraction must be positive")
    values = h.pdf_values()
    nodes, windows, pads = [], [], []
    for j, e in enumerate(h.edges):
        n = e.size - 1
        cells = n * refine_factor
        w = _odd_window(cells, window_fraction)
        if w > cells:
            raise ConfigError(f"moving-average window ({w} cells) exceeds lattice extent ({cells}) on axis {j}")
        step = (e[-1] - e[0]) / cells
        fine = e[0] + (np.arange(cells) + 0.5) * step
        centers = 0.5 * (e[1:] + e[:-1])
        k = min(3, n - 1)
        values = make_interp_spline(centers, values, k=k, axis=j)(fine)
        pad = w // 2 + 1
        if j == 0 and bias_blur:
            pad += int(math.ceil(4.0 * bias_blur / step))
        windows.append(w)
        pads.append(pad)
        nodes.append(e[0] + (np.arange(-pad, cells + pad) + 0.5) * step)

    values = np.pad(values, [(p, p) for p in pads])
    values = ndimage.uniform_filter(values, size=windows, mode="constant", cval=0.0)
    if bias_blur:
        sigma_cells = bias_blur / (nodes[0][1] - nodes[0][0])
        values = ndimage.gaussian_filter1d(values, sigma_cells, axis=0, mode="constant", cval=0.0, truncate=4.0)
    np.maximum(values, 0.0, out=values)
    for j in range(values.ndim):
        # Zero boundary layer keeps the interpolant's integral equal to the Riemann sum.
        sl = [slice(None)] * values.ndim
        sl[j] = [0, -1]
        values[tuple(sl)] = 0.0
    steps = np.array([n[1] - n[0] for n in nodes])
    total = values.sum() * np.prod(steps)
    if not total > 0:
        raise FitError("smoothing produced an all-zero lattice")
    return SmoothedDensity(nodes, values / total, h.axes, norm=total)


# ---------------------------------------------------------------------------
# Polynomial fits
# ---------------------------------------------------------------------------

def monomial_exponents(dims, degree):
    """Total-degree exponent tuples, ordered by degree then lexicographically."""
    exps = [e for e in itertools.product(range(degree + 1), repeat=dims) if sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    return np.array(exps, dtype=int).reshape(-1, dims)


_NORM_POINTS = {1: 4096, 2: 512, 3: 96, 4: 48}


class PolyDensity(Density):
    """Clamped, renormalised total-degree polynomial on a support box.

    Coordinates are mapped affinely to ``[-1, 1]`` before the monomials are
    formed; ``coef`` is stored against those rescaled coordinates.
    """

    kind = "poly"

    def __init__(self, coef, exponents, lo, hi, axes, norm=None, rmse=float("nan"), nrmse=float("nan"), clamp=True):
        self.coef = np.asarray(coef, dtype=float)
        self.exponents = np.asarray(exponents, dtype=int).reshape(self.coef.size, -1)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.axes = tuple(axes)
        self.clamp = bool(clamp)
        self.rmse = float(rmse)
        self.nrmse = float(nrmse)
        self.degree = int(self.exponents.sum(axis=1).max()) if self.coef.size else 0
        self.norm = float(norm) if norm is not None else self._integrate_raw()
        if not self.norm > 0:
            raise FitError("clamped polynomial integrates to zero over its support")

    @property
    def support(self):
        return self.lo.copy(), self.hi.copy()

    def _u(self, x, j):
        return 2.0 * (np.asarray(x, dtype=float) - self.lo[j]) / (self.hi[j] - self.lo[j]) - 1.0

    def _coef_tensor(self):
        c = np.zeros((self.degree + 1,) * self.dims)
        c[tuple(self.exponents.T)] = self.coef
        return c

    def raw(self, points):
        """Unclamped, unnormalised polynomial value."""
        pts = _as_points(points, self.dims)
        powers = [np.vander(self._u(pts[:, j], j), self.degree + 1, increasing=True) for j in range(self.dims)]
        terms = np.ones((pts.shape[0], self.coef.size))
        for j in range(self.dims):
            terms *= powers[j][:, self.exponents[:, j]]
        return terms @ self.coef

    def _finish(self, raw):
        return (np.maximum(raw, 0.0) if self.clamp else raw) / self.norm

    def _negative_profile(self, m):
        """Clamped-away mass ``integral max(-p, 0) dx`` per bias cell on an ``m``-point midpoint lattice."""
        mid = -1.0 + (np.arange(m) + 0.5) * (2.0 / m)
        table = np.vander(mid, self.degree + 1, increasing=True)
        feat = self._coef_tensor()
        for _ in range(self.dims - 1):
            # Contract the trailing exponent axes with the lattice, one at a time.
            feat = np.tensordot(feat, table, axes=([1], [1]))
        feat = feat.reshape(self.degree + 1, -1)
        out = np.empty(m)
        for start in range(0, m, 8):
            vals = table[start:start + 8] @ feat
            out[start:start + 8] = np.maximum(-vals, 0.0).sum(axis=1)
        return out * np.prod((self.hi[1:] - self.lo[1:]) / m)

    def _exact_profile(self):
        """Coefficients in ``u_0`` of the raw polynomial integrated over the feature axes."""
        w = self.coef * np.prod(np.where(self.exponents[:, 1:] % 2 == 0, 2.0 / (self.exponents[:, 1:] + 1), 0.0), axis=1)
        prof = np.bincount(self.exponents[:, 0], weights=w, minlength=self.degree + 1)
        return prof * np.prod((self.hi[1:] - self.lo[1:]) / 2.0)

    def _integrate_raw(self):
        # Exact integral of the polynomial plus the mass removed by clamping.
        # Only the small, kinked negative part needs quadrature; its midpoint
        # error is O(1/m^2), so two resolutions are Richardson-extrapolated.
        k = np.arange(self.degree + 1)
        total = float(self._exact_profile() @ np.where(k % 2 == 0, 2.0 / (k + 1), 0.0)) * (self.hi[0] - self.lo[0]) / 2.0
        if self.clamp:
            m = _NORM_POINTS.get(self.dims, 24)
            coarse = self._negative_profile(m).sum() * (self.hi[0] - self.lo[0]) / m
            fine = self._negative_profile(2 * m).sum() * (self.hi[0] - self.lo[0]) / (2 * m)
            total += float((4.0 * fine - coarse) / 3.0)
        return total

    def bias_marginal(self):
        poly = self._exact_profile()
        m = 2 * _NORM_POINTS.get(self.dims, 24)
        nodes = self.lo[0] + (np.arange(m) + 0.5) * (self.hi[0] - self.lo[0]) / m
        neg = self._negative_profile(m) if self.clamp else np.zeros(m)
        lo, hi, norm = self.lo[0], self.hi[0], self.norm

        def g(b):
            b = np.asarray(b, dtype=float).ravel()
            val = np.polynomial.polynomial.polyval(self._u(b, 0), poly) + np.interp(b, nodes, neg)
            return np.where((b >= lo) & (b <= hi), np.maximum(val, 0.0) / norm, 0.0)

        return g

    def _inside(self, pts):
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def evaluate(self, points):
        pts = _as_points(points, self.dims)
        return np.where(self._inside(pts), self._finish(self.raw(pts)), 0.0)

    def bias_slice(self, features):
        x = np.asarray(features, dtype=float).ravel()
        if self.dims > 1 and not np.all((x >= self.lo[1:]) & (x <= self.hi[1:])):
            return lambda b: np.zeros(np.asarray(b).size)
        weight = self.coef.copy()
        for j in range(1, self.dims):
            weight *= self._u(x[j - 1], j) ** self.exponents[:, j]
        a = np.bincount(self.exponents[:, 0], weights=weight, minlength=self.degree + 1)
        lo, hi = self.lo[0], self.hi[0]

        def g(b):
            b = np.asarray(b, dtype=float).ravel()
            val = self._finish(np.polynomial.polynomial.polyval(self._u(b, 0), a))
            return np.where((b >= lo) & (b <= hi), val, 0.0)

        return g

    def bias_quadrature(self, m=1024):
        step = (self.hi[0] - self.lo[0]) / m
        return self.lo[0] + (np.arange(m) + 0.5) * step, np.full(m, step)


def fit_poly(h: HistogramDensity, degree=8) -> PolyDensity:
    """Least-squares polynomial fit of the histogram pdf at its cell centres.

    The returned object carries ``rmse`` (pdf units) and ``nrmse``, the same
    residual expressed in probability mass per cell (the scale of the
    histogram values themselves).

    Raises:
        FitError: fewer cells than coefficients or a rank-deficient design.
    """
    exps = monomial_exponents(h.dims, degree)
    n_cells = int(np.prod(h.shape))
    if n_cells < exps.shape[0]:
        raise FitError(
            f"{n_cells} cells cannot determine {exps.shape[0]} coefficients; "
            "use fewer dimensions, a lower degree or more bins"
        )
    lo, hi = h.support
    grids = np.meshgrid(*h.centers, indexing="ij")
    u = [2.0 * (g.ravel() - lo[j]) / (hi[j] - lo[j]) - 1.0 for j, g in enumerate(grids)]
    design = np.ones((n_cells, exps.shape[0]))
    for j in range(h.dims):
        design *= u[j][:, None] ** exps[:, j]
    y = h.pdf_values().ravel()
    scale = np.abs(y).max() or 1.0
    coef, _, rank, _ = np.linalg.lstsq(design, y / scale, rcond=None)
    if rank < exps.shape[0]:
        raise FitError(
            f"rank-deficient polynomial design (rank {rank} < {exps.shape[0]}); "
            "use fewer dimensions, a lower degree or more bins per axis"
        )
    coef *= scale
    resid = design @ coef - y
    rmse = float(np.sqrt(np.mean(resid**2)))
    nrmse = float(np.sqrt(np.mean((resid * h.cell_volumes().ravel()) ** 2)))
    return PolyDensity(coef, exps, lo, hi, h.axes, rmse=rmse, nrmse=nrmse)


# ---------------------------------------------------------------------------
# Analytic pieces and combinations
# ---------------------------------------------------------------------------

class GaussianBias(Density):
    """1-D normal density along the bias axis."""

    kind = "gaussian"

    def __init__(self, mean, sigma, axes=("bias",)):
        if not sigma > 0:
            raise DomainError("sigma must be positive")
        self.mean = float(mean)
        self.sigma = float(sigma)
        self.axes = tuple(axes)

    @property
    def support(self):
        return np.array([-np.inf]), np.array([np.inf])

    def evaluate(self, points):
        b = _as_points(points, 1)[:, 0]
        z = (b - self.mean) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))

    def bias_slice(self, features=()):
        return lambda b: self.evaluate(np.asarray(b, dtype=float).reshape(-1, 1))

    def bias_quadrature(self, m=801):
        nodes = np.linspace(self.mean - 8 * self.sigma, self.mean + 8 * self.sigma, m)
        w = np.full(m, nodes[1] - nodes[0])
        w[[0, -1]] *= 0.5
        return nodes, w

    def bias_posterior_mean(self, features=()):
        return self.mean

    def bias_marginal(self):
        return self.bias_slice(())

    def bias_map(self, features=()):
        return self.mean


class SeparableDensity(Density):
    """``f(b, x) = f_bias(b) * f_features(x)``.

    Used for the LOS hypothesis (Gaussian bias around zero) and for
    univariate-style models where the bias ignores the features.
    """

    kind = "separable"

    def __init__(self, bias: Density, features: Density | None, axes=None):
        if bias.dims != 1:
            raise DomainError("bias component must be one-dimensional")
        self.bias = bias
        self.features = features
        default = (bias.axes[0],) + (features.axes if features is not None else ())
        self.axes = tuple(axes) if axes is not None else default
        if len(self.axes) != 1 + (features.dims if features is not None else 0):
            raise DomainError("axis names do not match the component dimensions")

    @property
    def support(self):
        blo, bhi = self.bias.support
        if self.features is None:
            return blo, bhi
        flo, fhi = self.features.support
        return np.concatenate([blo, flo]), np.concatenate([bhi, fhi])

    def feature_density(self, features) -> float:
        if self.features is None:
            return 1.0
        return float(self.features.evaluate(np.asarray(features, dtype=float).reshape(1, -1))[0])

    def evaluate(self, points):
        pts = _as_points(points, self.dims)
        out = self.bias.evaluate(pts[:, :1])
        if self.features is not None:
            out = out * self.features.evaluate(pts[:, 1:])
        return out

    def bias_slice(self, features):
        c = self.feature_density(features)
        g = self.bias.bias_slice(())
        return lambda b: c * g(b)

    def bias_quadrature(self):
        return self.bias.bias_quadrature()

    def feature_marginal(self, features) -> float:
        nodes, w = self.bias.bias_quadrature()
        return self.feature_density(features) * float(w @ self.bias.evaluate(nodes.reshape(-1, 1)))

    def bias_posterior_mean(self, features):
        if self.feature_density(features) <= 0:
            return None
        return self.bias.bias_posterior_mean(())

    def bias_map(self, features):
        if self.feature_density(features) <= 0:
            return None
        return self.bias.bias_map(())

    def bias_marginal_mean(self):
        return self.bias.bias_posterior_mean(())

    def bias_marginal(self):
        return self.bias.bias_marginal()


class MixtureDensity(Density):
    """``p_los * f_los + (1 - p_los) * f_nlos``."""

    kind = "mixture"

    def __init__(self, p_los, f_los: Density, f_nlos: Density):
        if not 0.0 <= p_los <= 1.0:
            raise DomainError("p_los must lie in [0, 1]")
        if tuple(f_los.axes) != tuple(f_nlos.axes):
            raise DomainError(f"axis mismatch: {f_los.axes} vs {f_nlos.axes}")
        self.p_los = float(p_los)
        self.f_los = f_los
        self.f_nlos = f_nlos
        self.axes = tuple(f_los.axes)

    @property
    def support(self):
        alo, ahi = self.f_los.support
        blo, bhi = self.f_nlos.support
        return np.minimum(alo, blo), np.maximum(ahi, bhi)

    def evaluate(self, points):
        pts = _as_points(points, self.dims)
        p = self.p_los
        out = np.zeros(pts.shape[0])
        if p > 0:
            out += p * self.f_los.evaluate(pts)
        if p < 1:
            out += (1.0 - p) * self.f_nlos.evaluate(pts)
        return out

    def bias_slice(self, features):
        p = self.p_los
        g_los = self.f_los.bias_slice(features) if p > 0 else None
        g_nlos = self.f_nlos.bias_slice(features) if p < 1 else None

        def g(b):
            b = np.asarray(b, dtype=float).ravel()
            out = np.zeros(b.size)
            if g_los is not None:
                out += p * g_los(b)
            if g_nlos is not None:
                out += (1.0 - p) * g_nlos(b)
            return out

        return g

    def bias_quadrature(self):
        n1, w1 = self.f_los.bias_quadrature()
        n2, w2 = self.f_nlos.bias_quadrature()
        # Integrals are linear, so quadrature is only used through feature_marginal.
        return np.concatenate([n1, n2]), np.concatenate([w1, w2])

    def feature_marginal(self, features) -> float:
        p = self.p_los
        out = 0.0
        if p > 0:
            out += p * self.f_los.feature_marginal(features)
        if p < 1:
            out += (1 - p) * self.f_nlos.feature_marginal(features)
        return out

    def bias_marginal(self):
        p = self.p_los
        g_los = self.f_los.bias_marginal() if p > 0 else None
        g_nlos = self.f_nlos.bias_marginal() if p < 1 else None

        def g(b):
            b = np.asarray(b, dtype=float).ravel()
            out = np.zeros(b.size)
            if g_los is not None:
                out += p * g_los(b)
            if g_nlos is not None:
                out += (1.0 - p) * g_nlos(b)
            return out

        return g


def mix(f_los: Density, f_nlos: Density, p_los) -> MixtureDensity:
    return MixtureDensity(p_los, f_los, f_nlos)


def eval_density(density: Density, point) -> float:
    """Value of ``density`` at a single point (0 outside its support)."""
    return float(density.evaluate(np.asarray(point, dtype=float).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Text serialisation
# ---------------------------------------------------------------------------

MAGIC = "uwbnlos-density 1"


def _fmt(values):
    return "\t".join(repr(float(v)) for v in np.ravel(values))


def _write_node(density, out):
    out.append(f"begin\t{density.kind}")
    out.append("axes\t" + "\t".join(density.axes))
    if isinstance(density, HistogramDensity):
        for e in density.edges:
            out.append("edges\t" + _fmt(e))
        out.append("data\t" + _fmt(density.mass))
    elif isinstance(density, SmoothedDensity):
        out.append("norm\t" + _fmt([density.norm]))
        for n in density.nodes:
            out.append("nodes\t" + _fmt(n))
        out.append("data\t" + _fmt(density.values))
    elif isinstance(density, PolyDensity):
        out.append("exponents\t" + "\t".join(str(int(v)) for v in density.exponents.ravel()))
        out.append("lo\t" + _fmt(density.lo))
        out.append("hi\t" + _fmt(density.hi))
        out.append("fit\t" + _fmt([density.norm, density.rmse, density.nrmse, float(density.clamp)]))
        out.append("data\t" + _fmt(density.coef))
    elif isinstance(density, GaussianBias):
        out.append("data\t" + _fmt([density.mean, density.sigma]))
    elif isinstance(density, SeparableDensity):
        _write_node(density.bias, out)
        if density.features is None:
            out.append("begin\tnone")
            out.append("end")
        else:
            _write_node(density.features, out)
    elif isinstance(density, MixtureDensity):
        out.append("data\t" + _fmt([density.p_los]))
        _write_node(density.f_los, out)
        _write_node(density.f_nlos, out)
    else:
        raise DomainError(f"cannot serialise {type(density).__name__}")
    out.append("end")


def dumps_density(density: Density) -> str:
    out = [MAGIC]
    _write_node(density, out)
    return "\n".join(out) + "\n"


class _Reader:
    def __init__(self, lines, first_lineno=1):
        self.lines = lines
        self.pos = 0
        self.first = first_lineno

    def next(self):
        if self.pos >= len(self.lines):
            raise ParseError("unexpected end of density block", self.first + self.pos)
        line = self.lines[self.pos]
        self.pos += 1
        return line.rstrip("\n").split("\t"), self.first + self.pos - 1

    def peek_key(self):
        return self.lines[self.pos].split("\t", 1)[0] if self.pos < len(self.lines) else None


def _floats(parts, lineno):
    try:
        return np.array([float(v) for v in parts[1:]])
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def _read_node(rd: _Reader):
    head, lineno = rd.next()
    if head[0] != "begin" or len(head) != 2:
        raise ParseError("expected 'begin <kind>'", lineno)
    kind = head[1]
    if kind == "none":
        rd.next()
        return None
    parts, ln = rd.next()
    if parts[0] != "axes":
        raise ParseError("expected axes line", ln)
    axes = tuple(parts[1:])
    fields = {}
    children = []
    while True:
        key = rd.peek_key()
        if key == "begin":
            children.append(_read_node(rd))
            continue
        parts, ln = rd.next()
        if parts[0] == "end":
            break
        if parts[0] == "exponents":
            fields["exponents"] = np.array([int(v) for v in parts[1:]], dtype=int)
        else:
            fields.setdefault(parts[0], []).append(_floats(parts, ln))
    try:
        if kind == "hist":
            edges = fields["edges"]
            return HistogramDensity(edges, fields["data"][0].reshape([e.size - 1 for e in edges]), axes)
        if kind == "smooth":
            nodes = fields["nodes"]
            return SmoothedDensity(nodes, fields["data"][0].reshape([n.size for n in nodes]), axes, fields["norm"][0][0])
        if kind == "poly":
            coef = fields["data"][0]
            norm, rmse, nrmse, clamp = fields["fit"][0]
            return PolyDensity(coef, fields["exponents"].reshape(coef.size, -1), fields["lo"][0], fields["hi"][0],
                               axes, norm=norm, rmse=rmse, nrmse=nrmse, clamp=bool(clamp))
        if kind == "gaussian":
            mean, sigma = fields["data"][0]
            return GaussianBias(mean, sigma, axes)
        if kind == "separable":
            return SeparableDensity(children[0], children[1], axes)
        if kind == "mixture":
            return MixtureDensity(fields["data"][0][0], children[0], children[1])
    except (KeyError, IndexError, ValueError) as exc:
        raise ParseError(f"incomplete {kind} block: {exc}", lineno) from None
    raise ParseError(f"unknown density kind {kind!r}", lineno)


def loads_density(text: str) -> Density:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise ParseError("missing density header", 1)
    return _read_node(_Reader(lines[1:], first_lineno=2))


def save_density(density: Density, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps_density(density))


def load_density(path) -> Density:
    with open(path, encoding="ascii") as fh:
        return loads_density(fh.read())
