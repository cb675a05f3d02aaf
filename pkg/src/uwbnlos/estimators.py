"""Grid-search position estimators and the iterative bias corrector.

All grid estimators scan the vertices of a square lattice in x-major order
(index ``ix * ny + iy``); the first optimum wins, so ties resolve to the
smallest x, then the smallest y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from uwbnlos.density import Density
from uwbnlos.errors import ConfigError, DomainError
from uwbnlos.features import DIModelParams, FeatureVector, di_transform
from uwbnlos.synth import C0, ChannelState

LOG_FLOOR = 1e-30

AXES = {
    (2, False): ("bias", "tau_ds"),
    (2, True): ("bias", "tau_ds_m"),
    (4, False): ("bias", "r_max", "tau_m", "tau_ds"),
    (4, True): ("bias", "r_max0", "tau_m_m", "tau_ds_m"),
}


@dataclass(frozen=True)
class Anchor:
    position: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        if not np.all(np.isfinite(pos)):
            raise DomainError("anchor coordinates must be finite")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class LinkInput:
    anchor: Anchor
    toa: float
    features: Optional[FeatureVector] = None

    def __post_init__(self):
        if self.toa < 0:
            raise DomainError("toa must be >= 0")
        if not isinstance(self.anchor, Anchor):
            object.__setattr__(self, "anchor", Anchor(self.anchor))


@dataclass(frozen=True)
class GridSpec:
    """Square lattice ``{(i * step, j * step)}`` for integer ``i, j`` in range.

    Vertices sit on integer multiples of ``step`` so the origin is a vertex
    whenever the box contains it.
    """

    ix: tuple
    iy: tuple
    step: float = 0.01

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError("grid step must be > 0")
        if (self.ix[1] - self.ix[0] + 1) * (self.iy[1] - self.iy[0] + 1) < 4 or self.ix[1] <= self.ix[0] or self.iy[1] <= self.iy[0]:
            raise DomainError("grid must contain at least 2 x 2 vertices")

    @classmethod
    def from_box(cls, lo, hi, step=0.01):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        ix = (int(math.floor(lo[0] / step + 1e-9)), int(math.ceil(hi[0] / step - 1e-9)))
        iy = (int(math.floor(lo[1] / step + 1e-9)), int(math.ceil(hi[1] / step - 1e-9)))
        return cls(ix, iy, float(step))

    @classmethod
    def around(cls, anchors, margin=1.0, step=0.01):
        """Square box covering all anchors plus ``margin`` metres."""
        pts = np.array([a.position if isinstance(a, Anchor) else a for a in anchors], dtype=float).reshape(-1, 2)
        lo = pts.min(axis=0) - margin
        hi = pts.max(axis=0) + margin
        side = max(hi - lo)
        mid = 0.5 * (lo + hi)
        return cls.from_box(mid - side / 2, mid + side / 2, step)

    @property
    def xs(self):
        return np.arange(self.ix[0], self.ix[1] + 1) * self.step

    @property
    def ys(self):
        return np.arange(self.iy[0], self.iy[1] + 1) * self.step

    @property
    def shape(self):
        return self.ix[1] - self.ix[0] + 1, self.iy[1] - self.iy[0] + 1

    def vertices(self) -> np.ndarray:
        """``(n, 2)`` vertex array in x-major order."""
        x, y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([x.ravel(), y.ravel()])

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(self.xs[0] <= p[0] <= self.xs[-1] and self.ys[0] <= p[1] <= self.ys[-1])


@dataclass
class PositionEstimate:
    theta_hat: np.ndarray
    bias_hat: Optional[np.ndarray] = None
    decisions: Optional[list] = None
    ambiguous: bool = False
    score: float = float("nan")


class MLMode(NamedTuple):
    dims: int
    independent: bool = False

    @classmethod
    def parse(cls, text):
        """``"2D"``, ``"4D"``, ``"2D-ID"`` or ``"4D-ID"``."""
        t = text.upper().replace("_", "-")
        dims = {"2D": 2, "4D": 4}.get(t.split("-")[0])
        if dims is None or t not in (f"{dims}D", f"{dims}D-ID"):
            raise ConfigError(f"unknown ML mode {text!r}")
        return cls(dims, t.endswith("-ID"))

    @property
    def axes(self):
        return AXES[(self.dims, self.independent)]


def _anchor_array(links):
    return np.array([l.anchor.position for l in links]).reshape(-1, 2)


def _ambiguous(links):
    if len(links) < 3:
        return True
    a = _anchor_array(links)
    return np.linalg.matrix_rank(a[1:] - a[0], tol=1e-9) < 2


def _distances(vertices, anchors):
    return np.hypot(vertices[:, 0:1] - anchors[None, :, 0], vertices[:, 1:2] - anchors[None, :, 1])


def _default_grid(links, grid):
    if grid is None:
        return GridSpec.around([l.anchor for l in links])
    return grid


def ls_cost(links, vertices) -> np.ndarray:
    """``sum_i (C0 * toa_i - d_i(theta))**2`` at each vertex."""
    d = _distances(vertices, _anchor_array(links))
    r = C0 * np.array([l.toa for l in links])
    return ((r[None, :] - d) ** 2).sum(axis=1)


def ls_estimate(links: Sequence[LinkInput], grid: GridSpec | None = None, toas=None) -> PositionEstimate:
    """Grid least squares on ranges ``C0 * toa``.

    Fewer than three links (or collinear anchors) still yield an estimate but
    with ``ambiguous=True``.  ``toas`` overrides the link TOAs when given.
    """
    if not links:
        raise DomainError("at least one link is required")
    if toas is not None:
        links = [LinkInput(l.anchor, float(t), l.features) for l, t in zip(links, toas)]
    grid = _default_grid(links, grid)
    verts = grid.vertices()
    cost = ls_cost(links, verts)
    k = int(np.argmin(cost))
    return PositionEstimate(verts[k].copy(), ambiguous=_ambiguous(links), score=float(cost[k]))


def link_feature_values(features: FeatureVector, dims) -> np.ndarray:
    """Raw feature arguments of a ``dims``-D joint density (bias excluded)."""
    if dims == 2:
        return np.array([features.tau_ds])
    if dims == 4:
        return np.array([features.r_max, features.tau_m, features.tau_ds])
    raise ConfigError(f"unsupported density dimensionality {dims}")


def _check_mode(density, mode, di_params):
    if density.dims != mode.dims:
        raise ConfigError(f"{mode.dims}-D mode needs a {mode.dims}-D density, got {density.dims}-D")
    if tuple(density.axes) != mode.axes:
        raise ConfigError(f"density axes {density.axes} do not match mode axes {mode.axes}")
    if mode.independent and di_params is None:
        raise ConfigError("distance-independent mode needs DIModelParams")


def ml_log_likelihood(links, density: Density, mode: MLMode, di_params: DIModelParams | None, vertices) -> np.ndarray:
    """Per-vertex ``sum_i ln max(f(b_i, x_i), LOG_FLOOR)``."""
    d = _distances(vertices, _anchor_array(links))
    total = np.zeros(vertices.shape[0])
    for i, link in enumerate(links):
        di = d[:, i]
        b = link.toa - di / C0
        if not mode.independent:
            x = link_feature_values(link.features, mode.dims)
            if density.feature_marginal(x) > 0:
                f = density.bias_slice(x)(b)
            else:
                # Features outside every fitted support carry no information;
                # keep the range information through the bias marginal.
                f = density.bias_marginal()(b)
        else:
            x = link.features
            safe = np.where(di > 0, di, 1.0)
            r0, tm, tds = di_transform(x.r_max, x.tau_m, x.tau_ds, safe, di_params)
            cols = [tds] if mode.dims == 2 else [r0, tm, tds]
            f = density.evaluate(np.column_stack([b] + cols))
            f = np.where(di > 0, f, 0.0)
        total += np.log(np.maximum(f, LOG_FLOOR))
    return total


def ml_estimate(links, density: Density, mode, di_params=None, grid: GridSpec | None = None) -> PositionEstimate:
    """Maximum-likelihood grid search over the joint bias/feature density.

    Args:
        links: Link inputs carrying TOA and features.
        density: Joint density (usually a :class:`~uwbnlos.density.MixtureDensity`)
            with axes matching ``mode``.
        mode: :class:`MLMode` or its string form (``"2D"``, ``"4D-ID"``...).
        di_params: Needed for distance-independent modes.
        grid: Search lattice; defaults to the anchors' box plus 1 m.
    """
    if isinstance(mode, str):
        mode = MLMode.parse(mode)
    _check_mode(density, mode, di_params)
    if not links:
        raise DomainError("at least one link is required")
    grid = _default_grid(links, grid)
    verts = grid.vertices()
    score = ml_log_likelihood(links, density, mode, di_params, verts)
    k = int(np.argmax(score))
    return PositionEstimate(verts[k].copy(), ambiguous=_ambiguous(links), score=float(score[k]))


# ---------------------------------------------------------------------------
# Iterative corrector
# ---------------------------------------------------------------------------

@dataclass
class Correction:
    corrected_toa: float
    bias_hat: float
    decision: ChannelState
    iterations: int
    prior_fallback: bool = False
    history: list = field(default_factory=list)


def iterative_correct(
    link: LinkInput,
    f_los: Density,
    f_nlos: Density,
    p_los: float,
    max_iter=10,
    tol=1e-12,
    di_params: DIModelParams | None = None,
    point_estimate="mean",
) -> Correction:
    """Alternate LOS/NLOS decisions and bias re-estimation for one link.

    Starting from a zero bias, each pass forms the range ``C0 * (toa - b)``,
    evaluates the decision variables ``P(H) * integral f(b, x | H) db`` for
    both hypotheses, decides, and sets the new bias to zero (LOS) or to the
    posterior mean (or MAP) of the NLOS density sliced at the features.  The
    range only enters through the distance-independent feature transform,
    used when ``di_params`` is given.
    """
    if not 0 <= p_los <= 1:
        raise DomainError("p_los must lie in [0, 1]")
    if f_los.dims != f_nlos.dims:
        raise ConfigError("LOS and NLOS densities must share dimensionality")
    if point_estimate not in ("mean", "map"):
        raise ConfigError("point_estimate must be 'mean' or 'map'")
    x = link.features
    b = 0.0
    decision = ChannelState.LOS
    fallback = False
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        if di_params is None:
            feats = link_feature_values(x, f_los.dims)
        else:
            d_hat = max(C0 * (link.toa - b), 1e-3)
            r0, tm, tds = di_transform(x.r_max, x.tau_m, x.tau_ds, d_hat, di_params)
            feats = np.array([tds] if f_los.dims == 2 else [r0, tm, tds])
        lam_los = p_los * f_los.feature_marginal(feats) if p_los > 0 else 0.0
        lam_nlos = (1 - p_los) * f_nlos.feature_marginal(feats) if p_los < 1 else 0.0
        if lam_los <= 0 and lam_nlos <= 0:
            fallback = True
            decision = ChannelState.LOS if p_los >= 0.5 else ChannelState.NLOS
        else:
            decision = ChannelState.LOS if lam_los >= lam_nlos else ChannelState.NLOS
        b_new = 0.0
        if decision is ChannelState.NLOS:
            est = f_nlos.bias_posterior_mean(feats) if point_estimate == "mean" else f_nlos.bias_map(feats)
            b_new = float(est) if est is not None else f_nlos.bias_marginal_mean()
        history.append(b_new)
        done = abs(b_new - b) < tol
        b = b_new
        if done:
            break
    return Correction(link.toa - b, b, decision, it, fallback, history)


def corrected_ls_estimate(links, f_los, f_nlos, p_los, grid=None, di_params=None, **kwargs) -> PositionEstimate:
    """Per-link iterative correction followed by grid least squares."""
    corr = [iterative_correct(l, f_los, f_nlos, p_los, di_params=di_params, **kwargs) for l in links]
    est = ls_estimate(links, grid, toas=[c.corrected_toa for c in corr])
    est.bias_hat = np.array([c.bias_hat for c in corr])
    est.decisions = [c.decision for c in corr]
    return est
