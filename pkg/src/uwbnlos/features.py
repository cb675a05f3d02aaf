"""Waveform features, distance-independent transforms and bias correlation.

All time integrals use the trapezoidal rule over the whole acquired window,
with time measured from the TOA estimate of the link.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from uwbnlos.errors import DegenerateKurtosisError, DomainError, FitError, NoSignalError
from uwbnlos.synth import C0, ChannelState, Waveform

FEATURE_NAMES = ("r_max", "tau_m", "tau_ds", "energy", "t_rise", "kurtosis")
DI_NAMES = ("r_max0", "tau_m_m", "tau_ds_m")


@dataclass(frozen=True)
class FeatureVector:
    r_max: float
    tau_m: float
    tau_ds: float
    energy: float
    t_rise: float
    kurtosis: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class DIFeatureVector:
    r_max0: float
    tau_m_m: float
    tau_ds_m: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class DIModelParams:
    """Deterministic slope of ``r_max`` vs distance and intercept of ``tau_ds``."""

    r_max_m: float
    tau_ds_0: float


def _trapz(y, t):
    return np.trapezoid(y, t)


def extract_features(w: Waveform, toa: float) -> FeatureVector:
    """Compute the six features of ``w`` with the time origin at ``toa``.

    Raises:
        DomainError: ``toa`` falls outside the record.
        NoSignalError: the window carries no energy.
        DegenerateKurtosisError: ``|r|`` is constant over the window.
    """
    t = w.times - toa
    if not (t[0] <= 0.0 <= t[-1]):
        raise DomainError(f"toa {toa!r} lies outside the acquired window")
    mag = np.abs(w.samples)
    power = mag * mag
    energy = _trapz(power, t)
    if not energy > 0:
        raise NoSignalError("zero-energy observation window")
    tau_m = _trapz(t * power, t) / energy
    tau_ds = _trapz((t - tau_m) ** 2 * power, t) / energy

    r_max = mag.max()
    rel = mag / r_max
    t_rise = t[np.argmax(rel > 0.9)] - t[np.argmax(rel > 0.1)]

    span = t[-1] - t[0]
    mu = _trapz(mag, t) / span
    dev = mag - mu
    var = _trapz(dev * dev, t) / span
    if not var > 0:
        raise DegenerateKurtosisError("constant magnitude over the observation window")
    kurtosis = _trapz(dev**4, t) / (var * var * span)
    return FeatureVector(float(r_max), float(tau_m), float(tau_ds), float(energy), float(t_rise), float(kurtosis))


def feature_matrix(obs) -> np.ndarray:
    """Stack :func:`extract_features` over observations into an ``(n, 6)`` array."""
    out = np.empty((len(obs), len(FEATURE_NAMES)))
    for i, o in enumerate(obs):
        out[i] = extract_features(o.waveform, o.toa_est).as_array()
    return out


def _line_fit(x, y):
    x = np.asarray(x, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        raise FitError("need at least two distinct distances for the regression")
    slope, intercept = np.polyfit(x, np.asarray(y, dtype=float), 1)
    return slope, intercept


def fit_di_model(obs, features=None) -> DIModelParams:
    """Least-squares fit of ``r_max = r0 - r_max_m d`` and ``tau_ds = tau_ds_0 + k d``."""
    if features is None:
        features = feature_matrix(obs)
    return fit_di_arrays([o.true_distance for o in obs], features)


def fit_di_arrays(distance, features) -> DIModelParams:
    """:func:`fit_di_model` on a distance vector and an ``(n, >=3)`` feature matrix."""
    features = np.asarray(features, dtype=float)
    d = np.asarray(distance, dtype=float)
    slope_r, _ = _line_fit(d, features[:, 0])
    _, tau_ds_0 = _line_fit(d, features[:, 2])
    return DIModelParams(r_max_m=float(-slope_r), tau_ds_0=float(tau_ds_0))


def to_distance_independent(x, d, p: DIModelParams) -> DIFeatureVector:
    if not d > 0:
        raise DomainError(f"distance must be > 0, got {d!r}")
    return DIFeatureVector(
        r_max0=x.r_max + p.r_max_m * d,
        tau_m_m=x.tau_m / d,
        tau_ds_m=(x.tau_ds - p.tau_ds_0) / d,
    )


def from_distance_independent(xt: DIFeatureVector, d, p: DIModelParams):
    """Inverse of :func:`to_distance_independent`: ``(r_max, tau_m, tau_ds)``."""
    if not d > 0:
        raise DomainError(f"distance must be > 0, got {d!r}")
    return (xt.r_max0 - p.r_max_m * d, xt.tau_m_m * d, xt.tau_ds_m * d + p.tau_ds_0)


def di_transform(r_max, tau_m, tau_ds, d, p: DIModelParams):
    """Vectorised distance-independent transform; ``d`` may be an array."""
    d = np.asarray(d, dtype=float)
    return r_max + p.r_max_m * d, tau_m / d, (tau_ds - p.tau_ds_0) / d


# ---------------------------------------------------------------------------
# Correlation analysis
# ---------------------------------------------------------------------------

CORRELATION_COLUMNS = FEATURE_NAMES + ("d",) + DI_NAMES


def abs_pearson(x, y) -> float:
    """``|rho|`` between two samples, NaN when either has zero variance."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    sxx, syy = np.dot(x, x), np.dot(y, y)
    if sxx == 0 or syy == 0:
        return float("nan")
    return float(min(abs(np.dot(x, y)) / np.sqrt(sxx * syy), 1.0))


def correlation_report(obs, p: DIModelParams, bias="true", features=None) -> dict:
    """Absolute Pearson correlation of the bias with every feature, per state.

    Args:
        obs: Link observations.
        p: Distance-independent model used for the ``r_max0``/``tau_*_m`` columns.
        bias: ``"true"`` uses the generator bias, ``"measured"`` uses
            ``toa_est - d / C0`` (the only bias observable on real data).
        features: Optional precomputed ``(n, 6)`` feature matrix.

    Returns:
        ``{ChannelState: {column: |rho| or nan}}`` for NLOS and LOS.
    """
    if bias not in ("true", "measured"):
        raise DomainError("bias must be 'true' or 'measured'")
    if features is None:
        features = feature_matrix(obs)
    features = np.asarray(features, dtype=float)
    d = np.array([o.true_distance for o in obs])
    b = np.array([o.true_bias if bias == "true" else o.toa_est - o.true_distance / C0 for o in obs])
    states = np.array([o.state.value for o in obs])
    r0, tm, tds = di_transform(features[:, 0], features[:, 1], features[:, 2], d, p)
    columns = np.column_stack([features, d, r0, tm, tds])

    report = {}
    for state in (ChannelState.NLOS, ChannelState.LOS):
        sel = states == state.value
        if sel.sum() < 3:
            raise DomainError(f"need >= 3 {state.value} observations, got {int(sel.sum())}")
        report[state] = {
            name: abs_pearson(b[sel], columns[sel, j]) for j, name in enumerate(CORRELATION_COLUMNS)
        }
    return report


def format_correlation_table(report, sep=",") -> str:
    """Render a report as delimited text, one row per channel state."""
    lines = [sep.join(("state",) + CORRELATION_COLUMNS)]
    for state, row in report.items():
        cells = ["nan" if np.isnan(row[c]) else f"{row[c]:.6f}" for c in CORRELATION_COLUMNS]
        lines.append(sep.join([ChannelState(state).value] + cells))
    return "\n".join(lines) + "\n"
