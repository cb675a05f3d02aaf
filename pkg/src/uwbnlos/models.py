"""Fitting LOS/NLOS density pairs from link pools and storing them on disk.

A *family* is one (f_los, f_nlos) pair sharing axes.  NLOS models are joint
densities over a bias axis and the features.  LOS models are separable: a
narrow Gaussian around zero bias (the Dirac mass blurred by the ranging
noise) times a features-only density built with the same pipeline.

The NLOS bias axis can hold either the generator's true bias (``"true"``,
the characterisation of the bias itself, which respects the wall-delay
floor) or the observable excess delay ``toa - d / C0`` (``"measured"``,
the bias already convolved with the ranging noise).  Likelihoods evaluated
at ``toa - d(theta) / C0`` need the latter, so it is the default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from uwbnlos.density import (
    Density,
    GaussianBias,
    SeparableDensity,
    fit_histogram,
    fit_poly,
    load_density,
    save_density,
    smooth,
)
from uwbnlos.errors import ConfigError, DataError
from uwbnlos.estimators import AXES
from uwbnlos.features import DIModelParams, di_transform, extract_features
from uwbnlos.synth import C0, synth_link

DEFAULT_BINS = {2: 25, 4: 12}
DEFAULT_REFINE = {2: 4, 4: 3}
# Smallest LOS bias spread; keeps the Gaussian well defined on noiseless pools.
MIN_LOS_SIGMA = 1e-12


@dataclass(frozen=True)
class FamilySpec:
    """How one density pair is built.

    Attributes:
        kind: ``"hist"``, ``"smooth"``, ``"poly"`` or ``"ve"`` (separable
            univariate delay-spread model).
        dims: 2 (bias + delay spread) or 4 (bias + three features).
        independent: Use the distance-independent feature transform.
    """

    kind: str
    dims: int
    independent: bool = False

    def __post_init__(self):
        if self.kind not in ("hist", "smooth", "poly", "ve"):
            raise ConfigError(f"unknown density kind {self.kind!r}")
        if self.dims not in (2, 4):
            raise ConfigError(f"dims must be 2 or 4, got {self.dims}")
        if self.kind == "ve" and (self.dims != 2 or self.independent):
            raise ConfigError("the VE-style model is 2-D and distance dependent")

    @property
    def name(self) -> str:
        if self.kind == "ve":
            return "ve"
        return f"{self.kind}-{self.dims}d-{'indep' if self.independent else 'dep'}"

    @property
    def axes(self):
        return AXES[(self.dims, self.independent)]

    @classmethod
    def parse(cls, name):
        if name == "ve":
            return cls("ve", 2)
        try:
            kind, dims, param = name.split("-")
            return cls(kind, int(dims.rstrip("d")), {"dep": False, "indep": True}[param])
        except (ValueError, KeyError):
            raise ConfigError(f"cannot parse density family {name!r}") from None


# Family used by each named estimator (LS needs none).
ESTIMATOR_FAMILY = {
    "VE": "ve",
    "ML-2D": "smooth-2d-dep",
    "ML-4D": "smooth-4d-dep",
    "ML-2D-ID": "smooth-2d-indep",
    "ML-4D-F": "poly-4d-dep",
    "ML-2D-IT": "smooth-2d-dep",
    "ML-4D-IT": "smooth-4d-dep",
}
ESTIMATORS = ("LS",) + tuple(ESTIMATOR_FAMILY)


@dataclass
class LinkPool:
    """Features and ground truth of a link pool, waveforms dropped.

    Attributes:
        features: ``(n, 6)`` feature matrix.
        distance: True link distances (m).
        bias: True bias (s); zero for LOS.
        toa: TOA estimates (s).
    """

    features: np.ndarray
    distance: np.ndarray
    bias: np.ndarray
    toa: np.ndarray

    @classmethod
    def from_observations(cls, obs, features):
        return cls(
            np.asarray(features, dtype=float).reshape(-1, 6),
            np.array([o.true_distance for o in obs], dtype=float),
            np.array([o.true_bias for o in obs], dtype=float),
            np.array([o.toa_est for o in obs], dtype=float),
        )

    @classmethod
    def synthesize(cls, n, state, params, rng, toa_noise=True):
        """Draw ``n`` links like :func:`~uwbnlos.synth.synth_pool`, keeping features only."""
        distances = rng.uniform(params.d_min, params.d_max, n)
        feats = np.empty((n, 6))
        bias = np.empty(n)
        toa = np.empty(n)
        for i, d in enumerate(distances):
            o = synth_link(d, state, params, rng, toa_noise)
            feats[i] = extract_features(o.waveform, o.toa_est).as_array()
            bias[i], toa[i] = o.true_bias, o.toa_est
        return cls(feats, distances.astype(float), bias, toa)

    def subset(self, index):
        return LinkPool(self.features[index], self.distance[index], self.bias[index], self.toa[index])

    def __len__(self):
        return self.distance.size

    @property
    def measured_bias(self):
        return self.toa - self.distance / C0

    def feature_columns(self, dims, di_params=None):
        f = self.features
        if di_params is None:
            cols = [f[:, 0], f[:, 1], f[:, 2]]
        else:
            cols = list(di_transform(f[:, 0], f[:, 1], f[:, 2], self.distance, di_params))
        return np.column_stack(cols[2:] if dims == 2 else cols)


def los_bias_sigma(pool: LinkPool) -> float:
    """Spread of ``toa - d / C0`` over LOS links (the ranging noise)."""
    resid = pool.toa - pool.distance / C0
    return max(float(np.std(resid)), MIN_LOS_SIGMA)


def _build(samples, kind, bins, refine, axes, bias_blur=None):
    h = fit_histogram(samples, bins, axes)
    if kind == "hist":
        return h
    s = smooth(h, refine_factor=refine, bias_blur=bias_blur)
    if kind == "smooth":
        return s
    return fit_poly(s.resample(h.edges))


def fit_family(
    spec: FamilySpec,
    los: LinkPool,
    nlos: LinkPool,
    di_params: DIModelParams | None = None,
    bins=None,
    refine=None,
    bias="measured",
    bias_blur=None,
) -> tuple[Density, Density]:
    """Fit the LOS and NLOS densities of one family.

    Args:
        spec: Family description.
        los: LOS training pool.
        nlos: NLOS training pool.
        di_params: Distance-independent model (required for ``indep`` families).
        bins: Histogram bins per axis; defaults to 25 (2-D) or 12 (4-D).
        refine: Spline refinement factor; defaults to 4 (2-D) or 3 (4-D).
        bias: ``"measured"`` or ``"true"`` NLOS bias samples.
        bias_blur: Optional Gaussian blur (s) along the NLOS bias axis.

    Raises:
        DataError: a training pool is empty.
        FitError: the polynomial design is rank deficient.
    """
    if len(los) == 0:
        raise DataError("LOS training pool is empty")
    if len(nlos) == 0:
        raise DataError("NLOS training pool is empty")
    if spec.independent and di_params is None:
        raise ConfigError("distance-independent families need DIModelParams")
    if bias not in ("true", "measured"):
        raise ConfigError("bias must be 'true' or 'measured'")
    bins = DEFAULT_BINS[spec.dims] if bins is None else bins
    refine = DEFAULT_REFINE[spec.dims] if refine is None else refine
    axes = spec.axes
    los_bias = GaussianBias(0.0, los_bias_sigma(los), axes=axes[:1])
    dp = di_params if spec.independent else None

    if spec.kind == "ve":
        tds_nlos = nlos.features[:, 2]
        b_nlos = nlos.bias if bias == "true" else nlos.measured_bias
        nlos_b = smooth(fit_histogram(b_nlos, bins, axes[:1]), refine_factor=refine, bias_blur=bias_blur)
        nlos_x = smooth(fit_histogram(tds_nlos, bins, axes[1:]), refine_factor=refine)
        los_x = smooth(fit_histogram(los.features[:, 2], bins, axes[1:]), refine_factor=refine)
        return SeparableDensity(los_bias, los_x), SeparableDensity(nlos_b, nlos_x)

    b_nlos = nlos.bias if bias == "true" else nlos.measured_bias
    x_nlos = nlos.feature_columns(spec.dims, dp)
    x_los = los.feature_columns(spec.dims, dp)
    f_nlos = _build(np.column_stack([b_nlos, x_nlos]), spec.kind, bins, refine, axes, bias_blur)
    f_los_x = _build(x_los, spec.kind, bins, refine, axes[1:])
    return SeparableDensity(los_bias, f_los_x), f_nlos


@dataclass
class ModelSet:
    """Fitted density families plus the distance-independent model."""

    families: dict = field(default_factory=dict)
    di_params: DIModelParams | None = None

    def pair(self, name):
        try:
            return self.families[name]
        except KeyError:
            raise DataError(f"density family {name!r} has not been fitted") from None

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        index = {"families": sorted(self.families), "di_params": None}
        if self.di_params is not None:
            index["di_params"] = {"r_max_m": self.di_params.r_max_m, "tau_ds_0": self.di_params.tau_ds_0}
        for name, (f_los, f_nlos) in self.families.items():
            save_density(f_los, os.path.join(directory, f"{name}.los.txt"))
            save_density(f_nlos, os.path.join(directory, f"{name}.nlos.txt"))
        with open(os.path.join(directory, "models.json"), "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        path = os.path.join(directory, "models.json")
        if not os.path.exists(path):
            raise DataError(f"no models.json in {directory}")
        with open(path, encoding="utf-8") as fh:
            index = json.load(fh)
        dp = index.get("di_params")
        out = cls(di_params=DIModelParams(**dp) if dp else None)
        for name in index["families"]:
            out.families[name] = (
                load_density(os.path.join(directory, f"{name}.los.txt")),
                load_density(os.path.join(directory, f"{name}.nlos.txt")),
            )
        return out


def families_for(estimators):
    names = []
    for e in estimators:
        if e not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATORS)}")
        fam = ESTIMATOR_FAMILY.get(e)
        if fam is not None and fam not in names:
            names.append(fam)
    return names


def fit_models(estimators, los: LinkPool, nlos: LinkPool, di_params=None, bins=None, refine=None, **kwargs) -> ModelSet:
    """Fit every family needed by ``estimators``."""
    out = ModelSet(di_params=di_params)
    for name in families_for(estimators):
        spec = FamilySpec.parse(name)
        b = None if bins is None else bins.get(spec.dims)
        r = None if refine is None else refine.get(spec.dims)
        out.families[name] = fit_family(spec, los, nlos, di_params, b, r, **kwargs)
    return out
