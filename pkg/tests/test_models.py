import numpy as np
import pytest

from uwbnlos.density import HistogramDensity, SeparableDensity, SmoothedDensity
from uwbnlos.errors import ConfigError, DataError
from uwbnlos.models import (
    ESTIMATOR_FAMILY,
    ESTIMATORS,
    FamilySpec,
    LinkPool,
    ModelSet,
    families_for,
    fit_family,
    fit_models,
    los_bias_sigma,
)
from uwbnlos.synth import C0


class TestFamilySpec:
    @pytest.mark.parametrize("name", ["ve", "hist-2d-dep", "smooth-4d-indep", "poly-4d-dep"])
    def test_name_round_trip(self, name):
        assert FamilySpec.parse(name).name == name

    @pytest.mark.parametrize("name", ["spline-2d-dep", "smooth-3d-dep", "smooth-2d", "smooth-2d-both", "x"])
    def test_bad_names(self, name):
        with pytest.raises(ConfigError):
            FamilySpec.parse(name)

    def test_ve_is_two_dimensional_and_dependent(self):
        with pytest.raises(ConfigError):
            FamilySpec("ve", 4)
        with pytest.raises(ConfigError):
            FamilySpec("ve", 2, independent=True)

    def test_axes_lead_with_bias(self):
        assert FamilySpec("smooth", 4).axes[0] == FamilySpec("hist", 2, True).axes[0]
        assert len(FamilySpec("smooth", 4).axes) == 4


def test_every_estimator_family_parses():
    for name in ESTIMATOR_FAMILY.values():
        FamilySpec.parse(name)


def test_families_for_deduplicates_and_validates():
    assert families_for(["LS"]) == []
    assert families_for(["ML-2D", "ML-2D-IT", "VE"]) == ["smooth-2d-dep", "ve"]
    with pytest.raises(ConfigError):
        families_for(["ML-9D"])


class TestLinkPool:
    def test_subset_and_measured_bias(self):
        d = np.array([1.0, 2.0, 3.0])
        pool = LinkPool(np.arange(18.0).reshape(3, 6), d, np.array([0.0, 1e-9, 2e-9]), d / C0 + 5e-10)
        np.testing.assert_allclose(pool.measured_bias, 5e-10, rtol=1e-9)
        sub = pool.subset(slice(1, None))
        assert len(sub) == 2
        np.testing.assert_array_equal(sub.features[0], np.arange(6.0, 12.0))

    def test_feature_columns(self):
        pool = LinkPool(np.arange(12.0).reshape(2, 6), np.ones(2), np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(pool.feature_columns(2), [[2.0], [8.0]])
        np.testing.assert_array_equal(pool.feature_columns(4), [[0, 1, 2], [6, 7, 8]])

    def test_los_sigma_floor(self):
        d = np.linspace(1, 2, 5)
        pool = LinkPool(np.zeros((5, 6)), d, np.zeros(5), d / C0)
        assert los_bias_sigma(pool) > 0


class TestFitFamily:
    def test_empty_pools(self, small_pools):
        empty = small_pools.los_train.subset(slice(0, 0))
        with pytest.raises(DataError, match="LOS"):
            fit_family(FamilySpec("hist", 2), empty, small_pools.nlos_train)
        with pytest.raises(DataError, match="NLOS"):
            fit_family(FamilySpec("hist", 2), small_pools.los_train, empty)

    def test_independent_family_needs_di_params(self, small_pools):
        with pytest.raises(ConfigError):
            fit_family(FamilySpec("smooth", 2, True), small_pools.los_train, small_pools.nlos_train)

    def test_bad_bias_source(self, small_pools):
        with pytest.raises(ConfigError):
            fit_family(FamilySpec("hist", 2), small_pools.los_train, small_pools.nlos_train, bias="guess")

    @pytest.mark.parametrize("name", ["hist-2d-dep", "smooth-2d-indep", "ve"])
    def test_pair_structure(self, small_pools, name):
        spec = FamilySpec.parse(name)
        f_los, f_nlos = fit_family(spec, small_pools.los_train, small_pools.nlos_train, small_pools.di_params)
        assert isinstance(f_los, SeparableDensity)
        assert f_los.axes == f_nlos.axes == spec.axes
        if spec.kind == "hist":
            assert isinstance(f_nlos, HistogramDensity)
        elif spec.kind == "smooth":
            assert isinstance(f_nlos, SmoothedDensity)

    def test_true_bias_axis_respects_floor(self, small_pools):
        _, f_nlos = fit_family(FamilySpec("hist", 2), small_pools.los_train, small_pools.nlos_train, bias="true")
        assert f_nlos.support[0][0] >= small_pools.nlos_train.bias.min() - 1e-15


def test_model_set_round_trip(tmp_path, small_pools):
    models = fit_models(["ML-2D", "VE", "ML-2D-ID"], small_pools.los_train, small_pools.nlos_train,
                        small_pools.di_params)
    models.save(tmp_path)
    back = ModelSet.load(tmp_path)
    assert back.di_params == models.di_params
    assert sorted(back.families) == sorted(models.families)
    rng = np.random.default_rng(0)
    for name, (f_los, f_nlos) in models.families.items():
        for a, b in zip((f_los, f_nlos), back.families[name]):
            lo, hi = a.support
            # The LOS bias factor has unbounded support.
            lo, hi = np.where(np.isfinite(lo), lo, -1e-9), np.where(np.isfinite(hi), hi, 1e-9)
            pts = lo + rng.uniform(size=(200, a.dims)) * (hi - lo)
            np.testing.assert_array_equal(a.evaluate(pts), b.evaluate(pts))


def test_model_set_missing(tmp_path):
    with pytest.raises(DataError):
        ModelSet.load(tmp_path)
    with pytest.raises(DataError):
        ModelSet().pair("smooth-2d-dep")


def test_estimator_list_starts_with_ls():
    assert ESTIMATORS[0] == "LS" and len(ESTIMATORS) == 8
