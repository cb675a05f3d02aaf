import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from uwbnlos.errors import DegenerateKurtosisError, DomainError, FitError, NoSignalError
from uwbnlos.features import (
    CORRELATION_COLUMNS,
    DIFeatureVector,
    DIModelParams,
    FeatureVector,
    abs_pearson,
    correlation_report,
    extract_features,
    feature_matrix,
    fit_di_arrays,
    fit_di_model,
    format_correlation_table,
    from_distance_independent,
    to_distance_independent,
)
from uwbnlos.synth import C0, ChannelState, LinkObservation, SynthParams, Waveform, synth_pool

NS = 1e-9
FS = 100e9  # 10 ps samples keep the analytic examples on the lattice


def waveform_from(times_amps, n=1000, fs=FS):
    r = np.zeros(n)
    for t, a in times_amps:
        r[int(round(t * fs))] = a
    return Waveform(r, fs, 0.0)


def random_waveform(rng, n=64):
    samples = rng.normal(size=n) * rng.uniform(0.1, 10.0)
    fs = rng.uniform(1e9, 50e9)
    t0 = rng.uniform(-5e-9, 5e-9)
    toa = t0 + rng.integers(0, 4) / fs  # TOA on the first few samples
    return Waveform(samples, fs, t0), toa


class TestExtractFeatures:
    def test_single_impulse_is_a_point_mass(self):
        x = extract_features(waveform_from([(0.0, 1.0)]), 0.0)
        assert x.r_max == 1.0
        assert x.tau_m == pytest.approx(0.0, abs=1e-15)
        assert x.tau_ds == pytest.approx(0.0, abs=1e-27)

    def test_two_equal_impulses(self):
        x = extract_features(waveform_from([(1 * NS, 1.0), (3 * NS, 1.0)]), 1 * NS)
        assert x.tau_m == pytest.approx(1 * NS, rel=1e-9)
        assert x.tau_ds == pytest.approx(1 * NS**2, rel=1e-9)

    def test_linear_ramp_rise_time(self):
        n_ramp = int(round(1 * NS * FS))
        r = np.zeros(1000)
        r[: n_ramp + 1] = np.linspace(0.0, 1.0, n_ramp + 1)
        r[n_ramp + 1 : n_ramp + 50] = 1.0
        x = extract_features(Waveform(r, FS, 0.0), 0.0)
        assert abs(x.t_rise - 0.8 * NS) <= 1 / FS

    def test_invariants_on_synthetic_links(self):
        obs = synth_pool(30, ChannelState.NLOS, SynthParams(), np.random.default_rng(3))
        for o in obs:
            x = extract_features(o.waveform, o.toa_est)
            assert x.energy > 0 and x.tau_ds >= 0 and x.t_rise >= 0 and x.tau_m >= 0

    def test_zero_energy(self):
        with pytest.raises(NoSignalError):
            extract_features(Waveform(np.zeros(32), FS), 0.0)

    def test_constant_magnitude(self):
        with pytest.raises(DegenerateKurtosisError):
            extract_features(Waveform(np.full(32, -2.0), FS), 0.0)

    def test_toa_outside_record(self):
        with pytest.raises(DomainError):
            extract_features(waveform_from([(0.0, 1.0)]), -1 * NS)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_direct_summation_oracle(self, seed):
        w, toa = random_waveform(np.random.default_rng(seed))
        got = extract_features(w, toa).as_array()
        ref = oracles.features(list(w.samples), w.sample_rate, w.t_start, toa)
        for g, r in zip(got, ref):
            assert oracles.rel_close(g, r, 1e-9), (g, r)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(1e-3, 1e3))
    def test_amplitude_scaling(self, seed, alpha):
        w, toa = random_waveform(np.random.default_rng(seed))
        x = extract_features(w, toa)
        y = extract_features(Waveform(alpha * np.asarray(w.samples), w.sample_rate, w.t_start), toa)
        assert y.r_max == pytest.approx(alpha * x.r_max, rel=1e-12)
        assert y.energy == pytest.approx(alpha**2 * x.energy, rel=1e-12)
        for name in ("tau_m", "tau_ds", "t_rise", "kurtosis"):
            assert getattr(y, name) == pytest.approx(getattr(x, name), rel=1e-9, abs=1e-30)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), delta=st.floats(-50e-9, 50e-9))
    def test_joint_time_shift(self, seed, delta):
        w, toa = random_waveform(np.random.default_rng(seed))
        x = extract_features(w, toa)
        y = extract_features(w.shifted(delta), toa + delta)
        assert abs(y.t_rise - x.t_rise) <= w.dt * (1 + 1e-9)
        for name in ("r_max", "energy", "tau_m", "tau_ds", "kurtosis"):
            assert getattr(y, name) == pytest.approx(getattr(x, name), rel=1e-6, abs=1e-6 * w.dt)

    def test_feature_matrix_rows(self):
        obs = synth_pool(3, ChannelState.LOS, SynthParams(), np.random.default_rng(0))
        m = feature_matrix(obs)
        assert m.shape == (3, 6)
        np.testing.assert_array_equal(m[1], extract_features(obs[1].waveform, obs[1].toa_est).as_array())


def _obs_at(d):
    # Only the distance matters; the DI tests pass explicit feature rows.
    return LinkObservation(waveform_from([(0.0, 1.0), (1 * NS, 0.5)]), d / C0, d, 0.0, ChannelState.LOS)


class TestDIModel:
    def test_exact_regression(self):
        d = np.linspace(1.0, 5.0, 9)
        feats = np.zeros((d.size, 6))
        feats[:, 0] = 5.0 - 0.5 * d
        feats[:, 2] = 2 * NS**2 + 0.3 * NS**2 * d
        p = fit_di_model([_obs_at(x) for x in d], feats)
        assert p.r_max_m == pytest.approx(0.5, rel=1e-12)
        assert p.tau_ds_0 == pytest.approx(2 * NS**2, rel=1e-10)

    def test_noisy_regression_within_three_standard_errors(self):
        # Closed-form OLS standard errors from the known noise level.
        rng = np.random.default_rng(42)
        n, sigma_r, sigma_t = 2000, 0.05, 0.1 * NS**2
        d = rng.uniform(1.0, 4.0, n)
        feats = np.zeros((n, 6))
        feats[:, 0] = 5.0 - 0.5 * d + rng.normal(0, sigma_r, n)
        feats[:, 2] = 2 * NS**2 + 0.3 * NS**2 * d + rng.normal(0, sigma_t, n)
        p = fit_di_arrays(d, feats)
        sxx = np.sum((d - d.mean()) ** 2)
        se_slope = sigma_r / np.sqrt(sxx)
        se_icpt = sigma_t * np.sqrt(1 / n + d.mean() ** 2 / sxx)
        assert abs(p.r_max_m - 0.5) < 3 * se_slope
        assert abs(p.tau_ds_0 - 2 * NS**2) < 3 * se_icpt

    def test_equal_distances_are_rank_deficient(self):
        with pytest.raises(FitError):
            fit_di_arrays(np.full(5, 2.0), np.ones((5, 6)))

    def test_transform_examples(self):
        p = DIModelParams(r_max_m=0.5, tau_ds_0=0.0)
        x = FeatureVector(1.0, 6 * NS, 0.0, 1.0, 0.0, 3.0)
        assert to_distance_independent(x, 2.0, p).r_max0 == 2.0
        assert to_distance_independent(x, 3.0, p).tau_m_m == pytest.approx(2 * NS)

    def test_non_positive_distance(self):
        p = DIModelParams(0.1, 0.0)
        x = FeatureVector(1.0, 1e-9, 1e-18, 1.0, 0.0, 3.0)
        with pytest.raises(DomainError):
            to_distance_independent(x, 0.0, p)
        with pytest.raises(DomainError):
            from_distance_independent(DIFeatureVector(1.0, 1.0, 1.0), -1.0, p)

    @settings(max_examples=100)
    @given(
        r=st.floats(1e-3, 10), tm=st.floats(0, 50e-9), tds=st.floats(0, 1e-15),
        d=st.floats(0.1, 30), slope=st.floats(-1, 1), icpt=st.floats(-1e-16, 1e-16),
    )
    def test_round_trip(self, r, tm, tds, d, slope, icpt):
        p = DIModelParams(slope, icpt)
        x = FeatureVector(r, tm, tds, 1.0, 0.0, 3.0)
        back = from_distance_independent(to_distance_independent(x, d, p), d, p)
        for a, b, scale in zip(back, (r, tm, tds), (max(r, abs(slope) * d), tm, max(tds, abs(icpt)))):
            assert abs(a - b) <= 1e-12 * max(scale, 1e-300)


class TestCorrelation:
    def test_linear_feature_gives_unit_correlation(self):
        rng = np.random.default_rng(0)
        assert abs_pearson(np.arange(10.0), 3 * np.arange(10.0) - 2) == pytest.approx(1.0)
        b = rng.uniform(size=50)
        assert abs_pearson(b, -2 * b) == pytest.approx(1.0)

    def test_independent_feature(self):
        rng = np.random.default_rng(1)
        assert abs_pearson(rng.normal(size=10_000), rng.normal(size=10_000)) < 0.05

    def test_zero_variance_is_nan(self):
        assert np.isnan(abs_pearson(np.ones(5), np.arange(5.0)))

    def test_report_structure(self):
        p = SynthParams()
        rng = np.random.default_rng(5)
        obs = synth_pool(40, ChannelState.LOS, p, rng) + synth_pool(40, ChannelState.NLOS, p, rng)
        di = fit_di_model(obs)
        rep = correlation_report(obs, di)
        assert set(rep) == {ChannelState.LOS, ChannelState.NLOS}
        # LOS bias is identically 0: every cell is the undefined marker.
        assert all(np.isnan(v) for v in rep[ChannelState.LOS].values())
        for v in rep[ChannelState.NLOS].values():
            assert 0.0 <= v <= 1.0
        table = format_correlation_table(rep).splitlines()
        assert table[0].split(",") == ["state", *CORRELATION_COLUMNS]
        assert [line.split(",")[0] for line in table[1:]] == ["NLOS", "LOS"]
        measured = correlation_report(obs, di, bias="measured")
        assert all(0.0 <= v <= 1.0 for v in measured[ChannelState.LOS].values())

    def test_too_few_observations(self):
        obs = synth_pool(2, ChannelState.NLOS, SynthParams(), np.random.default_rng(0))
        obs += synth_pool(5, ChannelState.LOS, SynthParams(), np.random.default_rng(1))
        with pytest.raises(DomainError):
            correlation_report(obs, DIModelParams(0.1, 0.0))
