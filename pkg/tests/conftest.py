import time

import numpy as np
import pytest

from uwbnlos.features import fit_di_arrays
from uwbnlos.models import ESTIMATORS, LinkPool, fit_models
from uwbnlos.synth import ChannelState, SynthParams

ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


class Pools:
    """LOS/NLOS link pools split into even (train) and odd (eval) halves."""

    def __init__(self, n_los, n_nlos, seed):
        t0 = time.perf_counter()
        self.params = SynthParams()
        rng = np.random.default_rng(seed)
        self.los = LinkPool.synthesize(n_los, ChannelState.LOS, self.params, rng)
        self.nlos = LinkPool.synthesize(n_nlos, ChannelState.NLOS, self.params, rng)
        self.los_train, self.los_eval = self.los.subset(slice(0, None, 2)), self.los.subset(slice(1, None, 2))
        self.nlos_train, self.nlos_eval = self.nlos.subset(slice(0, None, 2)), self.nlos.subset(slice(1, None, 2))
        self.di_params = fit_di_arrays(
            np.concatenate([self.los_train.distance, self.nlos_train.distance]),
            np.vstack([self.los_train.features, self.nlos_train.features]),
        )
        self.generation_s = time.perf_counter() - t0
        self.fit_s = 0.0
        self._models = None

    @property
    def models(self):
        if self._models is None:
            t0 = time.perf_counter()
            self._models = fit_models(ESTIMATORS, self.los_train, self.nlos_train, self.di_params)
            self.fit_s = time.perf_counter() - t0
        return self._models


@pytest.fixture(scope="session")
def pools():
    """6000 LOS and 20000 NLOS links; the NLOS training half holds 10^4 links."""
    return Pools(6000, 20000, seed=20240601)


@pytest.fixture(scope="session")
def small_pools():
    return Pools(600, 1200, seed=11)
