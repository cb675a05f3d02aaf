"""Monte-Carlo localization sweep over the LOS probability.

The mobile station sits at the origin.  Each trial draws one link per
anchor from the LOS pool (probability ``p_los``) or the NLOS pool, places
anchor ``i`` at distance ``d_i`` on a regular ``N_a``-gon and runs every
configured estimator.  No extra noise is added: the pooled links already
carry it.

Every trial uses its own generator seeded from ``(rng_seed, p_index,
trial)``, so results do not depend on how trials are scheduled.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from uwbnlos.density import mix
from uwbnlos.errors import ConfigError, DataError
from uwbnlos.estimators import (
    Anchor,
    GridSpec,
    LinkInput,
    corrected_ls_estimate,
    ls_estimate,
    ml_estimate,
)
from uwbnlos.features import FeatureVector
from uwbnlos.models import ESTIMATOR_FAMILY, ESTIMATORS, LinkPool, ModelSet

ML_MODES = {"ML-2D": "2D", "ML-4D": "4D", "ML-2D-ID": "2D-ID", "ML-4D-F": "4D"}
ITERATIVE = ("VE", "ML-2D-IT", "ML-4D-IT")


@dataclass(frozen=True)
class ScenarioConfig:
    """Sweep settings.

    Attributes:
        p_los_values: LOS probabilities to sweep.
        trials: Trials per probability.
        estimators: Estimator names (see ``ESTIMATORS``).
        n_anchors: Anchors per trial (>= 3).
        grid_step: Search lattice step (m).
        grid_margin: Margin around the anchors (m).
        rng_seed: Root seed of the per-trial substreams.
        prior: ``"known"`` weighs the hypotheses by ``p_los``; ``"equal"``
            uses 0.5/0.5 regardless of the true mixing.
        point_estimate: ``"mean"`` or ``"map"`` bias estimate in the
            iterative corrector.
        max_iter: Iteration cap of the corrector.
        tol: Convergence tolerance of the corrector (s).
    """

    p_los_values: tuple = (0.0, 0.2, 0.5, 0.9, 1.0)
    trials: int = 1000
    estimators: tuple = ESTIMATORS
    n_anchors: int = 3
    grid_step: float = 0.01
    grid_margin: float = 1.0
    rng_seed: int = 0
    prior: str = "known"
    point_estimate: str = "mean"
    max_iter: int = 10
    tol: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "p_los_values", tuple(float(p) for p in self.p_los_values))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        self.validate()

    def validate(self):
        if self.n_anchors < 3:
            raise ConfigError("n_anchors must be >= 3")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.p_los_values:
            raise ConfigError("p_los_values must not be empty")
        if any(not 0.0 <= p <= 1.0 for p in self.p_los_values):
            raise ConfigError("p_los values must lie in [0, 1]")
        if len(set(self.p_los_values)) != len(self.p_los_values):
            raise ConfigError("duplicate p_los values")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATORS)}")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("duplicate estimator names")
        if not self.grid_step > 0 or not self.grid_margin >= 0:
            raise ConfigError("grid_step must be > 0 and grid_margin >= 0")
        if self.prior not in ("known", "equal"):
            raise ConfigError("prior must be 'known' or 'equal'")
        if self.point_estimate not in ("mean", "map"):
            raise ConfigError("point_estimate must be 'mean' or 'map'")


@dataclass
class ScenarioResult:
    """Per-trial errors and runtimes keyed by ``(estimator, p_los)``."""

    errors: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    def rmse(self, estimator, p_los) -> float:
        e = self.errors[(estimator, p_los)]
        return float(np.sqrt(np.mean(np.square(e))))

    def cdf(self, estimator, p_los):
        """Sorted errors and the empirical CDF ``k / n`` at each of them."""
        e = np.sort(self.errors[(estimator, p_los)])
        return e, np.arange(1, e.size + 1) / e.size

    def rmse_csv(self) -> str:
        lines = ["estimator,p_los,rmse_m,n_trials"]
        for (est, p), e in self.errors.items():
            lines.append(f"{est},{p!r},{self.rmse(est, p)!r},{len(e)}")
        return "\n".join(lines) + "\n"

    def cdf_csv(self) -> str:
        lines = ["estimator,p_los,error_m,cum_prob"]
        for est, p in self.errors:
            x, f = self.cdf(est, p)
            lines.extend(f"{est},{p!r},{float(a)!r},{float(b)!r}" for a, b in zip(x, f))
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        """Write ``rmse.csv`` and ``cdf.csv``; returns their paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for name, text in (("rmse.csv", self.rmse_csv()), ("cdf.csv", self.cdf_csv())):
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="ascii", newline="\n") as fh:
                fh.write(text)
            paths.append(path)
        return paths


def anchor_positions(distances) -> np.ndarray:
    """Anchor ``i`` at ``d_i * (sin(2 pi i / N), cos(2 pi i / N))``, ``i`` from 0."""
    d = np.asarray(distances, dtype=float)
    ang = 2.0 * np.pi * np.arange(d.size) / d.size
    return np.column_stack([d * np.sin(ang), d * np.cos(ang)])


def trial_rng(seed, p_index, trial) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(p_index), int(trial)])


def draw_links(p_los, n_anchors, los: LinkPool, nlos: LinkPool, rng):
    """Draw one pooled link per anchor and place the anchors around the origin."""
    picks = []
    for _ in range(n_anchors):
        use_los = rng.random() < p_los
        pool, name = (los, "LOS") if use_los else (nlos, "NLOS")
        if pool is None or len(pool) == 0:
            raise DataError(f"{name} pool is empty but p_los={p_los!r} requires {name} links")
        picks.append((pool, int(rng.integers(len(pool)))))
    pos = anchor_positions([pool.distance[j] for pool, j in picks])
    return [
        LinkInput(Anchor(pos[i]), float(pool.toa[j]), FeatureVector(*pool.features[j]))
        for i, (pool, j) in enumerate(picks)
    ]


def run_estimator(name, links, models: ModelSet | None, p_los, grid, cfg: ScenarioConfig):
    """Position estimate of one named estimator."""
    if name == "LS":
        return ls_estimate(links, grid)
    if models is None:
        raise DataError(f"estimator {name} needs fitted densities")
    f_los, f_nlos = models.pair(ESTIMATOR_FAMILY[name])
    weight = p_los if cfg.prior == "known" else 0.5
    if name in ITERATIVE:
        return corrected_ls_estimate(
            links, f_los, f_nlos, weight, grid=grid,
            max_iter=cfg.max_iter, tol=cfg.tol, point_estimate=cfg.point_estimate,
        )
    return ml_estimate(links, mix(f_los, f_nlos, weight), ML_MODES[name], models.di_params, grid)


def run_trial(cfg: ScenarioConfig, p_los, trial_index, rng, los: LinkPool, nlos: LinkPool, models=None):
    """Errors ``||theta_hat||`` (m) and runtimes (s) of every estimator for one trial."""
    links = draw_links(p_los, cfg.n_anchors, los, nlos, rng)
    grid = GridSpec.around([l.anchor for l in links], margin=cfg.grid_margin, step=cfg.grid_step)
    errors, times = {}, {}
    for name in cfg.estimators:
        t0 = time.perf_counter()
        est = run_estimator(name, links, models, p_los, grid, cfg)
        times[name] = time.perf_counter() - t0
        errors[name] = float(math.hypot(*est.theta_hat))
    return errors, times


_WORKER = {}


def _init_worker(cfg, los, nlos, models):
    _WORKER.update(cfg=cfg, los=los, nlos=nlos, models=models)


def _run_block(p_index, start, stop):
    w = _WORKER
    cfg = w["cfg"]
    p = cfg.p_los_values[p_index]
    out = []
    for t in range(start, stop):
        out.append(run_trial(cfg, p, t, trial_rng(cfg.rng_seed, p_index, t), w["los"], w["nlos"], w["models"]))
    return p_index, start, out


def run_sweep(cfg: ScenarioConfig, los: LinkPool, nlos: LinkPool, models: ModelSet | None = None,
              threads=1, block=25) -> ScenarioResult:
    """Run all ``(p_los, trial)`` pairs; ``threads > 1`` uses worker processes.

    Raises:
        DataError: a required pool is empty or densities are missing.
    """
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    tasks = [(k, s, min(s + block, cfg.trials)) for k in range(len(cfg.p_los_values)) for s in range(0, cfg.trials, block)]
    if threads == 1:
        _init_worker(cfg, los, nlos, models)
        try:
            blocks = [_run_block(*t) for t in tasks]
        finally:
            _WORKER.clear()
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(cfg, los, nlos, models)) as pool:
            futures = [pool.submit(_run_block, *t) for t in tasks]
            blocks = [f.result() for f in futures]

    blocks.sort(key=lambda b: (b[0], b[1]))
    result = ScenarioResult()
    for k, p in enumerate(cfg.p_los_values):
        trials = [tr for pk, _, out in blocks if pk == k for tr in out]
        for name in cfg.estimators:
            result.errors[(name, p)] = np.array([err[name] for err, _ in trials])
            result.runtime[(name, p)] = float(sum(tm[name] for _, tm in trials))
    return result
