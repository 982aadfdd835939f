"""The shifted-Gaussian comparison of objectives and initialisations.

Runs IPFM and the original DSB objective, each from random weights and from
pre-trained flow models, on N(a, I) -> N(-a, I) with a shared training budget
and reports the averaged KL of the final backward sampler per seed.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import gaussian_pair
from .objectives import ObjectiveKind
from .schedule import GammaSchedule, default_schedule
from .sgm_init import pretrain_flow_sgm, wrap_backward_init, wrap_forward_init
from .trainer import RunMetrics, TrainConfig, train_ipf

log = logging.getLogger(__name__)

SMALL_ARCH = {"hidden": 64, "n_layers": 4, "embed_dim": 16, "activation": "silu"}


@dataclass
class TrendConfig:
    d: int = 2
    a: float = 1.0
    seeds: tuple = (0, 1, 2)
    n_epochs: int = 2
    steps_per_half_epoch: int = 1500
    batch_size: int = 128
    lr: float = 1e-4
    cache_size: int = 10_000
    cache_refresh_interval: int = 1000
    eval_paths: int = 20_000
    pretrain_steps: int = 4000
    pretrain_lr: float = 1e-3
    arch: dict = field(default_factory=lambda: dict(SMALL_ARCH))

    def train_config(self, kind, init_mode, seed) -> TrainConfig:
        return TrainConfig(
            n_epochs=self.n_epochs, steps_per_half_epoch=self.steps_per_half_epoch, batch_size=self.batch_size,
            lr=self.lr, cache_size=self.cache_size, cache_refresh_interval=self.cache_refresh_interval,
            objective=kind, init_mode=init_mode, seed=seed, arch=dict(self.arch), eval_paths=self.eval_paths,
        )


@dataclass
class TrendResult:
    config: TrendConfig
    runs: dict  # (objective, init_mode) -> list of RunMetrics, one per seed
    seconds: float = 0.0

    def final_kl(self, kind, init) -> np.ndarray:
        return np.array([m.column("avg_kl")[-1] for m in self.runs[(kind, init)]])

    def median_kl(self, kind, init) -> float:
        return float(np.median(self.final_kl(kind, init)))

    def median_gap_sequence(self, kind="ipfm", init="random") -> np.ndarray:
        """Per half-epoch median over seeds of the trained network's endpoint gap."""
        return np.median(np.stack([m.trained_gap() for m in self.runs[(kind, init)]]), axis=0)

    def summary(self) -> dict:
        return {f"{k}/{i}": self.final_kl(k, i).tolist() for k, i in self.runs}


def run_trend_experiment(cfg: TrendConfig | None = None, schedule: GammaSchedule | None = None,
                         kinds=("ipfm", "dsb"), inits=("random", "dual")) -> TrendResult:
    cfg = cfg or TrendConfig()
    schedule = schedule or default_schedule()
    a = np.full(cfg.d, cfg.a)
    runs = {(k, i): [] for k in kinds for i in inits}
    t0 = time.perf_counter()
    for seed in cfg.seeds:
        data, prior = gaussian_pair(cfg.d, cfg.a, seed=100 * seed)
        sgms = None
        if any(i != "random" for i in inits):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
            m1 = pretrain_flow_sgm(data, prior, schedule, cfg.pretrain_steps, rng, "backward",
                                   lr=cfg.pretrain_lr, arch=cfg.arch, seed=seed)
            m2 = pretrain_flow_sgm(prior, data, schedule, cfg.pretrain_steps, rng, "forward",
                                   lr=cfg.pretrain_lr, arch=cfg.arch, seed=seed)
            sgms = (m1, m2)
        for kind in kinds:
            kind = ObjectiveKind.parse(kind)
            for init in inits:
                init_b = init_f = None
                if init in ("backward-only", "dual"):
                    init_b = wrap_backward_init(sgms[0], schedule, kind)
                if init == "dual":
                    init_f = wrap_forward_init(sgms[1], schedule, kind)
                res = train_ipf(cfg.train_config(kind, init, seed), data, prior, schedule, init_b, init_f,
                                oracle_a=a)
                runs[(kind.value, init)].append(res.metrics)
                log.info("seed %d %s/%s: avg_kl %s", seed, kind.value, init, res.metrics.column("avg_kl"))
    return TrendResult(cfg, runs, time.perf_counter() - t0)


def metrics_table(metrics: RunMetrics) -> list:
    return [dataclasses.asdict(r) for r in metrics.records]
