"""Alternating IPF training of the forward and backward bridge networks.

Half-epochs are numbered from 1. Odd half-epochs train the forward network
on backward trajectories; even half-epochs train the backward network on
forward trajectories. Every random draw in half-epoch ``h`` comes from a
generator seeded by ``(seed, h)``, and the optimizer state is rebuilt at the
start of each half-epoch, so a run resumed from the half-epoch checkpoints
continues exactly as the uninterrupted run would.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .chain import reference_mean, sample_backward, sample_forward, subsample_pairs
from .checkpoint import load_checkpoint, save_bridge
from .errors import DivergenceError, InvalidArgument, NumericError
from .nn import AdamState, adam_step, ema_update, init_mlp, mse_grad
from .objectives import BridgeNet, ObjectiveKind, output_space_target
from .oracle import averaged_kl_from_states, marginal_gap_from_samples
from .schedule import GammaSchedule

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["half_epoch", "loss", "gap_fwd", "gap_bwd", "avg_kl", "nfe", "seconds"]
INIT_MODES = ("random", "backward-only", "dual")

_STREAM_INIT, _STREAM_TRAIN, _STREAM_EVAL = 0, 1, 2


@dataclass
class TrainConfig:
    n_epochs: int = 5  # L: number of (forward, backward) half-epoch pairs
    steps_per_half_epoch: int = 5000
    batch_size: int = 128
    lr: float = 1e-4
    cache_size: int = 10_000
    cache_refresh_interval: int = 1000
    objective: ObjectiveKind = ObjectiveKind.IPFM
    init_mode: str = "random"
    seed: int = 0
    arch: dict = field(default_factory=lambda: {"hidden": 128, "n_layers": 10, "embed_dim": 16, "activation": "silu"})
    eval_paths: int = 4000
    n_eval_times: int = 9
    early_stop: bool = False
    ema_decay: float | None = None

    def __post_init__(self):
        self.objective = ObjectiveKind.parse(self.objective)
        for name in ("steps_per_half_epoch", "batch_size", "cache_size", "cache_refresh_interval", "eval_paths"):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.n_epochs < 0:
            raise InvalidArgument("n_epochs must be >= 0")
        if not self.lr > 0:
            raise InvalidArgument("lr must be > 0")
        if self.init_mode not in INIT_MODES:
            raise InvalidArgument(f"init_mode must be one of {INIT_MODES}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["objective"] = ObjectiveKind.parse(self.objective).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class HalfEpochRecord:
    half_epoch: int
    loss: float
    gap_fwd: float
    gap_bwd: float
    avg_kl: float
    nfe: int
    seconds: float
    trained: str = ""
    steps: int = 0

    def row(self) -> list:
        return [self.half_epoch, self.loss, self.gap_fwd, self.gap_bwd, self.avg_kl, self.nfe, self.seconds]


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def trained_gap(self) -> np.ndarray:
        """Endpoint gap of the network trained in each half-epoch."""
        return np.array([r.gap_fwd if r.trained == "F" else r.gap_bwd for r in self.records])

    def __len__(self):
        return len(self.records)


@dataclass
class TrainResult:
    forward: BridgeNet
    backward: BridgeNet
    metrics: RunMetrics
    backward_is_reference: bool = False

    @property
    def backward_mean(self):
        return reference_mean() if self.backward_is_reference else self.backward


class CountingMean:
    """Wraps a step-mean map and counts evaluated rows."""

    def __init__(self, fn):
        self.fn = fn
        self.rows = 0

    def __call__(self, k, x):
        self.rows += np.asarray(x).shape[0]
        return self.fn(k, x)


def nfe_counter(kind) -> int:
    """Partner evaluations needed to build one regression target."""
    return 2 if ObjectiveKind.parse(kind) is ObjectiveKind.DSB else 1


def _rng(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def marginal_gap(mean_fn, schedule: GammaSchedule, endpoint_sampler, reference_sampler, n_paths: int,
                 rng, direction: str = "forward") -> float:
    """Symmetric KL between Gaussian fits of chain termini and reference draws.

    ``direction="forward"`` runs ``mean_fn`` from ``endpoint_sampler`` at
    index 0 to index N; ``"backward"`` runs from index N to 0.
    """
    if n_paths < 100:
        raise InvalidArgument("n_paths must be >= 100")
    x = endpoint_sampler.draw(n_paths, rng)
    if direction == "forward":
        terminal = sample_forward(mean_fn, schedule, x, rng).states[:, -1]
    else:
        terminal = sample_backward(mean_fn, schedule, x, rng).states[:, 0]
    return marginal_gap_from_samples(terminal, reference_sampler.draw(n_paths, rng))


class IpfTrainer:
    """Stateful driver behind :func:`train_ipf`."""

    def __init__(self, config: TrainConfig, data_sampler, prior_sampler, schedule: GammaSchedule,
                 init_backward=None, init_forward=None, run_dir=None, oracle_a=None):
        self.config = config
        self.data = data_sampler
        self.prior = prior_sampler
        self.schedule = schedule
        self.run_dir = run_dir
        self.oracle_a = None if oracle_a is None else np.atleast_1d(np.asarray(oracle_a, dtype=float))
        kind = config.objective
        if kind.needs_normalized_schedule and not schedule.is_normalized:
            raise InvalidArgument(f"{kind.value} requires a normalized schedule")
        if config.init_mode == "random" and (init_backward is not None or init_forward is not None):
            raise InvalidArgument("init_mode 'random' does not take initial networks")
        if config.init_mode in ("backward-only", "dual") and init_backward is None:
            raise InvalidArgument(f"init_mode {config.init_mode!r} needs a backward initial network")
        if config.init_mode == "dual" and init_forward is None:
            raise InvalidArgument("init_mode 'dual' needs a forward initial network")
        for net, want in ((init_backward, "backward"), (init_forward, "forward")):
            if net is not None:
                if net.direction != want:
                    raise InvalidArgument(f"initial {want} network has direction {net.direction}")
                if net.schedule.hash() != schedule.hash():
                    raise InvalidArgument("initial network schedule does not match the run schedule")

        rng = _rng(config.seed, _STREAM_INIT)
        d = data_sampler.d
        if init_forward is not None:
            self.forward = BridgeNet(init_forward.net.copy(), kind, "forward", schedule, init_forward.reverse_time)
        else:
            self.forward = BridgeNet(init_mlp(d, schedule.n_steps, _rng(config.seed, _STREAM_INIT, 1), **config.arch),
                                     kind, "forward", schedule)
        if init_backward is not None:
            self.backward = BridgeNet(init_backward.net.copy(), kind, "backward", schedule, init_backward.reverse_time)
        else:
            self.backward = BridgeNet(init_mlp(d, schedule.n_steps, _rng(config.seed, _STREAM_INIT, 2), **config.arch),
                                      kind, "backward", schedule)
        del rng
        self.backward_is_reference = init_backward is None
        self.metrics = RunMetrics()
        self.completed = 0
        self.nfe_targets = 0
        self.n_targets = 0

    # -- persistence ---------------------------------------------------------

    def _paths(self, h):
        return (os.path.join(self.run_dir, f"half_{h}_F.sbck"), os.path.join(self.run_dir, f"half_{h}_B.sbck"))

    def save(self):
        if self.run_dir is None:
            return
        os.makedirs(self.run_dir, exist_ok=True)
        f_path, b_path = self._paths(self.completed)
        save_bridge(f_path, self.forward, self.config.seed)
        save_bridge(b_path, self.backward, self.config.seed)
        with open(os.path.join(self.run_dir, "state.json"), "w") as fh:
            json.dump({
                "completed_half_epochs": self.completed,
                "backward_is_reference": self.backward_is_reference,
                "config_hash": self.config.hash(),
                "schedule_hash": self.schedule.hash(),
                "nfe_targets": self.nfe_targets,
                "n_targets": self.n_targets,
            }, fh, indent=2, sort_keys=True)
        self.write_metrics()

    def write_metrics(self):
        path = os.path.join(self.run_dir, "metrics.csv")
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_hash={self.config.hash()}\n")
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS)
            for r in self.metrics.records:
                w.writerow([r.half_epoch] + [repr(float(v)) for v in r.row()[1:5]] + [r.nfe, f"{r.seconds:.3f}"])

    def restore(self):
        """Load the latest completed half-epoch from ``run_dir``."""
        with open(os.path.join(self.run_dir, "state.json")) as fh:
            state = json.load(fh)
        if state["config_hash"] != self.config.hash() or state["schedule_hash"] != self.schedule.hash():
            raise InvalidArgument("run directory was produced by a different config or schedule")
        self.completed = int(state["completed_half_epochs"])
        self.backward_is_reference = bool(state["backward_is_reference"])
        self.nfe_targets = int(state.get("nfe_targets", 0))
        self.n_targets = int(state.get("n_targets", 0))
        if self.completed:
            f_path, b_path = self._paths(self.completed)
            self.forward = load_checkpoint(f_path).bridge()
            self.backward = load_checkpoint(b_path).bridge()
        self.metrics = RunMetrics(read_metrics(os.path.join(self.run_dir, "metrics.csv")))

    # -- training --------------------------------------------------------------

    def _sampling_mean(self, direction):
        if direction == "backward":
            return reference_mean() if self.backward_is_reference else self.backward
        return self.forward

    def _train_half(self, h: int):
        cfg = self.config
        kind = cfg.objective
        if h % 2 == 1:
            trainee, direction = self.forward, "forward"
            partner = CountingMean(self._sampling_mean("backward"))
        else:
            trainee, direction = self.backward, "backward"
            partner = CountingMean(self.forward)
        rng = _rng(cfg.seed, _STREAM_TRAIN, h)
        snapshot = trainee.net.copy()
        ema = trainee.net.copy() if cfg.ema_decay else None
        state = AdamState.for_params(trainee.net.params)
        losses = []
        cache = None
        nfe = 0
        per_transition = 0
        for step in range(cfg.steps_per_half_epoch):
            if step % cfg.cache_refresh_interval == 0:
                before = partner.rows
                if direction == "forward":
                    cache = sample_backward(partner, self.schedule, self.prior.draw(cfg.cache_size, rng), rng)
                else:
                    cache = sample_forward(partner, self.schedule, self.data.draw(cfg.cache_size, rng), rng)
                n_transitions = cfg.cache_size * self.schedule.n_steps
                per_transition, rem = divmod(partner.rows - before, n_transitions)
                if rem:
                    raise NumericError("partner evaluations do not match the simulated transitions")
            before = partner.rows
            batch = subsample_pairs(cache, kind, direction, self.schedule, rng, cfg.batch_size, partner=partner)
            if kind is ObjectiveKind.DSB:
                # partner evaluated at both ends of each pair while building the target
                nfe += partner.rows - before
            else:
                # the target is a cached state; charge the evaluations that simulated its transition
                nfe += cfg.batch_size * per_transition
            k = trainee.transition(batch.steps)
            out_t, w = output_space_target(kind, direction, k, batch.inputs, batch.targets, self.schedule)
            try:
                loss, grads = mse_grad(trainee.net, trainee.net_time(batch.steps), batch.inputs, out_t, w)
                if not np.isfinite(loss):
                    raise NumericError("non-finite loss")
                adam_step(trainee.net.params, grads, state, cfg.lr)
            except NumericError as exc:
                trainee.net = snapshot
                path = None
                if self.run_dir is not None:
                    path = self._paths(self.completed)
                raise DivergenceError(f"half-epoch {h} diverged at step {step}: {exc}", path) from exc
            if ema is not None:
                ema_update(ema, trainee.net, cfg.ema_decay)
            losses.append(loss)
            if cfg.early_stop and _plateau(losses):
                break
        if ema is not None:
            trainee.net = ema
        if direction == "backward":
            self.backward_is_reference = False
        self.nfe_targets += nfe
        self.n_targets += len(losses) * cfg.batch_size
        return float(np.mean(losses)), nfe, len(losses)

    def _evaluate(self, h: int):
        cfg = self.config
        rng = _rng(cfg.seed, _STREAM_EVAL)
        n = cfg.eval_paths
        fwd = sample_forward(self.forward, self.schedule, self.data.draw(n, rng), rng)
        bwd = sample_backward(self._sampling_mean("backward"), self.schedule, self.prior.draw(n, rng), rng)
        gap_fwd = marginal_gap_from_samples(fwd.states[:, -1], self.prior.draw(n, rng))
        gap_bwd = marginal_gap_from_samples(bwd.states[:, 0], self.data.draw(n, rng))
        avg_kl = float("nan")
        if self.oracle_a is not None:
            states = fwd.states if h % 2 == 1 else bwd.states
            avg_kl = averaged_kl_from_states(states, self.schedule, self.oracle_a, 2.0 * self.schedule.total,
                                             cfg.n_eval_times)
        return gap_fwd, gap_bwd, avg_kl

    def run(self, stop_after: int | None = None) -> TrainResult:
        total = 2 * self.config.n_epochs
        if self.completed == 0 and self.run_dir is not None:
            self.save()
        while self.completed < total:
            if stop_after is not None and self.completed >= stop_after:
                break
            h = self.completed + 1
            t0 = time.perf_counter()
            loss, nfe, steps = self._train_half(h)
            gap_fwd, gap_bwd, avg_kl = self._evaluate(h)
            rec = HalfEpochRecord(h, loss, gap_fwd, gap_bwd, avg_kl, nfe, time.perf_counter() - t0,
                                  "F" if h % 2 == 1 else "B", steps)
            self.metrics.records.append(rec)
            self.completed = h
            log.info("half-epoch %d (%s): loss=%.4g gap_fwd=%.4g gap_bwd=%.4g avg_kl=%.4g",
                     h, rec.trained, loss, gap_fwd, gap_bwd, avg_kl)
            self.save()
        return TrainResult(self.forward, self.backward, self.metrics, self.backward_is_reference)


def _plateau(losses, window=500, tol=1e-4):
    if len(losses) < 2 * window or len(losses) % window:
        return False
    prev = np.mean(losses[-2 * window:-window])
    cur = np.mean(losses[-window:])
    return (prev - cur) / max(abs(prev), 1e-12) < tol


def read_metrics(path) -> list:
    records = []
    if not os.path.exists(path):
        return records
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    for r in rows:
        h = int(r["half_epoch"])
        records.append(HalfEpochRecord(h, float(r["loss"]), float(r["gap_fwd"]), float(r["gap_bwd"]),
                                       float(r["avg_kl"]), int(r["nfe"]), float(r["seconds"]),
                                       "F" if h % 2 == 1 else "B"))
    return records


def train_ipf(config: TrainConfig, data_sampler, prior_sampler, schedule: GammaSchedule,
              init_backward=None, init_forward=None, run_dir=None, oracle_a=None,
              resume: bool = False, stop_after: int | None = None) -> TrainResult:
    """Run ``config.n_epochs`` forward/backward half-epoch pairs.

    ``init_backward`` / ``init_forward`` are :class:`BridgeNet` objects (for
    example from :func:`sblab.sgm_init.wrap_backward_init`); without a
    backward initialisation the first forward half-epoch trains on the
    Brownian reference. ``oracle_a`` enables the averaged-KL metric for the
    N(a, I) / N(-a, I) problem. With ``resume`` the run continues from the
    last checkpoint in ``run_dir``; ``stop_after`` halts after that many
    completed half-epochs.
    """
    trainer = IpfTrainer(config, data_sampler, prior_sampler, schedule, init_backward, init_forward,
                         run_dir, oracle_a)
    if resume:
        if run_dir is None:
            raise InvalidArgument("resume needs a run directory")
        trainer.restore()
    return trainer.run(stop_after=stop_after)
