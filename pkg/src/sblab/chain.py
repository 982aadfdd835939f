"""Forward and backward Markov-chain sampling and training-tuple extraction."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import objectives as obj
from .errors import InvalidArgument
from .objectives import ObjectiveKind
from .schedule import GammaSchedule

MeanFn = Callable[[object, np.ndarray], np.ndarray]


@dataclass
class Trajectories:
    """A batch of sampled paths.

    ``states[j, k]`` is state ``x_k`` of path ``j``; the array always runs
    from ``k = 0`` (data side) to ``k = N`` (prior side) regardless of the
    direction in which the paths were simulated.
    """

    states: np.ndarray
    direction: str
    seed: int | None = None
    n_diverged: int = 0

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def __len__(self):
        return self.n_paths


def reference_mean(kind: str = "brownian") -> MeanFn:
    """Zero-drift reference: ``(k, x) -> x``."""
    if kind != "brownian":
        raise InvalidArgument(f"unknown reference kind {kind!r}")
    return _identity_mean


def _identity_mean(k, x):
    return np.asarray(x)


def _as_rng(rng):
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng)), int(rng)
    return rng, None


def _drop_diverged(states, direction, seed):
    ok = np.all(np.isfinite(states), axis=(1, 2))
    n_bad = int(states.shape[0] - ok.sum())
    if n_bad:
        warnings.warn(f"{n_bad} {direction} trajectories diverged and were dropped", RuntimeWarning)
        states = states[ok]
    return Trajectories(states, direction, seed, n_bad)


def sample_forward(mean_fn: MeanFn, schedule: GammaSchedule, x0, rng,
                   posterior_noise: bool = False, dtype=np.float32) -> Trajectories:
    """Simulate ``x_{k+1} = mean_fn(k, x_k) + sqrt(2 gamma_{k+1}) z`` from ``x0``.

    ``rng`` is a Generator or an integer seed (recorded on the result).

    With ``posterior_noise`` the step variance is the pinned-bridge value
    ``2 gamma_{k+1} (1 - gbar_{k+1}) / (1 - gbar_k)`` instead.
    """
    rng, seed = _as_rng(rng)
    x0 = np.asarray(x0)
    if x0.ndim != 2:
        raise InvalidArgument("x0 must have shape (n, d)")
    n, d = x0.shape
    N = schedule.n_steps
    states = np.empty((n, N + 1, d), dtype=dtype)
    states[:, 0] = x0
    bars = schedule.gamma_bars
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            var = 2.0 * schedule.gammas[k]
            if posterior_noise:
                var = var * max(1.0 - bars[k + 1], 0.0) / (1.0 - bars[k])
            mean = mean_fn(k, states[:, k])
            states[:, k + 1] = mean + np.sqrt(var) * rng.standard_normal((n, d))
    return _drop_diverged(states, "forward", seed)


def sample_backward(mean_fn: MeanFn, schedule: GammaSchedule, xN, rng,
                    posterior_noise: bool = False, dtype=np.float32) -> Trajectories:
    """Simulate ``x_{k-1} = mean_fn(k, x_k) + sqrt(2 gamma_k) z`` from ``xN``.

    With ``posterior_noise`` the step variance is ``2 gamma_k gbar_{k-1} / gbar_k``.
    """
    rng, seed = _as_rng(rng)
    xN = np.asarray(xN)
    if xN.ndim != 2:
        raise InvalidArgument("xN must have shape (n, d)")
    n, d = xN.shape
    N = schedule.n_steps
    states = np.empty((n, N + 1, d), dtype=dtype)
    states[:, N] = xN
    bars = schedule.gamma_bars
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N, 0, -1):
            var = 2.0 * schedule.gammas[k - 1]
            if posterior_noise:
                var = var * bars[k - 1] / bars[k]
            mean = mean_fn(k, states[:, k])
            states[:, k - 1] = mean + np.sqrt(var) * rng.standard_normal((n, d))
    return _drop_diverged(states, "backward", seed)


class TrainingBatch(NamedTuple):
    """Regression tuples for one optimizer step.

    ``steps`` holds the index of the input state (``k+1`` for a backward
    net, ``k`` for a forward net), i.e. the step argument of the network.
    """

    steps: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray


def subsample_pairs(trajs: Trajectories, kind, direction: str, schedule: GammaSchedule,
                    rng: np.random.Generator, batch_size: int, partner: MeanFn | None = None) -> TrainingBatch:
    """Draw ``batch_size`` (path, transition) pairs uniformly and build targets.

    A backward network must be trained on forward trajectories and vice
    versa. The original DSB target needs ``partner``, the opposite-direction
    step-mean map.
    """
    kind = ObjectiveKind.parse(kind)
    expected = "forward" if direction == "backward" else "backward"
    if direction not in obj.DIRECTIONS:
        raise InvalidArgument(f"bad direction {direction!r}")
    if trajs.direction != expected:
        raise InvalidArgument(f"a {direction} network trains on {expected} trajectories")
    if trajs.n_paths == 0:
        raise InvalidArgument("empty trajectory batch")
    if trajs.n_steps != schedule.n_steps:
        raise InvalidArgument("trajectory length does not match the schedule")
    paths = rng.integers(0, trajs.n_paths, batch_size)
    k = rng.integers(0, schedule.n_steps, batch_size)
    sub = trajs.states[paths]
    if kind is ObjectiveKind.IPMM:
        x_in, target = obj.ipmm_target(direction, k, sub)
    elif kind is ObjectiveKind.IPTM:
        x_in, target = obj.iptm_target(direction, k, sub)
    elif kind is ObjectiveKind.IPFM:
        x_in, target = obj.ipfm_target(direction, k, sub, schedule)
    else:
        if partner is None:
            raise InvalidArgument("the original DSB target needs a partner network")
        x_k, x_k1 = sub[np.arange(batch_size), k], sub[np.arange(batch_size), k + 1]
        target = obj.dsb_original_target(direction, k, x_k, x_k1, partner)
        x_in = x_k1 if direction == "backward" else x_k
    steps = k + 1 if direction == "backward" else k
    return TrainingBatch(steps, np.asarray(x_in), np.asarray(target))


def write_trajectories_csv(path, trajs: Trajectories, schedule: GammaSchedule, config_hash: str | None = None):
    """Write ``path_id,k,x_0,...`` rows plus a ``<path>.json`` sidecar."""
    d = trajs.dim
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["path_id", "k"] + [f"x_{i}" for i in range(d)])
        for j in range(trajs.n_paths):
            for k in range(trajs.n_steps + 1):
                w.writerow([j, k] + [repr(float(v)) for v in trajs.states[j, k]])
    meta = {
        "direction": trajs.direction,
        "seed": trajs.seed,
        "schedule_hash": schedule.hash(),
        "n_paths": trajs.n_paths,
        "n_steps": trajs.n_steps,
        "dim": d,
        "n_diverged": trajs.n_diverged,
    }
    if config_hash:
        meta["config_hash"] = config_hash
    with open(f"{path}.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_trajectories_csv(path) -> np.ndarray:
    """Read a trajectory CSV back into an array of shape (paths, N+1, d).

    An empty file (or header only) gives an array with zero paths.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows:
        return np.zeros((0, 0, 0))
    header, body = rows[0], rows[1:]
    if header[:2] != ["path_id", "k"]:
        raise InvalidArgument(f"{path}: malformed header {header}")
    d = len(header) - 2
    if not body:
        return np.zeros((0, 0, d))
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise InvalidArgument(f"{path}: malformed row ({exc})") from None
    if arr.shape[1] != d + 2:
        raise InvalidArgument(f"{path}: ragged rows")
    ids = arr[:, 0].astype(int)
    ks = arr[:, 1].astype(int)
    n_paths, n_states = ids.max() + 1, ks.max() + 1
    out = np.full((n_paths, n_states, d), np.nan)
    out[ids, ks] = arr[:, 2:]
    return out
