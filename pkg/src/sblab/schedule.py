"""Discrete noise schedules.

A schedule holds the per-step noise levels ``gammas[0..N-1]`` (mathematically
gamma_1..gamma_N) and their prefix sums ``gamma_bars[0..N]`` with
``gamma_bars[0] == 0``.  Step ``k -> k+1`` of the reference chain adds
Gaussian noise of variance ``2 * gamma_{k+1}``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True, eq=False)
class GammaSchedule:
    gammas: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=np.float64).copy()
        if g.ndim != 1 or g.size == 0:
            raise InvalidArgument("gammas must be a non-empty 1-D array")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise InvalidArgument("every gamma must be finite and > 0")
        g.setflags(write=False)
        object.__setattr__(self, "gammas", g)
        bars = np.concatenate([[0.0], np.cumsum(g)])
        bars.setflags(write=False)
        object.__setattr__(self, "gamma_bars", bars)

    @property
    def n_steps(self) -> int:
        return self.gammas.size

    @property
    def total(self) -> float:
        return float(self.gamma_bars[-1])

    @property
    def is_normalized(self) -> bool:
        return abs(self.total - 1.0) < 1e-12

    def gamma(self, k: int) -> float:
        """gamma_k for 1 <= k <= N (1-based, matching the chain notation)."""
        if not 1 <= k <= self.n_steps:
            raise InvalidArgument(f"gamma index {k} outside [1, {self.n_steps}]")
        return float(self.gammas[k - 1])

    def normalized(self) -> "GammaSchedule":
        g = self.gammas / self.gammas.sum()
        return GammaSchedule(g, kind=self.kind)

    def reversed(self) -> "GammaSchedule":
        return GammaSchedule(self.gammas[::-1], kind=self.kind)

    def to_config(self) -> dict:
        return {"type": self.kind, "n": self.n_steps, "gammas": self.gammas.tolist()}

    def hash(self) -> str:
        """Stable 16-hex-digit fingerprint of (N, gammas)."""
        h = hashlib.sha256()
        h.update(np.uint32(self.n_steps).tobytes())
        h.update(self.gammas.astype("<f8").tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, GammaSchedule):
            return NotImplemented
        return np.array_equal(self.gammas, other.gammas)

    def __hash__(self):
        return hash(self.hash())

    def __repr__(self):
        return f"GammaSchedule(kind={self.kind!r}, N={self.n_steps}, total={self.total:.6g})"


def make_constant_schedule(n: int, gamma: float, normalize: bool = False) -> GammaSchedule:
    if n < 1:
        raise InvalidArgument("N must be >= 1")
    if not gamma > 0:
        raise InvalidArgument("gamma must be > 0")
    g = np.full(n, float(gamma))
    if normalize:
        g = np.full(n, 1.0 / n)
    return GammaSchedule(g, kind="constant")


def make_symmetric_schedule(
    n: int, gamma_min: float, gamma_max: float, normalize: bool = False
) -> GammaSchedule:
    """Triangular profile rising linearly from ``gamma_min`` to ``gamma_max``
    at the middle and falling back, so that gamma_k == gamma_{N+1-k}.

    For even ``N`` the two middle steps share the peak value.
    """
    if n < 2:
        raise InvalidArgument("symmetric schedule needs N >= 2")
    if not 0 < gamma_min <= gamma_max:
        raise InvalidArgument("need 0 < gamma_min <= gamma_max")
    half = (n + 1) // 2
    if half == 1:
        rise = np.array([gamma_max])
    else:
        rise = np.linspace(gamma_min, gamma_max, half)
    g = np.concatenate([rise, rise[: n - half][::-1]])
    if normalize:
        g = g / g.sum()
    return GammaSchedule(g, kind="symmetric")


def gamma_bar(schedule: GammaSchedule, k: int) -> float:
    if not 0 <= k <= schedule.n_steps:
        raise InvalidArgument(f"k={k} outside [0, {schedule.n_steps}]")
    return float(schedule.gamma_bars[k])


def schedule_from_config(cfg: dict) -> GammaSchedule:
    """Build a schedule from ``{type, n, gamma_min, gamma_max, normalize}``."""
    kind = cfg.get("type", "symmetric")
    n = int(cfg.get("n", 20))
    normalize = bool(cfg.get("normalize", True))
    if kind == "constant":
        return make_constant_schedule(n, float(cfg.get("gamma", cfg.get("gamma_min", 1.0 / n))), normalize)
    if kind == "symmetric":
        gmin = float(cfg.get("gamma_min", 1.0))
        gmax = float(cfg.get("gamma_max", 10.0 * gmin))
        return make_symmetric_schedule(n, gmin, gmax, normalize)
    raise InvalidArgument(f"unknown schedule type {kind!r}")


def default_schedule() -> GammaSchedule:
    """N=20 symmetric profile with gamma_max / gamma_min = 10, normalized."""
    return make_symmetric_schedule(20, 1.0, 10.0, normalize=True)
