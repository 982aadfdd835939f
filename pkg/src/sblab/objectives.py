"""Regression targets for the bridge networks and the maps back to step means.

Index conventions used throughout:

* ``k`` in the target and transform functions is the *transition* index,
  ``0 <= k <= N-1``, for the move between states ``x_k`` and ``x_{k+1}``.
  A backward network reads ``x_{k+1}`` and a forward network reads ``x_k``.
* A trajectory is an array whose second-to-last axis runs over the ``N+1``
  states, so a single path has shape ``(N+1, d)`` and a batch ``(n, N+1, d)``.
  When ``k`` is an array it selects one transition per path.
* ``direction`` names the network being trained: ``"backward"`` (prior to
  data, trained on forward trajectories) or ``"forward"`` (trained on
  backward trajectories).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .nn import Mlp, mlp_forward
from .schedule import GammaSchedule

DIRECTIONS = ("forward", "backward")


class ObjectiveKind(str, enum.Enum):
    DSB = "dsb"  # original DSB mean matching with partner-network offsets
    IPMM = "ipmm"
    IPTM = "iptm"
    IPFM = "ipfm"

    @property
    def needs_normalized_schedule(self) -> bool:
        return self in (ObjectiveKind.IPTM, ObjectiveKind.IPFM)

    @classmethod
    def parse(cls, value) -> "ObjectiveKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgument(f"unknown objective {value!r}") from None


@dataclass(frozen=True)
class PosteriorParams:
    mean: np.ndarray
    variance: float


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise InvalidArgument(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def _check_k(k, schedule_or_n):
    n = schedule_or_n.n_steps if isinstance(schedule_or_n, GammaSchedule) else int(schedule_or_n)
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr > n - 1):
        raise InvalidArgument(f"transition index outside [0, {n - 1}]")
    return k_arr


def _state(traj, idx):
    """Pick state ``idx`` from a path (N+1, d) or one state per path (n, N+1, d)."""
    traj = np.asarray(traj)
    idx = np.asarray(idx)
    if traj.ndim == 2:
        return traj[idx]
    if idx.ndim == 0:
        return traj[:, idx]
    return traj[np.arange(traj.shape[0]), idx]


def _col(v):
    # broadcast a per-path scalar against (n, d) states
    v = np.asarray(v, dtype=np.float64)
    return v[..., None] if v.ndim else v


def dsb_original_target(direction, k, x_k, x_k1, partner) -> np.ndarray:
    """Original DSB regression target; evaluates ``partner`` twice.

    backward: ``x_{k+1} + F(k, x_k) - F(k, x_{k+1})``
    forward:  ``x_k + B(k+1, x_{k+1}) - B(k+1, x_k)``
    """
    _check_direction(direction)
    x_k = np.asarray(x_k)
    x_k1 = np.asarray(x_k1)
    if x_k.shape != x_k1.shape:
        raise InvalidArgument("x_k and x_{k+1} must have the same shape")
    k = np.asarray(k)
    if direction == "backward":
        return x_k1 + partner(k, x_k) - partner(k, x_k1)
    return x_k + partner(k + 1, x_k1) - partner(k + 1, x_k)


def ipmm_target(direction, k, trajectory):
    """(input, target) for next-state mean matching."""
    _check_direction(direction)
    k = _check_k(k, np.asarray(trajectory).shape[-2] - 1)
    x_k = _state(trajectory, k)
    x_k1 = _state(trajectory, k + 1)
    if direction == "backward":
        return x_k1, x_k
    return x_k, x_k1


def iptm_target(direction, k, trajectory):
    """(input, target) for terminus matching: ``x_0`` backward, ``x_N`` forward."""
    _check_direction(direction)
    traj = np.asarray(trajectory)
    n = traj.shape[-2] - 1
    k = _check_k(k, n)
    if direction == "backward":
        return _state(traj, k + 1), _state(traj, np.zeros_like(k))
    return _state(traj, k), _state(traj, np.full_like(k, n))


def ipfm_target(direction, k, trajectory, schedule: GammaSchedule):
    """(input, target) for flow matching.

    backward: input ``x_{k+1}``, target ``(x_0 - x_{k+1}) / gbar_{k+1}``
    forward:  input ``x_k``,     target ``(x_N - x_k) / (1 - gbar_k)``
    """
    _check_direction(direction)
    k = _check_k(k, schedule)
    traj = np.asarray(trajectory)
    n = schedule.n_steps
    if traj.shape[-2] != n + 1:
        raise InvalidArgument("trajectory length does not match the schedule")
    if direction == "backward":
        denom = schedule.gamma_bars[k + 1]
        if np.any(denom <= 0):
            raise InvalidArgument("gamma_bar_{k+1} is zero")
        x_in = _state(traj, k + 1)
        return x_in, (_state(traj, np.zeros_like(k)) - x_in) / _col(denom)
    denom = 1.0 - schedule.gamma_bars[k]
    if np.any(denom <= 0):
        raise InvalidArgument("1 - gamma_bar_k is zero; schedule must be normalized")
    x_in = _state(traj, k)
    return x_in, (_state(traj, np.full_like(k, n)) - x_in) / _col(denom)


def _step_gamma(k, schedule):
    return schedule.gammas[np.asarray(k)]  # gamma_{k+1}


def _terminus_ratio(direction, k, schedule):
    g = _step_gamma(k, schedule)
    if direction == "backward":
        return g / schedule.gamma_bars[np.asarray(k) + 1]
    rest = 1.0 - schedule.gamma_bars[np.asarray(k)]
    if np.any(rest <= 0):
        raise InvalidArgument("1 - gamma_bar_k is zero; schedule must be normalized")
    return g / rest


def terminus_to_mean(direction, k, x, net_output, schedule: GammaSchedule):
    """Step mean from a predicted terminus.

    backward: ``x + gamma_{k+1}/gbar_{k+1} * (out - x)``
    forward:  ``x + gamma_{k+1}/(1 - gbar_k) * (out - x)``
    """
    _check_direction(direction)
    k = _check_k(k, schedule)
    x = np.asarray(x)
    return x + _col(_terminus_ratio(direction, k, schedule)) * (np.asarray(net_output) - x)


def flow_to_mean(direction, k, x, net_output, schedule: GammaSchedule):
    """Step mean ``x + gamma_{k+1} * out`` from a predicted flow vector."""
    _check_direction(direction)
    k = _check_k(k, schedule)
    return np.asarray(x) + _col(_step_gamma(k, schedule)) * np.asarray(net_output)


def posterior_params(direction, k, pinned_state, current_state, schedule: GammaSchedule) -> PosteriorParams:
    """Gaussian transition of the Brownian reference bridge pinned at one end.

    backward: law of ``x_k`` given ``(x_{k+1}=current, x_0=pinned)``
    forward:  law of ``x_{k+1}`` given ``(x_k=current, x_N=pinned)``

    The variance is the isotropic per-coordinate value.
    """
    _check_direction(direction)
    k = int(_check_k(k, schedule))
    g = schedule.gammas[k]
    bars = schedule.gamma_bars
    pinned = np.asarray(pinned_state, dtype=np.float64)
    cur = np.asarray(current_state, dtype=np.float64)
    if direction == "backward":
        if bars[k + 1] <= 0:
            raise InvalidArgument("gamma_bar_{k+1} is zero")
        mean = cur + g / bars[k + 1] * (pinned - cur)
        var = 2.0 * g * bars[k] / bars[k + 1]
    else:
        if 1.0 - bars[k] <= 0:
            raise InvalidArgument("1 - gamma_bar_k is zero")
        mean = cur + g / (1.0 - bars[k]) * (pinned - cur)
        var = 2.0 * g * max(1.0 - bars[k + 1], 0.0) / (1.0 - bars[k])
    return PosteriorParams(mean, float(var))


def regression_head(kind: ObjectiveKind, direction, k, schedule: GammaSchedule):
    """Scale ``s`` of the affine head ``q = x + s * out`` for an objective.

    ``q`` is the quantity the objective regresses (step mean for DSB/IPMM,
    terminus for IPTM). IPFM regresses ``out`` directly and returns ``None``.
    """
    kind = ObjectiveKind.parse(kind)
    k = np.asarray(k)
    if kind is ObjectiveKind.IPFM:
        return None
    if kind is ObjectiveKind.IPTM:
        if direction == "backward":
            return schedule.gamma_bars[k + 1]
        return 1.0 - schedule.gamma_bars[k]
    return schedule.gammas[k]


def output_space_target(kind, direction, k, x_in, target, schedule):
    """Convert an objective-space target into the network's output space.

    Returns ``(out_target, row_weights)`` such that the weighted MSE on the
    raw network output equals the objective's MSE on its own quantity.
    """
    s = regression_head(kind, direction, k, schedule)
    if s is None:
        return np.asarray(target), None
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (np.asarray(x_in).shape[0],))
    out_t = (np.asarray(target) - np.asarray(x_in)) / s[:, None]
    return out_t, s**2


class BridgeNet:
    """A trainable step-mean map built from an :class:`Mlp`.

    Called as ``bridge(s, x)`` with ``s`` the index of the *current* state,
    it returns the mean of the next state: ``x_{s-1}`` for a backward net
    (``1 <= s <= N``) and ``x_{s+1}`` for a forward net (``0 <= s <= N-1``).
    Every objective shares the head ``mean = x + gamma * out``; IPTM reads
    ``out`` through the terminus ``x + s_k * out`` and :func:`terminus_to_mean`,
    which reduces to the same mean, so weights trained or initialised under
    one objective are meaningful under the others.

    With ``reverse_time`` the Mlp is queried at ``N - s`` instead of ``s``.
    """

    def __init__(self, net: Mlp, kind, direction: str, schedule: GammaSchedule, reverse_time: bool = False):
        _check_direction(direction)
        if net.n_steps != schedule.n_steps:
            raise InvalidArgument("network step count does not match the schedule")
        self.net = net
        self.kind = ObjectiveKind.parse(kind)
        self.direction = direction
        self.schedule = schedule
        self.reverse_time = bool(reverse_time)

    def transition(self, s):
        s = np.asarray(s)
        return s - 1 if self.direction == "backward" else s

    def net_time(self, s):
        s = np.asarray(s)
        return self.schedule.n_steps - s if self.reverse_time else s

    def output(self, s, x):
        return mlp_forward(self.net, self.net_time(s), x)

    def __call__(self, s, x):
        k = self.transition(s)
        x = np.asarray(x)
        out = self.output(s, x)
        if self.kind is ObjectiveKind.IPTM:
            scale = regression_head(self.kind, self.direction, k, self.schedule)
            return terminus_to_mean(self.direction, k, x, x + _col(scale) * out, self.schedule)
        return flow_to_mean(self.direction, k, x, out, self.schedule)

    def copy(self) -> "BridgeNet":
        return BridgeNet(self.net.copy(), self.kind, self.direction, self.schedule, self.reverse_time)

    def __repr__(self):
        return (
            f"BridgeNet({self.kind.value}, {self.direction}, N={self.schedule.n_steps}, "
            f"reverse_time={self.reverse_time})"
        )
