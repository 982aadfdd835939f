"""Flow-matching pre-training and its use as bridge initialisation.

A data-directed model is trained on the deterministic interpolant
``x_k = (1 - gbar_k) x_data + gbar_k x_prior`` to predict ``x_data - x_prior``.
Along that line ``x_{k-1} = x_k + gamma_k (x_data - x_prior)``, so
``x + gamma_k m(k, x)`` is a backward step mean that is exact on the
interpolant.  The prior-directed model mirrors this on the reversed clock and
is queried at ``N - k`` when it drives the forward chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import InvalidArgument
from .nn import AdamState, Mlp, adam_step, init_mlp, mse_grad
from .objectives import BridgeNet, ObjectiveKind
from .schedule import GammaSchedule


@dataclass
class PretrainedSgm:
    """A trained flow regressor.

    ``direction`` is the bridge network it can initialise: ``"backward"``
    (data-directed, predicts ``x_data - x_prior``) or ``"forward"``
    (prior-directed, predicts ``x_prior - x_data`` on the reversed clock).
    """

    net: Mlp
    direction: str
    schedule_hash: str
    interpolant: str = "linear"
    losses: list = field(default_factory=list)
    seed: int = 0

    def to_checkpoint(self, schedule: GammaSchedule) -> Checkpoint:
        if schedule.hash() != self.schedule_hash:
            raise InvalidArgument("schedule does not match the one the model was trained against")
        return Checkpoint(self.net, schedule, self.seed, self.direction, ObjectiveKind.IPFM,
                          reverse_time=self.direction == "forward", pretrained=True)

    def save(self, path, schedule: GammaSchedule):
        save_checkpoint(path, self.to_checkpoint(schedule))

    @classmethod
    def load(cls, path) -> "PretrainedSgm":
        ck = load_checkpoint(path)
        if not ck.pretrained:
            raise InvalidArgument(f"{path} is not a pre-trained flow model")
        return cls(ck.net, ck.direction, ck.schedule.hash(), seed=ck.seed)


def interpolation_weights(schedule: GammaSchedule, direction: str) -> np.ndarray:
    """Weight on the destination endpoint at each of the model's N+1 indices.

    Backward models use ``gbar_j``; forward models use ``1 - gbar_{N-j}`` so
    that index ``N - k`` lands on the bridge's state ``k``.
    """
    if direction == "backward":
        return schedule.gamma_bars.copy()
    if direction == "forward":
        return 1.0 - schedule.gamma_bars[::-1]
    raise InvalidArgument(f"bad direction {direction!r}")


def pretrain_flow_sgm(src_sampler, dst_sampler, schedule: GammaSchedule, steps: int, rng,
                      direction: str = "backward", net: Mlp | None = None, batch_size: int = 128,
                      lr: float = 1e-4, arch: dict | None = None, seed: int = 0) -> PretrainedSgm:
    """Regress ``m(j, x_j) -> x_src - x_dst`` on independent endpoint pairs.

    ``x_j = (1 - w_j) x_src + w_j x_dst`` with ``w`` from
    :func:`interpolation_weights`.  For a backward (data-directed) model
    ``src`` is the data sampler; for a forward model it is the prior.
    """
    if steps < 0:
        raise InvalidArgument("steps must be >= 0")
    if not schedule.is_normalized:
        raise InvalidArgument("pre-training requires a normalized schedule")
    w = interpolation_weights(schedule, direction)
    if net is None:
        net = init_mlp(src_sampler.d, schedule.n_steps, rng, **(arch or {}))
    else:
        net = net.copy()
    state = AdamState.for_params(net.params)
    losses = []
    for _ in range(steps):
        xs = src_sampler.draw(batch_size, rng)
        xd = dst_sampler.draw(batch_size, rng)
        j = rng.integers(0, schedule.n_steps + 1, batch_size)
        wj = w[j][:, None]
        x = (1.0 - wj) * xs + wj * xd
        loss, grads = mse_grad(net, j, x, xs - xd)
        adam_step(net.params, grads, state, lr)
        losses.append(loss)
    return PretrainedSgm(net, direction, schedule.hash(), losses=losses, seed=seed)


def _check(sgm: PretrainedSgm, schedule: GammaSchedule, direction: str):
    if sgm.direction != direction:
        raise InvalidArgument(f"expected a {direction} model, got {sgm.direction}")
    if sgm.schedule_hash != schedule.hash():
        raise InvalidArgument("pre-trained model was trained against a different schedule")


def wrap_backward_init(sgm: PretrainedSgm, schedule: GammaSchedule, kind=ObjectiveKind.IPFM) -> BridgeNet:
    """Backward step mean ``(k, x) -> x + gamma_k m(k, x)`` over a copy of ``m``."""
    _check(sgm, schedule, "backward")
    return BridgeNet(sgm.net.copy(), kind, "backward", schedule)


def wrap_forward_init(sgm: PretrainedSgm, schedule: GammaSchedule, kind=ObjectiveKind.IPFM) -> BridgeNet:
    """Forward step mean ``(k, x) -> x + gamma_{k+1} m(N - k, x)`` over a copy of ``m``."""
    _check(sgm, schedule, "forward")
    return BridgeNet(sgm.net.copy(), kind, "forward", schedule, reverse_time=True)


def misaligned_init_control(sgm: PretrainedSgm, schedule: GammaSchedule) -> BridgeNet:
    """The backward wrapper as the original DSB objective would use it.

    The DSB forward target evaluates this map at ``(k+1, x_k)`` as well as
    ``(k+1, x_{k+1})``; the first query pairs a state with the wrong clock.
    """
    return wrap_backward_init(sgm, schedule, kind=ObjectiveKind.DSB)
