"""Schrodinger bridge training by iterative proportional fitting, with Gaussian oracles."""

__version__ = "0.1.0"

from .chain import Trajectories, reference_mean, sample_backward, sample_forward, subsample_pairs
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .datasets import Sampler, draw, gaussian_pair
from .errors import DivergenceError, InvalidArgument, NumericError, SingularMatrixError
from .nn import AdamState, Mlp, adam_step, init_mlp, mlp_forward, mse_grad, timestep_embed
from .objectives import (
    BridgeNet, ObjectiveKind, PosteriorParams, dsb_original_target, flow_to_mean, ipfm_target, iptm_target,
    ipmm_target, posterior_params, terminus_to_mean,
)
from .oracle import (
    GaussianMoments, analytic_sb_marginal, averaged_kl_metric, chain_conditioning_bruteforce, fit_gaussian,
    gaussian_kl, sinkhorn_coupling,
)
from .schedule import GammaSchedule, default_schedule, gamma_bar, make_constant_schedule, make_symmetric_schedule
from .sgm_init import (
    PretrainedSgm, misaligned_init_control, pretrain_flow_sgm, wrap_backward_init, wrap_forward_init,
)
from .trainer import RunMetrics, TrainConfig, marginal_gap, nfe_counter, train_ipf
