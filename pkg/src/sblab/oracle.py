"""Ground truth for the Gaussian bridge problem.

The problem is ``p_data = N(a, I)`` at ``t = 0`` and ``p_prior = N(-a, I)``
at ``t = 1`` with a Brownian reference whose total variance over the chain is
``eps_total`` (``2 * gbar_N``).  Its bridge factorises into a static entropic
coupling of the two endpoints, solved per coordinate in closed form, and a
Brownian bridge between the coupled endpoints.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument, SingularMatrixError
from .objectives import PosteriorParams
from .schedule import GammaSchedule


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgument("covariance shape does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def is_singular(self) -> bool:
        return bool(np.linalg.eigvalsh(self.cov).min() <= 1e-12 * max(1.0, np.abs(self.cov).max()))

    def regularized(self, eps: float = 1e-6) -> "GaussianMoments":
        return GaussianMoments(self.mean, self.cov + eps * np.eye(self.dim))

    @classmethod
    def isotropic(cls, mean, var: float) -> "GaussianMoments":
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        return cls(mean, var * np.eye(mean.size))


def gaussian_kl(p: GaussianMoments, q: GaussianMoments) -> float:
    """KL(p || q) for multivariate normals."""
    if p.dim != q.dim:
        raise InvalidArgument("dimension mismatch")
    try:
        chol_q = np.linalg.cholesky(q.cov)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("q covariance is not positive definite") from None
    sign_p, logdet_p = np.linalg.slogdet(p.cov)
    if sign_p <= 0:
        raise SingularMatrixError("p covariance is singular")
    logdet_q = 2.0 * np.log(np.diag(chol_q)).sum()
    inv_q = np.linalg.inv(q.cov)
    diff = q.mean - p.mean
    val = 0.5 * (np.trace(inv_q @ p.cov) + diff @ inv_q @ diff - p.dim + logdet_q - logdet_p)
    return float(max(val, 0.0))


def symmetric_kl(p: GaussianMoments, q: GaussianMoments) -> float:
    return 0.5 * (gaussian_kl(p, q) + gaussian_kl(q, p))


def fit_gaussian(samples) -> GaussianMoments:
    """Sample mean and unbiased sample covariance."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument("samples must have shape (n, d)")
    n, d = x.shape
    if n <= d:
        raise InvalidArgument(f"need more than d={d} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    return GaussianMoments(mean, xc.T @ xc / (n - 1))


def entropic_cross_covariance(eps_total: float) -> float:
    """Per-coordinate cross-covariance of the optimal static coupling.

    Couples two unit-variance normals under cost ``|x - y|^2 / 2`` with
    entropic weight ``eps_total``; equivalently, the endpoint coupling of a
    Brownian reference of total variance ``eps_total``.  Minimising
    ``(1 - c) - (eps/2) log(1 - c^2)`` over ``c`` gives
    ``c = sqrt(1 + eps^2 / 4) - eps / 2``.  Checked against
    :func:`sinkhorn_coupling` in the test suite.
    """
    if not eps_total > 0:
        raise InvalidArgument("eps_total must be > 0")
    return float(np.sqrt(1.0 + 0.25 * eps_total**2) - 0.5 * eps_total)


def analytic_sb_marginal(a, t: float, eps_total: float = 2.0) -> GaussianMoments:
    """Marginal at time ``t`` of the bridge from N(a, I) (t=0) to N(-a, I) (t=1)."""
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument("t must lie in [0, 1]")
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    c = entropic_cross_covariance(eps_total)
    s = 1.0 - t
    var = s * s + t * t + 2.0 * t * s * c + eps_total * t * s
    return GaussianMoments.isotropic((1.0 - 2.0 * t) * a, var)


def index_times(schedule: GammaSchedule) -> np.ndarray:
    """Bridge time of each state index: ``t_k = gbar_k / gbar_N``.

    Index 0 is the data end.  Read from the prior end this is the backward
    clock ``1 - t_k``.
    """
    return schedule.gamma_bars / schedule.total


def eval_indices(schedule: GammaSchedule, n_eval_times: int) -> np.ndarray:
    """State indices closest to ``t = j / (n+1)``, ``j = 1..n``."""
    if n_eval_times < 2:
        raise InvalidArgument("need at least two evaluation times")
    t_idx = index_times(schedule)
    targets = np.arange(1, n_eval_times + 1) / (n_eval_times + 1)
    return np.array([int(np.argmin(np.abs(t_idx - t))) for t in targets])


def averaged_kl_from_states(states, schedule: GammaSchedule, a, eps_total: float, n_eval_times: int = 9) -> float:
    """Mean over evaluation indices of KL(fitted marginal || analytic marginal)."""
    states = np.asarray(states)
    t_idx = index_times(schedule)
    vals = []
    for k in eval_indices(schedule, n_eval_times):
        fitted = fit_gaussian(states[:, k])
        if fitted.is_singular:
            fitted = fitted.regularized()
        vals.append(gaussian_kl(fitted, analytic_sb_marginal(a, float(t_idx[k]), eps_total)))
    return float(np.mean(vals))


def averaged_kl_metric(mean_fn, schedule: GammaSchedule, sampler, a, eps_total: float | None = None,
                       n_eval_times: int = 9, n_paths: int = 10_000, rng=None, direction: str = "backward") -> float:
    """Simulate paths with ``mean_fn`` and score them against the analytic bridge.

    ``direction="backward"`` starts from the prior sampler and runs a
    backward chain; ``"forward"`` starts from the data sampler.
    """
    from .chain import sample_backward, sample_forward

    if n_paths < 1000:
        raise InvalidArgument("n_paths must be >= 1000")
    if eps_total is None:
        eps_total = 2.0 * schedule.total
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    x = sampler.draw(n_paths, rng)
    if direction == "backward":
        trajs = sample_backward(mean_fn, schedule, x, rng)
    elif direction == "forward":
        trajs = sample_forward(mean_fn, schedule, x, rng)
    else:
        raise InvalidArgument(f"bad direction {direction!r}")
    return averaged_kl_from_states(trajs.states, schedule, a, eps_total, n_eval_times)


def sample_analytic_states(schedule: GammaSchedule, a, n_paths: int, rng, eps_total: float | None = None) -> np.ndarray:
    """Independent draws from each analytic marginal, shaped like a path batch."""
    if eps_total is None:
        eps_total = 2.0 * schedule.total
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    out = np.empty((n_paths, schedule.n_steps + 1, a.size))
    for k, t in enumerate(index_times(schedule)):
        m = analytic_sb_marginal(a, float(t), eps_total)
        out[:, k] = m.mean + np.sqrt(m.cov[0, 0]) * rng.standard_normal((n_paths, a.size))
    return out


@dataclass
class DiscreteCoupling:
    x: np.ndarray
    y: np.ndarray
    plan: np.ndarray
    eps: float
    marginal_error: float
    n_iters: int
    error_history: np.ndarray

    def cross_covariance(self) -> float:
        px = self.plan.sum(axis=1)
        py = self.plan.sum(axis=0)
        mx = px @ self.x
        my = py @ self.y
        return float(self.x @ self.plan @ self.y - mx * my)


def half_sq_cost(x, y) -> np.ndarray:
    return 0.5 * (np.asarray(x)[:, None] - np.asarray(y)[None, :]) ** 2


def sinkhorn_coupling(hist_p, hist_q, cost, eps: float, max_iters: int = 10_000, tol: float = 1e-10,
                      x=None, y=None) -> DiscreteCoupling:
    """Entropic OT plan by log-domain Sinkhorn iterations.

    Minimises ``<P, cost> + eps * KL(P || p q^T)``.  Stops once the L1
    error of the row marginal (the column marginal is exact after each
    column update) drops below ``tol``.
    """
    p = np.asarray(hist_p, dtype=np.float64)
    q = np.asarray(hist_q, dtype=np.float64)
    C = np.asarray(cost, dtype=np.float64)
    if not eps > 0:
        raise InvalidArgument("eps must be > 0")
    if C.shape != (p.size, q.size):
        raise InvalidArgument("cost shape must be (len(p), len(q))")
    if np.any(p < 0) or np.any(q < 0) or abs(p.sum() - 1) > 1e-9 or abs(q.sum() - 1) > 1e-9:
        raise InvalidArgument("histograms must be non-negative and sum to 1")
    with np.errstate(divide="ignore"):
        logp, logq = np.log(p), np.log(q)
    logK = -C / eps
    f = np.zeros(p.size)
    g = np.zeros(q.size)
    history = []
    err = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = logp - logsumexp(logK + g[None, :], axis=1)
        f[~np.isfinite(logp)] = -np.inf
        g = logq - logsumexp(logK + f[:, None], axis=0)
        g[~np.isfinite(logq)] = -np.inf
        logP = f[:, None] + logK + g[None, :]
        row = np.exp(logsumexp(logP, axis=1))
        err = float(np.abs(row - p).sum())
        history.append(err)
        if err < tol:
            break
    plan = np.exp(f[:, None] + logK + g[None, :])
    xs = np.arange(p.size, dtype=np.float64) if x is None else np.asarray(x, dtype=np.float64)
    ys = np.arange(q.size, dtype=np.float64) if y is None else np.asarray(y, dtype=np.float64)
    return DiscreteCoupling(xs, ys, plan, float(eps), err, it, np.asarray(history))


def discretized_gaussian_coupling(mean_p: float = 1.0, mean_q: float = -1.0, eps: float = 2.0,
                                  n_grid: int = 401, half_width: float = 6.0) -> DiscreteCoupling:
    """Sinkhorn on unit-variance normals binned onto a shared 1-D grid."""
    xs = ys = np.linspace(-half_width, half_width, n_grid)
    p = np.exp(-0.5 * (xs - mean_p) ** 2)
    q = np.exp(-0.5 * (ys - mean_q) ** 2)
    return sinkhorn_coupling(p / p.sum(), q / q.sum(), half_sq_cost(xs, ys), eps, x=xs, y=ys)


def chain_conditioning_bruteforce(schedule: GammaSchedule, query: int, pins: dict, x0_var: float = 1.0) -> PosteriorParams:
    """Law of ``x_query`` given pinned states, by explicit Gaussian conditioning.

    Builds the joint covariance of ``(x_0, ..., x_N)`` for one coordinate of
    the zero-drift chain (``x_0 ~ N(0, x0_var)``, increments of variance
    ``2 gamma_k``) and applies the Schur complement.  ``pins`` maps state
    indices to pinned vectors; coordinates are independent so the same
    scalar conditioning applies to each.
    """
    N = schedule.n_steps
    if N > 64:
        raise InvalidArgument("brute-force conditioning is meant for short chains")
    idx = sorted(int(i) for i in pins)
    if any(not 0 <= i <= N for i in idx + [query]):
        raise InvalidArgument("state index out of range")
    bars = schedule.gamma_bars
    cov = x0_var + 2.0 * np.minimum.outer(bars, bars)
    vals = np.stack([np.atleast_1d(np.asarray(pins[i], dtype=np.float64)) for i in idx])
    S_pp = cov[np.ix_(idx, idx)]
    S_qp = cov[query, idx]
    try:
        gain = np.linalg.solve(S_pp, S_qp)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("conditioning block is singular") from None
    mean = gain @ vals
    var = float(cov[query, query] - gain @ S_qp)
    if query in idx:
        # exact answer; avoids round-off in the Schur complement
        return PosteriorParams(vals[idx.index(query)], 0.0)
    return PosteriorParams(mean, max(var, 0.0))


def marginal_gap_from_samples(terminal, reference) -> float:
    """Symmetric KL between Gaussian fits of two sample sets."""
    p = fit_gaussian(terminal)
    q = fit_gaussian(reference)
    if p.is_singular or q.is_singular:
        warnings.warn("singular fitted covariance regularised by 1e-6 I", RuntimeWarning)
        p, q = p.regularized(), q.regularized()
    return symmetric_kl(p, q)
