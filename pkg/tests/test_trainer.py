import numpy as np
import pytest

from sblab.chain import reference_mean
from sblab.datasets import gaussian_pair
from sblab.errors import DivergenceError, InvalidArgument
from sblab.nn import init_mlp
from sblab.objectives import BridgeNet, ObjectiveKind
from sblab.oracle import GaussianMoments, symmetric_kl
from sblab.schedule import make_constant_schedule, make_symmetric_schedule
from sblab.trainer import (
    CountingMean, TrainConfig, marginal_gap, nfe_counter, read_metrics, train_ipf,
)

TINY = {"hidden": 16, "n_layers": 2, "embed_dim": 4, "activation": "silu"}


def tiny_config(**kw):
    base = dict(n_epochs=1, steps_per_half_epoch=30, batch_size=32, cache_size=256, cache_refresh_interval=20,
                arch=dict(TINY), eval_paths=200, lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def problem():
    data, prior = gaussian_pair(2, 1.0, seed=5)
    return data, prior, make_symmetric_schedule(6, 1.0, 3.0, normalize=True)


def _bytes(bridge):
    return b"".join(p.tobytes() for p in bridge.net.params)


def test_zero_epochs_returns_init(problem):
    data, prior, s = problem
    net = init_mlp(2, s.n_steps, np.random.default_rng(0), **TINY)
    init_b = BridgeNet(net, ObjectiveKind.IPFM, "backward", s)
    res = train_ipf(tiny_config(n_epochs=0, init_mode="backward-only"), data, prior, s, init_backward=init_b)
    assert _bytes(res.backward) == _bytes(init_b)
    assert len(res.metrics) == 0
    assert not res.backward_is_reference


def test_deterministic(problem):
    data, prior, s = problem
    r1 = train_ipf(tiny_config(), data, prior, s)
    r2 = train_ipf(tiny_config(), data, prior, s)
    assert _bytes(r1.forward) == _bytes(r2.forward)
    assert _bytes(r1.backward) == _bytes(r2.backward)
    np.testing.assert_array_equal(r1.metrics.column("loss"), r2.metrics.column("loss"))


def test_alternation_trains_one_network_per_half(problem, tmp_path):
    data, prior, s = problem
    from sblab.checkpoint import load_checkpoint

    train_ipf(tiny_config(), data, prior, s, run_dir=tmp_path)
    snap = {h: (load_checkpoint(tmp_path / f"half_{h}_F.sbck").net, load_checkpoint(tmp_path / f"half_{h}_B.sbck").net)
            for h in (0, 1, 2)}

    def same(a, b):
        return all(x.tobytes() == y.tobytes() for x, y in zip(a.params, b.params))

    # half 1 trains F only, half 2 trains B only
    assert not same(snap[0][0], snap[1][0]) and same(snap[0][1], snap[1][1])
    assert same(snap[1][0], snap[2][0]) and not same(snap[1][1], snap[2][1])


def test_first_half_uses_reference(problem):
    data, prior, s = problem
    res = train_ipf(tiny_config(), data, prior, s, stop_after=1)
    assert res.backward_is_reference
    assert res.backward_mean(3, np.ones((2, 2))) is not None
    res = train_ipf(tiny_config(), data, prior, s)
    assert not res.backward_is_reference


@pytest.mark.parametrize("kind", ["dsb", "ipmm", "iptm", "ipfm"])
def test_nfe_per_target(problem, kind):
    data, prior, s = problem
    cfg = tiny_config(objective=kind)
    res = train_ipf(cfg, data, prior, s)
    for r in res.metrics.records:
        assert r.nfe == cfg.steps_per_half_epoch * cfg.batch_size * nfe_counter(kind)


def test_counting_mean():
    c = CountingMean(reference_mean())
    c(0, np.zeros((5, 2)))
    c(1, np.zeros((3, 2)))
    assert c.rows == 8


def test_resume_matches_uninterrupted(problem, tmp_path):
    data, prior, s = problem
    cfg = tiny_config(n_epochs=2)
    full = train_ipf(cfg, data, prior, s, run_dir=tmp_path / "full")
    train_ipf(cfg, data, prior, s, run_dir=tmp_path / "part", stop_after=2)
    resumed = train_ipf(cfg, data, prior, s, run_dir=tmp_path / "part", resume=True)
    assert _bytes(full.forward) == _bytes(resumed.forward)
    assert _bytes(full.backward) == _bytes(resumed.backward)
    for col in ("loss", "gap_fwd", "gap_bwd", "nfe"):
        np.testing.assert_array_equal(full.metrics.column(col), resumed.metrics.column(col))
    assert len(read_metrics(tmp_path / "part" / "metrics.csv")) == 4


def test_resume_rejects_other_config(problem, tmp_path):
    data, prior, s = problem
    train_ipf(tiny_config(), data, prior, s, run_dir=tmp_path, stop_after=1)
    with pytest.raises(InvalidArgument):
        train_ipf(tiny_config(lr=5e-4), data, prior, s, run_dir=tmp_path, resume=True)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(problem, tmp_path):
    data, prior, s = problem
    with pytest.raises(DivergenceError) as info:
        train_ipf(tiny_config(n_epochs=2, lr=1e30), data, prior, s, run_dir=tmp_path)
    f_path, b_path = info.value.checkpoint
    assert f_path.endswith("half_0_F.sbck") and b_path.endswith("half_0_B.sbck")


def test_init_validation(problem):
    data, prior, s = problem
    net = init_mlp(2, s.n_steps, np.random.default_rng(0), **TINY)
    b = BridgeNet(net, ObjectiveKind.IPFM, "backward", s)
    with pytest.raises(InvalidArgument):
        train_ipf(tiny_config(), data, prior, s, init_backward=b)  # random mode with an init
    with pytest.raises(InvalidArgument):
        train_ipf(tiny_config(init_mode="dual"), data, prior, s, init_backward=b)
    other = make_symmetric_schedule(6, 1.0, 4.0, normalize=True)
    with pytest.raises(InvalidArgument):
        train_ipf(tiny_config(init_mode="backward-only"), data, prior, other, init_backward=b)
    f = BridgeNet(net, ObjectiveKind.IPFM, "forward", s)
    with pytest.raises(InvalidArgument):
        train_ipf(tiny_config(init_mode="backward-only"), data, prior, s, init_backward=f)


def test_unnormalized_schedule_rejected_for_ipfm(problem):
    data, prior, _ = problem
    with pytest.raises(InvalidArgument):
        train_ipf(tiny_config(), data, prior, make_constant_schedule(4, 0.5))
    train_ipf(tiny_config(objective="dsb", n_epochs=0), data, prior, make_constant_schedule(4, 0.5))


def test_config_round_trip_and_validation():
    cfg = tiny_config(objective="iptm", seed=3)
    back = TrainConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.hash() == cfg.hash()
    assert tiny_config(seed=4).hash() != cfg.hash()
    with pytest.raises(InvalidArgument):
        TrainConfig.from_dict({"nope": 1})
    with pytest.raises(InvalidArgument):
        tiny_config(batch_size=0)
    with pytest.raises(InvalidArgument):
        tiny_config(init_mode="warm")


def test_marginal_gap_self_comparison():
    data, _ = gaussian_pair(2, 1.0, seed=0)
    s = make_constant_schedule(4, 1e-8)
    gap = marginal_gap(reference_mean(), s, data, data, 10_000, np.random.default_rng(0))
    assert gap < 0.05


def test_marginal_gap_brownian_closed_form():
    # N(a, I) pushed through a unit-total Brownian chain is N(a, 3 I)
    a = np.ones(2)
    data, prior = gaussian_pair(2, a, seed=0)
    s = make_symmetric_schedule(10, 1.0, 5.0, normalize=True)
    gap = marginal_gap(reference_mean(), s, data, prior, 20_000, np.random.default_rng(1))
    exact = symmetric_kl(GaussianMoments(a, 3.0 * np.eye(2)), GaussianMoments(-a, np.eye(2)))
    assert gap == pytest.approx(exact, rel=0.1)
    back = marginal_gap(reference_mean(), s, prior, data, 20_000, np.random.default_rng(2), direction="backward")
    assert back == pytest.approx(exact, rel=0.1)


def test_marginal_gap_needs_paths():
    data, prior = gaussian_pair(2)
    with pytest.raises(InvalidArgument):
        marginal_gap(reference_mean(), make_constant_schedule(2, 0.5), data, prior, 50, np.random.default_rng(0))
