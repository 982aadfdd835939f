"""``sblab`` command line: pretrain, train, eval, sample, oracle-check, plot.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
``SBLAB_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .chain import sample_backward, sample_forward, write_trajectories_csv
from .checkpoint import load_checkpoint
from .config import RunConfig, apply_overrides, load_run_config
from .errors import DivergenceError, InvalidArgument, NumericError
from .objectives import ObjectiveKind, posterior_params
from .oracle import (
    analytic_sb_marginal, averaged_kl_from_states, chain_conditioning_bruteforce, discretized_gaussian_coupling,
    entropic_cross_covariance, marginal_gap_from_samples,
)
from .plotting import metrics_svg, trajectories_svg, write_svg
from .schedule import make_symmetric_schedule
from .sgm_init import PretrainedSgm, pretrain_flow_sgm, wrap_backward_init, wrap_forward_init
from .trainer import read_metrics, train_ipf

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
log = logging.getLogger("sblab")


def _dump_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "output_dir": getattr(args, "out", None),
        "train.seed": getattr(args, "seed", None),
        "train.n_epochs": getattr(args, "epochs", None),
        "train.steps_per_half_epoch": getattr(args, "steps", None),
        "train.objective": getattr(args, "objective", None),
        "train.init_mode": getattr(args, "init_mode", None),
        "init_backward": getattr(args, "init_backward", None),
        "init_forward": getattr(args, "init_forward", None),
        "eval.n_paths": getattr(args, "n_paths", None),
        "eval.n_eval_times": getattr(args, "n_eval_times", None),
        "eval.seed": getattr(args, "eval_seed", None),
    }
    return apply_overrides(cfg, overrides)


# -- subcommands ---------------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    if args.pretrain_steps is not None:
        cfg.pretrain.steps = args.pretrain_steps
    data, prior = cfg.samplers()
    sched = cfg.gamma_schedule()
    os.makedirs(cfg.output_dir, exist_ok=True)
    seed = cfg.train.seed
    arch = cfg.train.arch
    summary = {"config_hash": cfg.hash(), "schedule_hash": sched.hash(), "steps": cfg.pretrain.steps, "models": {}}
    jobs = [("backward", data, prior)]
    if cfg.pretrain.dual:
        jobs.append(("forward", prior, data))
    for i, (direction, src, dst) in enumerate(jobs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 10, i]))
        sgm = pretrain_flow_sgm(src, dst, sched, cfg.pretrain.steps, rng, direction=direction,
                                batch_size=cfg.pretrain.batch_size, lr=cfg.pretrain.lr, arch=arch, seed=seed)
        path = os.path.join(cfg.output_dir, f"sgm_{direction}.sbck")
        sgm.save(path, sched)
        tail = sgm.losses[-min(len(sgm.losses), 200):]
        summary["models"][direction] = {
            "path": path,
            "final_loss": float(np.mean(tail)) if tail else None,
            "steps": len(sgm.losses),
        }
        log.info("pre-trained %s model -> %s", direction, path)
    _dump_json(os.path.join(cfg.output_dir, "pretrain_summary.json"), summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _load_init(path, direction, sched, kind):
    if path is None:
        return None
    ck = load_checkpoint(path)
    if ck.schedule.hash() != sched.hash():
        raise InvalidArgument(f"{path}: schedule hash does not match the run schedule")
    if ck.direction != direction:
        raise InvalidArgument(f"{path}: expected a {direction} model, found {ck.direction}")
    if ck.pretrained:
        sgm = PretrainedSgm(ck.net, ck.direction, ck.schedule.hash(), seed=ck.seed)
        wrap = wrap_backward_init if direction == "backward" else wrap_forward_init
        return wrap(sgm, sched, kind)
    bridge = ck.bridge()
    bridge.kind = kind
    return bridge


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.train.init_mode == "random" and (cfg.init_backward or cfg.init_forward):
        cfg.train.init_mode = "dual" if cfg.init_forward else "backward-only"
    cfg.validate()
    data, prior = cfg.samplers()
    sched = cfg.gamma_schedule()
    kind = cfg.train.objective
    init_b = _load_init(cfg.init_backward, "backward", sched, kind)
    init_f = _load_init(cfg.init_forward, "forward", sched, kind)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(os.path.join(cfg.output_dir, "config.json"), {"config_hash": cfg.hash(), **_plain(cfg.to_dict())})
    a = cfg.oracle_a()
    t0 = time.perf_counter()
    result = train_ipf(cfg.train, data, prior, sched, init_b, init_f, run_dir=cfg.output_dir, oracle_a=a,
                       resume=args.resume, stop_after=args.stop_after)
    report = {
        "config_hash": cfg.hash(),
        "half_epochs": len(result.metrics),
        "seconds": time.perf_counter() - t0,
        "nfe_total": int(sum(r.nfe for r in result.metrics.records)),
    }
    if result.metrics.records:
        last = result.metrics.records[-1]
        report.update(final_loss=last.loss, final_gap_fwd=last.gap_fwd, final_gap_bwd=last.gap_bwd)
    if a is not None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.eval.seed, 3]))
        n = cfg.eval.n_paths
        states = sample_backward(result.backward_mean, sched, prior.draw(n, rng), rng).states
        report["final_avg_kl"] = averaged_kl_from_states(states, sched, a, 2.0 * sched.total, cfg.eval.n_eval_times)
    _dump_json(os.path.join(cfg.output_dir, "report.json"), _plain(report))
    print(json.dumps(_plain(report), indent=2, sort_keys=True))
    return EXIT_OK


def _plain(v):
    from .config import _jsonable

    out = _jsonable(v)
    if isinstance(out, float) and not np.isfinite(out):
        return None
    if isinstance(out, dict):
        return {k: _plain(x) for k, x in out.items()}
    return out


def cmd_eval(args) -> int:
    cfg = _config(args)
    for p in (args.forward, args.backward):
        if not os.path.exists(p):
            raise FileNotFoundError(p)
    fwd = load_checkpoint(args.forward).bridge()
    bwd = load_checkpoint(args.backward).bridge()
    if fwd.direction != "forward" or bwd.direction != "backward":
        raise InvalidArgument("expected a forward and a backward checkpoint")
    if fwd.schedule.hash() != bwd.schedule.hash():
        raise InvalidArgument("the two checkpoints use different schedules")
    sched = bwd.schedule
    data, prior = cfg.samplers()
    if data.d != bwd.net.data_dim:
        raise InvalidArgument("checkpoint dimension does not match the configured samplers")
    n = cfg.eval.n_paths
    rng = np.random.default_rng(np.random.SeedSequence([cfg.eval.seed, 3]))
    back = sample_backward(bwd, sched, prior.draw(n, rng), rng).states
    fore = sample_forward(fwd, sched, data.draw(n, rng), rng).states
    result = {
        "config_hash": cfg.hash(),
        "schedule_hash": sched.hash(),
        "n_paths": n,
        "seed": cfg.eval.seed,
        "gap_fwd": marginal_gap_from_samples(fore[:, -1], prior.draw(n, rng)),
        "gap_bwd": marginal_gap_from_samples(back[:, 0], data.draw(n, rng)),
        "avg_kl": None,
        "avg_kl_forward": None,
    }
    a = cfg.oracle_a()
    if a is not None:
        eps = 2.0 * sched.total
        result["avg_kl"] = averaged_kl_from_states(back, sched, a, eps, cfg.eval.n_eval_times)
        result["avg_kl_forward"] = averaged_kl_from_states(fore, sched, a, eps, cfg.eval.n_eval_times)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(os.path.join(cfg.output_dir, "eval.json"), result)
    with open(os.path.join(cfg.output_dir, "eval.csv"), "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in ("gap_fwd", "gap_bwd", "avg_kl", "avg_kl_forward"):
            w.writerow([key, "" if result[key] is None else repr(float(result[key]))])
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _config(args)
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(args.checkpoint)
    ck = load_checkpoint(args.checkpoint)
    if ck.pretrained:
        sgm = PretrainedSgm(ck.net, ck.direction, ck.schedule.hash(), seed=ck.seed)
        wrap = wrap_backward_init if ck.direction == "backward" else wrap_forward_init
        bridge = wrap(sgm, ck.schedule)
    else:
        bridge = ck.bridge()
    data, prior = cfg.samplers()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.eval.seed, 4]))
    n = args.n
    if bridge.direction == "backward":
        trajs = sample_backward(bridge, ck.schedule, prior.draw(n, rng), rng)
    else:
        trajs = sample_forward(bridge, ck.schedule, data.draw(n, rng), rng)
    trajs.seed = cfg.eval.seed
    out = args.output
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_trajectories_csv(out, trajs, ck.schedule, config_hash=cfg.hash())
    print(out)
    return EXIT_OK


def oracle_report(eps: float = 2.0, n_grid: int = 401, seed: int = 0, n_pins: int = 100) -> dict:
    """Closed-form vs Sinkhorn cross-covariance, endpoint checks and posterior residuals."""
    coupling = discretized_gaussian_coupling(eps=eps, n_grid=n_grid)
    c_closed = entropic_cross_covariance(eps)
    a = np.ones(2)
    m0, m1 = analytic_sb_marginal(a, 0.0, eps), analytic_sb_marginal(a, 1.0, eps)
    endpoint_err = max(
        float(np.abs(m0.mean - a).max()), float(np.abs(m0.cov - np.eye(2)).max()),
        float(np.abs(m1.mean + a).max()), float(np.abs(m1.cov - np.eye(2)).max()),
    )
    rng = np.random.default_rng(seed)
    sched = make_symmetric_schedule(6, 1.0, 3.0, normalize=True)
    dmu = dsig = 0.0
    for _ in range(n_pins):
        direction = "backward" if rng.random() < 0.5 else "forward"
        k = int(rng.integers(0, 6))
        pin, cur = rng.standard_normal((2, 2))
        got = posterior_params(direction, k, pin, cur, sched)
        if direction == "backward":
            ref = chain_conditioning_bruteforce(sched, k, {0: pin, k + 1: cur})
        else:
            ref = chain_conditioning_bruteforce(sched, k + 1, {k: cur, 6: pin})
        dmu = max(dmu, float(np.abs(got.mean - ref.mean).max()))
        dsig = max(dsig, abs(got.variance - ref.variance))
    return {
        "eps_total": eps,
        "c_closed_form": c_closed,
        "c_sinkhorn": coupling.cross_covariance(),
        "c_abs_diff": abs(coupling.cross_covariance() - c_closed),
        "sinkhorn_marginal_error": coupling.marginal_error,
        "sinkhorn_iterations": coupling.n_iters,
        "endpoint_max_error": endpoint_err,
        "posterior_max_abs_mean_diff": dmu,
        "posterior_max_abs_var_diff": dsig,
        "posterior_pins": n_pins,
    }


def cmd_oracle_check(args) -> int:
    report = oracle_report(args.eps, args.grid, args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .chain import read_trajectories_csv

    src = args.input
    out_dir = args.out or (src if os.path.isdir(src) else os.path.dirname(os.path.abspath(src)))
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if os.path.isdir(src):
        metrics_path = os.path.join(src, "metrics.csv")
        if not os.path.exists(metrics_path):
            raise FileNotFoundError(metrics_path)
        path = os.path.join(out_dir, "metrics.svg")
        write_svg(path, metrics_svg(read_metrics(metrics_path)))
        written.append(path)
        traj_path = os.path.join(src, "trajectories.csv")
        if os.path.exists(traj_path):
            src = traj_path
    if not os.path.isdir(src):
        if not os.path.exists(src):
            raise FileNotFoundError(src)
        states = read_trajectories_csv(src)
        stem = os.path.splitext(os.path.basename(src))[0]
        path = os.path.join(out_dir, f"{stem}.svg")
        write_svg(path, trajectories_svg(states, seed=args.seed, title=stem))
        written.append(path)
    for p in written:
        print(p)
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sblab", description="Schrodinger bridge training and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, train_flags=False):
        sp.add_argument("--config", help="TOML or JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        if train_flags:
            sp.add_argument("--epochs", type=int, help="number of forward/backward half-epoch pairs")
            sp.add_argument("--steps", type=int, help="optimizer steps per half-epoch")
            sp.add_argument("--objective", choices=[k.value for k in ObjectiveKind])

    sp = sub.add_parser("pretrain", help="train flow-matching models for initialisation")
    common(sp)
    sp.add_argument("--pretrain-steps", type=int)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="run alternating IPF training")
    common(sp, train_flags=True)
    sp.add_argument("--init-backward", help="backward initialisation checkpoint")
    sp.add_argument("--init-forward", help="forward initialisation checkpoint")
    sp.add_argument("--init-mode", choices=["random", "backward-only", "dual"])
    sp.add_argument("--resume", action="store_true", help="continue from the last checkpoint in --out")
    sp.add_argument("--stop-after", type=int, help="halt after this many completed half-epochs")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a forward/backward checkpoint pair")
    common(sp)
    sp.add_argument("--forward", required=True)
    sp.add_argument("--backward", required=True)
    sp.add_argument("--n-paths", type=int)
    sp.add_argument("--n-eval-times", type=int)
    sp.add_argument("--eval-seed", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sample", help="write trajectories from a checkpoint to CSV")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("-n", type=int, default=256)
    sp.add_argument("--eval-seed", type=int)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("oracle-check", help="JSON report of the analytic oracle checks")
    sp.add_argument("--eps", type=float, default=2.0)
    sp.add_argument("--grid", type=int, default=401)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_oracle_check)

    sp = sub.add_parser("plot", help="render SVG figures from a trajectory CSV or run directory")
    sp.add_argument("input")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_plot)
    return p


def _thread_limit():
    raw = os.environ.get("SBLAB_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgument(f"SBLAB_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidArgument("SBLAB_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except DivergenceError as exc:
        print(f"error: {exc}; last good checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_DIVERGED
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidArgument, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
