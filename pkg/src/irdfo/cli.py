"""Command-line front end: run the fit, check gradients, render snapshots,
and exercise the box-constrained solver on a built-in quadratic suite.

Configuration is a flat key=value text file; every key can also be given as
a command-line flag, which wins over the file. Unknown keys are rejected.
Exit codes: 0 success, 2 parse/config error, 3 budget exhausted,
4 assumption violation, 1 failed check.
"""

import argparse
import os
import sys

import numpy as np

from . import dambreak as db
from .ircore import (AssumptionViolation, IRParams, run_ir, write_trace_csv)
from .moa import MOAParams
from .spg import BoxConstraint, SpgParams, spg_run

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_ASSUMPTION = 4

# key -> (type, default); defaults follow the reference parameter choices
CONFIG_SCHEMA = {
    "alpha": (float, 1e-4),
    "beta": (float, 100.0),
    "theta0": (float, 0.5),
    "nu": (float, 2.0),
    "r_ir": (float, 0.5),
    "eps_feas": (float, 1.0 / 12800.0),
    "eps_dist": (float, 1e-4),
    "eta": (float, 1e-6),
    "sigma_min": (float, 1e-4),
    "gamma": (float, 1e-4),
    "p_exp": (float, 3.0),
    "grid_points": (int, 41),
    "x0": (float, 0.5),
    "y0": (int, 100),
    "eps_opt": (float, 1e-8),
    "lam_min": (float, 1e-30),
    "lam_max": (float, 1e30),
    "memory": (int, 10),
    "gamma_ls": (float, 1e-4),
    "frames": (str, ""),
    "out": (str, "out"),
}


class ConfigError(ValueError):
    pass


def parse_config_file(path):
    """Flat key=value lines; '#' starts a comment; unknown keys rejected."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        typ = CONFIG_SCHEMA[key][0]
        try:
            values[key] = typ(val)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: bad {typ.__name__} value {val!r} for {key}")
    return values


def effective_config(args):
    """Merge defaults, config file, and command-line overrides."""
    cfg = {k: d for k, (_, d) in CONFIG_SCHEMA.items()}
    if args.config:
        cfg.update(parse_config_file(args.config))
    for key in CONFIG_SCHEMA:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def write_effective_config(path, cfg):
    with open(path, "w") as fh:
        for key in CONFIG_SCHEMA:
            fh.write(f"{key}={cfg[key]!r}\n".replace("'", ""))


def ir_params_from(cfg):
    return IRParams(theta0=cfg["theta0"], nu=cfg["nu"], r_ir=cfg["r_ir"],
                    alpha=cfg["alpha"], beta=cfg["beta"],
                    eps_feas=cfg["eps_feas"], eps_dist=cfg["eps_dist"],
                    eta=cfg["eta"])


def moa_params_from(cfg):
    return MOAParams(sigma_min=cfg["sigma_min"], gamma=cfg["gamma"],
                     p_exp=cfg["p_exp"], eta=cfg["eta"],
                     grid_points=cfg["grid_points"])


def load_frames(cfg):
    return db.load_reference_frames(cfg["frames"] or None)


def _write_snapshots(outdir, frames_stack, ref, c, prefix="snap"):
    """Aligned per-frame snapshots as ASCII and PGM, plus their agreements."""
    lines = []
    total = 0
    for kappa, t in enumerate(db.FRAME_TIMES):
        i = int(np.floor(c * t))
        if i < frames_stack.shape[0]:
            snap = frames_stack[i]
            agree = db.fitness(snap, ref[kappa])
        else:
            snap = np.zeros((db.GRID_ROWS, db.GRID_COLS), dtype=np.uint8)
            agree = 0
        total += agree
        stem = os.path.join(outdir, f"{prefix}_t{t}")
        with open(stem + ".txt", "w") as fh:
            fh.write(db.frame_to_ascii(snap))
        db.write_frame_pgm(stem + ".pgm", snap)
        lines.append(f"t={t} iterate={i} agreements={agree}")
    lines.append(f"total={total}")
    return lines, total


def cmd_run(args):
    cfg = effective_config(args)
    ref, _ = load_frames(cfg)
    problem = db.DamProblem(ref)
    params = ir_params_from(cfg)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    write_effective_config(os.path.join(outdir, "effective_config.txt"), cfg)
    result = run_ir(problem, params, cfg["x0"], problem.token(cfg["y0"]),
                    moa_params=moa_params_from(cfg))
    write_trace_csv(os.path.join(outdir, "trace.csv"), result, problem)

    x_fin, y_fin = result.x_final, result.y_final
    detail = problem.details(x_fin, y_fin.budget)
    lines, total = _write_snapshots(
        outdir, db.run_collapse(x_fin, y_fin.budget)[0], ref, detail.c)
    summary = [
        f"status={result.status}",
        f"x_final={x_fin!r}",
        f"y_final={y_fin.budget}",
        f"f_final={detail.f:.17g}",
        f"matched={detail.matched}/{db.TOTAL_CELLS}",
        f"c={detail.c!r}",
        f"certificate_passed={result.certificate.passed if result.certificate else False}",
    ] + lines
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    for line in summary:
        print(line)
    if result.status != "converged":
        return EXIT_BUDGET
    return EXIT_OK


def gradcheck_max_error(n_balls=10, n_configs=20, seed=20200508,
                        step=1e-6, break_gradient=False):
    """Max relative error of the analytic gradient against central
    differences over random configurations with overlapping pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(n_configs):
        # cluster scale alternates so roughly half the configs overlap
        scale = 0.3 if trial % 2 else 2.0
        pos = rng.uniform(0.05, scale, size=(n_balls, 2))
        x = float(rng.uniform(0.1, 0.999))
        g = db.energy_gradient(pos, x)
        if break_gradient:
            g = g.copy()
            g[:, 1] -= 2.0 * (1.0 - x)   # test hook: negate the gravity term
        fd = np.empty_like(g)
        flat = pos.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = db.energy(pos, x)
            flat[i] = old - step
            fm = db.energy(pos, x)
            flat[i] = old
            fd.ravel()[i] = (fp - fm) / (2.0 * step)
        denom = max(1.0, float(np.max(np.abs(fd))))
        worst = max(worst, float(np.max(np.abs(g - fd))) / denom)
    return worst


def cmd_gradcheck(args):
    cfg = effective_config(args)   # validates config even if unused
    del cfg
    err = gradcheck_max_error(n_balls=args.n_balls,
                              break_gradient=args.break_gradient)
    print(f"gradcheck max relative error: {err:.3e}")
    if err <= 1e-5:
        print("gradcheck: PASS")
        return EXIT_OK
    print("gradcheck: FAIL")
    return EXIT_CHECK_FAILED


def cmd_frames(args):
    cfg = effective_config(args)
    ref, _ = load_frames(cfg)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    frames_stack, traj = db.run_collapse(args.x, args.y)
    table = db.fitness_table(frames_stack, ref)
    matched, c = db.best_alignment(table)
    lines, total = _write_snapshots(outdir, frames_stack, ref, c)
    print(f"x={args.x} y={args.y} ybar={traj.iterations} c={c!r} "
          f"matched={matched}/{db.TOTAL_CELLS}")
    for line in lines:
        print(line)
    if total != matched:
        print("internal error: snapshot agreements do not sum to the score",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def spg_demo_suite(n=20, count=25, seed=987, max_iter=10000):
    """Separable box-constrained quadratics with closed-form solutions.

    Returns (max sup-norm error, number converged, count).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    converged = 0
    for _ in range(count):
        q = rng.uniform(0.5, 5.0, size=n)
        target = rng.uniform(-2.0, 2.0, size=n)
        lo = np.zeros(n)
        hi = np.ones(n)
        box = BoxConstraint(lower=lo, upper=hi)
        exact = np.clip(target, lo, hi)
        res = spg_run(lambda z: float(0.5 * np.sum(q * (z - target) ** 2)),
                      lambda z: q * (z - target),
                      rng.uniform(0.0, 1.0, size=n), box,
                      SpgParams(max_iter=max_iter))
        worst = max(worst, float(np.max(np.abs(res.point - exact))))
        converged += int(res.converged)
    return worst, converged, count


def cmd_spg_demo(args):
    cfg = effective_config(args)
    del cfg
    worst, converged, count = spg_demo_suite(max_iter=args.max_iter)
    print(f"spg-demo: {converged}/{count} converged, "
          f"max distance to closed form {worst:.3e}")
    if worst <= 1e-6:
        return EXIT_OK
    if converged < count:
        return EXIT_BUDGET
    return EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(
        prog="irdfo",
        description="Variable-accuracy inexact-restoration fit of the "
                    "column-collapse model.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--frames", help="reference frames file "
                                        "(default: shipped data)")
        p.add_argument("--out", help="output directory")
        for key, (typ, default) in CONFIG_SCHEMA.items():
            if key in ("frames", "out"):
                continue
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ,
                           default=None, metavar="V",
                           help=f"override {key} (default {default!r})")

    p_run = sub.add_parser("run", help="drive the full fit and write a trace")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_grad = sub.add_parser("gradcheck",
                            help="finite-difference gradient check")
    add_common(p_grad)
    p_grad.add_argument("--n-balls", type=int, default=10)
    p_grad.add_argument("--break-gradient", action="store_true",
                        help="negative control: corrupt one gradient term")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_frames = sub.add_parser("frames",
                              help="render aligned snapshots for one (x, y)")
    add_common(p_frames)
    p_frames.add_argument("--x", type=float, required=True)
    p_frames.add_argument("--y", type=int, required=True)
    p_frames.set_defaults(func=cmd_frames)

    p_spg = sub.add_parser("spg-demo",
                           help="solver sanity suite on box quadratics")
    add_common(p_spg)
    p_spg.add_argument("--max-iter", type=int, default=10000)
    p_spg.set_defaults(func=cmd_spg_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, db.FramesParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionViolation as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
