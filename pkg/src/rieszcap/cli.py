"""Command-line entry point: ``rieszcap <command> ...``.

Exit codes: 0 success, 1 failed check or solver failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__, decay, density, energy, properties
from .geometry import (cantor_dust_spec, cantor_spec, ifs_attractor, load_cloud, sample_cube,
                       sample_sphere, save_cloud, similarity_dimension, union)

log = logging.getLogger("rieszcap")

# Cantor constants used for the exploratory decay table
CANTOR_SIGMA_REFERENCE = 0.9654


GLOBAL_KEYS = {"verbose"}


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


# --- config handling ----------------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys mirror long flags."""
    cfg = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line without '=': {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key.replace("_", "-")] = value
    return cfg


def config_tokens(cfg: dict) -> list[str]:
    tokens = []
    for key, value in cfg.items():
        low = value.lower()
        if low in ("true", "yes", "on"):
            tokens.append(f"--{key}")
        elif low in ("false", "no", "off"):
            continue
        else:
            tokens.append(f"--{key}")
            tokens.extend(shlex.split(value))
    return tokens


def effective_config(args: argparse.Namespace) -> dict:
    # output destinations do not change content, so they stay out of the digest
    skip = {"func", "config", "verbose", "out", "out_dir", "json", "weights_out", "matrix_out"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = v
    return out


def header_for(args: argparse.Namespace) -> str:
    cfg = json.dumps(effective_config(args), sort_keys=True, default=str)
    dig = hashlib.sha256(cfg.encode()).hexdigest()[:16]
    return f"rieszcap {__version__} config-digest={dig}\nconfig {cfg}"


def _write_or_print(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(x) -> str:
    return format(float(x), ".17g")


# --- commands -------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.kind == "sphere":
        n = args.n if args.n else args.d + 1
        cloud = sample_sphere(args.d, n, args.N, args.seed)
    elif args.kind == "cube":
        n = args.n if args.n else args.d
        cloud = sample_cube(args.d, n, args.m, args.offset)
    elif args.kind == "ifs":
        if args.dust:
            spec = cantor_dust_spec()
        elif args.cantor:
            spec = cantor_spec()
        else:
            raise UsageError("gen ifs needs --cantor or --dust")
        cloud = ifs_attractor(spec, args.depth)
    elif args.kind == "union":
        if not args.inputs:
            raise UsageError("gen union needs --inputs")
        cloud = union([load_cloud(p) for p in args.inputs])
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(args.kind)
    if not args.out:
        raise UsageError("gen needs --out")
    save_cloud(cloud, args.out, header_for(args))
    print(f"wrote {len(cloud)} points to {args.out}: n={cloud.n} d={cloud.d:.12g} "
          f"total_weight={cloud.total_weight:.12g} label={cloud.label}")
    return 0


def _policy(args, d, p_ref, N=None, cloud=None) -> energy.DiagPolicy:
    if args.diag_c is not None:
        return energy.DiagPolicy(args.policy, args.diag_c)
    if args.calibrate:
        if not float(d).is_integer():
            raise UsageError("calibration against the sphere needs integer d")
        c = energy.calibrate_diag(int(d), p_ref, N, kind=args.policy)
        log.info("calibrated %s constant c=%.12g at p=%.6g", args.policy, c, p_ref)
        return energy.DiagPolicy(args.policy, c)
    if args.policy == "self_ball":
        return energy.self_ball(None, d)
    raise UsageError("cell_ball needs --diag-c or --calibrate")


def cmd_capacity(args) -> int:
    if args.p is None:
        raise UsageError("--p is required")
    if args.exact_sphere:
        if args.d is None:
            raise UsageError("--exact-sphere needs --d")
        if not 0 < args.p < args.d:
            raise UsageError(f"p must lie in (0, d={args.d})")
        cap = energy.sphere_capacity_exact(args.d, args.p)
        text = "p,energy,cap,bound_direction,method\n"
        text += f"{_fmt(args.p)},{_fmt(cap ** -args.p)},{_fmt(cap)},exact,sphere_formula\n"
        _write_or_print(_with_header(args, text), args.out)
        return 0
    if not args.cloud:
        raise UsageError("give --cloud or --exact-sphere")
    cloud = load_cloud(args.cloud)
    if not 0 < args.p < cloud.d:
        raise UsageError(f"p must lie in (0, d={cloud.d:g}) for a finite-energy capacity")
    policy = _policy(args, cloud.d, args.p, len(cloud), cloud)
    K = energy.kernel_matrix(cloud, args.p, policy)
    eq = energy.solve_equilibrium(K, args.tol, args.max_iter)
    cap = energy.capacity(eq.estimate)
    text = "p,energy,cap,bound_direction,method,iterations,gap,converged\n"
    text += (f"{_fmt(args.p)},{_fmt(eq.estimate.value)},{_fmt(cap)},{eq.estimate.bound_direction},"
             f"{eq.estimate.method},{eq.iterations},{_fmt(eq.gap)},{eq.converged}\n")
    _write_or_print(_with_header(args, text), args.out)
    if args.weights_out:
        energy.write_weights_csv(eq.weights, args.weights_out, header_for(args))
    if args.matrix_out:
        energy.write_matrix(K, args.matrix_out)
    if not eq.converged and not args.allow_nonconverged:
        raise CheckFailed("equilibrium solve did not converge (use --allow-nonconverged to accept)")
    return 0


def _with_header(args, text: str) -> str:
    return "".join(f"# {line}\n" for line in header_for(args).splitlines()) + text


def _p_grid(args, d) -> np.ndarray:
    if args.gaps:
        gaps = sorted(args.gaps, reverse=True)
        return np.array([d - g for g in gaps])
    if args.p_lo is not None or args.p_hi is not None:
        lo = args.p_lo if args.p_lo is not None else d - 0.5
        hi = args.p_hi if args.p_hi is not None else d - 0.02
        return decay.geometric_p_grid(d, lo, hi, args.count)
    return decay.default_p_grid(d, min_gap=None if args.exact_sphere else 0.02, K=args.count - 1)


def _report_limit(curve, scheme) -> tuple[float, float, dict]:
    ratios = decay.decay_ratio(curve)
    limit, diag = decay.extrapolate_limit(ratios, curve.d, scheme)
    return limit, decay.hausdorff_from_decay(limit, curve.d), diag


def cmd_decay(args) -> int:
    if args.figures:
        out_dir = Path(args.out_dir or ".")
        for path in decay.write_figure_data(out_dir, header_for(args)):
            print(f"wrote {path}")
        return 0
    if args.cantor_probe:
        return _cantor_probe(args)
    if args.exact_sphere:
        if args.d is None:
            raise UsageError("--exact-sphere needs --d")
        curve = decay.exact_sphere_curve(args.d, _p_grid(args, args.d))
    elif args.cloud:
        cloud = load_cloud(args.cloud)
        grid = _p_grid(args, cloud.d)
        p_ref = args.calibrate_at if args.calibrate_at is not None else float(grid.max())
        policy = _policy(args, cloud.d, p_ref, len(cloud), cloud)
        curve = decay.capacity_curve(cloud, grid, decay.SolverConfig(policy, args.tol, args.max_iter))
    else:
        raise UsageError("give --exact-sphere, --cloud, --cantor-probe or --figures")
    limit, H, diag = _report_limit(curve, args.scheme)
    _write_or_print(decay.curve_to_csv(curve, header_for(args)), args.out)
    print(f"# scheme={args.scheme} limit={limit:.12g} hausdorff_estimate={H:.12g} "
          f"error_estimate={diag.get('error_estimate', float('nan')):.3g}", file=sys.stderr)
    return 0 if all(curve.converged) or args.allow_nonconverged else 1


def _cantor_probe(args) -> int:
    spec = cantor_spec()
    d = similarity_dimension(spec)
    grid = _p_grid(args, d)
    depths = args.depths or [8, 9, 10, 11, 12]
    table = decay.fractal_decay_table(spec, depths, grid)
    sigma = args.sigma
    if sigma is None:
        cloud = ifs_attractor(spec, 10)
        sigma = density.average_second_order_density(cloud, d, args.M, args.seed).value
    target_est = decay.fractal_target(1.0, d, sigma)
    target_ref = decay.fractal_target(1.0, d, CANTOR_SIGMA_REFERENCE)
    rect = decay.rectifiable_target(1.0, d)
    lines = [f"# {line}" for line in header_for(args).splitlines()]
    lines.append(f"# sigma_estimate={sigma:.10g} fractal_target={target_est:.10g} "
                 f"fractal_target_reference={target_ref:.10g} rectifiable_value={rect:.10g}")
    lines.append("depth,p,cap,cap_pow_p,ratio,bound_direction,fractal_target")
    for e in table:
        lines.append(f"{e.depth},{_fmt(e.p)},{_fmt(e.cap)},{_fmt(e.cap ** e.p)},{_fmt(e.ratio)},"
                     f"{e.bound_direction},{_fmt(target_est)}")
    _write_or_print("\n".join(lines) + "\n", args.out)
    return 0


def cmd_density(args) -> int:
    if not args.cloud:
        raise UsageError("density needs --cloud")
    cloud = load_cloud(args.cloud)
    d = args.d if args.d is not None else cloud.d
    rows = []
    if args.kind == "ahlfors":
        value = density.ahlfors_constant(cloud, d)
        print(f"ahlfors_constant={value:.12g}")
        return 0
    if args.averaged:
        form = "log" if args.kind == "second_log" else "p"
        est = density.average_second_order_density(cloud, d, args.M, args.seed, form=form)
        for c, v in zip(est.diagnostics["centers"], est.diagnostics["values"]):
            rows.append((c, d, v))
        print(f"{est.kind} averaged value={est.value:.12g} spread={est.spread:.6g} M={args.M}")
    else:
        c = args.center
        if args.kind == "first":
            est = density.first_order_density(cloud, c, d, r_max=args.r_max)
            rows = [(c, r, v) for r, v in zip(est.schedule, est.diagnostics["ratios"])]
        elif args.kind == "second_log":
            est = density.second_order_density_log(cloud, c, d)
            rows = [(c, e, v) for e, v in zip(est.schedule, est.diagnostics["terms"])]
        else:
            kind = "second_upper" if args.kind == "second_upper" else "second_p_form"
            est = density.second_order_density(cloud, c, d, kind=kind, scheme=args.scheme)
            rows = [(c, p, v) for p, v in zip(est.schedule, est.diagnostics["terms"])]
        print(f"{est.kind} center={c} value={est.value:.12g} scatter={est.scatter:.6g}")
    if args.out:
        Path(args.out).write_text(density.traces_to_csv(rows, header_for(args)))
    return 0


def cmd_verify(args) -> int:
    suite = args.suite
    reps: list[properties.PropertyReport] = []
    if suite in ("subadditivity", "all"):
        reps.append(properties.subadditivity_suite(args.instances, args.seed))
        reps.append(properties.check_subadditivity(properties.equality_instance()))
    if suite in ("gotz", "all"):
        reps.append(properties.gotz_suite(50, args.seed))
    if suite == "monotonic":
        dims = [args.d] if args.d is not None else [1, 2, 3]
        if not args.exact:
            raise UsageError("only exact sphere curves are supported; pass --exact")
        reps += properties.monotonic_suite(dims)
    if suite == "scaling":
        reps += properties.scaling_suite(args.seed)
    if suite == "measure-scaling":
        reps.append(properties.check_measure_scaling(ifs_attractor(cantor_spec(), 8), 3.0, (0, 37, 200)))
    if suite == "ifs-weights":
        reps.append(properties.check_ifs_weights())
    if suite in ("invariants", "all"):
        reps += properties.invariant_suite(args.seed)
    if suite in ("density", "all"):
        reps.append(properties.check_density_lemmas(sample_sphere(1, 2, 4000)))
        reps.append(properties.check_density_lemmas(ifs_attractor(cantor_spec(), 10)))
    for r in reps:
        print(r.to_text())
    if args.json:
        Path(args.json).write_text(properties.reports_to_json(reps))
    failed = [r.name for r in reps if not r.passed]
    if failed:
        raise CheckFailed("failed: " + ", ".join(failed))
    print(f"all {len(reps)} checks passed")
    return 0


# --- parser ----------------------------------------------------------------------

def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=["cell_ball", "self_ball"], default="self_ball",
                   help="diagonal model for point self-interaction")
    p.add_argument("--diag-c", type=float, default=None, help="fixed diagonal constant")
    p.add_argument("--calibrate", action="store_true", help="calibrate the constant on the sphere")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--allow-nonconverged", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rieszcap", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file mirroring the long flags")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"rieszcap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    # --seed is accepted on either side of the command name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)

    g = sub.add_parser("gen", help="generate a point cloud", parents=[common])
    g.add_argument("kind", choices=["sphere", "cube", "ifs", "union"])
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--N", type=int, default=1000)
    g.add_argument("--m", type=int, default=10)
    g.add_argument("--offset", type=float, nargs="+", default=None)
    g.add_argument("--cantor", action="store_true")
    g.add_argument("--dust", action="store_true")
    g.add_argument("--depth", type=int, default=10)
    g.add_argument("--inputs", nargs="+", default=None)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("capacity", help="single capacity estimate", parents=[common])
    c.add_argument("--cloud")
    c.add_argument("--exact-sphere", action="store_true")
    c.add_argument("--d", type=int, default=None)
    c.add_argument("--p", type=float, default=None)
    c.add_argument("--out")
    c.add_argument("--weights-out")
    c.add_argument("--matrix-out")
    _solver_flags(c)
    c.set_defaults(func=cmd_capacity)

    dc = sub.add_parser("decay", help="capacity sweep p -> d and Hausdorff estimate", parents=[common])
    dc.add_argument("--cloud")
    dc.add_argument("--exact-sphere", action="store_true")
    dc.add_argument("--cantor-probe", action="store_true")
    dc.add_argument("--figures", action="store_true")
    dc.add_argument("--out-dir")
    dc.add_argument("--d", type=int, default=None)
    dc.add_argument("--gaps", type=float, nargs="+", default=None)
    dc.add_argument("--p-lo", type=float, default=None)
    dc.add_argument("--p-hi", type=float, default=None)
    dc.add_argument("--count", type=int, default=8)
    dc.add_argument("--scheme", choices=list(decay.SCHEMES), default="richardson")
    dc.add_argument("--calibrate-at", type=float, default=None)
    dc.add_argument("--depths", type=int, nargs="+", default=None)
    dc.add_argument("--sigma", type=float, default=None)
    dc.add_argument("--M", type=int, default=density.DEFAULT_CENTERS)
    dc.add_argument("--out")
    _solver_flags(dc)
    dc.set_defaults(func=cmd_decay)

    de = sub.add_parser("density", help="first/second-order densities", parents=[common])
    de.add_argument("--cloud")
    de.add_argument("--kind", choices=["first", "second_p", "second_log", "second_upper", "ahlfors"],
                    default="second_p")
    de.add_argument("--d", type=float, default=None)
    de.add_argument("--center", type=int, default=0)
    de.add_argument("--averaged", action="store_true")
    de.add_argument("--M", type=int, default=density.DEFAULT_CENTERS)
    de.add_argument("--r-max", type=float, default=1.0)
    de.add_argument("--scheme", choices=list(decay.SCHEMES), default="richardson")
    de.add_argument("--out")
    de.set_defaults(func=cmd_density)

    v = sub.add_parser("verify", help="run a property suite; nonzero exit on failure", parents=[common])
    v.add_argument("suite", choices=["subadditivity", "gotz", "monotonic", "scaling", "measure-scaling",
                                     "ifs-weights", "invariants", "density", "all"])
    v.add_argument("--instances", type=int, default=200)
    v.add_argument("--exact", action="store_true")
    v.add_argument("--d", type=int, default=None)
    v.add_argument("--json")
    v.set_defaults(func=cmd_verify)
    return parser


def _splice_config(argv: list[str]) -> list[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    cfg = read_config(known.config)
    top = config_tokens({k: v for k, v in cfg.items() if k in GLOBAL_KEYS})
    tokens = config_tokens({k: v for k, v in cfg.items() if k not in GLOBAL_KEYS})
    commands = {"gen", "capacity", "decay", "density", "verify"}
    for i, tok in enumerate(argv):
        if tok in commands:
            # file values go first so that explicit flags win
            return top + argv[:i + 1] + tokens + argv[i + 1:]
    return top + argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _splice_config(argv)
    except (UsageError, OSError) as exc:
        print(f"rieszcap: error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rieszcap: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"rieszcap: error: {exc}", file=sys.stderr)
        return 2
    except (CheckFailed, energy.CalibrationError) as exc:
        print(f"rieszcap: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
