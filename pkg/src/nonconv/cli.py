"""Command line entry points.

Every command reads its model pieces from a TOML file (see modelio), prints a
deterministic report to stdout or --out, and exits 0 on success, 1 on a
validation problem, 2 on a computational failure, 3 on a usage error.
Floats are rendered with 17 significant digits in both report formats, and
every report carries the model's configuration hash plus the seed and kernel
backend whenever sampling was involved.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys

import numpy as np

from . import kernels
from .conttime import (
    duality_check_cont,
    exp_moment_functional,
    q_cont,
    rate_function_cont,
    simulate_slow_motion,
)
from .errors import NonconvError, ValidationError
from .lattice import (
    lattice_census,
    mdp_coefficients,
    prime_basis,
    q_series,
    rate_function_iid,
    smooth_levels,
)
from .markov import duality_check, q_functional, rate_function_markov
from .model import QSchedule, stationary_distribution
from .modelio import load_model
from .simulate import (
    IIDSource,
    MarkovSource,
    empirical_rate,
    log_moment_estimate,
    mdp_empirical,
)
from .symbolic import q_dynamical, sft_pressure


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _fmt_tree(value):
    if isinstance(value, dict):
        return {k: _fmt_tree(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [_fmt_tree(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_fmt_tree(v) for v in value]
    return _fmt(value)


def _emit(report: dict, table: dict | None, args) -> None:
    fmt = args.format
    if fmt is None:
        fmt = "csv" if (args.out or "").endswith(".csv") else "json"
    if fmt == "json":
        import json

        payload = _fmt_tree(report)
        if table is not None:
            payload["table"] = {
                "columns": list(table["columns"]),
                "rows": _fmt_tree(table["rows"]),
            }
        text = json.dumps(payload, indent=2) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if table is not None:
            for key, value in report.items():
                buf.write(f"# {key}={_fmt(value)}\n")
            writer.writerow(table["columns"])
            for row in table["rows"]:
                writer.writerow([_fmt(v) for v in row])
        else:
            writer.writerow(["key", "value"])
            for key, value in report.items():
                writer.writerow([key, _fmt(value)])
        text = buf.getvalue()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _infer_kind(model, explicit: str | None) -> str:
    if explicit and explicit != "auto":
        return explicit
    declared = [
        kind
        for kind, piece in (("iid", "mu"), ("markov", "P"), ("cont", "generator"))
        if getattr(model, piece) is not None
    ]
    if len(declared) != 1:
        raise ValidationError(
            "cannot infer the model kind; pass --kind (declared: "
            + (", ".join(declared) or "none")
            + ")"
        )
    return declared[0]


def _alphas_of(model):
    return model.alpha if model.alpha is not None else 1.0


# ---------------------------------------------------------------------------
# command handlers


def _cmd_validate(args):
    model = load_model(args.model)
    report = {
        "command": "validate",
        "config_hash": model.config_hash,
        "declared": ",".join(model.declared),
        "ok": True,
    }
    return report, None


def _cmd_q(args):
    model = load_model(args.model)
    kind = _infer_kind(model, args.kind)
    model.require("observable")
    W = model.observable * args.lam
    report = {
        "command": "q",
        "kind": kind,
        "config_hash": model.config_hash,
        "lam": args.lam,
    }
    table = None
    if kind == "markov":
        model.require("P")
        mu = stationary_distribution(model.P)
        report["value"] = q_functional(model.P, mu, W)
    elif kind == "iid":
        model.require("mu")
        res = q_series(
            W,
            model.mu,
            l_max=args.l_max,
            strategy=args.strategy,
            samples=args.samples,
            seed=args.seed,
        )
        report["value"] = res.value
        report["tail_bound"] = res.tail_bound
        report["mc_stderr"] = res.mc_stderr
        report["density"] = res.density
        report["seed"] = args.seed
        table = {
            "columns": ["level", "weight", "log_partition", "strategy"],
            "rows": [
                [l + 1, res.weights[l], res.log_partitions[l], res.strategies[l]]
                for l in range(res.l_max)
            ],
        }
    else:
        model.require("generator")
        res = q_cont(W, model.generator, _alphas_of(model))
        report["value"] = res.value
        report["alpha1"] = res.alpha1
    return report, table


def _cmd_rate(args):
    model = load_model(args.model)
    kind = _infer_kind(model, args.kind)
    model.require("observable")
    F = model.observable
    u_grid = None
    if args.u_min is not None or args.u_max is not None:
        if args.u_min is None or args.u_max is None:
            raise ValidationError("--u-min and --u-max go together")
        u_grid = np.linspace(args.u_min, args.u_max, args.u_points)
    kwargs = {"lam_lo": args.lam_lo, "lam_hi": args.lam_hi}
    if kind == "markov":
        model.require("P")
        mu = stationary_distribution(model.P)
        rf = rate_function_markov(model.P, mu, F, u_grid, **kwargs)
    elif kind == "iid":
        model.require("mu")
        rf = rate_function_iid(
            F,
            model.mu,
            u_grid,
            l_max=args.l_max,
            strategy=args.strategy,
            samples=args.samples,
            seed=args.seed,
            **kwargs,
        )
    else:
        model.require("generator")
        rf = rate_function_cont(F, model.generator, _alphas_of(model), u_grid, **kwargs)
    report = {
        "command": "rate",
        "kind": kind,
        "config_hash": model.config_hash,
        "u_min_attainable": rf.u_min,
        "u_max_attainable": rf.u_max,
    }
    table = {
        "columns": ["u", "rate", "multiplier"],
        "rows": [
            [rf.u_grid[i], rf.j_values[i], rf.multipliers[i]]
            for i in range(rf.u_grid.size)
        ],
    }
    return report, table


def _cmd_lattice(args):
    basis = prime_basis(args.k)
    census = lattice_census(args.n, basis)
    levels = smooth_levels(basis, args.l_max)
    report = {
        "command": "lattice",
        "k": args.k,
        "n": args.n,
        "primes": ",".join(str(p) for p in basis.primes),
        "density": census.density,
        "coprime_total": census.total,
        "deviation": census.deviation,
    }
    rows = []
    for level in range(1, census.counts.size):
        count = int(census.counts[level])
        if count == 0:
            continue
        weight = levels.weight(level) if level <= levels.l_max else math_nan()
        rows.append(
            [
                level,
                count,
                count / census.n,
                weight,
                census.representatives.get(level, ""),
            ]
        )
    table = {
        "columns": ["level", "count", "fraction", "weight", "first_base"],
        "rows": rows,
    }
    return report, table


def math_nan() -> float:
    return float("nan")


def _build_source(model):
    if model.mu is not None:
        return IIDSource(model.mu)
    if model.P is not None:
        return MarkovSource(model.P, model.initial)
    raise ValidationError("model declares no sequence source (mu or P)")


def _cmd_simulate(args):
    model = load_model(args.model)
    model.require("observable", "schedule")
    source = _build_source(model)
    est = log_moment_estimate(
        model.observable,
        source,
        model.schedule,
        args.n_steps,
        args.replicates,
        lam=args.lam,
        seed=args.seed,
        threads=args.threads,
    )
    report = {
        "command": "simulate",
        "config_hash": model.config_hash,
        "seed": args.seed,
        "backend": kernels.BACKEND,
        "n_steps": est.n_steps,
        "replicates": est.replicates,
        "lam": est.lam,
        "value": est.value,
        "stderr": est.stderr,
    }
    if args.threshold is not None:
        er = empirical_rate(
            model.observable,
            source,
            model.schedule,
            args.n_steps,
            args.replicates,
            threshold=args.threshold,
            tilt=args.tilt,
            seed=args.seed,
            threads=args.threads,
        )
        report["threshold"] = er.threshold
        report["probability"] = er.probability
        report["rate"] = er.rate
        report["rate_stderr"] = er.stderr
        report["censored"] = er.censored
        report["method"] = er.method
    return report, None


def _cmd_pressure(args):
    model = load_model(args.model)
    model.require("sft")
    report = {
        "command": "pressure",
        "config_hash": model.config_hash,
        "entropy": sft_pressure(model.sft, None),
        "pressure": sft_pressure(model.sft, model.potential),
    }
    if model.observable is not None:
        report["q_dynamical"] = q_dynamical(model.observable, model.sft, model.potential)
    return report, None


def _cmd_average(args):
    model = load_model(args.model)
    model.require("field")
    report = {
        "command": "average",
        "config_hash": model.config_hash,
        "seed": args.seed,
        "backend": kernels.BACKEND,
        "epsilon": args.epsilon,
        "replicates": args.replicates,
    }
    if args.moment:
        check = exp_moment_functional(
            model.field,
            args.epsilon,
            args.replicates,
            seed=args.seed,
            threads=args.threads,
        )
        report["lhs"] = check.lhs
        report["rhs"] = check.rhs
        report["stderr"] = check.stderr
        report["gap"] = check.lhs - check.rhs
        return report, None
    dim = model.field.dim
    if dim is None:
        raise ValidationError("field cells declare no drift; use --moment instead")
    z0 = np.zeros(dim) if not args.z0 else np.asarray(args.z0, dtype=np.float64)
    motion = simulate_slow_motion(
        model.field,
        args.epsilon,
        z0,
        args.replicates,
        seed=args.seed,
        rk_step=args.rk_step,
        grid_points=args.grid_points,
        threads=args.threads,
    )
    report["mean_sup_distance"] = motion.mean_sup_distance
    report["max_sup_distance"] = float(motion.sup_distances.max())
    for i, v in enumerate(motion.averaged[-1]):
        report[f"averaged_final_{i}"] = float(v)
    return report, None


def _cmd_mdp(args):
    model = load_model(args.model)
    model.require("observable", "mu")
    coeffs = mdp_coefficients(model.observable, model.mu, l_max=args.l_max)
    report = {
        "command": "mdp",
        "config_hash": model.config_hash,
        "lambda_inv": coeffs.lambda_inv,
        "tail_bound": coeffs.tail_bound,
        "density": coeffs.density,
    }
    table = {
        "columns": ["level", "weight", "upsilon"],
        "rows": [
            [l + 1, coeffs.weights[l], coeffs.upsilons[l]]
            for l in range(coeffs.l_max)
        ],
    }
    if args.empirical:
        schedule = model.schedule
        if schedule is None:
            k = model.observable.arity
            schedule = QSchedule(k=k, ell=k)
        est = mdp_empirical(
            model.observable,
            IIDSource(model.mu),
            schedule,
            args.n_steps,
            args.replicates,
            seed=args.seed,
            threads=args.threads,
        )
        report["empirical_second_moment"] = est.second_moment
        report["empirical_stderr"] = est.stderr
        report["seed"] = args.seed
        report["backend"] = kernels.BACKEND
    return report, table


def _cmd_duality(args):
    model = load_model(args.model)
    kind = _infer_kind(model, args.kind)
    model.require("observable")
    if kind == "markov":
        model.require("P")
        mu = stationary_distribution(model.P)
        res = duality_check(
            model.observable, model.P, mu, restarts=args.restarts, seed=args.seed
        )
    elif kind == "cont":
        model.require("generator")
        res = duality_check_cont(
            model.observable, model.generator, restarts=args.restarts, seed=args.seed
        )
    else:
        raise ValidationError("duality is defined for markov and cont models")
    report = {
        "command": "duality",
        "kind": kind,
        "config_hash": model.config_hash,
        "seed": args.seed,
        "q_value": res.q_value,
        "pairing": res.pairing,
        "gap": res.gap,
        "rate_at_maximizer": res.rate_value,
        "converged": res.converged,
    }
    return report, None


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _add_output(p: argparse.ArgumentParser):
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), help="report format")


def _add_series(p: argparse.ArgumentParser):
    p.add_argument("--l-max", type=int, default=40)
    p.add_argument("--strategy", default="auto",
                   choices=("auto", "transfer", "exact", "montecarlo"))
    p.add_argument("--samples", type=int, default=200_000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nonconv")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse and validate a model file")
    p.add_argument("model")
    _add_output(p)
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("q", help="moment growth rate of the model's observable")
    p.add_argument("model")
    p.add_argument("--kind", default="auto", choices=("auto", "iid", "markov", "cont"))
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    _add_series(p)
    _add_output(p)
    p.set_defaults(handler=_cmd_q)

    p = sub.add_parser("rate", help="rate function on a grid of displacements")
    p.add_argument("model")
    p.add_argument("--kind", default="auto", choices=("auto", "iid", "markov", "cont"))
    p.add_argument("--u-min", type=float)
    p.add_argument("--u-max", type=float)
    p.add_argument("--u-points", type=int, default=41)
    p.add_argument("--lam-lo", type=float, default=-20.0)
    p.add_argument("--lam-hi", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    _add_series(p)
    _add_output(p)
    p.set_defaults(handler=_cmd_rate)

    p = sub.add_parser("lattice", help="census of coprime bases by chain level")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--l-max", type=int, default=40)
    _add_output(p)
    p.set_defaults(handler=_cmd_lattice)

    p = sub.add_parser("simulate", help="Monte Carlo log-moment (and tail rate)")
    p.add_argument("model")
    p.add_argument("--n-steps", type=int, required=True)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--tilt", type=float)
    _add_output(p)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("pressure", help="pressure of the model's shift")
    p.add_argument("model")
    _add_output(p)
    p.set_defaults(handler=_cmd_pressure)

    p = sub.add_parser("average", help="slow motion against its averaged limit")
    p.add_argument("model")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--z0", type=float, nargs="*")
    p.add_argument("--rk-step", type=float, default=1e-2)
    p.add_argument("--grid-points", type=int, default=257)
    p.add_argument("--moment", action="store_true",
                   help="check the exponential-moment functional instead")
    _add_output(p)
    p.set_defaults(handler=_cmd_average)

    p = sub.add_parser("mdp", help="variance-scale coefficients")
    p.add_argument("model")
    p.add_argument("--l-max", type=int, default=40)
    p.add_argument("--empirical", action="store_true")
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    _add_output(p)
    p.set_defaults(handler=_cmd_mdp)

    p = sub.add_parser("duality", help="variational pairing against the growth rate")
    p.add_argument("model")
    p.add_argument("--kind", default="auto", choices=("auto", "markov", "cont"))
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)
    p.set_defaults(handler=_cmd_duality)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        report, table = args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(report, table, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
