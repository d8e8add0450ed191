"""Command-line interface.

Subcommands::

    ftcgt graph  --kind path --K 8                  # edge list
    ftcgt ftc    --kind path --K 8 [--eps 0.3] [--tau-prime 3]
    ftcgt run    --preset fig2 | --config cfg.json  [--seed N] [--out DIR]
    ftcgt sweep  --preset fig2 --axis eps --values 0 0.3 0.6
    ftcgt bounds --mu 1e-3 --tau 3 --eps 0.3 --K 8 --nu 0.5 --delta 2 ...
    ftcgt bounds --preset fig3                      # constants from the data

On failure a single line ``error type=<ExceptionName> message="<text>"``
is printed to stderr and the exit status is 2 (1 for internal errors).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import bounds as bnd
from .experiments import (PRESETS, SWEEP_AXES, ConfigError, build_sequence, load_config, preset,
                          run_experiment, summary_csv, sweep, validate_config, write_outputs)
from .ftc import (CONSTRUCTIONS, FTCError, dumps_sequence, exact_sequence, metropolis_sequence,
                  perturb_to_target, reorder_for_prefix, truncate, validate_mixing)
from .graph import GraphError, build_graph, metropolis_weights, second_largest_eigenvalue, to_edgelist
from .problem import ProblemError, generate

USER_ERRORS = (ConfigError, FTCError, GraphError, ProblemError, bnd.BoundError, ValueError, OSError)


def _write(text: str, out: str | None, default_name: str):
    if out is None:
        sys.stdout.write(text)
        return
    path = out
    if os.path.isdir(out) or out.endswith(os.sep):
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, default_name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote={path}")


def _config_from(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.preset:
        cfg = preset(args.preset, seed=args.seed, out_dir=args.out)
    elif args.config:
        cfg = load_config(args.config)
        raw = json.loads(json.dumps(cfg))
        if args.seed is not None:
            raw["monte_carlo"]["seed_base"] = args.seed
        if args.out is not None:
            raw["outputs"]["dir"] = args.out
        cfg = validate_config(raw)
    else:
        raise ConfigError("one of --config or --preset is required")
    return cfg


def cmd_graph(args):
    g = build_graph(args.kind, args.K)
    text = to_edgelist(g)
    if args.metropolis:
        A = metropolis_weights(g)
        text += f"# metropolis lambda2={second_largest_eigenvalue(A):.17g}\n"
    _write(text, args.out, f"{args.kind}{args.K}.edges")


def cmd_ftc(args):
    g = build_graph(args.kind, args.K)
    if args.metropolis:
        seq = metropolis_sequence(g)
    else:
        seq = exact_sequence(g, construction=args.construction, ordering=args.ordering,
                             seed=args.design_seed)
    if args.eps is not None and args.eps > seq.epsilon:
        seq = perturb_to_target(seq, args.eps, args.seed if args.seed is not None else 1, tol=args.tol)
    if args.tau_prime is not None:
        if args.reorder:
            seq = reorder_for_prefix(seq, args.tau_prime)
        seq = truncate(seq, args.tau_prime)
    lines = [f"label={seq.label}", f"K={seq.K}", f"tau={seq.tau}", f"epsilon={seq.epsilon:.17g}",
             f"mixing_ok={str(all(seq.mixing_ok)).lower()}"]
    for j, r in enumerate(validate_mixing(seq)):
        lines.append(f"matrix{j + 1}=symmetry_defect:{r['symmetry_defect']:.3g} "
                     f"row_sum_defect:{r['row_sum_defect']:.3g} spectral_radius:{r['spectral_radius']:.17g} "
                     f"ok:{str(r['ok']).lower()}")
    print("\n".join(lines))
    if args.out is not None:
        _write(dumps_sequence(seq), args.out, f"{args.kind}{args.K}_sequence.txt")


def _print_summary(result):
    for s in result.series:
        print(f"series={s.label} tau={s.tau} epsilon={s.epsilon:.6g} steady_msd={s.steady_msd:.6g} "
              f"steady_db={s.steady_db:.3f} se={s.steady_se:.3g} diverged_runs={len(s.diverged)} "
              f"bound={s.bound.steady_state if s.bound else float('nan'):.6g}")


def cmd_run(args):
    cfg = _config_from(args)
    result = run_experiment(cfg)
    for p in write_outputs(result):
        print(f"wrote={p}")
    _print_summary(result)
    if result.flagged:
        print("flagged=true divergent runs recorded in the summary", file=sys.stderr)


def cmd_sweep(args):
    cfg = _config_from(args)
    results, text = sweep(cfg, args.axis, args.values)
    out_dir = cfg["outputs"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{cfg['name']}_sweep_{args.axis}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote={path}")
    sys.stdout.write(text)


def cmd_bounds(args):
    if args.preset or args.config:
        cfg = _config_from(args)
        mu = args.mu if args.mu is not None else cfg["optimizer"]["mu"]
        problems = {}
        for s in cfg["series"]:
            K = s["topology"]["K"]
            if K not in problems:
                p = cfg["problem"]
                problems[K] = generate(K, p["M"], p["N"], p["noise_variance"], p["seed"])
            seq = build_sequence(s)
            consts = problems[K].optima_and_constants()[2]
            print(f"series={s['label']}")
            try:
                c = bnd.evaluate(bnd.inputs_from_problem(consts, mu, seq.tau, seq.epsilon, K))
                sys.stdout.write(bnd.format_report(c))
            except bnd.BoundError as exc:
                print(f"error={exc}")
        return
    need = ("mu", "tau", "eps", "K", "nu", "delta", "sigma_sq", "beta_sq", "zeta_sq")
    missing = [n for n in need if getattr(args, n) is None]
    if missing:
        raise ConfigError("bounds needs --preset/--config or all of " + ", ".join("--" + m.replace("_", "-")
                                                                                  for m in missing))
    b = bnd.BoundInputs(**{n: getattr(args, n) for n in need})
    _write(bnd.format_report(bnd.evaluate(b)), args.out, "bounds.txt")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ftcgt", description="Gradient tracking over finite-time consensus sequences.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None, help="seed (Monte-Carlo base or perturbation seed)")
        p.add_argument("--out", default=None, help="output file or directory")
        if config:
            p.add_argument("--config", default=None, help="JSON experiment config")
            p.add_argument("--preset", choices=sorted(PRESETS), default=None)

    p = sub.add_parser("graph", help="emit a topology as an edge list")
    p.add_argument("--kind", required=True, choices=("path", "ring", "hypercube", "complete"))
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--metropolis", action="store_true", help="also report the Metropolis second eigenvalue")
    common(p, config=False)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("ftc", help="build, perturb or truncate a sequence and report epsilon")
    p.add_argument("--kind", required=True, choices=("path", "ring", "hypercube", "complete"))
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--construction", choices=CONSTRUCTIONS, default="auto")
    p.add_argument("--ordering", choices=("descending", "ascending", "leja"), default="descending")
    p.add_argument("--design-seed", type=int, default=0)
    p.add_argument("--metropolis", action="store_true", help="use the static Metropolis matrix")
    p.add_argument("--eps", type=float, default=None, help="perturb to this target epsilon")
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--tau-prime", type=int, default=None, help="truncate to this prefix length")
    p.add_argument("--reorder", action="store_true", help="reorder factors to minimise the prefix error")
    common(p, config=False)
    p.set_defaults(func=cmd_ftc)

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one axis of an experiment")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", type=float, nargs="+", required=True)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="evaluate the bound constants")
    for n, t in (("mu", float), ("tau", int), ("eps", float), ("K", int), ("nu", float),
                 ("delta", float), ("sigma-sq", float), ("beta-sq", float), ("zeta-sq", float)):
        p.add_argument(f"--{n}", type=t, default=None)
    common(p)
    p.set_defaults(func=cmd_bounds)
    return ap


def _error_line(exc) -> str:
    msg = str(exc).replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
    return f'error type={type(exc).__name__} message="{msg}"'


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except USER_ERRORS as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report anything else in the same format
        print(_error_line(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
