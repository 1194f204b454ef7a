"""Command-line entry point: ``mixtailor {run,aggregate,attack,bounds,bench,pool}``."""

from __future__ import annotations

import argparse
import json
import sys

from .aggregators import PoolSpec, agg_mixtailor, aggregate, build_default_pool, parse_aggregator, validate_pool
from .attacks import AdversaryView, AttackCost, generate_attack, parse_attack, verify_attack
from .bounds import BoundInputs, capital_lambda, iid_bias_bound, mixtailor_sufficient_M, noniid_bias_bound
from .core import (
    ConfigurationError,
    DivergenceError,
    InvalidInputError,
    SeededRng,
    Stream,
    fmt,
    format_gradient_csv,
    read_gradient_csv,
)
from .harness import (
    CONFIG_KEYS,
    bench_aggregators,
    final_accuracy,
    format_bench,
    load_config,
    records_to_csv,
    run_experiment,
    run_omniscient_baseline,
)


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    overrides = {key: getattr(args, key) for key in CONFIG_KEYS if getattr(args, key, None) is not None}
    cfg = load_config(args.config, overrides)
    records = run_experiment(cfg)
    text = records_to_csv(records)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    out = sys.stderr if not args.out else sys.stdout
    acc = final_accuracy(records)
    print(f"final_test_accuracy = {fmt(acc)}", file=out)
    if cfg.baseline:
        base = final_accuracy(run_omniscient_baseline(cfg))
        print(f"omniscient_test_accuracy = {fmt(base)}", file=out)
        print(f"omniscient_gap = {fmt(base - acc)}", file=out)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    panel = read_gradient_csv(args.gradients)
    rule = parse_aggregator(args.agg, seed=args.seed)
    validate_pool(rule, panel.shape[0], args.f)
    server = SeededRng(args.seed, Stream.POOL)
    if isinstance(rule, PoolSpec):
        out = agg_mixtailor(panel, rule, args.f, server)
        print(f"chosen_member = {out.chosen_member}", file=sys.stderr)
    else:
        out = aggregate(rule, panel, args.f, server)
    if out.selected_worker is not None:
        print(f"selected_worker = {out.selected_worker}", file=sys.stderr)
    sys.stdout.write(format_gradient_csv([out.result]))
    return EXIT_OK


def cmd_attack(args) -> int:
    honest = read_gradient_csv(args.gradients)
    n = args.n if args.n is not None else honest.shape[0] + args.f
    if n != honest.shape[0] + args.f:
        raise InvalidInputError(f"n={n} but the file holds {honest.shape[0]} honest rows with f={args.f}")
    spec = parse_attack(args.attack)
    spec.check_feasible(n, args.f)
    pool = parse_aggregator(args.pool, seed=args.seed) if args.pool else None
    if pool is not None and not isinstance(pool, PoolSpec):
        pool = PoolSpec((pool,))
    cost = AttackCost()
    view = AdversaryView(honest, pool, SeededRng(args.seed, Stream.ATTACK))
    res = generate_attack(spec, view, n, args.f, cost)
    sys.stdout.write(format_gradient_csv(res.byzantine))
    summary = {
        "attack": spec.name,
        "n": n,
        "f": args.f,
        "param": res.param,
        "simulated_member": res.simulated_member,
        "aggregator_evaluations": cost.aggregator_evaluations,
    }
    if res.dot is not None:
        summary["xi"] = float(fmt(res.dot))
    if args.verify:
        rule = parse_aggregator(args.verify, seed=args.seed)
        if isinstance(rule, PoolSpec):
            raise InvalidInputError("--verify takes a single rule, not a pool")
        dot, ok = verify_attack(res.byzantine, honest, rule, args.f, SeededRng(args.seed, Stream.POOL))
        summary["verify_dot"] = float(fmt(dot))
        summary["verify_success"] = bool(ok)
    print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def cmd_bounds(args) -> int:
    inputs = BoundInputs(n=args.n, f=args.f, d=args.d, p=args.p, sigma2=args.sigma2, delta2=args.delta2,
                         L=args.L, lambda_sup=args.lam, beta_min=args.beta, q=args.q)
    values = [
        ("Lambda", capital_lambda(inputs.n, inputs.f, inputs.d, inputs.p)),
        ("iid_bound", iid_bias_bound(inputs)),
        ("noniid_bound", noniid_bias_bound(inputs)),
        ("pool_size_threshold", mixtailor_sufficient_M(args.q, args.lam, args.L, args.beta)),
    ]
    for name, value in values:
        print(f"{name} = {fmt(value)}")
    if args.M is not None:
        print(f"pool_size_sufficient = {str(args.M > values[-1][1]).lower()}")
    return EXIT_OK


def cmd_bench(args) -> int:
    pool = None if args.no_pool else build_default_pool(SeededRng(args.seed, Stream.POOL_BUILD))
    rows = bench_aggregators(pool, args.n, args.d, args.repeats, f=args.f, seed=args.seed)
    if args.no_pool:
        rows = [r for r in rows if r.name != "mixtailor"]
    sys.stdout.write(format_bench(rows))
    return EXIT_OK


def cmd_pool(args) -> int:
    exclude = [e for e in (args.exclude or "").split(",") if e]
    pool = build_default_pool(SeededRng(args.seed, Stream.POOL_BUILD), exclude=exclude)
    for i, name in enumerate(pool.describe()):
        print(f"{i},{name}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixtailor", description="Randomized robust aggregation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a training experiment from a config file")
    run.add_argument("config", help="flat key = value config file")
    run.add_argument("--out", help="metrics CSV path (default: stdout)")
    for key, text in CONFIG_KEYS.items():
        run.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE",
                         help=f"{text} [config key: {key}]")
    run.set_defaults(func=cmd_run)

    agg = sub.add_parser("aggregate", help="aggregate the rows of a gradient CSV")
    agg.add_argument("gradients", help="CSV, one update per row")
    agg.add_argument("--agg", required=True, help="rule or pool descriptor [config key: aggregator]")
    agg.add_argument("--f", type=int, required=True, help="Byzantine budget [config key: f]")
    agg.add_argument("--seed", type=int, default=0, help="master seed [config key: seed]")
    agg.set_defaults(func=cmd_aggregate)

    atk = sub.add_parser("attack", help="craft Byzantine rows against a CSV of honest gradients")
    atk.add_argument("gradients", help="CSV of the n - f honest gradients")
    atk.add_argument("--attack", required=True, help="attack descriptor [config key: attack]")
    atk.add_argument("--f", type=int, required=True, help="number of Byzantine rows [config key: f]")
    atk.add_argument("--n", type=int, default=None, help="total workers (default rows + f) [config key: n]")
    atk.add_argument("--pool", default=None, help="pool the adversary knows [config key: aggregator]")
    atk.add_argument("--verify", default=None, help="rule to check the attack against (no config twin)")
    atk.add_argument("--seed", type=int, default=0, help="master seed [config key: seed]")
    atk.set_defaults(func=cmd_attack)

    bnd = sub.add_parser("bounds", help="evaluate the closed-form bias bounds and pool-size threshold")
    bnd.add_argument("--n", type=int, required=True, help="workers [config key: n]")
    bnd.add_argument("--f", type=int, required=True, help="Byzantine workers [config key: f]")
    bnd.add_argument("--d", type=int, required=True, help="dimension (no config twin)")
    bnd.add_argument("--p", type=float, default=2.0, help="Krum norm order (default 2, no config twin)")
    bnd.add_argument("--sigma2", type=float, default=1.0, help="within-worker variance (default 1)")
    bnd.add_argument("--delta2", type=float, default=0.0, help="between-worker variance (default 0)")
    bnd.add_argument("--q", type=int, default=1, help="compromised pool members (default 1)")
    bnd.add_argument("--lambda", dest="lam", type=float, default=1.0, help="attack strength sup (default 1)")
    bnd.add_argument("--L", type=float, default=1.0, help="smoothness constant (default 1)")
    bnd.add_argument("--beta", type=float, default=1.0, help="smallest resilience margin (default 1)")
    bnd.add_argument("--M", type=int, default=None, help="pool size to test against the threshold")
    bnd.set_defaults(func=cmd_bounds)

    bch = sub.add_parser("bench", help="time the aggregation rules")
    bch.add_argument("--n", type=int, default=12, help="panel rows [config key: n]")
    bch.add_argument("--f", type=int, default=2, help="Byzantine budget [config key: f]")
    bch.add_argument("--d", type=int, default=10_000, help="panel columns (no config twin)")
    bch.add_argument("--repeats", type=int, default=20, help="timed calls per rule, >= 10")
    bch.add_argument("--no-pool", action="store_true", help="skip MixTailor over the default pool")
    bch.add_argument("--seed", type=int, default=0, help="master seed [config key: seed]")
    bch.set_defaults(func=cmd_bench)

    pl = sub.add_parser("pool", help="print the 64-member default pool for a seed")
    pl.add_argument("--seed", type=int, default=0, help="master seed [config key: seed]")
    pl.add_argument("--exclude", default=None, help="comma-separated classes to drop")
    pl.set_defaults(func=cmd_pool)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        return _fail(str(exc), EXIT_DIVERGED)
    except (ConfigurationError, InvalidInputError) as exc:
        return _fail(str(exc), EXIT_CONFIG)
    except OSError as exc:
        return _fail(f"{exc.filename or ''}: {exc.strerror or exc}", EXIT_CONFIG)
    finally:
        sys.stdout.flush()


if __name__ == "__main__":
    sys.exit(main())
