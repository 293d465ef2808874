"""Command-line entry point: ``mfknots <command> --config cfg.json --out dir``.

Exit status is 0 on success, 2 for invalid input and 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .clusterset import cluster_report
from .data import make_intervals
from .errors import NumericalError, ValidationError
from .gibbs import GibbsState, free_energy_lower_bound, free_energy_of_ensemble, free_energy_of_gibbs
from .particle import ParticleEnsemble, predict, predict_derivatives, residuals, train
from .pwl import check_admissible, extract_pwl

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> harness.ExperimentConfig:
    if not args.config:
        raise ValidationError(f"{args.command} needs --config")
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg=None) -> Path:
    out = Path(args.out or (cfg.out if cfg is not None and cfg.out else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base(args) -> Path | None:
    return Path(args.config).resolve().parent if args.config else None


def _ensemble(args, cfg, ds, out):
    """Load ``--ensemble`` if given, otherwise train from the config."""
    if args.ensemble:
        return ParticleEnsemble.load(args.ensemble), None
    ens, trace = train(ds, cfg.train, cfg.N, cfg.activation,
                       **({"average_grid": ds.xs, "average_from": cfg.average_from,
                           "average_every": cfg.average_every} if cfg.average_from is not None else {}))
    ens.save(out / "ensemble.json")
    trace.to_csv(out / "trace.csv")
    return ens, trace


def cmd_run(args) -> int:
    cfg = _config(args)
    rep = harness.run_experiment(cfg, _out(args, cfg), base=_base(args))
    print(f"{cfg.name}: risk={rep.risk:.3e} knots={len(rep.knots)} admissible={rep.verdict['admissible']}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    ds = cfg.load_dataset(_base(args))
    ens, trace = _ensemble(argparse.Namespace(ensemble=None), cfg, ds, out)
    iv = make_intervals(ds, cfg.L)
    xs = np.linspace(-iv.L, iv.L, cfg.extraction.grid_n)
    harness._write_predictor(out / "predictor.csv", xs,
                             *predict_derivatives(ens, xs, curvature=cfg.activation.smooth))
    _dump(out / "train.json", {"config": cfg.to_json(), "risk": float(trace.risk[-1]) if trace.risk.size else None,
                               "residuals": residuals(ens, ds).tolist()})
    print(f"{cfg.name}: final risk {trace.risk[-1]:.3e}" if trace.risk.size else cfg.name)
    return EXIT_OK


def cmd_gibbs(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    ds = cfg.load_dataset(_base(args))
    state = harness._solve_gibbs(cfg, ds)
    iv = make_intervals(ds, cfg.L)
    xs = np.linspace(-iv.L, iv.L, cfg.extraction.grid_n)
    curv = state.predict(xs, 2) if state.spec.smooth else None
    harness._write_predictor(out / "predictor.csv", xs, state.predict(xs), state.predict(xs, 1), curv)
    state.trace_csv(out / "gibbs_trace.csv")
    _dump(out / "gibbs.json", {"state": state.to_json(), "free_energy": free_energy_of_gibbs(state, ds).to_json(),
                               "lower_bound": free_energy_lower_bound(state.lam, state.beta)})
    print(f"fixed point after {state.iterations} iterations, gap {state.gap:.2e}")
    return EXIT_OK


def _residuals(args, cfg, ds, out):
    if args.gibbs_state:
        state = GibbsState.from_json(json.loads(Path(args.gibbs_state).read_text())["state"], ds)
        return state.r
    ens, trace = _ensemble(args, cfg, ds, out)
    if trace is not None and trace.time_average is not None:
        return -(ds.ys - trace.time_average) / ds.M
    return residuals(ens, ds)


def cmd_cluster(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    ds = cfg.load_dataset(_base(args))
    r = _residuals(args, cfg, ds, out)
    rep = cluster_report(r, ds, make_intervals(ds, cfg.L), cfg.train.lam)
    _dump(out / "cluster.json", rep.to_json())
    rep.to_csv(out / "cluster.csv")
    print(f"cluster set measure {rep.total_measure:.4g}: {rep.omega()}")
    return EXIT_OK


def cmd_knots(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    ds = cfg.load_dataset(_base(args))
    ens, _ = _ensemble(args, cfg, ds, out)
    iv = make_intervals(ds, cfg.L)
    ex = cfg.extraction
    pw = extract_pwl(lambda x: predict(ens, x), lambda x: predict_derivatives(ens, x, False)[1],
                     (-iv.L, iv.L), ex.grid_n, ex.slope_tol, ex.radius(ds))
    verdict = check_admissible(pw, iv, ex.endpoint_tol)
    _dump(out / "pwl.json", {"pwl": pw.to_json(), "verdict": verdict.to_json()})
    print(f"knots {[round(float(k), 4) for k in pw.knots]} admissible={verdict.admissible}")
    return EXIT_OK


def cmd_free_energy(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    ds = cfg.load_dataset(_base(args))
    if args.gibbs_state:
        state = GibbsState.from_json(json.loads(Path(args.gibbs_state).read_text())["state"], ds)
        rep = {"gibbs": free_energy_of_gibbs(state, ds).to_json(),
               "lower_bound": free_energy_lower_bound(state.lam, state.beta)}
    else:
        ens, _ = _ensemble(args, cfg, ds, out)
        rep = {"ensemble": free_energy_of_ensemble(ens, ds, cfg.train.lam).to_json()}
    _dump(out / "free_energy.json", rep)
    print(json.dumps(rep))
    return EXIT_OK


def cmd_verify(args) -> int:
    lams, betas, n_per = args.lambdas, args.betas, args.n_per
    if args.config:
        obj = json.loads(Path(args.config).read_text())
        lams, betas = obj.get("lambdas", lams), obj.get("betas", betas)
        n_per = int(obj.get("n_per", n_per))
    seed = args.seed if args.seed is not None else 0
    noiseless = [harness.verify_counterexample_noiseless(lam).to_json() for lam in lams]
    lowtemp = harness.verify_counterexample_lowtemp(betas, n_per, seed).to_json()
    rep = {"noiseless": noiseless, "lowtemp": lowtemp,
           "passed": all(r["passed"] for r in noiseless) and lowtemp["passed"]}
    _dump(_out(args) / "counterexample.json", rep)
    for r in noiseless:
        print(f"lambda={r['lam']}: argmin {r['argmin']:+.4f} min {r['minimum']:.6f} "
              f"M={r['second_moment']:.4f} passed={r['passed']}")
    print(f"low temperature: gaps {np.round(lowtemp['sup_gap'], 4).tolist()} passed={lowtemp['passed']}")
    return EXIT_OK if rep["passed"] else EXIT_NUMERICAL


def cmd_reproduce(args) -> int:
    seed = args.seed if args.seed is not None else 0
    ids = harness.FIGURE_IDS if args.figure == "all" else [args.figure]
    for fid in ids:
        out = Path(args.out or "figures") / fid if len(ids) > 1 else Path(args.out or fid)
        rep = harness.reproduce(fid, out, seed, args.scale)
        print(f"{fid}: knots {[round(float(k), 3) for k in rep.knots]} admissible={rep.verdict['admissible']} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfknots", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, config_required=True):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", required=config_required, help="experiment config (JSON, see docs/config_schema.md)")
        sp.add_argument("--out", help="output directory (default: config 'out', else ./out)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.set_defaults(func=func)
        return sp

    add("run", cmd_run, "train, analyse and write every artifact")
    add("train", cmd_train, "train an ensemble; writes ensemble.json, trace.csv, predictor.csv")
    add("gibbs", cmd_gibbs, "solve the Gibbs fixed point for the config's lambda and beta")
    for name, func, help_ in (("cluster", cmd_cluster, "cluster set from an ensemble's or Gibbs state's residuals"),
                              ("free-energy", cmd_free_energy, "free-energy report of an ensemble or Gibbs state")):
        sp = add(name, func, help_)
        sp.add_argument("--ensemble", help="ensemble checkpoint to analyse instead of training")
        sp.add_argument("--gibbs-state", help="gibbs.json written by the gibbs command")
    sp = add("knots", cmd_knots, "extract knots and check admissibility")
    sp.add_argument("--ensemble", help="ensemble checkpoint to analyse instead of training")
    sp = add("verify-counterexample", cmd_verify, "analytic checks on the two-point counterexample",
             config_required=False)
    sp.add_argument("--lambdas", type=float, nargs="+", default=[0.1, 0.5, 1.0], help="values in (0, 1]")
    sp.add_argument("--betas", type=float, nargs="+", default=[1e2, 1e3, 1e4], help="increasing inverse temperatures")
    sp.add_argument("--n-per", type=int, default=20_000, help="Monte-Carlo draws per mixture component")
    sp = add("reproduce", cmd_reproduce, "run a registry figure", config_required=False)
    sp.add_argument("--figure", required=True, choices=list(harness.FIGURE_IDS) + ["all"])
    sp.add_argument("--scale", type=float, default=1.0, help="fraction of the full run length")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
