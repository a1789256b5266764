"""Command-line interface.

Every command writes data files with JSON sidecars (see :mod:`phaseinfo.io`)
and prints a short JSON summary to stdout.  Exit codes: 0 success,
2 invalid input or parameters, 3 numerical failure.

Each sidecar stores the command's configuration; ``--config X.meta.json``
re-runs it (optionally with a different ``--out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, io
from .ensemble import Partition, build_cloud, coherence_factor
from .errors import NumericalError, SchemaError, ValidationError
from .estimators import EstimateWithCI
from .fringe import extract_ensemble
from .resampling import JackknifePlan, convergence_scan, jackknife
from .sgsim import PipelineConfig, SGParams, build_transfer_operator, prepare, sample_metropolis, sample_transfer

log = logging.getLogger("phaseinfo")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _labels(text: str) -> list:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ValidationError(f"pixel labels must be integers, got {text!r}") from None


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ValidationError(f"expected a list of numbers, got {text!r}") from None


def _plan(args) -> JackknifePlan:
    return JackknifePlan(args.delete_frac, args.reps, args.seed)


def _units(args) -> str:
    return "bits" if args.bits else "nats"


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out", "config", "verbose")}
    return cfg


def _emit(obj):
    sys.stdout.write(io.dumps(obj))


def _partition(args, n_pixels: int) -> Partition:
    if args.A is None or args.B is None:
        part = Partition(range(n_pixels - 1), [n_pixels - 1], n_pixels)
    else:
        part = Partition.from_labels(_labels(args.A), _labels(args.B), n_pixels)
    return part


def _out(args, default: str) -> Path:
    return Path(args.out or default)


# --- commands ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    q_values = _floats(args.q) if args.q is not None else [2.0]
    base = _out(args, "ensemble.csv")
    written = []
    for i, q in enumerate(q_values):
        params = SGParams.from_q(args.lambda_T, q, L=args.length, n_grid=args.n_grid, sigma_PSF=args.sigma_psf)
        cfg = PipelineConfig(coarse_nz=args.coarse or None, M=args.M, W=args.W)
        seed = args.seed + i
        if args.sampler == "transfer":
            raw = sample_transfer(params, build_transfer_operator(params, cfg.M, cfg.W), args.n_samples, seed)
        else:
            raw = sample_metropolis(params, args.n_samples, seed)
        ens = prepare(raw, params, cfg)
        path = base if len(q_values) == 1 else base.with_name(f"{base.stem}_q{q:g}{base.suffix or '.csv'}")
        io.save_ensemble(ens, path, _config(args))
        written.append({"q": q, "path": str(path), "coherence": float(np.mean(np.cos(ens.samples)))})
    _emit({"written": written})
    return EXIT_OK


def cmd_fit_fringes(args) -> int:
    images = [io.load_interferogram(p) for p in args.inputs]
    ens = extract_ensemble(images, args.lambda_F)
    path = io.save_ensemble(ens, _out(args, "profiles.csv"), _config(args))
    _emit({"written": str(path), "n_shots": ens.n_shots, "bad_slices": ens.meta["bad_slices"]})
    return EXIT_OK


def _write_estimate(args, est: EstimateWithCI, extra: dict = None):
    est = est.to_units(_units(args))
    body = {"estimate": est.as_dict()}
    body.update(extra or {})
    if args.out:
        io.write_document(args.out, "estimate", body, _config(args))
    _emit(body)


def cmd_estimate_mi(args) -> int:
    ens = io.load_ensemble(args.inputs[0])
    part = _partition(args, ens.n_pixels)
    est = analysis.mi_estimate(ens, part, args.k, _plan(args))
    _write_estimate(args, est, {"partition": part.labels()})
    return EXIT_OK


def cmd_estimate_kl(args) -> int:
    ens = io.load_ensemble(args.inputs[0])
    est = analysis.kl_estimate(ens, args.k, args.seed, _plan(args))
    _write_estimate(args, est)
    return EXIT_OK


def cmd_scan(args) -> int:
    plan = _plan(args)
    ensembles = [io.load_ensemble(p) for p in args.inputs]
    fit = None
    if args.kind == "volume":
        scan = analysis.volume_scan(ensembles[0], args.k, plan)
    elif args.kind == "area":
        scan = analysis.area_scan(ensembles[0], args.volume, args.k, plan)
    elif args.kind == "separation":
        scan = analysis.separation_scan(ensembles[0], args.block, args.k, plan)
        fit = analysis.fit_separation(scan)
    elif args.kind == "q":
        scan = analysis.q_scan(ensembles, args.k, plan)
    else:
        scan = analysis.nongauss_scan(ensembles, args.k, args.seed, plan)
    units = _units(args)
    rows = scan.table(units)
    base = _out(args, f"scan_{args.kind}.csv")
    meta = dict(scan.meta, units=units, inputs=[str(p) for p in args.inputs])
    if fit is not None:
        meta["exp_fit"] = fit.as_dict()
    io.write_table(base.with_suffix(".csv"), rows, meta, _config(args))
    io.write_document(base.with_suffix(".json"), "scan", {"scan_kind": scan.scan_kind, "rows": rows, "meta": meta},
                      _config(args))
    summary = {"scan_kind": scan.scan_kind, "n_rows": len(rows), "csv": str(base.with_suffix(".csv"))}
    if fit is not None:
        summary["ell_fit_um"] = fit.ell_fit
    _emit(summary)
    return EXIT_OK


def cmd_convergence(args) -> int:
    ens = io.load_ensemble(args.inputs[0])
    part = _partition(args, ens.n_pixels)
    cloud = build_cloud(ens, part)
    plan = _plan(args)
    units = _units(args)
    from .estimators import ksg_mutual_information

    def est(c):
        return ksg_mutual_information(c, args.k)

    sizes = [int(s) for s in _floats(args.sizes)] if args.sizes else None
    if sizes is None:
        n = ens.n_shots
        sizes = sorted({max(2 * (args.k + 1), n // 2**i) for i in range(4)})
    rows = []
    for r in convergence_scan(est, cloud, sizes, args.seed, plan, min_samples=args.k + 1):
        e = EstimateWithCI(r.value, r.stderr).to_units(units)
        rows.append({"kind": "samples", "n_samples": r.n_samples, "repetitions": plan.repetitions,
                     "value": e.value, "stderr": e.stderr, "converged": r.converged})
    for reps in (plan.repetitions, 2 * plan.repetitions):
        e = jackknife(est, cloud, JackknifePlan(plan.delete_fraction, reps, plan.seed), min_samples=args.k + 1)
        e = e.to_units(units)
        rows.append({"kind": "repetitions", "n_samples": len(cloud), "repetitions": reps, "value": e.value,
                     "stderr": e.stderr, "converged": len(cloud) > 500})
    path = io.write_table(_out(args, "convergence.csv"), rows, {"units": units, "partition": part.labels()},
                          _config(args))
    _emit({"written": str(path), "n_rows": len(rows)})
    return EXIT_OK


def cmd_match(args) -> int:
    if args.target is None:
        raise ValidationError("--target coherence is required")
    target = EstimateWithCI(args.target, args.target_err)
    q_grid = _floats(args.q_grid)
    plan = _plan(args)
    if args.quantity == "kl":
        def quantity(ens):
            return analysis.kl_estimate(ens, args.k, args.seed, plan)
    else:
        def quantity(ens):
            return analysis.mi_estimate(ens, _partition(args, ens.n_pixels), args.k, plan)
    est = analysis.match_simulation(target, args.lambda_T, quantity, q_grid, args.n_samples, args.seed,
                                    plan=plan, sigma_PSF=args.sigma_psf)
    _write_estimate(args, est, {"target_coherence": args.target, "lambda_T": args.lambda_T, "q_grid": q_grid})
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--k", type=int, default=2, help="nearest-neighbour order (default 2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delete-frac", dest="delete_frac", type=float, default=0.05)
    p.add_argument("--reps", type=int, default=3000, help="jackknife repetitions")
    p.add_argument("--bits", action="store_true", help="report information in bits instead of nats")
    p.add_argument("--in", dest="inputs", action="append", default=[], metavar="PATH")
    p.add_argument("--out", default=None, metavar="PATH")
    p.add_argument("--lambda-T", dest="lambda_T", type=float, default=15.0, help="thermal length [um]")
    p.add_argument("--q", default=None, help="q value(s), comma separated")
    p.add_argument("--A", default=None, help="1-based pixel labels of subsystem A")
    p.add_argument("--B", default=None, help="1-based pixel labels of subsystem B")
    p.add_argument("--config", default=None, help="re-run the configuration stored in a sidecar")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phaseinfo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample sine-Gordon ensembles through the measurement pipeline")
    _common(p)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=2000)
    p.add_argument("--sampler", choices=("transfer", "metropolis"), default="transfer")
    p.add_argument("--sigma-psf", dest="sigma_psf", type=float, default=3.0)
    p.add_argument("--length", type=float, default=120.0)
    p.add_argument("--n-grid", dest="n_grid", type=int, default=150)
    p.add_argument("--coarse", type=int, default=6, help="coarse pixels (0 keeps the fine grid)")
    p.add_argument("--M", type=int, default=512)
    p.add_argument("--W", type=int, default=8)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-fringes", help="extract phase profiles from interferograms")
    _common(p)
    p.add_argument("--lambda-F", dest="lambda_F", type=float, default=None, help="fix the fringe spacing [um]")
    p.set_defaults(func=cmd_fit_fringes)

    p = sub.add_parser("estimate-mi", help="KSG mutual information between two pixel sets")
    _common(p)
    p.set_defaults(func=cmd_estimate_mi)

    p = sub.add_parser("estimate-kl", help="relative entropy to the nearest Gaussian")
    _common(p)
    p.set_defaults(func=cmd_estimate_kl)

    p = sub.add_parser("scan", help="volume, area, separation, q or non-Gaussianity scans")
    p.add_argument("kind", choices=analysis.SCAN_KINDS)
    _common(p)
    p.add_argument("--volume", type=int, default=3)
    p.add_argument("--block", type=int, default=5)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("convergence", help="MI convergence over sample size and jackknife repetitions")
    _common(p)
    p.add_argument("--sizes", default=None, help="sample sizes, comma separated")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("match", help="interpolate a simulated quantity to a measured coherence")
    _common(p)
    p.add_argument("--target", type=float, default=None, help="measured <cos phi>")
    p.add_argument("--target-err", dest="target_err", type=float, default=0.0)
    p.add_argument("--q-grid", dest="q_grid", default="0,1,2,3,4,6")
    p.add_argument("--quantity", choices=("mi", "kl"), default="mi")
    p.add_argument("--n-samples", dest="n_samples", type=int, default=2000)
    p.add_argument("--sigma-psf", dest="sigma_psf", type=float, default=3.0)
    p.set_defaults(func=cmd_match)
    return parser


COMMANDS = {"simulate": cmd_simulate, "fit-fringes": cmd_fit_fringes, "estimate-mi": cmd_estimate_mi,
            "estimate-kl": cmd_estimate_kl, "scan": cmd_scan, "convergence": cmd_convergence, "match": cmd_match}


def _from_config(args):
    doc = json.loads(Path(args.config).read_text())
    cfg = doc.get("config")
    if not cfg or cfg.get("command") not in COMMANDS:
        raise SchemaError(f"{args.config} holds no runnable configuration")
    ns = argparse.Namespace(**cfg)
    ns.out, ns.config, ns.verbose = args.out, None, args.verbose
    ns.func = COMMANDS[cfg["command"]]
    return ns


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config:
            args = _from_config(args)
        needs_input = args.func not in (cmd_simulate, cmd_match)
        if needs_input and not args.inputs:
            raise ValidationError("--in is required for this command")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
