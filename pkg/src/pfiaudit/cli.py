"""Command-line entry point: ``pfiaudit {simulate,audit,cod,spca-audit}``.

Every subcommand writes plain CSV/JSON under ``--out`` together with a
``manifest.json`` holding the resolved configuration and seeds. Reruns with the
same configuration produce byte-identical files.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 non-convergence
(only with ``--strict``).
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, pipeline, simgen, spca, trip
from .forest import ForestError, Hyperparams

log = logging.getLogger("pfiaudit")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_NONCONVERGED = 4


class InputError(Exception):
    pass


class NumericalError(Exception):
    pass


class NonConvergence(Exception):
    pass


# defaults applied after --config and explicit flags
DEFAULTS = {
    "seed": 0, "runs": 1, "reps": 25, "pi": trip.DEFAULT_PERMUTATIONS, "trees": 500,
    "mtry": None, "min_leaf": None, "max_depth": None, "metric_exponent": 2.0,
    "out": "pfiaudit-out", "train_fraction": 0.75, "standardize": False,
    "alternative": "two-sided", "strict": False,
    # payload
    "csv": None, "target": None, "task": data.REGRESSION, "kind": None, "n": 500, "p": 8,
    "rho": [0.75], "k": 3, "noise_sd": simgen.NOISE_SD, "relearn": [],
    # cod
    "n_list": list(simgen.COD_N), "p_list": list(simgen.COD_P),
    "exponents": [0.5, 1.0, 2.0, 3.0], "cod_k": 10,
    # spca
    "components": 6, "lam2": 0.0, "sparsity": spca.SINGLE, "top_variance": None,
    "train_size": None, "max_iter": spca.MAX_ITER,
}

SPCA_SIM = {"kind": "equal_blocks", "n": 150, "p": 150, "k": 25, "rho": [0.75],
            "train_size": 100}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _shared(p):
    p.add_argument("--config", help="JSON file with any of the options below; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int, help="independent runs (data generations or resplits)")
    p.add_argument("--reps", type=int, help="permutations per feature for PFI/ALCD")
    p.add_argument("--pi", type=int, help="sign-flip rounds per TRIP test")
    p.add_argument("--trees", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--min-leaf", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--metric-exponent", type=float)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--standardize", action="store_true", default=None,
                   help="standardize features with training statistics before fitting")
    p.add_argument("--alternative", choices=trip.ALTERNATIVES)
    p.add_argument("--strict", action="store_true", default=None,
                   help="treat SPCA non-convergence as fatal (exit code 4)")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")


def _payload(p, csv_allowed=True):
    if csv_allowed:
        p.add_argument("--csv", help="input CSV with a header row")
        p.add_argument("--target", help="name of the target column in --csv")
        p.add_argument("--task", choices=data.TASKS)
    p.add_argument("--kind", choices=simgen.KINDS, help="simulate data instead of reading --csv")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--rho", type=_floats, help="comma-separated block correlations")
    p.add_argument("--k", type=int, help="block size")
    p.add_argument("--noise-sd", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="pfiaudit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write simulated datasets as CSV")
    _shared(p)
    _payload(p, csv_allowed=False)
    p.add_argument("--n-list", type=_ints)
    p.add_argument("--p-list", type=_ints)
    p.add_argument("--cod-k", type=int, help="block size for --kind cod")

    p = sub.add_parser("audit", help="PFI + ALCD + TRIP on a CSV or simulated data")
    _shared(p)
    _payload(p)
    p.add_argument("--relearn", type=_names,
                   help="comma-separated features to score with the permute-and-relearn oracle")

    p = sub.add_parser("cod", help="curse-of-dimensionality sweep")
    _shared(p)
    p.add_argument("--n-list", type=_ints)
    p.add_argument("--p-list", type=_ints)
    p.add_argument("--exponents", type=_floats)
    p.add_argument("--rho", type=_floats)
    p.add_argument("--k", dest="cod_k", type=int, help="block size")

    p = sub.add_parser("spca-audit", help="sparse PCA front end followed by an audit")
    _shared(p)
    _payload(p)
    p.add_argument("--components", type=int)
    p.add_argument("--lam2", type=float)
    p.add_argument("--sparsity", choices=(spca.SINGLE, spca.TOTAL),
                   help="single: each feature in one component; total: p nonzero weights")
    p.add_argument("--top-variance", type=float,
                   help="keep this fraction of highest-variance columns (training split)")
    p.add_argument("--train-size", type=int, help="training rows (overrides --train-fraction)")
    p.add_argument("--max-iter", type=int, help="outer SPCA iterations per fit")
    return parser


def resolve(args):
    """Merge built-in defaults, the --config file, and explicit flags (in that order)."""
    cfg = dict(DEFAULTS)
    if args.command == "spca-audit" and not getattr(args, "csv", None):
        cfg.update(SPCA_SIM)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            cfg.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise InputError(f"bad config file {path}: {exc}") from None
    for key, value in vars(args).items():
        if key in ("config", "verbose") or value is None:
            continue
        cfg[key] = value
    cfg["command"] = args.command
    if isinstance(cfg["rho"], (int, float)):
        cfg["rho"] = [cfg["rho"]]
    return cfg


def _audit_config(cfg):
    hp = Hyperparams(cfg["trees"], cfg["mtry"], cfg["min_leaf"], cfg["max_depth"])
    return pipeline.AuditConfig(hp, cfg["train_fraction"], cfg["reps"], cfg["pi"],
                                cfg["metric_exponent"], bool(cfg["standardize"]),
                                cfg["alternative"], tuple(cfg.get("relearn") or ()))


def _gen_spec(cfg, seed):
    return simgen.GeneratorSpec(cfg["kind"], cfg["n"], cfg["p"], tuple(cfg["rho"]), cfg["k"],
                                cfg["noise_sd"], seed)


def _run_seeds(cfg):
    return [cfg["seed"] + r for r in range(cfg["runs"])]


def _out_dir(cfg):
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"output directory {out} is not writable: {exc}") from None
    return out


def _load_input(cfg):
    if cfg.get("csv"):
        if not cfg.get("target"):
            raise InputError("--target is required with --csv")
        return data.load_csv(cfg["csv"], cfg["target"], cfg["task"])
    if not cfg.get("kind"):
        raise InputError("give either --csv/--target or --kind")
    return None


def _write_manifest(out, cfg, extra=None):
    # the output location is left out so reruns elsewhere stay byte-identical
    doc = {"config": {k: v for k, v in sorted(cfg.items()) if k != "out"},
           "seeds": _run_seeds(cfg)}
    doc.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_run(run_dir, result):
    run_dir.mkdir(parents=True, exist_ok=True)
    result.importance.to_csv(run_dir / "importances.csv")
    result.table.to_csv(run_dir / "alcd.csv")
    result.trip.to_csv(run_dir / "pvalues.csv")


def _write_combined(out, results):
    with (out / "pvalues.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_seed", "feature", "repetition", "statistic", "p_value"])
        for r in results:
            for j, name in enumerate(r.trip.feature_names):
                for rep in range(r.trip.p_value.shape[1]):
                    w.writerow([r.seed, name, rep, repr(float(r.trip.statistic[j, rep])),
                                repr(float(r.trip.p_value[j, rep]))])
    with (out / "importances.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_seed", "feature", "repetition", "pfi"])
        for r in results:
            for j, name in enumerate(r.importance.feature_names):
                for rep, v in enumerate(r.importance.pfi[j]):
                    w.writerow([r.seed, name, rep, repr(float(v))])
    summary = pipeline.summarize(results)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


# subcommands -----------------------------------------------------------------

def cmd_simulate(cfg):
    if not cfg.get("kind"):
        raise InputError("--kind is required")
    out = _out_dir(cfg)
    files = []
    for seed in _run_seeds(cfg):
        if cfg["kind"] == "cod":
            for spec in simgen.cod_suite(cfg["n_list"], cfg["p_list"], seed, cfg["rho"][0],
                                         cfg["cod_k"]):
                name = f"cod_n{spec.n}_p{spec.p}_seed{seed}.csv"
                simgen.generate(spec).to_csv(out / name)
                files.append({"file": name, "spec": spec.to_dict()})
        else:
            spec = _gen_spec(cfg, seed)
            name = f"{spec.kind}_seed{seed}.csv"
            simgen.generate(spec).to_csv(out / name)
            files.append({"file": name, "spec": spec.to_dict()})
    _write_manifest(out, cfg, {"datasets": files})
    log.info("wrote %d datasets to %s", len(files), out)
    return files


def cmd_audit(cfg):
    ds = _load_input(cfg)
    out = _out_dir(cfg)
    config = _audit_config(cfg)
    results = []
    for seed in _run_seeds(cfg):
        run_ds = ds if ds is not None else simgen.generate(_gen_spec(cfg, seed))
        try:
            result = pipeline.audit_dataset(run_ds, config, seed)
        except (data.DataError, ForestError, KeyError) as exc:
            raise InputError(f"run seed={seed}: {exc}") from exc
        _write_run(out / f"run_seed{seed}", result)
        results.append(result)
        log.info("run seed=%d: median p %s", seed,
                 {k: round(v, 4) for k, v in result.trip.medians().items()})
    summary = _write_combined(out, results)
    _write_manifest(out, cfg, {"audit_config": config.to_dict()})
    return summary


def cmd_cod(cfg):
    out = _out_dir(cfg)
    config = _audit_config(cfg)
    specs = simgen.cod_suite(cfg["n_list"], cfg["p_list"], cfg["seed"], cfg["rho"][0],
                             cfg["cod_k"])
    rows = pipeline.cod_sweep(specs, cfg["exponents"], config, _run_seeds(cfg))
    with (out / "cod.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "p", "exponent", "mean_p_dependent", "mean_p_independent"])
        for n, p, e, dep, ind in rows:
            w.writerow([n, p, e, repr(dep), repr(ind)])
    _write_manifest(out, cfg, {"audit_config": config.to_dict()})
    return rows


def cmd_spca_audit(cfg):
    ds = _load_input(cfg)
    out = _out_dir(cfg)
    config = _audit_config(cfg)
    results, lams = [], []
    for seed in _run_seeds(cfg):
        run_ds = ds if ds is not None else simgen.generate(_gen_spec(cfg, seed))
        try:
            run = pipeline.spca_audit(run_ds, config, seed, cfg["components"], cfg["lam2"],
                                      cfg["sparsity"], top_fraction=cfg["top_variance"],
                                      train_size=cfg["train_size"], max_iter=cfg["max_iter"])
        except spca.SparsityPathError as exc:
            raise NumericalError(f"run seed={seed}: {exc}") from exc
        except (data.DataError, spca.SpcaError, ForestError) as exc:
            raise InputError(f"run seed={seed}: {exc}") from exc
        if not run.model.converged:
            msg = f"run seed={seed}: SPCA stopped after {run.model.n_iter} iterations"
            if cfg["strict"]:
                raise NonConvergence(msg)
            log.warning(msg)
        run_dir = out / f"run_seed{seed}"
        _write_run(run_dir, run.audit)
        run.model.to_json(run_dir / "spca_model.json")
        names = run.audit.trip.feature_names
        with (run_dir / "component_corr.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["component", *names])
            for name, row in zip(names, run.component_corr):
                w.writerow([name, *(repr(float(v)) for v in row)])
        results.append(run.audit)
        lams.append({"seed": seed, "lam1": run.lam1, "nonzeros": run.model.nonzeros(),
                     "kept_columns": int(run.kept_columns.size),
                     "converged": run.model.converged})
    summary = _write_combined(out, results)
    _write_manifest(out, cfg, {"audit_config": config.to_dict(), "spca": lams})
    return summary


COMMANDS = {"simulate": cmd_simulate, "audit": cmd_audit, "cod": cmd_cod,
            "spca-audit": cmd_spca_audit}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except (InputError, data.DataError, ForestError) as exc:
        print(f"pfiaudit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NonConvergence as exc:
        print(f"pfiaudit: not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (NumericalError, simgen.GeneratorError, np.linalg.LinAlgError) as exc:
        print(f"pfiaudit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
