"""Command-line entry point.

Each subcommand reads an optional TOML or JSON config file, applies flag
overrides (flags win), validates every field before computing anything, and
writes delimited-text outputs plus ``config.resolved.json`` into ``--out``.
Feeding ``config.resolved.json`` back through ``--config`` repeats the run.

Exit status: 0 on success, 2 on configuration errors, 1 on runtime failures.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .criteria import LABELS, METHODS, CriterionConfig, canonical_method
from .exceptions import ModelAveragingError

REQUIRED = object()


class ConfigError(Exception):
    pass


# --- config schemas -----------------------------------------------------------
# field -> (kind, default); kinds are checked by _coerce.

_COMMON = {"seed": ("int", 0), "out": ("str", "out"), "threads": ("int", 1)}
_TUNE = {"grid_size": ("int", 100), "folds": ("int", 10), "keep": ("int", 50),
         "sigma2": ("sigma2", "largest_model")}
_DATA = {"data": ("str", REQUIRED), "response": ("str", REQUIRED),
         "models": ("str", "nested_by_correlation"), "wage1": ("bool", False)}
_DGP = {"theta": ("floats", REQUIRED), "rho": ("float", 0.0), "sigma": ("float", 1.0),
        "hetero": ("bool", False), "n": ("int", REQUIRED), "models": ("models", "nested")}

SCHEMAS = {
    "simulate": {
        **_COMMON, **_TUNE,
        "setting": ("str", "nested"), "n": ("int", REQUIRED), "alpha": ("float", REQUIRED),
        "rho": ("float", 0.3), "r2": ("floats", REQUIRED), "hetero": ("bool", False),
        "reps": ("int", 200), "n_test": ("int", 1000), "methods": ("methods", list(METHODS)),
    },
    "fit": {**_COMMON, **_TUNE, **_DATA, "method": ("method", "RMMA"), "lam": ("lam", "cv")},
    "tune": {**_COMMON, **_TUNE, **_DATA, "criterion": ("method", "RMMA")},
    "stability": {
        **_COMMON, **_DGP,
        "method": ("method", "RMMA"), "lam": ("float", 0.0),
        "kinds": ("strs", ["consistency", "ploo", "floo", "ro", "aerm", "generalization"]),
        "reps": ("int", 200), "n_mc": ("int", 2000), "full": ("bool", False),
    },
    "trace": {
        **_COMMON, **_DGP,
        "which": ("str", "mallows"), "lambda_max": ("lambda_max", "auto"),
        "grid_size": ("int", 100), "n_mc": ("int", 100_000),
    },
    "realdata": {
        **_COMMON, **_TUNE, **_DATA,
        "n_train": ("int", REQUIRED), "reps": ("int", 200),
        "methods": ("methods", list(METHODS)),
    },
}


def _coerce(name, kind, value):
    def bad(expect):
        return ConfigError(f"field {name!r}: expected {expect}, got {value!r}")

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise bad("an integer")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if kind == "floats":
        vals = value if isinstance(value, list) else [value]
        return [_coerce(name, "float", v) for v in vals]
    if kind == "strs":
        vals = value if isinstance(value, list) else [value]
        return [_coerce(name, "str", v) for v in vals]
    if kind == "method":
        try:
            return canonical_method(_coerce(name, "str", value))
        except ValueError:
            raise bad(f"one of {', '.join(METHODS)}") from None
    if kind == "methods":
        vals = value if isinstance(value, list) else [value]
        return [_coerce(name, "method", v) for v in vals]
    if kind == "sigma2":
        if value == "largest_model":
            return value
        v = _coerce(name, "float", value)
        if v <= 0:
            raise bad("'largest_model' or a positive number")
        return v
    if kind == "lam":
        if value == "cv":
            return value
        v = _coerce(name, "float", value)
        if v < 0:
            raise bad("'cv' or a nonnegative number")
        return v
    if kind == "lambda_max":
        if value == "auto":
            return value
        v = _coerce(name, "float", value)
        if v <= 0:
            raise bad("'auto' or a positive number")
        return v
    if kind == "models":
        if value == "nested":
            return value
        if isinstance(value, list) and all(isinstance(m, list) for m in value):
            return [[_coerce(name, "int", i) for i in m] for m in value]
        raise bad("'nested' or a list of index lists")
    raise AssertionError(kind)


def resolve_config(command: str, raw: dict) -> dict:
    """Validate ``raw`` against the command schema and fill defaults."""
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown field(s) for {command!r}: {', '.join(unknown)}")
    out = {}
    for name, (kind, default) in schema.items():
        if name in raw:
            out[name] = _coerce(name, kind, raw[name])
        elif default is REQUIRED:
            raise ConfigError(f"missing required field {name!r}")
        else:
            out[name] = default
    _check_ranges(command, out)
    return out


def _check_ranges(command, cfg):
    positive = ["threads"] + [k for k in ("reps", "n", "n_test", "n_mc", "grid_size",
                                          "n_train") if k in cfg]
    for k in positive:
        if cfg[k] < 1:
            raise ConfigError(f"field {k!r} must be at least 1")
    if "folds" in cfg and cfg["folds"] < 2:
        raise ConfigError("field 'folds' must be at least 2")
    if "keep" in cfg and not 1 <= cfg["keep"] <= cfg["grid_size"]:
        raise ConfigError("field 'keep' must lie in [1, grid_size]")
    if command == "simulate":
        if cfg["setting"] not in ("nested", "nonnested"):
            raise ConfigError("field 'setting' must be 'nested' or 'nonnested'")
        for r2 in cfg["r2"]:
            if not 0 < r2 < 1:
                raise ConfigError(f"field 'r2' values must lie in (0, 1), got {r2}")
        if not -1 < cfg["rho"] < 1:
            raise ConfigError("field 'rho' must lie in (-1, 1)")
        if cfg["alpha"] <= 0:
            raise ConfigError("field 'alpha' must be positive")
    if command in ("tune",) and cfg["criterion"] not in ("RMMA", "RJMA"):
        raise ConfigError("field 'criterion' must be RMMA or RJMA")
    if command == "trace" and cfg["which"] not in ("mallows", "jackknife"):
        raise ConfigError("field 'which' must be 'mallows' or 'jackknife'")
    if command == "stability":
        from .stability import GAP_KINDS

        for k in cfg["kinds"]:
            if k not in GAP_KINDS:
                raise ConfigError(f"field 'kinds': unknown gap {k!r}")


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    try:
        return key.strip(), json.loads(value)
    except ValueError:
        return key.strip(), value


# --- helpers -----------------------------------------------------------------

def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _fmt_float(v):
    return repr(float(v))


def _load_source(cfg):
    from .dataio import ingest_csv, wage1_source

    if cfg["wage1"]:
        return wage1_source(cfg["data"])
    return ingest_csv(cfg["data"], cfg["response"])


def _load_specs(cfg, ts):
    from .dataio import rank_by_correlation, read_model_list

    if cfg["models"] == "nested_by_correlation":
        return rank_by_correlation(ts)
    return read_model_list(cfg["models"], ts)


def _spec_label(spec, names):
    return "+".join(names[i] for i in spec.indices)


def _dgp_and_specs(cfg):
    from .model_space import ModelSpec
    from .stability import GaussianLinearDgp

    dgp = GaussianLinearDgp(cfg["theta"], rho=cfg["rho"], sigma=cfg["sigma"],
                            hetero=cfg["hetero"])
    if cfg["models"] == "nested":
        specs = [ModelSpec(tuple(range(m))) for m in range(1, dgp.K + 1)]
    else:
        specs = [ModelSpec(tuple(m)) for m in cfg["models"]]
    for s in specs:
        if max(s.indices) >= dgp.K:
            raise ConfigError(f"field 'models': index {max(s.indices)} exceeds "
                              f"{dgp.K} columns implied by theta")
    return dgp, specs


# --- commands ------------------------------------------------------------------

def cmd_simulate(cfg, out: Path):
    from .simbench import SimConfig, run_benchmark, write_records, write_summary_csv

    results = []
    for r2 in cfg["r2"]:
        sc = SimConfig(setting=cfg["setting"], n=cfg["n"], alpha=cfg["alpha"], rho=cfg["rho"],
                       r2=r2, hetero=cfg["hetero"], reps=cfg["reps"], n_test=cfg["n_test"],
                       methods=tuple(cfg["methods"]), seed=cfg["seed"], sigma2=cfg["sigma2"],
                       grid_size=cfg["grid_size"], folds=cfg["folds"], keep=cfg["keep"],
                       n_jobs=cfg["threads"])
        res = run_benchmark(sc)
        write_records(res, out / f"records_r2_{r2:g}.jsonl")
        results.append(res)
    write_summary_csv(results, out / "summary.csv")


def cmd_fit(cfg, out: Path):
    from .estimator import ModelAveragingRegressor

    ts = _load_source(cfg)
    specs = _load_specs(cfg, ts)
    est = ModelAveragingRegressor(models=[s.indices for s in specs], method=cfg["method"],
                                  lam=cfg["lam"], sigma2=cfg["sigma2"],
                                  grid_size=cfg["grid_size"], folds=cfg["folds"],
                                  keep=cfg["keep"], random_state=cfg["seed"])
    est.fit(ts.design(), ts.y)
    names = ("intercept",) + ts.covariate_names
    _write_rows(out / "weights.csv", ["model", "size", "terms", "weight"],
                [(m, s.k, _spec_label(s, names), float(w))
                 for m, (s, w) in enumerate(zip(est.specs_, est.weights_.w))])
    _write_rows(out / "coef.csv", ["term", "coef"],
                [(nm, float(c)) for nm, c in zip(names, est.coef_)])


def cmd_tune(cfg, out: Path):
    from .tuning import TuningConfig, tuning_average

    ts = _load_source(cfg)
    specs = _load_specs(cfg, ts)
    tc = TuningConfig(grid_size=cfg["grid_size"], folds=cfg["folds"], keep=cfg["keep"],
                      seed=cfg["seed"], criterion=cfg["criterion"], sigma2=cfg["sigma2"])
    trace = tuning_average(ts.dataset(), specs, tc)
    coef = dict(zip(trace.kept.tolist(), trace.coefficients))
    _write_rows(out / "tuning_trace.csv", ["L", "lambda", "cv_error", "kept", "coefficient"],
                [(L + 1, float(lam), float(e), int(L in coef), float(coef.get(L, 0.0)))
                 for L, (lam, e) in enumerate(zip(trace.lambdas, trace.cv_errors))])
    names = ("intercept",) + ts.covariate_names
    _write_rows(out / "weights.csv", ["model", "size", "terms", "weight"],
                [(m, s.k, _spec_label(s, names), float(w))
                 for m, (s, w) in enumerate(zip(specs, trace.final_weights.w))])


def cmd_stability(cfg, out: Path):
    from .stability import gap_estimates

    dgp, specs = _dgp_and_specs(cfg)
    method = CriterionConfig(cfg["method"], cfg["lam"])
    reports = gap_estimates(cfg["kinds"], method, dgp, specs, cfg["n"], cfg["reps"],
                            cfg["seed"], n_mc=cfg["n_mc"], full=cfg["full"])
    _write_rows(out / "gaps.csv",
                ["kind", "estimate", "mc_stderr", "replications", "failures"],
                [(k, r.estimate, r.mc_stderr, r.replications, r.failures)
                 for k, r in reports.items()])


def resolve_lambda_max(cfg) -> float:
    """``auto`` is ``M log n`` for the configured candidate set."""
    if cfg["lambda_max"] != "auto":
        return float(cfg["lambda_max"])
    _, specs = _dgp_and_specs(cfg)
    return len(specs) * math.log(cfg["n"])


def cmd_trace(cfg, out: Path):
    from .model_space import Dataset, build_criterion_matrices, fit_models
    from .stability import ridge_trace

    dgp, specs = _dgp_and_specs(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(0,)))
    X, y = dgp.sample(rng, cfg["n"])
    ds = Dataset(X, y)
    fits = fit_models(ds, specs)
    cm = build_criterion_matrices(ds, specs, fits=fits)
    lambdas = np.linspace(0.0, cfg["lambda_max"], cfg["grid_size"])
    oracle_seed = np.random.SeedSequence(cfg["seed"], spawn_key=(1,))
    tr = ridge_trace(cm, ds.y, specs, fits, dgp, lambdas, cfg["n_mc"], oracle_seed,
                     which=cfg["which"])
    _write_rows(out / "trace.csv", ["lambda", "V", "B", "M1", "M_full"],
                [tuple(map(float, row)) for row in zip(tr.lambdas, tr.V, tr.B, tr.M1, tr.M_full)])
    summary = {"which": cfg["which"], "lambda_max": cfg["lambda_max"],
               "lambda_hat": tr.lambda_hat, "M1_at_0": float(tr.M1[0]),
               "M1_at_lambda_hat": tr.M1_at_lambda_hat,
               "w0": tr.w0.tolist(), "w_star": tr.w_star.tolist()}
    (out / "trace_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_realdata(cfg, out: Path):
    from .dataio import EvalProtocol, run_real_eval, write_records_csv, write_table_csv

    ts = _load_source(cfg)
    specs = _load_specs(cfg, ts)
    if cfg["n_train"] >= ts.n_rows:
        raise ConfigError(f"field 'n_train' must be below the {ts.n_rows} data rows")
    case = "nested_by_correlation" if cfg["models"] == "nested_by_correlation" else "model_list"
    protocol = EvalProtocol(n_train=cfg["n_train"], reps=cfg["reps"], seed=cfg["seed"],
                            case=case,
                            model_list=None if case != "model_list" else cfg["models"],
                            sigma2=cfg["sigma2"], grid_size=cfg["grid_size"],
                            folds=cfg["folds"], keep=cfg["keep"])
    table = run_real_eval(ts, specs, protocol, cfg["methods"])
    write_records_csv(table, out / "records.csv")
    write_table_csv(table, out / "table.csv")
    if table.failures:
        _write_rows(out / "failures.csv", ["rep", "error"],
                    [(f["rep"], f["error"]) for f in table.failures])


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "tune": cmd_tune,
            "stability": cmd_stability, "trace": cmd_trace, "realdata": cmd_realdata}

# command-specific override flags: flag -> (config key, argparse type)
OVERRIDES = {
    "simulate": {"--setting": ("setting", str), "--n": ("n", int), "--alpha": ("alpha", float),
                 "--rho": ("rho", float), "--r2": ("r2", float), "--reps": ("reps", int),
                 "--n-test": ("n_test", int)},
    "fit": {"--data": ("data", str), "--response": ("response", str),
            "--method": ("method", str), "--models": ("models", str)},
    "tune": {"--data": ("data", str), "--response": ("response", str),
             "--criterion": ("criterion", str), "--models": ("models", str)},
    "stability": {"--n": ("n", int), "--reps": ("reps", int), "--method": ("method", str),
                  "--lam": ("lam", float)},
    "trace": {"--n": ("n", int), "--lambda-max": ("lambda_max", str),
              "--which": ("which", str), "--n-mc": ("n_mc", int)},
    "realdata": {"--data": ("data", str), "--response": ("response", str),
                 "--n-train": ("n_train", int), "--reps": ("reps", int),
                 "--models": ("models", str)},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ridgema", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML or JSON file with the run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--threads", type=int, help="cap on worker parallelism")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config field (value parsed as JSON when possible)")
        for flag, (key, typ) in OVERRIDES[name].items():
            p.add_argument(flag, dest=f"ov_{key}", type=typ, default=None)
    return parser


def _raw_config(args) -> dict:
    raw = load_config_file(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a table of key/value pairs")
    # resolved echoes carry the command they came from
    tagged = raw.pop("command", args.command)
    if tagged != args.command:
        raise ConfigError(f"field 'command': config is for {tagged!r}, not {args.command!r}")
    for item in args.set:
        k, v = _parse_set(item)
        raw[k] = v
    for flag, (key, _) in OVERRIDES[args.command].items():
        v = getattr(args, f"ov_{key}")
        if v is not None:
            if key == "lambda_max" and v != "auto":
                try:
                    v = float(v)
                except ValueError:
                    raise ConfigError(f"field 'lambda_max': expected 'auto' or a number, "
                                      f"got {v!r}") from None
            raw[key] = v
    for key in ("out", "seed", "threads"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    return raw


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args.command, _raw_config(args))
        if args.command == "trace":
            cfg["lambda_max"] = resolve_lambda_max(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(
        json.dumps({"command": args.command, **cfg}, indent=2, sort_keys=True) + "\n")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg["threads"]):
            COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ModelAveragingError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
