"""Command-line interface: ``clic <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import qfdist
from .clcore import ConvergenceError, MarginScheme, ModelSpec, engine, fit
from .models import fetch_spruce, load_spruce_csv, rng_for, synthetic_spruce
from .select import NestedPairAnalysis, criteria, expected_blocks, theoretical_selection_probs
from .sim import PRESETS, ScenarioConfig, preset, run_scenario, write_replicates_csv
from .workflows import JackknifeError, jackknife, spruce_analysis

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ------------------------------------------------------------------ data


@dataclass
class LongData:
    subjects: list
    y: np.ndarray  # (n, d)
    x: np.ndarray  # (n, d, 1 + s), intercept first
    covariates: list


def load_long_csv(path):
    """Read subject_id, obs_index, response, covariate_1..covariate_s."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:3] != ["subject_id", "obs_index", "response"]:
            raise DataError(f"{path}, line 1: header must start with subject_id,obs_index,response")
        covs = header[3:]
        subjects = {}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}, line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                k = int(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}, line {line}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}, line {line}: non-finite value")
            obs = subjects.setdefault(row[0], {})
            if k in obs:
                raise DataError(f"{path}, line {line}: duplicate obs_index {k} for subject {row[0]}")
            obs[k] = vals
    if not subjects:
        raise DataError(f"{path}: no data rows")
    ids = list(subjects)
    d = len(subjects[ids[0]])
    for s in ids:
        if sorted(subjects[s]) != list(range(1, d + 1)):
            raise DataError(f"{path}: subject {s} does not have obs_index 1..{d}")
    arr = np.array([[subjects[s][k] for k in range(1, d + 1)] for s in ids])
    x = np.concatenate([np.ones(arr.shape[:2] + (1,)), arr[:, :, 1:]], axis=2)
    return LongData(ids, arr[:, :, 0], x, covs)


def write_long_csv(path, y, x, subjects=None):
    n, d = y.shape
    subjects = subjects or [str(i + 1) for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "obs_index", "response"] + [f"covariate_{j}" for j in range(1, x.shape[2])])
        for i in range(n):
            for k in range(d):
                w.writerow([subjects[i], k + 1, repr(float(y[i, k]))] + [repr(float(v)) for v in x[i, k, 1:]])


def _int_list(text, what):
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated integers, got {text!r}") from None
    if not out:
        raise UsageError(f"{what}: empty list")
    return out


def _float_list(text, what):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def build_model(family, beta_cols, z_cols, data, name=None):
    s = data.x.shape[2]
    if max(beta_cols) >= s or min(beta_cols) < 0:
        raise UsageError(f"beta columns must lie in 0..{s - 1}")
    d = data.y.shape[1]
    if family == "exchangeable":
        return ModelSpec.exchangeable(d, beta_cols, name)
    if family == "unstructured":
        return ModelSpec.unstructured(d, beta_cols, name)
    if family == "lmm":
        if not z_cols:
            raise UsageError("the lmm family needs --z-cols")
        z = data.x[0][:, z_cols]
        if not np.allclose(data.x[:, :, z_cols], z[None], rtol=0, atol=1e-12):
            raise DataError("random-effect columns must be identical across subjects")
        return ModelSpec.lmm(z, beta_cols, name)
    raise UsageError(f"unknown family {family!r}")


def _model_desc(family, beta_cols, z_cols):
    return {"family": family, "beta_cols": list(beta_cols), "z_cols": list(z_cols or [])}


def _parse_candidate(text):
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"candidate {text!r}: use family:beta_cols[:z_cols]")
    z = _int_list(parts[2], "z columns") if len(parts) == 3 else None
    return parts[0], _int_list(parts[1], "beta columns"), z


# ------------------------------------------------------------------ output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(obj, path=None):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=False)
    if path:
        Path(path).write_text(text + "\n")
    return text


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _write_rows(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])


def _print_rows(rows, out):
    cols = list(rows[0])
    cells = [cols] + [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(cols))]
    for row in cells:
        print("  ".join(c.rjust(w) for c, w in zip(row, widths)), file=out)


# ------------------------------------------------------------------ commands


def cmd_fit(args, out):
    data = load_long_csv(args.data)
    beta = _int_list(args.beta_cols, "--beta-cols")
    z = _int_list(args.z_cols, "--z-cols") if args.z_cols else None
    model = build_model(args.family, beta, z, data)
    scheme = MarginScheme.named(args.scheme, data.y.shape[1])
    if args.evaluate:
        stored = json.loads(Path(args.evaluate).read_text())
        theta = np.asarray(stored["theta_hat"], dtype=float)
        value = engine.log_cl(model, scheme, data.y, data.x, theta)
        res = {"logCL": value, "stored_logCL": stored["logCL"], "difference": value - stored["logCL"]}
        print(_dump_json(res, args.out), file=out)
        return EXIT_OK
    f = fit(model, scheme, data.y, data.x)
    rep = criteria([f], classical=args.classical, penalty=args.penalty)
    res = {
        "model": _model_desc(args.family, beta, z),
        "scheme": scheme.name,
        "n": f.n,
        "p": f.p,
        "param_names": model.param_names(),
        "theta_hat": f.theta_hat,
        "natural": f.natural(),
        "sandwich_se": f.sandwich_se,
        "logCL": f.logCL,
        "penalty": f.penalty,
        "penalty_model": f.penalty_of("model"),
        "iterations": f.iterations,
        "boundary": f.boundary,
        "criteria": rep.rows()[0],
        "H": f.H_hat,
        "J": f.J_hat,
    }
    text = _dump_json(res, args.out)
    if args.json:
        print(text, file=out)
    else:
        print(f"{model.name} / {scheme.name}: n={f.n} p={f.p} logCL={f.logCL:.6f} tr(JH^-1)={f.penalty:.4f}", file=out)
        rows = [
            {"parameter": k, "estimate": v, "sandwich_se": s}
            for k, v, s in zip(model.param_names(), f.theta_hat, f.sandwich_se)
        ]
        _print_rows(rows, out)
        _print_rows(rep.rows(), out)
    return EXIT_OK


def cmd_select(args, out):
    data = load_long_csv(args.data)
    if len(args.candidate) < 2:
        raise UsageError("give at least two --candidate options")
    scheme = MarginScheme.named(args.scheme, data.y.shape[1])
    fits = []
    for k, text in enumerate(args.candidate):
        fam, beta, z = _parse_candidate(text)
        model = build_model(fam, beta, z, data, name=text)
        fits.append(fit(model, scheme, data.y, data.x))
    rep = criteria(fits, classical=args.classical, penalty=args.penalty, divisor=args.divisor)
    rows = rep.rows()
    if args.out:
        _write_rows(rows, args.out)
    if args.json:
        print(_dump_json(rows), file=out)
    else:
        _print_rows(rows, out)
    return EXIT_OK


def _scenario_from_args(args):
    if args.config:
        try:
            cfg = ScenarioConfig.from_toml(args.config)
        except OSError as exc:
            raise DataError(f"{args.config}: {exc.strerror}") from None
        except (TypeError, ValueError) as exc:
            raise DataError(f"{args.config}: {exc}") from None
    elif args.preset:
        kwargs = {}
        for item in args.param or []:
            key, _, val = item.partition("=")
            if not _:
                raise UsageError(f"--param {item!r}: use key=value")
            try:
                kwargs[key] = json.loads(val)
            except json.JSONDecodeError:
                kwargs[key] = val
        try:
            cfg = preset(args.preset, **kwargs)
        except TypeError as exc:
            raise UsageError(str(exc)) from None
    else:
        raise UsageError("give --config or --preset")
    if getattr(args, "replicates", None) is not None:
        cfg.replicates = args.replicates
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_simulate(args, out):
    cfg = _scenario_from_args(args)
    if args.write_config:
        path = Path(args.write_config)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(cfg.to_toml())
    table = run_scenario(cfg, workers=args.workers)
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_replicates_csv(table, d / f"{cfg.id}_replicates.csv")
        table.write_summary_csv(d / f"{cfg.id}_summary.csv")
    print(_dump_json(table.to_dict()), file=out)
    return EXIT_OK


def cmd_qfprob(args, out):
    lam = _float_list(args.lambdas, "--lambdas")
    nc = _float_list(args.noncentrality, "--noncentrality") if args.noncentrality else None
    try:
        law = qfdist.QuadFormLaw(lam, nc)
        query = qfdist.TailQuery(args.threshold, not args.lower, args.method, args.draws, tol=args.tol, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = qfdist.tail_prob(law, query)
    if args.json:
        print(_dump_json({"prob": res.prob, "error": res.error, "method": res.method}), file=out)
    else:
        side = "P(Q > c)" if query.upper else "P(Q <= c)"
        print(f"{side} = {res.prob:.6f}  (error {res.error:.2e}, {res.method})", file=out)
    return EXIT_OK


def _blocks_from_file(path):
    try:
        with np.load(path) as z:
            parts = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    need = {"H1", "J11", "H2", "J22", "J12"}
    if not need <= set(parts):
        raise DataError(f"{path}: missing arrays {sorted(need - set(parts))}")
    return NestedPairAnalysis(
        parts["H1"], parts["J11"], parts["H2"], parts["J22"], parts["J12"], parts.get("J21"), {"mode": "file"}
    ), (int(parts["n"]) if "n" in parts else None)


def cmd_eigen(args, out):
    if args.blocks:
        blocks, n = _blocks_from_file(args.blocks)
    else:
        cfg = _scenario_from_args(args)
        scheme_name = args.scheme or next(s for s in cfg.schemes if s != "FULL")
        scheme = MarginScheme.named(scheme_name, cfg.d)
        rng = rng_for(args.seed if args.seed is not None else cfg.seed, "design")
        designs = cfg.covariates.draw(args.design_n, cfg.d, rng)
        m1, m2 = cfg.models()[:2]
        blocks = expected_blocks(cfg.law(), designs, m1, m2, scheme, args.mode, args.draws, cfg.seed)
        n = cfg.n
    if args.save:
        arrays = {k: getattr(blocks, k) for k in ("H1", "J11", "H2", "J22", "J12", "J21")}
        if n is not None:
            arrays["n"] = np.array(n)
        np.savez(args.save, **arrays)
    ev = blocks.eigenvalues(rtol=args.rtol)
    res = {
        "eigenvalues": ev.values,
        "max_imag": ev.max_imag,
        "complex_flag": ev.complex_flag,
        "penalty1": blocks.penalty1,
        "penalty2": blocks.penalty2,
        "trace_B": float(np.trace(blocks.bmatrix())),
    }
    if n is not None and ev.m and np.all(ev.values > 0):
        res["selection_prob_smaller"] = theoretical_selection_probs(ev.values, n)
    print(_dump_json(res), file=out)
    return EXIT_OK


def cmd_jackknife(args, out):
    data = load_long_csv(args.data)
    beta = _int_list(args.beta_cols, "--beta-cols")
    z = _int_list(args.z_cols, "--z-cols") if args.z_cols else None
    model = build_model(args.family, beta, z, data)
    scheme = MarginScheme.named(args.scheme, data.y.shape[1])
    f = fit(model, scheme, data.y, data.x)
    jk = jackknife(model, scheme, data.y, data.x, f.theta_hat, names=model.param_names())
    rows = [dict(r, sandwich_se=s) for r, s in zip(jk.rows(), f.sandwich_se)]
    if args.out:
        _write_rows(rows, args.out)
    if args.deletions:
        np.savetxt(args.deletions, jk.deletions, delimiter=",", header=",".join(jk.names), comments="")
    if args.json:
        print(_dump_json(rows), file=out)
    else:
        _print_rows(rows, out)
    return EXIT_OK


def _spruce_tables(an):
    schemes = list(an.estimates)
    names = an.estimates[schemes[0]].names
    est = []
    for k, name in enumerate(names):
        row = {"parameter": name}
        for s in schemes:
            row[s] = an.estimates[s].estimate[k]
            row[f"{s}_se"] = an.estimates[s].se[k]
        est.append(row)
    crit = []
    for j, nb in enumerate((6, 5, 4, 3)):
        row = {"n_betas": nb}
        for s, rep in an.reports.items():
            for label, vals in rep.values().items():
                row[f"{label}" if s == "FULL" else f"{label}_{s}"] = vals[j]
        crit.append(row)
    dec = {"n_betas": "decision"}
    for key, v in an.decisions().items():
        label, s = key[:-1].split("[")
        dec[label if s == "FULL" else f"{label}_{s}"] = v
    crit.append(dec)
    return est, crit


def cmd_spruce(args, out):
    if args.synthetic is not None:
        data = synthetic_spruce(args.synthetic)
    else:
        path = args.data or fetch_spruce()
        if path is None:
            raise DataError("spruce data not found: pass --data, set CLIC_SPRUCE_CSV or use --synthetic SEED")
        try:
            data = load_spruce_csv(path)
        except OSError as exc:
            raise DataError(f"{path}: {exc.strerror}") from None
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    an = spruce_analysis(
        data,
        with_jackknife=not args.no_jackknife,
        penalty="empirical" if args.raw else "model",
        drop_constant=not args.raw,
    )
    est, crit = _spruce_tables(an)
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        _write_rows(est, d / "spruce_estimates.csv")
        _write_rows(crit, d / "spruce_criteria.csv")
    if args.json:
        print(_dump_json({"estimates": est, "criteria": crit}), file=out)
    else:
        _print_rows(est, out)
        print(file=out)
        _print_rows(crit, out)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_model_args(p):
    p.add_argument("--data", required=True, help="long-format CSV")
    p.add_argument("--family", choices=["exchangeable", "unstructured", "lmm"], default="exchangeable")
    p.add_argument("--beta-cols", default="0", help="design columns in the mean (0 = intercept)")
    p.add_argument("--z-cols", help="design columns carrying random effects (lmm)")
    p.add_argument("--scheme", default="FULL", help="FULL, BCL or TCL")


def _add_scenario_args(p):
    p.add_argument("--config", help="TOML scenario file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--param", action="append", help="preset keyword as key=value (repeatable)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="clic", description="Composite likelihood information criteria.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model")
    _add_model_args(p)
    p.add_argument("--penalty", choices=["empirical", "model"], default="empirical")
    p.add_argument("--classical", action="store_true", help="penalty = parameter count")
    p.add_argument("--evaluate", metavar="FIT_JSON", help="re-evaluate logCL at a stored fit instead of fitting")
    p.add_argument("--out", help="write the fit as JSON")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="compare candidate models")
    p.add_argument("--data", required=True)
    p.add_argument("--candidate", action="append", default=[], help="family:beta_cols[:z_cols], repeatable")
    p.add_argument("--scheme", default="BCL")
    p.add_argument("--penalty", choices=["empirical", "model"], default="empirical")
    p.add_argument("--classical", action="store_true")
    p.add_argument("--divisor", type=float, default=1.0)
    p.add_argument("--out", help="criterion table CSV")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    _add_scenario_args(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir")
    p.add_argument("--write-config", help="save the resolved scenario as TOML")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("qfprob", help="tail probability of a weighted chi-square sum")
    p.add_argument("--lambdas", required=True)
    p.add_argument("--threshold", type=float, required=True)
    side = p.add_mutually_exclusive_group()
    side.add_argument("--upper", action="store_true", default=True)
    side.add_argument("--lower", action="store_true")
    p.add_argument("--noncentrality")
    p.add_argument("--method", choices=["cf", "mc"], default="cf")
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_qfprob)

    p = sub.add_parser("eigen", help="B-matrix eigenvalues of a nested pair")
    p.add_argument("--blocks", help=".npz with H1, J11, H2, J22, J12 [, J21, n]")
    _add_scenario_args(p)
    p.add_argument("--scheme")
    p.add_argument("--mode", choices=["closed-form", "monte-carlo"], default="closed-form")
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--design-n", type=int, default=2000, help="design rows used for the expectations")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--save", help="store the blocks as .npz")
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("jackknife", help="delete-one jackknife standard errors")
    _add_model_args(p)
    p.add_argument("--out")
    p.add_argument("--deletions", help="CSV of the deletion estimates")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_jackknife)

    p = sub.add_parser("spruce", help="spruce growth analysis")
    p.add_argument("--data", help="CSV with tree_id, plot, day, log_size")
    p.add_argument("--synthetic", type=int, metavar="SEED", help="use simulated look-alike data")
    p.add_argument("--no-jackknife", action="store_true")
    p.add_argument("--raw", action="store_true", help="sandwich penalty and full Gaussian constant")
    p.add_argument("--out-dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_spruce)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"clic {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"clic {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, JackknifeError, qfdist.QuadratureError, np.linalg.LinAlgError) as exc:
        print(f"clic {args.command}: numerical failure: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace:
            for it, (val, g) in enumerate(trace[-10:]):
                print(f"  iter {it}: logCL={val:.10g} |grad|={g:.3e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"clic {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
