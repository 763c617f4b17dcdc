"""Config-driven command-line runner.

One YAML file describes one job.  Each run writes ``report.json`` (byte
identical for identical configs), ``sweep.csv`` for sweeps, and
``run_record.json`` carrying the wall time.

Exit codes: 0 completed (any verdict), 1 execution error, 2 usage error,
3 unknown job kind, 4 invalid config, 5 missing file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml
from scipy import fft as sfft

from . import __version__, fields, fit, lab, opalg, quad, weights

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_UNKNOWN_KIND, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3, 4, 5
JOB_KINDS = ("op-check", "weight-check", "potential-eval", "experiment", "report-merge")
SUBCOMMAND_KIND = {"op": "op-check", "weights": "weight-check", "potential": "potential-eval",
                   "experiment": "experiment", "merge": "report-merge"}
CSV_COLUMNS = ("param", "lhs", "rhs", "ratio", "fitted_law", "r2")
OUT_ENV = "SWLAB_OUT"


class ConfigError(ValueError):
    pass


class UnknownJobError(ValueError):
    pass


# --------------------------------------------------------------------------- serialization


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON form; key order does not matter."""
    canon = json.dumps(jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        cfg = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping at top level")
    return cfg


def _need(cfg: dict, key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where} missing key {key!r}")
    return cfg[key]


def _params(cfg: dict) -> weights.SWParams:
    try:
        return weights.SWParams.from_dict(_need(cfg, "params"))
    except weights.WeightError as e:
        raise ConfigError(f"params: {e}") from None


def _weight(cfg: dict, key: str):
    try:
        return weights.weight_from_dict(_need(cfg, key))
    except weights.WeightError as e:
        raise ConfigError(f"{key}: {e}") from None


def _operator(cfg: dict) -> opalg.HomogeneousOperator:
    spec = _need(cfg, "operator")
    try:
        if isinstance(spec, str):
            return opalg.load_operator(spec)
        return opalg.operator_from_dict(spec)
    except opalg.OperatorError as e:
        raise ConfigError(f"operator: {e}") from None


def _tol(cfg: dict, key: str, default: float) -> float:
    return float(cfg.get("tolerances", {}).get(key, default))


# --------------------------------------------------------------------------- jobs


def run_op_check(cfg: dict) -> dict:
    op = _operator(cfg)
    checks = cfg.get("checks", ["cocanceling", "canceling", "ellipticity", "projection"])
    seed = int(cfg.get("seed", 0))
    out: dict = {"operator": opalg.operator_to_dict(op), "verdicts": {}, "results": {}}
    for name in checks:
        if name == "cocanceling":
            rep = opalg.cocanceling_check(op)
        elif name == "canceling":
            rep = opalg.canceling_check(op, seed=seed)
        elif name == "ellipticity":
            rep = opalg.ellipticity_check(op, seed=seed)
        elif name == "projection":
            try:
                km = opalg.solve_projection_maps(op)
            except opalg.NoIdentityError as e:
                out["verdicts"]["projection"] = "unsolvable"
                out["results"]["projection"] = {"error": str(e)}
                continue
            C, per = opalg.leibniz_constant(op, km)
            out["verdicts"]["projection"] = "solved"
            out["results"]["projection"] = {"residual": km.residual, "leibniz_constant": C, "per_order": per,
                                            "maps": {str(list(k.exponents)): v for k, v in km.maps.items()}}
            continue
        else:
            raise ConfigError(f"checks: unknown check {name!r}")
        out["verdicts"][name] = rep.verdict
        out["results"][name] = rep.to_dict()
    out["verdict"] = ", ".join(f"{k}={v}" for k, v in out["verdicts"].items())
    return out


def run_weight_check(cfg: dict) -> dict:
    cond = _need(cfg, "condition")
    N = int(cfg.get("N", cfg.get("params", {}).get("N", 2)))
    if cond == "admissible":
        P = _params(cfg)
        regime = cfg.get("regime", "p_gt_1")
        v = weights.sw_admissible(P, regime)
        return {"verdict": "admissible" if v.ok else "inadmissible", "result": v.to_dict()}
    if cond == "pointwise":
        rep = weights.pointwise_condition(_weight(cfg, "u"), _weight(cfg, "v"), float(_need(cfg, "ell")),
                                          float(_need(cfg, "q")), N)
    elif cond == "hardy":
        rep = weights.hardy_constant(_weight(cfg, "u"), _weight(cfg, "v"), float(_need(cfg, "q")),
                                     cfg.get("variant", "w2"), cfg.get("R_grid"), N)
    elif cond == "sawyer":
        rep = weights.sawyer_testing(_weight(cfg, "u"), _weight(cfg, "v"), _params(cfg), _balls(cfg, N))
    elif cond == "bump":
        rep = weights.bump_condition(_weight(cfg, "u"), _weight(cfg, "v"), _params(cfg), float(_need(cfg, "r")),
                                     _balls(cfg, N), cfg.get("form", "averaged"))
    elif cond == "bump_u3":
        rep = weights.bump_u3(_weight(cfg, "u"), float(_need(cfg, "p")), float(_need(cfg, "ell")),
                              float(_need(cfg, "q")), _balls(cfg, N), N=N)
    elif cond == "pesopeso":
        rep = weights.pesopeso_condition(_weight(cfg, "u"), _weight(cfg, "v"), float(_need(cfg, "ell")),
                                         float(_need(cfg, "q")), N=N)
    else:
        raise ConfigError(f"condition: unknown condition {cond!r}")
    return {"verdict": "finite" if rep.finite else "divergent", "result": rep.to_dict()}


def _balls(cfg: dict, N: int):
    b = cfg.get("balls")
    if b is None:
        return None
    return weights.ball_family(N, [tuple(c) for c in b.get("centers", [[0.0] * N])], b.get("radii"))


def _field(cfg: dict):
    spec = _need(cfg, "field")
    if spec.get("kind") == "ball-indicator":
        return None
    try:
        return fields.field_from_dict(spec)
    except fields.FieldError as e:
        raise ConfigError(f"field: {e}") from None


def _grid(cfg: dict, f, N: int) -> quad.GridSpec:
    g = cfg.get("grid", {})
    try:
        if "L" in g:
            return quad.GridSpec(N, float(g["L"]), int(g.get("n", 256)))
        if f is None:
            raise ConfigError("grid: an indicator field needs grid.L")
        return quad.fit_grid(f, int(g.get("n", 256)), float(g.get("margin", 4.0)))
    except quad.QuadratureError as e:
        raise ConfigError(f"grid: {e}") from None


def run_potential_eval(cfg: dict) -> dict:
    k = _need(cfg, "kernel")
    try:
        kern = quad.riesz_kernel(int(_need(k, "N", "kernel")), float(_need(k, "ell", "kernel")))
    except quad.QuadratureError as e:
        raise ConfigError(f"kernel: {e}") from None
    f = _field(cfg)
    grid = _grid(cfg, f, kern.dim)
    if f is None:
        spec = cfg["field"]
        c = np.asarray(spec.get("center", [0.0] * kern.dim), dtype=float)
        vals = (np.linalg.norm(grid.points() - c, axis=-1) < float(spec.get("radius", 1.0))).astype(float)
        src = quad.FieldSamples(grid, vals)
    else:
        src = f
    pts = np.asarray(cfg.get("points", [[0.0] * kern.dim]), dtype=float)
    if f is None:
        pot = quad.riesz_potential(src, kern)
        idx = np.round((pts + grid.L) / grid.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= grid.n) or not np.allclose(idx * grid.h - grid.L, pts, atol=1e-9 * grid.h):
            raise ConfigError("points: indicator potentials are evaluated at grid nodes only")
        vals = pot[tuple(idx.T)]
    else:
        vals = quad.riesz_potential(src, kern, pts, grid=grid)
    out = {"points": pts, "values": vals, "grid": grid.to_dict(), "kernel": {"N": kern.dim, "ell": kern.ell}}
    if cfg.get("regularity_check"):
        out["regularity"] = quad.kernel_regularity_check(kern, int(cfg.get("pair_samples", 2000)),
                                                          int(cfg.get("seed", 0)))
    return {"verdict": "evaluated", "result": out}


def run_experiment(cfg: dict) -> dict:
    probe = _need(cfg, "probe")
    sweep = cfg.get("sweep", {})
    r2 = _tol(cfg, "r2_min", fit.R2_MIN)
    spread = _tol(cfg, "spread_max", fit.SPREAD_MAX)
    n = int(cfg.get("grid", {}).get("n", 256))
    if probe == "ratio":
        P = _params(cfg)
        f = _field(cfg)
        op = _operator(cfg) if "operator" in cfg else None
        rep = lab.inequality_ratio(f, P, op=op, regime=cfg.get("regime", "p_eq_1"), n=n,
                                   tail=bool(cfg.get("tail", True)))
        return {"verdict": "bounded" if rep.ratio is not None else "degenerate", "result": rep.to_dict()}
    if probe == "scale_invariance":
        P = _params(cfg)
        fam = cfg.get("family", {"kind": "divfree"})
        base = fields.make_bump(P.N, None, float(fam.get("radius", 1.0)))
        kind = fam.get("kind", "divfree")
        if kind == "divfree":
            family = lambda e: fields.divfree_family(base, e)
        elif kind == "mollifier":
            family = lambda e: fields.mollifier_family(base, e)
        else:
            raise ConfigError(f"family.kind: unknown family {kind!r}")
        op = _operator(cfg) if "operator" in cfg else None
        tr = lab.scale_invariance_suite(family, _need(sweep, "eps", "sweep"), P, op=op,
                                        regime=cfg.get("regime", "p_eq_1"), n=n, tail=bool(cfg.get("tail", True)),
                                        spread_max=_tol(cfg, "spread_max", 0.02))
    elif probe == "scalar":
        P = _params(cfg)
        tr = lab.counterexample_scalar_probe(P, _need(sweep, "a", "sweep"), cfg.get("eps"), sweep.get("eps"),
                                             enforce_scaling=bool(cfg.get("enforce_scaling", True)),
                                             r2_min=r2, spread_max=spread)
    elif probe == "alpha1":
        P = _params(cfg)
        tr = lab.counterexample_alpha1_probe(P, _need(sweep, "a", "sweep"), float(cfg.get("eps_factor", 1 / 64)),
                                             enforce_alpha=bool(cfg.get("enforce_alpha", True)),
                                             r2_min=r2, spread_max=spread)
    elif probe == "necessity":
        P = _params(cfg)
        tr = lab.necessity_probe(_operator(cfg), _need(sweep, "lambda", "sweep"), P, cfg.get("method", "radial"),
                                 growth_tol=_tol(cfg, "growth_tol", 0.2), r2_min=r2)
    elif probe == "claim":
        k = _need(cfg, "kernel")
        kern = quad.riesz_kernel(int(_need(k, "N", "kernel")), float(_need(k, "ell", "kernel")))
        tr = lab.claim_convergence_probe(kern, _need(sweep, "lambda", "sweep"), _need(cfg, "x_samples"),
                                         cfg.get("theta"), cfg.get("kappa"))
    elif probe == "lemma31":
        op = _operator(cfg)
        km = opalg.solve_projection_maps(op)
        pairs = lab.random_lemma_pairs(int(cfg.get("pairs", 100)), int(cfg.get("seed", 0)), op.dim)
        g = cfg.get("grid", {})
        grid = quad.GridSpec(op.dim, float(g.get("L", 6.0)), int(g.get("n", 128)))
        tr = lab.lemma31_check(op, km, pairs, grid, quad_tol=_tol(cfg, "quad_tol", 1e-6))
    elif probe == "estimator":
        P = _params(cfg)
        op = _operator(cfg) if "operator" in cfg else None
        bounds = {k: tuple(v) for k, v in _need(cfg, "bounds").items()}
        unknown = set(bounds) - {"eps", "center_radius", "anisotropy"}
        if unknown:
            raise ConfigError(f"bounds: unknown parameter {sorted(unknown)[0]!r}")

        def objective(x):
            f = lab.divfree_member(P.N, x.get("eps", 1.0), x.get("center_radius", 0.0), x.get("anisotropy", 1.0))
            return lab.inequality_ratio(f, P, op=op, n=n).ratio

        rep = lab.constant_estimator(objective, bounds, int(cfg.get("budget", 50)), int(cfg.get("seed", 0)))
        return {"verdict": "incomplete" if rep.incomplete else "complete", "result": rep.to_dict(),
                "rows": [{"param": json.dumps(jsonable(h["x"]), sort_keys=True), "lhs": "", "rhs": "",
                          "ratio": h["value"], "fitted_law": "", "r2": ""} for h in rep.history]}
    else:
        raise ConfigError(f"probe: unknown probe {probe!r}")
    rows = tr.rows(*_row_keys(tr))
    return {"verdict": tr.verdict, "result": tr.to_dict(), "rows": rows}


def _row_keys(tr: lab.TrendReport) -> tuple[str, str, str]:
    obs = tr.observed
    lhs = "lhs_q" if "lhs_q" in obs else ("error" if "error" in obs else "lhs")
    ratio = "ratio_q" if "ratio_q" in obs else "ratio"
    return lhs, "rhs", ratio


def report_merge(paths, out_dir: Path | None = None) -> dict:
    rows, versions, seen = [], set(), set()
    for p in paths:
        p = Path(p)
        if p.is_dir():
            p = p / "report.json"
        if not p.is_file():
            raise FileNotFoundError(f"report not found: {p}")
        rep = json.loads(p.read_text())
        sub = rep.get("merged") if rep.get("job") == "report-merge" else None
        for r in (sub if sub is not None else [_summary_row(rep)]):
            if r["config_hash"] in seen:
                continue
            seen.add(r["config_hash"])
            versions.add(r.get("version"))
            rows.append(r)
    rows.sort(key=lambda r: r["config_hash"])
    warn = []
    if len(versions) > 1:
        warn.append(f"conflicting tool versions: {sorted(str(v) for v in versions)}")
        for w in warn:
            warnings.warn(w)
    return {"verdict": "merged", "merged": rows, "warnings": warn}


def _summary_row(rep: dict) -> dict:
    res = rep.get("result") or {}
    key = None
    if isinstance(res, dict):
        for k in ("constant", "ratio", "best_ratio"):
            if res.get(k) is not None:
                key = res[k]
                break
        if key is None and isinstance(res.get("law"), dict):
            key = res["law"].get("slope", res["law"].get("value"))
    return {"config_hash": rep.get("config_hash"), "job": rep.get("job"), "probe": rep.get("probe"),
            "verdict": rep.get("verdict"), "key_constant": key, "version": rep.get("version"),
            "failed": rep.get("status") != "ok", "error": rep.get("error")}


RUNNERS = {"op-check": run_op_check, "weight-check": run_weight_check, "potential-eval": run_potential_eval,
           "experiment": run_experiment}


# --------------------------------------------------------------------------- driver


def _write_outputs(out_dir: Path, report: dict, rows, record: dict) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [str(out_dir / "report.json")]
    (out_dir / "report.json").write_text(dumps(report))
    if rows:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: jsonable(r.get(k, "")) for k in CSV_COLUMNS})
        (out_dir / "sweep.csv").write_text(buf.getvalue())
        paths.append(str(out_dir / "sweep.csv"))
    record["artifacts"] = paths + [str(out_dir / "run_record.json")]
    (out_dir / "run_record.json").write_text(dumps(record))
    return paths


def execute(cfg: dict, out_dir: Path, seed: int | None = None, threads: int = 1,
            expected_kind: str | None = None, merge_paths=None) -> int:
    if seed is not None:
        cfg = {**cfg, "seed": seed}
    if merge_paths:
        cfg = {**cfg, "paths": list(cfg.get("paths", [])) + [str(p) for p in merge_paths]}
    kind = cfg.get("job", expected_kind)
    if kind is None:
        raise ConfigError("config missing key 'job'")
    if kind not in JOB_KINDS:
        raise UnknownJobError(f"unknown job kind {kind!r}; expected one of {', '.join(JOB_KINDS)}")
    if expected_kind is not None and kind != expected_kind:
        raise ConfigError(f"job: config is a {kind!r} job, subcommand expects {expected_kind!r}")
    chash = config_hash(cfg)
    report = {"job": kind, "config": cfg, "config_hash": chash, "seed": int(cfg.get("seed", 0)),
              "version": __version__, "probe": cfg.get("probe")}
    t0 = time.perf_counter()
    status, rows, code = "ok", None, EXIT_OK
    try:
        with sfft.set_workers(max(1, int(threads))), np.errstate(all="ignore"):
            if kind == "report-merge":
                paths = list(cfg.get("paths", []))
                if not paths:
                    raise ConfigError("report-merge needs at least one report path")
                body = report_merge(paths)
            else:
                body = RUNNERS[kind](cfg)
        rows = body.pop("rows", None)
        report.update(body)
    except (ConfigError, FileNotFoundError):
        raise
    except Exception as e:  # execution error: still leave a report behind
        status, code = "failed", EXIT_ERROR
        report.update({"verdict": "error", "error": f"{type(e).__name__}: {e}"})
        print(f"swlab: execution error: {type(e).__name__}: {e}", file=sys.stderr)
    report["status"] = status
    record = {"config_hash": chash, "version": __version__, "seed": report["seed"], "threads": int(threads),
              "wall_time_s": time.perf_counter() - t0, "verdict": report.get("verdict"), "status": status}
    _write_outputs(out_dir, report, rows, record)
    print(f"{kind}: {report.get('verdict')} -> {out_dir / 'report.json'}")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swlab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"swlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("op", "structural checks of a differential operator"),
                        ("weights", "weight conditions and admissibility"),
                        ("potential", "Riesz potential evaluation"),
                        ("experiment", "ratio sweeps and blow-up probes"),
                        ("run", "any job, dispatched on the config's job kind")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML job file")
        _common(p)
    p = sub.add_parser("merge", help="merge run reports into one summary table")
    p.add_argument("paths", nargs="*", help="report.json files or run directories")
    p.add_argument("--config", help="optional YAML with a 'paths' list")
    _common(p)
    return ap


def _common(p):
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./swlab_out/<hash>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="FFT worker threads (results do not depend on it)")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = {"job": "report-merge"}
        if args.command == "merge":
            cfg.setdefault("job", "report-merge")
        expected = None if args.command == "run" else SUBCOMMAND_KIND[args.command]
        if args.out:
            out = Path(args.out)
        else:
            base = Path(os.environ.get(OUT_ENV, "swlab_out"))
            c = {**cfg, "seed": args.seed} if args.seed is not None else cfg
            if args.command == "merge" and args.paths:
                c = {**c, "paths": list(c.get("paths", [])) + list(args.paths)}
            out = base / config_hash(c)[:12]
        return execute(cfg, out, args.seed, args.threads, expected,
                       getattr(args, "paths", None) if args.command == "merge" else None)
    except FileNotFoundError as e:
        print(f"swlab: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except UnknownJobError as e:
        print(f"swlab: {e}", file=sys.stderr)
        return EXIT_UNKNOWN_KIND
    except (ConfigError, weights.WeightError, quad.QuadratureError, fields.FieldError, opalg.OperatorError) as e:
        print(f"swlab: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
