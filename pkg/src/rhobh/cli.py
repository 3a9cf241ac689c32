"""Command-line front end: ``rhobh simulate | analyze | null-cdf-check``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error at run time.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import InvalidInputError, ProcedureConfig, RhoError, make_rng
from .dist import STD_NORMAL, Normal, NormalLocationNullCdf, build_null_cdf_mc, std_normal_quantile, sup_distance
from .simulation import BIVARIATE_PRESETS, METHODS, SCENARIO_KINDS, Scenario, run_replications

DEFAULT_GRIDS = {
    "univariate-blocks-1": [2.0, 2.5, 3.0, 3.5, 4.0],
    "univariate-blocks-2": [0.5, 0.6, 0.7, 0.8, 0.9],
    "bivariate": [2.0, 3.0, 4.0, 5.0, 6.0],
    "null-only": [0.0],
    "custom-dependence": [0.8],
}
DEFAULT_METHODS = ["bh", "clfdr", "ebh", "rho-bh-or", "rho-bh-side-dd"]
ANALYZE_METHODS = ("rho-bh-dd", "rho-bh-side-dd")
P_CLIP = 1e-300


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

LIST_KEYS = {"method", "param"}
SETTINGS = {
    # key: (type, default)
    "alpha": (float, 0.05),
    "seed": (int, 0),
    "reps": (int, 100),
    "method": (str, None),
    "scenario": (str, "univariate-blocks-1"),
    "param": (float, None),
    "m": (int, 5000),
    "preset": (str, "medium-moderate"),
    "mc-samples": (int, 1000),
    "mean-transform": (str, "exp"),
    "out-dir": (str, "."),
    "workers": (int, 1),
    "input": (str, None),
    "mu": (float, 2.0),
    "g-mean": (float, 2.0),
}


def read_config_file(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment, lists are comma-separated."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in SETTINGS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = [v.strip() for v in value.split(",") if v.strip()] if key in LIST_KEYS else value
    return out


def resolve_settings(args) -> dict:
    """Defaults < config file < command-line flags, converted to their types."""
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in SETTINGS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            raw[key] = value
    out = {}
    for key, (kind, default) in SETTINGS.items():
        value = raw.get(key, default)
        if value is None:
            out[key] = None
            continue
        try:
            out[key] = [kind(v) for v in value] if key in LIST_KEYS else kind(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if not 0 < out["alpha"] < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {out['alpha']}")
    for key in ("reps", "m", "mc-samples", "workers"):
        if out[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if out["mean-transform"] not in ("exp", "linear"):
        raise ConfigError("mean-transform must be exp or linear")
    return out


# where output goes and how many processes compute it do not change results
DIGEST_EXCLUDE = {"out-dir", "workers"}


def config_digest(settings: dict) -> str:
    text = "\n".join(f"{k}={settings[k]!r}" for k in sorted(settings) if k not in DIGEST_EXCLUDE)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _provenance(settings) -> str:
    return f"# seed={settings['seed']} config={config_digest(settings)} version={__version__}\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header: str, rows, provenance: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(provenance)
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    settings = resolve_settings(args)
    kind = settings["scenario"]
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario {kind!r}; choose from {', '.join(SCENARIO_KINDS)}")
    methods = settings["method"] or DEFAULT_METHODS
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {', '.join(unknown)}; choose from {', '.join(sorted(METHODS))}")
    if settings["preset"] not in BIVARIATE_PRESETS:
        raise ConfigError(f"unknown preset {settings['preset']!r}")
    k_c, k_d, k_f = BIVARIATE_PRESETS[settings["preset"]]
    params = settings["param"] or DEFAULT_GRIDS[kind]
    try:
        scenarios = [Scenario(kind, settings["m"], p, k_c, k_d, k_f, settings["mean-transform"],
                              settings["g-mean"]) for p in params]
    except RhoError as exc:
        raise ConfigError(str(exc)) from exc
    config = ProcedureConfig(alpha=settings["alpha"], mc_samples=settings["mc-samples"], seed=settings["seed"])

    results, summary = [], []
    for sc in scenarios:
        records, agg = run_replications(sc, methods, settings["reps"], settings["alpha"],
                                        settings["seed"], config, settings["workers"])
        for r in records:
            results.append((r.method, kind, sc.param, r.replicate, r.fdp, r.power, r.rejections, r.seed))
            if r.error:
                print(f"warning: {r.method} replicate {r.replicate}: {r.error}", file=sys.stderr)
        for s in agg:
            summary.append((s.method, kind, sc.param, s.n, s.fdr, s.fdr_se, s.power, s.power_se,
                            s.rejections, s.failures))
    results.sort(key=lambda row: (row[0], row[2], row[3]))
    summary.sort(key=lambda row: (row[0], row[2]))

    out = Path(settings["out-dir"])
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(settings)
    _write_csv(out / "results.csv",
               ["method", "scenario", "param", "replicate", "fdp", "power", "rejections", "seed"], results, prov)
    _write_csv(out / "summary.csv",
               ["method", "scenario", "param", "n", "fdr", "fdr_se", "power", "power_se", "rejections",
                "failures"], summary, prov)
    for row in summary:
        print(f"{row[0]:<16} {row[2]:>6g}  FDR {row[4]:.4f} ± {row[5]:.4f}  power {row[6]:.4f} ± {row[7]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def pseudo_z(p, coin):
    """``Phi^{-1}(p) (2 coin - 1)``; p must lie strictly inside (0, 1)."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0) & (p < 1)):
        raise InvalidInputError("pseudo_z needs p strictly inside (0, 1)")
    coin = np.asarray(coin)
    z = std_normal_quantile(p) * (2 * coin - 1)
    return float(z) if z.ndim == 0 else z


def read_analysis_input(path):
    """Return ``(x_kind, values, covariates)`` from a header-led CSV."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read input {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows:
        raise ConfigError(f"{path}: empty input")
    header = [h.strip() for h in rows[0]]
    if ("z" in header) == ("p" in header):
        raise ConfigError(f"{path}: header needs exactly one of the columns z or p")
    kind = "z" if "z" in header else "p"
    s_cols = sorted((h for h in header if h.startswith("s") and h[1:].isdigit()), key=lambda h: int(h[1:]))
    if [int(h[1:]) for h in s_cols] != list(range(1, len(s_cols) + 1)):
        raise ConfigError(f"{path}: covariate columns must be s1..sl")
    ix = header.index(kind)
    s_ix = [header.index(h) for h in s_cols]
    values, cov = [], []
    for line_no, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise ConfigError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
        try:
            v = float(row[ix])
            s = [float(row[j]) for j in s_ix]
        except ValueError:
            raise ConfigError(f"{path}:{line_no}: non-numeric field") from None
        if not all(math.isfinite(u) for u in [v, *s]):
            raise ConfigError(f"{path}:{line_no}: non-finite value")
        if kind == "p" and not 0 <= v <= 1:
            raise ConfigError(f"{path}:{line_no}: p-value {v} outside [0, 1]")
        values.append(v)
        cov.append(s)
    if not values:
        raise ConfigError(f"{path}: no data rows")
    return kind, np.array(values), np.array(cov, dtype=float).reshape(len(values), len(s_cols))


class _Data:
    def __init__(self, x, s):
        self.x, self.s = x, s


def cmd_analyze(args) -> int:
    settings = resolve_settings(args)
    if not settings["input"]:
        raise ConfigError("analyze needs --input")
    kind, values, cov = read_analysis_input(settings["input"])
    methods = settings["method"] or (["rho-bh-side-dd"] if cov.shape[1] else ["rho-bh-dd"])
    if len(methods) != 1 or methods[0] not in ANALYZE_METHODS:
        raise ConfigError(f"analyze runs one method from {', '.join(ANALYZE_METHODS)}")
    method = methods[0]
    if method == "rho-bh-side-dd" and cov.shape[1] == 0:
        raise ConfigError("rho-bh-side-dd needs covariate columns s1..sl")
    if kind == "p":
        p = np.clip(values, P_CLIP, 1.0 - np.finfo(float).epsneg)
        coins = make_rng(settings["seed"], "pseudo-z").integers(0, 2, size=p.size)
        x = pseudo_z(p, coins)
    else:
        x = values
    config = ProcedureConfig(alpha=settings["alpha"], mc_samples=settings["mc-samples"], seed=settings["seed"])
    from .procedures import rho_bh_dd, rho_bh_side_dd

    try:
        data = _Data(x, cov)
        d = rho_bh_side_dd(data, settings["alpha"], config) if method == "rho-bh-side-dd" \
            else rho_bh_dd(data, settings["alpha"], config)
    except RhoError as exc:
        raise DataError(str(exc)) from exc
    out = Path(settings["out-dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = [(i, x[i], d.diagnostics["rho"][i], d.diagnostics["q"][i], d.reject[i]) for i in range(x.size)]
    _write_csv(out / "rejections.csv", ["index", "x", "rho", "q", "rejected"], rows, _provenance(settings))
    print(f"{method}: {d.k} of {d.m} hypotheses rejected at alpha={settings['alpha']}")
    return 0


# ---------------------------------------------------------------------------
# null-cdf-check
# ---------------------------------------------------------------------------


def dkw_bound(B: int) -> float:
    return 1.36 / math.sqrt(B) + 0.02


def cmd_null_cdf_check(args) -> int:
    settings = resolve_settings(args)
    B, mu = settings["mc-samples"], settings["mu"]
    emp = build_null_cdf_mc(STD_NORMAL, Normal(mu), B, settings["seed"])
    err = sup_distance(emp, NormalLocationNullCdf(mu))
    bound = dkw_bound(B)
    status = "PASS" if err <= bound else "FAIL"
    print(f"mu={mu} B={B} seed={settings['seed']} sup_error={err:.6f} bound={bound:.6f} {status}")
    return 0 if status == "PASS" else 1


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(2)


def _common(p):
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mc-samples", type=int, help="Monte Carlo draws per null CDF")
    p.add_argument("--out-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rhobh", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run seeded replications and write results/summary CSVs")
    _common(sim)
    sim.add_argument("--scenario", choices=SCENARIO_KINDS)
    sim.add_argument("--param", type=float, action="append", help="swept parameter (repeatable)")
    sim.add_argument("--method", action="append", help=f"repeatable; one of {', '.join(sorted(METHODS))}")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--m", type=int)
    sim.add_argument("--preset", help=f"bivariate (k_c, k_d, k_f): {', '.join(BIVARIATE_PRESETS)}")
    sim.add_argument("--mean-transform", choices=("exp", "linear"))
    sim.add_argument("--g-mean", type=float, help="location of g for rho-bh and rho-bh-by")
    sim.add_argument("--workers", type=int)
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="run a data-driven procedure on a CSV of z or p values")
    _common(ana)
    ana.add_argument("--input", required=False)
    ana.add_argument("--method", action="append")
    ana.set_defaults(func=cmd_analyze)

    chk = sub.add_parser("null-cdf-check", help="Monte Carlo null CDF against the closed form")
    _common(chk)
    chk.add_argument("--mu", type=float)
    chk.set_defaults(func=cmd_null_cdf_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"rhobh: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, RhoError) as exc:
        print(f"rhobh: data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
