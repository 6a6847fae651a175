"""Command-line front end: solve, simulate, compare, figures."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import analytic, compare
from .core import ConfigError, SpsConfig
from .sim import DEFAULT_WARMUP, REPORT_COLUMNS, run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_RANGE = 3
EXIT_PATH = 4

FIGURES = {
    9: "fig09_nc_hist",
    10: "fig10_pcol_vs_pk",
    11: "fig11_pcol_vs_nue",
    12: "fig12_na_vs_nue",
    13: "fig13_prr_vs_pk",
    14: "fig14_pcol_vs_nue_nse",
    15: "fig15_prr_vs_nue_nse",
    16: "fig16_na_vs_nue_nse",
    17: "fig17_pcol_vs_x",
    18: "fig18_na_vs_x",
}

FIG_COLUMNS = ["source", "n_ue", "p_k", "n_se", "x_min", "p_col", "p_col1", "p_col2",
               "e1", "e2", "e3", "n_a", "n_cand", "prr", "p_col_stderr", "prr_stderr",
               "n_a_stderr", "replications"]
NC_COLUMNS = ["n_ue", "n_c", "proportion", "replications"]

PK_GRID = [round(0.1 * i, 1) for i in range(9)]
NUE_GRID = list(range(20, 201, 20))

# config flag -> SpsConfig field
CONFIG_FLAGS = {"n_ue": int, "p_k": float, "n_se": int, "x_min": float, "n_sc": int,
                "t_rri_ms": float, "slot_ms": float, "nc_bar": float}


class UsageError(Exception):
    pass


class RangeError(Exception):
    pass


class PathError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file with SpsConfig fields")
    for name, typ in CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def _add_run_flags(p: argparse.ArgumentParser, replications: int) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=replications)
    p.add_argument("--rris", type=int, default=2000)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nr-sps", description="NR sidelink SPS model and simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="analytic model")
    _add_config_flags(p)
    p.add_argument("--variant", choices=analytic.VARIANTS, default="async")
    p.add_argument("--axis", choices=analytic.SWEEP_AXES)
    p.add_argument("--values", help="comma list or start:stop:step (inclusive)")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", help="slot-level simulator")
    _add_config_flags(p)
    p.add_argument("--variant", choices=("sync", "async"), default="async")
    _add_run_flags(p, 1)
    p.add_argument("--trace", help="write the first replication's trace as JSON lines")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("compare", help="model vs simulation along one axis")
    _add_config_flags(p)
    p.add_argument("--variant", choices=("sync", "async"), default="async")
    p.add_argument("--axis", choices=analytic.SWEEP_AXES, default="p_k")
    p.add_argument("--values", default="0:0.8:0.1")
    _add_run_flags(p, 3)
    p.add_argument("--out", help="CSV path; the JSON summary goes next to it")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("figures", help="data and plot scripts for the figure set")
    _add_config_flags(p)
    p.add_argument("--which", default="all", help="comma list of 9..18 or 'all'")
    _add_run_flags(p, 3)
    p.add_argument("--out", default="figures", help="output directory")
    return parser


# -- argument handling ------------------------------------------------------

def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(SpsConfig)}
    if name not in types:
        raise RangeError(f"unknown config key {name!r}")
    try:
        return int(raw) if types[name] == "int" else float(raw)
    except ValueError:
        raise RangeError(f"bad value for {name}: {raw!r}") from None


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise PathError(f"cannot read config {path}: {err.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RangeError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = _coerce(k, v)
    return out


def make_config(args) -> SpsConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in CONFIG_FLAGS:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    try:
        return SpsConfig(**values)
    except ConfigError as err:
        raise RangeError(str(err)) from None


def parse_values(text: str, axis: str) -> list:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError("range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise RangeError("step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        vals = [round(start + i * step, 12) for i in range(max(n, 0))]
    else:
        vals = [float(v) for v in text.split(",") if v.strip()]
    if axis in ("n_ue", "n_se"):
        if any(v != int(v) for v in vals):
            raise RangeError(f"{axis} values must be integers")
        vals = [int(v) for v in vals]
    return vals


def _check_run_flags(args) -> None:
    if args.rris <= args.warmup or args.warmup < 0:
        raise RangeError("need --rris > --warmup >= 0")
    if args.replications < 1:
        raise RangeError("--replications must be >= 1")


def _check_writable_file(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise PathError(f"cannot write {path}")


def _prepare_dir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise PathError(f"cannot create {path}: {err.strerror}") from None
    if not os.access(d, os.W_OK):
        raise PathError(f"cannot write {path}")
    return d


# -- output -----------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def format_rows(rows: list[dict], columns: list[str], fmt: str) -> str:
    if fmt == "json":
        clean = [{k: (None if isinstance(r.get(k), float) and math.isnan(r[k]) else r.get(k))
                  for k in columns} for r in rows]
        return json.dumps(clean, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(k, "")) for k in columns])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    _check_writable_file(out)
    try:
        Path(out).write_text(text)
    except OSError as err:
        raise PathError(f"cannot write {out}: {err.strerror}") from None


# -- commands ---------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = make_config(args)
    if args.out:
        _check_writable_file(args.out)
    if args.axis:
        if not args.values:
            raise UsageError("--axis needs --values")
        vals = parse_values(args.values, args.axis)
        for v in vals:
            try:
                cfg.with_(**{args.axis: v})
            except ConfigError as err:
                raise RangeError(str(err)) from None
        sols = analytic.sweep(cfg, args.axis, vals, args.variant)
    else:
        sols = [analytic.solve(cfg, args.variant)]
    _emit(format_rows([s.row() for s in sols], analytic.ROW_COLUMNS, args.format), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = make_config(args)
    _check_run_flags(args)
    if args.out:
        _check_writable_file(args.out)
    if args.trace:
        _check_writable_file(args.trace)
    rows = []
    for i in range(args.replications):
        trace, rep = run(cfg, args.variant, args.rris, args.warmup, args.seed + i)
        if i == 0 and args.trace:
            try:
                trace.write_jsonl(args.trace)
            except OSError as err:
                raise PathError(f"cannot write {args.trace}: {err.strerror}") from None
        rows.append(rep.row())
    _emit(format_rows(rows, REPORT_COLUMNS, args.format), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = make_config(args)
    _check_run_flags(args)
    if args.replications < 3:
        raise RangeError("compare needs --replications >= 3")
    vals = parse_values(args.values, args.axis)
    for v in vals:
        try:
            cfg.with_(**{args.axis: v})
        except ConfigError as err:
            raise RangeError(str(err)) from None
    if args.out:
        _check_writable_file(args.out)
    rows = compare.validate_curve(args.axis, vals, cfg, args.variant, args.replications,
                                  args.rris, args.seed, args.warmup)
    text = format_rows([r.row() for r in rows], compare.COMPARISON_COLUMNS, args.format)
    _emit(text, args.out)
    if args.out:
        summary = compare.summarize(rows)
        path = Path(args.out).with_suffix(".summary.json")
        try:
            compare.write_summary(summary, path)
        except OSError as err:
            raise PathError(f"cannot write {path}: {err.strerror}") from None
    return EXIT_OK


def cmd_figures(args) -> int:
    cfg = make_config(args)
    _check_run_flags(args)
    which = parse_which(args.which)
    out = _prepare_dir(args.out)
    budget = dict(replications=args.replications, rris=args.rris, seed0=args.seed,
                  warmup=args.warmup)
    extras = {}
    for fig in which:
        name = FIGURES[fig]
        rows, columns, extra = FIGURE_BUILDERS[fig](cfg, **budget)
        text = format_rows(rows, columns, "csv")
        try:
            (out / f"{name}.csv").write_text(text)
            (out / f"{name}.gp").write_text(plot_script(fig, name))
        except OSError as err:
            raise PathError(f"cannot write into {out}: {err.strerror}") from None
        extras.update(extra)
    if extras:
        compare.write_summary(extras, out / "crossovers.json")
    return EXIT_OK


def parse_which(text: str) -> list[int]:
    if text.strip() == "all":
        return sorted(FIGURES)
    try:
        which = sorted({int(w) for w in text.split(",")})
    except ValueError:
        raise UsageError(f"bad --which {text!r}") from None
    bad = [w for w in which if w not in FIGURES]
    if bad:
        raise RangeError(f"no figure {bad[0]}; choose from 9..18")
    return which


# -- figure builders --------------------------------------------------------

def _model_row(cfg: SpsConfig, variant: str) -> dict:
    s = analytic.solve(cfg, variant)
    return {"source": "model", "n_ue": cfg.n_ue, "p_k": cfg.p_k, "n_se": cfg.n_se,
            "x_min": cfg.x_min, "p_col": s.p_col, "p_col1": s.p_col1, "p_col2": s.p_col2,
            "e1": s.event2.e1, "e2": s.event2.e2, "e3": s.event2.e3, "n_a": s.n_a_bar,
            "n_cand": s.n_cand_bar, "prr": s.prr, "p_col_stderr": 0.0,
            "prr_stderr": 0.0, "n_a_stderr": 0.0, "replications": 0}


def _sim_row(cfg: SpsConfig, replications, rris, seed0, warmup) -> dict:
    reps = compare.simulate_point(cfg, "async", replications, rris, seed0, warmup)
    mean, err = compare.aggregate(reps)
    avg = lambda f: float(np.mean([getattr(r, f) for r in reps]))
    return {"source": "sim", "n_ue": cfg.n_ue, "p_k": cfg.p_k, "n_se": cfg.n_se,
            "x_min": cfg.x_min, "p_col": mean["p_col"], "p_col1": mean["p_col1"],
            "p_col2": mean["p_col2"], "e1": avg("e1_hat"), "e2": avg("e2_hat"),
            "e3": avg("e3_hat"), "n_a": mean["n_a"], "n_cand": mean["n_cand"],
            "prr": mean["prr"], "p_col_stderr": err["p_col"], "prr_stderr": err["prr"],
            "n_a_stderr": err["n_a"], "replications": replications}


def _curve(cfgs, **budget) -> list[dict]:
    rows = [_model_row(c, "async_x") for c in cfgs]
    rows += [_sim_row(c, **budget) for c in cfgs]
    return rows


def fig09(cfg, **budget):
    rows = []
    for n in NUE_GRID:
        c = cfg.with_(n_ue=n, p_k=0.0)
        reps = compare.simulate_point(c, "async", budget["replications"], budget["rris"],
                                      budget["seed0"], budget["warmup"])
        hist = compare.aggregate(reps)[0]["nc_histogram"]
        for k, v in hist.items():
            rows.append({"n_ue": n, "n_c": k, "proportion": v,
                         "replications": budget["replications"]})
    return rows, NC_COLUMNS, {}


def fig10(cfg, **budget):
    c = cfg.with_(n_ue=100)
    x = compare.find_crossover("p_col1", "p_col2", "p_k", (0.0, 0.8), c)
    return (_curve([c.with_(p_k=p) for p in PK_GRID], **budget), FIG_COLUMNS,
            {"fig10_p_col1_eq_p_col2_p_k": x.value})


def _nue_pk(cfg, **budget):
    cfgs = [cfg.with_(n_ue=n, p_k=p) for p in (0.0, 0.8) for n in NUE_GRID]
    return _curve(cfgs, **budget), FIG_COLUMNS, {}


def fig13(cfg, **budget):
    c = cfg.with_(n_ue=100)
    return _curve([c.with_(p_k=p) for p in PK_GRID], **budget), FIG_COLUMNS, {}


def _nue_nse(cfg, **budget):
    c = cfg.with_(p_k=0.0)
    cfgs = [c.with_(n_ue=n, n_se=s) for s in (1, 2) for n in NUE_GRID]
    return _curve(cfgs, **budget), FIG_COLUMNS, {}


def fig15(cfg, **budget):
    rows, cols, _ = _nue_nse(cfg, **budget)
    c = cfg.with_(p_k=0.0)
    x = compare.find_crossover(compare.metric("prr", n_se=1), compare.metric("prr", n_se=2),
                               "n_ue", (20.0, 200.0), c)
    return rows, cols, {"fig15_prr_nse1_eq_nse2_n_ue": x.value}


def _nue_x(cfg, **budget):
    c = cfg.with_(p_k=0.0, n_se=1)
    cfgs = [c.with_(n_ue=n, x_min=x) for x in (0.2, 0.8) for n in NUE_GRID]
    return _curve(cfgs, **budget), FIG_COLUMNS, {}


FIGURE_BUILDERS = {9: fig09, 10: fig10, 11: _nue_pk, 12: _nue_pk, 13: fig13,
                   14: _nue_nse, 15: fig15, 16: _nue_nse, 17: _nue_x, 18: _nue_x}

_PLOT = {
    9: ("n_c", "proportion", None, None),
    10: ("p_k", "p_col", None, None),
    11: ("n_ue", "p_col", "p_k", (0.0, 0.8)),
    12: ("n_ue", "n_a", "p_k", (0.0, 0.8)),
    13: ("p_k", "prr", None, None),
    14: ("n_ue", "p_col", "n_se", (1, 2)),
    15: ("n_ue", "prr", "n_se", (1, 2)),
    16: ("n_ue", "n_a", "n_se", (1, 2)),
    17: ("n_ue", "p_col", "x_min", (0.2, 0.8)),
    18: ("n_ue", "n_cand", "x_min", (0.2, 0.8)),
}


def plot_script(fig: int, name: str) -> str:
    """gnuplot commands rendering ``name``.csv to ``name``.png."""
    xcol, ycol, group, levels = _PLOT[fig]
    cols = NC_COLUMNS if fig == 9 else FIG_COLUMNS
    xi, yi = cols.index(xcol) + 1, cols.index(ycol) + 1
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 800,600",
        f"set output '{name}.png'",
        f"set xlabel '{xcol}'",
        f"set ylabel '{ycol}'",
    ]
    if fig == 9:
        lines.append(f"plot for [n=20:200:20] '{name}.csv' using "
                     f"(${1}==n ? ${xi} : 1/0):{yi} with linespoints title sprintf('N_UE=%d', n)")
        return "\n".join(lines) + "\n"
    gi = cols.index(group) + 1 if group else None
    series = []
    for src, style in (("model", "lines"), ("sim", "points")):
        for lv in (levels or (None,)):
            cond = f'strcol(1) eq "{src}"'
            title = src
            if gi:
                cond += f" && abs(${gi}-{lv})<1e-9"
                title += f" {group}={lv}"
            series.append(f"'{name}.csv' using ({cond} ? ${xi} : 1/0):{yi} "
                          f"with {style} title '{title}'")
    lines.append("plot " + ", \\\n     ".join(series))
    return "\n".join(lines) + "\n"


DISPATCH = {"solve": cmd_solve, "simulate": cmd_simulate, "compare": cmd_compare,
            "figures": cmd_figures}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return DISPATCH[args.command](args)
    except UsageError as err:
        print(f"nr-sps: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (RangeError, ConfigError) as err:
        print(f"nr-sps: invalid value: {err}", file=sys.stderr)
        return EXIT_RANGE
    except PathError as err:
        print(f"nr-sps: {err}", file=sys.stderr)
        return EXIT_PATH
    except ValueError as err:
        print(f"nr-sps: invalid value: {err}", file=sys.stderr)
        return EXIT_RANGE
    except Exception as err:  # noqa: BLE001
        print(f"nr-sps: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
