"""Command-line driver: sample, summary, evppi, evsi, enbs.

Settings are merged as flags > ``--config`` JSON file > defaults, and the
merged configuration is written to ``run.meta.json`` in the output
directory.  Every CSV carries the configuration hash and seed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import hiv_model as hm
from . import plots, voi
from .designs import DesignError, DesignSpec
from .regress import FitConfig
from .sampler import ChainConfig, run_chains
from .samples import SampleTable, read_csv, summarize, write_csv, write_summary_csv

log = logging.getLogger("voisynth")

COMMANDS = ("sample", "summary", "evppi", "evsi", "enbs")
DEFAULT_N_GRID = (10, 50, 100, 500, 1000, 5000, 10000)
DEFAULT_EVSI_OUTPUT = "mu_U"

DEFAULTS = {
    "data": None,            # bundled synthetic data
    "scenario": "base",
    "seed": 1,
    "draws": 150_000,
    "chains": 4,
    "burnin": 20_000,
    "samples": None,
    "inputs": None,
    "outputs": None,
    "loss": "var",
    "design": None,
    "n": None,
    "cost_fixed": 0.0,
    "cost_per_unit": 0.0,
    "se_draws": 200,
    "max_terms": 21,
    "out": "out",
    "threads": 1,
    "plots": True,
}

# settings that do not change any result
_HASH_EXCLUDE = ("out", "threads", "plots")


class UsageError(Exception):
    """Bad flags or names; exit status 2."""


def _split(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="JSON file of settings (flags take precedence)")
    a("--data", help="data JSON (default: bundled synthetic London data)")
    a("--scenario", choices=("base", "a", "b"))
    a("--seed", type=int)
    a("--draws", type=int, help="pooled posterior draws")
    a("--chains", type=int)
    a("--burnin", type=int, help="burn-in iterations per chain")
    a("--samples", help="reuse a samples CSV instead of sampling")
    a("--inputs", help="comma list of input groups; join columns with + for a joint group")
    a("--outputs", help="comma list of outputs")
    a("--loss", choices=("var", "trace", "det"))
    a("--design", help="gumanon, gmshs, a comma list, or a JSON design object")
    a("--n", help="comma list of future sample sizes")
    a("--cost-fixed", type=float, dest="cost_fixed")
    a("--cost-per-unit", type=float, dest="cost_per_unit")
    a("--se-draws", type=int, dest="se_draws")
    a("--max-terms", type=int, dest="max_terms")
    a("--out", help="output directory")
    a("--threads", type=int)
    a("--no-plots", action="store_false", dest="plots", default=None)
    a("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="voisynth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "sample": "draw posterior samples of the HIV model",
        "summary": "posterior summaries of a samples table",
        "evppi": "EVPPI grid of input groups by outputs",
        "evsi": "EVSI curves for future-study designs",
        "enbs": "expected net benefit of sampling",
    }
    for c in COMMANDS:
        sub.add_parser(c, parents=[common], help=helps[c])
    return p


def merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        cfg.update(loaded)
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["command"] = args.command
    cfg["_scenario_explicit"] = args.scenario is not None or "scenario" in (
        loaded if args.config else {})
    for k in ("inputs", "outputs"):
        cfg[k] = _split(cfg[k])
    if cfg["n"] is not None:
        try:
            cfg["n"] = [int(v) for v in _split(cfg["n"])]
        except ValueError:
            raise UsageError(f"--n must be a comma list of integers, got {cfg['n']!r}") from None
    for k in ("draws", "chains", "threads", "se_draws", "max_terms"):
        if int(cfg[k]) < (0 if k == "se_draws" else 1):
            raise UsageError(f"--{k.replace('_', '-')} must be positive")
    if int(cfg["burnin"]) < 0:
        raise UsageError("--burnin must be >= 0")
    for k in ("data", "samples"):
        if cfg[k] is not None and not Path(cfg[k]).exists():
            raise UsageError(f"--{k} file not found: {cfg[k]}")
    if cfg["scenario"] not in ("base", "a", "b"):
        raise UsageError(f"unknown scenario {cfg['scenario']!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    keyed = {k: v for k, v in cfg.items() if k not in _HASH_EXCLUDE and not k.startswith("_")}
    blob = json.dumps(keyed, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _stamp(cfg) -> str:
    return f"voisynth {cfg['command']} config_hash={cfg['hash']} seed={cfg['seed']}"


# ---------------------------------------------------------------------------
# pipeline pieces

def _load_or_sample(cfg, out: Path, write=True) -> SampleTable:
    if cfg["samples"]:
        table = read_csv(cfg["samples"])
        log.info("read %d draws from %s", table.K, cfg["samples"])
        if not cfg["_scenario_explicit"] and table.meta.get("scenario") in ("base", "a", "b"):
            cfg["scenario"] = table.meta["scenario"]
        return table
    data = hm.load_data(cfg["data"])
    config = ChainConfig.for_total_draws(int(cfg["draws"]), chains=int(cfg["chains"]),
                                         burnin=int(cfg["burnin"]), seed=int(cfg["seed"]),
                                         threads=int(cfg["threads"]))
    log.info("sampling scenario %s: %d chains x %d draws", cfg["scenario"],
             config.chains, config.iterations)
    table, diag = run_chains(data, cfg["scenario"], config)
    for w in diag.warnings:
        log.warning(w)
    if diag.max_rhat() > 1.05:
        log.warning("max split R-hat %.3f exceeds 1.05", diag.max_rhat())
    table.meta.update({"config_hash": cfg["hash"], "seed": int(cfg["seed"])})
    cfg["_diagnostics"] = {"max_rhat": diag.max_rhat(), "min_ess": min(diag.ess.values()),
                           "acceptance": diag.acceptance, "block_acceptance": diag.block_acceptance}
    if write:
        write_csv(table, out / "samples.csv")
    return table


def _resolve(names, table: SampleTable, what: str):
    cols = [c for n in names for c in n.split("+")]
    missing = [c for c in cols if c not in table]
    if missing:
        raise UsageError(f"unknown {what} {missing}; available: {', '.join(table.names)}")


def _default_groups(table: SampleTable, scenario: str) -> list[str]:
    """Founders, with the GUM Anon and GMSHS evidence represented by the
    nodes their data inform directly (pi_GA, or_GM).  In scenario (a)
    pi_GA is a near-copy of pibar_G_free, so the latter is left out."""
    groups = [f for f in hm.free_founders(scenario) if f in table and f != "pibar_G_free"]
    groups += [c for c in ("pi_GA", "or_GM") if c in table]
    return groups


def _fit_config(cfg) -> FitConfig:
    return FitConfig(max_terms=int(cfg["max_terms"]))


def _designs(cfg) -> list[DesignSpec]:
    raw = cfg["design"]
    seed = int(cfg["seed"])
    if raw is None:
        return [DesignSpec("gumanon", 0, seed), DesignSpec("gmshs", 0, seed)]
    if isinstance(raw, dict) or (isinstance(raw, str) and raw.lstrip().startswith("{")):
        try:
            d = DesignSpec.from_json(raw)
        except (DesignError, TypeError, json.JSONDecodeError) as e:
            raise UsageError(f"bad design {raw!r}: {e}") from e
        if cfg["n"] is None:
            cfg["n"] = [d.n]
        return [d]
    out = []
    for kind in _split(raw):
        if kind not in ("gumanon", "gmshs"):
            raise UsageError(f"--design must be gumanon or gmshs, got {kind!r}")
        out.append(DesignSpec(kind, 0, seed))
    return out


def _loss(kind: str, outputs: list[str]) -> voi.LossSpec:
    if kind == "var":
        if len(outputs) != 1:
            raise UsageError("--loss var takes a single output here")
        return voi.LossSpec.scalar(outputs[0])
    if kind == "trace":
        return voi.LossSpec.trace(outputs)
    return voi.LossSpec.determinant(outputs)


# ---------------------------------------------------------------------------
# commands

def cmd_sample(cfg, out):
    table = _load_or_sample(cfg, out)
    rows = summarize(table)
    _write_summary(rows, out / "summary.csv", cfg)
    return {"draws": table.K}


def _write_summary(rows, path, cfg):
    write_summary_csv(rows, path)
    text = path.read_text()
    path.write_text(f"# {_stamp(cfg)}\n" + text)


def cmd_summary(cfg, out):
    table = _load_or_sample(cfg, out)
    if cfg["outputs"]:
        _resolve(cfg["outputs"], table, "outputs")
        table = table.select(cfg["outputs"])
    _write_summary(summarize(table), out / "summary.csv", cfg)
    return {"draws": table.K}


def cmd_evppi(cfg, out):
    table = _load_or_sample(cfg, out, write=cfg["samples"] is None)
    groups = cfg["inputs"] or _default_groups(table, cfg["scenario"])
    outputs = cfg["outputs"] or [o for o in hm.OUTPUTS_OF_INTEREST if o in table]
    _resolve(groups, table, "inputs")
    _resolve(outputs, table, "outputs")
    group_map = {g: g.split("+") for g in groups}
    if cfg["loss"] == "var":
        grid = voi.evppi_grid(table, group_map, outputs, _fit_config(cfg),
                              int(cfg["se_draws"]), int(cfg["seed"]), int(cfg["threads"]))
    else:
        loss = _loss(cfg["loss"], outputs)
        label = f"{cfg['loss']}({'+'.join(outputs)})"

        def one(i):
            return voi.evppi(table, group_map[groups[i]], loss, _fit_config(cfg),
                             int(cfg["se_draws"]), np.random.SeedSequence([int(cfg["seed"]), i]))

        res = voi._run_tasks(one, list(range(len(groups))), int(cfg["threads"]))
        grid = voi.EvppiGrid(groups, [group_map[g] for g in groups], [label],
                             [[r[0]] for r in res], [[r[1]] for r in res])
    voi.write_grid_csv(grid, out / "evppi_grid.csv", _stamp(cfg))
    _write_cells(grid, out / "evppi_values.csv", cfg)
    if cfg["plots"]:
        title = f"EVPPI proportion, scenario {cfg['scenario']}"
        plots.write_svg(plots.heatmap_svg(grid.groups, grid.outputs, grid.proportions(),
                                          title, _stamp(cfg)), out / "evppi_grid.svg")
    failed = sum(e is not None for row in grid.errors for e in row)
    return {"cells": len(groups) * len(grid.outputs), "failed_cells": failed}


def _write_cells(grid: voi.EvppiGrid, path, cfg):
    lines = [f"# {_stamp(cfg)}", "input_group,output,value,baseline,proportion,se,status"]
    for g, row, errs in zip(grid.groups, grid.cells, grid.errors):
        for o, c, e in zip(grid.outputs, row, errs):
            if c is None:
                lines.append(f"{g},{o},,,,,FAILED: {e}".replace("\n", " "))
            else:
                se = "" if c.se is None else format(c.se, ".17g")
                lines.append(f"{g},{o},{c.value:.17g},{c.baseline:.17g},{c.proportion:.17g},{se},ok")
    path.write_text("\n".join(lines) + "\n")


def _curves(cfg, out, table):
    outputs = cfg["outputs"] or [DEFAULT_EVSI_OUTPUT]
    _resolve(outputs, table, "outputs")
    loss = _loss(cfg["loss"], outputs)
    designs = _designs(cfg)
    n_grid = cfg["n"] or list(DEFAULT_N_GRID)
    curves = {}
    for d in designs:
        try:
            curves[d.kind] = voi.evsi_curve(d, n_grid, table, loss, _fit_config(cfg),
                                            int(cfg["se_draws"]), int(cfg["seed"]),
                                            int(cfg["threads"]))
        except DesignError as e:
            raise UsageError(str(e)) from e
    voi.write_curve_csv(curves, out / "evsi_curve.csv", _stamp(cfg))
    if cfg["plots"]:
        series = {k: ([p.n for p in pts], [p.remaining_variance for p in pts],
                      [p.estimate.se if p.estimate and p.estimate.se else 0.0 for p in pts])
                  for k, pts in curves.items()}
        svg = plots.curve_svg(series, f"Expected remaining loss, scenario {cfg['scenario']}",
                              "future sample size n", f"{cfg['loss']} of {'+'.join(outputs)}",
                              log_x=True, comment=_stamp(cfg))
        plots.write_svg(svg, out / "evsi_curve.svg")
    return curves


def cmd_evsi(cfg, out):
    table = _load_or_sample(cfg, out, write=cfg["samples"] is None)
    curves = _curves(cfg, out, table)
    return {k: [p.value for p in pts] for k, pts in curves.items()}


def cmd_enbs(cfg, out):
    table = _load_or_sample(cfg, out, write=cfg["samples"] is None)
    curves = _curves(cfg, out, table)
    results = {k: voi.enbs(pts, float(cfg["cost_fixed"]), float(cfg["cost_per_unit"]))
               for k, pts in curves.items()}
    voi.write_enbs_csv(results, out / "enbs.csv", _stamp(cfg))
    if cfg["plots"]:
        series = {k: ([r.n for r in res.rows], [r.net for r in res.rows], [0.0] * len(res.rows))
                  for k, res in results.items()}
        plots.write_svg(plots.curve_svg(series, "Expected net benefit of sampling",
                                        "future sample size n", "EVSI - cost",
                                        comment=_stamp(cfg)), out / "enbs.svg")
    return {k: {"optimal_n": r.optimal_n, "do_not_sample": r.do_not_sample}
            for k, r in results.items()}


HANDLERS = {"sample": cmd_sample, "summary": cmd_summary, "evppi": cmd_evppi,
            "evsi": cmd_evsi, "enbs": cmd_enbs}


def _context_chain(e: BaseException) -> str:
    parts = []
    while e is not None:
        parts.append(f"{type(e).__name__}: {e}")
        e = e.__cause__ or e.__context__
    return "\n  caused by ".join(parts)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = merge_config(args)
        cfg["hash"] = config_hash(cfg)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        result = HANDLERS[args.command](cfg, out)
    except UsageError as e:
        print(f"voisynth: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"voisynth: {args.command} failed: {_context_chain(e)}", file=sys.stderr)
        return 1
    meta = {k: v for k, v in cfg.items() if not k.startswith("_")}
    meta.update({"version": __version__, "result": result,
                 "diagnostics": cfg.get("_diagnostics"),
                 "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")})
    with open(out / "run.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
