"""Value-of-information estimates from posterior sample tables.

Every estimate is "expected loss now minus expected loss after learning
something", where the something is either all parameters (EVPI), a subset
of them (EVPPI) or a simulated future dataset reduced to a statistic (EVSI).
Partial and sample information are handled the same way: regress each output
on the predictors and treat the residuals as what would remain uncertain.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import regress
from .designs import DesignSpec, simulate_statistics
from .samples import SampleTable

log = logging.getLogger(__name__)

LOSS_KINDS = ("scalar_quadratic", "weighted_A", "trace_A", "D_criterion", "finite_action")
QUADRATIC_KINDS = LOSS_KINDS[:4]

# relative disagreement between the two EVPPI estimators that triggers a warning
DECOMPOSITION_TOL = 0.01
SOFT_MAX_INPUTS = 4


class VoiError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    """Decision problem and loss.

    For the quadratic kinds ``columns`` are the outputs being estimated; for
    ``finite_action`` they hold one loss column per available action and the
    decision is the action with the smallest expected loss.
    """

    kind: str
    columns: tuple[str, ...]
    weights: tuple[float, ...] | None = None
    standardized: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise VoiError(f"unknown loss kind {self.kind!r}")
        cols = (self.columns,) if isinstance(self.columns, str) else tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        if not cols:
            raise VoiError("loss needs at least one column")
        if self.kind == "scalar_quadratic" and len(cols) != 1:
            raise VoiError("scalar_quadratic takes exactly one output")
        if self.kind == "weighted_A":
            if self.weights is None or len(self.weights) != len(cols):
                raise VoiError("weighted_A needs one weight per output")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @classmethod
    def scalar(cls, output: str) -> "LossSpec":
        return cls("scalar_quadratic", (output,))

    @classmethod
    def weighted(cls, outputs, weights) -> "LossSpec":
        return cls("weighted_A", tuple(outputs), tuple(weights))

    @classmethod
    def trace(cls, outputs) -> "LossSpec":
        return cls("trace_A", tuple(outputs))

    @classmethod
    def determinant(cls, outputs, standardized: bool = False) -> "LossSpec":
        return cls("D_criterion", tuple(outputs), standardized=standardized)

    @classmethod
    def finite_action(cls, loss_columns) -> "LossSpec":
        return cls("finite_action", tuple(loss_columns))

    def functional(self, cov: np.ndarray) -> float:
        """Loss of a covariance matrix (quadratic kinds only)."""
        cov = np.atleast_2d(cov)
        if self.kind == "scalar_quadratic":
            return float(cov[0, 0])
        if self.kind == "trace_A":
            return float(np.trace(cov))
        if self.kind == "weighted_A":
            c = np.asarray(self.weights)
            return float(c @ cov @ c)
        if self.kind == "D_criterion":
            det = _psd_det(cov)
            return det ** (1.0 / cov.shape[0]) if self.standardized else det
        raise VoiError(f"{self.kind} has no covariance functional")


@dataclass
class VoiEstimate:
    value: float
    baseline: float
    proportion: float
    se: float | None
    K_used: int
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "baseline": self.baseline, "proportion": self.proportion,
                "se": self.se, "K_used": self.K_used}


def _proportion(value, baseline):
    return value / baseline if baseline > 0 else float("nan")


def _psd_det(cov: np.ndarray) -> float:
    sym = 0.5 * (cov + cov.T)
    ev = np.linalg.eigvalsh(sym)
    scale = max(float(np.abs(ev).max()), 1e-300)
    if ev.min() < -1e-10 * scale:
        warnings.warn(f"covariance not positive semi-definite (min eigenvalue {ev.min():.3g}); floored at 0")
    return float(np.prod(np.clip(ev, 0.0, None)))


def _cov(Y: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.cov(Y, rowvar=False, ddof=1))


def _check_table(table: SampleTable, loss: LossSpec):
    missing = [c for c in loss.columns if c not in table]
    if missing:
        raise VoiError(f"columns missing from the table: {missing}")
    if table.K < 2:
        raise VoiError("at least 2 draws are needed")


def expected_loss(table: SampleTable, loss: LossSpec) -> float:
    """Expected loss of the optimal decision under current information."""
    _check_table(table, loss)
    Y = table.columns(loss.columns)
    if loss.kind == "finite_action":
        return float(Y.mean(axis=0).min())
    return loss.functional(_cov(Y))


def evpi(table: SampleTable, loss: LossSpec) -> VoiEstimate:
    """Expected value of learning every uncertain quantity exactly."""
    base = expected_loss(table, loss)
    if loss.kind == "finite_action":
        Y = table.columns(loss.columns)
        value = base - float(Y.min(axis=1).mean())
    else:
        value = base
    return VoiEstimate(value, base, _proportion(value, base), 0.0, table.K, {"kind": "evpi"})


def _fit_all(X, Y, fit_config):
    return [regress.fit(X, Y[:, j], fit_config) for j in range(Y.shape[1])]


def _se_values(models, loss: LossSpec, Y, base, n_draws, seed):
    """Loss-reduction estimates re-evaluated at simulated coefficient vectors."""
    rng = np.random.default_rng(seed)
    sims = []
    for m in models:
        try:
            beta = regress.coefficient_draws(m, n_draws, rng)
        except regress.RegressionError as e:
            log.debug("no standard error: %s", e)
            return None
        sims.append(m.basis @ beta.T)            # K x n_draws fitted values
    out = np.empty(n_draws)
    if loss.kind == "scalar_quadratic":
        out[:] = sims[0].var(axis=0, ddof=1)
    elif loss.kind == "finite_action":
        G = np.stack(sims)                        # D x K x n_draws
        out[:] = base - G.min(axis=0).mean(axis=0)
    else:
        for s in range(n_draws):
            R = Y - np.column_stack([g[:, s] for g in sims])
            out[s] = base - loss.functional(_cov(R))
    return out


def regression_voi(table: SampleTable, predictors: Sequence[str], loss: LossSpec,
                   fit_config: regress.FitConfig | None = None,
                   se_draws: int = 200, seed=0, label: str = "evppi") -> VoiEstimate:
    """Expected loss reduction from learning ``predictors`` exactly.

    Shared by EVPPI (predictors are parameters) and EVSI (predictors are
    simulated data statistics).  ``se_draws = 0`` skips the standard error.
    """
    _check_table(table, loss)
    predictors = list(predictors)
    if not predictors:
        raise VoiError("no predictor columns given")
    missing = [c for c in predictors if c not in table]
    if missing:
        raise VoiError(f"predictor columns missing from the table: {missing}")
    fit_config = fit_config or regress.FitConfig()
    K = table.K
    X = table.columns(predictors)
    Y = table.columns(loss.columns)
    base = expected_loss(table, loss)
    meta = {"kind": label, "predictors": predictors, "outputs": list(loss.columns),
            "loss": loss.kind, "warnings": []}
    if fit_config.backend == "mars" and len(predictors) > SOFT_MAX_INPUTS:
        meta["warnings"].append(f"{len(predictors)} predictors exceeds the advised {SOFT_MAX_INPUTS}")

    if np.all(np.ptp(X, axis=0) == 0.0):
        msg = "predictors are constant; no information"
        warnings.warn(msg)
        meta["warnings"].append(msg)
        return VoiEstimate(0.0, base, _proportion(0.0, base), 0.0, K, meta)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")       # notes are kept on the models
        models = _fit_all(X, Y, fit_config)
    for m in models:
        meta["warnings"].extend(m.warnings)
    meta["n_terms"] = [m.n_terms for m in models]
    meta["backend"] = models[0].backend
    fitted = np.column_stack([m.fitted for m in models])
    resid = np.column_stack([m.resid for m in models])

    if loss.kind == "finite_action":
        value = base - float(fitted.min(axis=1).mean())
    else:
        value = base - loss.functional(resid.T @ resid / (K - 1))
        # the fitted-variance route and the variance decomposition
        var_y = Y.var(axis=0, ddof=1)
        var_f = fitted.var(axis=0, ddof=1)
        msr = (resid ** 2).sum(axis=0) / (K - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            decomp = np.where(var_y > 0, np.abs(var_y - var_f - msr) / var_y, 0.0)
        meta["decomposition_rel_err"] = float(decomp.max())
        meta["fitted_var_le_baseline"] = bool(np.all(var_f <= var_y * (1 + 1e-10) + 1e-300))
        if loss.kind == "scalar_quadratic":
            alt = float(var_f[0])
            meta["value_fitted_var"] = alt
            meta["value_resid"] = value
            disc = abs(alt - value) / base if base > 0 else 0.0
            meta["estimator_discrepancy"] = disc
            if disc > DECOMPOSITION_TOL:
                meta["warnings"].append(f"EVPPI estimators disagree by {disc:.2%}")

    se = None
    if se_draws:
        sims = _se_values(models, loss, Y, base, se_draws, seed)
        if sims is not None:
            se = float(np.std(sims, ddof=1))
    return VoiEstimate(float(value), float(base), _proportion(value, base), se, K, meta)


def evppi(table, inputs, loss, fit_config=None, se_draws=200, seed=0) -> VoiEstimate:
    """Expected value of partial perfect information about ``inputs``."""
    if isinstance(inputs, str):
        inputs = [inputs]
    return regression_voi(table, inputs, loss, fit_config, se_draws, seed, "evppi")


def evsi(table, statistics, loss, fit_config=None, se_draws=200, seed=0) -> VoiEstimate:
    """Expected value of sample information for data summarised by the
    ``statistics`` columns (one simulated dataset per draw)."""
    if isinstance(statistics, str):
        statistics = [statistics]
    return regression_voi(table, statistics, loss, fit_config, se_draws, seed, "evsi")


def _run_tasks(fn: Callable, tasks: list, threads: int):
    def safe(t):
        try:
            return fn(t), None
        except Exception as e:  # recorded per cell, the batch continues
            log.warning("task %s failed: %s", t, e)
            return None, f"{type(e).__name__}: {e}"
    if threads <= 1:
        return [safe(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(safe, tasks))


# ---------------------------------------------------------------------------
# grids

@dataclass
class EvppiGrid:
    groups: list[str]
    group_inputs: list[list[str]]
    outputs: list[str]
    cells: list[list[VoiEstimate | None]]
    errors: list[list[str | None]]

    def proportions(self) -> np.ndarray:
        return np.array([[c.proportion if c is not None else np.nan for c in row]
                         for row in self.cells])

    def row_argmax(self, output: str) -> str:
        """Input group explaining most of ``output``'s variance."""
        col = self.proportions()[:, self.outputs.index(output)]
        return self.groups[int(np.nanargmax(col))]


def _group_label(g) -> str:
    return "+".join(g)


def evppi_grid(table: SampleTable, groups, outputs: Sequence[str],
               fit_config=None, se_draws=200, seed=0, threads=1) -> EvppiGrid:
    """Scalar quadratic EVPPI for every (input group, output) pair.

    ``groups`` is a mapping label -> column list, or a list of column names
    or column lists.
    """
    if isinstance(groups, dict):
        labels = list(groups)
        inputs = [[groups[k]] if isinstance(groups[k], str) else list(groups[k]) for k in labels]
    else:
        inputs = [[g] if isinstance(g, str) else list(g) for g in groups]
        labels = [_group_label(g) for g in inputs]
    outputs = list(outputs)
    tasks = [(i, j) for i in range(len(inputs)) for j in range(len(outputs))]

    def one(t):
        i, j = t
        cell_seed = np.random.SeedSequence([int(seed), i, j])
        return evppi(table, inputs[i], LossSpec.scalar(outputs[j]), fit_config, se_draws, cell_seed)

    results = _run_tasks(one, tasks, threads)
    cells = [[None] * len(outputs) for _ in inputs]
    errors = [[None] * len(outputs) for _ in inputs]
    for (i, j), (est, err) in zip(tasks, results):
        cells[i][j] = est
        errors[i][j] = err
    return EvppiGrid(labels, inputs, outputs, cells, errors)


def write_grid_csv(grid: EvppiGrid, path, header_comment: str | None = None) -> None:
    """Rows are input groups, columns outputs, cells proportions (FAILED if the fit failed)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input_group", *grid.outputs])
        for label, row in zip(grid.groups, grid.cells):
            w.writerow([label, *(format(c.proportion, ".17g") if c is not None else "FAILED"
                                 for c in row)])


# ---------------------------------------------------------------------------
# curves and net benefit

@dataclass
class CurvePoint:
    n: int
    estimate: VoiEstimate | None
    error: str | None = None

    @property
    def value(self) -> float:
        return self.estimate.value if self.estimate is not None else float("nan")

    @property
    def remaining_variance(self) -> float:
        e = self.estimate
        return e.baseline - e.value if e is not None else float("nan")


def evsi_curve(design: DesignSpec, n_grid: Sequence[int], table: SampleTable, loss: LossSpec,
               fit_config=None, se_draws=200, seed=0, threads=1) -> list[CurvePoint]:
    """EVSI of ``design`` at each sample size; statistics are re-simulated per n."""
    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise VoiError("n grid must be strictly increasing")
    if not n_grid:
        raise VoiError("empty n grid")

    def one(idx):
        n = n_grid[idx]
        stats_table = simulate_statistics(design.with_n(n), table)
        name = stats_table.names[0]
        work = table.select(loss.columns).with_columns(stats_table)
        est = evsi(work, [name], loss, fit_config, se_draws,
                   np.random.SeedSequence([int(seed), idx]))
        est.meta["n"] = n
        est.meta["design"] = design.kind
        return est

    results = _run_tasks(one, list(range(len(n_grid))), threads)
    return [CurvePoint(n, est, err) for n, (est, err) in zip(n_grid, results)]


def write_curve_csv(curves, path, header_comment: str | None = None) -> None:
    """Columns n, evsi, remaining_variance, se.  ``curves`` is one list of
    points, or a mapping design label -> points, which adds a design column."""
    labelled = isinstance(curves, dict)
    items = curves.items() if labelled else [(None, curves)]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "evsi", "remaining_variance", "se"] + (["design"] if labelled else []))
        for label, points in items:
            extra = [label] if labelled else []
            for p in points:
                if p.estimate is None:
                    w.writerow([p.n, "FAILED", "FAILED", "FAILED"] + extra)
                    continue
                se = p.estimate.se
                w.writerow([p.n, format(p.value, ".17g"), format(p.remaining_variance, ".17g"),
                            format(se, ".17g") if se is not None else "NA"] + extra)


@dataclass
class EnbsRow:
    n: int
    evsi: float
    cost: float
    net: float


@dataclass
class EnbsResult:
    optimal_n: int
    do_not_sample: bool
    rows: list[EnbsRow]


def enbs(curve, cost_fixed: float = 0.0, cost_per_unit: float = 0.0) -> EnbsResult:
    """Expected net benefit of sampling over the curve's sample sizes.

    ``curve`` is a list of CurvePoint or of (n, value) pairs; values and
    costs must be in the same units.  A study of size 0 costs nothing.  If
    no size has positive net benefit the answer is n = 0, do not sample.
    """
    pairs = []
    for p in curve:
        if isinstance(p, CurvePoint):
            if p.estimate is None:
                continue
            pairs.append((p.n, p.value))
        else:
            pairs.append((int(p[0]), float(p[1])))
    if not pairs:
        raise VoiError("no usable curve points")
    rows = []
    for n, v in pairs:
        cost = 0.0 if n == 0 else cost_fixed + cost_per_unit * n
        rows.append(EnbsRow(n, v, cost, v - cost))
    best = None
    for r in sorted(rows, key=lambda r: r.n):
        if r.n > 0 and r.net > 0 and (best is None or r.net > best.net):
            best = r
    if best is None:
        return EnbsResult(0, True, rows)
    return EnbsResult(best.n, False, rows)


def write_enbs_csv(results, path, header_comment: str | None = None) -> None:
    """``results`` is one EnbsResult or a mapping design label -> EnbsResult."""
    labelled = isinstance(results, dict)
    items = results.items() if labelled else [(None, results)]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "evsi", "cost", "net_benefit", "optimal"] + (["design"] if labelled else []))
        for label, res in items:
            extra = [label] if labelled else []
            for r in res.rows:
                w.writerow([r.n, format(r.evsi, ".17g"), format(r.cost, ".17g"), format(r.net, ".17g"),
                            int(r.n == res.optimal_n and not res.do_not_sample)] + extra)
            if res.do_not_sample:
                w.writerow([0, "0", "0", "0", "do_not_sample"] + extra)


def pooled_se(*ses) -> float:
    return math.sqrt(sum((s or 0.0) ** 2 for s in ses))
