"""Posterior summaries, credible intervals, DIC and model ranking.

Quantiles use linear interpolation of order statistics (position
h = (n-1)p + 1, numpy's default), so interval edges are reproducible
across platforms.  Deviance is -2 times the count log-likelihood with the
random intercepts treated as parameters; the multinomial normalizing
constant is omitted uniformly, which leaves deviance *differences* -- and
therefore DIC comparisons -- unchanged.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .design import ParameterLayout, PriorConfig
from .errors import ContractError, SchemaError
from .likelihood import eta_matrix, row_log_likelihoods
from .sampler import PosteriorDraws, ess_pooled, split_rhat

CI_LOW_P = 0.025
CI_HIGH_P = 0.975


@dataclass(frozen=True)
class ParamSummary:
    """Pooled posterior summary of one parameter."""

    name: str
    mean: float
    sd: float
    median: float
    ci_low: float
    ci_high: float
    rhat: float
    ess: float

    @property
    def significant(self) -> bool:
        """True when 0 lies outside the central credible interval."""
        return not (self.ci_low <= 0.0 <= self.ci_high)


@dataclass(frozen=True)
class PosteriorSummary:
    """One ParamSummary per parameter, in layout order."""

    layout: ParameterLayout
    rows: tuple[ParamSummary, ...]
    n_chains: int
    n_kept: int

    def __getitem__(self, name: str) -> ParamSummary:
        i = self.layout.flat_index(name)
        return self.rows[i]

    def __iter__(self):
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)


def central_interval(samples: np.ndarray, prob: float = 0.95):
    """Central credible interval endpoints by linear order-statistic interpolation."""
    if not 0.0 < prob < 1.0:
        raise ContractError("prob must be in (0, 1)")
    tail = (1.0 - prob) / 2.0
    lo, hi = np.quantile(np.asarray(samples, dtype=float),
                         [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def summarize_chains(names, arr: np.ndarray) -> tuple[ParamSummary, ...]:
    """Summary rows from a raw (chains, kept, params) draw array.

    R-hat is NaN when fewer than two chains (or fewer than four draws per
    chain) are available; ESS is NaN below eight pooled draws.
    """
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 3:
        raise ContractError("draw array must be (chains, kept, params)")
    n_chains, n_kept, dim = arr.shape
    if len(names) != dim:
        raise ContractError("name count does not match the parameter axis")
    if n_chains * n_kept < 2:
        raise ContractError("need at least two retained draws")
    pooled = arr.reshape(-1, dim)
    means = pooled.mean(axis=0)
    sds = pooled.std(axis=0, ddof=1) if pooled.shape[0] > 1 else np.zeros(dim)
    med, lo, hi = np.quantile(pooled, [0.5, CI_LOW_P, CI_HIGH_P],
                              axis=0, method="linear")
    can_rhat = n_chains >= 2 and n_kept >= 4
    can_ess = n_chains * n_kept >= 8
    rows = []
    for d in range(dim):
        r = split_rhat(arr[:, :, d]) if can_rhat else float("nan")
        e = ess_pooled(arr[:, :, d]) if can_ess else float("nan")
        rows.append(ParamSummary(
            name=names[d],
            mean=float(means[d]), sd=float(sds[d]), median=float(med[d]),
            ci_low=float(lo[d]), ci_high=float(hi[d]), rhat=r, ess=e,
        ))
    return tuple(rows)


def summarize(draws: PosteriorDraws) -> PosteriorSummary:
    """Per-parameter mean/sd/median, 95% interval, R-hat and ESS, pooled."""
    rows = summarize_chains(draws.param_names, draws.draws)
    return PosteriorSummary(layout=draws.layout, rows=rows,
                            n_chains=draws.n_chains, n_kept=draws.n_kept)


# ---------------------------------------------------------------------------
# Deviance and model ranking


@dataclass(frozen=True)
class DicReport:
    """Deviance summary for one fitted model on one table.

    ``dic`` is stored as dbar + pd so that identity holds exactly in
    floating point; it equals dhat + 2*pd algebraically.
    """

    model: str
    dbar: float
    dhat: float
    pd: float
    dic: float
    n_draws: int
    table_fingerprint: str


def deviance(layout: ParameterLayout, theta: np.ndarray) -> float:
    """-2 times the count log-likelihood (normalizer omitted)."""
    theta = layout.validate_state(theta)
    if layout.design.n_rows == 0:
        return 0.0
    row_ll = row_log_likelihoods(layout, eta_matrix(layout, theta))
    if not np.all(np.isfinite(row_ll)):
        bad = np.flatnonzero(~np.isfinite(row_ll))[:8].tolist()
        raise ContractError(
            f"non-finite deviance contribution at table rows {bad}")
    return -2.0 * float(row_ll.sum())


def dic(layout: ParameterLayout, table, priors: PriorConfig,
        draws: PosteriorDraws) -> DicReport:
    """Deviance information criterion from retained draws.

    dbar is the posterior mean deviance, dhat the deviance at the
    parameter-wise posterior mean (random intercepts included), and
    pd = dbar - dhat.  The prior never enters; ``priors`` is accepted for
    interface symmetry with the sampler.  A negative pd is reported with a
    warning, not an error.
    """
    del priors  # deviance is likelihood-only by construction
    if table is not None and table is not layout.table:
        raise ContractError("table does not match the layout's table")
    if draws.layout is not layout:
        raise ContractError("draws were sampled under a different layout")
    pooled = draws.pooled()
    if pooled.shape[0] == 0:
        raise ContractError("need at least one retained draw")
    devs = np.array([deviance(layout, theta) for theta in pooled])
    dbar = float(devs.mean())
    dhat = deviance(layout, pooled.mean(axis=0))
    pd = dbar - dhat
    # averaging bit-identical draws is not bit-exact, so ignore rounding-level
    # negatives and only flag a materially bad plug-in
    if pd < -1e-8 * max(1.0, abs(dbar)):
        warnings.warn(
            f"negative effective parameter count pd={pd:.3f}; the posterior "
            "mean is a poor plug-in (often a mixing problem)",
            UserWarning, stacklevel=2)
    return DicReport(
        model=draws.layout.spec.name,
        dbar=dbar, dhat=dhat, pd=pd, dic=dbar + pd,
        n_draws=pooled.shape[0],
        table_fingerprint=layout.table.fingerprint(),
    )


@dataclass(frozen=True)
class ComparisonEntry:
    rank: int
    model: str
    dbar: float
    dhat: float
    pd: float
    dic: float
    delta_dic: float


@dataclass(frozen=True)
class Comparison:
    entries: tuple[ComparisonEntry, ...]

    @property
    def winner(self) -> str:
        return self.entries[0].model


def compare(reports) -> Comparison:
    """Rank (name, DicReport) pairs by ascending DIC.

    Ties break by fewer effective parameters, then by name.  All reports
    must describe fits of the same table.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise ContractError("comparison needs at least two fitted models")
    names = [name for name, _ in reports]
    if len(set(names)) != len(names):
        raise ContractError("duplicate model names in comparison")
    prints = {report.table_fingerprint for _, report in reports}
    if len(prints) != 1:
        raise ContractError("DIC reports come from different tables")
    ordered = sorted(reports, key=lambda nr: (nr[1].dic, nr[1].pd, nr[0]))
    best = ordered[0][1].dic
    entries = tuple(
        ComparisonEntry(rank=i + 1, model=name, dbar=rep.dbar, dhat=rep.dhat,
                        pd=rep.pd, dic=rep.dic, delta_dic=rep.dic - best)
        for i, (name, rep) in enumerate(ordered))
    return Comparison(entries=entries)


# ---------------------------------------------------------------------------
# Per-coefficient interval tables (the tabular form of interval plots)


@dataclass(frozen=True)
class IntervalRow:
    week: str
    category: str
    mean: float
    ci_low: float
    ci_high: float
    significant: bool


@dataclass(frozen=True)
class IntervalTable:
    term: str
    level: str
    category: str
    rows: tuple[IntervalRow, ...]
    note: str = ""


def interval_table(summary: PosteriorSummary, term: str, category: str,
                   weeks=None, level: str | None = None) -> IntervalTable:
    """One coefficient's interval per week for a given category.

    ``level`` picks the dummy column for multi-level terms; terms with a
    single column (the intercept, or a two-level factor) need none.  Asking
    for the reference category returns an empty table with a note, since no
    coefficients exist there.
    """
    layout = summary.layout
    block = layout.block(term)  # SchemaError when the term is unknown
    if category == layout.categories.reference_label:
        return IntervalTable(
            term=term, level=level or "", category=category, rows=(),
            note=(f"category {category!r} is the reference; its log-odds "
                  "are fixed at zero and carry no coefficients"))
    if level is None:
        if block.n_cols != 1:
            raise SchemaError(
                f"term {term!r} has columns {block.col_labels}; pass level=")
        level = block.col_labels[0]
    week_list = list(weeks) if weeks is not None else list(layout.weeks)
    rows = []
    for week in week_list:
        if week not in layout.weeks:
            raise SchemaError(f"unknown week {week!r}")
        idx = layout.coef_index(term, category,
                                week if layout.week_stratified else None,
                                level)
        s = summary.rows[idx]
        rows.append(IntervalRow(week=week, category=category, mean=s.mean,
                                ci_low=s.ci_low, ci_high=s.ci_high,
                                significant=s.significant))
    return IntervalTable(term=term, level=level, category=category,
                         rows=tuple(rows))


# ---------------------------------------------------------------------------
# Serialization used by the command-line front end


def summary_to_csv(summary) -> str:
    """CSV for a PosteriorSummary or a plain sequence of ParamSummary rows."""
    rows = summary.rows if hasattr(summary, "rows") else summary
    lines = ["parameter,mean,sd,median,q2.5,q97.5,rhat,ess,significant"]
    for row in rows:
        lines.append(",".join([
            row.name, repr(row.mean), repr(row.sd), repr(row.median),
            repr(row.ci_low), repr(row.ci_high), repr(row.rhat),
            repr(row.ess), str(row.significant).lower(),
        ]))
    return "\n".join(lines) + "\n"


def dic_to_json(report: DicReport) -> str:
    return json.dumps({
        "model": report.model,
        "dbar": report.dbar,
        "dhat": report.dhat,
        "pd": report.pd,
        "dic": report.dic,
        "n_draws": report.n_draws,
        "table_fingerprint": report.table_fingerprint,
    }, indent=2, sort_keys=True) + "\n"


def comparison_to_csv(comparison: Comparison, descriptions=None) -> str:
    descriptions = descriptions or {}
    lines = ["rank,model,linear_predictor,dbar,dhat,pd,dic,delta_dic"]
    for e in comparison.entries:
        lines.append(",".join([
            str(e.rank), e.model,
            '"%s"' % descriptions.get(e.model, ""),
            repr(e.dbar), repr(e.dhat), repr(e.pd), repr(e.dic),
            repr(e.delta_dic),
        ]))
    return "\n".join(lines) + "\n"


def comparison_to_text(comparison: Comparison, descriptions=None) -> str:
    descriptions = descriptions or {}
    width = max(len(e.model) for e in comparison.entries)
    lines = []
    for e in comparison.entries:
        desc = descriptions.get(e.model, "")
        lines.append(f"{e.rank}. {e.model:<{width}}  DIC {e.dic:10.1f}  "
                     f"pd {e.pd:8.1f}" + (f"  [{desc}]" if desc else ""))
    lines.append(f"selected: {comparison.winner} (lowest DIC)")
    return "\n".join(lines) + "\n"
