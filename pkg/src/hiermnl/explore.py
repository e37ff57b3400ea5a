"""Pre-model exploration: chi-square test, correspondence analysis, profiles.

All three operate on aggregated counts and are pure functions.  The
chi-square tail probability comes from the in-package incomplete-gamma
implementation, so exploration needs nothing beyond numpy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import ContingencyTable, ObservationTable, contingency
from .errors import ContractError, DegenerateTableError
from .special import chi2_sf


@dataclass(frozen=True)
class ChiSquareResult:
    """Pearson independence test on a two-way table."""

    statistic: float
    df: int
    p_value: float


@dataclass(frozen=True)
class CorrespondenceResult:
    """Principal-coordinate decomposition of a two-way table.

    Coordinates have one column per retained dimension
    (min(rows, cols) - 1).  ``inertia_share`` sums to 1 except on exact
    independence tables, where every share is 0 by convention.
    """

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    row_coords: np.ndarray       # (rows, dims)
    col_coords: np.ndarray       # (cols, dims)
    singular_values: np.ndarray  # (dims,), descending
    principal_inertias: np.ndarray
    inertia_share: np.ndarray
    total_inertia: float
    scaling: str = "symmetric"   # principal coordinates for rows and columns

    @property
    def n_dims(self) -> int:
        return self.singular_values.size


def _as_matrix(table) -> tuple[np.ndarray, list[str], list[str]]:
    if isinstance(table, ContingencyTable):
        return (np.asarray(table.matrix, dtype=float),
                list(table.row_labels), list(table.col_labels))
    m = np.asarray(table, dtype=float)
    if m.ndim != 2:
        raise ContractError("contingency table must be two-dimensional")
    rows = [f"row{i + 1}" for i in range(m.shape[0])]
    cols = [f"col{j + 1}" for j in range(m.shape[1])]
    return m, rows, cols


def _checked_margins(m, row_labels, col_labels):
    if m.shape[0] < 2 or m.shape[1] < 2:
        raise DegenerateTableError("need at least a 2x2 table")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise DegenerateTableError("counts must be finite and non-negative")
    row_tot = m.sum(axis=1)
    col_tot = m.sum(axis=0)
    for i in np.flatnonzero(row_tot == 0):
        raise DegenerateTableError(f"row margin {row_labels[i]!r} is zero")
    for j in np.flatnonzero(col_tot == 0):
        raise DegenerateTableError(f"column margin {col_labels[j]!r} is zero")
    return row_tot, col_tot


def chi_square(table) -> ChiSquareResult:
    """Pearson chi-square test of row/column independence.

    Accepts a ContingencyTable or a plain count matrix.  Expected counts
    are the usual margin products over the grand total; degrees of freedom
    are (rows - 1)(cols - 1).
    """
    m, row_labels, col_labels = _as_matrix(table)
    row_tot, col_tot = _checked_margins(m, row_labels, col_labels)
    grand = m.sum()
    expected = np.outer(row_tot, col_tot) / grand
    statistic = float(((m - expected) ** 2 / expected).sum())
    df = (m.shape[0] - 1) * (m.shape[1] - 1)
    return ChiSquareResult(statistic=statistic, df=df,
                           p_value=chi2_sf(statistic, df))


def correspondence(table) -> CorrespondenceResult:
    """Correspondence analysis of a two-way table.

    The standardized residual matrix D_r^{-1/2} (P - r c^T) D_c^{-1/2}
    (P the proportion matrix, r and c its margins) is decomposed by SVD;
    principal coordinates are the weighted singular vectors scaled by the
    singular values.  Total inertia equals the chi-square statistic over
    the grand total.  Each singular-vector pair is oriented so the row
    vector's largest-magnitude entry is positive, making coordinates
    reproducible across platforms.
    """
    m, row_labels, col_labels = _as_matrix(table)
    row_tot, col_tot = _checked_margins(m, row_labels, col_labels)
    grand = m.sum()
    p = m / grand
    r = row_tot / grand
    c = col_tot / grand
    d_r = 1.0 / np.sqrt(r)
    d_c = 1.0 / np.sqrt(c)
    s = d_r[:, None] * (p - np.outer(r, c)) * d_c[None, :]
    u, sig, vt = np.linalg.svd(s, full_matrices=False)
    dims = min(m.shape) - 1
    u, sig, v = u[:, :dims], sig[:dims], vt[:dims].T
    # Orient each pair: the largest-|entry| of the row vector is positive.
    for d in range(dims):
        pivot = np.argmax(np.abs(u[:, d]))
        if u[pivot, d] < 0:
            u[:, d] = -u[:, d]
            v[:, d] = -v[:, d]
    row_coords = d_r[:, None] * u * sig[None, :]
    col_coords = d_c[:, None] * v * sig[None, :]
    inertias = sig ** 2
    total = float(inertias.sum())
    if total > 0.0:
        shares = inertias / total
    else:
        shares = np.zeros_like(inertias)
    return CorrespondenceResult(
        row_labels=tuple(row_labels), col_labels=tuple(col_labels),
        row_coords=row_coords, col_coords=col_coords,
        singular_values=sig, principal_inertias=inertias,
        inertia_share=shares, total_inertia=total,
    )


@dataclass(frozen=True)
class ProfileRow:
    """Category share for one (week, group); ``proportion`` is None when
    the (week, group) cell holds no counts at all."""

    week: str
    group: str
    category: str
    proportion: float | None

    @property
    def empty(self) -> bool:
        return self.proportion is None


def mean_profiles(table: ObservationTable, group=None) -> tuple[ProfileRow, ...]:
    """Per-week category proportions, optionally split by factor levels.

    ``group`` names the factors whose level combinations split the
    profiles; None pools everything.  Zero-count categories stay in the
    output with proportion 0 so the category axis is complete; a (week,
    group) cell with no counts at all is emitted with None proportions.
    """
    group = list(group) if group else []
    facs = [table.factor(name) for name in group]
    positions = [table.factors.index(f) for f in facs]
    combos: list[tuple[str, ...]] = [()]
    for fac in facs:
        combos = [co + (lev,) for co in combos for lev in fac.levels]
    labels = [":".join(co) if co else "all" for co in combos]
    index = {co: i for i, co in enumerate(combos)}
    n_cat = table.n_categories
    totals = np.zeros((len(table.weeks), len(combos), n_cat))
    for row in table.rows:
        w = table.week_index(row.week)
        g = index[tuple(row.levels[p] for p in positions)]
        totals[w, g] += np.asarray(row.counts)
    rows = []
    for w, week in enumerate(table.weeks):
        for g, label in enumerate(labels):
            cell = totals[w, g]
            grand = cell.sum()
            for j, cat in enumerate(table.categories.labels):
                prop = float(cell[j] / grand) if grand > 0 else None
                rows.append(ProfileRow(week=week, group=label,
                                       category=cat, proportion=prop))
    return tuple(rows)


def explore_table(table: ObservationTable, group) -> ContingencyTable:
    """The group x category table used for the association analyses."""
    return contingency(table, group)


# ---------------------------------------------------------------------------
# Serialization used by the command-line front end


def chi_square_to_json(result: ChiSquareResult) -> str:
    return json.dumps({
        "statistic": result.statistic,
        "df": result.df,
        "p_value": result.p_value,
    }, indent=2, sort_keys=True) + "\n"


def coords_to_csv(result: CorrespondenceResult) -> str:
    dims = result.n_dims
    header = "entity,type," + ",".join(f"dim{d + 1}" for d in range(dims))
    lines = [header]
    for label, coord in zip(result.row_labels, result.row_coords):
        lines.append(",".join([label, "row"] + [repr(float(x)) for x in coord]))
    for label, coord in zip(result.col_labels, result.col_coords):
        lines.append(",".join([label, "col"] + [repr(float(x)) for x in coord]))
    return "\n".join(lines) + "\n"


def inertia_to_csv(result: CorrespondenceResult) -> str:
    lines = ["dimension,singular_value,principal_inertia,share,cumulative_share"]
    cum = 0.0
    for d in range(result.n_dims):
        cum += float(result.inertia_share[d])
        lines.append(",".join([
            str(d + 1),
            repr(float(result.singular_values[d])),
            repr(float(result.principal_inertias[d])),
            repr(float(result.inertia_share[d])),
            repr(cum),
        ]))
    return "\n".join(lines) + "\n"


def profiles_to_csv(rows) -> str:
    lines = ["week,group,category,proportion,empty"]
    for row in rows:
        value = "" if row.proportion is None else repr(row.proportion)
        lines.append(",".join([row.week, row.group, row.category, value,
                               str(row.empty).lower()]))
    return "\n".join(lines) + "\n"
