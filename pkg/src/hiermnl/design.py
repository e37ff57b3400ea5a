"""Model terms, dummy coding and the flat parameter layout.

A model is a list of terms (intercept, factor main effects, two-factor
interactions) applied per non-reference category and, when stratified, per
week.  The layout fixes one flat ordering of all coefficients so states,
draw files and summaries agree on parameter positions:

    fixed effects: C-order over (category, week, column), where the columns
    concatenate the terms' dummy columns;
    then one random intercept per subject (or per subject x category);
    then, when the hierarchical variance is enabled, the intercept sd.

The reference category and reference factor levels carry no coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Observation, ObservationTable
from .errors import ContractError, SchemaError


@dataclass(frozen=True)
class Term:
    """One linear-predictor term: intercept, main effect or interaction."""

    kind: str  # "intercept" | "main" | "interaction"
    factors: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == "intercept" and self.factors:
            raise SchemaError("intercept term takes no factors")
        if self.kind == "main" and len(self.factors) != 1:
            raise SchemaError("main-effect term takes exactly one factor")
        if self.kind == "interaction" and len(self.factors) != 2:
            raise SchemaError("interaction term takes exactly two factors")
        if self.kind not in ("intercept", "main", "interaction"):
            raise SchemaError(f"unknown term kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "intercept":
            return "intercept"
        return ":".join(self.factors)


def intercept() -> Term:
    return Term("intercept")


def main_effect(factor: str) -> Term:
    return Term("main", (factor,))


def interaction(a: str, b: str) -> Term:
    return Term("interaction", (a, b))


@dataclass(frozen=True)
class PriorConfig:
    """Independent normal priors on the log-odds scale.

    Scales are variances.  ``scale_interpretation`` records whether the
    configured value came from reading a stated prior spread as a precision
    (reciprocal variance) or directly as a variance; it is informational
    and does not affect computation.
    """

    coef_mean: float = 0.0
    coef_scale: float = 100.0
    raneff_scale: float = 100.0
    scale_interpretation: str = "precision"

    def __post_init__(self):
        if self.coef_scale <= 0 or self.raneff_scale <= 0:
            raise SchemaError("prior scales must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one linear predictor.

    ``week_stratified`` gives every coefficient its own value per week;
    ``random_intercept`` adds a per-subject intercept shared across
    categories and weeks.  ``raneff_by_category`` switches to one intercept
    per subject and non-reference category, and ``raneff_hierarchical``
    samples the intercept sd under a half-normal hyperprior instead of
    fixing its variance at ``priors.raneff_scale``.
    """

    terms: tuple[Term, ...]
    week_stratified: bool = True
    random_intercept: bool = True
    raneff_by_category: bool = False
    raneff_hierarchical: bool = False
    priors: PriorConfig = field(default_factory=PriorConfig)
    name: str = "custom"

    def __post_init__(self):
        if not any(t.kind == "intercept" for t in self.terms):
            raise SchemaError("model must include an intercept term")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate model terms")

    def describe(self) -> str:
        parts = []
        for term in self.terms:
            if term.kind == "intercept":
                continue
            parts.append(" x ".join(term.factors) if term.kind == "interaction"
                         else term.factors[0])
        label = " + ".join(parts) if parts else "intercept only"
        if self.random_intercept:
            label += " + random intercept"
        return label


@dataclass(frozen=True)
class CoefBlock:
    """One term's coefficient columns within the per-(category, week) vector."""

    term: Term
    col_offset: int
    col_labels: tuple[str, ...]

    @property
    def n_cols(self) -> int:
        return len(self.col_labels)


class CompiledDesign:
    """Numeric arrays derived from a table for fast likelihood work."""

    def __init__(self, table: ObservationTable, layout: "ParameterLayout"):
        rows = table.rows
        n_rows = len(rows)
        self.table = table
        self.counts = np.array([r.counts for r in rows], dtype=float).reshape(
            n_rows, len(table.categories))
        self.totals = self.counts.sum(axis=1)
        subj_idx = {s: i for i, s in enumerate(table.subjects)}
        week_idx = {w: i for i, w in enumerate(table.weeks)}
        self.subj_idx = np.array([subj_idx[r.subject] for r in rows], dtype=np.intp)
        if layout.week_stratified:
            self.week_idx = np.array([week_idx[r.week] for r in rows], dtype=np.intp)
        else:
            self.week_idx = np.zeros(n_rows, dtype=np.intp)
        self.x = np.zeros((n_rows, layout.n_cols))
        for i, row in enumerate(rows):
            self.x[i] = layout.row_columns(row)
        self.n_rows = n_rows


class ParameterLayout:
    """Flat addressing of every sampled parameter for one (model, table) pair.

    Exposes the per-term blocks, the total dimension, a stable name per flat
    index, and pack/unpack between the flat vector and the structured
    (coefficients, intercepts, sd) views.
    """

    def __init__(self, spec: ModelSpec, table: ObservationTable):
        for term in spec.terms:
            for name in term.factors:
                table.factor(name)  # raises SchemaError on unknown factors
        self.spec = spec
        self.table = table
        self.categories = table.categories
        self.nonref_categories = table.categories.nonreference_labels()
        self.n_cats_nonref = len(self.nonref_categories)
        self.week_stratified = spec.week_stratified
        self.weeks = table.weeks if spec.week_stratified else ("*",)
        self.n_weeks_eff = len(self.weeks)

        blocks: list[CoefBlock] = []
        offset = 0
        for term in spec.terms:
            labels = self._term_columns(term, table)
            blocks.append(CoefBlock(term, offset, labels))
            offset += len(labels)
        self.blocks = tuple(blocks)
        self.n_cols = offset
        self.n_fixed = self.n_cats_nonref * self.n_weeks_eff * self.n_cols

        if spec.random_intercept:
            self.raneff_shape = ((table.n_subjects, self.n_cats_nonref)
                                 if spec.raneff_by_category
                                 else (table.n_subjects,))
        else:
            self.raneff_shape = (0,)
        self.raneff_count = int(np.prod(self.raneff_shape)) if spec.random_intercept else 0
        self.has_raneff_sd = spec.random_intercept and spec.raneff_hierarchical
        self.total_dim = self.n_fixed + self.raneff_count + (1 if self.has_raneff_sd else 0)
        self.param_names = tuple(self._build_names())
        self._name_index = {n: i for i, n in enumerate(self.param_names)}
        self.design = CompiledDesign(table, self)

    @staticmethod
    def _term_columns(term: Term, table: ObservationTable) -> tuple[str, ...]:
        if term.kind == "intercept":
            return ("",)
        if term.kind == "main":
            return table.factor(term.factors[0]).nonreference_levels()
        fa, fb = (table.factor(n) for n in term.factors)
        return tuple(f"{la}:{lb}"
                     for la in fa.nonreference_levels()
                     for lb in fb.nonreference_levels())

    def _build_names(self):
        names = []
        for cat in self.nonref_categories:
            for week in self.weeks:
                for block in self.blocks:
                    for col in block.col_labels:
                        parts = [cat]
                        if self.week_stratified:
                            parts.append(week)
                        if col:
                            parts.append(col)
                        names.append(f"{block.term.name}[{'|'.join(parts)}]")
        if self.spec.random_intercept:
            if self.spec.raneff_by_category:
                for subj in self.table.subjects:
                    for cat in self.nonref_categories:
                        names.append(f"u[{subj}|{cat}]")
            else:
                for subj in self.table.subjects:
                    names.append(f"u[{subj}]")
        if self.has_raneff_sd:
            names.append("raneff_sd")
        return names

    def row_columns(self, row: Observation) -> np.ndarray:
        """The 0/1 dummy row for the per-(category, week) coefficient vector."""
        x = np.zeros(self.n_cols)
        levels = {f.name: lev for f, lev in zip(self.table.factors, row.levels)}
        for block in self.blocks:
            term = block.term
            if term.kind == "intercept":
                x[block.col_offset] = 1.0
            elif term.kind == "main":
                lev = levels[term.factors[0]]
                labels = block.col_labels
                if lev in labels:
                    x[block.col_offset + labels.index(lev)] = 1.0
            else:
                la, lb = (levels[n] for n in term.factors)
                label = f"{la}:{lb}"
                if label in block.col_labels:
                    x[block.col_offset + block.col_labels.index(label)] = 1.0
        return x

    def flat_index(self, name: str) -> int:
        try:
            return self._name_index[name]
        except KeyError:
            raise SchemaError(f"unknown parameter {name!r}") from None

    def coef_index(self, term: str, category: str, week: str | None = None,
                   level: str = "") -> int:
        """Flat index of one fixed-effect coefficient."""
        block = self.block(term)
        if category not in self.nonref_categories:
            raise SchemaError(f"category {category!r} carries no coefficients")
        j = self.nonref_categories.index(category)
        if self.week_stratified:
            if week is None:
                raise SchemaError("week required for a stratified layout")
            t = self.weeks.index(week)
        else:
            t = 0
        if level not in block.col_labels:
            raise SchemaError(f"unknown level {level!r} for term {term!r}")
        p = block.col_offset + block.col_labels.index(level)
        return (j * self.n_weeks_eff + t) * self.n_cols + p

    def block(self, term_name: str) -> CoefBlock:
        for block in self.blocks:
            if block.term.name == term_name:
                return block
        raise SchemaError(f"unknown term {term_name!r}")

    def validate_state(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.total_dim,):
            raise ContractError(
                f"state has shape {theta.shape}, layout needs ({self.total_dim},)"
            )
        if not np.all(np.isfinite(theta)):
            raise ContractError("state contains non-finite entries")
        return theta

    def unpack(self, theta: np.ndarray):
        """Split a flat state into (coefs, raneffs, raneff_sd).

        ``coefs`` has shape (non-ref categories, effective weeks, columns);
        ``raneffs`` is empty when the model has no random intercept;
        ``raneff_sd`` is None unless the hierarchical flag is set.
        """
        theta = self.validate_state(theta)
        coefs = theta[:self.n_fixed].reshape(
            self.n_cats_nonref, self.n_weeks_eff, self.n_cols)
        raneffs = theta[self.n_fixed:self.n_fixed + self.raneff_count]
        if self.spec.random_intercept and self.spec.raneff_by_category:
            raneffs = raneffs.reshape(self.raneff_shape)
        sd = float(theta[-1]) if self.has_raneff_sd else None
        return coefs, raneffs, sd

    def pack(self, coefs: np.ndarray, raneffs: np.ndarray | None = None,
             raneff_sd: float | None = None) -> np.ndarray:
        theta = np.zeros(self.total_dim)
        theta[:self.n_fixed] = np.asarray(coefs, dtype=float).reshape(-1)
        if self.raneff_count:
            if raneffs is not None:
                theta[self.n_fixed:self.n_fixed + self.raneff_count] = (
                    np.asarray(raneffs, dtype=float).reshape(-1))
        if self.has_raneff_sd:
            theta[-1] = 1.0 if raneff_sd is None else float(raneff_sd)
        return theta


def build_layout(spec: ModelSpec, table: ObservationTable) -> ParameterLayout:
    """Resolve a model spec against a table into a concrete layout."""
    return ParameterLayout(spec, table)


def linear_predictor(layout: ParameterLayout, theta: np.ndarray,
                     row: Observation) -> np.ndarray:
    """Per-category log-odds for one row; the reference entry is 0."""
    coefs, raneffs, _ = layout.unpack(theta)
    table = layout.table
    t = table.week_index(row.week) if layout.week_stratified else 0
    s = table.subject_index(row.subject)
    x = layout.row_columns(row)
    eta = np.zeros(len(layout.categories))
    nonref = [i for i in range(len(layout.categories))
              if i != layout.categories.reference]
    for j1, j in enumerate(nonref):
        eta[j] = float(coefs[j1, t] @ x)
        if layout.spec.random_intercept:
            eta[j] += (raneffs[s, j1] if layout.spec.raneff_by_category
                       else raneffs[s])
    return eta


# ---------------------------------------------------------------------------
# Model-spec files and named presets


def spec_from_json(text: str) -> ModelSpec:
    """Parse a model-spec JSON document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model spec is not valid JSON: {exc}") from exc
    terms: list[Term] = []
    for item in raw.get("terms", []):
        kind = item.get("type")
        if kind == "intercept":
            terms.append(intercept())
        elif kind == "main":
            terms.append(main_effect(item["factor"]))
        elif kind == "interaction":
            terms.append(interaction(*item["factors"]))
        else:
            raise SchemaError(f"unknown term type {kind!r}")
    if not any(t.kind == "intercept" for t in terms):
        terms.insert(0, intercept())
    priors_raw = raw.get("priors", {})
    priors = PriorConfig(
        coef_mean=float(priors_raw.get("coef_mean", 0.0)),
        coef_scale=float(priors_raw.get("coef_scale", 100.0)),
        raneff_scale=float(priors_raw.get("raneff_scale", 100.0)),
        scale_interpretation=priors_raw.get("scale_interpretation", "precision"),
    )
    return ModelSpec(
        terms=tuple(terms),
        week_stratified=bool(raw.get("week_stratified", True)),
        random_intercept=bool(raw.get("random_intercept", True)),
        raneff_by_category=bool(raw.get("raneff_by_category", False)),
        raneff_hierarchical=bool(raw.get("raneff_hierarchical", False)),
        priors=priors,
        name=raw.get("name", "custom"),
    )


def spec_to_json(spec: ModelSpec) -> str:
    terms = []
    for term in spec.terms:
        if term.kind == "intercept":
            terms.append({"type": "intercept"})
        elif term.kind == "main":
            terms.append({"type": "main", "factor": term.factors[0]})
        else:
            terms.append({"type": "interaction", "factors": list(term.factors)})
    raw = {
        "name": spec.name,
        "terms": terms,
        "week_stratified": spec.week_stratified,
        "random_intercept": spec.random_intercept,
        "raneff_by_category": spec.raneff_by_category,
        "raneff_hierarchical": spec.raneff_hierarchical,
        "priors": {
            "coef_mean": spec.priors.coef_mean,
            "coef_scale": spec.priors.coef_scale,
            "raneff_scale": spec.priors.raneff_scale,
            "scale_interpretation": spec.priors.scale_interpretation,
        },
    }
    return json.dumps(raw, indent=2, sort_keys=True) + "\n"


def preset(name: str, factor_names: Sequence[str]) -> ModelSpec:
    """Named model presets over the given design factors.

    ``model1``: intercept plus a main effect for every factor, with a random
    subject intercept.  ``model2``: additionally the interaction between the
    last two declared factors (in a block + factorial design those are the
    two treatment factors).
    """
    factor_names = list(factor_names)
    if not factor_names:
        raise SchemaError("presets require at least one design factor")
    terms = [intercept()] + [main_effect(f) for f in factor_names]
    if name == "model1":
        return ModelSpec(terms=tuple(terms), name="model1")
    if name == "model2":
        if len(factor_names) < 2:
            raise SchemaError("preset 'model2' requires at least two factors")
        terms.append(interaction(factor_names[-2], factor_names[-1]))
        return ModelSpec(terms=tuple(terms), name="model2")
    raise SchemaError(f"unknown model preset {name!r}")


def with_priors(spec: ModelSpec, priors: PriorConfig) -> ModelSpec:
    return replace(spec, priors=priors)
