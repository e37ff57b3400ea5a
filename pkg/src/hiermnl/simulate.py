"""Synthetic tables from known parameters, plus brute-force posterior checks.

The generator draws per-(subject, week) category counts from the model's
own probabilities, so everything downstream (fitting, DIC, coverage) can
be validated against a known truth.  The independent check is exhaustive
grid integration of the posterior for problems with at most two free
parameters -- deliberately not a second sampler, so sampler bugs cannot
confirm themselves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import CategorySet, FactorDef, Observation, ObservationTable
from .design import (ModelSpec, ParameterLayout, PriorConfig, build_layout,
                     preset, spec_from_json)
from .errors import ContractError, GridBoundaryError, SchemaError
from .likelihood import eta_matrix, probabilities
from .inference import summarize
from .sampler import SamplerConfig, run

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SimulationSpec:
    """A design (factors, subjects, weeks, trials), a truth, and a seed.

    ``truth`` sets the fixed-effect part of the generating state, either
    as a mapping from parameter name to value (unnamed entries default to
    0) or as a flat vector covering the fixed effects or the whole state.
    Random intercepts are always drawn fresh by ``generate`` from
    N(0, raneff_sd^2); ``raneff_sd`` defaults to the model prior's spread.
    """

    factors: tuple[FactorDef, ...]
    categories: CategorySet
    n_subjects: int
    weeks: tuple[str, ...]
    trials: int
    model: ModelSpec
    truth: object = None
    seed: int = 0
    raneff_sd: float | None = None

    def __post_init__(self):
        if self.n_subjects < 1:
            raise SchemaError("need at least one subject")
        if not self.weeks:
            raise SchemaError("need at least one week")
        if len(set(self.weeks)) != len(self.weeks):
            raise SchemaError("duplicate week labels")
        if self.trials < 1:
            raise SchemaError("need at least one trial per cell")
        if self.raneff_sd is not None and self.raneff_sd <= 0:
            raise SchemaError("raneff_sd must be positive")


@dataclass(frozen=True)
class SimulationResult:
    """A generated table with the completed generating state."""

    spec: SimulationSpec
    table: ObservationTable
    layout: ParameterLayout
    truth: np.ndarray = field(compare=False)  # full flat state, drawn u included
    raneff_sd_used: float | None

    def truth_by_name(self) -> dict[str, float]:
        return dict(zip(self.layout.param_names, map(float, self.truth)))


def _subject_roster(spec: SimulationSpec):
    """Subjects named s01, s02, ... assigned to factor combinations round-robin."""
    combos: list[tuple[str, ...]] = [()]
    for fac in spec.factors:
        combos = [c + (lev,) for c in combos for lev in fac.levels]
    width = max(2, len(str(spec.n_subjects)))
    names = tuple(f"s{i + 1:0{width}d}" for i in range(spec.n_subjects))
    assignment = tuple(combos[i % len(combos)] for i in range(spec.n_subjects))
    return names, assignment


def _skeleton(spec: SimulationSpec) -> ObservationTable:
    names, assignment = _subject_roster(spec)
    filler = (1,) + (0,) * (len(spec.categories) - 1)
    rows = tuple(
        Observation(subject=name, week=week, levels=levels, counts=filler)
        for name, levels in zip(names, assignment)
        for week in spec.weeks)
    return ObservationTable(subjects=names, weeks=spec.weeks,
                            factors=spec.factors,
                            categories=spec.categories, rows=rows)


def _resolve_truth(spec: SimulationSpec, layout: ParameterLayout) -> np.ndarray:
    theta = np.zeros(layout.total_dim)
    truth = spec.truth
    if truth is None:
        pass
    elif isinstance(truth, dict):
        for name, value in truth.items():
            theta[layout.flat_index(name)] = float(value)
    else:
        arr = np.asarray(truth, dtype=float).reshape(-1)
        if arr.size == layout.total_dim:
            theta[:] = arr
        elif arr.size == layout.n_fixed:
            theta[:layout.n_fixed] = arr
        else:
            raise SchemaError(
                f"truth has {arr.size} entries; the layout takes "
                f"{layout.n_fixed} fixed effects or {layout.total_dim} total")
    if not np.all(np.isfinite(theta)):
        raise SchemaError("truth contains non-finite values")
    return theta


def generate_full(spec: SimulationSpec) -> SimulationResult:
    """Draw a table from the model at the spec's truth.

    Subject intercepts are drawn first (one normal per intercept), then
    all cell counts in row order, from a Philox stream seeded by
    ``spec.seed``; reruns are bit-identical.
    """
    skeleton = _skeleton(spec)
    layout = build_layout(spec.model, skeleton)
    theta = _resolve_truth(spec, layout)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    sd_used = None
    if layout.raneff_count:
        sd_used = (spec.raneff_sd if spec.raneff_sd is not None
                   else math.sqrt(spec.model.priors.raneff_scale))
        u = sd_used * rng.standard_normal(layout.raneff_count)
        theta[layout.n_fixed:layout.n_fixed + layout.raneff_count] = u
        if layout.has_raneff_sd:
            theta[-1] = sd_used
    pi = probabilities(eta_matrix(layout, theta))
    counts = rng.multinomial(spec.trials, pi)
    rows = tuple(
        Observation(subject=row.subject, week=row.week, levels=row.levels,
                    counts=tuple(int(x) for x in drawn))
        for row, drawn in zip(skeleton.rows, counts))
    table = ObservationTable(subjects=skeleton.subjects, weeks=skeleton.weeks,
                             factors=skeleton.factors,
                             categories=skeleton.categories, rows=rows)
    return SimulationResult(spec=spec, table=table,
                            layout=build_layout(spec.model, table),
                            truth=theta, raneff_sd_used=sd_used)


def generate(spec: SimulationSpec) -> ObservationTable:
    """The generated table alone; see ``generate_full`` for the truth."""
    return generate_full(spec).table


# ---------------------------------------------------------------------------
# Exhaustive grid integration for tiny posteriors


@dataclass(frozen=True)
class GridSpec:
    """Axis bounds and per-axis point count for grid integration."""

    bounds: tuple[tuple[float, float], ...]
    points: int = 801

    def __post_init__(self):
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ContractError("grid bounds must satisfy lo < hi")
        if self.points < 33:
            raise ContractError("grid needs at least 33 points per axis")


@dataclass
class GridPosterior:
    """Trapezoid-integrated posterior over a full parameter grid."""

    axes: tuple[np.ndarray, ...]
    density: np.ndarray          # normalized: integrates to 1 on the grid
    means: np.ndarray
    variances: np.ndarray
    boundary_mass: float


def _trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    step = axis[1] - axis[0]
    w = np.full(axis.size, step)
    w[0] = w[-1] = step / 2.0
    return w


def grid_posterior(layout: ParameterLayout, table, priors: PriorConfig,
                   grid: GridSpec) -> GridPosterior:
    """Posterior means/variances by dense trapezoidal integration.

    Only layouts with at most two parameters (and no hierarchical sd) are
    supported; the log-odds are linear in the state there, so the whole
    grid is evaluated through two probe calls into the likelihood module.
    Each axis must span at least eight prior standard deviations, and mass
    on the grid boundary beyond 1e-6 of the total is an error: both guards
    keep the oracle honest about truncation.
    """
    if table is not None and table is not layout.table:
        raise ContractError("table does not match the layout's table")
    dim = layout.total_dim
    if dim > 2:
        raise ContractError("grid integration supports at most 2 parameters")
    if layout.has_raneff_sd:
        raise ContractError("grid integration does not cover the hierarchical sd")
    if len(grid.bounds) != dim:
        raise ContractError(f"grid bounds cover {len(grid.bounds)} axes, "
                            f"the layout has {dim} parameters")
    prior_mean = np.empty(dim)
    prior_var = np.empty(dim)
    for d in range(dim):
        if d < layout.n_fixed:
            prior_mean[d], prior_var[d] = priors.coef_mean, priors.coef_scale
        else:
            prior_mean[d], prior_var[d] = 0.0, priors.raneff_scale
    for d, (lo, hi) in enumerate(grid.bounds):
        if hi - lo < 8.0 * math.sqrt(prior_var[d]):
            raise ContractError(
                f"axis {d}: span {hi - lo:g} is under eight prior sds")

    # Log-odds are linear in theta: probe the likelihood module once per axis.
    base_eta = eta_matrix(layout, np.zeros(dim))
    slopes = np.stack([
        eta_matrix(layout, np.eye(dim)[d]) - base_eta for d in range(dim)
    ], axis=-1)  # (rows, categories, dim)
    counts = layout.design.counts

    axes = tuple(np.linspace(lo, hi, grid.points) for lo, hi in grid.bounds)
    mesh = np.meshgrid(*axes, indexing="ij")
    thetas = np.stack([m.reshape(-1) for m in mesh], axis=-1)  # (G, dim)
    n_points = thetas.shape[0]

    log_post = np.empty(n_points)
    dev = thetas - prior_mean
    log_post[:] = (-(dev * dev) / (2.0 * prior_var)
                   - _HALF_LOG_2PI - 0.5 * np.log(prior_var)).sum(axis=1)
    if layout.design.n_rows:
        chunk = max(1, int(4e6 // max(1, base_eta.size)))
        for start in range(0, n_points, chunk):
            part = thetas[start:start + chunk]
            eta = base_eta[None] + np.einsum("rjd,gd->grj", slopes, part)
            shifted = eta - eta.max(axis=2, keepdims=True)
            logpi = shifted - np.log(np.exp(shifted).sum(axis=2, keepdims=True))
            log_post[start:start + chunk] += np.einsum("rj,grj->g", counts, logpi)

    shape = tuple(a.size for a in axes)
    log_post = log_post.reshape(shape)
    f = np.exp(log_post - log_post.max())
    weights = _trapezoid_weights(axes[0])
    for axis in axes[1:]:
        weights = np.multiply.outer(weights, _trapezoid_weights(axis))
    mass = f * weights
    total = mass.sum()
    if total <= 0.0:
        raise ContractError("posterior mass underflowed on the grid")
    mass /= total

    edge = np.zeros(shape, dtype=bool)
    for d in range(dim):
        idx = [slice(None)] * dim
        idx[d] = 0
        edge[tuple(idx)] = True
        idx[d] = -1
        edge[tuple(idx)] = True
    boundary = float(mass[edge].sum())
    if boundary > 1e-6:
        raise GridBoundaryError(
            f"{boundary:.3g} of the posterior mass sits on the grid boundary; "
            "widen the bounds")

    means = np.array([(mass * mesh[d]).sum() for d in range(dim)])
    variances = np.array([
        (mass * (mesh[d] - means[d]) ** 2).sum() for d in range(dim)])
    return GridPosterior(axes=axes, density=f / total,
                         means=means, variances=variances,
                         boundary_mass=boundary)


# ---------------------------------------------------------------------------
# End-to-end parameter recovery


@dataclass(frozen=True)
class CoefRecovery:
    name: str
    truth: float
    mean: float
    ci_low: float
    ci_high: float
    covered: bool


@dataclass(frozen=True)
class RecoveryReport:
    """Fixed-effect interval coverage of the generating truth."""

    rows: tuple[CoefRecovery, ...]
    skipped: tuple[str, ...]  # fitted coefficients absent from the truth layout

    @property
    def n_params(self) -> int:
        return len(self.rows)

    @property
    def n_covered(self) -> int:
        return sum(r.covered for r in self.rows)

    @property
    def coverage(self) -> float:
        return self.n_covered / self.n_params if self.rows else float("nan")


def recovery_trial(spec: SimulationSpec, model: ModelSpec,
                   config: SamplerConfig, workers: int = 1) -> RecoveryReport:
    """Generate, fit, summarize; report 95%-interval coverage of the truth.

    Coefficients are matched by name, so a deliberately misspecified
    ``model`` is compared on the terms it shares with the generating one;
    fitted coefficients with no counterpart are listed as skipped.
    """
    result = generate_full(spec)
    layout = build_layout(model, result.table)
    draws = run(layout, result.table, model.priors, config, workers=workers)
    summary = summarize(draws)
    truth_map = result.truth_by_name()
    rows = []
    skipped = []
    for name in layout.param_names[:layout.n_fixed]:
        if name not in truth_map:
            skipped.append(name)
            continue
        true = truth_map[name]
        s = summary[name]
        rows.append(CoefRecovery(
            name=name, truth=true, mean=s.mean,
            ci_low=s.ci_low, ci_high=s.ci_high,
            covered=s.ci_low <= true <= s.ci_high))
    return RecoveryReport(rows=tuple(rows), skipped=tuple(skipped))


# ---------------------------------------------------------------------------
# Simulation-spec files


def sim_spec_from_json(text: str) -> SimulationSpec:
    """Parse a simulation-spec JSON document.

    ``model`` may be an inline model object or a preset name; references
    (factor/category) are given by label.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"simulation spec is not valid JSON: {exc}") from exc
    try:
        factors = tuple(
            FactorDef(name=f["name"], levels=tuple(f["levels"]),
                      reference=(tuple(f["levels"]).index(f["reference"])
                                 if "reference" in f else 0))
            for f in raw["factors"])
        cat_raw = raw["categories"]
        labels = tuple(cat_raw["labels"])
        categories = CategorySet(
            labels=labels,
            reference=(labels.index(cat_raw["reference"])
                       if "reference" in cat_raw else 0))
        n_subjects = int(raw["n_subjects"])
        trials = int(raw["trials"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"simulation spec is incomplete: {exc}") from exc
    if "weeks" in raw:
        weeks = tuple(str(w) for w in raw["weeks"])
    else:
        weeks = tuple(f"w{t + 1}" for t in range(int(raw.get("n_weeks", 1))))
    model_raw = raw.get("model", "model1")
    if isinstance(model_raw, str):
        model = preset(model_raw, [f.name for f in factors])
    else:
        model = spec_from_json(json.dumps(model_raw))
    raneff_sd = raw.get("raneff_sd")
    return SimulationSpec(
        factors=factors, categories=categories, n_subjects=n_subjects,
        weeks=weeks, trials=trials, model=model,
        truth=raw.get("truth"), seed=int(raw.get("seed", 0)),
        raneff_sd=None if raneff_sd is None else float(raneff_sd))


def truth_to_json(result: SimulationResult) -> str:
    """The completed generating state, keyed by parameter name."""
    return json.dumps({
        "model": result.spec.model.name,
        "seed": result.spec.seed,
        "raneff_sd": result.raneff_sd_used,
        "params": result.truth_by_name(),
    }, indent=2, sort_keys=True) + "\n"
