"""Adaptive random-walk Metropolis-within-Gibbs over multiple chains.

Update blocks follow the layout's natural grouping: all fixed-effect
columns for one (category, week) pair move jointly under a Gaussian
random walk, each subject intercept moves singly, and the intercept sd
(when hierarchical) moves on the log scale.  Blocks touching disjoint
weeks or disjoint subjects are conditionally independent given the rest
of the state, so their proposals are evaluated in one vectorized pass
with independent accept decisions; the kernel is identical to updating
them one at a time.

Proposal scales adapt per block during burn-in only, by a Robbins-Monro
recursion on the log scale towards a target acceptance rate, and are
frozen afterwards so the post-burn-in kernel is a fixed Metropolis
kernel.  Each chain draws from its own counter-based RNG substream
(Philox, keyed by spawning the root seed sequence per chain index), so
results are bit-identical however chains are scheduled.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import ParameterLayout, PriorConfig
from .errors import ContractError, SamplerInitError
from .likelihood import eta_matrix, log_prior, row_log_likelihoods

RNG_ALGORITHM = "numpy.random.Philox"
RNG_DERIVATION = "SeedSequence(seed).spawn(n_chains)[chain_index]"

_REFRESH_EVERY = 512  # full cache recompute, bounds float drift


class DegenerateChainWarning(UserWarning):
    """A parameter's chain has zero variance; diagnostics are nominal."""


@dataclass(frozen=True)
class AdaptConfig:
    """Burn-in adaptation policy for per-block proposal scales."""

    target_acceptance: float = 0.35
    window: int = 50
    decay: float = 0.6
    initial_scale: float = 0.5
    min_scale: float = 1e-8
    max_scale: float = 1e8


@dataclass(frozen=True)
class SamplerConfig:
    """Chain count, lengths, thinning, seeding and initialization policy."""

    n_chains: int = 4
    n_iter: int = 5000
    n_burnin: int = 1000
    thin: int = 15
    seed: int = 0
    init: str = "jittered-zeros"  # zeros | prior-draw | jittered-zeros
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def __post_init__(self):
        if self.n_chains < 1:
            raise ContractError("n_chains must be >= 1")
        if not 1 <= self.thin <= self.n_iter:
            raise ContractError("need n_iter >= thin >= 1")
        if self.n_burnin < 0:
            raise ContractError("n_burnin must be >= 0")
        if self.init not in ("zeros", "prior-draw", "jittered-zeros"):
            raise ContractError(f"unknown init policy {self.init!r}")

    @property
    def n_kept(self) -> int:
        return self.n_iter // self.thin


@dataclass
class PosteriorDraws:
    """Retained samples, chain-major, plus per-block kernel bookkeeping."""

    layout: ParameterLayout
    config: SamplerConfig
    draws: np.ndarray                 # (chains, kept, total_dim)
    acceptance: np.ndarray            # post-burn-in rate, (chains, blocks)
    scales_end_burnin: np.ndarray     # (chains, blocks)
    scales_final: np.ndarray          # (chains, blocks)
    block_names: tuple[str, ...]
    chain_seeds: tuple[tuple[int, int], ...]  # (root seed, spawn index)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_kept(self) -> int:
        return self.draws.shape[1]

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.layout.param_names

    def pooled(self) -> np.ndarray:
        """All chains concatenated, shape (chains * kept, total_dim)."""
        return self.draws.reshape(-1, self.draws.shape[2])


class ChainState:
    """Mutable sampling state with cached log-odds and row log-likelihoods."""

    def __init__(self, layout: ParameterLayout, priors: PriorConfig,
                 theta: np.ndarray):
        self.layout = layout
        self.priors = priors
        coefs, raneffs, sd = layout.unpack(theta)
        self.coefs = np.array(coefs)
        self.raneffs = np.array(raneffs)
        self.sd = sd
        n_cat = len(layout.categories)
        self.nonref_cols = np.array(
            [j for j in range(n_cat) if j != layout.categories.reference])
        self.refresh()

    def theta(self) -> np.ndarray:
        return self.layout.pack(self.coefs, self.raneffs, self.sd)

    def refresh(self):
        """Recompute caches from the parameters."""
        theta = self.theta()
        self.eta = eta_matrix(self.layout, theta)
        self.row_ll = row_log_likelihoods(self.layout, self.eta)

    def log_posterior(self) -> float:
        return float(self.row_ll.sum()) + log_prior(
            self.layout, self.theta(), self.priors)

    def raneff_variance(self) -> float:
        if self.layout.has_raneff_sd:
            return self.sd * self.sd
        return self.priors.raneff_scale


def _fixed_update(state: ChainState, j1: int, deltas: np.ndarray,
                  log_unifs: np.ndarray):
    """Jointly propose all (category j1, week t) blocks; accept per week.

    ``deltas`` has shape (effective weeks, columns).  Returns the per-week
    accept mask and acceptance probabilities.
    """
    layout = state.layout
    design = layout.design
    jcol = state.nonref_cols[j1]
    proposed = state.coefs[j1] + deltas
    d_eta = np.einsum("rc,rc->r", design.x, deltas[design.week_idx])
    eta_new = state.eta.copy()
    eta_new[:, jcol] += d_eta
    row_ll_new = row_log_likelihoods(layout, eta_new)
    d_ll = np.bincount(design.week_idx, weights=row_ll_new - state.row_ll,
                       minlength=layout.n_weeks_eff)
    mean = state.priors.coef_mean
    scale = state.priors.coef_scale
    d_prior = -(((proposed - mean) ** 2).sum(axis=1)
                - ((state.coefs[j1] - mean) ** 2).sum(axis=1)) / (2.0 * scale)
    log_alpha = d_ll + d_prior
    accept = log_unifs < log_alpha
    if accept.any():
        row_accept = accept[design.week_idx]
        state.eta[:, jcol] = np.where(row_accept, eta_new[:, jcol],
                                      state.eta[:, jcol])
        state.row_ll = np.where(row_accept, row_ll_new, state.row_ll)
        state.coefs[j1][accept] = proposed[accept]
    return accept, np.exp(np.minimum(log_alpha, 0.0))


def _raneff_update(state: ChainState, deltas: np.ndarray,
                   log_unifs: np.ndarray, j1: int | None = None):
    """Propose every subject intercept at once; accept per subject."""
    layout = state.layout
    design = layout.design
    current = state.raneffs if j1 is None else state.raneffs[:, j1]
    proposed = current + deltas
    d_eta = deltas[design.subj_idx]
    eta_new = state.eta.copy()
    if j1 is None:
        eta_new[:, state.nonref_cols] += d_eta[:, None]
    else:
        eta_new[:, state.nonref_cols[j1]] += d_eta
    row_ll_new = row_log_likelihoods(layout, eta_new)
    d_ll = np.bincount(design.subj_idx, weights=row_ll_new - state.row_ll,
                       minlength=layout.table.n_subjects)
    variance = state.raneff_variance()
    d_prior = -(proposed ** 2 - current ** 2) / (2.0 * variance)
    log_alpha = d_ll + d_prior
    accept = log_unifs < log_alpha
    if accept.any():
        row_accept = accept[design.subj_idx]
        kept_delta = np.where(row_accept, d_eta, 0.0)
        if j1 is None:
            state.eta[:, state.nonref_cols] += kept_delta[:, None]
            state.raneffs[accept] = proposed[accept]
        else:
            state.eta[:, state.nonref_cols[j1]] += kept_delta
            state.raneffs[accept, j1] = proposed[accept]
        state.row_ll = np.where(row_accept, row_ll_new, state.row_ll)
    return accept, np.exp(np.minimum(log_alpha, 0.0))


def _sd_update(state: ChainState, delta: float, log_unif: float):
    """Log-scale random walk on the hierarchical intercept sd (prior only)."""
    sd_old = state.sd
    sd_new = sd_old * np.exp(delta)
    u = np.asarray(state.raneffs).reshape(-1)
    ssq = float((u * u).sum())
    n = u.size
    def _logp(sd):
        return (-n * np.log(sd) - ssq / (2.0 * sd * sd)
                - sd * sd / (2.0 * state.priors.raneff_scale) + np.log(sd))
    log_alpha = _logp(sd_new) - _logp(sd_old)  # includes the Jacobian log sd
    accept = log_unif < log_alpha
    if accept:
        state.sd = float(sd_new)
    return accept, float(np.exp(min(log_alpha, 0.0)))


def update_block(state: ChainState, block, scale: float, rng):
    """One Metropolis step on a single named block.

    ``block`` is ("fixed", category_index, week_index), ("raneff", subject
    index) or ("raneff", subject index, category_index), or ("raneff_sd",).
    Returns ``(state, accepted)``; the state is updated in place and left
    untouched on rejection.
    """
    if scale <= 0:
        raise ContractError("proposal scale must be positive")
    layout = state.layout
    kind = block[0]
    if kind == "fixed":
        _, j1, t = block
        deltas = np.zeros((layout.n_weeks_eff, layout.n_cols))
        deltas[t] = scale * rng.standard_normal(layout.n_cols)
        log_unifs = np.full(layout.n_weeks_eff, -np.inf)  # no-op elsewhere
        log_unifs[t] = np.log(rng.random())
        accept, _ = _fixed_update(state, j1, deltas, log_unifs)
        return state, bool(accept[t])
    if kind == "raneff":
        i = block[1]
        j1 = block[2] if len(block) > 2 else None
        n_subj = layout.table.n_subjects
        deltas = np.zeros(n_subj)
        deltas[i] = scale * rng.standard_normal()
        log_unifs = np.full(n_subj, -np.inf)
        log_unifs[i] = np.log(rng.random())
        accept, _ = _raneff_update(state, deltas, log_unifs, j1)
        return state, bool(accept[i])
    if kind == "raneff_sd":
        accepted, _ = _sd_update(state, scale * rng.standard_normal(),
                                 np.log(rng.random()))
        return state, bool(accepted)
    raise ContractError(f"unknown block {block!r}")


def block_names(layout: ParameterLayout) -> tuple[str, ...]:
    """Update-block labels in adaptation/bookkeeping order."""
    names = []
    for cat in layout.nonref_categories:
        for week in layout.weeks:
            names.append(f"fixed[{cat}|{week}]")
    if layout.raneff_count:
        if layout.spec.raneff_by_category:
            for subj in layout.table.subjects:
                for cat in layout.nonref_categories:
                    names.append(f"u[{subj}|{cat}]")
        else:
            for subj in layout.table.subjects:
                names.append(f"u[{subj}]")
    if layout.has_raneff_sd:
        names.append("raneff_sd")
    return tuple(names)


class _ChainSampler:
    """Drives one chain: sweeps, adaptation, counters."""

    def __init__(self, state: ChainState, config: SamplerConfig, rng):
        self.state = state
        self.config = config
        self.rng = rng
        layout = state.layout
        self.n_fixed_blocks = layout.n_cats_nonref * layout.n_weeks_eff
        self.n_blocks = (self.n_fixed_blocks + layout.raneff_count
                         + (1 if layout.has_raneff_sd else 0))
        self.log_scales = np.full(self.n_blocks,
                                  np.log(config.adapt.initial_scale))
        self.accept_counts = np.zeros(self.n_blocks)
        self.window_accepts = np.zeros(self.n_blocks)
        self.adapt_step = 0
        self.warned_stuck = False

    def _scales_fixed(self, j1: int) -> np.ndarray:
        teff = self.state.layout.n_weeks_eff
        return np.exp(self.log_scales[j1 * teff:(j1 + 1) * teff])

    def _scales_raneff(self, j1: int | None) -> np.ndarray:
        layout = self.state.layout
        start = self.n_fixed_blocks
        if j1 is None:
            return np.exp(self.log_scales[start:start + layout.raneff_count])
        n_cats = layout.n_cats_nonref
        idx = start + j1 + n_cats * np.arange(layout.table.n_subjects)
        return np.exp(self.log_scales[idx])

    def sweep(self, adapt: bool):
        state = self.state
        layout = state.layout
        rng = self.rng
        teff = layout.n_weeks_eff
        alphas = np.empty(self.n_blocks)
        accepts = np.empty(self.n_blocks, dtype=bool)
        for j1 in range(layout.n_cats_nonref):
            scales = self._scales_fixed(j1)
            deltas = scales[:, None] * rng.standard_normal((teff, layout.n_cols))
            log_unifs = np.log(rng.random(teff))
            accept, alpha = _fixed_update(state, j1, deltas, log_unifs)
            sl = slice(j1 * teff, (j1 + 1) * teff)
            accepts[sl] = accept
            alphas[sl] = alpha
        if layout.raneff_count:
            start = self.n_fixed_blocks
            n_subj = layout.table.n_subjects
            if layout.spec.raneff_by_category:
                n_cats = layout.n_cats_nonref
                for j1 in range(n_cats):
                    scales = self._scales_raneff(j1)
                    deltas = scales * rng.standard_normal(n_subj)
                    log_unifs = np.log(rng.random(n_subj))
                    accept, alpha = _raneff_update(state, deltas, log_unifs, j1)
                    idx = start + j1 + n_cats * np.arange(n_subj)
                    accepts[idx] = accept
                    alphas[idx] = alpha
            else:
                scales = self._scales_raneff(None)
                deltas = scales * rng.standard_normal(n_subj)
                log_unifs = np.log(rng.random(n_subj))
                accept, alpha = _raneff_update(state, deltas, log_unifs)
                accepts[start:start + n_subj] = accept
                alphas[start:start + n_subj] = alpha
        if layout.has_raneff_sd:
            scale = float(np.exp(self.log_scales[-1]))
            accepted, alpha = _sd_update(state, scale * rng.standard_normal(),
                                         float(np.log(rng.random())))
            accepts[-1] = accepted
            alphas[-1] = alpha
        if adapt:
            self._adapt(alphas, accepts)
        else:
            self.accept_counts += accepts

    def _adapt(self, alphas: np.ndarray, accepts: np.ndarray):
        cfg = self.config.adapt
        self.adapt_step += 1
        gamma = self.adapt_step ** (-cfg.decay)
        self.log_scales += gamma * (alphas - cfg.target_acceptance)
        np.clip(self.log_scales, np.log(cfg.min_scale), np.log(cfg.max_scale),
                out=self.log_scales)
        self.window_accepts += accepts
        if self.adapt_step % cfg.window == 0:
            stuck = ((self.window_accepts == 0)
                     & (self.log_scales <= np.log(cfg.min_scale) + 1e-9))
            if stuck.any() and not self.warned_stuck:
                warnings.warn(
                    f"{int(stuck.sum())} block(s) rejected every proposal over "
                    f"an adaptation window with the scale at its minimum",
                    DegenerateChainWarning, stacklevel=2)
                self.warned_stuck = True
            self.window_accepts[:] = 0


def _initial_theta(layout: ParameterLayout, priors: PriorConfig,
                   policy: str, rng) -> np.ndarray:
    dim = layout.total_dim
    if policy == "zeros":
        theta = np.zeros(dim)
    elif policy == "jittered-zeros":
        theta = 0.1 * rng.standard_normal(dim)
    elif policy == "prior-draw":
        theta = np.empty(dim)
        theta[:layout.n_fixed] = (priors.coef_mean
                                  + np.sqrt(priors.coef_scale)
                                  * rng.standard_normal(layout.n_fixed))
        if layout.raneff_count:
            theta[layout.n_fixed:layout.n_fixed + layout.raneff_count] = (
                np.sqrt(priors.raneff_scale) * rng.standard_normal(layout.raneff_count))
    else:  # pragma: no cover - config validates
        raise ContractError(f"unknown init policy {policy!r}")
    if layout.has_raneff_sd:
        # sd must stay positive; start near 1 whatever the policy.
        if policy == "zeros":
            theta[-1] = 1.0
        elif policy == "jittered-zeros":
            theta[-1] = float(np.exp(0.1 * rng.standard_normal()))
        else:
            theta[-1] = float(np.abs(np.sqrt(priors.raneff_scale)
                                     * rng.standard_normal())) or 1.0
    return theta


def _run_chain(layout: ParameterLayout, priors: PriorConfig,
               config: SamplerConfig, chain_index: int,
               seed_seq: np.random.SeedSequence):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    theta0 = _initial_theta(layout, priors, config.init, rng)
    state = ChainState(layout, priors, theta0)
    if not np.isfinite(state.log_posterior()):
        raise SamplerInitError(
            f"chain {chain_index}: initial log-posterior is not finite")
    driver = _ChainSampler(state, config, rng)
    for it in range(1, config.n_burnin + 1):
        driver.sweep(adapt=True)
        if it % _REFRESH_EVERY == 0:
            state.refresh()
    scales_end_burnin = np.exp(driver.log_scales.copy())
    kept = np.empty((config.n_kept, layout.total_dim))
    k = 0
    for it in range(1, config.n_iter + 1):
        driver.sweep(adapt=False)
        if it % _REFRESH_EVERY == 0:
            state.refresh()
        if it % config.thin == 0:
            kept[k] = state.theta()
            k += 1
    acceptance = driver.accept_counts / max(config.n_iter, 1)
    scales_final = np.exp(driver.log_scales.copy())
    return kept, acceptance, scales_end_burnin, scales_final


def run(layout: ParameterLayout, table, priors: PriorConfig,
        config: SamplerConfig, workers: int = 1) -> PosteriorDraws:
    """Sample the posterior with ``config.n_chains`` independent chains.

    Chains may run in parallel (``workers`` > 1); the draws are identical
    either way because every chain owns a seed-derived RNG substream.
    """
    if table is not None and table is not layout.table:
        raise ContractError("table does not match the layout's table")
    children = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    args = [(layout, priors, config, c, children[c])
            for c in range(config.n_chains)]
    if workers > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.n_chains)) as pool:
            results = list(pool.map(_run_chain_star, args))
    else:
        results = [_run_chain(*a) for a in args]
    draws = np.stack([r[0] for r in results])
    if not np.all(np.isfinite(draws)):
        raise ContractError("sampler stored a non-finite draw")
    acceptance = np.stack([r[1] for r in results])
    scales_burn = np.stack([r[2] for r in results])
    scales_final = np.stack([r[3] for r in results])
    return PosteriorDraws(
        layout=layout,
        config=config,
        draws=draws,
        acceptance=acceptance,
        scales_end_burnin=scales_burn,
        scales_final=scales_final,
        block_names=block_names(layout),
        chain_seeds=tuple((config.seed, c) for c in range(config.n_chains)),
    )


def _run_chain_star(args):
    return _run_chain(*args)


# ---------------------------------------------------------------------------
# Convergence diagnostics


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction factor.

    Each chain is halved (the middle element of an odd-length chain is
    dropped), then the usual between/within variance ratio is taken over
    the half-chains.  Returns +inf when chains are internally constant but
    disagree, and NaN when everything is constant.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise ContractError("need at least two chains")
    n = chains.shape[1]
    if n < 4:
        raise ContractError("need at least four draws per chain")
    half = n // 2
    seqs = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    within = seqs.var(axis=1, ddof=1).mean()
    between = half * seqs.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return float("inf") if between > 0.0 else float("nan")
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within))


def rhat(draws: PosteriorDraws, param: int) -> float:
    """Split R-hat for one parameter of a sampler result."""
    return split_rhat(draws.draws[:, :, param])


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    centered = x - x.mean()
    size = 1
    while size < 2 * n:
        size *= 2
    spectrum = np.abs(np.fft.rfft(centered, size)) ** 2
    acov = np.fft.irfft(spectrum)[:n] / n
    return acov


def ess_pooled(chains: np.ndarray) -> float:
    """Effective sample size by initial-positive-sequence summation.

    Per-chain autocovariances are averaged, turned into autocorrelations,
    and summed over consecutive lag pairs while the pairs stay positive.
    Capped at the total draw count; a zero-variance parameter reports the
    total with a degeneracy warning.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 1:
        chains = chains[None, :]
    total = chains.size
    if total < 8:
        raise ContractError("need at least eight draws")
    acov = np.mean([_autocovariance(c) for c in chains], axis=0)
    if acov[0] == 0.0:
        warnings.warn("constant chain: effective sample size is nominal",
                      DegenerateChainWarning, stacklevel=2)
        return float(total)
    rho = acov / acov[0]
    n = chains.shape[1]
    tau = -1.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        m += 1
    if tau <= 0.0:
        return float(total)
    return float(min(total, total / tau))


def ess(draws: PosteriorDraws, param: int) -> float:
    """Effective sample size for one parameter, pooled across chains."""
    return ess_pooled(draws.draws[:, :, param])
