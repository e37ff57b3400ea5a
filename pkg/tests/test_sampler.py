"""Metropolis-within-Gibbs kernel, adaptation, diagnostics, determinism."""

import math
import warnings

import numpy as np
import pytest

import hiermnl.sampler as sampler_mod
from hiermnl.data import CategorySet, FactorDef, Observation, ObservationTable
from hiermnl.design import (ModelSpec, PriorConfig, build_layout, intercept,
                            main_effect, preset)
from hiermnl.errors import ContractError, SamplerInitError
from hiermnl.likelihood import eta_matrix, log_posterior, row_log_likelihoods
from hiermnl.sampler import (ChainState, DegenerateChainWarning,
                             SamplerConfig, _ChainSampler, block_names, ess,
                             ess_pooled, rhat, run, split_rhat, update_block)


def tiny_layout(hierarchical=False):
    factors = (FactorDef("sex", ("F", "M")),)
    cats = CategorySet(("a", "b"))
    rows = (Observation("s1", "1", ("F",), (3, 1)),
            Observation("s1", "2", ("F",), (1, 3)),
            Observation("s2", "1", ("M",), (2, 2)),
            Observation("s2", "2", ("M",), (0, 4)))
    table = ObservationTable(("s1", "s2"), ("1", "2"), factors, cats, rows)
    spec = ModelSpec(terms=(intercept(), main_effect("sex")),
                     raneff_hierarchical=hierarchical,
                     priors=PriorConfig(raneff_scale=1.0))
    return build_layout(spec, table)


def prior_only_layout():
    table = ObservationTable((), ("1",), (), CategorySet(("a", "b")), ())
    spec = ModelSpec(terms=(intercept(),), week_stratified=False,
                     random_intercept=False)
    return build_layout(spec, table)


class TestConfig:
    def test_defaults(self):
        cfg = SamplerConfig()
        assert (cfg.n_chains, cfg.n_iter, cfg.n_burnin, cfg.thin) == (
            4, 5000, 1000, 15)
        assert cfg.n_kept == 333
        assert cfg.adapt.target_acceptance == 0.35

    def test_validation(self):
        with pytest.raises(ContractError):
            SamplerConfig(n_chains=0)
        with pytest.raises(ContractError):
            SamplerConfig(thin=0)
        with pytest.raises(ContractError):
            SamplerConfig(n_iter=10, thin=11)
        with pytest.raises(ContractError):
            SamplerConfig(n_burnin=-1)
        with pytest.raises(ContractError):
            SamplerConfig(init="warm")

    def test_kept_count_floors(self):
        assert SamplerConfig(n_iter=10, thin=3).n_kept == 3


class TestChainState:
    def test_caches_match_fresh_computation(self):
        layout = tiny_layout(hierarchical=True)
        rng = np.random.default_rng(0)
        theta = rng.normal(scale=0.4, size=layout.total_dim)
        theta[-1] = 0.8
        state = ChainState(layout, layout.spec.priors, theta)
        np.testing.assert_allclose(state.eta, eta_matrix(layout, theta))
        np.testing.assert_allclose(state.theta(), theta)
        assert state.log_posterior() == pytest.approx(
            log_posterior(layout, theta))

    def test_caches_survive_many_updates(self):
        """Delta bookkeeping must agree with a from-scratch recompute."""
        layout = tiny_layout(hierarchical=True)
        priors = layout.spec.priors
        rng = np.random.default_rng(1)
        state = ChainState(layout, priors, layout.pack(
            np.zeros((1, 2, 2)), np.zeros(2), 1.0))
        blocks = ([("fixed", 0, t) for t in range(2)]
                  + [("raneff", i) for i in range(2)] + [("raneff_sd",)])
        for _ in range(80):
            for block in blocks:
                update_block(state, block, 0.6, rng)
        theta = state.theta()
        np.testing.assert_allclose(state.eta, eta_matrix(layout, theta),
                                   atol=1e-10)
        np.testing.assert_allclose(
            state.row_ll, row_log_likelihoods(layout, eta_matrix(layout, theta)),
            atol=1e-10)


class TestUpdateBlock:
    def test_returns_state_and_flag(self):
        layout = tiny_layout()
        state = ChainState(layout, layout.spec.priors,
                           np.zeros(layout.total_dim))
        out, accepted = update_block(state, ("fixed", 0, 0), 0.5,
                                     np.random.default_rng(2))
        assert out is state
        assert isinstance(accepted, bool)

    def test_only_named_block_moves(self):
        layout = tiny_layout()
        state = ChainState(layout, layout.spec.priors,
                           np.zeros(layout.total_dim))
        rng = np.random.default_rng(3)
        before = state.theta()
        moved = np.zeros(layout.total_dim, dtype=bool)
        for _ in range(20):
            update_block(state, ("fixed", 0, 1), 0.5, rng)
        moved |= state.theta() != before
        # week-1 coefficient block occupies flat slots 2..3
        assert not moved[:2].any() and not moved[4:].any()
        assert moved[2:4].any()

    def test_tiny_proposal_accepts(self):
        layout = tiny_layout()
        state = ChainState(layout, layout.spec.priors,
                           np.zeros(layout.total_dim))
        _, accepted = update_block(state, ("fixed", 0, 0), 1e-12,
                                   np.random.default_rng(4))
        assert accepted

    def test_scale_must_be_positive(self):
        layout = tiny_layout()
        state = ChainState(layout, layout.spec.priors,
                           np.zeros(layout.total_dim))
        with pytest.raises(ContractError):
            update_block(state, ("fixed", 0, 0), 0.0, np.random.default_rng(5))

    def test_unknown_block(self):
        layout = tiny_layout()
        state = ChainState(layout, layout.spec.priors,
                           np.zeros(layout.total_dim))
        with pytest.raises(ContractError):
            update_block(state, ("slope", 0), 0.5, np.random.default_rng(6))

    def test_sd_block_stays_positive(self):
        layout = tiny_layout(hierarchical=True)
        state = ChainState(layout, layout.spec.priors, layout.pack(
            np.zeros((1, 2, 2)), np.zeros(2), 1.0))
        rng = np.random.default_rng(7)
        for _ in range(200):
            update_block(state, ("raneff_sd",), 0.8, rng)
            assert state.sd > 0

    def test_matches_plain_metropolis(self):
        """The cached-delta kernel equals textbook MH on the full posterior.

        Replays the identical proposal and uniform streams through a
        hand-rolled accept step on ``log_posterior`` and requires the very
        same trajectory, Jacobian term included for the log-scale sd walk.
        """
        layout = tiny_layout(hierarchical=True)
        priors = layout.spec.priors
        theta0 = layout.pack(np.full((1, 2, 2), 0.1), np.zeros(2), 1.0)
        state = ChainState(layout, priors, theta0)
        rng_fast = np.random.Generator(np.random.Philox(8))
        rng_slow = np.random.Generator(np.random.Philox(8))
        manual = theta0.copy()
        blocks = ([("fixed", 0, t) for t in range(2)]
                  + [("raneff", i) for i in range(2)] + [("raneff_sd",)])
        scale = 0.7
        n_fixed = layout.n_fixed
        for it in range(40):
            for block in blocks:
                _, fast_acc = update_block(state, block, scale, rng_fast)
                prop = manual.copy()
                if block[0] == "fixed":
                    t = block[2]
                    sl = slice(t * layout.n_cols, (t + 1) * layout.n_cols)
                    prop[sl] = manual[sl] + scale * rng_slow.standard_normal(
                        layout.n_cols)
                    jac = 0.0
                elif block[0] == "raneff":
                    k = n_fixed + block[1]
                    prop[k] = manual[k] + scale * rng_slow.standard_normal()
                    jac = 0.0
                else:
                    prop[-1] = manual[-1] * math.exp(
                        scale * rng_slow.standard_normal())
                    jac = math.log(prop[-1] / manual[-1])
                log_alpha = (log_posterior(layout, prop, priors=priors)
                             - log_posterior(layout, manual, priors=priors)
                             + jac)
                slow_acc = math.log(rng_slow.random()) < log_alpha
                assert fast_acc == slow_acc, (it, block)
                if slow_acc:
                    manual = prop
        np.testing.assert_allclose(state.theta(), manual, atol=1e-9)


class TestBlockNames:
    def test_order_and_content(self):
        layout = tiny_layout(hierarchical=True)
        names = block_names(layout)
        assert names == ("fixed[b|1]", "fixed[b|2]", "u[s1]", "u[s2]",
                         "raneff_sd")

    def test_matches_driver_count(self):
        layout = tiny_layout(hierarchical=True)
        state = ChainState(layout, layout.spec.priors, layout.pack(
            np.zeros((1, 2, 2)), np.zeros(2), 1.0))
        driver = _ChainSampler(state, SamplerConfig(), np.random.default_rng(0))
        assert driver.n_blocks == len(block_names(layout))


class TestRun:
    def test_shapes_and_bookkeeping(self):
        layout = tiny_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=60, n_burnin=30, thin=5, seed=1)
        draws = run(layout, layout.table, layout.spec.priors, cfg)
        assert draws.draws.shape == (2, 12, layout.total_dim)
        assert draws.n_kept == 12
        assert draws.pooled().shape == (24, layout.total_dim)
        assert draws.acceptance.shape == (2, len(draws.block_names))
        assert draws.chain_seeds == ((1, 0), (1, 1))
        assert draws.param_names == layout.param_names

    def test_scales_frozen_after_burnin(self):
        layout = tiny_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=80, n_burnin=40, thin=4, seed=2)
        draws = run(layout, layout.table, layout.spec.priors, cfg)
        np.testing.assert_array_equal(draws.scales_end_burnin,
                                      draws.scales_final)

    def test_deterministic_same_seed(self):
        layout = tiny_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=50, n_burnin=20, thin=5, seed=3)
        a = run(layout, layout.table, layout.spec.priors, cfg)
        b = run(layout, layout.table, layout.spec.priors, cfg)
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.scales_final, b.scales_final)

    def test_seed_changes_draws(self):
        layout = tiny_layout()
        base = dict(n_chains=1, n_iter=50, n_burnin=20, thin=5)
        a = run(layout, layout.table, layout.spec.priors,
                SamplerConfig(seed=1, **base))
        b = run(layout, layout.table, layout.spec.priors,
                SamplerConfig(seed=2, **base))
        assert not np.array_equal(a.draws, b.draws)

    def test_workers_do_not_change_draws(self):
        layout = prior_only_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=200, n_burnin=50, thin=4, seed=4)
        serial = run(layout, layout.table, layout.spec.priors, cfg, workers=1)
        parallel = run(layout, layout.table, layout.spec.priors, cfg, workers=2)
        np.testing.assert_array_equal(serial.draws, parallel.draws)

    def test_table_identity_guard(self):
        layout = tiny_layout()
        other = ObservationTable((), ("1",), (), CategorySet(("a", "b")), ())
        with pytest.raises(ContractError):
            run(layout, other, layout.spec.priors, SamplerConfig(
                n_chains=1, n_iter=10, n_burnin=0, thin=1))

    @pytest.mark.parametrize("init", ["zeros", "jittered-zeros", "prior-draw"])
    def test_init_policies_run(self, init):
        layout = tiny_layout(hierarchical=True)
        cfg = SamplerConfig(n_chains=1, n_iter=20, n_burnin=10, thin=2,
                            seed=5, init=init)
        draws = run(layout, layout.table, layout.spec.priors, cfg)
        assert np.isfinite(draws.draws).all()
        # hierarchical sd stays positive whatever the starting policy
        assert (draws.draws[:, :, -1] > 0).all()

    def test_nonfinite_start_raises(self, monkeypatch):
        layout = tiny_layout(hierarchical=True)

        def bad_init(layout_, priors_, policy_, rng_):
            theta = np.zeros(layout_.total_dim)
            theta[-1] = -1.0  # impossible sd, prior density zero
            return theta

        monkeypatch.setattr(sampler_mod, "_initial_theta", bad_init)
        with pytest.raises(SamplerInitError, match="chain 0"):
            run(layout, layout.table, layout.spec.priors,
                SamplerConfig(n_chains=1, n_iter=10, n_burnin=0, thin=1))


class TestPriorRecovery:
    def test_prior_only_target(self):
        """With no data the sampler must reproduce its own prior."""
        layout = prior_only_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=4000, n_burnin=400, thin=4,
                            seed=7)
        draws = run(layout, layout.table, layout.spec.priors, cfg)
        x = draws.pooled()[:, 0]
        assert abs(x.mean()) < 1.5
        assert 80.0 < x.var() < 120.0

    def test_adaptation_reaches_target_band(self):
        layout = prior_only_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=2000, n_burnin=400, thin=4,
                            seed=8)
        draws = run(layout, layout.table, layout.spec.priors, cfg)
        mean_acc = draws.acceptance.mean()
        assert 0.2 < mean_acc < 0.5


class TestAdaptation:
    def test_stuck_block_warns_once(self):
        layout = tiny_layout()
        state = ChainState(layout, layout.spec.priors,
                           np.zeros(layout.total_dim))
        cfg = SamplerConfig()
        driver = _ChainSampler(state, cfg, np.random.default_rng(0))
        driver.log_scales[:] = np.log(cfg.adapt.min_scale)
        nb = driver.n_blocks
        with pytest.warns(DegenerateChainWarning, match="rejected every"):
            for _ in range(cfg.adapt.window):
                driver._adapt(np.zeros(nb), np.zeros(nb, dtype=bool))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            for _ in range(cfg.adapt.window):  # warns only once
                driver._adapt(np.zeros(nb), np.zeros(nb, dtype=bool))

    def test_scales_respond_to_acceptance(self):
        layout = tiny_layout()
        state = ChainState(layout, layout.spec.priors,
                           np.zeros(layout.total_dim))
        driver = _ChainSampler(state, SamplerConfig(), np.random.default_rng(0))
        before = driver.log_scales.copy()
        driver._adapt(np.ones(driver.n_blocks),
                      np.ones(driver.n_blocks, dtype=bool))
        assert (driver.log_scales > before).all()
        driver._adapt(np.zeros(driver.n_blocks),
                      np.zeros(driver.n_blocks, dtype=bool))


class TestSplitRhat:
    def test_hand_value(self):
        chains = np.array([[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]])
        # half-chains (1,2),(3,4),(1,2),(3,4): W = 1/2, var-plus = 19/12
        assert split_rhat(chains) == pytest.approx(math.sqrt(19 / 6),
                                                   rel=1e-12)

    def test_odd_length_drops_middle(self):
        with_mid = np.array([[1.0, 2.0, 99.0, 3.0, 4.0],
                             [1.0, 2.0, -99.0, 3.0, 4.0]])
        without = np.array([[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]])
        assert split_rhat(with_mid) == pytest.approx(split_rhat(without))

    def test_constant_disagreeing_chains(self):
        assert split_rhat(np.array([[1.0] * 4, [2.0] * 4])) == math.inf

    def test_all_constant_is_nan(self):
        assert math.isnan(split_rhat(np.full((2, 4), 3.0)))

    def test_well_mixed_near_one(self):
        rng = np.random.default_rng(5)
        r = split_rhat(rng.standard_normal((4, 5000)))
        assert abs(r - 1.0) < 0.01

    def test_separated_chains_flagged(self):
        rng = np.random.default_rng(6)
        chains = rng.standard_normal((2, 1000))
        chains[1] += 5.0
        assert split_rhat(chains) > 2.0

    def test_contracts(self):
        with pytest.raises(ContractError):
            split_rhat(np.zeros((1, 10)))
        with pytest.raises(ContractError):
            split_rhat(np.zeros((2, 3)))

    def test_accessor(self):
        layout = prior_only_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=100, n_burnin=20, thin=2,
                            seed=9)
        draws = run(layout, layout.table, layout.spec.priors, cfg)
        assert rhat(draws, 0) == split_rhat(draws.draws[:, :, 0])


class TestEss:
    def test_iid_near_total(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 2000))
        assert ess_pooled(x) == pytest.approx(8000, rel=0.2)

    def test_autocorrelated_shrinks(self):
        rng = np.random.default_rng(2)
        rho = 0.9
        z = rng.standard_normal((4, 10000))
        x = np.empty_like(z)
        x[:, 0] = z[:, 0] / math.sqrt(1 - rho * rho)
        for t in range(1, z.shape[1]):
            x[:, t] = rho * x[:, t - 1] + z[:, t]
        expected = x.size * (1 - rho) / (1 + rho)
        assert ess_pooled(x) == pytest.approx(expected, rel=0.3)

    def test_capped_at_total(self):
        rng = np.random.default_rng(3)
        # strongly antithetic series would over-count without the cap
        x = rng.standard_normal(512)
        x[1::2] = -x[0::2]
        assert ess_pooled(x) <= x.size

    def test_constant_chain_warns(self):
        with pytest.warns(DegenerateChainWarning):
            assert ess_pooled(np.ones((2, 100))) == 200.0

    def test_too_short(self):
        with pytest.raises(ContractError):
            ess_pooled(np.zeros(7))

    def test_accessor(self):
        layout = prior_only_layout()
        cfg = SamplerConfig(n_chains=2, n_iter=100, n_burnin=20, thin=2,
                            seed=10)
        draws = run(layout, layout.table, layout.spec.priors, cfg)
        assert ess(draws, 0) == ess_pooled(draws.draws[:, :, 0])
