import copy

import numpy as np
import pytest

from conftest import random_orthonormal
from vbmog.adaptive import (AdaptiveConfig, InferenceProblem, MixtureState, apply_deaths,
                            component_distance, new_component, propose_birth, prune,
                            run_adaptive, run_fixed_s)
from vbmog.config import load_config
from vbmog.prior import GaussianMuPrior
from vbmog.runner import build_setup, seed_streams, stream_int
from vbmog.stiefel import orthogonality_error
from vbmog.toy import ToyModel, toy_roots
from vbmog.vb import update_theta_precisions, update_eta_precision


def _comp(rng, ident, d_psi=8, d_theta=2, mu=None):
    c = new_component(rng.standard_normal(d_psi) if mu is None else mu,
                      random_orthonormal(rng, d_psi, d_theta), 1.0, GaussianMuPrior(d_psi),
                      True, ident)
    c.G = rng.standard_normal((5, d_psi))
    update_theta_precisions(c, 2.0)
    update_eta_precision(c, 2.0)
    return c


def _toy_problem():
    return InferenceProblem(ToyModel(), np.array([0.45]), lambda: GaussianMuPrior(1, 1e-10),
                            a0=48.0, b0=0.5, use_eta=False)


class TestDistance:
    def test_duplicate_is_zero(self, rng):
        c = _comp(rng, 0)
        assert component_distance(c, copy.deepcopy(c)) == pytest.approx(0.0, abs=1e-12)

    def test_distance_grows_with_mean_offset(self, rng):
        c = _comp(rng, 0)
        far = copy.deepcopy(c)
        far.mu = c.mu + 1.0
        near = copy.deepcopy(c)
        near.mu = c.mu + 1e-3
        assert component_distance(c, near) < component_distance(c, far)


class TestDeaths:
    def test_index_order_and_new_pairs(self, rng):
        a, b = _comp(rng, 0), _comp(rng, 1)
        dup = copy.deepcopy(a)
        dup.ident = 2
        survivors, records = apply_deaths([], [a, dup, b], 0.01)
        assert [c.ident for c in survivors] == [0, 1]
        assert records[1] == {"ident": 2, "survived": False, "killed_by": 0,
                              "distance": pytest.approx(0.0, abs=1e-12)}

    def test_old_components_win(self, rng):
        old = _comp(rng, 0)
        dup = copy.deepcopy(old)
        dup.ident = 5
        survivors, records = apply_deaths([old], [dup], 0.01)
        assert survivors == [] and records[0]["killed_by"] == 0

    def test_prune_renormalises(self, rng):
        comps = [_comp(rng, k) for k in range(3)]
        for c, q in zip(comps, [0.6, 0.3995, 0.0005]):
            c.weight = q
        state = MixtureState(components=comps)
        removed = prune(state, 1e-3)
        assert [r["ident"] for r in removed] == [2]
        assert sum(c.weight for c in state.components) == pytest.approx(1.0, abs=1e-14)

    def test_prune_keeps_best_when_all_small(self, rng):
        comps = [_comp(rng, k) for k in range(2)]
        comps[0].weight, comps[1].weight = 1e-5, 2e-5
        state = MixtureState(components=comps)
        prune(state, 1e-3)
        assert [c.ident for c in state.components] == [1]
        assert state.components[0].weight == 1.0


class TestBirth:
    def test_without_amplified_noise_stays_in_span(self, rng):
        parent = _comp(rng, 0)
        parent.lam_eta = np.inf       # suppress the residual draw
        for child in propose_birth(parent, 3, 0.0, rng, 10):
            delta = child.mu - parent.mu
            np.testing.assert_allclose(parent.W @ (parent.W.T @ delta), delta, atol=1e-12)

    def test_seeded(self, rng):
        parent = _comp(rng, 0)
        a = propose_birth(parent, 3, 10.0, np.random.default_rng(1), 10)
        b = propose_birth(parent, 3, 10.0, np.random.default_rng(1), 10)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.mu, y.mu)
        assert [c.ident for c in a] == [10, 11, 12]

    def test_children_are_independent_copies(self, rng):
        parent = _comp(rng, 0)
        child = propose_birth(parent, 1, 1.0, rng, 1)[0]
        child.W[0, 0] += 1.0
        child.prior.prec = 5.0
        assert parent.W[0, 0] != child.W[0, 0] and parent.prior.prec != 5.0


class TestFixedS:
    def _state(self, starts):
        cfg = AdaptiveConfig(d_theta_max=1)
        comps = [new_component(np.array([m]), np.eye(1), 1.0, GaussianMuPrior(1, 1e-10), False, k)
                 for k, m in enumerate(starts)]
        return MixtureState(components=comps), cfg

    def test_toy_converges_to_roots(self):
        state, cfg = self._state([2.0, -0.2, -2.5])
        problem = _toy_problem()
        run_fixed_s(state, problem, cfg, np.random.default_rng(0))
        np.testing.assert_allclose(sorted(c.mu[0] for c in state.components),
                                   sorted(toy_roots(0.45)), atol=1e-3)
        assert sum(c.weight for c in state.components) == pytest.approx(1.0)

    def test_converged_state_needs_no_mean_updates(self):
        state, cfg = self._state([2.0, -0.2])
        problem = _toy_problem()
        run_fixed_s(state, problem, cfg, np.random.default_rng(0))
        calls = problem.model.call_count
        run_fixed_s(state, problem, cfg, np.random.default_rng(0))
        assert problem.model.call_count == calls


@pytest.fixture(scope="module")
def toy_state():
    cfg = load_config("toy")
    seeds = seed_streams(cfg.seed)
    setup = build_setup(cfg, seeds)
    return run_adaptive(setup.problem, cfg.adaptive_config(stream_int(seeds["adaptive"])),
                        setup.initial_means)


class TestAdaptive:
    def test_lineage_distances(self, toy_state):
        killed = [r["distance"] for e in toy_state.lineage for r in e["records"]
                  if r.get("survived") is False]
        assert killed and max(killed) < 1e-8
        comps = toy_state.components
        kept = [component_distance(a, b) for a in comps for b in comps if a is not b]
        assert min(kept) > 10.0

    def test_terminates_with_three_modes(self, toy_state):
        assert len(toy_state.components) == 3
        assert sum(c.weight for c in toy_state.components) == pytest.approx(1.0, abs=1e-12)
        assert toy_state.lineage[0]["parent"] is None
        assert all(e["parent"] is not None for e in toy_state.lineage[1:])

    def test_invariants_on_small_fem(self):
        cfg = load_config("fem_reduced").model_copy(deep=True)
        cfg.fem.nx = cfg.fem.ny = 4
        cfg.fem.inclusions = []
        cfg.adaptive.L_max = 1
        cfg.adaptive.d_theta_max = 3
        seeds = seed_streams(5)
        setup = build_setup(cfg, seeds)
        state = run_adaptive(setup.problem, cfg.adaptive_config(stream_int(seeds["adaptive"])),
                             setup.initial_means)
        assert sum(c.weight for c in state.components) == pytest.approx(1.0, abs=1e-12)
        for c in state.components:
            assert orthogonality_error(c.W) < 1e-10
            assert np.all(c.lam >= c.lam0)
            assert c.lam_eta >= c.lam0_eta
        F = [f for _, f in state.trace]
        assert np.all(np.isfinite(F))


class TestConfig:
    def test_rejects_bad_settings(self):
        with pytest.raises(ValueError):
            AdaptiveConfig(S0=0)
        with pytest.raises(ValueError):
            AdaptiveConfig(d_min=0.0)
        with pytest.raises(ValueError):
            AdaptiveConfig(d_theta_policy="greedy")
