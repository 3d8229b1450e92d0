"""Fixed-size VB-EM and the adaptive birth/death search over the number of components."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lowrank import gaussian_kl
from .mu_step import optimize_mu
from .stiefel import append_orthogonal_column, cayley_retract_search, init_orthonormal, \
    stiefel_objective_grad
from .vb import (MixtureComponent, NoisePosterior, bound_contributions, e_step_components,
                 information_gain, lower_bound, next_prior_precision, prior_precision_ladder,
                 update_component_weights,
                 update_eta_precision, update_tau, update_theta_precisions)

log = logging.getLogger(__name__)


@dataclass
class AdaptiveConfig:
    """Settings of the adaptive mixture search.

    ``d_theta_policy`` is ``"adaptive"`` (grow until the information gain of
    the newest coordinate is at most ``I_max`` for every component, capped by
    ``d_theta_max``) or ``"fixed"`` (grow to exactly ``d_theta_max``).
    """

    S0: int = 4
    delta_S: int = 3
    alpha: float = 10.0
    q_min: float = 1e-3
    d_min: float = 0.01
    L_max: int = 3
    I_max: float = 0.01
    seed: int = 0
    lam0_first: float = 1.0
    d_theta_policy: str = "adaptive"
    d_theta_max: int = 20
    inner_rtol: float = 1e-6
    inner_max_sweeps: int = 100
    mu_rtol: float = 1e-5
    mu_max_steps: int = 50
    tau_rtol: float = 1e-3
    max_outer: int = 20
    stiefel_iters: int = 30
    max_attempts: int = 100
    workers: int = 1
    ladder_sweeps: int = 0

    def __post_init__(self):
        for name in ("S0", "delta_S", "L_max", "d_theta_max", "max_attempts", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("alpha", "q_min", "d_min", "I_max", "lam0_first"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.d_theta_policy not in ("adaptive", "fixed"):
            raise ValueError("d_theta_policy must be 'adaptive' or 'fixed'")


@dataclass
class InferenceProblem:
    """Everything the search needs besides its settings.

    ``tau_init`` sets the starting ``<tau>``; by default it comes from the
    residual of the first component's starting mean.
    """

    model: object
    y_hat: np.ndarray
    prior_factory: Callable[[], object]
    a0: float = 0.0
    b0: float = 0.0
    use_eta: bool = True
    tau_init: float | None = None


@dataclass
class MixtureState:
    components: list
    noise: NoisePosterior | None = None
    trace: list = field(default_factory=list)          # (forward calls, bound)
    lineage: list = field(default_factory=list)
    gain_history: list = field(default_factory=list)   # (d_theta, max_s I)
    next_ident: int = 0

    @property
    def d_theta(self):
        return self.components[0].d_theta if self.components else 0


def component_distance(comp_a, comp_b):
    """``KL(q_a || q_b) / d_psi`` between two component Gaussians."""
    return gaussian_kl(comp_a.mu, comp_a.covariance(), comp_b.mu, comp_b.covariance()) / comp_a.d_psi


def mu_log_priors(components):
    return [c.prior.log_prior_grad(c.mu)[0] for c in components]


def full_bound(state, y_hat):
    return lower_bound(state.components, state.noise, y_hat, mu_log_priors(state.components))


def _w_step(comp, tau, iters):
    if comp.d_theta == comp.d_psi == 1:
        return
    gram = comp.gram()
    lam_inv = 1.0 / comp.lam

    def objective(W):
        AW = gram @ W
        val = -0.5 * tau * float(np.sum(W * AW * lam_inv))
        return val, -tau * AW * lam_inv

    comp.W, _ = cayley_retract_search(comp.W, objective, max_iters=iters)


def inner_loop(state, y_hat, cfg: AdaptiveConfig):
    """Coordinate ascent on q(tau), W, q(Theta|s), q(eta|s), q(s) at fixed means.

    Each sweep updates the noise posterior first and the component weights
    last, so the compact bound evaluated at the end of a sweep is exact and
    non-decreasing.  Returns the list of bound values, one per sweep.
    """
    comps = state.components
    tau = state.noise.mean
    e_step_components(comps, tau, y_hat)
    values = [lower_bound(comps, state.noise, y_hat)]
    for _ in range(cfg.inner_max_sweeps):
        update_tau(comps, y_hat, state.noise)
        tau = state.noise.mean
        for c in comps:
            _w_step(c, tau, cfg.stiefel_iters)
            update_theta_precisions(c, tau)
            update_eta_precision(c, tau)
        update_component_weights(comps, tau, y_hat)
        F = lower_bound(comps, state.noise, y_hat)
        prev = values[-1]
        values.append(F)
        if abs(F - prev) <= cfg.inner_rtol * abs(F):
            break
    return values


def refresh_ladder(components):
    """Recompute the prior rungs ``2 .. d_theta`` from the current posterior precisions.

    Returns ``True`` if any rung changed.
    """
    changed = False
    for c in components:
        ladder = prior_precision_ladder(c.lam0[0], c.lam[:-1])
        if not np.array_equal(ladder, c.lam0):
            changed = True
            c.lam0 = ladder
            if c.use_eta:
                c.lam0_eta = float(np.max(ladder))
    return changed


def _add_coordinate(state, rng):
    # One shared draw, so that components with equal bases stay equal.
    direction = rng.standard_normal(state.components[0].d_psi)
    for c in state.components:
        k = c.d_theta
        new_lam0 = next_prior_precision(c.lam0[0], c.lam[k - 1], c.lam0[k - 1])
        c.W = append_orthogonal_column(c.W, rng, direction)
        c.lam0 = np.append(c.lam0, new_lam0)
        c.lam = np.append(c.lam, new_lam0)
        if c.use_eta:
            c.lam0_eta = float(np.max(c.lam0))


def max_information_gain(components):
    return max(information_gain(c.lam0, c.lam, c.d_theta).value for c in components)


def grow_d_theta(state, y_hat, cfg: AdaptiveConfig, rng):
    """Append reduced coordinates until the newest one is uninformative.

    Before every growth decision the prior ladder is brought up to date with
    the current posterior precisions and the inner loop is re-run, so that the
    information gain is measured against the ladder it defines.  Returns the
    bound values of the inner loops that were run.
    """
    values = []
    cap = min(cfg.d_theta_max, state.components[0].d_psi)
    while True:
        for _ in range(cfg.ladder_sweeps):
            if not refresh_ladder(state.components):
                break
            values.extend(inner_loop(state, y_hat, cfg))
        d = state.d_theta
        gain = max_information_gain(state.components)
        state.gain_history.append((d, gain))
        if d >= cap:
            break
        if cfg.d_theta_policy == "adaptive" and gain <= cfg.I_max:
            break
        _add_coordinate(state, rng)
        values.extend(inner_loop(state, y_hat, cfg))
    return values


def _needs_mu(comp, tau, cfg):
    if comp.tau_at_opt is None or not comp.has_cache:
        return True
    return abs(tau - comp.tau_at_opt) > cfg.tau_rtol * comp.tau_at_opt


def run_fixed_s(state, problem: InferenceProblem, cfg: AdaptiveConfig, rng):
    """Alternate mean updates with the inner VB loop until ``<tau>`` settles.

    A mean is re-optimised only when it has never been optimised or when
    ``<tau>`` moved by more than ``tau_rtol`` since its last optimisation.
    """
    model, y_hat = problem.model, problem.y_hat
    comps = state.components
    if state.noise is None and problem.tau_init is not None:
        a = problem.a0 + 0.5 * model.d_y
        state.noise = NoisePosterior(problem.a0, problem.b0, model.d_y, b=a / problem.tau_init)
    if state.noise is None:
        c0 = comps[0]
        if not c0.has_cache:
            c0.y, c0.G = model.evaluate_with_jacobian(c0.mu)
            c0.mu_calls += 1
        state.noise = NoisePosterior.from_residual(problem.a0, problem.b0, model.d_y,
                                                   c0.misfit(y_hat))
    for _ in range(cfg.max_outer):
        tau = state.noise.mean
        todo = [c for c in comps if _needs_mu(c, tau, cfg)]
        if not todo:
            d_before = state.d_theta
            grow_d_theta(state, y_hat, cfg, rng)
            state.trace.append((model.call_count, full_bound(state, y_hat)))
            if state.d_theta == d_before and not any(_needs_mu(c, state.noise.mean, cfg)
                                                     for c in comps):
                break
            continue
        if cfg.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                list(pool.map(lambda c: optimize_mu(c, model, y_hat, tau, max_steps=cfg.mu_max_steps,
                                                    rtol=cfg.mu_rtol), todo))
        else:
            for c in todo:
                optimize_mu(c, model, y_hat, tau, max_steps=cfg.mu_max_steps, rtol=cfg.mu_rtol)
        vals = inner_loop(state, y_hat, cfg)
        state.trace.append((model.call_count, full_bound(state, y_hat)))
        log.debug("outer step: S=%d d_theta=%d tau=%.6g F=%.8g", len(comps), state.d_theta,
                  state.noise.mean, vals[-1])
    return state


def new_component(mu, W, lam0_first, prior, use_eta, ident):
    W = np.asarray(W, dtype=float)
    lam0 = np.full(W.shape[1], float(lam0_first))
    return MixtureComponent(mu=mu, W=W, lam=lam0.copy(), lam0=lam0, use_eta=use_eta,
                            prior=prior, ident=ident)


def select_parent(components, noise, y_hat, exclude):
    """Index of the component with the smallest weighted bound contribution not in ``exclude``."""
    contrib = bound_contributions(components, noise, y_hat)
    order = np.argsort(contrib, kind="stable")
    for j in order:
        if components[j].ident not in exclude:
            return int(j)
    return None


def propose_birth(parent: MixtureComponent, n, alpha, rng, first_ident):
    """``n`` perturbed copies of ``parent``.

    With a residual term the mean is ``mu + W Theta + alpha * eta``.  Without
    one the amplification acts on the reduced coordinates instead,
    ``mu + alpha * W Theta``.  Draws come from the parent's posterior.
    """
    out = []
    for k in range(n):
        theta = rng.standard_normal(parent.d_theta) / np.sqrt(parent.lam)
        if parent.use_eta:
            eta = rng.standard_normal(parent.d_psi) / np.sqrt(parent.lam_eta)
            mu = parent.mu + parent.W @ theta + alpha * eta
        else:
            mu = parent.mu + alpha * (parent.W @ theta)
        child = MixtureComponent(mu=mu, W=parent.W.copy(), lam=parent.lam.copy(),
                                 lam0=parent.lam0.copy(), lam_eta=parent.lam_eta,
                                 lam0_eta=parent.lam0_eta, use_eta=parent.use_eta,
                                 prior=parent.prior.copy(), ident=first_ident + k)
        out.append(child)
    return out


def apply_deaths(old, new, d_min):
    """Split ``new`` into survivors and casualties of the similarity test.

    Each new component is compared, in index order, with every old component
    and every new component accepted before it.  The first partner closer
    than ``d_min`` kills it.
    """
    accepted, records = [], []
    for c in new:
        killer = None
        for o in list(old) + accepted:
            d = component_distance(o, c)
            if d < d_min:
                killer = (o.ident, float(d))
                break
        if killer is None:
            accepted.append(c)
            records.append({"ident": c.ident, "survived": True})
        else:
            records.append({"ident": c.ident, "survived": False, "killed_by": killer[0],
                            "distance": killer[1]})
    return accepted, records


def prune(state, q_min):
    """Drop components with ``q(s) < q_min`` and renormalise the weights."""
    keep, removed = [], []
    for c in state.components:
        (keep if c.weight >= q_min else removed).append(c)
    if not keep:
        best = max(state.components, key=lambda c: c.weight)
        keep, removed = [best], [c for c in state.components if c is not best]
    total = sum(c.weight for c in keep)
    for c in keep:
        c.weight /= total
    state.components = keep
    return [{"ident": c.ident, "pruned_q": c.weight} for c in removed]


def _component_summary(c):
    return {"ident": c.ident, "weight": c.weight,
            "mu": c.mu.tolist() if c.d_psi <= 4 else None,
            "mu_norm": float(np.linalg.norm(c.mu)), "mu_calls": c.mu_calls}


def _settle(state, problem, cfg, rng):
    inner_loop(state, problem.y_hat, cfg)
    grow_d_theta(state, problem.y_hat, cfg, rng)


def _deaths(state, old, new, problem, cfg, rng):
    """Death test, pruning and settling for the components ``new`` added to ``old``.

    The similarity test is run once after the fixed-S solve and once more
    after the settling sweeps, since bases and precisions keep moving a
    little after the means have converged.
    """
    survivors, records = apply_deaths(old, new, cfg.d_min)
    state.components = list(old) + survivors
    records += prune(state, cfg.q_min)
    _settle(state, problem, cfg, rng)
    new_ids = {c.ident for c in survivors}
    fresh = [c for c in state.components if c.ident in new_ids]
    if fresh:
        rest = [c for c in state.components if c.ident not in new_ids]
        kept, late = apply_deaths(rest, fresh, cfg.d_min)
        if len(kept) < len(fresh):
            records += [dict(r, stage="settled") for r in late if not r["survived"]]
            state.components = rest + kept
            records += prune(state, cfg.q_min)
            _settle(state, problem, cfg, rng)
    return records


def run_adaptive(problem: InferenceProblem, cfg: AdaptiveConfig, initial_means):
    """Adaptive search for the number of mixture components.

    Parameters
    ----------
    problem : InferenceProblem
    cfg : AdaptiveConfig
    initial_means : sequence of ndarray
        Starting means; ``cfg.S0`` of them are used.

    Returns
    -------
    MixtureState
        Surviving components, noise posterior, bound trace and lineage log.
    """
    model, y_hat = problem.model, problem.y_hat
    d_psi = model.d_psi
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    basis_rng = np.random.default_rng(seeds[0])
    birth_rng = np.random.default_rng(seeds[1])
    grow_rng = np.random.default_rng(seeds[2])
    means = list(initial_means)[:cfg.S0]
    if len(means) < cfg.S0:
        raise ValueError("not enough initial means")
    W0 = init_orthonormal(d_psi, 1, int(basis_rng.integers(2**31)))
    comps = [new_component(m, W0.copy(), cfg.lam0_first, problem.prior_factory(), problem.use_eta, k)
             for k, m in enumerate(means)]
    state = MixtureState(components=comps, next_ident=len(comps))
    run_fixed_s(state, problem, cfg, grow_rng)
    records = _deaths(state, [], list(state.components), problem, cfg, grow_rng)
    state.lineage.append({"iter": 0, "parent": None, "L": 0, "records": records,
                          "components": [_component_summary(c) for c in state.components],
                          "calls": model.call_count})
    L = 0
    failed_parents = set()
    attempt = 0
    while L < cfg.L_max and attempt < cfg.max_attempts:
        attempt += 1
        j = select_parent(state.components, state.noise, y_hat, failed_parents)
        if j is None:
            failed_parents.clear()
            j = select_parent(state.components, state.noise, y_hat, failed_parents)
        parent = state.components[j]
        births = propose_birth(parent, cfg.delta_S, cfg.alpha, birth_rng, state.next_ident)
        state.next_ident += len(births)
        old = list(state.components)
        state.components = old + births
        run_fixed_s(state, problem, cfg, grow_rng)
        records = _deaths(state, old, births, problem, cfg, grow_rng)
        alive = {c.ident for c in state.components}
        success = any(b.ident in alive for b in births)
        if success:
            L = 0
            failed_parents.clear()
        else:
            L += 1
            failed_parents.add(parent.ident)
        state.lineage.append({"iter": attempt, "parent": parent.ident, "L": L,
                              "success": success, "records": records,
                              "components": [_component_summary(c) for c in state.components],
                              "calls": model.call_count})
        log.info("attempt %d: parent %d, S=%d, L=%d, calls=%d", attempt, parent.ident,
                 len(state.components), L, model.call_count)
    return state
