"""End-to-end pipeline: generate data, run the adaptive search, validate, persist, report.

Every random draw flows from one master seed, split into the named streams
``adaptive`` (bases, births, new coordinates), ``init`` (starting means),
``noise`` (synthetic data), ``is`` (importance sampling) and ``mcmc``.

Artifacts are JSON and CSV files written atomically (temporary file plus
rename).  Wall-clock timings go to ``timing.json`` only, so all other files
are byte-identical for identical configuration and seed.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import gamma as gamma_dist

from .adaptive import InferenceProblem, MixtureState, run_adaptive
from .config import ConfigError, RunConfig, parse_config
from .fem.mesh import Mesh
from .fem.problem import FemModel, Inclusion, generate_synthetic, inclusion_mask, \
    log_modulus_field
from .posterior import MixturePosterior, credible_cut, marginal_density, mixture_moments
from .prior import GaussianMuPrior, JumpPrior
from .toy import ToyModel, toy_log_posterior, toy_posterior_grid
from .validation import importance_validate, psi_space_density, rw_mcmc_baseline, \
    marginal_tau_log_posterior

log = logging.getLogger(__name__)

STREAMS = ("adaptive", "init", "noise", "is", "mcmc")
WORKERS_ENV = "VBMOG_WORKERS"


class ArtifactError(RuntimeError):
    """Artifacts are missing, unreadable or inconsistent."""


def seed_streams(master_seed):
    """Named child seed sequences of the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(len(STREAMS))
    return dict(zip(STREAMS, children))


def stream_int(seq):
    return int(seq.generate_state(1)[0])


# ----------------------------------------------------------------------------- setup

@dataclass
class Setup:
    model: object
    y_hat: np.ndarray
    problem: InferenceProblem
    initial_means: list
    psi_true: np.ndarray | None
    mesh: Mesh | None
    data_meta: dict


def _inclusions(cfg: RunConfig):
    return [Inclusion(i.shape, tuple(i.center), tuple(i.radii), i.modulus) for i in cfg.fem.inclusions]


def build_model(cfg: RunConfig):
    if cfg.model == "toy":
        return ToyModel(), None
    f = cfg.fem
    mesh = Mesh(f.nx, f.ny, f.lx, f.ly)
    return FemModel(mesh, nu=f.nu, traction=f.traction, half=f.half, newton_tol=f.newton_tol), mesh


def prior_factory(cfg: RunConfig):
    p = cfg.prior
    if cfg.model == "toy":
        return lambda: GaussianMuPrior(1, p.mu_precision)
    f = cfg.fem
    return lambda: JumpPrior.for_grid(f.nx, f.ny, a_phi=p.a_phi, b_phi=p.b_phi, b_floor=p.b_floor)


def homogeneous_fit(model, y_hat, start, steps=10):
    """Gauss-Newton fit of a spatially constant log-modulus; ``steps`` forward calls."""
    c = float(start)
    ones = np.ones(model.d_psi)
    for _ in range(steps):
        y, G = model.evaluate_with_jacobian(c * ones)
        g = G @ ones
        c += float(g @ (y_hat - y)) / float(g @ g)
    return c


def build_setup(cfg: RunConfig, seeds) -> Setup:
    model, mesh = build_model(cfg)
    init_rng = np.random.default_rng(seeds["init"])
    S0 = cfg.adaptive.S0
    if cfg.model == "toy":
        y_hat = np.array([cfg.toy.y_hat])
        means = [cfg.toy.init_std * init_rng.standard_normal(1) for _ in range(S0)]
        problem = InferenceProblem(model, y_hat, prior_factory(cfg), a0=cfg.prior.a0,
                                   b0=cfg.prior.b0, use_eta=False)
        return Setup(model, y_hat, problem, means, None, None, {})
    f = cfg.fem
    incs = _inclusions(cfg)
    fine = mesh.refine(f.refine, f.refine) if f.refine > 1 else mesh
    psi_fine = log_modulus_field(fine, f.background, incs, membership_mesh=mesh)
    psi_true = log_modulus_field(mesh, f.background, incs)
    obs, _ = generate_synthetic(fine, psi_fine, f.snr, seeds["noise"], mesh, nu=f.nu,
                                traction=f.traction, half=f.half)
    y_hat = obs.values
    tau_init = None
    if f.init_snr is not None:
        tau_init = (f.init_snr / np.sqrt(np.mean(y_hat**2))) ** 2
    problem = InferenceProblem(model, y_hat, prior_factory(cfg), a0=cfg.prior.a0, b0=cfg.prior.b0,
                               use_eta=True, tau_init=tau_init)
    c = homogeneous_fit(model, y_hat, f.init_log_modulus)
    means = [c + f.init_perturbation * init_rng.standard_normal(model.d_psi) for _ in range(S0)]
    meta = dict(obs.metadata, true_noise_precision=obs.true_noise_precision,
                homogeneous_log_modulus=c)
    return Setup(model, y_hat, problem, means, psi_true, mesh, meta)


# ----------------------------------------------------------------------------- persistence

def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    _atomic_write(Path(path), json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(Path(path), buf.getvalue())


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ArtifactError(f"missing artifact {path}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"corrupt artifact {path}: {exc}") from exc


def posterior_payload(state: MixtureState):
    post = MixturePosterior.from_components(state.components)
    n = state.noise
    return post, {"posterior": post.to_dict(),
                  "noise": {"a0": n.a0, "b0": n.b0, "d_y": n.d_y, "b": n.b},
                  "idents": [c.ident for c in state.components],
                  "lam0_eta": [c.lam0_eta for c in state.components]}


@dataclass
class Artifacts:
    path: Path
    config: RunConfig
    master_seed: int
    posterior: MixturePosterior
    noise: dict
    y_hat: np.ndarray
    psi_true: np.ndarray | None
    summary: dict


def load_artifacts(path) -> Artifacts:
    path = Path(path)
    cfg_doc = read_json(path / "config.json")
    try:
        cfg = parse_config(cfg_doc["config"])
        seed = int(cfg_doc["master_seed"])
        pdoc = read_json(path / "posterior.json")
        post = MixturePosterior.from_dict(pdoc["posterior"])
        data = read_json(path / "data.json")
        y_hat = np.asarray(data["y_hat"], dtype=float)
        psi_true = None if data["psi_true"] is None else np.asarray(data["psi_true"])
        summary = read_json(path / "summary.json")
        noise = pdoc["noise"]
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise ArtifactError(f"inconsistent artifacts in {path}: {exc}") from exc
    return Artifacts(path, cfg, seed, post, noise, y_hat, psi_true, summary)


# ----------------------------------------------------------------------------- pipeline

@dataclass
class RunResult:
    path: Path
    state: MixtureState
    posterior: MixturePosterior
    summary: dict
    validation: dict | None
    runtime: float


def run_pipeline(cfg: RunConfig, out_dir=None, seed=None, validate=True) -> RunResult:
    """Generate data, run the adaptive search, write artifacts and optionally validate."""
    workers = os.environ.get(WORKERS_ENV)
    if workers:
        try:
            cfg = cfg.model_copy(update={"workers": max(1, int(workers))})
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
    master = cfg.seed if seed is None else int(seed)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    seeds = seed_streams(master)
    t0 = time.perf_counter()
    setup = build_setup(cfg, seeds)
    acfg = cfg.adaptive_config(stream_int(seeds["adaptive"]))
    state = run_adaptive(setup.problem, acfg, setup.initial_means)
    runtime = time.perf_counter() - t0
    post, pdoc = posterior_payload(state)
    summary = {
        "model": cfg.model, "S": post.n_components, "d_theta": state.d_theta,
        "weights": post.weights.tolist(), "forward_calls": setup.model.call_count,
        "tau_mean": state.noise.mean, "tau_true": setup.data_meta.get("true_noise_precision"),
        "mu_calls": [c.mu_calls for c in state.components],
        "final_gain": state.gain_history[-1][1] if state.gain_history else None,
        "means": post.means[:, 0].tolist() if post.d_psi == 1 else None,
    }
    write_json(out / "config.json", {"config": cfg.model_dump(mode="json"), "master_seed": master})
    write_json(out / "data.json", {"y_hat": setup.y_hat.tolist(),
                                   "psi_true": None if setup.psi_true is None
                                   else setup.psi_true.tolist(),
                                   "metadata": setup.data_meta})
    write_json(out / "posterior.json", pdoc)
    write_json(out / "lineage.json", state.lineage)
    write_json(out / "summary.json", summary)
    write_csv(out / "trace.csv", ["forward_calls", "bound"], state.trace)
    write_csv(out / "gain.csv", ["step", "d_theta", "max_gain"],
              [(k, d, g) for k, (d, g) in enumerate(state.gain_history)])
    mm = mixture_moments(post)
    if setup.mesh is not None:
        cents = setup.mesh.centroids
        write_csv(out / "moments.csv", ["element", "cx", "cy", "mean", "std", "truth"],
                  [(e, cents[e, 0], cents[e, 1], mm.mean[e], np.sqrt(mm.variance[e]),
                    setup.psi_true[e]) for e in range(post.d_psi)])
    else:
        write_csv(out / "moments.csv", ["index", "mean", "std"],
                  [(i, mm.mean[i], np.sqrt(mm.variance[i])) for i in range(post.d_psi)])
    write_json(out / "timing.json", {"run_seconds": runtime})
    validation = None
    if validate and cfg.validation.M > 0:
        validation = validate_artifacts(out, cfg.validation.M, model=setup.model)
    return RunResult(out, state, post, summary, validation, runtime)


def _quantile_elements(art: Artifacts):
    if art.config.model == "toy":
        return [0]
    f = art.config.fem
    n = min(f.nx, f.ny)
    return [j * f.nx + j for j in range(n)]


def validate_artifacts(path, M, seed=None, model=None):
    """Importance-sampling check of a stored posterior; writes ``validation.json``."""
    art = load_artifacts(path)
    cfg = art.config
    seeds = seed_streams(art.master_seed if seed is None else seed)
    if model is None:
        model, _ = build_model(cfg)
    calls0 = model.call_count
    t0 = time.perf_counter()
    res = importance_validate(art.posterior, model, art.y_hat, art.noise["a0"], art.noise["b0"],
                              M, seeds["is"], quantile_indices=_quantile_elements(art))
    report = res.summary()
    report.update({"vb_forward_calls": art.summary["forward_calls"],
                   "corrected_quantiles": {str(k): v for k, v in res.quantiles.items()},
                   "seconds": time.perf_counter() - t0})
    if cfg.model == "toy":
        report["corrected_mean"] = res.mean.tolist()
        report["corrected_variance"] = res.variance.tolist()
        if cfg.validation.mcmc_steps > 0:
            report["mcmc"] = run_mcmc(art, model, cfg.validation.mcmc_steps,
                                      cfg.validation.mcmc_std, seeds["mcmc"])
    report["forward_calls"] = model.call_count - calls0
    write_json(Path(path) / "validation.json", report)
    return report


def run_mcmc(art: Artifacts, model, n_steps, std, seed):
    cfg = art.config
    prior = prior_factory(cfg)()
    target = marginal_tau_log_posterior(model, art.y_hat, art.noise["a0"], art.noise["b0"], prior)
    x0 = art.posterior.means[int(np.argmax(art.posterior.weights))]
    res = rw_mcmc_baseline(target, x0, n_steps, std, seed)
    return {"steps": n_steps, "proposal_std": std, "acceptance": res.acceptance,
            "ess": res.ess.value, "degenerate": res.ess.degenerate,
            "forward_calls": res.forward_calls}


# ----------------------------------------------------------------------------- report

QUANTILES = (0.01, 0.5, 0.99)


def _boundary_path(mesh: Mesh, mask):
    """Elements inside an inclusion that touch the outside, ordered by angle."""
    nx, ny = mesh.nx, mesh.ny
    m = mask.reshape(ny, nx)
    edge = np.zeros_like(m)
    edge[:, 1:] |= m[:, 1:] != m[:, :-1]
    edge[:, :-1] |= m[:, 1:] != m[:, :-1]
    edge[1:, :] |= m[1:, :] != m[:-1, :]
    edge[:-1, :] |= m[1:, :] != m[:-1, :]
    ids = np.flatnonzero((edge & m).ravel())
    if ids.size == 0:
        return ids
    c = mesh.centroids[ids]
    centre = mesh.centroids[mask].mean(axis=0)
    ang = np.arctan2(c[:, 1] - centre[1], c[:, 0] - centre[0])
    return ids[np.argsort(ang, kind="stable")]


def _quantile_rows(post, ids, mesh, truth):
    q = credible_cut(post, ids, QUANTILES)
    mm = mixture_moments(post)
    rows = []
    for r, e in enumerate(ids):
        cx, cy = (mesh.centroids[e] if mesh is not None else (0.0, 0.0))
        rows.append((int(e), float(cx), float(cy), *q[r], mm.mean[e],
                     float("nan") if truth is None else truth[e]))
    return rows


def emit_report(path):
    """Plot-ready CSV bundle under ``<artifacts>/report``."""
    art = load_artifacts(path)
    cfg, post = art.config, art.posterior
    out = Path(path) / "report"
    trace = (Path(path) / "trace.csv")
    if not trace.exists():
        raise ArtifactError(f"missing artifact {trace}")
    _atomic_write(out / "f_trace.csv", trace.read_text())
    mm = mixture_moments(post)
    qhead = ["element", "cx", "cy", "q01", "q50", "q99", "mean", "truth"]
    n = art.noise
    a = n["a0"] + 0.5 * n["d_y"]
    tau = gamma_dist(a, scale=1.0 / n["b"])
    tgrid = np.linspace(max(tau.mean() - 6 * tau.std(), 0.0), tau.mean() + 6 * tau.std(), 401)
    write_csv(out / "tau_density.csv", ["tau", "density"], zip(tgrid, tau.pdf(tgrid)))
    if cfg.model == "toy":
        write_csv(out / "mean_std.csv", ["index", "mean", "std"],
                  [(0, mm.mean[0], np.sqrt(mm.variance[0]))])
        write_csv(out / "diagonal_cut.csv", qhead, _quantile_rows(post, [0], None, None))
        write_csv(out / "boundary_path.csv", qhead, [])
        x, exact = toy_density_oracle(art)
        var = post.component_variances()[:, 0]
        comp = [post.weights[s] * np.exp(-0.5 * (x - post.means[s, 0]) ** 2 / var[s])
                / np.sqrt(2 * np.pi * var[s]) for s in range(post.n_components)]
        write_csv(out / "marginal_densities.csv",
                  ["element", "x", "mixture", "exact", *[f"component_{s}" for s in range(len(comp))]],
                  [(0, x[i], marginal_density(post, 0, x[i]), exact[i], *[c[i] for c in comp])
                   for i in range(x.size)])
        return out
    f = cfg.fem
    mesh = Mesh(f.nx, f.ny, f.lx, f.ly)
    cents = mesh.centroids
    write_csv(out / "mean_std.csv", ["element", "cx", "cy", "mean", "std", "truth"],
              [(e, cents[e, 0], cents[e, 1], mm.mean[e], np.sqrt(mm.variance[e]), art.psi_true[e])
               for e in range(post.d_psi)])
    write_csv(out / "diagonal_cut.csv", qhead,
              _quantile_rows(post, _quantile_elements(art), mesh, art.psi_true))
    mask = inclusion_mask(mesh, _inclusions(cfg))
    path_ids = _boundary_path(mesh, mask)
    write_csv(out / "boundary_path.csv", qhead, _quantile_rows(post, path_ids, mesh, art.psi_true))
    picks = list(path_ids[:: max(1, path_ids.size // 3)][:3]) if path_ids.size else []
    far = int(np.argmax(np.linalg.norm(cents - cents[mask].mean(axis=0), axis=1))) if mask.any() else 0
    picks.append(far)
    var = post.component_variances()
    rows = []
    for e in picks:
        sd = np.sqrt(var[:, e])
        x = np.linspace(np.min(post.means[:, e] - 6 * sd), np.max(post.means[:, e] + 6 * sd), 201)
        dens = marginal_density(post, e, x)
        rows.extend((int(e), x[i], dens[i]) for i in range(x.size))
    write_csv(out / "marginal_densities.csv", ["element", "x", "mixture"], rows)
    return out


def toy_density_oracle(art: Artifacts, n_points=None):
    """Quadrature posterior of the toy model on a grid covering all modes."""
    cfg = art.config
    n_points = n_points or cfg.validation.density_grid
    return toy_posterior_grid(float(art.y_hat[0]), cfg.prior.mu_precision,
                              (cfg.prior.a0, cfg.prior.b0), (-3.5, 2.5, n_points))


def toy_is_density(art: Artifacts, M, seed, n_points=None):
    """Importance-sampling estimate of the normalised toy posterior on the oracle grid.

    The exact unnormalised density is divided by its normalising constant,
    estimated by importance sampling with the mixture as proposal.
    """
    cfg = art.config
    y_hat = float(art.y_hat[0])
    x, _ = toy_density_oracle(art, n_points)

    def logp(psi):
        return toy_log_posterior(np.asarray(psi)[:, 0], y_hat, cfg.prior.mu_precision,
                                 cfg.prior.a0, cfg.prior.b0)
    dens, log_z, ess_psi = psi_space_density(art.posterior, logp, x[:, None], M, seed)
    return x, dens, ess_psi


# ----------------------------------------------------------------------------- checks

def check_artifacts(path):
    """Invariant suite on stored artifacts; returns ``[(name, passed, detail), ...]``."""
    art = load_artifacts(path)
    post = art.posterior
    results = []
    s = float(post.weights.sum())
    results.append(("weights_sum_to_one", abs(s - 1.0) <= 1e-10, f"sum={s!r}"))
    orth = max(float(np.max(np.abs(W.T @ W - np.eye(W.shape[1])))) for W in post.bases)
    results.append(("orthonormal_bases", orth <= 1e-10, f"max|W^T W - I|={orth:.3e}"))
    gap = float(np.min(post.precisions - post.prior_precisions))
    results.append(("precision_above_prior", gap >= 0.0, f"min(lam - lam0)={gap:.3e}"))
    again = MixturePosterior.from_dict(json.loads(json.dumps(post.to_dict())))
    try:
        m1, m2 = mixture_moments(post), mixture_moments(again)
    except ValueError as exc:          # e.g. non-positive stored precisions
        results.append(("round_trip_moments", False, str(exc)))
    else:
        same = np.array_equal(m1.mean, m2.mean) and np.array_equal(m1.variance, m2.variance)
        results.append(("round_trip_moments", bool(same), "bitwise" if same else "moments differ"))
    vpath = Path(path) / "validation.json"
    if vpath.exists():
        v = read_json(vpath)
        ok = 1.0 / v["M"] <= v["ESS"] <= 1.0
        results.append(("ess_range", ok, f"ESS={v['ESS']:.4f}, M={v['M']}"))
    return results
