"""Particle integrators for the kernelized gradient flows of the inclusive KL.

Each ``*_step`` advances an :class:`~klflow.measure.Ensemble` by one explicit
step; :func:`fr_exact_solution` is the exact-time Fisher-Rao solution and
:func:`jko_step` one proximal (JKO) step of the MMD-MMD scheme. :func:`simulate`
drives any of them from a :class:`FlowConfig` and records diagnostics.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from klflow.discrepancy import MetricsRecord, ksd2, mmd2, moment_error, witness, witness_grad
from klflow.errors import (
    CapabilityError,
    ConfigurationError,
    ConvergenceError,
    InputError,
    UnsupportedConfigurationError,
)
from klflow.kernel import KernelSpec, SteinKernel, as_point, as_points
from klflow.measure import DiscreteMeasure, Ensemble, Target, check_simplex, make_rng

log = logging.getLogger(__name__)

KINDS = ("mmd_wgf", "ksd_wgf", "fr_exact", "wfr_ift", "wfr_ksd", "mirror", "jko")
SAMPLE_KINDS = frozenset({"mmd_wgf", "fr_exact", "wfr_ift", "mirror", "jko"})
STEIN_KINDS = frozenset({"ksd_wgf", "wfr_ksd"})


@dataclass(frozen=True)
class FlowConfig:
    """Run parameters.

    ``tau`` is the explicit step size, and the proximal step ``eta`` for
    ``jko``. ``alpha``/``beta`` scale the transport and reaction parts of the
    WFR kinds. ``injection`` is the number of target samples born per
    reaction step. When a WFR ensemble grows past ``max_particles``, atoms
    lighter than ``prune_threshold / N`` are dropped.
    """

    kind: str
    tau: float = 0.1
    alpha: float = 1.0
    beta: float = 0.0
    steps: int = 100
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    injection: int = 0
    max_particles: int = 5000
    prune_threshold: float = 1e-8
    jko_tol: float = 1e-8
    jko_max_iter: int = 100_000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown flow kind {self.kind!r}; expected one of {KINDS}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError(f"steps must be a positive integer, got {self.steps}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be nonnegative")
        if self.kind in ("wfr_ift", "wfr_ksd") and self.alpha + self.beta <= 0:
            raise ConfigurationError("alpha + beta must be positive for WFR flows")
        if self.injection < 0:
            raise ConfigurationError("injection must be nonnegative")
        if self.kind == "wfr_ift" and self.beta > 0 and self.injection == 0:
            raise ConfigurationError(
                "injection=0 with beta>0: reaction mass has nowhere to go")
        if self.max_particles < 1 or self.prune_threshold < 0:
            raise ConfigurationError("max_particles must be >= 1 and prune_threshold >= 0")
        if not isinstance(self.kernel, KernelSpec):
            raise ConfigurationError("kernel must be a KernelSpec")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["kernel"] = self.kernel.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "kernel" in d:
            d["kernel"] = KernelSpec.from_dict(d["kernel"])
        return cls(**d)


def _require_uniform(e):
    if not e.is_uniform():
        raise UnsupportedConfigurationError(
            "transport-only flows move positions of uniformly weighted particles; "
            "use a WFR kind for weighted ensembles")


def mmd_wgf_step(e: Ensemble, target_samples: DiscreteMeasure, k: KernelSpec, tau: float) -> Ensemble:
    """One explicit Euler step of the MMD Wasserstein flow (positions only)."""
    _require_uniform(e)
    v = witness_grad(k, e.as_measure(), target_samples.normalized(), e.positions)
    return Ensemble(e.positions - tau * v, e.weights.copy())


def ksd_wgf_step(e: Ensemble, s: SteinKernel, tau: float) -> Ensemble:
    """One explicit step of the KSD Wasserstein flow; needs only the score."""
    _require_uniform(e)
    v = s.grad2_sum(e.positions, e.weights)
    return Ensemble(e.positions - tau * v, e.weights.copy())


def fr_exact_solution(e0: Ensemble, target_samples: DiscreteMeasure, t: float) -> DiscreteMeasure:
    """Fisher-Rao flow at time ``t``: ``exp(-t) mu_0 + (1 - exp(-t)) pi``."""
    if not t >= 0:
        raise InputError(f"time must be nonnegative, got {t}")
    decay = np.exp(-t)
    return e0.as_measure().scaled(decay) + target_samples.normalized().scaled(-np.expm1(-t))


def systematic_resample(measure: DiscreteMeasure, n: int, rng) -> np.ndarray:
    """Draw ``n`` atoms by low-variance (systematic) resampling of ``measure``."""
    p = measure.normalized().masses
    u = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return measure.atoms[np.searchsorted(cdf, u, side="right")].copy()


def _transport(e, velocity, scale):
    return Ensemble(e.positions - scale * velocity, e.weights.copy())


def _birth(e, newborn, tau, beta, cfg):
    """Exact reaction over time ``tau``: old mass decays, newborn atoms share the rest."""
    n_new = len(newborn)
    decay = np.exp(-beta * tau)
    born = -np.expm1(-beta * tau)
    w = np.concatenate([e.weights * decay, np.full(n_new, born / n_new)])
    x = np.vstack([e.positions, newborn])
    if len(w) > cfg.max_particles:
        keep = w >= cfg.prune_threshold / len(w)
        x, w = x[keep], w[keep]
    return Ensemble(x, w / w.sum())


def wfr_ift_step(e: Ensemble, target_samples: DiscreteMeasure, cfg: FlowConfig, rng=None) -> Ensemble:
    """Interaction-force transport step: weighted MMD transport, then exact birth-death.

    Newborn particles are drawn from ``target_samples`` by systematic
    resampling with ``rng`` (defaults to a generator seeded by ``cfg.seed``).
    """
    if cfg.beta > 0 and cfg.injection == 0:
        raise ConfigurationError("injection=0 with beta>0: reaction mass has nowhere to go")
    pi = target_samples.normalized()
    out = e
    if cfg.alpha > 0:
        v = witness_grad(cfg.kernel, e.as_measure(), pi, e.positions)
        out = _transport(e, v, cfg.tau * cfg.alpha)
    if cfg.beta > 0:
        rng = make_rng(cfg.seed) if rng is None else rng
        out = _birth(out, systematic_resample(pi, cfg.injection, rng), cfg.tau, cfg.beta, cfg)
    return out


def reaction_mode(target: Target) -> str:
    """How a score-based WFR step realizes its reaction: ``sample`` or ``snis``."""
    if "sample" in target.capabilities:
        return "sample"
    if "unnorm_logdensity" in target.capabilities:
        return "snis"
    raise CapabilityError("sample or unnorm_logdensity")


def wfr_ksd_step(e: Ensemble, s: SteinKernel, target: Target, cfg: FlowConfig, rng=None) -> Ensemble:
    """WFR step driven by the Stein kernel.

    Transport uses the weighted Stein-witness gradient scaled by ``alpha``.
    The reaction injects fresh target samples when the target can sample;
    otherwise it reweights ``w_i <- w_i exp(beta tau rho_i)`` with
    ``rho_i = pihat_i / w_i`` and ``pihat`` the self-normalized target density
    over the current atoms (an approximation, flagged by :func:`simulate`).
    """
    out = e
    if cfg.alpha > 0 and cfg.tau > 0:
        out = _transport(e, s.grad2_sum(e.positions, e.weights), cfg.tau * cfg.alpha)
    if cfg.beta > 0 and cfg.tau > 0:
        mode = reaction_mode(target)
        if mode == "sample":
            if cfg.injection == 0:
                raise ConfigurationError("injection=0 with beta>0: reaction mass has nowhere to go")
            rng = make_rng(cfg.seed) if rng is None else rng
            out = _birth(out, target.sample(cfg.injection, rng), cfg.tau, cfg.beta, cfg)
        else:
            logp = target.logdensity(out.positions)
            pihat = np.exp(logp - logp.max())
            pihat /= pihat.sum()
            with np.errstate(divide="ignore"):
                logw = np.log(out.weights)
            rho = np.divide(pihat, out.weights, out=np.zeros_like(pihat), where=out.weights > 0)
            z = logw + cfg.beta * cfg.tau * rho
            w = np.exp(z - z.max())
            out = Ensemble(out.positions, w / w.sum())
    return out


def _reweight(e, force, tau):
    with np.errstate(divide="ignore"):
        z = np.log(e.weights) - tau * force
    w = np.exp(z - z.max())
    return Ensemble(e.positions.copy(), w / w.sum())


def mirror_step(e: Ensemble, target_samples: DiscreteMeasure, k: KernelSpec, tau: float) -> Ensemble:
    """Kernelized entropic mirror descent: ``w_i <- w_i exp(-tau f(x_i)) / Z``."""
    f = witness(k, e.as_measure(), target_samples.normalized(), e.positions)
    return _reweight(e, f, tau)


def mirror_step_stein(e: Ensemble, s: SteinKernel, tau: float) -> Ensemble:
    """Score-only mirror descent: the force is the Stein witness ``sum_j w_j s(x_i, x_j)``."""
    f = s.gram(e.positions) @ e.weights
    return _reweight(e, f, tau)


# -- JKO ---------------------------------------------------------------------

def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = ind[u - css / ind > 0][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _power_iteration(a, iters=50):
    x = np.ones(a.shape[0]) / np.sqrt(a.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = a @ x
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return float(x @ a @ x)


def kkt_residual(w, grad):
    """Natural residual ``|w - P(w - grad)|_inf``; zero exactly at simplex KKT points."""
    return float(np.max(np.abs(w - project_simplex(w - grad))))


@dataclass
class JKOResult:
    weights: np.ndarray
    residual: float
    iterations: int


def _match_rows(support, atoms):
    """Index of each row of ``atoms`` in ``support`` (-1 when absent)."""
    lookup = {row.tobytes(): i for i, row in enumerate(support)}
    return np.array([lookup.get(row.tobytes(), -1) for row in atoms], dtype=int)


def jko_problem(support, prev_weights, target_samples, k, eta):
    """Gram matrix and linear term of the scaled JKO objective.

    Up to a constant, ``0.5 mmd2(w, pi) + mmd2(w, prev) / (2 eta)`` equals
    ``(1 + 1/eta) (0.5 w'Kw - w'b)`` with
    ``b = lam K_SY v + (1 - lam) K q`` and ``lam = eta / (1 + eta)``.
    """
    support = as_points(support)
    pi = target_samples.normalized()
    gram = k.gram(support)
    lam = eta / (1.0 + eta)
    b = lam * (k.gram(support, pi.atoms) @ pi.masses) + (1.0 - lam) * (gram @ prev_weights)
    return gram, b, lam


def jko_objective(w, support, prev_weights, target_samples, k, eta):
    """The unscaled proximal objective, computed directly from ``mmd2``."""
    mu = DiscreteMeasure(support, w)
    return (0.5 * mmd2(k, mu, target_samples.normalized())
            + 0.5 / eta * mmd2(k, mu, DiscreteMeasure(support, prev_weights)))


def jko_solve(support, prev_weights, target_samples, k, eta, tol=1e-8, max_iter=100_000) -> JKOResult:
    """Accelerated projected gradient with adaptive restart on the simplex."""
    if not eta > 0:
        raise InputError(f"eta must be positive, got {eta}")
    support = as_points(support)
    q = np.asarray(prev_weights, dtype=float)
    if q.shape != (len(support),):
        raise InputError("prev_weights must have one entry per support atom")
    check_simplex(q, tol=1e-9)
    gram, b, lam = jko_problem(support, q, target_samples, k, eta)

    # when the target lives on the support, the mixture is feasible and optimal
    pi = target_samples.normalized()
    idx = _match_rows(support, pi.atoms)
    if np.all(idx >= 0):
        p = np.zeros(len(support))
        np.add.at(p, idx, pi.masses)
        w = project_simplex(lam * p + (1.0 - lam) * q)
    else:
        w = q.copy()

    step = 1.0 / (1.05 * _power_iteration(gram))
    y, w_prev, t = w.copy(), w.copy(), 1.0
    f_prev = np.inf
    res = kkt_residual(w, gram @ w - b)
    it = 0
    while res >= tol and it < max_iter:
        it += 1
        w_new = project_simplex(y - step * (gram @ y - b))
        f_new = 0.5 * w_new @ gram @ w_new - w_new @ b
        if f_new > f_prev:
            # function-value restart
            y, t = w.copy(), 1.0
            w_new = project_simplex(w - step * (gram @ w - b))
            f_new = 0.5 * w_new @ gram @ w_new - w_new @ b
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w_prev, w, t, f_prev = w, w_new, t_new, f_new
        res = kkt_residual(w, gram @ w - b)
    if res >= tol:
        raise ConvergenceError("JKO step did not reach the KKT tolerance", res, it)
    return JKOResult(w, res, it)


def jko_step(support, prev_weights, target_samples: DiscreteMeasure, k: KernelSpec, eta: float,
             tol=1e-8, max_iter=100_000) -> np.ndarray:
    """Weights minimizing ``0.5 mmd2(w, pi) + mmd2(w, prev) / (2 eta)`` over the simplex."""
    return jko_solve(support, prev_weights, target_samples, k, eta, tol, max_iter).weights


def jko_optimality(w, support, prev_weights, target_samples, k, eta):
    """``T(1 - dpi/dmu) + T(1 - dprev/dmu) / eta`` evaluated on the support atoms.

    On the active support of a minimizer this is constant.
    """
    support = as_points(support)
    pi = target_samples.normalized()
    mu = DiscreteMeasure(support, w)
    return (witness(k, mu, pi, support)
            + witness(k, mu, DiscreteMeasure(support, prev_weights), support) / eta)


# -- local regression ----------------------------------------------------------

class DegenerateLocalityWarning(RuntimeWarning):
    """All kernel weights vanished at the probe point."""


def nw_witness(e: Ensemble, target_samples: DiscreteMeasure, k: KernelSpec, x) -> float:
    """Nadaraya-Watson local-regression force ``f(x) = witness(x) / Z(x)``.

    ``Z(x) = sum_i w_i k(y_i, x)`` is the kernel density of the ensemble at
    ``x``, so ``f(x) = 1 - KDE_pi(x) / KDE_mu(x)``. Returns 0 and warns when
    ``Z(x)`` underflows.
    """
    x = as_point(x)
    mu = e.as_measure()
    if len(mu) == 0 or len(target_samples) == 0:
        raise InputError("both sample sets must be nonempty")
    pi = target_samples.normalized()
    z = float(mu.masses @ k.gram(mu.atoms, x[None])[:, 0])
    if not z > 0 or not np.isfinite(z):
        warnings.warn(f"kernel weights vanish at {x}; returning 0", DegenerateLocalityWarning,
                      stacklevel=2)
        return 0.0
    return float(witness(k, mu, pi, x[None])[0] / z)


# -- driver ----------------------------------------------------------------------

@dataclass
class RunResult:
    records: list
    ensemble: Ensemble
    flags: dict


def check_capabilities(cfg: FlowConfig, target: Target, init: Ensemble):
    """Fail before step 0 when the target cannot support the configured flow."""
    caps = target.capabilities
    if cfg.kind in SAMPLE_KINDS and target.kind != "empirical" and "sample" not in caps:
        raise CapabilityError("sample", what=f"{target.kind} target (needed by {cfg.kind})")
    if cfg.kind in STEIN_KINDS:
        for cap in ("score", "score_jacobian"):
            if cap not in caps:
                raise CapabilityError(cap, what=f"{target.kind} target (needed by {cfg.kind})")
    if cfg.kind == "wfr_ksd" and cfg.beta > 0:
        if reaction_mode(target) == "sample" and cfg.injection == 0:
            raise ConfigurationError("injection=0 with beta>0: reaction mass has nowhere to go")
    if cfg.kind in ("mmd_wgf", "ksd_wgf"):
        _require_uniform(init)
    if init.dim != target.dim:
        raise InputError(f"initial ensemble is {init.dim}-d but target is {target.dim}-d")


def reference_measure(target: Target, size, rng) -> DiscreteMeasure | None:
    """Target samples used by sample-based flows and the mmd2 diagnostic."""
    if target.kind == "empirical":
        return target.measure
    if "sample" not in target.capabilities:
        return None
    return DiscreteMeasure.uniform(target.sample(size, rng))


def _metrics(step, cfg, mu, target, reference, stein):
    mm = None if reference is None else mmd2(cfg.kernel, mu, reference)
    ks = None if stein is None else ksd2(stein, mu.normalized())
    if "moments" in target.capabilities:
        mean_err, cov_err = moment_error(Ensemble(mu.atoms, mu.masses / mu.total_mass), target)
    else:
        mean_err = cov_err = None
    return MetricsRecord(step, step * cfg.tau, mm, ks, mean_err, cov_err)


def simulate(cfg: FlowConfig, init: Ensemble, target: Target, *, reference_size=500,
             record_every=1) -> RunResult:
    """Advance the configured flow for ``cfg.steps`` steps, recording diagnostics.

    Records are taken at step 0 and then every ``record_every`` steps (and at
    the final step). All randomness derives from ``cfg.seed``.
    """
    check_capabilities(cfg, target, init)
    ref_seed, flow_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    reference = reference_measure(target, reference_size, make_rng(ref_seed))
    rng = make_rng(flow_seed)
    stein = SteinKernel(cfg.kernel, target) if "score" in target.capabilities else None
    flags = {"score_only_reaction": cfg.kind == "wfr_ksd" and cfg.beta > 0
             and reaction_mode(target) == "snis"}

    state = init.copy()
    support = prev = None
    if cfg.kind == "jko":
        support = np.vstack([init.positions, reference.atoms])
        prev = np.concatenate([init.weights, np.zeros(len(reference))])
        flags["jko_max_residual"] = 0.0

    records = [_metrics(0, cfg, state.as_measure(), target, reference, stein)]
    for n in range(1, cfg.steps + 1):
        if cfg.kind == "mmd_wgf":
            state = mmd_wgf_step(state, reference, cfg.kernel, cfg.tau)
        elif cfg.kind == "ksd_wgf":
            state = ksd_wgf_step(state, stein, cfg.tau)
        elif cfg.kind == "fr_exact":
            sol = fr_exact_solution(init, reference, n * cfg.tau)
            state = Ensemble(sol.atoms, sol.masses / sol.total_mass)
        elif cfg.kind == "wfr_ift":
            state = wfr_ift_step(state, reference, cfg, rng)
        elif cfg.kind == "wfr_ksd":
            state = wfr_ksd_step(state, stein, target, cfg, rng)
        elif cfg.kind == "mirror":
            state = mirror_step(state, reference, cfg.kernel, cfg.tau)
        elif cfg.kind == "jko":
            try:
                res = jko_solve(support, prev, reference, cfg.kernel, cfg.tau,
                                cfg.jko_tol, cfg.jko_max_iter)
            except ConvergenceError as err:
                err.step = n
                raise
            prev = res.weights
            flags["jko_max_residual"] = max(flags["jko_max_residual"], res.residual)
            state = Ensemble(support, prev / prev.sum())
        if n % record_every == 0 or n == cfg.steps:
            mu = (fr_exact_solution(init, reference, n * cfg.tau) if cfg.kind == "fr_exact"
                  else state.as_measure())
            records.append(_metrics(n, cfg, mu, target, reference, stein))
    log.debug("finished %s run: %d steps, %d particles", cfg.kind, cfg.steps, state.n)
    return RunResult(records, state, flags)


def run_flow(cfg: FlowConfig, init: Ensemble, target: Target, **kw):
    """Per-step :class:`MetricsRecord` list for the configured run."""
    return simulate(cfg, init, target, **kw).records


__all__ = [
    "FlowConfig", "KINDS", "mmd_wgf_step", "ksd_wgf_step", "fr_exact_solution", "wfr_ift_step",
    "wfr_ksd_step", "mirror_step", "mirror_step_stein", "jko_step", "jko_solve", "jko_objective",
    "jko_optimality", "nw_witness", "run_flow", "simulate", "project_simplex",
]
