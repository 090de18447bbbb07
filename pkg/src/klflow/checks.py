"""Acceptance checks behind ``klflow check``.

Each check builds its own randomized instances from a fixed seed, compares a
library code path against an independent computation, and reports pass/fail
against a fixed tolerance and wall-time budget.
"""

from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from klflow.discrepancy import ksd2, mmd2, mmd_witness
from klflow.flow import (
    FlowConfig,
    fr_exact_solution,
    jko_solve,
    ksd_wgf_step,
    mirror_step,
    mmd_wgf_step,
    nw_witness,
    wfr_ift_step,
)
from klflow.kernel import (
    KernelSpec,
    SteinKernel,
    kernel_eval,
    kernel_grad2,
    stein_kernel_eval,
    stein_kernel_grad2,
)
from klflow.measure import (
    DensityRatioTable,
    DiscreteMeasure,
    Ensemble,
    Target,
    density_ratio,
    ensemble_from_sampler,
    make_rng,
)
from klflow.oracle import (
    QuadratureGrid,
    finite_diff_grad,
    quad_integral,
    simplex_grid_argmin,
)

SCOPES = ("kernels", "flows", "oracles", "all")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    @property
    def ok(self):
        return self.passed and self.seconds < self.budget

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        over = "" if self.seconds < self.budget else f" [over budget {self.budget:g}s]"
        return f"{status}  {self.name:<34} {self.seconds:7.2f}s  {self.detail}{over}"


@dataclass
class Context:
    sigma: float = 1.0

    def kernel(self):
        return KernelSpec.gaussian(self.sigma)


def _random_kernel(rng, i):
    if i % 2 == 0:
        return KernelSpec.gaussian(rng.uniform(0.3, 2.0))
    return KernelSpec.imq(rng.uniform(0.3, 2.0), rng.uniform(0.1, 0.9))


def _std_normal_pdf(y):
    return np.exp(-0.5 * y * y) / np.sqrt(2 * np.pi)


# -- kernels -------------------------------------------------------------------

def check_kernel_basics(ctx):
    """Symmetry and a positive-definiteness spot check on 20 random points."""
    rng = np.random.default_rng(11)
    worst_sym, worst_eig = 0.0, np.inf
    for i, d in enumerate((1, 2, 5)):
        for spec in (ctx.kernel(), _random_kernel(rng, 1)):
            x = rng.normal(size=(20, d))
            g = spec.gram(x)
            worst_sym = max(worst_sym, float(np.max(np.abs(g - g.T))))
            worst_eig = min(worst_eig, float(np.linalg.eigvalsh(g).min()))
    ok = worst_sym == 0.0 and worst_eig > -1e-10
    return ok, f"max|k(x,y)-k(y,x)|={worst_sym:.1e}, min eig={worst_eig:.2e}"


def check_stein_zero_mean(ctx):
    """Stein kernel integrates to zero against the standard normal target."""
    s = SteinKernel(ctx.kernel(), Target.gaussian([0.0], [[1.0]]))
    grid = QuadratureGrid(-10.0, 10.0, 10_000)
    worst = 0.0
    for x in (-2.0, -1.0, 0.0, 1.0, 2.0):
        val = quad_integral(lambda y: s.gram([[x]], y[:, None])[0] * _std_normal_pdf(y), grid,
                            vectorized=True)
        worst = max(worst, abs(val))
    return worst < 1e-6, f"max |integral| = {worst:.2e} (tol 1e-6)"


def _rel_err(g, ref):
    return float(np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-6))


def check_gradient_consistency(ctx):
    """Analytic gradients vs central differences (h = 1e-5)."""
    rng = np.random.default_rng(9)
    worst_k = worst_s = 0.0
    for d in (1, 2, 5):
        target = Target.mixture(
            [(rng.normal(size=d), np.diag(rng.uniform(0.5, 2.0, d))),
             (rng.normal(size=d), np.eye(d))], [0.4, 0.6])
        for spec in (ctx.kernel(), KernelSpec.imq(1.0, 0.5)):
            s = SteinKernel(spec, target)
            for _ in range(100):
                x, y = rng.normal(size=d), rng.normal(size=d)
                fd = finite_diff_grad(lambda z: kernel_eval(spec, x, z), y, 1e-5)
                worst_k = max(worst_k, _rel_err(kernel_grad2(spec, x, y), fd))
                fd = finite_diff_grad(lambda z: stein_kernel_eval(s, x, z), y, 1e-5)
                worst_s = max(worst_s, _rel_err(stein_kernel_grad2(s, x, y), fd))
    ok = worst_k < 1e-6 and worst_s < 1e-6
    return ok, f"max rel err: kernel {worst_k:.1e}, stein {worst_s:.1e} (tol 1e-6)"


# -- oracles -------------------------------------------------------------------

def check_oracle_quadrature(ctx):
    grid = QuadratureGrid(-10.0, 10.0, 10_000)
    total = quad_integral(_std_normal_pdf, grid, vectorized=True)
    odd = quad_integral(lambda y: y, grid)
    zero = quad_integral(lambda y: 0.0, grid)
    ok = abs(total - 1) < 1e-8 and abs(odd) < 1e-12 and zero == 0.0
    return ok, f"normal pdf -> {total:.12f}, odd -> {odd:.1e}"


def check_oracle_finite_diff(ctx):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 4))
    a = a + a.T
    b = rng.normal(size=4)
    x = rng.normal(size=4)
    exact = a @ x + b
    fd = finite_diff_grad(lambda z: 0.5 * z @ a @ z + b @ z, x, 1e-4)
    rel = float(np.linalg.norm(fd - exact) / np.linalg.norm(exact))
    const = finite_diff_grad(lambda z: 3.0, x, 1e-4)
    ok = rel < 1e-8 and not np.any(const)
    return ok, f"quadratic rel err {rel:.1e} (tol 1e-8)"


def check_oracle_simplex(ctx):
    c = np.array([0.3, -0.2, 0.5, 0.1])
    w = simplex_grid_argmin(lambda p: p @ c, 4, 0.05)
    coarse = simplex_grid_argmin(lambda p: p @ c[:3], 3, 1.0)
    ok = np.array_equal(w, np.eye(4)[1]) and np.count_nonzero(coarse) == 1
    return ok, f"linear objective -> vertex {np.flatnonzero(w).tolist()}"


# -- flows ---------------------------------------------------------------------

def check_force_identity(ctx):
    """Kernelized dual force equals the MMD witness on shared atoms."""
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(50):
        m, d = int(rng.integers(1, 51)), int(rng.integers(1, 4))
        spec = _random_kernel(rng, i)
        atoms = rng.normal(size=(m, d))
        mu = rng.dirichlet(np.ones(m))
        pi = rng.dirichlet(np.ones(m))
        pi[rng.random(m) < 0.2] = 0.0
        if pi.sum() == 0:
            pi[0] = 1.0
        pi /= pi.sum()
        table = DensityRatioTable(atoms, mu, pi)
        probes = rng.normal(scale=1.5, size=(20, d))
        force = (mu * density_ratio(table)) @ spec.gram(atoms, probes)
        wit = np.array([mmd_witness(spec, table.mu(), table.pi(), p) for p in probes])
        worst = max(worst, float(np.max(np.abs(force - wit))))
    return worst < 1e-13, f"max abs error {worst:.1e} (tol 1e-13)"


def _fr_instance(rng, i):
    n, m, d = int(rng.integers(1, 30)), int(rng.integers(1, 30)), int(rng.integers(1, 4))
    e0 = Ensemble(rng.normal(1.0, 1.0, size=(n, d)), rng.dirichlet(np.ones(n)))
    pi = DiscreteMeasure(rng.normal(size=(m, d)), rng.uniform(0.5, 2.0, m)).normalized()
    return _random_kernel(rng, i), e0, pi


def check_fr_decay(ctx):
    """Exact FR solution: ``mmd2(mu_t, pi) = exp(-2t) mmd2(mu_0, pi)``."""
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(10):
        spec, e0, pi = _fr_instance(rng, i)
        base = mmd2(spec, e0.as_measure(), pi)
        for t in (0.1, 0.5, 1.0, 2.0, 5.0):
            got = mmd2(spec, fr_exact_solution(e0, pi, t), pi)
            worst = max(worst, abs(got - np.exp(-2 * t) * base) / (np.exp(-2 * t) * base))
    return worst < 1e-10, f"max rel err {worst:.1e} (tol 1e-10)"


def check_fr_rate(ctx):
    """Log MMD along the FR solution is affine in t with slope -1."""
    rng = np.random.default_rng(3)
    spec, e0, pi = _fr_instance(rng, 0)
    ts = np.linspace(0.0, 5.0, 20)
    logs = [0.5 * np.log(mmd2(spec, fr_exact_solution(e0, pi, t), pi)) for t in ts]
    slope = np.polyfit(ts, logs, 1)[0]
    return abs(slope + 1) < 1e-6, f"fitted slope {slope:.9f} (want -1 +- 1e-6)"


def check_ift_decay(ctx):
    """Pure-reaction IFT decays MMD at rate beta."""
    spec = ctx.kernel()
    ref = DiscreteMeasure.uniform(Target.gaussian([0.0], [[1.0]]).sample(20, make_rng(5)))
    details, ok = [], True
    for beta in (0.5, 1.0):
        e = ensemble_from_sampler(Target.gaussian([3.0], [[1.0]]), 50, 6)
        cfg = FlowConfig("wfr_ift", tau=0.05, alpha=0.0, beta=beta, steps=100, injection=20,
                         kernel=spec, seed=4)
        rng = make_rng(cfg.seed)
        ts, logs = [0.0], [0.5 * np.log(mmd2(spec, e.as_measure(), ref))]
        for n in range(1, cfg.steps + 1):
            e = wfr_ift_step(e, ref, cfg, rng)
            ts.append(n * cfg.tau)
            logs.append(0.5 * np.log(mmd2(spec, e.as_measure(), ref)))
        rate = -np.polyfit(ts, logs, 1)[0]
        ok &= abs(rate - beta) < 0.1 * beta
        details.append(f"beta={beta}: rate {rate:.4f}")
    return ok, "; ".join(details) + " (within 10%)"


def check_ksd_sampling(ctx):
    """KSD descent from N(5, 1) toward N(0, 1)."""
    target = Target.gaussian([0.0], [[1.0]])
    s = SteinKernel(ctx.kernel(), target)
    e = ensemble_from_sampler(Target.gaussian([5.0], [[1.0]]), 200, 1)
    k0 = ksd2(s, e.as_measure())
    for _ in range(2000):
        e = ksd_wgf_step(e, s, 0.1)
    k1 = ksd2(s, e.as_measure())
    mean, cov = e.moments()
    m, v = float(mean[0]), float(cov[0, 0])
    ok = abs(m) < 0.1 and abs(v - 1) < 0.15 and k1 * 10 <= k0
    return ok, f"mean {m:.4f}, var {v:.4f}, ksd2 {k0:.3g} -> {k1:.3g}"


def two_gaussian_instance(n=200, seed=3):
    """The 1-D two-Gaussian MMD flow instance: particles from N(2, 1), target samples from N(0, 1)."""
    ref = DiscreteMeasure.uniform(Target.gaussian([0.0], [[1.0]]).sample(n, make_rng(seed)))
    init = ensemble_from_sampler(Target.gaussian([2.0], [[1.0]]), n, seed + 1)
    return init, ref


def check_mmd_flow(ctx):
    """MMD flow dissipates mmd2 monotonically and reaches 10% of the start."""
    spec = ctx.kernel()
    e, ref = two_gaussian_instance()
    vals = [mmd2(spec, e.as_measure(), ref)]
    for _ in range(500):
        e = mmd_wgf_step(e, ref, spec, 0.1)
        vals.append(mmd2(spec, e.as_measure(), ref))
    vals = np.array(vals)
    frac = float(np.mean(np.diff(vals) <= 0))
    ok = frac >= 0.95 and vals[-1] < 0.1 * vals[0]
    return ok, f"non-increasing on {frac:.1%} of steps, mmd2 {vals[0]:.3g} -> {vals[-1]:.3g}"


def _raw_gauss(a, b, sigma):
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2 * sigma * sigma))


def check_jko(ctx):
    """JKO step vs exhaustive simplex grid search on 3-atom supports."""
    spec = ctx.kernel()
    sigma = spec.sigma
    rng = np.random.default_rng(7)
    res_grid = 1e-3
    worst_gap, worst_kkt, ok = 0.0, 0.0, True
    for _ in range(20):
        d = int(rng.integers(1, 3))
        support = rng.normal(size=(3, d))
        y = rng.normal(size=(int(rng.integers(1, 5)), d))
        v = rng.dirichlet(np.ones(len(y)))
        q = rng.dirichlet(np.ones(3))
        eta = float(rng.uniform(0.1, 10.0))
        r = jko_solve(support, q, DiscreteMeasure(y, v), spec, eta)
        # brute force on the raw objective
        kss, ksy, kyy = (_raw_gauss(support, support, sigma), _raw_gauss(support, y, sigma),
                         _raw_gauss(y, y, sigma))

        def objective(w):
            w = np.atleast_2d(w)
            quad = np.einsum("pi,ij,pj->p", w, kss, w)
            to_pi = quad - 2 * w @ (ksy @ v) + v @ kyy @ v
            to_prev = (np.einsum("pi,ij,pj->p", w - q, kss, w - q))
            return 0.5 * to_pi + 0.5 / eta * to_prev

        best = simplex_grid_argmin(objective, 3, res_grid, vectorized=True)
        f_jko, f_grid = objective(r.weights)[0], objective(best)[0]
        grad = (1 + 1 / eta) * (kss @ r.weights) - ksy @ v - (kss @ q) / eta
        lip = (1 + 1 / eta) * np.linalg.eigvalsh(kss).max()
        tol = np.abs(grad).max() * 3 * res_grid + 0.5 * lip * (3 * res_grid) ** 2
        gap = f_grid - f_jko
        ok &= -1e-12 <= gap <= tol and r.residual < 1e-8
        worst_gap = max(worst_gap, gap / tol)
        worst_kkt = max(worst_kkt, r.residual)
    return ok, f"max gap/tolerance {worst_gap:.2f}, max KKT residual {worst_kkt:.1e}"


def check_mirror(ctx):
    """Mirror-descent fixed point and the two-atom scalar oracle."""
    spec = ctx.kernel()
    rng = np.random.default_rng(10)
    atoms = rng.normal(size=(10, 2))
    pi = DiscreteMeasure(atoms, rng.uniform(0.5, 2.0, 10))
    e = Ensemble(atoms, pi.normalized().masses)
    fixed = float(np.max(np.abs(mirror_step(e, pi, spec, 1.0).weights - e.weights)))

    a = np.exp(-1.0 / (2 * spec.sigma ** 2))
    f0 = 0.8 + 0.2 * a - 0.5 - 0.5 * a
    f1 = 0.8 * a + 0.2 - 0.5 * a - 0.5
    w0, w1 = 0.8 * np.exp(-f0), 0.2 * np.exp(-f1)
    oracle = np.array([w0, w1]) / (w0 + w1)
    two = Ensemble([[0.0], [1.0]], [0.8, 0.2])
    got = mirror_step(two, DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5]), spec, 1.0).weights
    err = float(np.max(np.abs(got - oracle)))
    return fixed <= 1e-12 and err <= 1e-12, f"fixed-point drift {fixed:.1e}, oracle err {err:.1e}"


def check_nw_sign(ctx):
    """The local-regression force and MMD witness agree in sign."""
    spec = ctx.kernel()
    rng = np.random.default_rng(12)
    compared = disagree = 0
    for _ in range(20):
        d = int(rng.integers(1, 3))
        n, m = int(rng.integers(1, 30)), int(rng.integers(1, 30))
        e = Ensemble(rng.normal(0.5, 1.0, size=(n, d)))
        pi = DiscreteMeasure.uniform(rng.normal(size=(m, d)))
        for x in rng.normal(scale=1.5, size=(20, d)):
            a = nw_witness(e, pi, spec, x)
            b = mmd_witness(spec, e.as_measure(), pi, x)
            if abs(a) > 1e-10 and abs(b) > 1e-10:
                compared += 1
                disagree += np.sign(a) != np.sign(b)
    return disagree == 0 and compared > 0, f"{compared} probes compared, {disagree} sign mismatches"


DETERMINISM_CONFIG = """\
flow: {kind: mmd_wgf, tau: 0.1, steps: 200, seed: 7}
kernel: {family: gaussian, sigma: %r}
target: {kind: empirical, csv: target.csv}
init: {kind: gaussian, n: 100, mean: [2.0], covariance: [[1.0]]}
"""


def check_determinism(ctx):
    """Identical configs give byte-identical metrics.csv."""
    from klflow.cli import cmd_run

    with tempfile.TemporaryDirectory() as tmp:
        pts = Target.gaussian([0.0], [[1.0]]).sample(100, make_rng(0))
        np.savetxt(os.path.join(tmp, "target.csv"), pts, delimiter=",")
        path = os.path.join(tmp, "run.yaml")
        with open(path, "w") as fh:
            fh.write(DETERMINISM_CONFIG % ctx.sigma)
        outs = []
        for i in range(2):
            out = os.path.join(tmp, f"out{i}")
            code = cmd_run(path, out)
            if code != 0:
                return False, f"run {i} exited with {code}"
            with open(os.path.join(out, "metrics.csv"), "rb") as fh:
                outs.append(fh.read())
    same = outs[0] == outs[1]
    return same, f"metrics.csv identical: {same} ({len(outs[0])} bytes)"


REGISTRY = {
    "kernels": [
        ("kernel symmetry / PD spot check", check_kernel_basics, 5.0),
        ("Stein kernel zero-mean", check_stein_zero_mean, 1.0),
        ("gradient consistency", check_gradient_consistency, 5.0),
    ],
    "oracles": [
        ("oracle: trapezoid quadrature", check_oracle_quadrature, 1.0),
        ("oracle: central differences", check_oracle_finite_diff, 1.0),
        ("oracle: simplex grid search", check_oracle_simplex, 1.0),
    ],
    "flows": [
        ("force/witness identity", check_force_identity, 1.0),
        ("FR exact MMD decay", check_fr_decay, 1.0),
        ("FR log-MMD slope", check_fr_rate, 1.0),
        ("IFT reaction decay", check_ift_decay, 10.0),
        ("KSD sampling quality", check_ksd_sampling, 60.0),
        ("MMD flow monotone decay", check_mmd_flow, 30.0),
        ("JKO vs grid search", check_jko, 10.0),
        ("mirror descent", check_mirror, 1.0),
        ("NW/MMD witness sign", check_nw_sign, 5.0),
        ("run determinism", check_determinism, 60.0),
    ],
}


def selected(scope):
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    scopes = ("kernels", "oracles", "flows") if scope == "all" else (scope,)
    return [item for s in scopes for item in REGISTRY[s]]


def run_one(name, fn, budget, ctx):
    t0 = time.perf_counter()
    try:
        passed, detail = fn(ctx)
    except Exception as err:  # a crash is reported as a failed criterion
        passed, detail = False, f"error: {type(err).__name__}: {err}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0, budget)


def run_checks(scope="all", sigma=1.0, report=None):
    ctx = Context(sigma=sigma)
    results = []
    for name, fn, budget in selected(scope):
        res = run_one(name, fn, budget, ctx)
        results.append(res)
        if report is not None:
            report(res.line())
    return results
