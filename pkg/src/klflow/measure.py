"""Particle ensembles, discrete measures and target distributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from klflow.errors import AbsoluteContinuityError, CapabilityError, InputError
from klflow.kernel import as_points

SIMPLEX_TOL = 1e-12
CAPABILITIES = frozenset({"score", "score_jacobian", "unnorm_logdensity", "sample", "moments"})


def make_rng(seed):
    """Counter-based Philox generator; ``seed`` fully determines the stream."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = int(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass(eq=False)
class DiscreteMeasure:
    """Atoms with nonnegative, not necessarily normalized, masses."""

    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.atoms = as_points(self.atoms)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if len(self.masses) != len(self.atoms):
            raise InputError(f"{len(self.atoms)} atoms but {len(self.masses)} masses")
        if np.any(self.masses < 0) or not np.all(np.isfinite(self.masses)):
            raise InputError("masses must be finite and nonnegative")

    @classmethod
    def uniform(cls, atoms):
        atoms = as_points(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))

    @property
    def dim(self):
        return self.atoms.shape[1]

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def __len__(self):
        return len(self.masses)

    def normalized(self):
        z = self.total_mass
        if z <= 0:
            raise InputError("cannot normalize a measure with zero total mass")
        return DiscreteMeasure(self.atoms, self.masses / z)

    def scaled(self, c):
        return DiscreteMeasure(self.atoms, c * self.masses)

    def __add__(self, other):
        if other.dim != self.dim:
            raise InputError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return DiscreteMeasure(np.vstack([self.atoms, other.atoms]),
                               np.concatenate([self.masses, other.masses]))

    def moments(self):
        p = self.normalized().masses
        mean = p @ self.atoms
        c = self.atoms - mean
        return mean, (c * p[:, None]).T @ c


@dataclass(eq=False)
class Ensemble:
    """Weighted particle system representing a probability measure."""

    positions: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.positions = as_points(self.positions)
        n = len(self.positions)
        if n < 1:
            raise InputError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(self.positions)):
            raise InputError("particle positions must be finite")
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.weights) != n:
            raise InputError(f"{n} particles but {len(self.weights)} weights")
        check_simplex(self.weights)

    @property
    def n(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.positions.shape[1]

    def as_measure(self):
        return DiscreteMeasure(self.positions, self.weights)

    def copy(self):
        return Ensemble(self.positions.copy(), self.weights.copy())

    def is_uniform(self, tol=SIMPLEX_TOL):
        return bool(np.all(np.abs(self.weights - 1.0 / self.n) <= tol))

    def moments(self):
        return self.as_measure().moments()


def check_simplex(w, tol=SIMPLEX_TOL):
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise InputError(f"weights must lie on the simplex (sum={w.sum()!r}, min={w.min()!r})")


def renormalize(w):
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    return w / w.sum()


class Target:
    """Target distribution exposing a capability-dependent access surface.

    Analytic targets (``gaussian``, ``mixture``) provide score, score Jacobian,
    unnormalized log-density, sampling and moments. Empirical targets provide
    sampling (resampling of their atoms) and moments only. ``capabilities``
    narrows what is exposed, e.g. to model a score-only posterior.
    """

    def __init__(self, kind, *, mean=None, covariance=None, components=None,
                 weights=None, measure=None, capabilities=None):
        self.kind = kind
        if kind == "gaussian":
            self.components = [_gaussian_component(mean, covariance)]
            self.mixture_weights = np.ones(1)
            derived = CAPABILITIES
        elif kind == "mixture":
            if not components:
                raise InputError("a mixture needs at least one component")
            self.components = [_gaussian_component(m, c) for m, c in components]
            dims = {comp["mean"].shape[0] for comp in self.components}
            if len(dims) != 1:
                raise InputError("mixture components disagree on dimension")
            w = np.asarray(weights if weights is not None else np.ones(len(components)), dtype=float)
            if w.shape != (len(components),) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise InputError("mixture weights must lie on the simplex")
            self.mixture_weights = w
            derived = CAPABILITIES
        elif kind == "empirical":
            if not isinstance(measure, DiscreteMeasure) or measure.total_mass <= 0:
                raise InputError("empirical targets need a DiscreteMeasure with positive mass")
            self.measure = measure.normalized()
            derived = frozenset({"sample", "moments"})
        else:
            raise InputError(f"unknown target kind {kind!r}")
        if capabilities is None:
            self.capabilities = derived
        else:
            requested = frozenset(capabilities)
            missing = requested - derived
            if missing:
                raise CapabilityError(sorted(missing)[0], what=f"{kind} target")
            self.capabilities = requested

    @classmethod
    def gaussian(cls, mean, covariance, **kw):
        return cls("gaussian", mean=mean, covariance=covariance, **kw)

    @classmethod
    def mixture(cls, components, weights=None, **kw):
        return cls("mixture", components=components, weights=weights, **kw)

    @classmethod
    def empirical(cls, measure, **kw):
        return cls("empirical", measure=measure, **kw)

    @property
    def dim(self):
        if self.kind == "empirical":
            return self.measure.dim
        return self.components[0]["mean"].shape[0]

    def _require(self, cap):
        if cap not in self.capabilities:
            raise CapabilityError(cap, what=f"{self.kind} target")

    def _component_terms(self, x):
        # per component: log(w_k N_k(x)) and the component score -P_k (x - m_k)
        logs, grads = [], []
        for wk, comp in zip(self.mixture_weights, self.components):
            diff = x - comp["mean"]
            g = -diff @ comp["precision"]
            logs.append(np.log(wk) + comp["lognorm"] + 0.5 * np.sum(diff * g, axis=1))
            grads.append(g)
        return np.stack(logs), np.stack(grads)

    def _check_x(self, x):
        x = as_points(x)
        if x.shape[1] != self.dim:
            raise InputError(f"dimension mismatch: points are {x.shape[1]}-d, target is {self.dim}-d")
        return x

    def logdensity(self, x):
        """Log-density up to an additive constant (exact for analytic targets)."""
        self._require("unnorm_logdensity")
        logs, _ = self._component_terms(self._check_x(x))
        return logsumexp(logs, axis=0)

    def score(self, x):
        self._require("score")
        logs, grads = self._component_terms(self._check_x(x))
        resp = np.exp(logs - logsumexp(logs, axis=0))
        return np.einsum("kn,knd->nd", resp, grads)

    def score_jacobian(self, x):
        """Hessian of ``log pi`` at each point, shape ``(n, d, d)``."""
        self._require("score_jacobian")
        x = self._check_x(x)
        logs, grads = self._component_terms(x)
        resp = np.exp(logs - logsumexp(logs, axis=0))
        s = np.einsum("kn,knd->nd", resp, grads)
        prec = np.stack([c["precision"] for c in self.components])
        h = -np.einsum("kn,kab->nab", resp, prec)
        h += np.einsum("kn,kna,knb->nab", resp, grads, grads)
        return h - s[:, :, None] * s[:, None, :]

    def sample(self, n, rng):
        self._require("sample")
        if self.kind == "empirical":
            idx = rng.choice(len(self.measure), size=n, p=self.measure.masses)
            return self.measure.atoms[idx].copy()
        labels = rng.choice(len(self.components), size=n, p=self.mixture_weights)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            sel = labels == k
            out[sel] = comp["mean"] + z[sel] @ comp["chol"].T
        return out

    def moments(self):
        self._require("moments")
        if self.kind == "empirical":
            return self.measure.moments()
        means = np.stack([c["mean"] for c in self.components])
        w = self.mixture_weights
        mean = w @ means
        cov = sum(wk * (c["covariance"] + np.outer(m - mean, m - mean))
                  for wk, c, m in zip(w, self.components, means))
        return mean, cov

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            c = self.components[0]
            d.update(mean=c["mean"].tolist(), covariance=c["covariance"].tolist())
        elif self.kind == "mixture":
            d["components"] = [{"mean": c["mean"].tolist(), "covariance": c["covariance"].tolist()}
                               for c in self.components]
            d["weights"] = self.mixture_weights.tolist()
        return d


def _gaussian_component(mean, covariance):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
        raise InputError(f"covariance shape {cov.shape} does not match mean of length {mean.shape[0]}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise InputError("covariance must be symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InputError("covariance must be positive definite") from None
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    lognorm = -0.5 * mean.shape[0] * np.log(2 * np.pi) - np.sum(np.log(np.diag(chol)))
    return {"mean": mean, "covariance": cov, "chol": chol, "precision": precision, "lognorm": lognorm}


@dataclass(eq=False)
class DensityRatioTable:
    """Two measures on shared atoms, for forming ``d pi / d mu`` componentwise."""

    atoms: np.ndarray
    mu_masses: np.ndarray
    pi_masses: np.ndarray = field(default=None)

    def __post_init__(self):
        self.atoms = as_points(self.atoms)
        self.mu_masses = np.asarray(self.mu_masses, dtype=float).reshape(-1)
        self.pi_masses = np.asarray(self.pi_masses, dtype=float).reshape(-1)
        m = len(self.atoms)
        if self.mu_masses.shape != (m,) or self.pi_masses.shape != (m,):
            raise InputError("mass vectors must match the number of atoms")
        if np.any(self.mu_masses < 0) or np.any(self.pi_masses < 0):
            raise InputError("masses must be nonnegative")
        bad = np.flatnonzero((self.pi_masses > 0) & (self.mu_masses <= 0))
        if bad.size:
            raise AbsoluteContinuityError(
                f"pi has mass on atom {int(bad[0])} where mu has none (pi is not << mu)")

    def mu(self):
        return DiscreteMeasure(self.atoms, self.mu_masses)

    def pi(self):
        return DiscreteMeasure(self.atoms, self.pi_masses)


def density_ratio(table: DensityRatioTable) -> np.ndarray:
    """Dual force ``1 - d pi / d mu`` at each atom (zero-mass atoms read as 1)."""
    mu, pi = table.mu_masses, table.pi_masses
    ratio = np.divide(pi, mu, out=np.zeros_like(pi), where=mu > 0)
    return 1.0 - ratio


def ensemble_from_sampler(target: Target, n: int, seed: int) -> Ensemble:
    if n < 1:
        raise InputError("n must be at least 1")
    return Ensemble(target.sample(n, make_rng(seed)))


def target_moments(target: Target):
    return target.moments()


def load_measure_csv(path, has_mass=None) -> DiscreteMeasure:
    """Read rows ``x_1,...,x_d[,mass]``.

    A non-numeric first row is treated as a header. ``has_mass=None`` takes
    the last column as masses only when the header names it ``mass`` or
    ``weight``; otherwise atoms get uniform mass.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    header = None
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            header, rows = rows[0], rows[1:]
    if not rows:
        raise InputError(f"{path}: no data rows")
    data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    if has_mass is None:
        has_mass = header is not None and header[-1].strip().lower() in ("mass", "weight")
    if has_mass:
        return DiscreteMeasure(data[:, :-1], data[:, -1])
    return DiscreteMeasure.uniform(data)
