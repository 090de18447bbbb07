"""Exact discrepancies between discrete measures, and run diagnostics.

Every quadratic form here is a V-statistic over weighted atoms (diagonal
included), i.e. the exact squared MMD/KSD of the discrete measures involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from klflow import _backend
from klflow.errors import InputError
from klflow.kernel import KernelSpec, SteinKernel, as_point, as_points
from klflow.measure import DiscreteMeasure, Ensemble

CSV_HEADER = "step,time,mmd2,ksd2,mean_err,cov_err"


def _signed_difference(a, b):
    """Atoms and signed masses of ``a - b`` with exact duplicate atoms merged.

    Merging keeps cancellation between coincident atoms exact, which matters
    for mixtures that share atoms with the reference measure.
    """
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    atoms = np.vstack([a.atoms, b.atoms])
    signed = np.concatenate([a.masses, -b.masses])
    if len(atoms) == 0:
        return atoms, signed
    uniq, inverse = np.unique(atoms, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inverse.reshape(-1), signed)
    return uniq, merged


def mmd2(k, a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Squared MMD of ``a - b``: ``sum_ij z_i z_j k(x_i, x_j)``.

    ``k`` may be a :class:`KernelSpec` or anything exposing ``gram`` (a
    :class:`SteinKernel` gives the KSD against ``b``).
    """
    atoms, z = _signed_difference(a, b)
    if len(z) == 0:
        return 0.0
    gram = k.gram(atoms)
    return float(z @ gram @ z)


def ksd2(s: SteinKernel, mu: DiscreteMeasure) -> float:
    """``sum_ij w_i w_j s_pi(x_i, x_j)``."""
    gram = s.gram(mu.atoms)
    return float(mu.masses @ gram @ mu.masses)


def empty_measure(dim) -> DiscreteMeasure:
    return DiscreteMeasure(np.zeros((0, dim)), np.zeros(0))


def witness(k: KernelSpec, a: DiscreteMeasure, b: DiscreteMeasure, x) -> np.ndarray:
    """Witness ``f(x) = int k(x', x) d(a - b)(x')`` at each row of ``x``."""
    x = as_points(x)
    if a.dim != b.dim or a.dim != x.shape[1]:
        raise InputError("dimension mismatch between measures and probe points")
    out = np.zeros(len(x))
    if len(a):
        out += a.masses @ k.gram(a.atoms, x)
    if len(b):
        out -= b.masses @ k.gram(b.atoms, x)
    return out


def mmd_witness(k: KernelSpec, a: DiscreteMeasure, b: DiscreteMeasure, x) -> float:
    return float(witness(k, a, b, as_point(x)[None])[0])


def witness_grad(k: KernelSpec, a: DiscreteMeasure, b: DiscreteMeasure, x) -> np.ndarray:
    """Gradient of the witness at each row of ``x``: the MMD flow velocity field."""
    x = as_points(x)
    if a.dim != b.dim or a.dim != x.shape[1]:
        raise InputError("dimension mismatch between measures and probe points")
    out = np.zeros_like(x)
    if len(a):
        out += _backend.grad2_sum(a.atoms, a.masses, x, *k.code)
    if len(b):
        out -= _backend.grad2_sum(b.atoms, b.masses, x, *k.code)
    return out


def moment_error(e: Ensemble, target):
    """Euclidean mean error and Frobenius covariance error against the target."""
    t_mean, t_cov = target.moments()
    mean, cov = e.moments()
    return float(np.linalg.norm(mean - t_mean)), float(np.linalg.norm(cov - t_cov, "fro"))


def _fmt(v):
    return "" if v is None else repr(float(v))


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    time: float
    mmd2: float | None
    ksd2: float | None
    mean_err: float | None
    cov_err: float | None

    def __post_init__(self):
        if self.mmd2 is not None and self.mmd2 < -1e-12:
            raise InputError(f"mmd2 must be numerically nonnegative, got {self.mmd2}")

    def to_csv_row(self):
        return ",".join([str(self.step), _fmt(self.time), _fmt(self.mmd2), _fmt(self.ksd2),
                         _fmt(self.mean_err), _fmt(self.cov_err)])

    def to_dict(self):
        return {"step": self.step, "time": self.time, "mmd2": self.mmd2, "ksd2": self.ksd2,
                "mean_err": self.mean_err, "cov_err": self.cov_err}


def write_metrics_csv(fh, records):
    fh.write(CSV_HEADER + "\n")
    for r in records:
        fh.write(r.to_csv_row() + "\n")
