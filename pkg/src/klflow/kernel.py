r"""Radial kernels, their analytic derivatives, and the Langevin Stein kernel.

Two families are supported::

    gaussian  k(x, y) = exp(-|x - y|^2 / (2 sigma^2))
    imq       k(x, y) = (c^2 + |x - y|^2)^(-beta),   0 < beta < 1

The Stein kernel built on a base kernel ``k`` and a target score
``s = grad log pi`` is

.. math::

    s_\pi(x, y) = \mathrm{tr}\,\nabla_1\nabla_2 k(x, y)
                + \nabla_1 k(x, y)\cdot s(y) + \nabla_2 k(x, y)\cdot s(x)
                + k(x, y)\, s(x)\cdot s(y),

whose expectation under ``pi`` in either argument vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from klflow import _backend
from klflow._pykernels import GAUSSIAN, IMQ
from klflow.errors import CapabilityError, InputError

FAMILIES = ("gaussian", "inverse-multiquadric")
_ALIASES = {"gaussian": "gaussian", "rbf": "gaussian",
            "inverse-multiquadric": "inverse-multiquadric", "imq": "inverse-multiquadric"}


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of a radial kernel.

    Use :meth:`gaussian` or :meth:`imq` rather than the raw constructor.
    """

    family: str = "gaussian"
    sigma: float | None = 1.0
    c: float | None = None
    beta: float | None = None

    def __post_init__(self):
        family = _ALIASES.get(self.family)
        if family is None:
            raise InputError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", family)
        if family == "gaussian":
            if self.sigma is None or not np.isfinite(self.sigma) or self.sigma <= 0:
                raise InputError(f"gaussian bandwidth sigma must be positive, got {self.sigma}")
            object.__setattr__(self, "sigma", float(self.sigma))
            object.__setattr__(self, "c", None)
            object.__setattr__(self, "beta", None)
        else:
            if self.c is None or not np.isfinite(self.c) or self.c <= 0:
                raise InputError(f"IMQ offset c must be positive, got {self.c}")
            if self.beta is None or not 0 < self.beta < 1:
                raise InputError(f"IMQ exponent beta must lie in (0, 1), got {self.beta}")
            object.__setattr__(self, "c", float(self.c))
            object.__setattr__(self, "beta", float(self.beta))
            object.__setattr__(self, "sigma", None)

    @classmethod
    def gaussian(cls, sigma=1.0):
        return cls("gaussian", sigma=sigma)

    @classmethod
    def imq(cls, c=1.0, beta=0.5):
        return cls("inverse-multiquadric", sigma=None, c=c, beta=beta)

    @property
    def code(self):
        """``(family_code, p1, p2)`` triple consumed by the pairwise backends."""
        if self.family == "gaussian":
            return GAUSSIAN, self.sigma, 0.0
        return IMQ, self.c, self.beta

    @property
    def diagonal(self):
        """``k(x, x)``, which is also ``sup |k|``."""
        return 1.0 if self.family == "gaussian" else self.c ** (-2.0 * self.beta)

    def to_dict(self):
        if self.family == "gaussian":
            return {"family": "gaussian", "sigma": self.sigma}
        return {"family": self.family, "c": self.c, "beta": self.beta}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        family = d.pop("family", "gaussian")
        if _ALIASES.get(family) == "gaussian":
            return cls("gaussian", sigma=d.get("sigma", 1.0))
        return cls(family, sigma=None, c=d.get("c"), beta=d.get("beta"))

    def gram(self, x, y=None):
        x = as_points(x)
        y = x if y is None else as_points(y)
        _check_dims(x, y)
        return _backend.gram(x, y, *self.code)


def as_points(x):
    """Coerce to an ``(n, d)`` float array; a 1-D input is read as n scalars."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim != 2:
        raise InputError(f"expected an (n, d) array of points, got shape {a.shape}")
    return a


def as_point(x):
    """Coerce a single point to a 1-D float vector."""
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1:
        raise InputError(f"expected a point (1-D vector), got shape {a.shape}")
    return a


def _check_dims(x, y):
    if x.shape[-1] != y.shape[-1]:
        raise InputError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")


def _pair(x, y):
    x, y = as_point(x), as_point(y)
    _check_dims(x, y)
    return x, y


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x, y = _pair(x, y)
    return float(_backend.gram(x[None], y[None], *spec.code)[0, 0])


def kernel_grad2(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``k(x, y)`` in ``y``."""
    x, y = _pair(x, y)
    return _backend.grad2_sum(x[None], np.ones(1), y[None], *spec.code)[0]


def kernel_grad1(spec: KernelSpec, x, y) -> np.ndarray:
    # k is symmetric, so grad_1 k(x, y) = grad_2 k(y, x)
    return kernel_grad2(spec, y, x)


def median_heuristic(x) -> float:
    """Gaussian bandwidth ``sqrt(median(|x_i - x_j|^2) / 2)`` over distinct pairs.

    Never applied implicitly; callers opt in.
    """
    x = as_points(x)
    if len(x) < 2:
        raise InputError("median heuristic needs at least two points")
    iu = np.triu_indices(len(x), k=1)
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)[iu]
    return float(np.sqrt(np.median(d2) / 2.0))


@dataclass(frozen=True, eq=False)
class SteinKernel:
    """Stein kernel of ``base`` against a target exposing a score."""

    base: KernelSpec
    target: object

    def __post_init__(self):
        if "score" not in self.target.capabilities:
            raise CapabilityError("score")

    def scores(self, x):
        return self.target.score(as_points(x))

    def gram(self, x, y=None):
        x = as_points(x)
        sx = self.scores(x)
        if y is None:
            y, sy = x, sx
        else:
            y = as_points(y)
            _check_dims(x, y)
            sy = self.scores(y)
        return _backend.stein_gram(x, sx, y, sy, *self.base.code)

    def grad2_sum(self, x, w):
        """``out[i] = sum_j w_j grad_2 s(x_j, x_i)`` over the atoms ``x``."""
        if "score_jacobian" not in self.target.capabilities:
            raise CapabilityError("score_jacobian")
        x = as_points(x)
        s = self.target.score(x)
        jac = self.target.score_jacobian(x)
        return _backend.stein_grad2_sum(x, np.asarray(w, dtype=float), s, jac, *self.base.code)


def stein_kernel_eval(s: SteinKernel, x, y) -> float:
    x, y = _pair(x, y)
    return float(s.gram(x[None], y[None])[0, 0])


def stein_kernel_grad2(s: SteinKernel, x, y) -> np.ndarray:
    """Gradient of ``s_pi(x, y)`` in ``y``."""
    x, y = _pair(x, y)
    # the sum over the atom pair {x, y} with weight on x only isolates the (x, y) term
    out = s.grad2_sum(np.stack([x, y]), np.array([1.0, 0.0]))
    return out[1]
