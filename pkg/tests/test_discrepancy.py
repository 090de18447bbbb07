import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from klflow.discrepancy import (
    CSV_HEADER,
    MetricsRecord,
    empty_measure,
    ksd2,
    mmd2,
    mmd_witness,
    moment_error,
    witness,
    witness_grad,
    write_metrics_csv,
)
from klflow.errors import InputError
from klflow.kernel import KernelSpec, SteinKernel, kernel_eval
from klflow.measure import DiscreteMeasure, Ensemble, Target
from klflow.oracle import finite_diff_grad

K = KernelSpec.gaussian(1.0)


def brute_mmd2(spec, a, b):
    atoms = list(a.atoms) + list(b.atoms)
    z = list(a.masses) + [-m for m in b.masses]
    return sum(zi * zj * kernel_eval(spec, xi, xj)
               for xi, zi in zip(atoms, z) for xj, zj in zip(atoms, z))


def test_two_point_masses_closed_form():
    a = DiscreteMeasure([[0.0]], [1.0])
    b = DiscreteMeasure([[1.0]], [1.0])
    assert mmd2(K, a, b) == pytest.approx(2 - 2 * np.exp(-0.5), rel=1e-15)


@pytest.mark.parametrize("spec", [K, KernelSpec.imq(1.0, 0.5)], ids=str)
def test_mmd2_matches_double_sum(spec, rng):
    a = DiscreteMeasure(rng.normal(size=(6, 2)), rng.dirichlet(np.ones(6)))
    b = DiscreteMeasure(rng.normal(size=(4, 2)), rng.dirichlet(np.ones(4)))
    assert mmd2(spec, a, b) == pytest.approx(brute_mmd2(spec, a, b), rel=1e-12)


def test_identical_measures_give_exact_zero(rng):
    a = DiscreteMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
    assert mmd2(K, a, a) == 0.0
    shuffled = DiscreteMeasure(a.atoms[::-1], a.masses[::-1])
    assert mmd2(K, a, shuffled) == 0.0


def test_dimension_mismatch_rejected():
    with pytest.raises(InputError):
        mmd2(K, DiscreteMeasure([[0.0]], [1.0]), DiscreteMeasure([[0.0, 1.0]], [1.0]))


@settings(max_examples=40, deadline=None)
@given(arrays(float, (5, 2), elements=st.floats(-4, 4)), arrays(float, (3, 2), elements=st.floats(-4, 4)),
       arrays(float, 5, elements=st.floats(0.01, 1)), arrays(float, 3, elements=st.floats(0.01, 1)))
def test_mmd2_nonnegative_and_symmetric(xa, xb, wa, wb):
    a, b = DiscreteMeasure(xa, wa), DiscreteMeasure(xb, wb)
    v = mmd2(K, a, b)
    assert v >= -1e-12
    assert v == pytest.approx(mmd2(K, b, a), abs=1e-12)


def test_witness_definition(rng):
    a = DiscreteMeasure(rng.normal(size=(4, 1)), rng.dirichlet(np.ones(4)))
    b = DiscreteMeasure(rng.normal(size=(3, 1)), rng.dirichlet(np.ones(3)))
    x = np.array([0.3])
    ref = sum(m * kernel_eval(K, y, x) for y, m in zip(a.atoms, a.masses))
    ref -= sum(m * kernel_eval(K, y, x) for y, m in zip(b.atoms, b.masses))
    assert mmd_witness(K, a, b, x) == pytest.approx(ref, rel=1e-13)
    # mmd2 is the witness integrated against a - b
    total = a.masses @ witness(K, a, b, a.atoms) - b.masses @ witness(K, a, b, b.atoms)
    assert total == pytest.approx(mmd2(K, a, b), rel=1e-12)


def test_witness_grad_matches_finite_differences(rng):
    a = DiscreteMeasure(rng.normal(size=(4, 2)), rng.dirichlet(np.ones(4)))
    b = DiscreteMeasure(rng.normal(size=(3, 2)), rng.dirichlet(np.ones(3)))
    x = rng.normal(size=(3, 2))
    g = witness_grad(K, a, b, x)
    for i in range(3):
        fd = finite_diff_grad(lambda z: mmd_witness(K, a, b, z), x[i])
        assert np.allclose(g[i], fd, atol=1e-9)


def test_ksd_equals_mmd_against_empty(rng):
    s = SteinKernel(K, Target.gaussian([0.0], [[1.0]]))
    mu = DiscreteMeasure(rng.normal(size=(6, 1)), rng.dirichlet(np.ones(6)))
    assert ksd2(s, mu) == pytest.approx(mmd2(s, mu, empty_measure(1)), rel=1e-12)
    assert ksd2(s, mu) >= 0


def test_ksd_shrinks_toward_target():
    s = SteinKernel(K, Target.gaussian([0.0], [[1.0]]))
    q = np.linspace(-3, 3, 400)[:, None]
    good = DiscreteMeasure(q, np.exp(-0.5 * q[:, 0] ** 2))
    bad = DiscreteMeasure(q + 2.0, np.exp(-0.5 * q[:, 0] ** 2))
    assert ksd2(s, good.normalized()) < 1e-3 < ksd2(s, bad.normalized())


def test_moment_error():
    t = Target.gaussian([1.0, 0.0], np.eye(2))
    e = Ensemble([[1.0, 1.0], [1.0, -1.0]])
    mean_err, cov_err = moment_error(e, t)
    assert mean_err == pytest.approx(0.0)
    # ensemble covariance is diag(0, 1)
    assert cov_err == pytest.approx(1.0)


def test_metrics_record_csv():
    r = MetricsRecord(3, 0.30000000000000004, 0.25, None, 1e-3, 2.0)
    assert r.to_csv_row() == "3,0.30000000000000004,0.25,,0.001,2.0"
    buf = io.StringIO()
    write_metrics_csv(buf, [r])
    assert buf.getvalue().splitlines()[0] == CSV_HEADER == "step,time,mmd2,ksd2,mean_err,cov_err"
    with pytest.raises(InputError):
        MetricsRecord(0, 0.0, -1e-6, None, None, None)
