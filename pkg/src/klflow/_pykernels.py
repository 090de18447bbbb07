"""Pure NumPy implementations of the pairwise kernel sums.

Both kernel families are radial, ``k(x, y) = phi(u)`` with ``u = |x - y|^2``.
Every routine here is written in terms of the profile ``phi`` and its first
three derivatives in ``u``; the compiled core in ``_ckernels.pyx`` follows the
same algebra loop by loop.

Family codes: 0 = gaussian (p1 = sigma), 1 = inverse multiquadric (p1 = c,
p2 = beta).
"""

import numpy as np

GAUSSIAN = 0
IMQ = 1

# rows of the pairwise block processed at once; bounds peak memory
_BLOCK = 256


def radial_profile(u, family, p1, p2):
    """Return ``phi, phi', phi'', phi'''`` evaluated at squared distances ``u``."""
    u = np.asarray(u, dtype=float)
    if family == GAUSSIAN:
        a = 1.0 / (2.0 * p1 * p1)
        phi = np.exp(-a * u)
        return phi, -a * phi, a * a * phi, -a * a * a * phi
    q = p1 * p1 + u
    phi = q ** (-p2)
    d1 = -p2 * phi / q
    d2 = p2 * (p2 + 1.0) * phi / (q * q)
    d3 = -p2 * (p2 + 1.0) * (p2 + 2.0) * phi / (q * q * q)
    return phi, d1, d2, d3


def gram(x, y, family, p1, p2):
    """Matrix ``K[i, j] = k(x_i, y_j)``."""
    u = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return radial_profile(u, family, p1, p2)[0]


def grad2_sum(src, w, dst, family, p1, p2):
    """``out[i] = sum_j w_j * grad_2 k(src_j, dst_i)``.

    With ``r = src_j - dst_i`` the second-argument gradient is
    ``-2 phi'(|r|^2) r``.
    """
    out = np.empty_like(dst, dtype=float)
    for lo in range(0, dst.shape[0], _BLOCK):
        d = dst[lo:lo + _BLOCK]
        r = src[None, :, :] - d[:, None, :]
        u = np.sum(r * r, axis=-1)
        _, d1, _, _ = radial_profile(u, family, p1, p2)
        out[lo:lo + _BLOCK] = np.einsum("ij,ijk->ik", -2.0 * d1 * w[None, :], r)
    return out


def stein_gram(x, sx, y, sy, family, p1, p2):
    """Matrix of Stein kernel values ``s(x_i, y_j)`` given scores at both sides."""
    dim = x.shape[1]
    r = x[:, None, :] - y[None, :, :]
    u = np.sum(r * r, axis=-1)
    phi, d1, d2, _ = radial_profile(u, family, p1, p2)
    trace = -2.0 * dim * d1 - 4.0 * d2 * u
    # r . (s_y - s_x)
    cross = np.einsum("ijk,jk->ij", r, sy) - np.einsum("ijk,ik->ij", r, sx)
    return trace + 2.0 * d1 * cross + phi * (sx @ sy.T)


def stein_grad2_sum(x, w, s, jac, family, p1, p2):
    """``out[i] = sum_j w_j * grad_2 s(x_j, x_i)`` for the ensemble's own atoms.

    ``s`` holds scores at ``x`` and ``jac`` the score Jacobians
    (``jac[i, a, b] = d s_a / d x_b`` at ``x_i``).
    """
    n, dim = x.shape
    out = np.empty((n, dim))
    for lo in range(0, n, _BLOCK):
        hi = min(lo + _BLOCK, n)
        xi = x[lo:hi]
        si = s[lo:hi]
        ji = jac[lo:hi]
        # r[i, j] = x_j - x_i, i.e. first argument minus second
        r = x[None, :, :] - xi[:, None, :]
        u = np.sum(r * r, axis=-1)
        phi, d1, d2, d3 = radial_profile(u, family, p1, p2)
        ww = w[None, :]
        diff = s[None, :, :] - si[:, None, :]  # s_x - s_y
        rd = -np.einsum("ijk,ijk->ij", r, diff)  # r . (s_y - s_x)
        dots = s @ si.T  # [j, i] -> s_x . s_y
        coef_r = (4.0 * (dim + 2) * d2 + 8.0 * d3 * u
                  - 4.0 * d2 * rd - 2.0 * d1 * dots.T)
        acc = np.einsum("ij,ijk->ik", coef_r * ww, r)
        acc += np.einsum("ij,ijk->ik", 2.0 * d1 * ww, diff)
        # J_y^T applied to sum_j w_j (2 phi' r + phi s_x)
        v = (np.einsum("ij,ijk->ik", 2.0 * d1 * ww, r)
             + (phi * ww) @ s)
        acc += np.einsum("iba,ib->ia", ji, v)
        out[lo:hi] = acc
    return out
