"""Hot inner loops, in a numba flavour and a pure-numpy flavour.

Both flavours compute the same quantities; the public names at the bottom
of the module are bound to one of them according to
:data:`graspmc._accel.USE_NUMBA`.  ``benchmarks/bench_kernels.py`` times
them against each other.
"""
import math

import numpy as np
from scipy.linalg import solve_triangular

from ._accel import USE_NUMBA, njit

LOG_2PI = math.log(2.0 * math.pi)
# diagonal margin, relative to the trace of the adaptive term, that keeps
# rounding from pushing covariance eigenvalues below gamma^2
ROUNDING_MARGIN = 64 * np.finfo(np.float64).eps


# ---------------------------------------------------------------------------
# rim detection: per-point squared norm of the summed neighbour vectors


@njit
def _neighbour_scores_nb(points, pairs):
    n = points.shape[0]
    acc = np.zeros((n, 3))
    counts = np.zeros(n, dtype=np.int64)
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        for c in range(3):
            v = points[j, c] - points[i, c]
            acc[i, c] += v
            acc[j, c] -= v
        counts[i] += 1
        counts[j] += 1
    scores = np.empty(n)
    for i in range(n):
        scores[i] = acc[i, 0] ** 2 + acc[i, 1] ** 2 + acc[i, 2] ** 2
    return scores, counts


def _neighbour_scores_np(points, pairs):
    n = points.shape[0]
    acc = np.zeros((n, 3))
    counts = np.zeros(n, dtype=np.int64)
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        v = points[j] - points[i]
        np.add.at(acc, i, v)
        np.add.at(acc, j, -v)
        np.add.at(counts, i, 1)
        np.add.at(counts, j, 1)
    return np.einsum("ij,ij->i", acc, acc), counts


# ---------------------------------------------------------------------------
# nearest point by exhaustive scan; ties go to the lowest index


@njit
def _nearest_index_nb(points, q):
    best = -1
    best_d2 = np.inf
    for i in range(points.shape[0]):
        d2 = 0.0
        for c in range(points.shape[1]):
            t = points[i, c] - q[c]
            d2 += t * t
        if d2 < best_d2:
            best_d2 = d2
            best = i
    return best, best_d2


def _nearest_index_np(points, q):
    d2 = np.sum((points - q) ** 2, axis=1)
    i = int(np.argmin(d2))
    return i, float(d2[i])


# ---------------------------------------------------------------------------
# Kameleon proposal covariance  gamma^2 I + nu^2 M H M^T
# with M = 2 eta [grad_x k(x, z_i)]_{x=y}, Gaussian k, per-coordinate scale s


@njit
def _kameleon_cov_nb(z, y, sigma, eta, nu, gamma, scale):
    n, d = z.shape
    s2 = scale * scale
    inv_s2 = 1.0 / (sigma * sigma)
    m = np.empty((n, d))
    for i in range(n):
        r2 = 0.0
        for c in range(d):
            t = y[c] - z[i, c]
            r2 += s2[c] * t * t
        k = np.exp(-0.5 * r2 * inv_s2)
        for c in range(d):
            m[i, c] = -2.0 * eta * s2[c] * (y[c] - z[i, c]) * inv_s2 * k
    cov = np.zeros((d, d))
    if n > 0:
        mean = np.zeros(d)
        for i in range(n):
            for c in range(d):
                mean[c] += m[i, c]
        for c in range(d):
            mean[c] /= n
        nu2 = nu * nu
        for i in range(n):
            for a in range(d):
                va = m[i, a] - mean[a]
                for b in range(a, d):
                    cov[a, b] += nu2 * va * (m[i, b] - mean[b])
        for a in range(d):
            for b in range(a + 1, d):
                cov[b, a] = cov[a, b]
        tr = 0.0
        for a in range(d):
            tr += cov[a, a]
        for a in range(d):
            cov[a, a] += ROUNDING_MARGIN * tr
    for a in range(d):
        cov[a, a] += gamma * gamma
    return cov


def _kameleon_cov_np(z, y, sigma, eta, nu, gamma, scale):
    d = y.shape[0]
    cov = gamma * gamma * np.eye(d)
    if z.shape[0] == 0:
        return cov
    s2 = scale * scale
    diff = y[None, :] - z
    k = np.exp(-0.5 * (diff * diff) @ s2 / (sigma * sigma))
    m = -2.0 * eta * diff * s2 / (sigma * sigma) * k[:, None]
    mc = m - m.mean(axis=0)
    quad = nu * nu * (mc.T @ mc)
    quad = 0.5 * (quad + quad.T)
    quad[np.diag_indices(d)] += ROUNDING_MARGIN * np.trace(quad)
    return cov + quad


# ---------------------------------------------------------------------------
# one Kameleon move: draw from N(x, C(x)), factor C(y), both log densities


@njit
def _mvn_logpdf_nb(v, mean, chol):
    d = v.shape[0]
    r = np.empty(d)
    quad = 0.0
    logdet = 0.0
    for i in range(d):
        t = v[i] - mean[i]
        for j in range(i):
            t -= chol[i, j] * r[j]
        r[i] = t / chol[i, i]
        quad += r[i] * r[i]
        logdet += np.log(chol[i, i])
    return -0.5 * quad - logdet - 0.5 * d * LOG_2PI


@njit
def _kameleon_move_nb(z, x, chol_x, sigma, eta, nu, gamma, scale, noise):
    d = x.shape[0]
    y = x.copy()
    for i in range(d):
        for j in range(i + 1):
            y[i] += chol_x[i, j] * noise[j]
    chol_y = np.linalg.cholesky(_kameleon_cov_nb(z, y, sigma, eta, nu, gamma, scale))
    return y, chol_y, _mvn_logpdf_nb(y, x, chol_x), _mvn_logpdf_nb(x, y, chol_y)


@njit
def _frozen_chain_nb(log_target, z, x, lp, chol_x, sigma, eta, nu, gamma, scale,
                     noise, log_u, thin, out, row):
    """Run ``len(log_u)`` Metropolis-Hastings steps with a fixed subsample.

    Keeps every ``thin``-th state in ``out`` starting at ``row``; returns the
    final state, its log density and factor, the next row and the number of
    accepted moves.
    """
    accepted = 0
    for i in range(log_u.shape[0]):
        y, chol_y, fwd, rev = _kameleon_move_nb(z, x, chol_x, sigma, eta, nu, gamma, scale,
                                                noise[i])
        lp_y = log_target(y)
        if log_u[i] < min(0.0, lp_y - lp + rev - fwd):
            x, lp, chol_x = y, lp_y, chol_y
            accepted += 1
        if (i + 1) % thin == 0:
            out[row] = x
            row += 1
    return x, lp, chol_x, row, accepted


def _mvn_logpdf_np(v, mean, chol):
    r = solve_triangular(chol, v - mean, lower=True, check_finite=False)
    return float(-0.5 * (r @ r) - np.log(np.diag(chol)).sum() - 0.5 * len(v) * LOG_2PI)


def _kameleon_move_np(z, x, chol_x, sigma, eta, nu, gamma, scale, noise):
    y = x + chol_x @ noise
    chol_y = np.linalg.cholesky(_kameleon_cov_np(z, y, sigma, eta, nu, gamma, scale))
    return y, chol_y, _mvn_logpdf_np(y, x, chol_x), _mvn_logpdf_np(x, y, chol_y)


NUMBA_KERNELS = {
    "neighbour_scores": _neighbour_scores_nb,
    "nearest_index": _nearest_index_nb,
    "kameleon_cov": _kameleon_cov_nb,
    "kameleon_move": _kameleon_move_nb,
    "mvn_logpdf": _mvn_logpdf_nb,
    "frozen_chain": _frozen_chain_nb,
}
NUMPY_KERNELS = {
    "neighbour_scores": _neighbour_scores_np,
    "nearest_index": _nearest_index_np,
    "kameleon_cov": _kameleon_cov_np,
    "kameleon_move": _kameleon_move_np,
    "mvn_logpdf": _mvn_logpdf_np,
    "frozen_chain": None,
}

_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS
BACKEND = "numba" if USE_NUMBA else "numpy"

neighbour_scores = _ACTIVE["neighbour_scores"]
nearest_index = _ACTIVE["nearest_index"]
kameleon_cov = _ACTIVE["kameleon_cov"]
kameleon_move = _ACTIVE["kameleon_move"]
mvn_logpdf = _ACTIVE["mvn_logpdf"]
frozen_chain = _ACTIVE["frozen_chain"]
