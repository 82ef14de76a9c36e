"""Gaussian-kernel machinery behind the Kameleon proposal.

The proposal at state ``y`` given a subsample ``z`` of the chain history is

    N(y, gamma^2 I + nu^2 M H M^T),   M = 2 eta [grad_x k(x, z_1)|_{x=y}, ...]

with ``H`` the centering matrix.  ``eta`` and ``nu`` only enter through the
product ``nu * eta``.

``eta`` has units of squared state distance.  Left unset it defaults to
``sigma^2 / (2 sqrt(n))``, which turns ``nu^2 M H M^T`` into ``nu^2`` times a
kernel-weighted covariance of the subsample around ``y`` (the same role the
sample covariance plays in adaptive Metropolis).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from . import _kernels
from .errors import GraspMCError


@dataclass(frozen=True)
class KernelConfig:
    """Kernel bandwidth and gradient step size.

    ``sigma=None`` selects the median heuristic, evaluated on the subsample
    each time it is refreshed; ``eta=None`` the bandwidth-scaled step size.
    ``scale`` optionally weights coordinates inside the kernel distance.
    """

    sigma: float | None = None
    eta: float | None = None
    scale: tuple | None = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise GraspMCError("bad-kernel", f"sigma={self.sigma}")
        if self.eta is not None and not self.eta > 0:
            raise GraspMCError("bad-kernel", f"eta={self.eta}")

    def step_size(self, sigma, n):
        if self.eta is not None:
            return self.eta
        return sigma * sigma / (2.0 * np.sqrt(max(n, 1)))

    def scale_vector(self, d):
        if self.scale is None:
            return np.ones(d)
        s = np.asarray(self.scale, dtype=float)
        if s.shape != (d,):
            raise GraspMCError("bad-kernel", f"scale has shape {s.shape}, state dim is {d}")
        return s

    def bandwidth(self, z):
        return self.sigma if self.sigma is not None else median_bandwidth(z, self.scale)


def median_bandwidth(z, scale=None):
    """Median pairwise distance of ``z``.

    Falls back to the mean of the non-zero distances when more than half the
    pairs coincide, and to 1 when every point coincides or ``len(z) < 2``.
    """
    z = np.asarray(z, dtype=float)
    if len(z) < 2:
        return 1.0
    if scale is not None:
        z = z * np.asarray(scale, dtype=float)
    dist = pdist(z)
    med = float(np.median(dist))
    if med > 0:
        return med
    nz = dist[dist > 0]
    return float(nz.mean()) if len(nz) else 1.0


def _bw(cfg, sigma):
    if sigma is not None:
        return sigma
    if cfg.sigma is None:
        raise GraspMCError("bad-kernel", "no bandwidth: pass sigma or set KernelConfig.sigma")
    return cfg.sigma


def gauss_kernel(x, y, cfg, sigma=None):
    """``exp(-|x - y|^2 / (2 sigma^2))``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = _bw(cfg, sigma)
    diff = (x - y) * cfg.scale_vector(len(x))
    return float(np.exp(-(diff @ diff) / (2.0 * s * s)))


def kernel_gradient(x, z, cfg, sigma=None):
    """Gradient of ``gauss_kernel(x, z)`` with respect to ``x``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    s = _bw(cfg, sigma)
    s2 = cfg.scale_vector(len(x)) ** 2
    return -s2 * (x - z) / (s * s) * gauss_kernel(x, z, cfg, s)


def gradient_matrix(z, y, cfg, sigma=None):
    """``d x n`` matrix whose column ``i`` is ``2 eta grad_x k(y, z_i)``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1, len(y))
    eta = cfg.step_size(_bw(cfg, sigma), len(z))
    cols = [2.0 * eta * kernel_gradient(y, zi, cfg, sigma) for zi in z]
    return np.array(cols).T.reshape(len(y), len(z))


def centering_matrix(n):
    if n < 1:
        raise GraspMCError("empty-centering")
    return np.eye(n) - np.full((n, n), 1.0 / n)


def proposal_covariance(z, y, gamma, nu, cfg, sigma=None):
    """``gamma^2 I + nu^2 M H M^T`` at ``y``, symmetrised.

    With an empty subsample this is exactly ``gamma^2 I``.  ``sigma`` overrides
    the bandwidth; otherwise ``cfg.sigma`` or the median heuristic on ``z``.

    Rounding in ``M H M^T`` can leave eigenvalues a few ulps of its trace
    below zero, so the backends add a diagonal margin of that size (zero
    when the adaptive term vanishes) to keep the spectrum at or above
    ``gamma^2``.
    """
    if not gamma > 0:
        raise GraspMCError("bad-gamma", f"gamma={gamma}")
    y = np.ascontiguousarray(y, dtype=float)
    z = np.ascontiguousarray(np.asarray(z, dtype=float).reshape(-1, len(y)))
    if sigma is None:
        sigma = cfg.bandwidth(z)
    eta = cfg.step_size(sigma, len(z))
    return _kernels.kameleon_cov(z, y, float(sigma), float(eta), float(nu),
                                 float(gamma), cfg.scale_vector(len(y)))
