"""Random-walk and Kameleon Metropolis-Hastings chains with annealed acceptance.

Both samplers share the same target (see :mod:`graspmc.grasp_model`) and the
same acceptance rule::

    alpha = min(1, pi(g*) q(g | g*) / (pi(g) q(g* | g))) ** (1 / T)

with ``T`` falling geometrically from ``t0`` to ``tn``.  ``annealing_literal``
switches the exponent to ``T`` itself.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import GraspMCError
from .geometry import Grasp
from .history import ChainHistory, ChainRecord
from .kernel import KernelConfig, proposal_covariance

STATE_DIM = 7


# ---------------------------------------------------------------------------
# annealing


@dataclass(frozen=True)
class AnnealingSchedule:
    t0: float = 1.0
    tn: float = 0.05
    n_iters: int = 5000

    def __post_init__(self):
        if not (0 < self.tn <= self.t0):
            raise GraspMCError("bad-schedule", f"t0={self.t0}, tn={self.tn}")
        if self.n_iters < 1:
            raise GraspMCError("bad-schedule", f"n_iters={self.n_iters}")


def temperature(j, sched):
    """``max(tn, t0 * (tn / t0) ** (j / N))``; clamps to ``tn`` past ``N``."""
    if j <= 0:
        return sched.t0
    if j >= sched.n_iters:
        return sched.tn
    return max(sched.tn, sched.t0 * (sched.tn / sched.t0) ** (j / sched.n_iters))


def log_accept_prob(log_ratio, T, literal=False):
    """Log of the annealed acceptance probability for a log MH ratio."""
    if not T > 0:
        raise GraspMCError("bad-temperature", f"T={T}")
    power = T if literal else 1.0 / T
    return min(0.0, log_ratio) * power


def mh_accept(pi_new, pi_cur, q_fwd, q_rev, T, rng, literal=False, log_space=False):
    """Annealed Metropolis-Hastings decision.

    ``q_fwd`` is the density of the proposal given the current state,
    ``q_rev`` the reverse.  With ``log_space=True`` all four quantities are
    log densities.
    """
    if log_space:
        if pi_cur == -np.inf:
            raise GraspMCError("zero-current-density")
        log_ratio = pi_new - pi_cur + q_rev - q_fwd
    else:
        if not pi_cur > 0:
            raise GraspMCError("zero-current-density")
        if pi_new <= 0:
            return False
        log_ratio = (math.log(pi_new) - math.log(pi_cur)
                     + math.log(q_rev) - math.log(q_fwd))
    return math.log(rng.random()) < log_accept_prob(log_ratio, T, literal)


# ---------------------------------------------------------------------------
# von Mises-Fisher on S^3 and the random-walk proposal


def sample_vmf(mean, kappa, rng, size=None):
    """Draw from the von Mises-Fisher distribution on S^3 (Wood's rejection scheme).

    Parameters
    ----------
    mean : array_like, shape (4,)
        Unit modal direction.
    kappa : float
        Concentration, ``>= 0``; zero gives the uniform distribution.
    rng : numpy.random.Generator
    size : int, optional
        Number of draws.  ``None`` returns a single ``(4,)`` vector.
    """
    mu = np.asarray(mean, dtype=float)
    if mu.shape != (4,) or abs(np.linalg.norm(mu) - 1.0) > 1e-6:
        raise GraspMCError("non-unit-quaternion", f"vMF mean {mean!r}")
    if kappa < 0:
        raise GraspMCError("bad-kappa", f"kappa={kappa}")
    m = 1 if size is None else int(size)
    p1 = 3.0  # p - 1
    b = p1 / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + p1 * p1))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + p1 * math.log(1.0 - x0 * x0)

    w = np.empty(m)
    filled = 0
    while filled < m:
        k = max(16, 2 * (m - filled))
        zb = rng.beta(p1 / 2.0, p1 / 2.0, size=k)
        u = rng.random(size=k)
        wk = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb)
        ok = kappa * wk + p1 * np.log1p(-x0 * wk) - c >= np.log(u)
        got = wk[ok][: m - filled]
        w[filled:filled + len(got)] = got
        filled += len(got)

    # uniform tangent direction orthogonal to mu
    v = rng.standard_normal(size=(m, 4))
    v -= np.outer(v @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    out = w[:, None] * mu + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out[0] if size is None else out


@dataclass
class RwConfig:
    """Random-walk baseline: Gaussian position step, vMF orientation step."""

    sigma_pos: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    kappa: float = 5.0
    n_iters: int = 5000
    t0: float = 1.0
    tn: float = 0.05
    annealing_literal: bool = False
    seed: int | None = None

    def __post_init__(self):
        self.sigma_pos = np.array(self.sigma_pos, dtype=float).reshape(3, 3)
        if not np.allclose(self.sigma_pos, self.sigma_pos.T):
            raise GraspMCError("bad-config", "sigma_pos must be symmetric")
        if np.linalg.eigvalsh(self.sigma_pos).min() < 0:
            raise GraspMCError("bad-config", "sigma_pos must be positive semi-definite")
        if self.kappa < 0:
            raise GraspMCError("bad-config", f"kappa={self.kappa}")

    @property
    def schedule(self):
        return AnnealingSchedule(self.t0, self.tn, max(1, self.n_iters))

    def params(self):
        d = asdict(self)
        d["sigma_pos"] = self.sigma_pos.tolist()
        return d


def _psd_sqrt(cov):
    """A matrix ``L`` with ``L @ L.T == cov``; tolerates zero eigenvalues."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def rw_step(current, cfg, rng):
    """Random-walk proposal; symmetric, so no density correction is needed."""
    pos = current.position + _psd_sqrt(cfg.sigma_pos) @ rng.standard_normal(3)
    ori = sample_vmf(current.orientation, cfg.kappa, rng) if np.isfinite(cfg.kappa) \
        else current.orientation.copy()
    return Grasp(pos, ori)


# ---------------------------------------------------------------------------
# Kameleon


@dataclass
class KameleonConfig:
    """Kameleon chain parameters (burn-in, subsample size, step scales, annealing)."""

    n_iters: int = 5000
    burn_in: int = 1000
    subsample_size: int = 200
    gamma: float = 1e-4
    nu: float = 2.38 / math.sqrt(6.0)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    t0: float = 1.0
    tn: float = 0.05
    annealing_literal: bool = False
    seed: int | None = None
    random_init_size: int = 200

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = KernelConfig(**self.kernel)
        if not (0 <= self.burn_in <= self.n_iters):
            raise GraspMCError("bad-config", f"burn_in={self.burn_in}, n_iters={self.n_iters}")
        if self.subsample_size < 1:
            raise GraspMCError("bad-config", f"subsample_size={self.subsample_size}")
        if not self.gamma > 0:
            raise GraspMCError("bad-gamma", f"gamma={self.gamma}")

    @property
    def schedule(self):
        return AnnealingSchedule(self.t0, self.tn, max(1, self.n_iters))

    def params(self):
        d = asdict(self)
        d["kernel"] = {"sigma": self.kernel.sigma, "eta": self.kernel.eta,
                       "scale": None if self.kernel.scale is None else list(self.kernel.scale)}
        return d


class GaussianProposal:
    """State-dependent Gaussian ``N(y, C(y))`` with the Kameleon covariance."""

    def __init__(self, z, gamma, nu, kernel, sigma=None):
        self.z = np.ascontiguousarray(np.asarray(z, dtype=float).reshape(len(z), -1)) \
            if len(z) else np.zeros((0, STATE_DIM))
        self.gamma = gamma
        self.nu = nu
        self.kernel = kernel
        self.sigma = kernel.bandwidth(self.z) if sigma is None else sigma

    def covariance(self, y):
        z = self.z if len(self.z) else np.zeros((0, len(y)))
        return proposal_covariance(z, y, self.gamma, self.nu, self.kernel, sigma=self.sigma)

    def factor(self, y):
        cov = self.covariance(y)
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            # floor the spectrum at gamma^2 so the factor exists
            w, v = np.linalg.eigh(cov)
            w = np.maximum(w, self.gamma ** 2)
            return np.linalg.cholesky((v * w) @ v.T)

    def draw(self, y, rng, chol=None):
        chol = self.factor(y) if chol is None else chol
        return y + chol @ rng.standard_normal(len(y))

    def logpdf(self, x, y, chol=None):
        """``log N(x; y, C(y))``."""
        chol = self.factor(y) if chol is None else chol
        return float(_kernels.mvn_logpdf(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                                         chol))

    def move(self, x, rng, chol_x=None):
        """Draw ``y ~ N(x, C(x))``.

        Returns ``(y, chol_y, log q(y | x), log q(x | y))``; ``chol_y`` can be
        passed back as ``chol_x`` once the chain moves to ``y``.
        """
        x = np.ascontiguousarray(x, dtype=float)
        chol_x = self.factor(x) if chol_x is None else chol_x
        noise = rng.standard_normal(len(x))
        z = self.z if len(self.z) else np.zeros((0, len(x)))
        eta = self.kernel.step_size(self.sigma, len(z))
        try:
            y, chol_y, fwd, rev = _kernels.kameleon_move(
                z, x, chol_x, float(self.sigma), float(eta), float(self.nu), float(self.gamma),
                self.kernel.scale_vector(len(x)), noise)
        except np.linalg.LinAlgError:
            y = x + chol_x @ noise
            chol_y = self.factor(y)
            fwd, rev = self.logpdf(y, x, chol_x), self.logpdf(x, y, chol_y)
        return y, chol_y, float(fwd), float(rev)


class Proposal(NamedTuple):
    grasp: Grasp
    raw: np.ndarray
    log_q_fwd: float
    log_q_rev: float

    @property
    def q_fwd(self):
        return math.exp(self.log_q_fwd)

    @property
    def q_rev(self):
        return math.exp(self.log_q_rev)


def _propose(x, qdist, rng):
    raw, _, fwd, rev = qdist.move(x, rng)
    return raw, fwd, rev


def draw_subsample(pool, n, rng):
    """Up to ``n`` rows of ``pool`` drawn uniformly without replacement."""
    if len(pool) <= n:
        return pool.copy()
    idx = rng.choice(len(pool), size=n, replace=False)
    return pool[np.sort(idx)]


def kameleon_step(current, history, cfg, rng, z=None, sigma=None):
    """One Kameleon proposal from ``current``.

    ``z`` defaults to a fresh subsample of the chain states in ``history``
    (all proposals if fewer than two records were accepted).  The quaternion block of
    the draw is renormalised; both densities refer to the raw 7-D draw.
    """
    x = current.vector
    if z is None:
        if history is None or len(history) == 0:
            raise GraspMCError("no-init", "empty history and no subsample")
        if sum(r.accepted for r in history.records) >= 2:
            pool = history.chain_states()
        else:
            pool = history.proposals()
        z = draw_subsample(pool, cfg.subsample_size, rng)
    qdist = GaussianProposal(z, cfg.gamma, cfg.nu, cfg.kernel, sigma)
    raw, fwd, rev = _propose(x, qdist, rng)
    return Proposal(Grasp.from_vector(raw), raw, fwd, rev)


def run_frozen_kameleon(log_target, x0, z, gamma, nu, kernel, n_samples, rng, thin=1,
                        block=65536):
    """Non-adaptive Kameleon MH on R^d at unit temperature.

    ``z`` stays fixed for the whole run, so this is a plain (asymmetric)
    Metropolis-Hastings chain.  Returns ``(samples, acceptance_rate)`` with
    ``n_samples`` states kept every ``thin`` steps.

    When ``log_target`` is a numba-compiled function and numba is active the
    whole loop runs compiled.  Random numbers are drawn in blocks of
    ``block`` steps (normals first, then uniforms) on both paths, so a seed
    gives the same chain up to floating-point differences.
    """
    qdist = GaussianProposal(z, gamma, nu, kernel)
    x = np.array(x0, dtype=float)
    d = len(x)
    lp = float(log_target(x))
    chol_x = qdist.factor(x)
    out = np.empty((n_samples, d))
    total = n_samples * thin
    compiled = _kernels.BACKEND == "numba" and hasattr(log_target, "py_func")
    zz = qdist.z if len(qdist.z) else np.zeros((0, d))
    eta = float(kernel.step_size(qdist.sigma, len(zz)))
    scale = kernel.scale_vector(d)
    accepted = row = done = 0
    while done < total:
        m = min(block - block % thin or thin, total - done)
        noise = rng.standard_normal((m, d))
        log_u = np.log(rng.random(m))
        if compiled:
            x, lp, chol_x, row, acc = _kernels.frozen_chain(
                log_target, zz, x, lp, chol_x, float(qdist.sigma), eta, float(nu), float(gamma),
                scale, noise, log_u, thin, out, row)
            accepted += acc
        else:
            for i in range(m):
                y, chol_y, fwd, rev = _kernels.kameleon_move(
                    zz, x, chol_x, float(qdist.sigma), eta, float(nu), float(gamma), scale,
                    noise[i])
                lp_y = float(log_target(y))
                if log_u[i] < min(0.0, lp_y - lp + rev - fwd):
                    x, lp, chol_x = y, lp_y, chol_y
                    accepted += 1
                if (i + 1) % thin == 0:
                    out[row] = x
                    row += 1
        done += m
    return out, accepted / total


# ---------------------------------------------------------------------------
# full chains


@dataclass
class InitSpec:
    """How a chain starts.

    ``random``     fresh start (Kameleon also gets a random prior chain);
    ``chain``      reuse ``history`` as prior chain, start at record ``start_index``;
    ``subsample``  reuse the frozen subsample ``z``, start at ``start``, no burn-in.
    """

    mode: str = "random"
    history: ChainHistory | None = None
    start_index: int | None = None
    z: np.ndarray | None = None
    start: Grasp | None = None
    donor: str | None = None

    def __post_init__(self):
        if self.mode not in ("random", "chain", "subsample"):
            raise GraspMCError("bad-init", f"unknown mode {self.mode!r}")
        if self.mode == "chain" and (self.history is None or len(self.history) == 0):
            raise GraspMCError("bad-init", "chain mode needs a non-empty history")
        if self.mode == "subsample" and (self.z is None or len(self.z) == 0):
            raise GraspMCError("bad-init", "subsample mode needs a subsample")


class _StatePool:
    """Chain history for subsampling: one state per iteration, plus all proposals.

    The subsample is drawn from the chain states; while fewer than two
    distinct states have been accepted it falls back to the proposals.
    """

    def __init__(self, prior_states, prior_proposals, prior_distinct, capacity):
        self._states = np.empty((len(prior_states) + capacity, STATE_DIM))
        self._states[:len(prior_states)] = prior_states
        self.n_states = len(prior_states)
        self._all = np.empty((len(prior_proposals) + capacity, STATE_DIM))
        self._all[:len(prior_proposals)] = prior_proposals
        self.n_all = len(prior_proposals)
        self.n_distinct = prior_distinct

    def add(self, proposal, state, accepted):
        self._all[self.n_all] = proposal
        self.n_all += 1
        self._states[self.n_states] = state
        self.n_states += 1
        if accepted:
            self.n_distinct += 1

    def pool(self):
        if self.n_distinct >= 2:
            return self._states[:self.n_states]
        return self._all[:self.n_all]


def run_chain(target, init, cfg, rng=None, object_id=None):
    """Run a random-walk (``RwConfig``) or Kameleon (``KameleonConfig``) chain.

    Produces ``n_iters + 1`` records: the initial state followed by one
    record per iteration.  On failure the partial history is attached to the
    raised exception as ``partial_history`` with ``metadata["complete"] = False``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    kameleon = isinstance(cfg, KameleonConfig)
    if kameleon and init.mode == "subsample" and cfg.burn_in > 0:
        raise GraspMCError("subsample-mode-forbids-burnin", f"burn_in={cfg.burn_in}")

    meta = {
        "object": object_id if object_id is not None else getattr(target, "name", "object"),
        "seed": cfg.seed,
        "sampler": "kameleon" if kameleon else "rw",
        "params": cfg.params(),
        "init_mode": init.mode,
        "donor": init.donor,
        "transfer_mode": init.mode if init.mode in ("chain", "subsample") and init.donor else None,
        "frozen_subsample": None,
    }
    history = ChainHistory([], meta)

    # starting state and prior chain
    prior_states = np.zeros((0, STATE_DIM))
    prior_all = np.zeros((0, STATE_DIM))
    prior_distinct = 0
    z_frozen = None
    if init.mode == "chain":
        prior_states = init.history.chain_states()
        prior_all = init.history.proposals()
        prior_distinct = sum(r.accepted for r in init.history.records)
        idx = init.start_index
        if idx is None:
            idx = int(rng.integers(len(init.history)))
        start = init.history.records[idx].proposal
        meta["start_index"] = int(idx)
    elif init.mode == "subsample":
        z_frozen = np.array(init.z, dtype=float).reshape(-1, STATE_DIM)
        start = init.start if init.start is not None else Grasp.from_vector(z_frozen[-1])
        meta["frozen_subsample"] = z_frozen
    else:
        if kameleon and cfg.random_init_size > 0:
            prior_states = np.array([target.random_grasp(rng).vector
                                     for _ in range(cfg.random_init_size)])
            prior_all = prior_states
            prior_distinct = len(prior_states)
            start = Grasp.from_vector(prior_states[int(rng.integers(len(prior_states)))])
        else:
            start = init.start if init.start is not None else target.random_grasp(rng)

    sched = cfg.schedule
    literal = cfg.annealing_literal
    measure, feasible = target.evaluate(start)
    history.records.append(ChainRecord(0, start, measure, feasible, True, temperature(0, sched)))
    current, pi_cur = start, measure

    pool = None
    if kameleon:
        pool = _StatePool(prior_states, prior_all, prior_distinct, cfg.n_iters + 1)
        pool.add(start.vector, start.vector, True)
    qdist = None
    if kameleon and z_frozen is not None:
        qdist = GaussianProposal(z_frozen, cfg.gamma, cfg.nu, cfg.kernel)
    elif kameleon and cfg.burn_in == 0:
        qdist = GaussianProposal(np.zeros((0, STATE_DIM)), cfg.gamma, cfg.nu, cfg.kernel)

    try:
        for j in range(1, cfg.n_iters + 1):
            T = temperature(j, sched)
            if kameleon:
                if z_frozen is None and j <= cfg.burn_in:
                    z = draw_subsample(pool.pool(), cfg.subsample_size, rng)
                    qdist = GaussianProposal(z, cfg.gamma, cfg.nu, cfg.kernel)
                    if j == cfg.burn_in:
                        meta["frozen_subsample"] = z
                        meta["frozen_sigma"] = qdist.sigma
                raw, lq_fwd, lq_rev = _propose(current.vector, qdist, rng)
                cand = Grasp.from_vector(raw)
            else:
                cand = rw_step(current, cfg, rng)
                lq_fwd = lq_rev = 0.0
            m, feas = target.evaluate(cand)
            if m <= 0:
                log_ratio = -math.inf
            elif pi_cur <= 0:
                # started outside the workspace: any positive-density move is taken
                log_ratio = math.inf
            else:
                log_ratio = math.log(m) - math.log(pi_cur) + lq_rev - lq_fwd
            acc = math.log(rng.random()) < log_accept_prob(log_ratio, T, literal)
            history.records.append(ChainRecord(j, cand, m, feas, acc, T))
            if acc:
                current, pi_cur = cand, m
            if pool is not None:
                pool.add(cand.vector, current.vector, acc)
    except Exception as exc:
        meta["complete"] = False
        exc.partial_history = history
        raise
    meta["complete"] = True
    return history
