#!/usr/bin/env python3
# State evolution for SC-SPARCs: exact (finite M) and asymptotic recursions, design bounds

import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp

from core_params import convert_rate
from utils import TAG_SE_SAMPLES, ConfigError, DecodingError, derive_rng

logger = logging.getLogger(__name__)

MC_SAMPLES = 10_000
SE_TOL = 1e-6
CHUNK_ENTRIES = 4_000_000  # Gaussians drawn per Monte Carlo chunk
CACHE_ENTRIES = 20_000_000  # keep SE samples in memory up to this size
QUADRATURE_MAX_M = 4
MAX_LAMBDA = 2 ** 40


class MseEstimate(NamedTuple):
    value: float
    stderr: float


@dataclass
class SeTrace:
    """
    State evolution profiles. psi[t] and phi[t] are psi^t and phi^t;
    tau/nu (exact mode) and decode_stat (asymptotic mode) are per iteration.
    """
    mode: str
    phi: List[np.ndarray] = field(default_factory=list)
    psi: List[np.ndarray] = field(default_factory=list)
    tau: List[np.ndarray] = field(default_factory=list)
    nu: List[np.ndarray] = field(default_factory=list)
    decode_stat: List[np.ndarray] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.psi) - 1

    @property
    def final_psi(self):
        return self.psi[-1]

    @property
    def decoded_fraction(self):
        """Fraction of columns with psi == 0 at each iteration (asymptotic mode)."""
        return [float(np.mean(p == 0)) for p in self.psi]

    @property
    def fully_decoded(self):
        return bool(np.all(self.psi[-1] == 0)) if self.mode == 'asymptotic' else bool(np.all(self.psi[-1] < 1e-3))

    def psi_profile(self, length):
        rows = list(self.psi[:length])
        rows += [rows[-1]] * (length - len(rows))
        return np.vstack(rows)


@dataclass(frozen=True)
class PropOneReport:
    omega: int
    Lambda: int
    snr: float
    R: float
    kappa: float
    rate_condition_ok: bool
    omega_threshold: float
    omega_condition_ok: bool
    c_star_lower_bound: int
    iteration_upper_bound: Optional[int]
    full_decode_first_iter: bool

    @property
    def R_bits(self):
        return convert_rate(self.R, 'nats', 'bits')

    @property
    def rate_limit(self):
        """Largest rate allowed by the precondition, (1/2kappa) ln(1 + kappa snr)."""
        return math.log1p(self.kappa * self.snr) / (2 * self.kappa)


def _check_tau(tau):
    if not tau > 0 or not np.isfinite(tau):
        raise ConfigError(f"tau must be positive and finite, got {tau}")


def _ratios(tau, U):
    """Per-sample ratio of the denoiser MSE expectation, evaluated in log space."""
    x = U / math.sqrt(tau)
    x[:, 0] += 1.0 / tau
    return np.exp(x[:, 0] - logsumexp(x, axis=1))


def _estimate(ratios):
    n = ratios.size
    stderr = float(ratios.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MseEstimate(float(ratios.mean()), stderr)


def denoiser_mse(tau, M, n_samples=MC_SAMPLES, seed=0):
    """
    Monte Carlo estimate of E[tau] (probability-like term of the SE recursion).

    E = E[ e^{U_1/sqrt(tau)} / (e^{U_1/sqrt(tau)} + e^{-1/tau} sum_{j>=2} e^{U_j/sqrt(tau)}) ]
    with U_1..U_M i.i.d. N(0, 1).

    Args:
        tau (float): Effective noise variance, positive
        M (int): Section size
        n_samples (int): Number of draws of (U_1, ..., U_M)
        seed (int): Seed; equal seeds reuse the same draws

    Returns:
        MseEstimate: (value, standard error)
    """
    _check_tau(tau)
    if n_samples < 1:
        raise ConfigError(f"n_samples must be at least 1, got {n_samples}")
    if M < 2:
        raise ConfigError(f"M must be at least 2, got {M}")
    rng = derive_rng(seed, TAG_SE_SAMPLES)
    chunk = max(1, CHUNK_ENTRIES // M)
    ratios = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        stop = min(start + chunk, n_samples)
        ratios[start:stop] = _ratios(tau, rng.standard_normal((stop - start, M)))
    return _estimate(ratios)


def denoiser_mse_quadrature(tau, M, order=40):
    """
    Gauss-Hermite evaluation of the same expectation, for M <= 4.
    """
    _check_tau(tau)
    if not 2 <= M <= QUADRATURE_MAX_M:
        raise ConfigError(f"Quadrature supports 2 <= M <= {QUADRATURE_MAX_M}, got {M}")
    nodes, weights = hermegauss(order)
    weights = weights / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([nodes] * M), indexing='ij')
    U = np.stack([g.ravel() for g in grids], axis=1)
    w = np.ones(U.shape[0])
    for wgrid in np.meshgrid(*([weights] * M), indexing='ij'):
        w *= wgrid.ravel()
    return float(np.sum(w * _ratios(tau, U)))


def tau_from_nu(nu, M):
    return 1.0 / (nu * math.log(M))


def _column_weights(W, phi):
    """(1/L_R) sum_r W_rc / phi_r for every column."""
    weights = W.T @ (1.0 / phi) / W.shape[0]
    if np.any(weights == 0):
        raise DecodingError("Base matrix has an all-zero column")
    return weights


def se_recursion(base, params, T=None, n_samples=MC_SAMPLES, seed=0, tol=SE_TOL):
    """
    Exact state evolution at finite M.

    phi^t = sigma2 + W psi^t / L_C, tau^t_c = (R / ln M) / ((1/L_R) sum_r W_rc / phi_r),
    psi^{t+1} = 1 - E(tau^t). The Monte Carlo draws are shared by every
    column and iteration. R is the code's effective rate.

    Args:
        base (BaseMatrix): Base matrix
        params (CodeParams): Code parameters (M, sigma2, rate)
        T (int, optional): Iteration cap, default L_C + 25
        n_samples (int): Monte Carlo draws per expectation
        seed (int): Monte Carlo seed
        tol (float): Stop when max |psi^{t+1} - psi^t| < tol

    Returns:
        SeTrace: Exact-mode trace
    """
    W = base.entries
    R = params.R_effective
    M = params.M
    if T is None:
        T = base.L_C + 25
    if T < 1:
        raise ConfigError(f"T must be at least 1, got {T}")

    cached = None
    if n_samples * M <= CACHE_ENTRIES:
        cached = derive_rng(seed, TAG_SE_SAMPLES).standard_normal((n_samples, M))

    def expectation(tau):
        if cached is not None:
            return float(_ratios(tau, cached).mean())
        return denoiser_mse(tau, M, n_samples, seed).value

    trace = SeTrace(mode='exact')
    psi = np.ones(base.L_C)
    trace.psi.append(psi)
    for t in range(T):
        phi = params.sigma2 + W @ psi / base.L_C
        weights = _column_weights(W, phi)
        tau = (R / math.log(M)) / weights
        nu = weights / R
        # equal tau values share one evaluation (symmetric base matrices)
        unique_tau, inverse = np.unique(tau, return_inverse=True)
        values = np.array([expectation(v) for v in unique_tau])
        psi_next = 1.0 - values[inverse]

        trace.phi.append(phi)
        trace.tau.append(tau)
        trace.nu.append(nu)
        trace.psi.append(psi_next)
        logger.debug("SE t=%d: mean psi %.4g -> %.4g", t, psi.mean(), psi_next.mean())
        if np.max(np.abs(psi_next - psi)) < tol:
            trace.converged = True
            break
        psi = psi_next

    return trace


def asymptotic_se(base, sigma2, R):
    """
    Large-M state evolution for a general base matrix.

    psi^{t+1}_c = 0 iff (1/L_R) sum_r W_rc / phi_r^t > 2R (strict), otherwise 1.
    Runs until the 0/1 profile stops changing; psi[-1] is the fixed point and
    `iterations` the number of updates needed to reach it.

    Args:
        base (BaseMatrix): Base matrix
        sigma2 (float): Noise variance
        R (float): Rate in nats

    Returns:
        SeTrace: Asymptotic-mode trace
    """
    if not sigma2 > 0 or not R > 0:
        raise ConfigError("sigma2 and R must be positive")
    W = base.entries
    psi = np.ones(base.L_C)
    trace = SeTrace(mode='asymptotic')
    trace.psi.append(psi)
    for _ in range(base.L_C + 1):
        phi = sigma2 + W @ psi / base.L_C
        stat = _column_weights(W, phi)
        psi_next = np.where(stat > 2 * R, 0.0, 1.0)
        trace.phi.append(phi)
        trace.decode_stat.append(stat)
        if np.array_equal(psi_next, psi):
            trace.converged = True
            break
        trace.psi.append(psi_next)
        psi = psi_next
    return trace


def asymptotic_se_band(omega, Lambda, snr, R):
    """
    Closed-form asymptotic state evolution for an (omega, Lambda) base matrix.

    With sigma2 normalised to one,
    phi_r = 1 + (kappa snr / omega) * sum_{c = lo_r}^{hi_r} psi_c and column c
    decodes iff (snr / omega) sum_{r=c}^{c+omega-1} 1 / phi_r > 2R.
    Produces the same trace layout as asymptotic_se (phi in units of sigma2).
    """
    if Lambda < 2 * omega - 1 or omega < 1:
        raise ConfigError(f"Need omega >= 1 and Lambda >= 2*omega-1, got ({omega}, {Lambda})")
    if not snr > 0 or not R > 0:
        raise ConfigError("snr and R must be positive")
    L_R = Lambda + omega - 1
    kappa = L_R / Lambda
    r = np.arange(L_R)
    lo = np.maximum(r - omega + 1, 0)
    hi = np.minimum(r, Lambda - 1)

    psi = np.ones(Lambda)
    trace = SeTrace(mode='asymptotic')
    trace.psi.append(psi)
    for _ in range(Lambda + 1):
        csum = np.concatenate(([0.0], np.cumsum(psi)))
        phi = 1.0 + (kappa * snr / omega) * (csum[hi + 1] - csum[lo])
        rsum = np.concatenate(([0.0], np.cumsum(1.0 / phi)))
        stat = (snr / omega) * (rsum[np.arange(Lambda) + omega] - rsum[np.arange(Lambda)])
        psi_next = np.where(stat > 2 * R, 0.0, 1.0)
        trace.phi.append(phi)
        trace.decode_stat.append(stat)
        if np.array_equal(psi_next, psi):
            trace.converged = True
            break
        trace.psi.append(psi_next)
        psi = psi_next
    return trace


def proposition_one(omega, Lambda, snr, R):
    """
    Large-system decoding guarantees for an (omega, Lambda) base matrix.

    Evaluates the rate precondition R < ln(1 + kappa snr) / (2 kappa), the
    coupling-width threshold omega > (1/(e^{2 R kappa} - 1) - 1/(kappa snr))^{-1},
    the lower bound on c* (columns decoded per end in the first iteration),
    the iteration bound ceil(Lambda / (2 c*)) and the first-iteration
    full-decoding condition R < snr / (2 (1 + kappa snr)).

    Args:
        omega (int): Coupling width
        Lambda (int): Coupling length
        snr (float): P / sigma2
        R (float): Rate in nats

    Returns:
        PropOneReport: Evaluated bounds and conditions
    """
    if omega < 1 or Lambda < 2 * omega - 1:
        raise ConfigError(f"Need omega >= 1 and Lambda >= 2*omega-1, got ({omega}, {Lambda})")
    if not snr > 0 or not R > 0:
        raise ConfigError("snr and R must be positive")
    kappa = (Lambda + omega - 1) / Lambda
    ks = kappa * snr
    rate_ok = R < math.log1p(ks) / (2 * kappa)

    gap = 1.0 / math.expm1(2 * R * kappa) - 1.0 / ks
    threshold = 1.0 / gap if gap > 0 else math.inf
    omega_ok = rate_ok and omega > threshold

    c_star = 0
    if omega_ok:
        bound = omega * (1 + ks) / ks ** 2 * (math.log1p(ks) - 2 * R * kappa)
        c_star = max(0, min(omega - 1, math.floor(bound)))
    iteration_bound = math.ceil(Lambda / (2 * c_star)) if c_star >= 1 else None

    return PropOneReport(
        omega=omega, Lambda=Lambda, snr=snr, R=R, kappa=kappa,
        rate_condition_ok=rate_ok,
        omega_threshold=threshold,
        omega_condition_ok=omega_ok,
        c_star_lower_bound=c_star,
        iteration_upper_bound=iteration_bound,
        full_decode_first_iter=R < snr / (2 * (1 + ks)),
    )


def _design_ok(omega, Lambda, snr, R):
    report = proposition_one(omega, Lambda, snr, R)
    return report.rate_condition_ok and report.omega_condition_ok


def design_coupling(R, snr, max_omega=1000):
    """
    Pick (omega, Lambda) so that a rate R < capacity decodes in the large system limit.

    As Lambda grows kappa tends to one and the coupling-width threshold tends
    to (1/(e^{2R} - 1) - 1/snr)^{-1}; omega is the smallest integer above it.
    Lambda is the smallest value >= 2*omega-1 with kappa <= capacity/R for
    which both conditions of proposition_one hold. Both conditions only
    improve as Lambda grows, so it is found by doubling and bisection.

    Args:
        R (float): Rate in nats, below capacity
        snr (float): P / sigma2
        max_omega (int): Largest admissible coupling width

    Returns:
        PropOneReport: Report for the chosen pair
    """
    capacity = 0.5 * math.log1p(snr)
    if not 0 < R < capacity:
        raise ConfigError(f"Rate {R:.6g} nats must lie in (0, capacity={capacity:.6g})")
    kappa0 = capacity / R
    limit = 1.0 / (1.0 / math.expm1(2 * R) - 1.0 / snr)
    omega = math.floor(limit) + 1
    if omega > max_omega:
        raise ConfigError(f"Rate {R:.6g} nats needs omega >= {omega}, above max_omega={max_omega}")

    lo = 2 * omega - 1
    if omega > 1:
        lo = max(lo, math.ceil((omega - 1) / (kappa0 - 1)))
        while (lo + omega - 1) / lo > kappa0:
            lo += 1
    hi = lo
    while not _design_ok(omega, hi, snr, R):
        if hi > MAX_LAMBDA:
            raise ConfigError(f"No Lambda up to {MAX_LAMBDA} satisfies the conditions for omega={omega}")
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if _design_ok(omega, mid, snr, R):
            hi = mid
        else:
            lo = mid + 1

    logger.info("Coupling design for R=%.4g nats, snr=%.4g: omega=%d, Lambda=%d", R, snr, omega, hi)
    return proposition_one(omega, hi, snr, R)


def predicted_ser_bound(psi):
    return 4.0 * float(np.mean(psi))
