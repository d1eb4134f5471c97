#!/usr/bin/env python3
# SC-SPARC encoding, AWGN channel, AMP decoding and error metrics

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import softmax

from utils import ConfigError, DecodingError, is_power_of_2

logger = logging.getLogger(__name__)

STOP_TOL = 1e-8
PHI_FLOOR = 1e-12
EXPECT_ERROR_PSI = 1e-3
PHI_METHODS = ('residual', 'state_evolution')


@dataclass(frozen=True, eq=False)
class MessageVector:
    """
    Message with one unit entry per section.

    `indices[l]` is the 0-based position of the nonzero in section l.
    """
    indices: np.ndarray
    M: int

    def __post_init__(self):
        indices = np.array(self.indices, dtype=np.int64).ravel()
        if indices.size == 0:
            raise ConfigError("Message must have at least one section")
        if np.any(indices < 0) or np.any(indices >= self.M):
            raise ConfigError(f"Section indices must lie in [0, {self.M})")
        indices.setflags(write=False)
        object.__setattr__(self, 'indices', indices)

    @property
    def L(self):
        return self.indices.size

    def dense(self):
        beta = np.zeros(self.L * self.M)
        beta[np.arange(self.L) * self.M + self.indices] = 1.0
        return beta

    def __eq__(self, other):
        return (isinstance(other, MessageVector) and self.M == other.M
                and np.array_equal(self.indices, other.indices))

    @classmethod
    def random(cls, L, M, rng):
        """Uniform location in every section."""
        return cls(rng.integers(0, M, size=L), M)

    @classmethod
    def from_dense(cls, beta, M):
        beta = np.asarray(beta, dtype=float)
        if beta.size % M:
            raise ConfigError(f"Length {beta.size} is not a multiple of M={M}")
        sections = beta.reshape(-1, M)
        if not (np.all(np.count_nonzero(sections, axis=1) == 1) and np.all(sections.max(axis=1) == 1)):
            raise ConfigError("Dense message must have exactly one unit entry per section")
        return cls(sections.argmax(axis=1), M)

    @classmethod
    def from_bits(cls, bits, M):
        """log2(M) bits per section, most significant bit first."""
        if not is_power_of_2(M):
            raise ConfigError(f"Bit mapping needs a power-of-two M, got {M}")
        log_m = int(round(math.log2(M)))
        bits = np.asarray(bits, dtype=bool).ravel()
        if bits.size == 0 or bits.size % log_m:
            raise ConfigError(f"Bit count {bits.size} is not a positive multiple of log2(M)={log_m}")
        weights = 1 << np.arange(log_m)[::-1]
        return cls(bits.reshape(-1, log_m).astype(np.int64) @ weights, M)

    def to_bits(self):
        if not is_power_of_2(self.M):
            raise ConfigError(f"Bit mapping needs a power-of-two M, got {self.M}")
        log_m = int(round(math.log2(self.M)))
        shifts = np.arange(log_m)[::-1]
        return ((self.indices[:, np.newaxis] >> shifts) & 1).astype(bool).ravel()


@dataclass
class AmpTrace:
    """Per-iteration record of an AMP run. Index t of `nmse` refers to beta^t."""
    phi: List[np.ndarray] = field(default_factory=list)
    varsigma: List[np.ndarray] = field(default_factory=list)
    psi_hat: List[np.ndarray] = field(default_factory=list)
    nmse: List[np.ndarray] = field(default_factory=list)
    has_truth: bool = False
    iterations: int = 0
    converged: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def total_nmse(self):
        return [float(np.mean(v)) for v in self.nmse]

    @property
    def expect_error(self):
        if not self.psi_hat:
            return True
        return bool(np.mean(self.psi_hat[-1]) >= EXPECT_ERROR_PSI)

    def nmse_profile(self, length):
        """NMSE per block for t = 0..length-1, holding the last value after stopping."""
        if not self.nmse:
            raise DecodingError("Trace has no NMSE entries (decoder ran without the true message)")
        rows = list(self.nmse[:length])
        rows += [rows[-1]] * (length - len(rows))
        return np.vstack(rows)


def encode(message, op):
    """Codeword x = A beta."""
    if message.L * message.M != op.shape[1]:
        raise ConfigError(f"Message of length {message.L * message.M} does not match A with {op.shape[1]} columns")
    return op.forward(message.dense())


def awgn(x, sigma2, seed):
    """
    Add white Gaussian noise of variance sigma2.

    Args:
        x (numpy.ndarray): Codeword
        sigma2 (float): Noise variance, nonnegative
        seed: Anything accepted by numpy.random.default_rng

    Returns:
        numpy.ndarray: y = x + w
    """
    if sigma2 < 0:
        raise ConfigError(f"Noise variance must be nonnegative, got {sigma2}")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    return x + math.sqrt(sigma2) * rng.standard_normal(x.shape)


def denoise(s, varsigma, M):
    """
    Section-wise softmax of s / varsigma (the posterior mean of beta).

    Args:
        s (numpy.ndarray): Effective observation, length ML
        varsigma (array): Positive noise variance per column block (L_C entries)
        M (int): Section size

    Returns:
        numpy.ndarray: Length-ML estimate, each section summing to one
    """
    s = np.asarray(s, dtype=float)
    varsigma = np.atleast_1d(np.asarray(varsigma, dtype=float))
    if not np.all(varsigma > 0):
        raise ConfigError("varsigma must be positive")
    if s.size % varsigma.size or (s.size // varsigma.size) % M:
        raise ConfigError(f"Length {s.size} is not compatible with {varsigma.size} blocks of whole sections")
    scaled = s / np.repeat(varsigma, s.size // varsigma.size)
    # scipy subtracts the per-row maximum before exponentiating
    return softmax(scaled.reshape(-1, M), axis=1).ravel()


def hard_decision(beta, M):
    """Largest entry of each section; ties go to the smallest index."""
    beta = np.asarray(beta, dtype=float)
    if beta.size % M:
        raise ConfigError(f"Length {beta.size} is not a multiple of M={M}")
    return MessageVector(beta.reshape(-1, M).argmax(axis=1), M)


def section_error_rate(decoded, truth):
    if decoded.L != truth.L or decoded.M != truth.M:
        raise ConfigError("Messages have different dimensions")
    return float(np.mean(decoded.indices != truth.indices))


def bit_error_rate(decoded, truth):
    sent = truth.to_bits()
    return float(np.mean(decoded.to_bits() != sent))


def nmse_per_block(beta_t, truth, layout):
    """
    Normalised squared error of each column block.

    Args:
        beta_t (numpy.ndarray): Current estimate, length ML
        truth (MessageVector or numpy.ndarray): True message
        layout (BlockLayout): Block index maps

    Returns:
        tuple: (per-block NMSE array, SER upper bound 4 * mean NMSE)
    """
    true_beta = truth.dense() if isinstance(truth, MessageVector) else np.asarray(truth, dtype=float)
    beta_t = np.asarray(beta_t, dtype=float)
    if beta_t.shape != true_beta.shape or beta_t.size != layout.L * layout.M:
        raise ConfigError("Estimate and message dimensions differ")
    nmse = layout.block_sums((beta_t - true_beta) ** 2) / (layout.L / layout.L_C)
    return nmse, 4.0 * float(nmse.mean())


def default_max_iter(base):
    Lambda = base.Lambda if base.is_omega_lambda else base.L_C
    return 2 * math.ceil(Lambda / 2) + 25


def _check_dimensions(y, op, base, params):
    if base.shape != (params.L_R, params.L_C):
        raise ConfigError(f"Base matrix shape {base.shape} does not match parameters")
    if op.shape != (params.n, params.M * params.L):
        raise ConfigError(f"Operator shape {op.shape} does not match parameters")
    y = np.asarray(y, dtype=float)
    if y.shape != (params.n,):
        raise ConfigError(f"Channel output must have length n={params.n}, got {y.shape}")
    return y


def amp_decode(y, op, base, params, max_iter=None, stop_tol=STOP_TOL, true_beta=None,
               phi_method='residual', phi_floor=PHI_FLOOR):
    """
    AMP decoder for SC-SPARCs.

    Starts from beta^0 = 0 and z^{-1} = 0. Each iteration computes the
    Onsager coefficients (zero at t = 0), the residual z^t, the residual
    variances phi^t, the effective noise varsigma^t and then
    beta^{t+1} = denoise(beta^t + varsigma * A.T(z / phi), varsigma).
    Stops when ||beta^{t+1} - beta^t||^2 / ML < stop_tol or after max_iter
    iterations.

    Args:
        y (numpy.ndarray): Channel output, length n
        op (DesignOperator): Design operator used by the encoder
        base (BaseMatrix): Base matrix of the operator
        params (CodeParams): Code parameters
        max_iter (int, optional): Iteration cap, default from the base matrix
        stop_tol (float): Mean squared change stopping tolerance
        true_beta (MessageVector, optional): Enables NMSE tracking
        phi_method (str): 'residual' or 'state_evolution' phi estimate
        phi_floor (float): Smallest admissible phi entry

    Returns:
        tuple: (final estimate beta^T, AmpTrace)
    """
    y = _check_dimensions(y, op, base, params)
    if max_iter is None:
        max_iter = default_max_iter(base)
    if max_iter < 0:
        raise ConfigError(f"max_iter must be nonnegative, got {max_iter}")
    if phi_method not in PHI_METHODS:
        raise ConfigError(f"Unknown phi method {phi_method!r}, expected one of {PHI_METHODS}")

    layout = params.layout()
    W = base.entries
    per_block = params.L / params.L_C
    ML = params.M * params.L

    beta = np.zeros(ML)
    z_prev = np.zeros(params.n)
    phi_prev = None
    trace = AmpTrace(has_truth=true_beta is not None)
    if true_beta is not None:
        trace.nmse.append(nmse_per_block(beta, true_beta, layout)[0])

    for t in range(max_iter):
        psi_hat = 1.0 - layout.block_sums(beta ** 2) / per_block
        gamma = W @ psi_hat / params.L_C

        if t == 0:
            z = y - op.forward(beta)
        else:
            b = gamma / phi_prev
            z = y - op.forward(beta) + layout.expand_rows(b) * z_prev

        if phi_method == 'residual':
            phi = (z.reshape(params.L_R, params.M_R) ** 2).mean(axis=1)
        else:
            phi = params.sigma2 + gamma
        if np.any(phi <= phi_floor):
            phi = np.maximum(phi, phi_floor)
            trace.warnings.append(f"phi_floor@{t}")
            logger.warning("Iteration %d: residual variance clamped to %g", t, phi_floor)

        weight = W.T @ (1.0 / phi)
        if np.any(weight == 0):
            raise DecodingError("Base matrix has an all-zero column; varsigma is undefined")
        varsigma = (params.L / params.M_R) / weight

        s = beta + layout.expand_cols(varsigma) * op.scaled_adjoint(z, 1.0 / phi)
        beta_next = denoise(s, varsigma, params.M)

        change = float(np.sum((beta_next - beta) ** 2)) / ML
        beta, z_prev, phi_prev = beta_next, z, phi
        trace.phi.append(phi)
        trace.varsigma.append(varsigma)
        trace.psi_hat.append(1.0 - layout.block_sums(beta ** 2) / per_block)
        if true_beta is not None:
            trace.nmse.append(nmse_per_block(beta, true_beta, layout)[0])
        trace.iterations = t + 1
        logger.debug("AMP t=%d: mean phi %.4g, mean varsigma %.4g, change %.3g",
                     t, phi.mean(), varsigma.mean(), change)

        if change < stop_tol:
            trace.converged = True
            break

    return beta, trace


def amp_decode_uncoupled(y, op, params, max_iter=25, stop_tol=STOP_TOL, true_beta=None,
                         phi_floor=PHI_FLOOR):
    """
    AMP for standard SPARCs (1x1 base matrix [P]) with scalar phi and varsigma.

    Onsager coefficient P(1 - ||beta||^2 / L) / phi^{t-1}, varsigma = L phi / (n P).
    """
    if params.L_R != 1 or params.L_C != 1:
        raise ConfigError("Uncoupled AMP needs L_R = L_C = 1")
    y = np.asarray(y, dtype=float)
    ML = params.M * params.L
    n, L, P = params.n, params.L, params.P
    beta = np.zeros(ML)
    z_prev = np.zeros(n)
    phi_prev = None
    trace = AmpTrace(has_truth=true_beta is not None)
    truth = true_beta.dense() if true_beta is not None else None
    if truth is not None:
        trace.nmse.append(np.array([np.sum((beta - truth) ** 2) / L]))

    for t in range(max_iter):
        onsager = 0.0 if t == 0 else P * (1.0 - np.sum(beta ** 2) / L) / phi_prev
        z = y - op.forward(beta) + onsager * z_prev
        phi = max(float(np.mean(z ** 2)), phi_floor)
        varsigma = L * phi / (n * P)
        s = beta + (varsigma / phi) * op.adjoint(z)
        beta_next = denoise(s, varsigma, params.M)

        change = float(np.sum((beta_next - beta) ** 2)) / ML
        beta, z_prev, phi_prev = beta_next, z, phi
        trace.phi.append(np.array([phi]))
        trace.varsigma.append(np.array([varsigma]))
        trace.psi_hat.append(np.array([1.0 - np.sum(beta ** 2) / L]))
        if truth is not None:
            trace.nmse.append(np.array([np.sum((beta - truth) ** 2) / L]))
        trace.iterations = t + 1
        if change < stop_tol:
            trace.converged = True
            break

    return beta, trace
