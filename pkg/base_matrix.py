#!/usr/bin/env python3
# Base matrices W defining the block variance structure of SC-SPARC design matrices

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils import ConfigError, check_positive

logger = logging.getLogger(__name__)

POWER_TOLERANCE = 1e-9  # relative


@dataclass(frozen=True, eq=False)
class BaseMatrix:
    """
    L_R x L_C matrix of nonnegative variance scales.

    `omega` and `Lambda` are set only when the matrix was built by
    build_omega_lambda.
    """
    entries: np.ndarray
    omega: Optional[int] = None
    Lambda: Optional[int] = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.size == 0:
            raise ConfigError(f"Base matrix must be a nonempty 2-D array, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)) or np.any(entries < 0):
            raise ConfigError("Base matrix entries must be finite and nonnegative")
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def L_R(self):
        return self.entries.shape[0]

    @property
    def L_C(self):
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    @property
    def P(self):
        return float(self.entries.mean())

    @property
    def kappa(self):
        return self.L_R / self.L_C

    @property
    def is_omega_lambda(self):
        return self.omega is not None and self.Lambda is not None

    def label(self):
        if self.is_omega_lambda:
            return f"omega={self.omega},Lambda={self.Lambda}"
        return f"{self.L_R}x{self.L_C}"

    def nonzero_blocks(self):
        """(r, c) pairs of the nonzero entries, row-major."""
        rows, cols = np.nonzero(self.entries)
        return list(zip(rows.tolist(), cols.tolist()))


def build_omega_lambda(omega, Lambda, P):
    """
    Construct the (omega, Lambda) band base matrix.

    Column c has omega identical nonzeros P*(Lambda+omega-1)/omega in rows
    c..c+omega-1, so L_R = Lambda+omega-1 and L_C = Lambda.

    Args:
        omega (int): Coupling width, at least 1
        Lambda (int): Coupling length, at least 2*omega-1
        P (float): Average power

    Returns:
        BaseMatrix: The band matrix
    """
    omega = check_positive('omega', omega, integer=True)
    Lambda = check_positive('Lambda', Lambda, integer=True)
    P = check_positive('P', P)
    if Lambda < 2 * omega - 1:
        raise ConfigError(f"Lambda={Lambda} must be at least 2*omega-1={2 * omega - 1}")

    L_R = Lambda + omega - 1
    value = P * L_R / omega
    W = np.zeros((L_R, Lambda))
    for c in range(Lambda):
        W[c:c + omega, c] = value

    return BaseMatrix(W, omega=omega, Lambda=Lambda)


def flat_base_matrix(P):
    """1x1 base matrix [P]: a standard SPARC without power allocation."""
    P = check_positive('P', P)
    return BaseMatrix(np.array([[P]]), omega=1, Lambda=1)


def single_row_base_matrix(P, L, powers=None):
    """
    1 x L base matrix, equivalent to a standard SPARC with power allocation.

    No allocation is designed here; `powers` defaults to a flat allocation.
    Supplied powers are rescaled to average P.
    """
    P = check_positive('P', P)
    L = check_positive('L', L, integer=True)
    if powers is None:
        powers = np.full(L, P)
    powers = np.asarray(powers, dtype=float).ravel()
    if powers.size != L:
        raise ConfigError(f"Power allocation must have L={L} entries, got {powers.size}")
    if np.any(powers < 0) or powers.sum() <= 0:
        raise ConfigError("Power allocation must be nonnegative with positive total")
    return BaseMatrix((powers * (P / powers.mean()))[np.newaxis, :])


def validate_power(W, P, tol=POWER_TOLERANCE):
    """
    Check the average power constraint mean(W) == P.

    Args:
        W (BaseMatrix or array): Base matrix
        P (float): Average power
        tol (float): Relative tolerance

    Returns:
        bool: True when the mean entry is within tol*P of P
    """
    entries = W.entries if isinstance(W, BaseMatrix) else np.asarray(W, dtype=float)
    if entries.size == 0:
        raise ConfigError("Base matrix is empty")
    return bool(abs(entries.mean() - P) <= tol * abs(P))


def from_entries(entries, P=None, tol=POWER_TOLERANCE):
    """
    Wrap a user-supplied matrix, checking the power constraint when P is given.
    """
    W = BaseMatrix(np.asarray(entries, dtype=float))
    if P is not None and not validate_power(W, P, tol):
        raise ConfigError(f"Base matrix mean {W.P:.9g} violates the power constraint P={P:.9g}")
    if np.any(W.entries.sum(axis=0) == 0):
        raise ConfigError("Base matrix has an all-zero column")
    return W


def rate_relation(R, omega, Lambda):
    """
    Inner rate of each nonzero block: R_inner = R*(Lambda+omega-1)/Lambda.

    The ratio is unit-free, so R may be in bits or nats.
    """
    R = check_positive('R', R)
    omega = check_positive('omega', omega, integer=True)
    Lambda = check_positive('Lambda', Lambda, integer=True)
    if Lambda < 2 * omega - 1:
        raise ConfigError(f"Lambda={Lambda} must be at least 2*omega-1={2 * omega - 1}")
    return R * (Lambda + omega - 1) / Lambda


def row_nonzero_counts(W):
    return np.count_nonzero(W.entries, axis=1)


def load_csv(path, P=None):
    """Read a comma-separated base matrix, one row per line."""
    if not os.path.exists(path):
        raise ConfigError(f"Base matrix file not found: {path}")
    try:
        entries = np.loadtxt(path, delimiter=',', ndmin=2)
    except ValueError as e:
        raise ConfigError(f"Could not parse base matrix {path}: {e}") from None
    logger.info("Loaded %dx%d base matrix from %s", entries.shape[0], entries.shape[1], path)
    return from_entries(entries, P=P)


def save_csv(W, path):
    np.savetxt(path, W.entries, delimiter=',', fmt='%.17g')
    logger.info("Wrote %s base matrix to %s", W.label(), path)
