#!/usr/bin/env python3
# Code parameters, block bookkeeping and rate units for SC-SPARCs

import logging
import math
from dataclasses import dataclass

import numpy as np

from utils import ConfigError, check_positive

logger = logging.getLogger(__name__)

RATE_UNITS = ('bits', 'nats')
# Largest rounding step for a code length shared by several base matrices, relative to L ln M / R
SHARED_LENGTH_TOL = 0.01


def convert_rate(value, from_unit, to_unit):
    """
    Convert a rate between bits and nats per transmission.

    Args:
        value (float): Rate expressed in `from_unit`
        from_unit (str): 'bits' or 'nats'
        to_unit (str): 'bits' or 'nats'

    Returns:
        float: Rate expressed in `to_unit`
    """
    for unit in (from_unit, to_unit):
        if unit not in RATE_UNITS:
            raise ConfigError(f"Unknown rate unit {unit!r}, expected one of {RATE_UNITS}")
    if from_unit == to_unit:
        return value
    if from_unit == 'bits':
        return value * math.log(2)
    return value / math.log(2)


@dataclass(frozen=True)
class CodeParams:
    """
    Scalar parameters of an SC-SPARC. All rates are in nats.

    `R` is the requested rate; `n` is the code length actually used, so the
    rate carried by the code is `R_effective = L ln M / n`.
    """
    L: int
    M: int
    R: float
    P: float
    sigma2: float
    L_R: int
    L_C: int
    n: int

    def __post_init__(self):
        for name in ('L', 'M', 'L_R', 'L_C', 'n'):
            check_positive(name, getattr(self, name), integer=True)
        for name in ('R', 'P', 'sigma2'):
            check_positive(name, getattr(self, name))
        if self.L % self.L_C != 0:
            raise ConfigError(f"L_C={self.L_C} must divide L={self.L}")
        if self.n % self.L_R != 0:
            raise ConfigError(f"L_R={self.L_R} must divide n={self.n}")

    @property
    def M_R(self):
        return self.n // self.L_R

    @property
    def M_C(self):
        return self.M * self.L // self.L_C

    @property
    def sections_per_block(self):
        return self.L // self.L_C

    @property
    def kappa(self):
        # Equals (Lambda + omega - 1) / Lambda for an (omega, Lambda) base matrix
        return self.L_R / self.L_C

    @property
    def snr(self):
        return self.P / self.sigma2

    @property
    def capacity(self):
        return 0.5 * math.log1p(self.snr)

    @property
    def R_effective(self):
        return self.L * math.log(self.M) / self.n

    @property
    def R_inner(self):
        return self.kappa * self.R_effective

    def rate_bits(self, effective=True):
        rate = self.R_effective if effective else self.R
        return convert_rate(rate, 'nats', 'bits')

    def layout(self):
        return BlockLayout.from_params(self)


def derive_dimensions(L, M, R_target, L_R, L_C, P=1.0, sigma2=1.0, n=None):
    """
    Derive the code length for a target rate.

    n is L ln M / R rounded to the nearest multiple of L_R, so that every row
    block has the same size. A given n (see shared_code_length) must already
    be a multiple of L_R.

    Args:
        L (int): Number of sections
        M (int): Columns per section
        R_target (float): Target rate in nats per transmission
        L_R (int): Base matrix rows
        L_C (int): Base matrix columns
        P (float): Average power
        sigma2 (float): Noise variance
        n (int, optional): Code length to use instead of the rounded one

    Returns:
        CodeParams: Parameters with n filled in
    """
    L = check_positive('L', L, integer=True)
    M = check_positive('M', M, integer=True)
    R_target = check_positive('R', R_target)
    L_R = check_positive('L_R', L_R, integer=True)
    L_C = check_positive('L_C', L_C, integer=True)
    if L % L_C != 0:
        raise ConfigError(f"L_C={L_C} must divide L={L}")
    if M < 2:
        raise ConfigError(f"M must be at least 2, got {M}")

    n_raw = L * math.log(M) / R_target
    if n is None:
        n = int(math.floor(n_raw / L_R + 0.5)) * L_R
    else:
        n = check_positive('n', n, integer=True)
        if n % L_R:
            raise ConfigError(f"L_R={L_R} must divide n={n}")
    if n == 0:
        raise ConfigError(f"Rate {R_target} nats is too high: code length rounds to 0")

    params = CodeParams(L=L, M=M, R=R_target, P=P, sigma2=sigma2, L_R=L_R, L_C=L_C, n=n)
    logger.debug("Derived n=%d (unrounded %.3f), R_effective=%.6f nats",
                 n, n_raw, params.R_effective)
    return params


def shared_code_length(L, M, R_target, L_R_values, tol=SHARED_LENGTH_TOL):
    """
    One code length for several base matrices at the same rate.

    n is L ln M / R rounded to the nearest multiple of lcm(L_R_values). When
    that step exceeds `tol` of the unrounded length, equal row blocks cannot
    give every base matrix the same n and None is returned; callers then
    round per base matrix.

    Args:
        L (int): Number of sections
        M (int): Columns per section
        R_target (float): Target rate in nats per transmission
        L_R_values (iterable): Row counts of the base matrices
        tol (float): Largest admissible relative rounding step

    Returns:
        int or None: Common code length
    """
    L_R_values = [check_positive('L_R', v, integer=True) for v in L_R_values]
    if not L_R_values:
        raise ConfigError("Need at least one base matrix")
    n_raw = L * math.log(check_positive('M', M, integer=True)) / check_positive('R', R_target)
    step = math.lcm(*L_R_values)
    if step > tol * n_raw:
        return None
    n = int(math.floor(n_raw / step + 0.5)) * step
    return n or None


class BlockLayout:
    """
    Index maps between rows/columns of A and the blocks of the base matrix.

    Rows are grouped in L_R consecutive runs of M_R, columns in L_C runs of
    M_C, and columns in L sections of M.
    """

    def __init__(self, n, L, M, L_R, L_C):
        self.n = n
        self.L = L
        self.M = M
        self.L_R = L_R
        self.L_C = L_C
        self.M_R = n // L_R
        self.M_C = M * L // L_C

    @classmethod
    def from_params(cls, params):
        return cls(params.n, params.L, params.M, params.L_R, params.L_C)

    def row_of(self, i):
        return np.asarray(i) // self.M_R

    def col_of(self, j):
        return np.asarray(j) // self.M_C

    def section_of(self, j):
        return np.asarray(j) // self.M

    def rows_of_block(self, r):
        return np.arange(r * self.M_R, (r + 1) * self.M_R)

    def cols_of_block(self, c):
        return np.arange(c * self.M_C, (c + 1) * self.M_C)

    def sections_of_block(self, c):
        per_block = self.L // self.L_C
        return np.arange(c * per_block, (c + 1) * per_block)

    def expand_rows(self, profile):
        """Repeat each of the L_R entries M_R times (length n)."""
        return np.repeat(np.asarray(profile, dtype=float), self.M_R)

    def expand_cols(self, profile):
        """Repeat each of the L_C entries M_C times (length ML)."""
        return np.repeat(np.asarray(profile, dtype=float), self.M_C)

    def block_sums(self, values):
        """Sum a length-ML vector over each column block."""
        return np.asarray(values).reshape(self.L_C, self.M_C).sum(axis=1)
