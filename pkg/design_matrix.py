#!/usr/bin/env python3
# Random design operators A with block-variance structure (Gaussian and subsampled Hadamard)

import logging
import math
import os
from abc import ABC, abstractmethod

import numpy as np

from utils import (TAG_GAUSSIAN_BLOCK, TAG_HADAMARD_COLS, TAG_HADAMARD_ROWS,
                   ConfigError, derive_rng)

logger = logging.getLogger(__name__)

BACKENDS = ('gaussian', 'hadamard')

# Gaussian blocks above this many stored entries are regenerated per multiply
DENSE_LIMIT = int(os.environ.get('SCSPARC_DENSE_LIMIT', 50_000_000))
# Entries per batched Hadamard transform (blocks x order)
FWHT_BATCH_ENTRIES = 2 ** 23


def fwht(x):
    """
    Fast Walsh-Hadamard transform along the last axis.

    Uses the Sylvester (natural) ordering, i.e. the same matrix as
    scipy.linalg.hadamard, without normalisation.

    Args:
        x (numpy.ndarray): Array whose last axis has power-of-two length

    Returns:
        numpy.ndarray: Transformed copy of x
    """
    x = np.array(x, dtype=float)
    size = x.shape[-1]
    if size & (size - 1):
        raise ConfigError(f"FWHT length must be a power of two, got {size}")
    lead = x.shape[:-1]
    h = 1
    while h < size:
        y = x.reshape(lead + (size // (2 * h), 2, h))
        a = y[..., 0, :]
        b = y[..., 1, :]
        x = np.stack((a + b, a - b), axis=-2).reshape(lead + (size,))
        h *= 2
    return x


class DesignOperator(ABC):
    """
    Linear operator for the n x ML design matrix A.

    Subclasses are read-only after construction, so one operator can be
    shared by concurrent decoders.
    """

    backend = None

    def __init__(self, params, base, seed):
        if base.shape != (params.L_R, params.L_C):
            raise ConfigError(
                f"Base matrix shape {base.shape} does not match L_R={params.L_R}, L_C={params.L_C}")
        self.params = params
        self.base = base
        self.seed = seed
        self.scale = np.sqrt(base.entries / params.L)
        self.blocks = base.nonzero_blocks()

    @property
    def shape(self):
        return (self.params.n, self.params.M * self.params.L)

    def _check(self, vector, length, name):
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (length,):
            raise ConfigError(f"{name} must have length {length}, got shape {vector.shape}")
        return vector

    @abstractmethod
    def _forward(self, beta):
        ...

    @abstractmethod
    def _adjoint(self, z):
        ...

    @abstractmethod
    def _dense_block(self, r, c):
        ...

    def forward(self, beta):
        """A @ beta for a length-ML vector."""
        beta = self._check(beta, self.shape[1], 'beta')
        return self._forward(beta)

    def adjoint(self, z):
        """A.T @ z for a length-n vector."""
        z = self._check(z, self.shape[0], 'z')
        return self._adjoint(z)

    def scaled_adjoint(self, z, phi_inv_profile):
        """
        A.T @ (z * phi_inv), with the L_R-long profile repeated M_R times.

        Args:
            z (numpy.ndarray): Length-n residual
            phi_inv_profile (array): Positive per-row-block weights

        Returns:
            numpy.ndarray: Length-ML vector
        """
        z = self._check(z, self.shape[0], 'z')
        profile = np.asarray(phi_inv_profile, dtype=float).ravel()
        if profile.size == 1:
            profile = np.full(self.params.L_R, profile[0])
        if profile.shape != (self.params.L_R,):
            raise ConfigError(f"Profile must have length L_R={self.params.L_R}, got {profile.size}")
        if not np.all(profile > 0):
            raise ConfigError("Residual variance profile must be positive")
        return self._adjoint(z * np.repeat(profile, self.params.M_R))

    def to_dense(self):
        """Materialise A; intended for small sizes."""
        p = self.params
        A = np.zeros(self.shape)
        for r, c in self.blocks:
            A[r * p.M_R:(r + 1) * p.M_R, c * p.M_C:(c + 1) * p.M_C] = self._dense_block(r, c)
        return A


class GaussianOperator(DesignOperator):
    """A_ij ~ N(0, W_rc / L), independent entries."""

    backend = 'gaussian'

    def __init__(self, params, base, seed, dense_limit=DENSE_LIMIT):
        super().__init__(params, base, seed)
        stored = len(self.blocks) * params.M_R * params.M_C
        self.regenerate = stored > dense_limit
        self._blocks = {}
        if self.regenerate:
            logger.warning("Gaussian operator needs %d entries (> %d): regenerating blocks per multiply",
                           stored, dense_limit)
        else:
            for r, c in self.blocks:
                self._blocks[(r, c)] = self._sample_block(r, c)

    def _sample_block(self, r, c):
        rng = derive_rng(self.seed, TAG_GAUSSIAN_BLOCK, r, c)
        return self.scale[r, c] * rng.standard_normal((self.params.M_R, self.params.M_C))

    def _dense_block(self, r, c):
        if self.regenerate:
            return self._sample_block(r, c)
        return self._blocks[(r, c)]

    def _forward(self, beta):
        p = self.params
        x = beta.reshape(p.L_C, p.M_C)
        out = np.zeros((p.L_R, p.M_R))
        for r, c in self.blocks:
            out[r] += self._dense_block(r, c) @ x[c]
        return out.ravel()

    def _adjoint(self, z):
        p = self.params
        zr = z.reshape(p.L_R, p.M_R)
        out = np.zeros((p.L_C, p.M_C))
        for r, c in self.blocks:
            out[c] += self._dense_block(r, c).T @ zr[r]
        return out.ravel()


class HadamardOperator(DesignOperator):
    """
    Subsampled Hadamard blocks: A_ij = +-sqrt(W_rc / L).

    Every nonzero block takes its own M_R distinct random rows and M_C
    distinct random columns of a 2^k Hadamard matrix, never the first row
    or column. Products cost one FWHT per nonzero block, batched.
    """

    backend = 'hadamard'

    def __init__(self, params, base, seed):
        super().__init__(params, base, seed)
        self.k = int(math.ceil(math.log2(max(params.M_R + 1, params.M_C + 1))))
        self.order = 2 ** self.k
        if params.M_R > self.order - 1 or params.M_C > self.order - 1:
            raise ConfigError(f"Block {params.M_R}x{params.M_C} exceeds Hadamard order {self.order}")
        self.rows = {}
        self.cols = {}
        candidates = np.arange(1, self.order)
        for r, c in self.blocks:
            self.rows[(r, c)] = derive_rng(seed, TAG_HADAMARD_ROWS, r, c).choice(
                candidates, size=params.M_R, replace=False)
            self.cols[(r, c)] = derive_rng(seed, TAG_HADAMARD_COLS, r, c).choice(
                candidates, size=params.M_C, replace=False)
        batch = max(1, FWHT_BATCH_ENTRIES // self.order)
        self._batches = [self.blocks[i:i + batch] for i in range(0, len(self.blocks), batch)]
        logger.debug("Hadamard operator: order 2^%d, %d nonzero blocks in %d batches",
                     self.k, len(self.blocks), len(self._batches))

    def _dense_block(self, r, c):
        from scipy.linalg import hadamard
        H = hadamard(self.order)
        return self.scale[r, c] * H[np.ix_(self.rows[(r, c)], self.cols[(r, c)])]

    def _forward(self, beta):
        p = self.params
        x = beta.reshape(p.L_C, p.M_C)
        out = np.zeros((p.L_R, p.M_R))
        for batch in self._batches:
            ext = np.zeros((len(batch), self.order))
            for i, (r, c) in enumerate(batch):
                ext[i, self.cols[(r, c)]] = x[c]
            transformed = fwht(ext)
            for i, (r, c) in enumerate(batch):
                out[r] += self.scale[r, c] * transformed[i, self.rows[(r, c)]]
        return out.ravel()

    def _adjoint(self, z):
        p = self.params
        zr = z.reshape(p.L_R, p.M_R)
        out = np.zeros((p.L_C, p.M_C))
        for batch in self._batches:
            ext = np.zeros((len(batch), self.order))
            for i, (r, c) in enumerate(batch):
                ext[i, self.rows[(r, c)]] = self.scale[r, c] * zr[r]
            transformed = fwht(ext)
            for i, (r, c) in enumerate(batch):
                out[c] += transformed[i, self.cols[(r, c)]]
        return out.ravel()


def sample_operator(backend, params, base, seed, dense_limit=DENSE_LIMIT):
    """
    Sample a design operator.

    Args:
        backend (str): 'gaussian' or 'hadamard'
        params (CodeParams): Code parameters
        base (BaseMatrix): Variance structure
        seed (int): Master seed; identical inputs give identical operators
        dense_limit (int): Gaussian storage threshold in entries

    Returns:
        DesignOperator: Operator ready for repeated multiplies
    """
    if backend == 'gaussian':
        return GaussianOperator(params, base, seed, dense_limit=dense_limit)
    if backend == 'hadamard':
        return HadamardOperator(params, base, seed)
    raise ConfigError(f"Unknown backend {backend!r}, expected one of {BACKENDS}")
