#!/usr/bin/env python3
# Utility functions shared by the SC-SPARC modules: errors, seeding, units

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

# Purpose tags for random stream derivation
TAG_TRIAL = 1
TAG_MESSAGE = 2
TAG_NOISE = 3
TAG_HADAMARD_ROWS = 4
TAG_GAUSSIAN_BLOCK = 5
TAG_SE_SAMPLES = 6
TAG_OPERATOR = 7
TAG_HADAMARD_COLS = 8

LOG_LEVEL = os.environ.get('SCSPARC_LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


class SparcError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SparcError, ValueError):
    """Invalid parameters, base matrices, files or experiment configs."""


class DecodingError(SparcError, RuntimeError):
    """Failure while encoding, decoding or evaluating a recursion."""


def setup_logging(level=None):
    """
    Configure root logging for command-line use.

    Library modules only create their own loggers; this is called once by
    the CLI.

    Args:
        level (str, optional): Level name, defaults to SCSPARC_LOG_LEVEL

    Returns:
        int: The numeric level in effect
    """
    name = (level or LOG_LEVEL).upper()
    numeric = getattr(logging, name, None)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level: {level}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    return numeric


def seed_sequence(seed, tag, *indices):
    """
    Derive an independent seed sequence from a master seed.

    Streams depend only on (seed, tag, indices), never on execution order,
    so concurrent trials reproduce serial ones.

    Args:
        seed (int): Master seed (any non-negative integer)
        tag (int): Purpose tag, one of the TAG_* constants
        *indices (int): Block, rate-point or trial indices

    Returns:
        numpy.random.SeedSequence: The derived sequence
    """
    if seed is None or int(seed) < 0:
        raise ConfigError(f"Seed must be a non-negative integer, got {seed}")
    key = tuple(int(i) for i in (tag,) + indices)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def derive_rng(seed, tag, *indices):
    """Generator for the stream (seed, tag, *indices)."""
    return np.random.default_rng(seed_sequence(seed, tag, *indices))


def derive_seed(seed, tag, *indices):
    """32-bit integer seed for the stream (seed, tag, *indices)."""
    return int(seed_sequence(seed, tag, *indices).generate_state(1)[0])


def is_power_of_2(x):
    return x > 0 and (x & (x - 1)) == 0


def check_positive(name, value, integer=False):
    """
    Validate a strictly positive parameter.

    Args:
        name (str): Parameter name used in the error message
        value: Value to check
        integer (bool): Also require an integral value

    Returns:
        The value, converted to int or float
    """
    try:
        converted = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if integer and converted != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if not converted > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return converted


def format_float(value, digits=9):
    """Round a float to `digits` significant digits for stable output."""
    if value is None:
        return None
    value = float(value)
    if not np.isfinite(value):
        return value
    return float(f"{value:.{digits}g}")
