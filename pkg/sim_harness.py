#!/usr/bin/env python3
# Command-line experiments for SC-SPARCs: Monte Carlo trials, state evolution predictions, design bounds

import argparse
import json
import logging
import math
import os
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from base_matrix import (BaseMatrix, build_omega_lambda, flat_base_matrix,
                         load_csv, save_csv, single_row_base_matrix)
from codec import (PHI_METHODS, STOP_TOL, MessageVector, amp_decode, awgn,
                   bit_error_rate, default_max_iter, encode, hard_decision,
                   section_error_rate)
from core_params import (RATE_UNITS, CodeParams, convert_rate, derive_dimensions,
                         shared_code_length)
from design_matrix import BACKENDS, sample_operator
from state_evolution import (PropOneReport, SeTrace, asymptotic_se,
                             asymptotic_se_band, design_coupling,
                             predicted_ser_bound, proposition_one,
                             se_recursion)
from utils import (LOG_LEVEL, TAG_MESSAGE, TAG_NOISE, TAG_OPERATOR, TAG_TRIAL,
                   ConfigError, DecodingError, check_positive, derive_rng,
                   derive_seed, format_float, is_power_of_2, setup_logging)

logger = logging.getLogger(__name__)

# Worker threads for Monte Carlo trials
WORKERS = int(os.environ.get('SCSPARC_WORKERS', os.cpu_count() or 1))
SE_SAMPLES = 2000
SER_BOUND_SLACK = 1e-12
FLOAT_FORMAT = '%.9g'
BASE_KINDS = ('omega_lambda', 'flat', 'single_row', 'csv')
CSV_COLUMNS = ['preset', 'rate_bits', 'rate_nats', 'omega', 'lambda', 'L', 'M', 'n',
               'backend', 'trial', 'seed', 'ser', 'iters']


@dataclass(frozen=True)
class BaseSpec:
    """How to build the base matrix of one experiment arm."""
    kind: str
    omega: Optional[int] = None
    Lambda: Optional[int] = None
    path: Optional[str] = None

    def build(self, P, L):
        if self.kind == 'omega_lambda':
            return build_omega_lambda(self.omega, self.Lambda, P)
        if self.kind == 'flat':
            return flat_base_matrix(P)
        if self.kind == 'single_row':
            return single_row_base_matrix(P, L)
        if self.kind == 'csv':
            return load_csv(self.path, P=P)
        raise ConfigError(f"Unknown base matrix kind {self.kind!r}, expected one of {BASE_KINDS}")

    @property
    def label(self):
        if self.kind == 'omega_lambda':
            return f"SC({self.omega},{self.Lambda})"
        if self.kind == 'csv':
            return f"csv:{os.path.basename(self.path)}"
        return self.kind

    @property
    def coupling(self):
        """(omega, Lambda) as reported in outputs; the flat matrix is (1, 1)."""
        if self.kind == 'omega_lambda':
            return self.omega, self.Lambda
        if self.kind == 'flat':
            return 1, 1
        return None, None


SC_6_32 = BaseSpec('omega_lambda', 6, 32)

# Desk-scale trial counts; `--full` switches to full_trials
PRESETS = {
    'fig3_wave': dict(L=2048, M=512, rates=(1.5,), snr=15.0, arms=(SC_6_32,),
                      trials=20, full_trials=100, nmse_table=True),
    'fig4_ser_vs_rate': dict(L=1024, M=512, rates=(1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8), snr=15.0,
                             arms=(SC_6_32, BaseSpec('flat')), trials=200, full_trials=10_000),
    'fig5_omega_sweep': dict(L=1024, M=512, rates=(1.5, 1.6, 1.7, 1.8), snr=15.0,
                             arms=tuple(BaseSpec('omega_lambda', w, 32) for w in (2, 4, 6, 8)),
                             trials=200, full_trials=10_000),
    'custom': dict(L=1024, M=512, rates=(1.5,), snr=15.0, arms=(SC_6_32,),
                   trials=200, full_trials=200),
}

DEFAULTS = dict(rate_unit='bits', P=1.0, backend='hadamard', seed=0, max_iter=None,
                stop_tol=STOP_TOL, fixed_operator=False, se_samples=SE_SAMPLES,
                workers=WORKERS, out=None, nmse_table=False, phi_method='residual')

CONFIG_KEYS = {'preset', 'L', 'M', 'rate', 'rates', 'rate_unit', 'snr', 'P', 'omega', 'lambda',
               'base', 'base_csv', 'backend', 'trials', 'full', 'seed', 'max_iter', 'stop_tol',
               'fixed_operator', 'se_samples', 'workers', 'out', 'nmse_table', 'phi_method', 'sigma2'}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    L: int
    M: int
    rates: Tuple[float, ...]
    rate_unit: str
    snr: float
    P: float
    arms: Tuple[BaseSpec, ...]
    backend: str
    n_trials: int
    master_seed: int
    max_iter: Optional[int]
    stop_tol: float
    fixed_operator: bool
    se_samples: int
    workers: int
    out: Optional[str]
    nmse_table: bool
    phi_method: str

    @property
    def sigma2(self):
        return self.P / self.snr

    @property
    def rates_nats(self):
        return tuple(convert_rate(r, self.rate_unit, 'nats') for r in self.rates)


@dataclass
class RatePoint:
    """One (arm, rate) combination with its base matrix and code parameters."""
    arm_index: int
    rate_index: int
    spec: BaseSpec
    base: BaseMatrix
    params: CodeParams

    @property
    def label(self):
        return f"{self.spec.label} R={self.params.rate_bits(effective=False):.4g} bits"


@dataclass
class TrialRecord:
    arm_index: int
    rate_index: int
    trial: int
    seed: int
    ser: float
    ber: Optional[float]
    iterations: int
    nmse: np.ndarray
    warnings: List[str]
    expect_error: bool
    nmse_profile: Optional[np.ndarray] = None


@dataclass
class Prediction:
    se: SeTrace
    ase: SeTrace
    report: Optional[PropOneReport]

    def to_summary(self):
        summary = {
            'se_iterations': self.se.iterations,
            'se_converged': self.se.converged,
            'se_psi': _floats(self.se.final_psi),
            'se_ser_bound': _number(predicted_ser_bound(self.se.final_psi)),
            'ase_decodes': self.ase.fully_decoded,
            'ase_iterations': self.ase.iterations,
            'ase_psi': _floats(self.ase.final_psi),
            'ase_decoded_fraction': _floats(self.ase.decoded_fraction),
            'prop_one': None,
        }
        if self.report is not None:
            r = self.report
            summary['prop_one'] = {
                'kappa': _number(r.kappa),
                'rate_condition_ok': r.rate_condition_ok,
                'rate_limit_nats': _number(r.rate_limit),
                'omega_threshold': _number(r.omega_threshold),
                'omega_condition_ok': r.omega_condition_ok,
                'c_star_lower_bound': r.c_star_lower_bound,
                'iteration_upper_bound': r.iteration_upper_bound,
                'full_decode_first_iter': r.full_decode_first_iter,
            }
        return summary


@dataclass
class PointSummary:
    arm_index: int
    rate_index: int
    label: str
    omega: Optional[int]
    Lambda: Optional[int]
    L_C: int
    rate_bits: float
    rate_nats: float
    n: int
    R_effective: float
    R_inner: float
    n_trials: int
    mean_ser: float
    ser_stderr: float
    mean_ber: Optional[float]
    mean_iterations: float
    warning_trials: int
    mean_nmse: np.ndarray
    nmse_profile: Optional[np.ndarray]
    prediction: Prediction


@dataclass
class Aggregate:
    config: ExperimentConfig
    summaries: List[PointSummary]
    records: List[TrialRecord]
    n_blocks: int


def _number(value):
    """JSON-friendly float: 9 significant digits, non-finite values as null."""
    value = format_float(value)
    if value is None or not math.isfinite(value):
        return None
    return value


def _floats(values):
    return [_number(v) for v in np.asarray(values, dtype=float).ravel()]


def load_config(path):
    """
    Read a flat YAML experiment config.

    Args:
        path (str): Config file path

    Returns:
        dict: Key-value settings (see CONFIG_KEYS)
    """
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, 'r') as f:
        try:
            values = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Could not parse config {path}: {e}") from None
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError(f"Config {path} must be a flat key-value mapping")
    nested = sorted(k for k, v in values.items() if isinstance(v, dict))
    if nested:
        raise ConfigError(f"Config {path} must be flat, nested keys: {nested}")
    logger.info("Loaded config %s (%d keys)", path, len(values))
    return values


def _arms_from(values, default_arms):
    if 'base_csv' in values:
        path = values['base_csv']
        if not os.path.exists(path):
            raise ConfigError(f"Base matrix file not found: {path}")
        return (BaseSpec('csv', path=path),)
    kind = values.get('base')
    if kind in ('flat', 'single_row'):
        return (BaseSpec(kind),)
    if kind not in (None, 'omega_lambda'):
        raise ConfigError(f"Base kind {kind!r} needs one of {BASE_KINDS} (csv requires base_csv)")
    if kind == 'omega_lambda' or 'omega' in values or 'lambda' in values:
        template = next((a for a in default_arms if a.kind == 'omega_lambda'), SC_6_32)
        omega = check_positive('omega', values.get('omega', template.omega), integer=True)
        Lambda = check_positive('lambda', values.get('lambda', template.Lambda), integer=True)
        if Lambda < 2 * omega - 1:
            raise ConfigError(f"lambda={Lambda} must be at least 2*omega-1={2 * omega - 1}")
        return (BaseSpec('omega_lambda', omega, Lambda),)
    return tuple(default_arms)


def _check_output(out):
    folder = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(folder) or not os.access(folder, os.W_OK):
        raise ConfigError(f"Output directory is not writable: {folder}")


def build_config(values=None):
    """
    Resolve an experiment config from a preset and overrides.

    Preset values are overridden by `values` (config file merged with
    command-line flags by the caller).

    Args:
        values (dict, optional): Settings keyed by CONFIG_KEYS; None entries are ignored

    Returns:
        ExperimentConfig: Validated configuration
    """
    values = {k: v for k, v in (values or {}).items() if v is not None}
    unknown = sorted(set(values) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config keys: {unknown}")
    preset = values.get('preset', 'custom')
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset {preset!r}, expected one of {sorted(PRESETS)}")

    settings = dict(DEFAULTS)
    settings.update(PRESETS[preset])
    for key in DEFAULTS:
        if key in values:
            settings[key] = values[key]
    for key in ('L', 'M', 'snr'):
        if key in values:
            settings[key] = values[key]
    if 'sigma2' in values:
        if 'snr' in values:
            raise ConfigError("Give either snr or sigma2, not both")
        settings['snr'] = check_positive('P', settings['P']) / check_positive('sigma2', values['sigma2'])

    raw_rates = values.get('rates', values.get('rate', settings['rates']))
    try:
        rates = tuple(float(r) for r in np.atleast_1d(np.asarray(raw_rates, dtype=float)))
    except (TypeError, ValueError):
        raise ConfigError(f"Rates must be numbers, got {raw_rates!r}") from None
    if not rates:
        raise ConfigError("Rate list is empty")
    for rate in rates:
        check_positive('rate', rate)

    if 'trials' in values:
        n_trials = values['trials']
    elif values.get('full'):
        n_trials = settings['full_trials']
    else:
        n_trials = settings['trials']

    if settings['rate_unit'] not in RATE_UNITS:
        raise ConfigError(f"Unknown rate unit {settings['rate_unit']!r}, expected one of {RATE_UNITS}")
    if settings['backend'] not in BACKENDS:
        raise ConfigError(f"Unknown backend {settings['backend']!r}, expected one of {BACKENDS}")
    if settings['phi_method'] not in PHI_METHODS:
        raise ConfigError(f"Unknown phi method {settings['phi_method']!r}, expected one of {PHI_METHODS}")
    seed = settings['seed']
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    max_iter = settings['max_iter']
    if max_iter is not None:
        if not isinstance(max_iter, (int, np.integer)) or isinstance(max_iter, bool) or max_iter < 0:
            raise ConfigError(f"max_iter must be a non-negative integer, got {max_iter!r}")
    if settings['out'] is not None:
        _check_output(settings['out'])

    config = ExperimentConfig(
        preset=preset,
        L=check_positive('L', settings['L'], integer=True),
        M=check_positive('M', settings['M'], integer=True),
        rates=rates,
        rate_unit=settings['rate_unit'],
        snr=check_positive('snr', settings['snr']),
        P=check_positive('P', settings['P']),
        arms=_arms_from(values, settings['arms']),
        backend=settings['backend'],
        n_trials=check_positive('trials', n_trials, integer=True),
        master_seed=int(seed),
        max_iter=None if max_iter is None else int(max_iter),
        stop_tol=check_positive('stop_tol', settings['stop_tol']),
        fixed_operator=bool(settings['fixed_operator']),
        se_samples=check_positive('se_samples', settings['se_samples'], integer=True),
        workers=check_positive('workers', settings['workers'], integer=True),
        out=settings['out'],
        nmse_table=bool(settings['nmse_table']),
        phi_method=settings['phi_method'],
    )
    # dimension checks (L_C | L, n > 0) for every arm and rate
    expand_points(config)
    return config


def expand_points(config):
    """
    All (arm, rate) points, arm-major.

    Arms share one code length per rate whenever their row counts allow it;
    otherwise each arm rounds to its own L_R.
    """
    bases = [spec.build(config.P, config.L) for spec in config.arms]
    shared = []
    for rate in config.rates_nats:
        n = shared_code_length(config.L, config.M, rate, [b.L_R for b in bases])
        if n is None and len(bases) > 1:
            logger.info("No common code length for L_R=%s at R=%.4g nats; rounding per arm",
                        [b.L_R for b in bases], rate)
        shared.append(n)
    points = []
    for a, (spec, base) in enumerate(zip(config.arms, bases)):
        for i, rate in enumerate(config.rates_nats):
            params = derive_dimensions(config.L, config.M, rate, base.L_R, base.L_C,
                                       P=config.P, sigma2=config.sigma2, n=shared[i])
            points.append(RatePoint(a, i, spec, base, params))
    return points


def _max_iter(config, point):
    return config.max_iter if config.max_iter is not None else default_max_iter(point.base)


def run_trial(config, point, trial, op=None):
    """
    Encode, transmit and decode one random message.

    Args:
        config (ExperimentConfig): Experiment settings
        point (RatePoint): Arm and rate
        trial (int): Trial index; all randomness derives from it
        op (DesignOperator, optional): Shared operator for fixed-operator runs

    Returns:
        TrialRecord: Metrics of the trial
    """
    params = point.params
    seed = derive_seed(config.master_seed, TAG_TRIAL, point.arm_index, point.rate_index, trial)
    if op is None:
        op = sample_operator(config.backend, params, point.base, derive_seed(seed, TAG_OPERATOR))

    message = MessageVector.random(params.L, params.M, derive_rng(seed, TAG_MESSAGE))
    y = awgn(encode(message, op), params.sigma2, derive_rng(seed, TAG_NOISE))
    max_iter = _max_iter(config, point)
    beta, trace = amp_decode(y, op, point.base, params, max_iter=max_iter, stop_tol=config.stop_tol,
                             true_beta=message, phi_method=config.phi_method)

    decoded = hard_decision(beta, params.M)
    ser = section_error_rate(decoded, message)
    nmse = trace.nmse[-1]
    bound = 4.0 * float(np.mean(nmse))
    if ser > bound + SER_BOUND_SLACK:
        raise DecodingError(f"Trial {trial} ({point.label}): SER {ser:.6g} exceeds 4*NMSE = {bound:.6g}")

    return TrialRecord(
        arm_index=point.arm_index,
        rate_index=point.rate_index,
        trial=trial,
        seed=seed,
        ser=ser,
        ber=bit_error_rate(decoded, message) if is_power_of_2(params.M) else None,
        iterations=trace.iterations,
        nmse=nmse,
        warnings=list(trace.warnings),
        expect_error=trace.expect_error,
        nmse_profile=trace.nmse_profile(max_iter + 1) if config.nmse_table else None,
    )


def predict_point(config, point):
    """Exact SE, asymptotic SE and (for band matrices) the coupling bounds of one point."""
    params = point.params
    R = params.R_effective
    se = se_recursion(point.base, params, T=_max_iter(config, point) or 1,
                      n_samples=config.se_samples, seed=config.master_seed)
    omega, Lambda = point.spec.coupling
    if point.spec.kind == 'omega_lambda':
        ase = asymptotic_se_band(omega, Lambda, params.snr, R)
    else:
        ase = asymptotic_se(point.base, params.sigma2, R)
    report = proposition_one(omega, Lambda, params.snr, R) if omega is not None else None
    return Prediction(se=se, ase=ase, report=report)


def summarize(point, records, prediction):
    params = point.params
    omega, Lambda = point.spec.coupling
    n_trials = len(records)
    if records:
        mean_ser = float(np.mean([r.ser for r in records]))
        ser_stderr = math.sqrt(mean_ser * (1 - mean_ser) / (n_trials * params.L))
        bers = [r.ber for r in records if r.ber is not None]
        mean_ber = float(np.mean(bers)) if bers else None
        mean_iterations = float(np.mean([r.iterations for r in records]))
        mean_nmse = np.mean([r.nmse for r in records], axis=0)
    else:
        mean_ser = ser_stderr = mean_iterations = math.nan
        mean_ber = None
        mean_nmse = np.full(params.L_C, math.nan)
    profiles = [r.nmse_profile for r in records if r.nmse_profile is not None]
    return PointSummary(
        arm_index=point.arm_index,
        rate_index=point.rate_index,
        label=point.spec.label,
        omega=omega,
        Lambda=Lambda,
        L_C=params.L_C,
        rate_bits=params.rate_bits(effective=False),
        rate_nats=params.R,
        n=params.n,
        R_effective=params.R_effective,
        R_inner=params.R_inner,
        n_trials=n_trials,
        mean_ser=mean_ser,
        ser_stderr=ser_stderr,
        mean_ber=mean_ber,
        mean_iterations=mean_iterations,
        warning_trials=sum(1 for r in records if r.warnings),
        mean_nmse=mean_nmse,
        nmse_profile=np.mean(profiles, axis=0) if profiles else None,
        prediction=prediction,
    )


def run_experiment(config, progress=True):
    """
    Run every trial of every (arm, rate) point.

    Trials run on a thread pool; results are collected in trial order, so
    the output does not depend on the number of workers.

    Args:
        config (ExperimentConfig): Experiment settings
        progress (bool): Show a per-point counter on stderr

    Returns:
        Aggregate: Per-trial records and per-point summaries
    """
    points = expand_points(config)
    summaries = []
    records = []
    for point in points:
        start = time.time()
        op = None
        if config.fixed_operator:
            op_seed = derive_seed(config.master_seed, TAG_OPERATOR, point.arm_index, point.rate_index)
            op = sample_operator(config.backend, point.params, point.base, op_seed)
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = pool.map(partial(run_trial, config, point, op=op), range(config.n_trials))
            point_records = list(tqdm(results, total=config.n_trials, desc=point.label,
                                      file=sys.stderr, disable=not progress))
        summary = summarize(point, point_records, predict_point(config, point))
        logger.info("%s: mean SER %.4g over %d trials (%.1fs)",
                    point.label, summary.mean_ser, config.n_trials, time.time() - start)
        summaries.append(summary)
        records.extend(point_records)
    return Aggregate(config=config, summaries=summaries, records=records,
                     n_blocks=max(p.params.L_C for p in points))


def predict(config):
    """
    State evolution and coupling bounds for every point, without coding trials.

    Returns:
        list: (RatePoint, Prediction) pairs
    """
    results = []
    for point in expand_points(config):
        start = time.time()
        results.append((point, predict_point(config, point)))
        logger.info("%s: predictions in %.1fs", point.label, time.time() - start)
    return results


def _out_prefix(out):
    return out[:-4] if out.endswith('.csv') else out


def trial_frame(aggregate):
    """One row per trial in the documented column order."""
    config = aggregate.config
    columns = CSV_COLUMNS + [f"nmse_block_{c + 1}" for c in range(aggregate.n_blocks)]
    points = {(s.arm_index, s.rate_index): s for s in aggregate.summaries}
    rows = []
    for record in aggregate.records:
        s = points[(record.arm_index, record.rate_index)]
        row = {
            'preset': config.preset,
            'rate_bits': s.rate_bits,
            'rate_nats': s.rate_nats,
            'omega': s.omega,
            'lambda': s.Lambda,
            'L': config.L,
            'M': config.M,
            'n': s.n,
            'backend': config.backend,
            'trial': record.trial,
            'seed': record.seed,
            'ser': record.ser,
            'iters': record.iterations,
        }
        row.update({f"nmse_block_{c + 1}": v for c, v in enumerate(record.nmse)})
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def summary_dict(aggregate):
    config = aggregate.config
    points = []
    for s in aggregate.summaries:
        point = {
            'label': s.label,
            'omega': s.omega,
            'lambda': s.Lambda,
            'rate_bits': _number(s.rate_bits),
            'rate_nats': _number(s.rate_nats),
            'n': s.n,
            'R_effective_nats': _number(s.R_effective),
            'R_inner_nats': _number(s.R_inner),
            'n_trials': s.n_trials,
            'mean_ser': _number(s.mean_ser),
            'ser_stderr': _number(s.ser_stderr),
            'mean_ber': _number(s.mean_ber),
            'mean_iterations': _number(s.mean_iterations),
            'warning_trials': s.warning_trials,
            'mean_nmse': _floats(s.mean_nmse),
        }
        point.update(s.prediction.to_summary())
        points.append(point)
    return {
        'preset': config.preset,
        'L': config.L,
        'M': config.M,
        'snr': _number(config.snr),
        'P': _number(config.P),
        'sigma2': _number(config.sigma2),
        'capacity_bits': _number(convert_rate(0.5 * math.log1p(config.snr), 'nats', 'bits')),
        'backend': config.backend,
        'n_trials': config.n_trials,
        'master_seed': config.master_seed,
        'fixed_operator': config.fixed_operator,
        'phi_method': config.phi_method,
        'points': points,
    }


def nmse_table(aggregate):
    """Mean AMP NMSE next to exact SE psi for every iteration and block."""
    rows = []
    for s in aggregate.summaries:
        if s.nmse_profile is None:
            continue
        se_psi = s.prediction.se.psi_profile(s.nmse_profile.shape[0])
        for t in range(s.nmse_profile.shape[0]):
            for c in range(s.L_C):
                rows.append({'rate_bits': s.rate_bits, 'omega': s.omega, 'lambda': s.Lambda,
                             'iteration': t, 'block': c + 1,
                             'amp_nmse': s.nmse_profile[t, c], 'se_psi': se_psi[t, c]})
    return pd.DataFrame(rows, columns=['rate_bits', 'omega', 'lambda', 'iteration', 'block',
                                       'amp_nmse', 'se_psi'])


def _write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def emit_outputs(aggregate, out):
    """
    Write `<out>.csv` (one row per trial), `<out>.json` (summary and
    predictions) and, for NMSE-tracking runs, `<out>_nmse.csv`.

    Returns:
        list: Paths written
    """
    _check_output(out)
    prefix = _out_prefix(out)
    paths = [f"{prefix}.csv", f"{prefix}.json"]
    _write_csv(trial_frame(aggregate), paths[0])
    with open(paths[1], 'w', newline='\n') as f:
        json.dump(summary_dict(aggregate), f, indent=2)
        f.write('\n')
    if aggregate.config.nmse_table:
        paths.append(f"{prefix}_nmse.csv")
        _write_csv(nmse_table(aggregate), paths[-1])
    for path in paths:
        logger.info("Wrote %s", path)
    return paths


def _print_report(report):
    print(f"    kappa={report.kappa:.4f}  rate limit={report.rate_limit:.4f} nats "
          f"({convert_rate(report.rate_limit, 'nats', 'bits'):.4f} bits)  "
          f"rate condition {'OK' if report.rate_condition_ok else 'VIOLATED'}")
    print(f"    omega threshold={report.omega_threshold:.4g}  "
          f"omega condition {'OK' if report.omega_condition_ok else 'not met'}  "
          f"c* >= {report.c_star_lower_bound}  iterations <= {report.iteration_upper_bound}")
    print(f"    full decoding in first iteration: {'yes' if report.full_decode_first_iter else 'no'}")


def cmd_simulate(config, args):
    aggregate = run_experiment(config)
    for s in aggregate.summaries:
        bound = predicted_ser_bound(s.prediction.se.final_psi)
        print(f"{s.label:>12}  R={s.rate_bits:.3f} bits  n={s.n}  SER={s.mean_ser:.3e} "
              f"+/- {s.ser_stderr:.1e}  iters={s.mean_iterations:.1f}  SE bound={bound:.3e}")
    if config.out:
        for path in emit_outputs(aggregate, config.out):
            print(f"Wrote {path}")
    return 0


def cmd_predict(config, args):
    for point, prediction in predict(config):
        ase = prediction.ase
        verdict = 'decodes' if ase.fully_decoded else 'does not decode'
        print(f"{point.label}  (n={point.params.n}, R_eff={point.params.rate_bits():.4f} bits)")
        print(f"    asymptotic SE {verdict} after {ase.iterations} iterations "
              f"(decoded fraction {ase.decoded_fraction[-1]:.3f})")
        print(f"    exact SE: mean psi {np.mean(prediction.se.final_psi):.3e} after "
              f"{prediction.se.iterations} iterations, SER bound "
              f"{predicted_ser_bound(prediction.se.final_psi):.3e}")
        if prediction.report is not None:
            _print_report(prediction.report)
    return 0


def cmd_se(config, args):
    rows = []
    for point in expand_points(config):
        trace = se_recursion(point.base, point.params, T=_max_iter(config, point) or 1,
                             n_samples=config.se_samples, seed=config.master_seed)
        omega, Lambda = point.spec.coupling
        print(f"{point.label}: {trace.iterations} iterations, converged={trace.converged}, "
              f"final mean psi {np.mean(trace.final_psi):.4e}")
        for t, psi in enumerate(trace.psi):
            for c, value in enumerate(psi):
                rows.append({'omega': omega, 'lambda': Lambda,
                             'rate_bits': point.params.rate_bits(effective=False),
                             'iteration': t, 'block': c + 1, 'psi': value})
    if config.out:
        path = f"{_out_prefix(config.out)}.csv"
        _write_csv(pd.DataFrame(rows, columns=['omega', 'lambda', 'rate_bits', 'iteration',
                                               'block', 'psi']), path)
        print(f"Wrote {path}")
    return 0


def cmd_threshold(config, args):
    for spec in config.arms:
        omega, Lambda = spec.coupling
        if omega is None:
            print(f"{spec.label}: bounds apply to (omega, Lambda) base matrices only")
            continue
        for rate, R in zip(config.rates, config.rates_nats):
            print(f"{spec.label}  R={rate:.4g} {config.rate_unit}  snr={config.snr:.4g}")
            _print_report(proposition_one(omega, Lambda, config.snr, R))
    if getattr(args, 'design', False):
        for rate, R in zip(config.rates, config.rates_nats):
            report = design_coupling(R, config.snr)
            print(f"Design for R={rate:.4g} {config.rate_unit}: omega={report.omega}, "
                  f"Lambda={report.Lambda} (kappa={report.kappa:.4f})")
    return 0


def cmd_export_base_matrix(config, args):
    if not config.out:
        raise ConfigError("export-base-matrix needs --out")
    if len(config.arms) != 1:
        raise ConfigError(f"Select a single base matrix to export, preset has {len(config.arms)}")
    base = config.arms[0].build(config.P, config.L)
    path = config.out if config.out.endswith('.csv') else f"{config.out}.csv"
    save_csv(base, path)
    print(f"Wrote {base.label()} base matrix to {path}")
    return 0


COMMANDS = {
    'simulate': cmd_simulate,
    'predict': cmd_predict,
    'se': cmd_se,
    'threshold': cmd_threshold,
    'export-base-matrix': cmd_export_base_matrix,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--preset', choices=sorted(PRESETS), help='Experiment preset (default: custom)')
    common.add_argument('--config', type=str, help='Flat YAML config file')
    common.add_argument('--rate', dest='rates', type=float, nargs='+', help='Rate(s)')
    common.add_argument('--rate-unit', dest='rate_unit', choices=RATE_UNITS, help='Unit of --rate (default: bits)')
    common.add_argument('--snr', type=float, help='Signal-to-noise ratio P/sigma2')
    common.add_argument('--sigma2', type=float, help='Noise variance; sets snr = P/sigma2')
    common.add_argument('--P', dest='P', type=float, help='Average codeword power (default: 1.0)')
    common.add_argument('--omega', type=int, help='Coupling width')
    common.add_argument('--lambda', dest='lambda', type=int, help='Coupling length')
    common.add_argument('--base', choices=[k for k in BASE_KINDS if k != 'csv'], help='Base matrix kind')
    common.add_argument('--base-csv', dest='base_csv', type=str, help='Custom base matrix CSV')
    common.add_argument('--L', dest='L', type=int, help='Number of sections')
    common.add_argument('--M', dest='M', type=int, help='Section size')
    common.add_argument('--backend', choices=BACKENDS, help='Design matrix backend (default: hadamard)')
    common.add_argument('--trials', type=int, help='Trials per rate point')
    common.add_argument('--full', action='store_true', default=None, help='Use the full-scale trial count')
    common.add_argument('--seed', type=int, help='Master seed (default: 0)')
    common.add_argument('--max-iter', dest='max_iter', type=int, help='AMP iteration cap')
    common.add_argument('--stop-tol', dest='stop_tol', type=float, help='AMP stopping tolerance')
    common.add_argument('--phi-method', dest='phi_method', choices=PHI_METHODS, help='Residual variance estimate')
    common.add_argument('--fixed-operator', dest='fixed_operator', action='store_true', default=None,
                        help='Reuse one design matrix for all trials of a rate point')
    common.add_argument('--se-samples', dest='se_samples', type=int, help='Monte Carlo samples for exact SE')
    common.add_argument('--workers', type=int, help=f'Worker threads (default: {WORKERS})')
    common.add_argument('--out', type=str, help='Output path prefix')
    common.add_argument('--log-level', dest='log_level', default=LOG_LEVEL, help='Logging level')

    parser = argparse.ArgumentParser(description='Spatially coupled sparse regression codes on the AWGN channel')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('simulate', parents=[common], help='Monte Carlo encoding and AMP decoding trials')
    sub.add_parser('predict', parents=[common], help='State evolution and coupling bounds')
    sub.add_parser('se', parents=[common], help='Exact state evolution only')
    threshold = sub.add_parser('threshold', parents=[common], help='Coupling-width bounds only')
    threshold.add_argument('--design', action='store_true', help='Also search for (omega, Lambda) per rate')
    sub.add_parser('export-base-matrix', parents=[common], help='Write the base matrix as CSV')
    return parser


def cli_values(args):
    options = vars(args)
    return {key: options[key] for key in CONFIG_KEYS if options.get(key) is not None}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
        values = load_config(args.config) if args.config else {}
        values.update(cli_values(args))
        config = build_config(values)
        return COMMANDS[args.command](config, args)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return 2
    except DecodingError as e:
        print(f"Decoding error: {e}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        print("\nProgram interrupted by user.", file=sys.stderr)
        return 130
    except Exception as e:
        print(f"An error occurred: {e}", file=sys.stderr)
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
