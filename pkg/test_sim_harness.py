#!/usr/bin/env python3
# Tests for experiment configuration, seeded trials, outputs and the command line

import json
import math

import numpy as np
import pandas as pd
import pytest

from base_matrix import load_csv
from sim_harness import (CSV_COLUMNS, PRESETS, Aggregate, build_config,
                         emit_outputs, expand_points, load_config, main,
                         predict, run_experiment, run_trial)
from utils import ConfigError, DecodingError

SMALL = {'L': 64, 'M': 16, 'rates': [0.8], 'snr': 15.0, 'omega': 2, 'lambda': 4,
         'trials': 4, 'workers': 2, 'se_samples': 200}


def small_config(**overrides):
    values = dict(SMALL)
    values.update(overrides)
    return build_config(values)


class TestBuildConfig:
    def test_wave_preset(self):
        config = build_config({'preset': 'fig3_wave'})
        assert (config.L, config.M, config.n_trials) == (2048, 512, 20)
        assert config.backend == 'hadamard'
        assert config.nmse_table
        (point,) = expand_points(config)
        assert point.params.n == 12284
        assert (point.spec.omega, point.spec.Lambda) == (6, 32)

    def test_full_trials(self):
        assert build_config({'preset': 'fig3_wave', 'full': True}).n_trials == 100
        assert build_config({'preset': 'fig4_ser_vs_rate', 'full': True}).n_trials == 10_000

    def test_rate_sweep_arms(self):
        config = build_config({'preset': 'fig4_ser_vs_rate'})
        assert [a.label for a in config.arms] == ['SC(6,32)', 'flat']
        assert len(expand_points(config)) == 2 * len(PRESETS['fig4_ser_vs_rate']['rates'])

    def test_width_sweep_arms(self):
        config = build_config({'preset': 'fig5_omega_sweep'})
        assert [a.omega for a in config.arms] == [2, 4, 6, 8]
        assert all(a.Lambda == 32 for a in config.arms)

    def test_overrides(self):
        config = build_config({'preset': 'fig5_omega_sweep', 'omega': 3, 'rate': 1.1, 'rate_unit': 'bits'})
        assert [a.label for a in config.arms] == ['SC(3,32)']
        assert config.rates == (1.1,)
        assert config.rates_nats[0] == pytest.approx(1.1 * math.log(2))

    def test_flat_base(self):
        config = build_config({'base': 'flat', 'rates': [1.0]})
        (point,) = expand_points(config)
        assert point.base.shape == (1, 1)
        assert point.spec.coupling == (1, 1)

    def test_sigma2_from_snr(self):
        config = build_config({'snr': 7.0, 'P': 2.0})
        assert config.sigma2 == pytest.approx(2.0 / 7.0)

    def test_snr_from_sigma2(self):
        config = build_config({'P': 2.0, 'sigma2': 0.5})
        assert config.snr == pytest.approx(4.0)
        assert config.sigma2 == pytest.approx(0.5)
        (point,) = expand_points(config)
        assert point.params.sigma2 == pytest.approx(0.5)

    def test_snr_and_sigma2_conflict(self):
        with pytest.raises(ConfigError):
            build_config({'snr': 15.0, 'sigma2': 1.0})

    def test_rate_sweep_arms_share_code_length(self):
        config = build_config({'preset': 'fig4_ser_vs_rate'})
        points = expand_points(config)
        for i in range(len(config.rates)):
            lengths = {p.params.n for p in points if p.rate_index == i}
            assert len(lengths) == 1
            (n,) = lengths
            assert n % 37 == 0

    def test_width_sweep_lengths_stay_close(self):
        config = build_config({'preset': 'fig5_omega_sweep'})
        points = expand_points(config)
        for i in range(len(config.rates)):
            lengths = [p.params.n for p in points if p.rate_index == i]
            # row blocks must be equal, so the lengths differ by less than one block of rows
            assert max(lengths) - min(lengths) <= 39

    @pytest.mark.parametrize('values', [
        {'trials': 0},
        {'rates': []},
        {'rates': [-1.0]},
        {'backend': 'sparse'},
        {'preset': 'fig6'},
        {'colour': 'blue'},
        {'omega': 6, 'lambda': 8},
        {'seed': -1},
        {'L': 1000},
        {'rate_unit': 'bauds'},
        {'phi_method': 'oracle'},
        {'base': 'csv'},
    ])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigError):
            build_config(values)

    def test_missing_base_file(self, tmp_path):
        with pytest.raises(ConfigError):
            build_config({'base_csv': str(tmp_path / 'missing.csv')})

    def test_missing_output_directory(self, tmp_path):
        with pytest.raises(ConfigError):
            build_config({'out': str(tmp_path / 'no' / 'run')})


class TestLoadConfig:
    def test_flat_yaml(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text("preset: fig5_omega_sweep\nrate: [1.6]\nrate_unit: bits\ntrials: 10\nseed: 7\n")
        config = build_config(load_config(str(path)))
        assert config.rates == (1.6,)
        assert config.n_trials == 10
        assert config.master_seed == 7

    def test_nested_yaml_rejected(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text("code:\n  L: 64\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'empty.yaml'
        path.write_text("")
        assert load_config(str(path)) == {}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / 'missing.yaml'))


class TestTrials:
    def test_record_bound(self):
        config = small_config()
        aggregate = run_experiment(config, progress=False)
        assert len(aggregate.records) == 4
        for record in aggregate.records:
            assert record.ser <= 4 * np.mean(record.nmse) + 1e-12
            assert 0 <= record.ser <= 1
        summary = aggregate.summaries[0]
        assert summary.mean_ser == pytest.approx(np.mean([r.ser for r in aggregate.records]))
        assert summary.n_trials == 4

    def test_trial_is_reproducible(self):
        config = small_config()
        (point,) = expand_points(config)
        first = run_trial(config, point, 2)
        second = run_trial(config, point, 2)
        assert first.seed == second.seed
        np.testing.assert_array_equal(first.nmse, second.nmse)
        assert run_trial(config, point, 3).seed != first.seed

    def test_workers_do_not_change_results(self, tmp_path):
        serial = run_experiment(small_config(workers=1), progress=False)
        parallel = run_experiment(small_config(workers=3), progress=False)
        emit_outputs(serial, str(tmp_path / 'serial'))
        emit_outputs(parallel, str(tmp_path / 'parallel'))
        assert (tmp_path / 'serial.csv').read_bytes() == (tmp_path / 'parallel.csv').read_bytes()

    def test_fixed_operator(self):
        aggregate = run_experiment(small_config(fixed_operator=True, backend='gaussian'), progress=False)
        assert len({r.seed for r in aggregate.records}) == 4

    def test_bound_violation_is_reported(self, monkeypatch):
        import sim_harness
        config = small_config(trials=1)
        (point,) = expand_points(config)
        monkeypatch.setattr(sim_harness, 'section_error_rate', lambda decoded, truth: 10.0)
        with pytest.raises(DecodingError):
            run_trial(config, point, 0)

    def test_predictions(self):
        config = small_config(rates=[0.3, 3.0])
        (low, high) = predict(config)
        assert low[1].ase.fully_decoded
        assert not high[1].ase.fully_decoded
        assert not high[1].report.rate_condition_ok


class TestOutputs:
    def test_same_seed_same_bytes(self, tmp_path):
        for name in ('a', 'b'):
            emit_outputs(run_experiment(small_config(), progress=False), str(tmp_path / name))
        assert (tmp_path / 'a.csv').read_bytes() == (tmp_path / 'b.csv').read_bytes()
        assert (tmp_path / 'a.json').read_bytes() == (tmp_path / 'b.json').read_bytes()

    def test_different_seed_different_trials(self, tmp_path):
        a = run_experiment(small_config(seed=1), progress=False)
        b = run_experiment(small_config(seed=2), progress=False)
        assert [r.seed for r in a.records] != [r.seed for r in b.records]

    def test_csv_schema(self, tmp_path):
        paths = emit_outputs(run_experiment(small_config(), progress=False), str(tmp_path / 'run.csv'))
        assert paths == [str(tmp_path / 'run.csv'), str(tmp_path / 'run.json')]
        text = (tmp_path / 'run.csv').read_bytes()
        assert b'\r' not in text
        header = text.decode().splitlines()[0].split(',')
        assert header == CSV_COLUMNS + ['nmse_block_1', 'nmse_block_2', 'nmse_block_3', 'nmse_block_4']
        frame = pd.read_csv(tmp_path / 'run.csv')
        assert frame['trial'].tolist() == [0, 1, 2, 3]
        assert set(frame['omega']) == {2} and set(frame['lambda']) == {4}

    def test_round_trip_mean(self, tmp_path):
        emit_outputs(run_experiment(small_config(rates=[0.8, 1.6]), progress=False), str(tmp_path / 'run'))
        frame = pd.read_csv(tmp_path / 'run.csv')
        summary = json.loads((tmp_path / 'run.json').read_text())
        means = frame.groupby('rate_bits')['ser'].mean()
        for point in summary['points']:
            assert means[point['rate_bits']] == pytest.approx(point['mean_ser'], rel=1e-8, abs=1e-12)
            assert len(point['se_psi']) == 4
            assert point['prop_one']['rate_condition_ok'] in (True, False)

    def test_header_only_csv(self, tmp_path):
        config = small_config()
        emit_outputs(Aggregate(config=config, summaries=[], records=[], n_blocks=2), str(tmp_path / 'empty'))
        lines = (tmp_path / 'empty.csv').read_text().splitlines()
        assert lines == [','.join(CSV_COLUMNS + ['nmse_block_1', 'nmse_block_2'])]
        assert json.loads((tmp_path / 'empty.json').read_text())['points'] == []

    def test_nmse_table(self, tmp_path):
        config = small_config(nmse_table=True, max_iter=6)
        paths = emit_outputs(run_experiment(config, progress=False), str(tmp_path / 'wave'))
        assert paths[-1] == str(tmp_path / 'wave_nmse.csv')
        table = pd.read_csv(paths[-1])
        assert list(table.columns) == ['rate_bits', 'omega', 'lambda', 'iteration', 'block',
                                       'amp_nmse', 'se_psi']
        assert len(table) == 7 * 4
        first = table[table['iteration'] == 0]
        np.testing.assert_allclose(first['amp_nmse'], 1.0)
        np.testing.assert_allclose(first['se_psi'], 1.0)

    def test_mixed_arms(self, tmp_path):
        config = build_config(dict(SMALL, preset='fig4_ser_vs_rate', rates=[0.8], trials=2,
                                   L=64, omega=None, **{'lambda': None}))
        assert [a.label for a in config.arms] == ['SC(6,32)', 'flat']
        emit_outputs(run_experiment(config, progress=False), str(tmp_path / 'mixed'))
        frame = pd.read_csv(tmp_path / 'mixed.csv')
        flat = frame[frame['omega'] == 1]
        assert len(flat) == 2
        assert flat['nmse_block_2'].isna().all()
        assert frame.columns[-1] == 'nmse_block_32'


class TestCommandLine:
    def test_threshold(self, capsys):
        assert main(['threshold', '--omega', '6', '--lambda', '32', '--rate', '1.5', '--design']) == 0
        out = capsys.readouterr().out
        assert 'omega threshold=' in out
        assert 'Design for R=1.5 bits' in out

    def test_noise_variance_flag(self, capsys):
        assert main(['threshold', '--omega', '6', '--lambda', '32', '--rate', '1.0',
                     '--P', '2', '--sigma2', '0.5']) == 0
        assert 'snr=4 ' in capsys.readouterr().out

    def test_config_error_exit_code(self, capsys):
        assert main(['simulate', '--trials', '0']) == 2
        assert 'Configuration error' in capsys.readouterr().err

    def test_simulate_writes_outputs(self, tmp_path, capsys):
        out = str(tmp_path / 'cli')
        argv = ['simulate', '--L', '64', '--M', '16', '--rate', '0.8', '--omega', '2', '--lambda', '4',
                '--trials', '2', '--se-samples', '100', '--out', out]
        assert main(argv) == 0
        assert (tmp_path / 'cli.csv').exists() and (tmp_path / 'cli.json').exists()
        assert 'SER=' in capsys.readouterr().out

    def test_predict(self, capsys):
        argv = ['predict', '--L', '64', '--M', '16', '--rate', '0.8', '--omega', '2', '--lambda', '4',
                '--se-samples', '100']
        assert main(argv) == 0
        assert 'asymptotic SE' in capsys.readouterr().out

    def test_se_table(self, tmp_path):
        out = str(tmp_path / 'se')
        argv = ['se', '--L', '64', '--M', '16', '--rate', '0.8', '--omega', '2', '--lambda', '4',
                '--se-samples', '100', '--out', out]
        assert main(argv) == 0
        table = pd.read_csv(tmp_path / 'se.csv')
        assert list(table.columns) == ['omega', 'lambda', 'rate_bits', 'iteration', 'block', 'psi']
        assert (table[table['iteration'] == 0]['psi'] == 1.0).all()

    def test_export_base_matrix(self, tmp_path):
        out = str(tmp_path / 'w.csv')
        assert main(['export-base-matrix', '--omega', '3', '--lambda', '8', '--out', out]) == 0
        W = load_csv(out, P=1.0)
        assert W.shape == (10, 8)
        config = build_config({'base_csv': out, 'L': 64, 'M': 16, 'rates': [0.8], 'trials': 1})
        assert config.arms[0].kind == 'csv'

    def test_export_needs_single_arm(self, tmp_path):
        assert main(['export-base-matrix', '--preset', 'fig5_omega_sweep', '--out', str(tmp_path / 'w')]) == 2

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        path = tmp_path / 'run.yaml'
        path.write_text("omega: 4\nlambda: 16\nrate: 1.0\n")
        assert main(['threshold', '--config', str(path), '--omega', '2']) == 0
        assert 'SC(2,16)' in capsys.readouterr().out


@pytest.mark.slow
class TestAcceptance:
    def test_wave_matches_state_evolution(self, tmp_path):
        config = build_config({'preset': 'fig3_wave', 'se_samples': 10_000})
        aggregate = run_experiment(config, progress=False)
        (summary,) = aggregate.summaries
        se_psi = summary.prediction.se.psi_profile(summary.nmse_profile.shape[0])
        for t in (1, 5, 10):
            assert np.max(np.abs(summary.nmse_profile[t] - se_psi[t])) < 0.05

    def test_coupling_beats_flat(self):
        config = build_config({'preset': 'fig4_ser_vs_rate', 'rates': [1.5]})
        coupled, flat = run_experiment(config, progress=False).summaries
        gap = flat.mean_ser - coupled.mean_ser
        assert gap > 2 * math.hypot(flat.ser_stderr, coupled.ser_stderr)

    def test_width_six_is_best_at_1_6_bits(self):
        config = build_config({'preset': 'fig5_omega_sweep', 'rates': [1.6]})
        summaries = {s.omega: s for s in run_experiment(config, progress=False).summaries}
        best = summaries[6]
        for other in (summaries[2], summaries[8]):
            assert other.mean_ser - best.mean_ser > 2 * math.hypot(other.ser_stderr, best.ser_stderr)

    def test_flat_code_at_low_rate(self):
        config = build_config({'base': 'flat', 'L': 1024, 'M': 512, 'rates': [0.5], 'trials': 200})
        (summary,) = run_experiment(config, progress=False).summaries
        assert summary.mean_ser < 0.01
