import json

import pandas as pd
import pytest

from main import EXIT_CONFIG, EXIT_OK, main
from models.run_models import build_run_config, read_config_file
from utils.exceptions import ConfigError

BATH_CSV = "n1,n2,n3,state\n8,0,0,1\n9,1,-1,-1\n0,8,8,1\n"


@pytest.fixture
def bath_file(tmp_path):
    path = tmp_path / "bath.csv"
    path.write_text(BATH_CSV)
    return path


def decay_args(out, bath):
    return ['decay', '--donor', 'e', '--transition', '2-1', '--sequence', 'fid', '--bath-file', str(bath),
            '--t-max-us', '100', '--time-points', '16', '--out', str(out)]


class TestRunConfig:

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[donor]\ndonor = P\nfield_mT = 100  # low field\n\n[timing]\ntime_points = 32\n")
        from_file = build_run_config(path)
        assert from_file.donor == "P"
        assert from_file.field_mT == 100.0
        assert from_file.time_points == 32
        assert build_run_config(path, {'field_mT': 200.0, 'donor': None}).field_mT == 200.0

    def test_sectionless_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("cce_order = 3\n")
        assert read_config_file(path) == {'cce_order': '3'}

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[run]\nfeild_mT = 100\n")
        with pytest.raises(ConfigError):
            build_run_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            build_run_config(tmp_path / "absent.cfg")

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            build_run_config(None, {'average': 'sometimes'})
        with pytest.raises(ConfigError):
            build_run_config(None, {'field_start_mT': 10.0})

    def test_fid_carries_no_pulses(self):
        config = build_run_config(None, {'sequence': 'fid', 'pulses': 4})
        assert config.pulse_sequence.pulses == 0
        assert config.pulse_sequence.label == "fid"


class TestCommands:

    def test_decay_with_fixed_bath(self, tmp_path, bath_file):
        assert main(decay_args(tmp_path, bath_file)) == EXIT_OK
        frame = pd.read_csv(tmp_path / "decay_mean.csv")
        assert list(frame.columns) == ['time_s', 're', 'im', 'abs']
        assert len(frame) == 16
        assert frame['abs'].iloc[0] == pytest.approx(1.0)
        assert (tmp_path / "decay_r000.csv").exists()

        metadata = json.loads((tmp_path / "decay_mean.json").read_text())['metadata']
        for key in ('version', 'config', 'seed', 'rng', 'wall_clock_s', 'cluster_counts', 'flags', 'fit'):
            assert key in metadata
        assert metadata['config']['donor'] == 'e'
        assert metadata['config']['pulses'] == 0

    def test_decay_is_deterministic(self, tmp_path, bath_file):
        first, second = tmp_path / "first", tmp_path / "second"
        assert main(decay_args(first, bath_file)) == EXIT_OK
        assert main(decay_args(second, bath_file)) == EXIT_OK
        assert (first / "decay_mean.csv").read_bytes() == (second / "decay_mean.csv").read_bytes()

    def test_json_format(self, tmp_path, bath_file):
        assert main(decay_args(tmp_path, bath_file) + ['--format', 'json', '--name', 'run']) == EXIT_OK
        payload = json.loads((tmp_path / "run_mean.json").read_text())
        assert len(payload['data']['time_s']) == 16
        assert not (tmp_path / "run_mean.csv").exists()

    def test_unknown_donor(self, tmp_path):
        assert main(['owp', '--donor', 'Xx', '--out', str(tmp_path)]) == EXIT_CONFIG

    def test_bad_config_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("colour = blue\n")
        assert main(['owp', '--config', str(path), '--out', str(tmp_path)]) == EXIT_CONFIG

    def test_missing_transition(self, tmp_path):
        assert main(['decay', '--donor', 'Bi', '--out', str(tmp_path)]) == EXIT_CONFIG

    def test_phosphorus_has_no_owp(self, tmp_path):
        assert main(['owp', '--donor', 'P', '--out', str(tmp_path)]) == EXIT_OK
        frame = pd.read_csv(tmp_path / "owp.csv")
        assert not (frame['kind'] == 'owp').any()

    def test_bismuth_resonances(self, tmp_path):
        assert main(['resonances', '--donor', 'Bi', '--frequency-GHz', '9.7', '--out', str(tmp_path)]) == EXIT_OK
        frame = pd.read_csv(tmp_path / "resonances.csv")
        assert len(frame) == 10
        assert frame['field_mT'].is_monotonic_increasing

    def test_lattice_stats(self, tmp_path):
        assert main(['lattice-stats', '--radius-angstrom', '100', '--out', str(tmp_path)]) == EXIT_OK
        metadata = json.loads((tmp_path / "lattice_stats.json").read_text())['metadata']
        assert metadata['cells'] == 20
        assert metadata['total_pairs'] == pytest.approx(19000, rel=0.05)
        assert 'cluster_counts' not in metadata

    def test_endor(self, tmp_path):
        args = ['endor', '--donor', 'P', '--transition', '4-1', '--a-iso-MHz', '1.0', '--field-mT', '344.6',
                '--out', str(tmp_path)]
        assert main(args) == EXIT_OK
        frame = pd.read_csv(tmp_path / "endor.csv")
        assert list(frame.columns) == ['frequency_MHz', 'intensity']
        assert len(frame) == 2001
        assert (frame['intensity'] >= 0).all()
        metadata = json.loads((tmp_path / "endor.json").read_text())['metadata']
        assert 'cluster_counts' not in metadata


@pytest.mark.slow
def test_bismuth_hahn_decay(tmp_path):
    args = ['decay', '--donor', 'Bi', '--transition', '11-10', '--field-mT', '100', '--box-angstrom', '40',
            '--t-max-us', '2000', '--time-points', '64', '--seed', '3', '--out', str(tmp_path)]
    assert main(args) == EXIT_OK
    frame = pd.read_csv(tmp_path / "decay_mean.csv")
    assert frame['abs'].iloc[0] == pytest.approx(1.0)
    assert (frame['abs'] <= 1.0 + 1e-9).all()
