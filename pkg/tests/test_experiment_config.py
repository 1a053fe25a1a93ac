"""
Test suite for Experiment Configuration

Tests YAML loading, validation errors naming dotted keys, overrides and the
config hash.
"""

import math
import os
import sys
from pathlib import Path

import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from experiment_config import ExperimentConfig, apply_overrides, config_hash, parse_config
from faults import ConfigError

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"


@pytest.fixture
def write_config(tmp_path):
    """Write YAML text to a config file and return its path"""

    def _write(text, name="config.yaml"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write


class TestParseConfig:
    """Test cases for loading experiment files"""

    def test_empty_file_gives_defaults(self, write_config):
        """Test an empty file resolves every default"""
        config = parse_config(write_config(""))
        assert config == ExperimentConfig()
        assert config.eval.episodes == 1000
        assert config.eval.duration == 10.0
        assert config.train.n_envs == 256
        assert math.isinf(config.train.v_limit)

    def test_named_velocity_limit(self, write_config):
        """Test a constraint name resolves to m/s"""
        config = parse_config(write_config("train:\n  v_limit: strict\n"))
        assert config.train.v_limit == 0.1

    def test_negative_beam_length_names_key(self, write_config):
        """Test a bad value is reported against its dotted key"""
        with pytest.raises(ConfigError) as exc:
            parse_config(write_config("physics:\n  beam_length: -1.0\n"))
        assert exc.value.key == "physics.beam_length"

    def test_unknown_key_rejected(self, write_config):
        """Test misspelled keys are not silently ignored"""
        with pytest.raises(ConfigError) as exc:
            parse_config(write_config("train:\n  n_env: 4\n"))
        assert exc.value.key == "train.n_env"

    def test_missing_file(self, tmp_path):
        """Test a missing file is a configuration error"""
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, write_config):
        """Test unparsable YAML is a configuration error"""
        with pytest.raises(ConfigError, match="malformed"):
            parse_config(write_config("train: [unclosed\n"))

    def test_top_level_must_be_mapping(self, write_config):
        """Test a YAML list at the top level is rejected"""
        with pytest.raises(ConfigError, match="mapping"):
            parse_config(write_config("- a\n- b\n"))

    def test_goal_must_lie_on_beam(self, write_config):
        """Test the cross-section check between episode and physics"""
        with pytest.raises(ConfigError, match="inside the beam"):
            parse_config(write_config("physics:\n  beam_length: 0.4\n"))

    def test_curriculum_goal_below_failure_threshold(self, write_config):
        """Test a phase goal band cannot reach the failure threshold"""
        text = "train:\n  curriculum:\n    phases:\n      - {e_goal: 0.5, fraction: 1.0}\n"
        with pytest.raises(ConfigError, match="e_max"):
            parse_config(write_config(text))

    @pytest.mark.parametrize("name", ["table1.yaml", "table2.yaml", "smoke.yaml"])
    def test_shipped_experiments_load(self, name):
        """Test the checked-in experiment files validate"""
        config = parse_config(EXPERIMENTS / name)
        assert config.compare

    @pytest.mark.parametrize("name", ["table1.yaml", "table2.yaml"])
    def test_result_experiments_train_five_seeds(self, name):
        """Test the comparison experiments average over seeds 0-4"""
        assert parse_config(EXPERIMENTS / name).seeds == [0, 1, 2, 3, 4]

    def test_restricted_experiment_compares_every_full_state_seed(self):
        """Test the full-state roster entry names one checkpoint per table1 seed"""
        config = parse_config(EXPERIMENTS / "table2.yaml")
        entry = config.compare[-1]
        assert entry.endswith("@none")
        assert [f"runs/table1/seed{s}/final.npz" for s in range(5)] == entry[len("policy:") : -len("@none")].split(",")

    def test_restricted_experiment_uses_restricted_actor_and_curriculum(self):
        """Test the ablation experiment's actor view and phases"""
        config = parse_config(EXPERIMENTS / "table2.yaml")
        assert config.train.actor_width == 3
        assert [p.e_goal for p in config.train.curriculum.phases] == [0.3, 0.15, 0.05]


class TestOverrides:
    """Test cases for key=value overrides"""

    def test_nested_override(self):
        """Test dotted keys reach nested sections with YAML typing"""
        config = apply_overrides(ExperimentConfig(), ["eval.episodes=5", "train.v_limit=moderate", "seeds=[1, 2]"])
        assert config.eval.episodes == 5
        assert config.train.v_limit == 0.3
        assert config.seeds == [1, 2]

    def test_override_is_validated(self):
        """Test overridden values go through validation"""
        with pytest.raises(ConfigError) as exc:
            apply_overrides(ExperimentConfig(), ["physics.beam_length=-2"])
        assert exc.value.key == "physics.beam_length"

    def test_unknown_section(self):
        """Test overriding inside a missing section fails"""
        with pytest.raises(ConfigError, match="unknown section"):
            apply_overrides(ExperimentConfig(), ["optimizer.lr=0.1"])

    def test_malformed_assignment(self):
        """Test an override without '=' fails"""
        with pytest.raises(ConfigError, match="key=value"):
            apply_overrides(ExperimentConfig(), ["eval.episodes"])

    def test_pid_preset_lookup(self):
        """Test PID presets by constraint level"""
        config = ExperimentConfig()
        assert config.pid_gains("strict") == config.pid_strict
        with pytest.raises(ConfigError):
            config.pid_gains("none")


class TestConfigHash:
    """Test cases for the provenance hash"""

    def test_hash_is_stable(self, write_config):
        """Test the same file hashes the same"""
        path = write_config("name: x\neval:\n  episodes: 3\n")
        assert config_hash(parse_config(path)) == config_hash(parse_config(path))
        assert len(config_hash(parse_config(path))) == 64

    def test_hash_tracks_changes(self):
        """Test any resolved value change alters the hash"""
        base = ExperimentConfig()
        assert config_hash(base) != config_hash(apply_overrides(base, ["eval.seed=7"]))

    def test_explicit_default_hashes_like_implicit(self, write_config):
        """Test the hash covers resolved values, not file text"""
        explicit = parse_config(write_config("eval:\n  episodes: 1000\n", "a.yaml"))
        implicit = parse_config(write_config("", "b.yaml"))
        assert config_hash(explicit) == config_hash(implicit)
