"""
Tests for configuration module.

This module tests loading of process-wide settings from .env files and
environment variables.
"""

from pathlib import Path

from lipirm import config as config_module
from lipirm.config import Config, get_config, load_env_file

LIPIRM_VARS = [
    "LIPIRM_DATA_DIR",
    "LIPIRM_OUTPUT_DIR",
    "LIPIRM_RHO_FLOOR",
    "LIPIRM_ETA_CAP",
    "LIPIRM_WKB_LOG_BOUND",
    "LIPIRM_FD_STEP",
    "LIPIRM_N_GRID",
    "LIPIRM_SEED",
    "LIPIRM_JOBS",
    "LIPIRM_SHOW_PROGRESS",
]


class TestLoadEnvFile:
    """Test .env file loading."""

    def test_load_env_file_basic(self, tmp_path):
        """Test comments, blank lines and plain values."""
        env_file = tmp_path / ".env"
        env_file.write_text(
            """
# Numerical guards
LIPIRM_RHO_FLOOR=1e-4

LIPIRM_N_GRID=257
"""
        )

        env_vars = load_env_file(env_file)

        assert env_vars == {"LIPIRM_RHO_FLOOR": "1e-4", "LIPIRM_N_GRID": "257"}

    def test_load_env_file_with_quotes(self, tmp_path):
        """Test that matching quotes are stripped."""
        env_file = tmp_path / ".env"
        env_file.write_text("LIPIRM_DATA_DIR=\"my data\"\nLIPIRM_OUTPUT_DIR='out'\n")

        env_vars = load_env_file(env_file)

        assert env_vars["LIPIRM_DATA_DIR"] == "my data"
        assert env_vars["LIPIRM_OUTPUT_DIR"] == "out"

    def test_load_env_file_not_found(self, tmp_path):
        """Test loading a non-existent .env file."""
        assert load_env_file(tmp_path / "nonexistent.env") == {}

    def test_load_env_file_search(self, tmp_path, monkeypatch):
        """Test that a .env file in a parent directory is found."""
        (tmp_path / ".env").write_text("LIPIRM_SEED=42\n")
        nested = tmp_path / "a" / "b"
        nested.mkdir(parents=True)
        monkeypatch.chdir(nested)

        assert load_env_file(None) == {"LIPIRM_SEED": "42"}


class TestConfig:
    """Test Config class."""

    def _clear(self, monkeypatch):
        for var in LIPIRM_VARS:
            monkeypatch.delenv(var, raising=False)

    def test_config_defaults(self, tmp_path, monkeypatch):
        """Test default configuration values."""
        self._clear(monkeypatch)
        config = Config(env_path=tmp_path / "missing.env")

        assert config.data_dir == "data"
        assert config.output_dir == str((Path("data") / "runs").absolute())
        assert config.rho_floor == 1e-6
        assert config.eta_cap == 1e6
        assert config.wkb_log_bound == 700.0
        assert config.fd_step == 1e-3
        assert config.n_grid == 513
        assert config.seed == 0
        assert config.jobs == 1
        assert config.show_progress is True

    def test_config_from_env_file(self, tmp_path, monkeypatch):
        """Test loading configuration from a .env file."""
        self._clear(monkeypatch)
        env_file = tmp_path / ".env"
        env_file.write_text(
            """
LIPIRM_RHO_FLOOR=1e-3
LIPIRM_ETA_CAP=500
LIPIRM_N_GRID=129
LIPIRM_JOBS=4
LIPIRM_SHOW_PROGRESS=off
"""
        )

        config = Config(env_path=env_file)

        assert config.rho_floor == 1e-3
        assert config.eta_cap == 500.0
        assert config.n_grid == 129
        assert config.jobs == 4
        assert config.show_progress is False

    def test_config_env_vars_override_file(self, tmp_path, monkeypatch):
        """Test that environment variables override the .env file."""
        env_file = tmp_path / ".env"
        env_file.write_text("LIPIRM_SEED=1")
        monkeypatch.setenv("LIPIRM_SEED", "7")

        assert Config(env_path=env_file).seed == 7

    def test_config_invalid_values_fall_back(self, tmp_path, monkeypatch):
        """Test that unparsable values fall back to defaults."""
        self._clear(monkeypatch)
        env_file = tmp_path / ".env"
        env_file.write_text("LIPIRM_N_GRID=many\nLIPIRM_FD_STEP=small\nLIPIRM_SHOW_PROGRESS=maybe\n")

        config = Config(env_path=env_file)

        assert config.n_grid == 513
        assert config.fd_step == 1e-3
        assert config.show_progress is True

    def test_config_output_dir(self, tmp_path, monkeypatch):
        """Test that relative output paths resolve against data_dir and absolute ones are kept."""
        self._clear(monkeypatch)
        env_file = tmp_path / ".env"
        env_file.write_text("LIPIRM_DATA_DIR=/custom/data\nLIPIRM_OUTPUT_DIR=experiments\n")
        assert Config(env_path=env_file).output_dir == str(Path("/custom/data/experiments").absolute())

        env_file.write_text(f"LIPIRM_OUTPUT_DIR={tmp_path / 'abs'}\n")
        assert Config(env_path=env_file).output_dir == str(tmp_path / "abs")

    def test_config_to_dict_and_repr(self):
        """Test the dictionary and string forms."""
        config = Config()
        config_dict = config.to_dict()

        assert set(config_dict) == {
            "data_dir",
            "output_dir",
            "rho_floor",
            "eta_cap",
            "wkb_log_bound",
            "fd_step",
            "n_grid",
            "seed",
            "jobs",
            "show_progress",
        }
        assert repr(config).startswith("Config(")
        assert "rho_floor=" in repr(config)


class TestGetConfig:
    """Test get_config function."""

    def test_get_config_singleton(self):
        """Test that get_config returns the same instance."""
        assert get_config() is get_config()

    def test_get_config_reload(self, monkeypatch):
        """Test that reload=True picks up changed variables."""
        first = get_config()
        monkeypatch.setenv("LIPIRM_ETA_CAP", "12.5")

        assert get_config(reload=False) is first
        reloaded = get_config(reload=True)
        assert reloaded is not first
        assert reloaded.eta_cap == 12.5
        assert config_module._config is reloaded

    def test_progress_disabled_for_tests(self):
        """Test that the shared fixture turns progress bars off."""
        assert get_config().show_progress is False
