# config/settings.py
import os
from dataclasses import dataclass
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class ConfigError(ValueError):
    """Invalid settings, run config, gait spec or command-line argument"""


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


@dataclass
class Settings:
    # Robot description and default run inputs
    ROBOT_DESCRIPTION_PATH: str = os.getenv("ROBOT_DESCRIPTION_PATH", "config/robot_biped.json")
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "data/runs")
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "1"))

    # Sensor timing (all IMUs, encoders and force sensors share one clock)
    SAMPLE_RATE_HZ: float = float(os.getenv("SAMPLE_RATE_HZ", "1000"))
    GRAVITY: float = float(os.getenv("GRAVITY", "9.81"))

    # Contact classification
    CONTACT_THRESHOLD_N: float = float(os.getenv("CONTACT_THRESHOLD_N", "20"))
    CONTACT_HYSTERESIS_N: float = float(os.getenv("CONTACT_HYSTERESIS_N", "5"))
    CONTACT_DEBOUNCE_S: float = float(os.getenv("CONTACT_DEBOUNCE_S", "0.010"))

    # Fallback tilt filter gain per tick, used when a log has no tilt columns
    TILT_FILTER_GAIN: float = float(os.getenv("TILT_FILTER_GAIN", "0.02"))

    # Streaming I/O
    LOG_CHUNK_ROWS: int = int(os.getenv("LOG_CHUNK_ROWS", "5000"))

    VERBOSE: bool = _env_bool("VERBOSE", "false")

    @classmethod
    def validate(cls):
        if cls.SAMPLE_RATE_HZ <= 0:
            raise ConfigError("SAMPLE_RATE_HZ must be positive")
        if cls.GRAVITY <= 0:
            raise ConfigError("GRAVITY must be positive")
        if cls.CONTACT_THRESHOLD_N <= 0:
            raise ConfigError("CONTACT_THRESHOLD_N must be positive")
        if not 0 <= cls.CONTACT_HYSTERESIS_N < cls.CONTACT_THRESHOLD_N:
            raise ConfigError("CONTACT_HYSTERESIS_N must be in [0, CONTACT_THRESHOLD_N)")
        if cls.CONTACT_DEBOUNCE_S < 0:
            raise ConfigError("CONTACT_DEBOUNCE_S must be non-negative")
        if not 0 < cls.TILT_FILTER_GAIN <= 1:
            raise ConfigError("TILT_FILTER_GAIN must be in (0, 1]")
        if cls.LOG_CHUNK_ROWS < 1:
            raise ConfigError("LOG_CHUNK_ROWS must be at least 1")

settings = Settings()
