"""Self-stabilizing Byzantine pulse synchronization: protocol, simulator and checkers."""

from .config import ConfigError, SimConfig, derive_constants, load_config, validate_config

__all__ = ["ConfigError", "SimConfig", "derive_constants", "load_config", "validate_config"]
__version__ = "0.1.0"
