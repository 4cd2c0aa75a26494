"""Configuration for ledgerfl."""

from ledgerfl.config.settings import AttackSettings, RoundConfig, get_settings, load_config

__all__ = ["AttackSettings", "RoundConfig", "get_settings", "load_config"]
