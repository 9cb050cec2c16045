"""
配置管理模块
"""

from .config_manager import (
    config_manager,
    ConfigManager,
    EngineConfig,
    LlmConfig,
    HarnessConfig,
    get_engine_config,
    get_llm_config,
    get_harness_config,
    get_fault_profile
)

__all__ = [
    'config_manager',
    'ConfigManager',
    'EngineConfig',
    'LlmConfig',
    'HarnessConfig',
    'get_engine_config',
    'get_llm_config',
    'get_harness_config',
    'get_fault_profile'
]
