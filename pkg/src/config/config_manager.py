"""
AgentLoom 配置管理 - YAML版本
引擎参数、LLM 后端、评测框架与故障预设统一从一个 YAML 文件加载，环境变量优先
"""

import yaml
import threading
import os
from typing import Dict, Any, Optional
from dataclasses import dataclass, asdict
import logging

from src.core.errors import ConfigError
from src.core.models import FaultProfile

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))
DEFAULT_CONFIG_FILE = os.path.join(PROJECT_ROOT, 'config', 'agentloom.yaml')


@dataclass
class EngineConfig:
    """执行图配置"""
    stall_threshold: int = 3  # 连续空输出次数达到后判定子目标失败
    summarizer_threshold: int = 40  # 历史消息上限
    keep_recent: int = 10  # 摘要时原样保留的最近消息数
    schema_retries: int = 2  # 结构化输出重试次数
    metacog_window: int = 8
    stagnation_k: int = 4
    text_retry_budget: int = 3  # 文本输入校验重试上限
    branch_workers: int = 2  # 并行分支线程数


@dataclass
class LlmConfig:
    """LLM 后端配置"""
    base_url: str = ""
    api_key: str = ""
    timeout_seconds: float = 60.0
    max_attempts: int = 3
    backoff_base_seconds: float = 0.5
    max_in_flight: int = 4
    profile: str = "Platform Default"  # 角色到模型的映射方案


@dataclass
class HarnessConfig:
    """评测框架配置，相对路径以项目根目录为基准"""
    fixtures_dir: str = "fixtures"
    pricing_file: str = "config/pricing.yaml"
    profiles_file: str = "config/profiles.yaml"
    suite_file: str = "fixtures/suite.jsonl"
    output_dir: str = "out"
    max_workers: int = 4
    seed: int = 7
    log_level: str = "INFO"

    def resolve(self, path: str) -> str:
        """把配置中的相对路径解析为绝对路径"""
        if os.path.isabs(path):
            return path
        return os.path.join(PROJECT_ROOT, path)


def _default_fault_profiles() -> Dict[str, FaultProfile]:
    return {
        'none': FaultProfile(),
        'keyboard': FaultProfile(char_drop_prob=0.3),
        'focus': FaultProfile(focus_steal_prob=0.3),
        'flaky': FaultProfile(char_drop_prob=0.2, focus_steal_prob=0.2),
    }


class ConfigManager:
    """配置管理器 - YAML版本"""

    def __init__(self, config_file: str = None):
        # 显式参数优先，其次环境变量，最后是仓库自带的默认文件
        self.config_file = config_file or os.getenv('AGENTLOOM_CONFIG') or DEFAULT_CONFIG_FILE
        self.engine = EngineConfig()
        self.llm = LlmConfig()
        self.harness = HarnessConfig()
        self.fault_profiles: Dict[str, FaultProfile] = _default_fault_profiles()
        self._lock = threading.RLock()
        self._callbacks = []  # 配置变更回调函数列表

        self.load_config()

    def load_config(self) -> bool:
        """加载配置文件并应用环境变量覆盖"""
        try:
            with self._lock:
                if os.path.exists(self.config_file):
                    with open(self.config_file, 'r', encoding='utf-8') as f:
                        data = yaml.safe_load(f) or {}

                    engine_data = data.get('engine', {})
                    llm_data = data.get('llm', {})
                    harness_data = data.get('harness', {})

                    self.engine = EngineConfig(**{k: v for k, v in engine_data.items() if k in EngineConfig.__dataclass_fields__})
                    self.llm = LlmConfig(**{k: v for k, v in llm_data.items() if k in LlmConfig.__dataclass_fields__})
                    self.harness = HarnessConfig(**{k: v for k, v in harness_data.items() if k in HarnessConfig.__dataclass_fields__})

                    profiles = _default_fault_profiles()
                    for name, profile_data in (data.get('fault_profiles') or {}).items():
                        profiles[name] = FaultProfile(**profile_data)
                    self.fault_profiles = profiles

                    logging.info(f"配置加载成功: {self.config_file}")
                else:
                    logging.info(f"配置文件不存在，创建默认配置: {self.config_file}")
                    self.save_config()

                self._apply_env_overrides()
            self._notify_config_change()
            return True
        except Exception as e:
            logging.error(f"加载配置失败: {e}")
            return False

    def _apply_env_overrides(self):
        """环境变量覆盖文件中的值"""
        url = os.getenv('AGENTLOOM_LLM_URL')
        if url:
            self.llm.base_url = url
        key = os.getenv('AGENTLOOM_LLM_KEY')
        if key:
            self.llm.api_key = key
        level = os.getenv('AGENTLOOM_LOG_LEVEL')
        if level:
            self.harness.log_level = level.upper()

    def save_config(self) -> bool:
        """保存配置；API key 不落盘"""
        try:
            with self._lock:
                llm_data = asdict(self.llm)
                llm_data['api_key'] = ""
                data = {
                    'engine': asdict(self.engine),
                    'llm': llm_data,
                    'harness': asdict(self.harness),
                    'fault_profiles': {name: asdict(p) for name, p in self.fault_profiles.items()},
                }
                directory = os.path.dirname(self.config_file)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                with open(self.config_file, 'w', encoding='utf-8') as f:
                    yaml.dump(data, f, default_flow_style=False, allow_unicode=True, indent=2, sort_keys=False)
            logging.info("配置已保存")
            return True
        except Exception as e:
            logging.error(f"保存配置失败: {e}")
            return False

    def get_fault_profile(self, name: Optional[str]) -> FaultProfile:
        """按名称获取故障预设，None 视为 none"""
        with self._lock:
            profile = self.fault_profiles.get(name or 'none')
        if profile is None:
            raise ConfigError(f"未知的故障预设: {name}（可选: {', '.join(sorted(self.fault_profiles))}）")
        return profile

    def update_engine_config(self, **kwargs) -> bool:
        """更新引擎配置"""
        try:
            with self._lock:
                for key, value in kwargs.items():
                    if not hasattr(self.engine, key):
                        raise ConfigError(f"未知的引擎配置项: {key}")
                    setattr(self.engine, key, value)
            self._notify_config_change()
            return True
        except Exception as e:
            logging.error(f"更新引擎配置失败: {e}")
            return False

    def add_config_change_callback(self, callback):
        """添加配置变更回调函数"""
        self._callbacks.append(callback)

    def _notify_config_change(self):
        """通知配置变更"""
        for callback in self._callbacks:
            try:
                callback(self)
            except Exception as e:
                logging.error(f"配置变更回调执行失败: {e}")

    def reload_config(self) -> bool:
        """重新加载配置"""
        return self.load_config()

    def get_status(self) -> Dict[str, Any]:
        """配置概要，供 CLI 打印"""
        return {
            "config_file": self.config_file,
            "llm_configured": bool(self.llm.base_url),
            "profile": self.llm.profile,
            "fault_profiles": sorted(self.fault_profiles),
        }


# 全局配置管理器实例
config_manager = ConfigManager()


# 便捷函数
def get_engine_config() -> EngineConfig:
    """获取引擎配置"""
    return config_manager.engine


def get_llm_config() -> LlmConfig:
    """获取 LLM 后端配置"""
    return config_manager.llm


def get_harness_config() -> HarnessConfig:
    """获取评测框架配置"""
    return config_manager.harness


def get_fault_profile(name: Optional[str]) -> FaultProfile:
    """获取故障预设"""
    return config_manager.get_fault_profile(name)
