"""
配置管理器测试
"""

import unittest
import tempfile
import os
import yaml
from unittest.mock import patch, MagicMock

import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.config.config_manager import ConfigManager, EngineConfig, HarnessConfig, PROJECT_ROOT
from src.core.errors import ConfigError


class TestConfigManager(unittest.TestCase):

    def setUp(self):
        """测试前设置"""
        self.test_dir = tempfile.mkdtemp()
        self.config_file = os.path.join(self.test_dir, "agentloom.yaml")

    def tearDown(self):
        """测试后清理"""
        import shutil
        shutil.rmtree(self.test_dir)

    def test_create_default_config(self):
        """配置文件不存在时写出默认配置"""
        manager = ConfigManager(config_file=self.config_file)

        self.assertTrue(os.path.exists(self.config_file))
        self.assertEqual(manager.engine.stall_threshold, 3)
        self.assertEqual(manager.engine.text_retry_budget, 3)
        self.assertEqual(manager.llm.profile, "Platform Default")
        self.assertEqual(manager.harness.seed, 7)

    def test_load_overrides(self):
        """文件中的值覆盖默认值，未知字段被忽略"""
        with open(self.config_file, 'w', encoding='utf-8') as f:
            yaml.dump({
                'engine': {'stall_threshold': 5, 'metacog_window': 12, 'not_a_field': 1},
                'harness': {'max_workers': 2},
                'fault_profiles': {'heavy': {'char_drop_prob': 0.5}},
            }, f)

        manager = ConfigManager(config_file=self.config_file)

        self.assertEqual(manager.engine.stall_threshold, 5)
        self.assertEqual(manager.engine.metacog_window, 12)
        self.assertEqual(manager.engine.schema_retries, 2)
        self.assertEqual(manager.harness.max_workers, 2)
        self.assertEqual(manager.get_fault_profile('heavy').char_drop_prob, 0.5)
        # 内置预设仍然可用
        self.assertEqual(manager.get_fault_profile('keyboard').char_drop_prob, 0.3)

    def test_fault_profiles(self):
        """故障预设查找"""
        manager = ConfigManager(config_file=self.config_file)

        self.assertEqual(manager.get_fault_profile(None).char_drop_prob, 0.0)
        self.assertEqual(manager.get_fault_profile('focus').focus_steal_prob, 0.3)
        flaky = manager.get_fault_profile('flaky')
        self.assertEqual((flaky.char_drop_prob, flaky.focus_steal_prob), (0.2, 0.2))

        with self.assertRaises(ConfigError):
            manager.get_fault_profile('earthquake')

    @patch.dict(os.environ, {'AGENTLOOM_LLM_URL': 'http://127.0.0.1:9999/v1', 'AGENTLOOM_LLM_KEY': 'secret',
                             'AGENTLOOM_LOG_LEVEL': 'debug'})
    def test_env_overrides(self):
        """环境变量优先于文件"""
        manager = ConfigManager(config_file=self.config_file)

        self.assertEqual(manager.llm.base_url, 'http://127.0.0.1:9999/v1')
        self.assertEqual(manager.llm.api_key, 'secret')
        self.assertEqual(manager.harness.log_level, 'DEBUG')
        self.assertTrue(manager.get_status()['llm_configured'])

    @patch.dict(os.environ, {'AGENTLOOM_LLM_KEY': 'secret'})
    def test_api_key_not_saved(self):
        """API key 不写入配置文件"""
        manager = ConfigManager(config_file=self.config_file)
        self.assertTrue(manager.save_config())

        with open(self.config_file, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
        self.assertEqual(data['llm']['api_key'], "")

    def test_update_engine_config(self):
        """更新引擎配置并触发回调"""
        manager = ConfigManager(config_file=self.config_file)
        callback = MagicMock()
        manager.add_config_change_callback(callback)

        self.assertTrue(manager.update_engine_config(stall_threshold=4))
        self.assertEqual(manager.engine.stall_threshold, 4)
        callback.assert_called_once_with(manager)

        # 未知字段返回 False，不抛出
        self.assertFalse(manager.update_engine_config(warp_drive=True))

    def test_callback_error_is_isolated(self):
        """回调异常不影响配置加载"""
        manager = ConfigManager(config_file=self.config_file)
        manager.add_config_change_callback(MagicMock(side_effect=RuntimeError("boom")))

        self.assertTrue(manager.reload_config())

    def test_invalid_yaml(self):
        """配置文件损坏时加载失败但不抛出"""
        with open(self.config_file, 'w', encoding='utf-8') as f:
            f.write("engine: [unclosed")

        manager = ConfigManager(config_file=self.config_file)
        self.assertFalse(manager.load_config())
        # 保留默认值
        self.assertEqual(manager.engine, EngineConfig())

    def test_harness_resolve(self):
        """相对路径以项目根目录为基准"""
        harness = HarnessConfig()

        self.assertEqual(harness.resolve("fixtures"), os.path.join(PROJECT_ROOT, "fixtures"))
        self.assertEqual(harness.resolve("/tmp/x"), "/tmp/x")

    def test_repository_config(self):
        """仓库自带的配置文件可以加载"""
        manager = ConfigManager(config_file=os.path.join(PROJECT_ROOT, "config", "agentloom.yaml"))

        self.assertEqual(manager.engine.branch_workers, 2)
        self.assertEqual(manager.harness.pricing_file, "config/pricing.yaml")
        self.assertIn('keyboard', manager.get_status()['fault_profiles'])


if __name__ == '__main__':
    unittest.main()
