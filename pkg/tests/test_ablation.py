"""
消融扫描测试：关闭每个组件后，依赖该组件的任务应当失败
"""

import json
import unittest
import os
import tempfile

import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.config.config_manager import get_fault_profile
from src.core.errors import PreconditionViolation
from src.graph.state import AblationFlags
from src.harness import report as reports
from src.harness.ablation import FULL, ablation_sweep
from src.harness.suite import load_fixtures, load_suite, select_tasks

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), '..', 'fixtures')
FIXTURES = load_fixtures(FIXTURES_DIR)
SUITE = load_suite(os.path.join(FIXTURES_DIR, 'suite.jsonl'))

# 组件 → 只有该组件存在时才能完成的任务
DEPENDENT_TASKS = {
    "multi_agent": "contacts_add_two",
    "sequential_exec": "settings_wifi_on",
    "hybrid_perception": "settings_dark_mode",
    "metacog": "notes_open_old_plan",
    "scratchpad": "settings_sync_count",
    "data_fidelity_prompt": "contacts_add_mckay",
    "video": "settings_sync_count",
}

# 没有元认知就会在原地打转、直到预算耗尽的任务
LOOP_PRONE_TASKS = ("notes_open_old_plan", "expenses_food_total")
SEED = 7


class TestAblationSweep(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        ids = sorted(set(DEPENDENT_TASKS.values()) | set(LOOP_PRONE_TASKS) | {"contacts_add_alice"})
        cls.tasks = select_tasks(SUITE, ids)
        cls.report = ablation_sweep(cls.tasks, AblationFlags.components(), FIXTURES.oracle(), SEED, FIXTURES,
                                    max_workers=2)

    def test_configurations(self):
        self.assertEqual(list(self.report.reports),
                         [FULL] + [f"-{c}" for c in AblationFlags.components()])
        self.assertEqual(self.report.full.success_rate, 1.0)

    def test_each_component_matters(self):
        for component, task_id in DEPENDENT_TASKS.items():
            with self.subTest(component=component):
                self.assertIn(task_id, self.report.new_failures(f"-{component}"))
                self.assertLess(self.report.delta(f"-{component}"), 0)

    def test_loop_prone_tasks_exhaust_budget(self):
        """关闭元认知后，所有容易打转的任务都以预算耗尽结束"""
        for task_id in LOOP_PRONE_TASKS:
            with self.subTest(task=task_id):
                self.assertTrue(self.report.full.outcome(task_id).success)
                outcome = self.report.reports["-metacog"].outcome(task_id)
                self.assertFalse(outcome.success)
                self.assertEqual(outcome.stop_reason, "budget_exhausted")

    def test_no_faults_no_validation_loss(self):
        """没有键盘故障时，关闭输入校验不影响结果"""
        self.assertEqual(self.report.delta("-post_validation"), 0.0)

    def test_rows_and_matrix(self):
        rows = {r["configuration"]: r for r in self.report.rows()}
        self.assertEqual(rows[FULL]["delta_sr"], 0.0)
        self.assertEqual(rows[FULL]["success_rate"], 100.0)
        matrix = self.report.matrix()
        self.assertEqual(set(matrix), {t.id for t in self.tasks})
        self.assertTrue(matrix["contacts_add_alice"]["-metacog"])

    def test_render_and_save(self):
        text = reports.render_ablation(self.report)
        self.assertIn("-metacog", text)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "ablation.json")
            self.report.save(path)
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        self.assertEqual(len(data["rows"]), len(AblationFlags.components()) + 1)


class TestKeyboardFaultSweep(unittest.TestCase):
    """键盘漏字故障下的完整消融扫描"""

    @classmethod
    def setUpClass(cls):
        cls.report = ablation_sweep(SUITE, AblationFlags.components(), FIXTURES.oracle(), SEED, FIXTURES,
                                    faults=get_fault_profile("keyboard"), fault_name="keyboard", max_workers=4)

    def test_full_system_survives_dropped_keys(self):
        self.assertEqual(self.report.full.success_rate, 1.0)
        self.assertEqual(self.report.full.fault_profile, "keyboard")

    def test_post_validation_loss(self):
        """关闭输入校验至少损失 20 个百分点，新增失败全部是文本输入任务"""
        self.assertLessEqual(self.report.delta("-post_validation"), -20.0)
        failures = self.report.new_failures("-post_validation")
        self.assertTrue(failures)
        tags = {o.task_id: o.tags for o in self.report.full.outcomes}
        for task_id in failures:
            self.assertIn("text-entry", tags[task_id], task_id)

    def test_full_system_is_best(self):
        full = self.report.full.success_rate
        for name, report in self.report.reports.items():
            self.assertGreaterEqual(full, report.success_rate, name)


class TestAblationArguments(unittest.TestCase):

    def test_unknown_component(self):
        with self.assertRaises(PreconditionViolation):
            ablation_sweep([], ["teleport"], FIXTURES.oracle(), 7, FIXTURES)

    def test_empty_suite(self):
        report = ablation_sweep([], ["metacog"], FIXTURES.oracle(), 7, FIXTURES)
        self.assertIsNone(report.delta("-metacog"))
        self.assertIsNone(report.rows()[1]["success_rate"])


if __name__ == '__main__':
    unittest.main()
