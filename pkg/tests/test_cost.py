"""
成本核算测试
"""

import unittest
import os
import tempfile
from decimal import Decimal

import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.core.errors import ConfigError, UnpricedModel
from src.harness.cost import CostLedger, compute_cost, cost_table, load_pricing, load_profiles, reprice
from src.harness.trace import TraceRecorder
from src.llm.base import DEFAULT_MODELS, ROLES, TokenUsage

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'config')
PRICING = load_pricing(os.path.join(CONFIG_DIR, 'pricing.yaml'))
PROFILES = load_profiles(os.path.join(CONFIG_DIR, 'profiles.yaml'))


class TestComputeCost(unittest.TestCase):

    def test_single_model(self):
        self.assertEqual(compute_cost([TokenUsage(1_000_000, 0, "Gemini 3 Pro")], PRICING), Decimal("2.00"))

    def test_input_and_output(self):
        cost = compute_cost([TokenUsage(500_000, 100_000, "Qwen3-VL-8B")], PRICING)
        self.assertEqual(cost, Decimal("0.09"))

    def test_sum_over_models(self):
        usages = [TokenUsage(1_000_000, 1_000_000, "Gemini 2.5 Flash"), TokenUsage(2_000_000, 0, "Llama 3.1 8B")]
        self.assertEqual(compute_cost(usages, PRICING), Decimal("2.84"))

    def test_empty(self):
        self.assertEqual(compute_cost([], PRICING), Decimal(0))

    def test_unpriced(self):
        with self.assertRaises(UnpricedModel) as ctx:
            compute_cost([TokenUsage(1, 1, "Mystery-1")], PRICING)
        self.assertEqual(ctx.exception.model_name, "Mystery-1")

    def test_negative_usage_rejected(self):
        with self.assertRaises(ValueError):
            TokenUsage(-1, 0, "Gemini 3 Pro")


class TestPricingFiles(unittest.TestCase):

    def test_pricing_table(self):
        self.assertEqual(len(PRICING.rates), 11)
        self.assertIn("GPT-5 Nano", PRICING.models("budget"))
        self.assertEqual(PRICING.rate("Gemini 2.5 Pro").output_rate, Decimal("10.00"))

    def test_default_models_are_priced(self):
        for model in DEFAULT_MODELS.values():
            PRICING.rate(model)

    def test_profiles_cover_every_role(self):
        self.assertIn("Platform Default", PROFILES)
        for name, mapping in PROFILES.items():
            self.assertEqual(set(mapping), set(ROLES), name)
            for model in mapping.values():
                PRICING.rate(model)
        self.assertEqual(PROFILES["Platform Default"], DEFAULT_MODELS)
        self.assertEqual(PROFILES["All Frontier"]["executor"], "Gemini 3 Pro")
        self.assertEqual(PROFILES["Flash Cortex"]["cortex"], "Gemini 2.5 Flash")

    def test_invalid_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "x.yaml")
            with open(path, "w", encoding="utf-8") as f:
                f.write("profiles:\n  Bad: {chef: Gemini 3 Pro}\n")
            with self.assertRaises(ConfigError):
                load_profiles(path)
            with open(path, "w", encoding="utf-8") as f:
                f.write("models: {}\n")
            with self.assertRaises(ConfigError):
                load_pricing(path)
        with self.assertRaises(ConfigError):
            load_pricing(os.path.join(CONFIG_DIR, "missing.yaml"))


class TestLedger(unittest.TestCase):

    def _ledger(self):
        ledger = CostLedger()
        ledger.add("cortex", TokenUsage(1_000_000, 0, "Gemini 3 Pro"))
        ledger.add("cortex", TokenUsage(1_000_000, 0, "Gemini 3 Pro"))
        ledger.add("planner", TokenUsage(0, 1_000_000, "Llama 4 Scout"))
        return ledger

    def test_aggregation(self):
        ledger = self._ledger()
        self.assertEqual(ledger.by_role()["cortex"].calls, 2)
        self.assertEqual(ledger.totals().to_dict(),
                         {"input_tokens": 2_000_000, "output_tokens": 1_000_000, "calls": 3})
        self.assertEqual(ledger.cost(PRICING), Decimal("4.30"))

    def test_from_trace_counts_only_llm_nodes(self):
        recorder = TraceRecorder("r")
        recorder.add(1, "llm.cortex", "p", "x", usage=TokenUsage(10, 5, "Gemini 3 Pro"))
        recorder.add(1, "cortex", "p", "x", usage=TokenUsage(99, 99, "Gemini 3 Pro"))
        recorder.add(1, "tool_node", "p", "x")
        ledger = CostLedger.from_trace(recorder.records)
        self.assertEqual(ledger.totals().to_dict(), {"input_tokens": 10, "output_tokens": 5, "calls": 1})

    def test_combine(self):
        merged = CostLedger.combine([self._ledger(), self._ledger()])
        self.assertEqual(merged.totals().calls, 6)

    def test_reprice(self):
        """同样的用量换一个方案定价"""
        role_usage = self._ledger().by_role()
        all_frontier = reprice(role_usage, PROFILES["All Frontier"], PRICING)
        self.assertEqual(all_frontier, Decimal("16.00"))

    def test_cost_table(self):
        table = cost_table(self._ledger(), 2, PROFILES, PRICING)
        self.assertEqual(list(table.columns), ["profile", "total_usd", "per_task_usd", "cortex_model"])
        self.assertEqual(len(table), len(PROFILES))
        row = table[table["profile"] == "Platform Default"].iloc[0]
        self.assertAlmostEqual(row["total_usd"], 4.30)
        self.assertAlmostEqual(row["per_task_usd"], 2.15)

    def test_cost_table_without_tasks(self):
        table = cost_table(CostLedger(), 0, PROFILES, PRICING)
        self.assertTrue((table["per_task_usd"] == 0).all())


if __name__ == '__main__':
    unittest.main()
