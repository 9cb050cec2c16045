"""
文本输入校验与工具节点测试
"""

import unittest
import os
from unittest.mock import MagicMock

import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.core.errors import FieldNotEditable, PreconditionViolation
from src.core.models import (
    ActionKind, ActionResult, ActionStatus, FaultProfile, Rect, SelectorBundle, SelectorTier, ToolCall, UiNode,
)
from src.device.sim_app import load_apps
from src.device.simulator import SimDevice
from src.execution.text_input import input_text_verified, pin_selector
from src.execution.tool_node import execute_call, execute_sequential
from src.graph.state import AblationFlags
from src.llm.oracle import OracleBackend
from src.memory.scratchpad import Scratchpad

APPS = load_apps(os.path.join(os.path.dirname(__file__), '..', 'fixtures', 'apps'))
TITLE = SelectorBundle(resource_id="title_input")


def _compose(faults: FaultProfile = None) -> SimDevice:
    """停在新建笔记界面的设备"""
    device = SimDevice(APPS, faults)
    device.launch_app("notes")
    device.tap(SelectorBundle(resource_id="new_note"))
    return device


class TestTextInput(unittest.TestCase):

    def test_clean_keyboard(self):
        device = _compose()
        feedback = input_text_verified(TITLE, "Milk", device)

        self.assertTrue(feedback.verified)
        self.assertEqual(feedback.actual, "Milk")
        self.assertEqual(feedback.attempts, 1)
        self.assertEqual(feedback.tier_used, SelectorTier.RESOURCE_ID)
        self.assertEqual(device.field_value("notes", "title_input"), "Milk")

    def test_appends_to_existing_content(self):
        device = SimDevice(APPS)
        device.launch_app("notes")
        device.tap(SelectorBundle(text_match="Greeting"))
        device.tap(SelectorBundle(resource_id="edit_note"))
        feedback = input_text_verified(SelectorBundle(resource_id="body_input"), "Sam", device)

        self.assertTrue(feedback.verified)
        self.assertEqual(feedback.actual, "Hi Sam")

    def test_coordinate_tier(self):
        device = _compose()
        feedback = input_text_verified(SelectorBundle(coordinates=(500, 300)), "Tea", device)

        self.assertEqual(feedback.tier_used, SelectorTier.COORDINATES)
        self.assertEqual(device.field_value("notes", "title_input"), "Tea")

    def test_preconditions(self):
        device = _compose()
        with self.assertRaises(PreconditionViolation):
            input_text_verified(TITLE, "", device)
        with self.assertRaises(PreconditionViolation):
            input_text_verified(TITLE, "x", device, retry_budget=0)
        with self.assertRaises(FieldNotEditable):
            input_text_verified(SelectorBundle(resource_id="save_note"), "x", device)

    def test_reports_failure_truthfully(self):
        """键盘每个字符都丢失时，校验失败并报告真实内容"""
        device = _compose(FaultProfile(char_drop_prob=1.0))
        feedback = input_text_verified(TITLE, "Milk", device, retry_budget=3)

        self.assertFalse(feedback.verified)
        self.assertEqual(feedback.attempts, 3)
        self.assertEqual(feedback.actual, "")
        self.assertEqual(device.field_value("notes", "title_input"), "")

    def test_without_post_validation(self):
        """关闭后置校验时照单全收，设备内容可能不一致"""
        device = _compose(FaultProfile(char_drop_prob=1.0))
        feedback = input_text_verified(TITLE, "Milk", device, post_validation=False)

        self.assertTrue(feedback.verified)
        self.assertEqual(feedback.actual, "Milk")
        self.assertEqual(device.field_value("notes", "title_input"), "")

    def test_focus_steal_is_retried(self):
        device = _compose(FaultProfile(focus_steal_prob=1.0))
        feedback = input_text_verified(TITLE, "Milk", device, retry_budget=2)

        self.assertFalse(feedback.verified)
        self.assertEqual(feedback.attempts, 2)

    def test_feedback_is_truthful_across_seeds(self):
        """任意故障种子下，反馈与设备上的实际内容一致"""
        for seed in range(1000):
            with self.subTest(seed=seed):
                device = _compose(FaultProfile(char_drop_prob=0.3, focus_steal_prob=0.2, rng_seed=seed))
                feedback = input_text_verified(TITLE, "Alice", device)
                actual = device.field_value("notes", "title_input") or ""

                self.assertEqual(feedback.actual, actual)
                if feedback.verified:
                    self.assertTrue(actual.endswith("Alice"))
                else:
                    self.assertFalse(actual.endswith("Alice"))
                self.assertLessEqual(feedback.attempts, 3)


class TestPinSelector(unittest.TestCase):
    """文本输入重试时使用的选择器"""

    def setUp(self):
        self.first = UiNode("first", Rect(0, 0, 1080, 200), resource_id="row_input", editable=True)
        self.second = UiNode("second", Rect(0, 200, 1080, 400), resource_id="row_input", editable=True)
        self.title = UiNode("title", Rect(0, 400, 1080, 600), resource_id="title_input", editable=True)
        self.root = UiNode("app/screen", Rect(0, 0, 1080, 2400), children=(self.first, self.second, self.title))

    def test_shared_resource_id_keeps_coordinates(self):
        """resource_id 重复时改绑会落到第一个同名字段"""
        bundle = SelectorBundle(coordinates=(500, 300))
        self.assertEqual(pin_selector(bundle, self.second, SelectorTier.COORDINATES, self.root), bundle)

    def test_unique_resource_id_is_pinned(self):
        bundle = SelectorBundle(coordinates=(500, 500))
        self.assertEqual(pin_selector(bundle, self.title, SelectorTier.COORDINATES, self.root),
                         SelectorBundle(resource_id="title_input"))
        bundle = SelectorBundle(resource_id="row_input")
        self.assertIs(pin_selector(bundle, self.first, SelectorTier.RESOURCE_ID, self.root), bundle)

    def test_node_without_resource_id(self):
        node = UiNode("plain", Rect(0, 600, 1080, 800), editable=True)
        bundle = SelectorBundle(text_match="Body")
        self.assertIs(pin_selector(bundle, node, SelectorTier.TEXT, self.root), bundle)


class TestToolNode(unittest.TestCase):

    def setUp(self):
        self.flags = AblationFlags()
        self.scratchpad = Scratchpad()

    def test_sequential_abort(self):
        device = SimDevice(APPS)
        calls = [
            ToolCall(ActionKind.LAUNCH_APP, payload="contacts"),
            ToolCall(ActionKind.TAP, SelectorBundle(text_match="Nobody")),
            ToolCall(ActionKind.TAP, SelectorBundle(resource_id="add_contact")),
        ]
        results = execute_sequential(calls, device, self.flags, self.scratchpad)

        self.assertEqual([r.status for r in results], [ActionStatus.OK, ActionStatus.FAILED, ActionStatus.ABORTED])
        self.assertEqual(device.get_state().screen, "contacts/list")

    def test_without_sequential_continues(self):
        device = SimDevice(APPS)
        calls = [
            ToolCall(ActionKind.LAUNCH_APP, payload="contacts"),
            ToolCall(ActionKind.TAP, SelectorBundle(text_match="Nobody")),
            ToolCall(ActionKind.TAP, SelectorBundle(resource_id="add_contact")),
        ]
        flags = AblationFlags.disabled(["sequential_exec"])
        results = execute_sequential(calls, device, flags, self.scratchpad)

        self.assertEqual([r.status for r in results], [ActionStatus.OK, ActionStatus.FAILED, ActionStatus.OK])
        self.assertEqual(device.get_state().screen, "contacts/edit")

    def test_empty_calls(self):
        self.assertEqual(execute_sequential([], MagicMock(), self.flags), [])

    def test_notes(self):
        device = MagicMock()
        ok = execute_call(ToolCall(ActionKind.SAVE_NOTE, payload="total=712.50"), device, self.flags,
                          self.scratchpad, cycle_index=4)
        self.assertTrue(ok.ok)
        self.assertEqual(self.scratchpad.read_note("total"), "712.50")
        self.assertEqual(self.scratchpad.get("total").written_at_cycle, 4)

        read = execute_call(ToolCall(ActionKind.READ_NOTE, payload="total"), device, self.flags, self.scratchpad)
        self.assertEqual(read.data, "712.50")
        listed = execute_call(ToolCall(ActionKind.LIST_NOTES), device, self.flags, self.scratchpad)
        self.assertEqual(listed.data, ["total"])

        bad = execute_call(ToolCall(ActionKind.SAVE_NOTE, payload="no separator"), device, self.flags,
                           self.scratchpad)
        self.assertEqual(bad.error, "InvalidPayload")
        device.apply_action.assert_not_called()

    def test_scratchpad_disabled(self):
        flags = AblationFlags.disabled(["scratchpad"])
        result = execute_call(ToolCall(ActionKind.SAVE_NOTE, payload="a=b"), MagicMock(), flags, self.scratchpad)
        self.assertEqual(result.error, "ToolUnavailable")
        self.assertEqual(self.scratchpad.list_notes(), [])

    def test_video_disabled(self):
        flags = AblationFlags.disabled(["video"])
        device = MagicMock()
        result = execute_call(ToolCall(ActionKind.START_RECORDING), device, flags)
        self.assertEqual(result.error, "ToolUnavailable")
        device.start_recording.assert_not_called()

    def test_recording_extraction(self):
        device = SimDevice(APPS)
        device.launch_app("settings")
        device.tap(SelectorBundle(resource_id="accounts_row"))
        calls = [
            ToolCall(ActionKind.START_RECORDING),
            ToolCall(ActionKind.TAP, SelectorBundle(resource_id="sync_now")),
            ToolCall(ActionKind.WAIT),
            ToolCall(ActionKind.WAIT),
            ToolCall(ActionKind.STOP_RECORDING, payload="extract the Sync status"),
        ]
        results = execute_sequential(calls, device, self.flags, backend=OracleBackend({}))

        self.assertTrue(all(r.ok for r in results))
        self.assertEqual(results[-1].data["extraction"], "42")
        self.assertIn("frames", results[-1].data["summary"])

    def test_type_text_failure_feedback(self):
        device = _compose(FaultProfile(char_drop_prob=1.0))
        result = execute_call(ToolCall(ActionKind.TYPE_TEXT, TITLE, "Milk"), device, self.flags, retry_budget=1)

        self.assertEqual(result.error, "VerificationFailed")
        self.assertFalse(result.feedback.verified)
        self.assertIn('actual=""', result.detail)

    def test_type_text_missing_element(self):
        device = _compose()
        result = execute_call(ToolCall(ActionKind.TYPE_TEXT, SelectorBundle(resource_id="nope"), "x"), device,
                              self.flags)
        self.assertEqual(result.error, "ElementNotFound")

    def test_device_actions_delegate(self):
        device = MagicMock()
        device.apply_action.return_value = ActionResult.success("back")
        call = ToolCall(ActionKind.BACK)

        self.assertTrue(execute_call(call, device, self.flags).ok)
        device.apply_action.assert_called_once_with(call)


if __name__ == '__main__':
    unittest.main()
