"""
在线后端测试：通过 FastAPI 桩服务验证请求格式、重试与限流处理
"""

import unittest
import os
from unittest.mock import MagicMock

import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import httpx
from fastapi.testclient import TestClient

from src.config.config_manager import EngineConfig, LlmConfig
from src.core.errors import ConfigError, RateLimited, TransportError
from src.core.models import FaultProfile
from src.graph.engine import run_task
from src.harness.suite import load_fixtures, load_suite, select_tasks
from src.llm.base import CompletionRequest
from src.llm.live import LiveBackend
from src.llm.scripted import RecordingBackend, ScriptBook
from tests.stub_llm_server import StubState, create_app

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), '..', 'fixtures')
STUB_URL = "http://testserver/v1"


def _config(**kwargs):
    values = dict(base_url=STUB_URL, api_key="", max_attempts=3, backoff_base_seconds=0.5)
    values.update(kwargs)
    return LlmConfig(**values)


class TestLiveBackend(unittest.TestCase):

    def setUp(self):
        self.state = StubState()
        self.client = TestClient(create_app(self.state))
        self.sleep = MagicMock()
        self.backend = LiveBackend(_config(), client=self.client, sleep=self.sleep)
        self.request = CompletionRequest("planner", "Plan this", output_schema={"type": "object"})

    def tearDown(self):
        self.client.close()

    def test_request_body(self):
        self.state.push_reply('{"subgoals": []}', 12, 3)
        text, usage = self.backend.complete(self.request)

        self.assertEqual(text, '{"subgoals": []}')
        self.assertEqual((usage.input_tokens, usage.output_tokens, usage.model_name), (12, 3, "Llama 4 Scout"))
        body = self.state.requests[0]
        self.assertEqual(body["model"], "Llama 4 Scout")
        self.assertEqual(body["messages"][-1], {"role": "user", "content": "Plan this"})
        self.assertEqual(body["response_format"]["json_schema"]["name"], "planner")
        self.assertEqual(body["temperature"], 0.0)

    def test_profile_models(self):
        backend = LiveBackend(_config(), {"planner": "Qwen3-VL-8B"}, client=self.client)
        self.state.push_reply("{}")
        _, usage = backend.complete(self.request)
        self.assertEqual(usage.model_name, "Qwen3-VL-8B")

    def test_retries_server_errors(self):
        self.state.push(503, {"error": "busy"})
        self.state.push_reply("{}")
        text, _ = self.backend.complete(self.request)

        self.assertEqual(text, "{}")
        self.assertEqual(len(self.state.requests), 2)
        self.sleep.assert_called_once_with(0.5)

    def test_gives_up_after_max_attempts(self):
        for _ in range(3):
            self.state.push(500, {"error": "boom"})
        with self.assertRaises(TransportError):
            self.backend.complete(self.request)
        self.assertEqual(len(self.state.requests), 3)
        self.assertEqual([c.args[0] for c in self.sleep.call_args_list], [0.5, 1.0])

    def test_rate_limited_then_ok(self):
        """429 之后按 Retry-After 等待再重试"""
        self.state.push(429, {"error": "slow down"}, headers={"Retry-After": "2"})
        self.state.push_reply('{"subgoals": []}')
        text, _ = self.backend.complete(self.request)

        self.assertEqual(text, '{"subgoals": []}')
        self.assertEqual(len(self.state.requests), 2)
        self.sleep.assert_called_once_with(2.0)

    def test_rate_limited_without_retry_after(self):
        self.state.push(429, {"error": "slow down"}, headers={"Retry-After": "Wed, 21 Oct 2026 07:28:00 GMT"})
        self.state.push_reply("{}")
        self.backend.complete(self.request)
        self.sleep.assert_called_once_with(0.5)

    def test_rate_limited_until_exhausted(self):
        for _ in range(3):
            self.state.push(429, {"error": "slow down"})
        with self.assertRaises(RateLimited):
            self.backend.complete(self.request)
        self.assertEqual(len(self.state.requests), 3)
        self.assertEqual([c.args[0] for c in self.sleep.call_args_list], [0.5, 1.0])

    def test_client_errors(self):
        self.state.push(400, {"error": "bad request"})
        with self.assertRaises(TransportError):
            self.backend.complete(self.request)
        self.state.push(200, {"unexpected": True})
        with self.assertRaises(TransportError):
            self.backend.complete(self.request)

    def test_connection_errors(self):
        def refuse(request):
            raise httpx.ConnectError("refused", request=request)

        client = httpx.Client(transport=httpx.MockTransport(refuse))
        backend = LiveBackend(_config(max_attempts=2), client=client, sleep=self.sleep)
        with self.assertRaises(TransportError):
            backend.complete(self.request)
        self.assertEqual(self.sleep.call_count, 1)

    def test_api_key_header(self):
        seen = {}

        def handler(request):
            seen.update(request.headers)
            return httpx.Response(200, json={"choices": [{"message": {"content": "{}"}}]})

        client = httpx.Client(transport=httpx.MockTransport(handler))
        backend = LiveBackend(_config(api_key="sk-test"), client=client)
        _, usage = backend.complete(self.request)

        self.assertEqual(seen["authorization"], "Bearer sk-test")
        self.assertEqual((usage.input_tokens, usage.output_tokens), (0, 0))

    def test_requires_url(self):
        with self.assertRaises(ConfigError):
            LiveBackend(LlmConfig(base_url=""))


class TestServedReplay(unittest.TestCase):

    def test_recorded_run_over_http(self):
        """把录制的脚本库挂到桩服务上，在线后端得到逐字节相同的轨迹"""
        fixtures = load_fixtures(FIXTURES_DIR)
        task = select_tasks(load_suite(os.path.join(FIXTURES_DIR, "suite.jsonl")), ["contacts_add_alice"])[0]

        recording = RecordingBackend(fixtures.oracle())
        recorded = run_task(task.to_goal(), fixtures.device(task, FaultProfile()), recording, config=EngineConfig())

        state = StubState(recording.book)
        with TestClient(create_app(state)) as client:
            live = LiveBackend(_config(), client=client)
            served = run_task(task.to_goal(), fixtures.device(task, FaultProfile()), live, config=EngineConfig())

        self.assertTrue(served.success)
        self.assertEqual([r.to_line() for r in served.trace], [r.to_line() for r in recorded.trace])
        self.assertEqual(len(state.requests), len([r for r in recorded.trace if r.node.startswith("llm.")]))

    def test_missing_entry_is_an_error(self):
        with TestClient(create_app(StubState(ScriptBook()))) as client:
            live = LiveBackend(_config(max_attempts=1), client=client)
            with self.assertRaises(TransportError):
                live.complete(CompletionRequest("cortex", "unknown prompt"))


if __name__ == '__main__':
    unittest.main()
