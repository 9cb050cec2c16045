"""
在线后端：兼容 chat-completion 协议的 HTTP 客户端
请求体带 JSON schema 响应格式；传输错误、5xx 与 429 有界重试，429 优先按 Retry-After 等待
"""

import json
import logging
import threading
import time
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import httpx

from src.config.config_manager import LlmConfig
from src.core.errors import ConfigError, RateLimited, TransportError
from src.llm.base import CompletionRequest, LlmBackend, TokenUsage

SYSTEM_PROMPT = "You are one agent of a mobile-automation system. Reply with JSON only."


class LiveBackend(LlmBackend):
    """chat-completion 客户端；并发请求数受 max_in_flight 限制"""

    def __init__(self, config: LlmConfig, models: Optional[Mapping[str, str]] = None,
                 client: Optional[httpx.Client] = None, sleep: Callable[[float], None] = time.sleep):
        """
        初始化在线后端

        Args:
            config: LLM 配置（base_url、api_key、超时与重试参数）
            models: 角色到模型名的映射，缺省为 Platform Default
            client: 外部注入的 httpx.Client（测试中使用 TestClient）
            sleep: 退避等待函数
        """
        super().__init__(models)
        if not config.base_url and client is None:
            raise ConfigError("在线后端需要 AGENTLOOM_LLM_URL")
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout_seconds)
        self._owns_client = client is None
        self._sleep = sleep
        self._in_flight = threading.BoundedSemaphore(max(1, config.max_in_flight))

    def _url(self) -> str:
        return f"{self.config.base_url.rstrip('/')}/chat/completions"

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        return headers

    def build_body(self, req: CompletionRequest) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "model": self.model_for(req.agent_role),
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": req.prompt},
            ],
            "temperature": req.temperature,
        }
        if req.output_schema:
            body["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": req.agent_role, "schema": dict(req.output_schema)},
            }
        return body

    def _post(self, body: Dict[str, Any]) -> httpx.Response:
        attempts = max(1, self.config.max_attempts)
        last_error: Optional[Exception] = None
        for attempt in range(1, attempts + 1):
            delay = self.config.backoff_base_seconds * (2 ** (attempt - 1))
            try:
                response = self._client.post(self._url(), json=body, headers=self._headers())
            except httpx.HTTPError as e:
                last_error = e
                logging.warning(f"LLM 请求传输失败（第 {attempt}/{attempts} 次）: {e}")
            else:
                if response.status_code == 429:
                    last_error = RateLimited(f"LLM 服务限流: {response.text[:200]}")
                    delay = retry_after(response, delay)
                    logging.warning(f"LLM 服务限流（第 {attempt}/{attempts} 次），等待 {delay:g} 秒")
                elif response.status_code < 500:
                    return response
                else:
                    last_error = TransportError(f"HTTP {response.status_code}")
                    logging.warning(f"LLM 服务端错误 {response.status_code}（第 {attempt}/{attempts} 次）")
            if attempt < attempts:
                self._sleep(delay)
        if isinstance(last_error, RateLimited):
            raise last_error
        raise TransportError(f"LLM 请求失败，已重试 {attempts} 次: {last_error}")

    def complete(self, req: CompletionRequest) -> Tuple[str, TokenUsage]:
        body = self.build_body(req)
        logging.debug(f"LLM 请求 {req.agent_role}: {describe_body(body)}")
        with self._in_flight:
            response = self._post(body)
        if response.status_code >= 400:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"无法解析 chat-completion 响应: {e}") from None
        usage = payload.get("usage") or {}
        return text, TokenUsage(
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            model_name=body["model"],
        )

    def close(self):
        if self._owns_client:
            self._client.close()


def retry_after(response: httpx.Response, default: float) -> float:
    """Retry-After 头的秒数；缺失或不是数字（例如 HTTP 日期）时用默认退避"""
    value = response.headers.get("Retry-After")
    try:
        return max(0.0, float(value)) if value is not None else default
    except ValueError:
        return default


def describe_body(body: Mapping[str, Any]) -> str:
    """调试用：请求体的单行摘要"""
    return json.dumps({"model": body.get("model"), "chars": len(body["messages"][-1]["content"])})
