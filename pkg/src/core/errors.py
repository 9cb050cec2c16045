"""
AgentLoom 异常体系
所有模块抛出的异常都继承自 AgentLoomError
"""

from typing import Any, Optional


class AgentLoomError(Exception):
    """AgentLoom 基础异常"""

    def __init__(self, message: str = "", result: Optional[Any] = None):
        super().__init__(message)
        # 终止运行的异常会携带部分 RunResult
        self.result = result


class PreconditionViolation(AgentLoomError, ValueError):
    """调用前置条件不满足"""


class IllegalTransition(AgentLoomError):
    """子目标生命周期中不存在的状态转换"""

    def __init__(self, current, event):
        super().__init__(f"非法状态转换: {current.value} + {event.value}")
        self.current = current
        self.event = event


class ConfigError(AgentLoomError):
    """配置错误"""


class AppDefinitionError(ConfigError):
    """模拟应用定义文件不合法"""


# ---- 设备 ----

class DeviceError(AgentLoomError):
    """设备层异常"""


class DeviceUnavailable(DeviceError):
    """设备无响应"""


class UnknownSnapshot(DeviceError):
    """快照不存在"""

    def __init__(self, snapshot_id: str):
        super().__init__(f"快照不存在: {snapshot_id}")
        self.snapshot_id = snapshot_id


class ElementNotFound(DeviceError):
    """所有选择器层级都未命中"""


class NoFocusedField(DeviceError):
    """没有获得焦点的可编辑字段"""


class FieldNotEditable(DeviceError):
    """目标元素不可编辑"""


# ---- LLM 后端 ----

class BackendError(AgentLoomError):
    """LLM 后端异常"""


class MissingScriptEntry(BackendError):
    """脚本库中缺少对应条目"""

    def __init__(self, role: str, fingerprint: str):
        super().__init__(f"脚本库缺少条目: role={role} fingerprint={fingerprint}")
        self.role = role
        self.fingerprint = fingerprint


class TransportError(BackendError):
    """网络传输失败"""


class RateLimited(BackendError):
    """被服务端限流"""


# ---- 智能体 ----

class AgentError(AgentLoomError):
    """智能体输出异常"""


class MalformedPlan(AgentError):
    """规划输出不符合结构"""


class MalformedVerdict(AgentError):
    """编排裁决不符合结构"""


class MalformedDecision(AgentError):
    """决策输出不符合结构"""


class SchemaMismatch(AgentError):
    """结构化输出与目标 schema 不匹配"""


class UnknownActionKind(AgentError):
    """未知的动作类型"""

    def __init__(self, kind: Any):
        super().__init__(f"未知的动作类型: {kind}")
        self.kind = kind


# ---- 执行图 ----

class EngineError(AgentLoomError):
    """执行图异常"""


class BudgetExhausted(EngineError):
    """决策周期用尽"""


class BranchPanic(EngineError):
    """并行分支异常终止"""


# ---- 评测 ----

class HarnessError(AgentLoomError):
    """评测框架异常"""


class UnknownPredicate(HarnessError):
    """未注册的成功判定"""

    def __init__(self, name: str):
        super().__init__(f"未注册的成功判定: {name}")
        self.name = name


class UnpricedModel(HarnessError):
    """价格表中没有该模型"""

    def __init__(self, model_name: str):
        super().__init__(f"价格表中没有该模型: {model_name}")
        self.model_name = model_name


class UnknownTask(HarnessError):
    """任务不存在"""
