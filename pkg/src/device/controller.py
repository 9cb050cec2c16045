"""
统一设备控制器接口
模拟器是参考实现；真实设备驱动可以实现同一接口
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Tuple

from src.core.models import ActionResult, DeviceState, SelectorBundle, ToolCall


@dataclass(frozen=True)
class Frame:
    """录屏中的一帧"""
    seq: int
    screenshot_digest: str
    screen: str
    texts: Tuple[str, ...] = ()


@dataclass(frozen=True)
class FrameLog:
    frames: Tuple[Frame, ...] = ()

    def render(self) -> str:
        """逐帧文本描述，供视频分析使用"""
        lines = []
        for frame in self.frames:
            texts = " | ".join(frame.texts)
            lines.append(f"frame seq={frame.seq} screen={frame.screen} digest={frame.screenshot_digest} texts: {texts}")
        return "\n".join(lines)


class DeviceController(ABC):
    """设备控制器；所有变更操作至少让 seq 加 1"""

    @abstractmethod
    def get_state(self) -> DeviceState:
        """读取当前状态，不改变 seq"""

    @abstractmethod
    def apply_action(self, call: ToolCall) -> ActionResult:
        """执行一次原始工具调用"""

    @abstractmethod
    def tap(self, selector: SelectorBundle) -> ActionResult:
        ...

    @abstractmethod
    def swipe(self, direction: str, amount: int = 1) -> ActionResult:
        ...

    @abstractmethod
    def type_text(self, raw: str) -> ActionResult:
        ...

    @abstractmethod
    def backspace(self, selector: SelectorBundle, count: int) -> ActionResult:
        """删除字段末尾 count 个字符"""

    @abstractmethod
    def press_back(self) -> ActionResult:
        ...

    @abstractmethod
    def launch_app(self, package: str) -> ActionResult:
        ...

    @abstractmethod
    def focus(self, selector: SelectorBundle) -> ActionResult:
        ...

    @abstractmethod
    def set_cursor_end(self, selector: SelectorBundle) -> ActionResult:
        ...

    @abstractmethod
    def start_recording(self) -> ActionResult:
        ...

    @abstractmethod
    def stop_recording(self) -> Tuple[ActionResult, FrameLog]:
        ...

    @abstractmethod
    def snapshot(self) -> str:
        ...

    @abstractmethod
    def restore(self, snapshot_id: str) -> None:
        ...
