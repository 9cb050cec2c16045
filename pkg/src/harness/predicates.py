"""
程序化成功判定
判定只读取最终设备数据与便签，不调用任何模型
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping

from src.core.errors import PreconditionViolation, UnknownPredicate
from src.device.simulator import SimDevice


@dataclass(frozen=True)
class SuccessContext:
    device: SimDevice
    notes: Mapping[str, str] = field(default_factory=dict)


Predicate = Callable[..., bool]
_REGISTRY: Dict[str, Predicate] = {}


def register(name: str):
    """注册判定函数的装饰器"""
    def decorator(func: Predicate) -> Predicate:
        _REGISTRY[name] = func
        return func
    return decorator


def registered() -> List[str]:
    return sorted(_REGISTRY)


def _matches(record: Mapping[str, Any], match: Mapping[str, Any]) -> bool:
    return all(str(record.get(k, "")) == str(v) for k, v in match.items())


def _records(ctx: SuccessContext, package: str, store: str) -> List[Mapping[str, Any]]:
    records = ctx.device.store(package, store)
    if records is None:
        return []
    if not isinstance(records, list):
        raise PreconditionViolation(f"{package}/{store} 不是记录列表")
    return records


@register("field_equals")
def field_equals(ctx: SuccessContext, package: str, field_key: str, value: str) -> bool:
    return ctx.device.field_value(package, field_key) == value


@register("record_exists")
def record_exists(ctx: SuccessContext, package: str, store: str, match: Mapping[str, Any]) -> bool:
    return any(_matches(r, match) for r in _records(ctx, package, store))


@register("record_absent")
def record_absent(ctx: SuccessContext, package: str, store: str, match: Mapping[str, Any]) -> bool:
    return not record_exists(ctx, package, store, match)


@register("record_count")
def record_count(ctx: SuccessContext, package: str, store: str, count: int) -> bool:
    return len(_records(ctx, package, store)) == int(count)


@register("value_equals")
def value_equals(ctx: SuccessContext, package: str, store: str, key: str, value: str) -> bool:
    values = ctx.device.store(package, store)
    return isinstance(values, dict) and str(values.get(key)) == str(value)


@register("screen_is")
def screen_is(ctx: SuccessContext, package: str, screen: str) -> bool:
    return ctx.device.current_screen() == (package, screen)


@register("note_equals")
def note_equals(ctx: SuccessContext, key: str, value: str) -> bool:
    return ctx.notes.get(key) == str(value)


@register("all_of")
def all_of(ctx: SuccessContext, predicates: List[Mapping[str, Any]]) -> bool:
    return all(check_success(p["name"], p.get("params", {}), ctx) for p in predicates)


def check_success(name: str, params: Mapping[str, Any], ctx: SuccessContext) -> bool:
    """
    执行已注册的判定

    Raises:
        UnknownPredicate: 名称未注册
        PreconditionViolation: 参数与判定不匹配
    """
    func = _REGISTRY.get(name)
    if func is None:
        raise UnknownPredicate(name)
    try:
        return bool(func(ctx, **dict(params)))
    except TypeError as e:
        raise PreconditionViolation(f"判定 {name} 参数错误: {e}") from None


def validate_predicate(name: str, params: Mapping[str, Any]) -> None:
    """加载任务时检查判定名称，包括 all_of 内嵌的判定"""
    if name not in _REGISTRY:
        raise UnknownPredicate(name)
    if name == "all_of":
        for inner in params.get("predicates", []):
            validate_predicate(inner["name"], inner.get("params", {}))
