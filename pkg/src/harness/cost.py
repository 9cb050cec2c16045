"""
Token 成本核算
价格表单位为每 1M token 的美元价格，全部用 Decimal 计算
"""

import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import pandas as pd
import yaml

from src.core.errors import ConfigError, UnpricedModel
from src.llm.base import ROLES, TokenUsage

MILLION = Decimal(1_000_000)
LLM_NODE_PREFIX = "llm."


@dataclass(frozen=True)
class ModelRate:
    input_rate: Decimal
    output_rate: Decimal
    tier: str = ""

    def __post_init__(self):
        if self.input_rate < 0 or self.output_rate < 0:
            raise ConfigError(f"价格不能为负: {self.input_rate}/{self.output_rate}")


@dataclass(frozen=True)
class PricingTable:
    rates: Mapping[str, ModelRate]

    def rate(self, model_name: str) -> ModelRate:
        rate = self.rates.get(model_name)
        if rate is None:
            raise UnpricedModel(model_name)
        return rate

    def models(self, tier: Optional[str] = None) -> List[str]:
        return [name for name, rate in self.rates.items() if tier is None or rate.tier == tier]


def load_pricing(path: str) -> PricingTable:
    """
    加载价格表

    文件格式: models: {模型名: {input: "2.00", output: "12.00", tier: frontier}}
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"无法读取价格表 {path}: {e}") from None
    rates = {}
    for name, entry in (data.get("models") or {}).items():
        try:
            rates[name] = ModelRate(Decimal(str(entry["input"])), Decimal(str(entry["output"])),
                                    entry.get("tier", ""))
        except (KeyError, TypeError, ArithmeticError) as e:
            raise ConfigError(f"价格表条目无效 {name}: {e}") from None
    if not rates:
        raise ConfigError(f"价格表为空: {path}")
    logging.info(f"加载价格表 {path}: {len(rates)} 个模型")
    return PricingTable(rates)


def usage_cost(input_tokens: int, output_tokens: int, rate: ModelRate) -> Decimal:
    return Decimal(input_tokens) / MILLION * rate.input_rate + Decimal(output_tokens) / MILLION * rate.output_rate


def compute_cost(usages: Iterable[TokenUsage], pricing: PricingTable) -> Decimal:
    """按价格表精确计算总成本；任一模型无价格时抛出 UnpricedModel"""
    total = Decimal(0)
    for usage in usages:
        total += usage_cost(usage.input_tokens, usage.output_tokens, pricing.rate(usage.model_name))
    return total


@dataclass
class RoleUsage:
    input_tokens: int = 0
    output_tokens: int = 0
    calls: int = 0

    def add(self, input_tokens: int, output_tokens: int, calls: int = 1):
        self.input_tokens += input_tokens
        self.output_tokens += output_tokens
        self.calls += calls

    def to_dict(self) -> Dict[str, int]:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens, "calls": self.calls}


@dataclass
class CostLedger:
    """按 (角色, 模型) 汇总的 token 用量"""
    entries: Dict[Tuple[str, str], RoleUsage] = field(default_factory=dict)

    def add(self, role: str, usage: TokenUsage, calls: int = 1):
        key = (role, usage.model_name)
        self.entries.setdefault(key, RoleUsage()).add(usage.input_tokens, usage.output_tokens, calls)

    @classmethod
    def from_trace(cls, records: Iterable[Any]) -> "CostLedger":
        """只统计 llm.<role> 记录上的用量"""
        ledger = cls()
        for rec in records:
            if rec.usage is not None and rec.node.startswith(LLM_NODE_PREFIX):
                ledger.add(rec.node[len(LLM_NODE_PREFIX):], rec.usage)
        return ledger

    @classmethod
    def combine(cls, ledgers: Iterable["CostLedger"]) -> "CostLedger":
        merged = cls()
        for ledger in ledgers:
            for (role, model), usage in ledger.entries.items():
                merged.entries.setdefault((role, model), RoleUsage()).add(
                    usage.input_tokens, usage.output_tokens, usage.calls)
        return merged

    def usages(self) -> List[TokenUsage]:
        return [TokenUsage(u.input_tokens, u.output_tokens, model)
                for (_, model), u in sorted(self.entries.items())]

    def by_role(self) -> Dict[str, RoleUsage]:
        roles: Dict[str, RoleUsage] = {}
        for (role, _), usage in sorted(self.entries.items()):
            roles.setdefault(role, RoleUsage()).add(usage.input_tokens, usage.output_tokens, usage.calls)
        return roles

    def totals(self) -> RoleUsage:
        total = RoleUsage()
        for usage in self.entries.values():
            total.add(usage.input_tokens, usage.output_tokens, usage.calls)
        return total

    def cost(self, pricing: PricingTable) -> Decimal:
        return compute_cost(self.usages(), pricing)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "by_role": {role: usage.to_dict() for role, usage in self.by_role().items()},
            "totals": self.totals().to_dict(),
        }


def load_profiles(path: str) -> Dict[str, Dict[str, str]]:
    """
    加载角色到模型的映射方案

    每个方案可以写 default 作为未列出角色的模型
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"无法读取模型方案 {path}: {e}") from None
    profiles = {}
    for name, entry in (data.get("profiles") or {}).items():
        entry = dict(entry or {})
        default = entry.pop("default", None)
        unknown = set(entry) - set(ROLES)
        if unknown:
            raise ConfigError(f"模型方案 {name} 含未知角色: {', '.join(sorted(unknown))}")
        mapping = {role: entry.get(role, default) for role in ROLES}
        missing = [role for role, model in mapping.items() if model is None]
        if missing:
            raise ConfigError(f"模型方案 {name} 缺少角色: {', '.join(missing)}")
        profiles[name] = mapping
    return profiles


def reprice(role_usage: Mapping[str, RoleUsage], profile: Mapping[str, str], pricing: PricingTable) -> Decimal:
    """按给定方案重新为各角色的用量定价"""
    total = Decimal(0)
    for role, usage in role_usage.items():
        total += usage_cost(usage.input_tokens, usage.output_tokens, pricing.rate(profile[role]))
    return total


def cost_table(ledger: CostLedger, task_count: int, profiles: Mapping[str, Mapping[str, str]],
               pricing: PricingTable) -> pd.DataFrame:
    """同一批用量在各模型方案下的总成本与单任务成本"""
    role_usage = ledger.by_role()
    rows = []
    for name, profile in profiles.items():
        total = reprice(role_usage, profile, pricing)
        per_task = total / task_count if task_count else Decimal(0)
        rows.append({"profile": name, "total_usd": float(total), "per_task_usd": float(per_task),
                     "cortex_model": profile["cortex"]})
    return pd.DataFrame(rows, columns=["profile", "total_usd", "per_task_usd", "cortex_model"])
