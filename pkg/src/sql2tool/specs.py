"""Tool-spec emission and the two perturbations: obfuscation and shortlisting.

Obfuscation renames tools to FUNC_N and their arguments to ARG_K while
preserving descriptions and titles, so execution semantics are unchanged
and only name semantics are removed. Shortlisting shrinks a tool universe
to a fraction of its size while always keeping the gold tools.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .pools import ToolPool
from .runtime import ToolCall


def emit_tool_spec(pool: ToolPool) -> list[dict]:
    """The pool's spec documents in stable order."""
    return [pool.tools[name] for name in pool.tools]


def emit_spec_json(pool: ToolPool) -> str:
    return json.dumps(emit_tool_spec(pool), indent=2, ensure_ascii=False) + "\n"


def write_spec(pool: ToolPool, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_spec_json(pool), encoding="utf-8")


@dataclass
class ObfuscationMap:
    tool_names: dict[str, str]
    arg_names: dict[str, dict[str, str]]
    seed: int

    def rename_call(self, call: ToolCall) -> ToolCall:
        new_name = self.tool_names.get(call.name, call.name)
        arg_map = self.arg_names.get(call.name, {})
        arguments = {arg_map.get(key, key): value for key, value in call.arguments.items()}
        return ToolCall(name=new_name, arguments=arguments, label=call.label)

    def restore_call(self, call: ToolCall) -> ToolCall:
        inverse_tools = {new: original for original, new in self.tool_names.items()}
        original = inverse_tools.get(call.name, call.name)
        inverse_args = {new: key for key, new in self.arg_names.get(original, {}).items()}
        arguments = {inverse_args.get(key, key): value for key, value in call.arguments.items()}
        return ToolCall(name=original, arguments=arguments, label=call.label)

    def to_json_dict(self) -> dict:
        return {"seed": self.seed, "tool_names": self.tool_names, "arg_names": self.arg_names}

    @classmethod
    def from_json_dict(cls, data: dict) -> "ObfuscationMap":
        return cls(tool_names=dict(data["tool_names"]),
                   arg_names={k: dict(v) for k, v in data["arg_names"].items()},
                   seed=int(data.get("seed", 0)))


def obfuscate_pool(pool: ToolPool, seed: int) -> tuple[ToolPool, ObfuscationMap]:
    """Rename every tool to FUNC_N and its arguments to ARG_K.

    N is assigned over a seeded shuffle of the sorted tool names; K restarts
    at 1 per tool in parameter order. Descriptions and titles carry over
    unchanged, and each renamed argument keeps the original name as an
    inner "name" breadcrumb.
    """
    rng = random.Random(seed)
    names = sorted(pool.tools)
    rng.shuffle(names)
    tool_names = {name: f"FUNC_{index}" for index, name in enumerate(names)}
    arg_names: dict[str, dict[str, str]] = {}
    for name, spec in pool.tools.items():
        if "parameters" in spec:
            params = list(spec["parameters"].get("properties", {}))
        elif "arguments" in spec:
            params = list(spec["arguments"])
        else:
            params = []
        arg_names[name] = {param: f"ARG_{k}" for k, param in enumerate(params, start=1)}
    renamed = pool.with_renames(tool_names, arg_names)
    return renamed, ObfuscationMap(tool_names=tool_names, arg_names=arg_names, seed=seed)


def rewrite_sequence(calls: list[ToolCall], mapping: ObfuscationMap) -> list[ToolCall]:
    return [mapping.rename_call(call) for call in calls]


@dataclass
class Shortlist:
    fraction: float
    tool_names: list[str]
    rng_seed: int
    instance_id: object = None

    def to_json_dict(self) -> dict:
        return {"instance_id": self.instance_id, "fraction": self.fraction,
                "rng_seed": self.rng_seed, "tool_names": self.tool_names}


class FractionTooSmallError(ValueError):
    pass


def shortlist_tools(universe: list[str], gold_tools: list[str], fraction: float,
                    seed: int, instance_id: object = None) -> Shortlist:
    """Sample a fraction-sized candidate set that always contains the gold tools.

    The size is floor(fraction * |universe|), clamped to at least the number
    of gold tools; padding tools are drawn without replacement, seeded.
    """
    gold = list(dict.fromkeys(gold_tools))
    missing = [name for name in gold if name not in universe]
    if missing:
        raise ValueError(f"gold tools not in universe: {missing}")
    size = int(fraction * len(universe))
    if size < 1:
        raise FractionTooSmallError(
            f"fraction {fraction} of a {len(universe)}-tool universe selects nothing"
        )
    size = max(size, len(gold))
    rng = random.Random(seed)
    others = [name for name in universe if name not in set(gold)]
    padding = rng.sample(others, size - len(gold)) if size > len(gold) else []
    selected = set(gold) | set(padding)
    ordered = [name for name in universe if name in selected]
    return Shortlist(fraction=fraction, tool_names=ordered, rng_seed=seed,
                     instance_id=instance_id)
