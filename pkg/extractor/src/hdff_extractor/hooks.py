"""Hook-point selection over a module tree.

Patterns are shell-style globs matched against ``named_modules()`` names
(e.g. ``conv*``, ``features.*.relu``, ``*block*``). Layer ids are assigned
in hook-spec order: matches of the first pattern (in model traversal
order) come first, then matches of the second, and so on, deduplicated.
The ordering is a pure function of the model and the patterns, so reruns
produce identical layouts.
"""

from __future__ import annotations

from dataclasses import dataclass
from fnmatch import fnmatchcase

import torch.nn as nn

from .errors import HookResolutionError


@dataclass(frozen=True)
class HookSpec:
    patterns: tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> "HookSpec":
        patterns = tuple(p.strip() for p in text.split(",") if p.strip())
        if not patterns:
            raise HookResolutionError("hook spec is empty")
        return cls(patterns=patterns)

    def resolve(self, model: nn.Module) -> list[tuple[int, str, nn.Module]]:
        """(layer_id, module name, module) triples in hook-spec order."""
        named = [(name, mod) for name, mod in model.named_modules() if name]
        chosen: list[tuple[str, nn.Module]] = []
        seen: set[str] = set()
        for pattern in self.patterns:
            for name, mod in named:
                if name not in seen and fnmatchcase(name, pattern):
                    chosen.append((name, mod))
                    seen.add(name)
        if not chosen:
            available = ", ".join(name for name, _ in named)
            raise HookResolutionError(
                f"no module matched hook patterns {list(self.patterns)}; "
                f"available modules: {available}"
            )
        return [(i + 1, name, mod) for i, (name, mod) in enumerate(chosen)]


def _out_channels(mod: nn.Module) -> int | None:
    for attr in ("out_channels", "num_features", "out_features"):
        val = getattr(mod, attr, None)
        if isinstance(val, int):
            return val
    return None


def list_hooks(model: nn.Module) -> list[str]:
    """Printable module tree: indented name, class, channel count if known."""
    lines = []
    for name, mod in model.named_modules():
        if not name:
            continue
        depth = name.count(".")
        ch = _out_channels(mod)
        suffix = f"  [{ch} ch]" if ch is not None else ""
        lines.append(f"{'  ' * depth}{name}: {type(mod).__name__}{suffix}")
    return lines
