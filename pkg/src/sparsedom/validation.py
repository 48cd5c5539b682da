"""Violation reports shared by every checker in the package."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class ValidationReport:
    """Outcome of an exhaustive check.

    Violations are data: each entry is a ``(kind, detail)`` pair where
    ``detail`` is a dict naming the witness.  ``stats`` carries numbers
    worth logging even when the check passes (worst ratios, counts).
    """

    name: str
    violations: list[tuple[str, dict[str, Any]]] = field(default_factory=list)
    stats: dict[str, Any] = field(default_factory=dict)
    mode: str | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, **detail: Any) -> None:
        self.violations.append((kind, detail))

    def kinds(self) -> set[str]:
        return {k for k, _ in self.violations}

    def witnesses(self, kind: str) -> list[dict[str, Any]]:
        return [d for k, d in self.violations if k == kind]

    def summary(self) -> str:
        head = f"{self.name}: {'pass' if self.ok else 'FAIL'}"
        if self.mode:
            head += f" [mode={self.mode}]"
        if self.violations:
            counts: dict[str, int] = {}
            for k, _ in self.violations:
                counts[k] = counts.get(k, 0) + 1
            head += " " + ", ".join(f"{k}={n}" for k, n in sorted(counts.items()))
        return head

    def __bool__(self) -> bool:
        return self.ok
