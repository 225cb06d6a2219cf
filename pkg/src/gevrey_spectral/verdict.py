"""Structured diagnostic outcomes."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any


class Status(str, enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Verdict:
    """Outcome of a check: a status, human-readable reasons and the offending items.

    ``offending`` usually lists lattice modes ``(j, k)``; ``details`` holds
    any numbers worth reporting (defects, fitted parameters, ...).
    """

    status: Status
    reasons: tuple[str, ...] = ()
    offending: tuple[Any, ...] = ()
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.status is Status.HOLDS

    def __bool__(self) -> bool:
        return self.holds

    @classmethod
    def of(cls, ok: bool, reasons=(), offending=(), **details) -> "Verdict":
        return cls(Status.HOLDS if ok else Status.FAILS, tuple(reasons), tuple(offending), dict(details))

    def to_json(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "reasons": list(self.reasons),
            "offending": [_jsonable(o) for o in self.offending],
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


def _jsonable(obj):
    if isinstance(obj, Status):
        return obj.value
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(o) for o in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if hasattr(obj, "to_json"):
        return obj.to_json()
    if hasattr(obj, "item"):  # numpy scalars
        return _jsonable(obj.item())
    return obj
