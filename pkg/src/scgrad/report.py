from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class CheckReport:
    """Outcome of one verification check.

    A failing report always explains itself: either ``violations`` is
    nonempty or ``measured`` exceeds ``tolerance``.
    """

    name: str
    passed: bool
    measured: Optional[float] = None
    tolerance: Optional[float] = None
    ci: Optional[tuple] = None
    seed: Optional[int] = None
    violations: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and not self.violations and not (
                self.measured is not None and self.tolerance is not None
                and not self.measured <= self.tolerance):
            self.violations.append(("", "check failed"))

    def violate(self, location: str, message: str) -> None:
        self.violations.append((location, message))
        self.passed = False

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "measured": _num(self.measured),
            "tolerance": _num(self.tolerance),
            "ci": None if self.ci is None else [_num(v) for v in self.ci],
            "seed": self.seed,
            "violations": [{"location": loc, "message": msg} for loc, msg in self.violations],
            "details": _jsonable(self.details),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    if isinstance(obj, float):
        return _num(obj)
    return obj
