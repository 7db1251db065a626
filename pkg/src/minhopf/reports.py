"""Verification checks and their JSON form."""
from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["Check", "VerificationReport", "to_jsonable", "dumps", "timer"]


def to_jsonable(v: Any) -> Any:
    """Plain JSON types; complex numbers become [re, im] and non-finite floats strings."""
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [to_jsonable(float(v.real)), to_jsonable(float(v.imag))]
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    if hasattr(v, "value") and hasattr(v, "name"):  # enums
        return v.value
    if hasattr(v, "to_dict"):
        return to_jsonable(v.to_dict())
    return v


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, ensure_ascii=False) + "\n"


@contextmanager
def timer():
    box = {"seconds": 0.0}
    t0 = time.perf_counter()
    try:
        yield box
    finally:
        box["seconds"] = time.perf_counter() - t0


@dataclass
class Check:
    check_name: str
    passed: bool
    measured: Any = None
    bound: Any = None
    tolerance: Any = None
    params: dict | None = None
    runtime_seconds: float | None = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "check_name": self.check_name,
            "pass": bool(self.passed),
            "measured": self.measured,
            "bound": self.bound,
            "tolerance": self.tolerance,
            "params": self.params,
            "runtime_seconds": self.runtime_seconds,
        }
        if self.detail:
            d["detail"] = self.detail
        return to_jsonable(d)


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def extend(self, other: "VerificationReport") -> None:
        self.checks.extend(other.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        d = dict(self.meta)
        d["pass"] = self.passed
        d["checks"] = [c.to_dict() for c in self.checks]
        return to_jsonable(d)
