"""Pass/fail bookkeeping for verification checks.

Checks never raise on failure: each one becomes a CheckResult with the
margin by which it held (negative when violated) and, for Monte Carlo
checks, the allowance that was granted.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Iterator

import numpy as np


def jsonable(value: Any) -> Any:
    """Convert numpy values and non-finite floats into plain JSON values.

    >>> jsonable(np.float64(0.5))
    0.5
    >>> jsonable([float("inf"), np.int64(3)])
    ['inf', 3]
    """
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return repr(value)
    return value


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    ci: float = 0.0
    witness: Optional[Dict[str, Any]] = None
    detail: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        result = {"name": self.name, "passed": self.passed,
                  "margin": self.margin, "ci": self.ci,
                  "detail": self.detail}
        if self.witness is not None:
            result["witness"] = self.witness
        return jsonable(result)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]):
        return cls(name=data["name"], passed=data["passed"],
                   margin=float(data["margin"]), ci=float(data["ci"]),
                   witness=data.get("witness"), detail=data.get("detail", {}))

    def message(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"[{status}] {self.name}: margin {self.margin:.6g} (allowance {self.ci:.3g})"


class Report:
    """An ordered collection of check results under a title"""

    def __init__(self, title: str, checks: Optional[List[CheckResult]] = None):
        self.title = title
        self._checks: List[CheckResult] = list(checks or [])

    @property
    def checks(self) -> List[CheckResult]:
        return self._checks

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self._checks)

    def add(self, check: CheckResult) -> CheckResult:
        self._checks.append(check)
        return check

    def extend(self, other: "Report"):
        self._checks.extend(other.checks)

    def failures(self) -> Iterator[CheckResult]:
        return (check for check in self._checks if not check.passed)

    def __getitem__(self, name: str) -> CheckResult:
        for check in self._checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def __iter__(self):
        return iter(self._checks)

    def messages(self) -> Iterator[str]:
        """Yields one human readable line per check"""
        for check in self._checks:
            yield check.message()

    def to_dict(self) -> Dict[str, Any]:
        return {"title": self.title, "passed": self.passed,
                "checks": [check.to_dict() for check in self._checks]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]):
        return cls(data["title"], [CheckResult.from_dict(check)
                                   for check in data["checks"]])
