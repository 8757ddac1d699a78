"""Handles the representation of an experiment's results"""
import csv
import json
from typing import Any, Dict, List, Optional

from arcsim.estimators import EnsembleStatistic, SlopeFit
from arcsim.report import Report, jsonable


class ExperimentRecord:
    """Everything an experiment measured, the fit it made and its verdict.

    The JSON form is canonical (sorted keys, no wall time) so that a rerun
    from the same config reproduces it byte for byte.
    """

    def __init__(self, experiment_id: str, config: Dict[str, Any], sweep_values: List[Any],
                 measured: List[EnsembleStatistic], fit: Optional[SlopeFit], verdict: Report,
                 derived: Optional[Dict[str, Any]] = None, wall_time: float = 0.0):
        self.experiment_id = experiment_id
        self.config = config
        self.sweep_values = sweep_values
        self.measured = measured
        self.fit = fit
        self.verdict = verdict
        self.derived = derived or {}
        self.wall_time = wall_time

    @property
    def passed(self) -> bool:
        return self.verdict.passed

    def series(self, label: str) -> List[EnsembleStatistic]:
        """Measured statistics with the given label, in sweep order"""
        return [statistic for statistic in self.measured if statistic.label == label]

    def to_dict(self, include_wall_time: bool = False) -> Dict[str, Any]:
        data = {"experiment_id": self.experiment_id,
                "config": jsonable(self.config),
                "sweep_values": jsonable(self.sweep_values),
                "measured": [statistic.to_dict() for statistic in self.measured],
                "fit": None if self.fit is None else self.fit.to_dict(),
                "verdict": self.verdict.to_dict(),
                "derived": jsonable(self.derived)}
        if include_wall_time:
            data["wall_time"] = self.wall_time
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str):
        data = json.loads(text)
        return cls(data["experiment_id"], data["config"], data["sweep_values"],
                   [EnsembleStatistic.from_dict(item) for item in data["measured"]],
                   None if data["fit"] is None else SlopeFit.from_dict(data["fit"]),
                   Report.from_dict(data["verdict"]), data.get("derived", {}),
                   data.get("wall_time", 0.0))

    def write(self, filename: str):
        with open(filename, 'w') as file:
            file.write(self.to_json())

    def to_csv(self, output):
        """One row per (series, sweep value, time)"""
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow(["series", "sweep_value", "t", "mean", "variance", "ci", "n"])
        for statistic in self.measured:
            sweep = "" if statistic.sweep_value is None else format(float(statistic.sweep_value), ".17e")
            for t, mean, variance, ci in zip(statistic.times, statistic.mean,
                                             statistic.variance, statistic.ci):
                writer.writerow([statistic.label, sweep, *(format(float(value), ".17e")
                                                           for value in (t, mean, variance, ci)),
                                 statistic.n])

    def write_csv(self, filename: str):
        with open(filename, 'w', newline='') as file:
            self.to_csv(file)

    def summary(self) -> List[str]:
        lines = [f"{self.experiment_id}: {'PASS' if self.passed else 'FAIL'} "
                 f"({self.wall_time:.1f}s)"]
        if self.fit is not None:
            lines.append(f"  fit slope {self.fit.slope:.4g} +/- {self.fit.stderr:.2g} "
                         f"(R^2 {self.fit.r_squared:.4f}, {self.fit.points} points)")
        lines.extend(f"  {message}" for message in self.verdict.messages())
        return lines
