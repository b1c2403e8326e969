import io
import json
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, is_dataclass
from enum import Enum
from typing import Any

import numpy as np

from .model import ScalarField
from .safety import CheckReport
from .sim import TRAJECTORY_COLUMNS, TrajectoryLog

__all__ = [
    "Color",
    "StringFormatter",
    "FieldCSVFormatter",
    "TrajectoryCSVFormatter",
    "JsonFormatter",
    "TextReportFormatter",
]


class Color(Enum):
    """ANSI color codes"""

    RED = "\033[31m"
    GREEN = "\033[32m"
    RESET = "\033[0m"

    def apply(self, text: str) -> str:
        """Apply ANSI color to text

        Args:
            text: Text to colorize

        Returns:
            Colorized string
        """
        return f"{self.value}{text}{Color.RESET.value}"


class StringFormatter(ABC):
    """Base class for all string formatters

    Attributes:
        data: Object to format
    """

    def __init__(self, data: Any):
        self.data = data

    @abstractmethod
    def format(self) -> str:
        """Format the data"""
        pass

    def _format_number(self, value: float) -> str:
        """Format a float with 17 significant digits, enough for an exact round trip"""
        return f"{value:.17g}"


class FieldCSVFormatter(StringFormatter):
    """Formatter for scalar fields as CSV

    The first line holds nx,ny,resolution,origin_x,origin_y; ny rows of nx values follow, row iy = 0 first.
    """

    data: ScalarField

    def format(self) -> str:
        field = self.data
        header = ",".join(
            [str(field.nx), str(field.ny), *(self._format_number(v) for v in (field.resolution, *field.origin))]
        )
        buffer = io.StringIO()
        np.savetxt(buffer, field.values, fmt="%.17g", delimiter=",")
        return f"{header}\n{buffer.getvalue()}"


class TrajectoryCSVFormatter(StringFormatter):
    """Formatter for trajectory logs as CSV with a header row"""

    data: TrajectoryLog

    def format(self) -> str:
        buffer = io.StringIO()
        header = ",".join(TRAJECTORY_COLUMNS)
        np.savetxt(buffer, self.data.rows, fmt="%.17g", delimiter=",", header=header, comments="")
        return buffer.getvalue()


class JsonFormatter(StringFormatter):
    """Formatter for dataclasses, dicts and lists as indented JSON

    Non-finite floats are written as null.
    """

    def format(self) -> str:
        data = asdict(self.data) if is_dataclass(self.data) else self.data
        return json.dumps(self._clean(data), indent=2)

    def _clean(self, value: Any) -> Any:
        if isinstance(value, dict):
            return {k: self._clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [self._clean(v) for v in value]
        if isinstance(value, (float, np.floating)):
            return float(value) if math.isfinite(value) else None
        if isinstance(value, np.integer):
            return int(value)
        if isinstance(value, Enum):
            return value.value
        return value


class TextReportFormatter(StringFormatter):
    """Formatter that lists each invariant check with a colored pass/fail mark"""

    data: CheckReport

    def format(self) -> str:
        report = self.data
        lines = [self._wrap_bars("Safety function checks")]
        checks = [
            ("min h on free set", report.min_free_h, report.min_free_h > 0),
            ("max h in obstacles", report.max_obstacle_h, self._below_zero(report.max_obstacle_h)),
            (
                "max outward derivative",
                report.max_boundary_outward_derivative,
                report.max_boundary_outward_derivative < 0,
            ),
            (
                "max obstacle-side derivative",
                report.max_obstacle_side_derivative,
                self._below_zero(report.max_obstacle_side_derivative),
            ),
            ("divergence relative error", report.divergence_rel_error, report.divergence_rel_error <= 5e-2),
            (
                "worst energy gap",
                report.dirichlet_energy_worst_gap,
                report.dirichlet_energy_worst_gap >= -1e-9 * abs(report.dirichlet_energy),
            ),
        ]
        for name, value, ok in checks:
            mark = Color.GREEN.apply("pass") if ok else Color.RED.apply("FAIL")
            lines.append(f"  {mark}  {name:<30} {self._format_value(value)}")

        lines.append(self._wrap_bars("Solve"))
        lines.append(f"  mean boundary flux             {report.mean_boundary_flux:.6g}")
        if report.boundary_flux_mean_error is not None:
            lines.append(f"  boundary flux error (mean)     {report.boundary_flux_mean_error:.6g}")
            lines.append(f"  boundary flux error (max)      {report.boundary_flux_max_error:.6g}")
        lines.append(f"  iterations                     {report.iterations}")
        lines.append(f"  residual                       {report.residual:.3e}")
        return "\n".join(lines)

    def _below_zero(self, value: float | None) -> bool:
        return value is None or value < 0

    def _format_value(self, value: float | None) -> str:
        return "n/a" if value is None else f"{value:.6g}"

    def _wrap_bars(self, text: str) -> str:
        """Wrap text in horizontal bars (━)"""
        return f"━━━ {text} ━━━"
