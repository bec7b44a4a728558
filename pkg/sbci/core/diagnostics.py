"""
Diagnostics Module

Per-iteration trace records, the CSV trace sink, run summaries and the
approximate energy-conservation report built from a trace.

Usage:
    from sbci.core.diagnostics import TraceWriter, energy_conservation_report
    with TraceWriter(path) as sink:
        solve_n_states_sbci1(op, 4, cfg, sink=sink)
    report = energy_conservation_report(read_trace(path))
"""

import csv
import threading
from dataclasses import asdict, dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
from loguru import logger

from sbci.config import SUMMARY_KEYS, TRACE_COLUMNS


CONSERVATION_THRESHOLD = 0.10
CONSERVATION_MIN_DE = 1e-13
DEV_FLOOR = 1e-16

_INT_COLUMNS = {"state", "pair_partner", "segment", "t", "matvecs"}
_STR_COLUMNS = {"method", "status", "restart_reason"}


@dataclass
class TraceRecord:
    method: str
    state: int
    t: int
    E: float
    dE: float
    res_norm: float
    x_norm: float
    matvecs: int
    status: str = "continue"
    segment: int = 0
    pair_partner: Optional[int] = None
    b: Optional[float] = None
    c: Optional[float] = None
    b_ab: Optional[float] = None
    b_ba: Optional[float] = None
    b_bb: Optional[float] = None
    c_ab: Optional[float] = None
    c_ba: Optional[float] = None
    c_bb: Optional[float] = None
    a_ab: Optional[float] = None
    a_ba: Optional[float] = None
    E_partner: Optional[float] = None
    x_norm_partner: Optional[float] = None
    kinetic: Optional[float] = None
    restart_reason: Optional[str] = None

    def to_row(self) -> List[str]:
        values = asdict(self)
        return [_format_cell(values[column]) for column in TRACE_COLUMNS]

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "TraceRecord":
        parsed: Dict[str, Any] = {}
        for column in TRACE_COLUMNS:
            raw = row.get(column, "")
            if raw == "":
                parsed[column] = None
            elif column in _STR_COLUMNS:
                parsed[column] = raw
            elif column in _INT_COLUMNS:
                parsed[column] = int(raw)
            else:
                parsed[column] = float(raw)
        return cls(**parsed)


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


class TraceWriter:
    """CSV sink: header written on open, one row per record, rows kept in emission order."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._handle = None
        self._writer = None
        self.rows_written = 0

    def open(self) -> "TraceWriter":
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(self.path, "w", encoding="utf-8", newline="")
        except OSError as e:
            raise OSError(f"cannot open trace file {self.path}: {e}") from e
        self._writer = csv.writer(self._handle)
        self._writer.writerow(TRACE_COLUMNS)
        self._handle.flush()
        return self

    def write(self, record: TraceRecord) -> None:
        if self._writer is None:
            raise ValueError(f"trace sink {self.path} is not open")
        with self._lock:
            try:
                self._writer.writerow(record.to_row())
            except OSError as e:
                raise OSError(f"cannot write trace file {self.path}: {e}") from e
            self.rows_written += 1

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None
            self._writer = None
            logger.debug(f"Trace closed: {self.rows_written} rows in {self.path}")

    def __enter__(self) -> "TraceWriter":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()


def record_trace(sink: Optional[TraceWriter], record: TraceRecord) -> None:
    if sink is not None:
        sink.write(record)


def read_trace(path: Path) -> List[TraceRecord]:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        return [TraceRecord.from_row(row) for row in reader]


@dataclass
class ConservationEntry:
    state: int
    segment: int
    t: int
    delta_e: float
    delta_t: float
    rhs: float
    dev: float
    exact: bool = False


@dataclass
class EnergyConservationReport:
    entries: List[ConservationEntry] = field(default_factory=list)
    segment_medians: Dict[str, float] = field(default_factory=dict)
    median: Optional[float] = None
    p90: Optional[float] = None
    passed: bool = False
    threshold: float = CONSERVATION_THRESHOLD
    note: str = ""

    @property
    def empty(self) -> bool:
        return not self.entries

    def to_dict(self) -> Dict[str, Any]:
        return {
            "entries": [asdict(entry) for entry in self.entries],
            "segment_medians": self.segment_medians,
            "median": self.median,
            "p90": self.p90,
            "passed": self.passed,
            "threshold": self.threshold,
            "note": self.note,
        }


def conservation_dev(delta_e: float, rhs: float, floor: float = DEV_FLOOR) -> float:
    scale = max(abs(delta_e), abs(rhs), floor)
    return min(1.0, abs(delta_e - rhs) / scale)


def energy_conservation_report(trace: Iterable[TraceRecord],
                               threshold: float = CONSERVATION_THRESHOLD,
                               min_delta_e: float = CONSERVATION_MIN_DE) -> EnergyConservationReport:
    """
    Step-to-step drop of the Rayleigh quotient against the change of the kinetic
    term y^T M y, per restart segment of every single-state run in the trace.

    Row i of a segment holds E(x_{i+1}), y_{i+1}^T M y_{i+1}, b_i and c_i, so the
    entry for step tau = i + 2 is built from rows i and i + 1.
    """
    rows = [r for r in trace if r.method == "sbci1" and r.kinetic is not None]
    report = EnergyConservationReport(threshold=threshold)

    def key(record: TraceRecord):
        return record.state, record.segment

    for (state, segment), group in groupby(rows, key=key):
        segment_rows = list(group)
        for prev, curr in zip(segment_rows, segment_rows[1:]):
            if curr.t != prev.t + 1 or prev.c is None or prev.c == 0.0 or prev.b is None:
                continue
            delta_e = prev.E - curr.E
            delta_t = 0.5 * prev.b * (curr.kinetic - prev.kinetic)
            rhs = (2.0 / prev.c) * delta_t
            entry = ConservationEntry(
                state=state, segment=segment, t=prev.t + 2,
                delta_e=delta_e, delta_t=delta_t, rhs=rhs,
                dev=conservation_dev(delta_e, rhs),
                exact=(delta_e == 0.0 and rhs == 0.0),
            )
            report.entries.append(entry)

    if report.empty:
        report.note = "no restart segment spans three positions; nothing to compare"
        logger.warning(report.note)
        return report

    significant = [e for e in report.entries if abs(e.delta_e) > min_delta_e]
    for (state, segment), group in groupby(significant, key=lambda e: (e.state, e.segment)):
        devs = [e.dev for e in group]
        report.segment_medians[f"{state}:{segment}"] = float(np.median(devs))

    if significant:
        devs = np.array([e.dev for e in significant])
        report.median = float(np.median(devs))
        report.p90 = float(np.percentile(devs, 90))
    report.passed = all(m <= threshold for m in report.segment_medians.values())
    report.note = (f"pass criterion (declared): median dev <= {threshold:.2f} per restart segment "
                   f"over steps with |dE| > {min_delta_e:g}")
    return report


@dataclass
class RunSummary:
    method: str
    nroots: int
    dim: int
    energies: List[float]
    iterations: int
    restarts: int
    matvecs: int
    wall_time: float
    peak_vectors: int
    converged: bool = True

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        return {key: data[key] for key in SUMMARY_KEYS}
