"""RunReport rows: CSV round trip and the human-readable summary tables."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, fields

_INT_COLUMNS = {"records", "requests_head", "requests_get", "requests_oai", "bytes", "files_transferred"}


@dataclass
class RunReport:
    tool: str  # crawler | harvester
    phase: str  # baseline | update | sweep
    seed_mode: str | None = None
    verb: str | None = None
    page_size: int | None = None
    records: int = 0
    requests_head: int = 0
    requests_get: int = 0
    requests_oai: int = 0
    bytes: int = 0
    wall_time: float = 0.0
    files_transferred: int = 0
    details: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def total_requests(self) -> int:
        return self.requests_head + self.requests_get + self.requests_oai

    @property
    def label(self) -> str:
        if self.tool == "crawler":
            return f"crawler/{self.seed_mode}"
        return f"harvester/{self.verb}"


COLUMNS = tuple(f.name for f in fields(RunReport) if f.name != "details")


def write_csv(reports, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in reports:
            writer.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in COLUMNS])


def read_csv(path: str) -> list[RunReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kwargs = {}
            for c in COLUMNS:
                value = row[c]
                if c in _INT_COLUMNS:
                    kwargs[c] = int(value)
                elif c == "page_size":
                    kwargs[c] = int(value) if value else None
                elif c == "wall_time":
                    kwargs[c] = float(value)
                else:
                    kwargs[c] = value or None
            out.append(RunReport(**kwargs))
    return out


def _cell(r: RunReport) -> str:
    parts = []
    if r.requests_head:
        parts.append(f"{r.requests_head} HEAD")
    if r.requests_get:
        parts.append(f"{r.requests_get} GET")
    if r.requests_oai:
        parts.append(f"{r.requests_oai} OAI")
    reqs = " + ".join(parts) or "0 requests"
    return f"{reqs}; {r.files_transferred} files; {r.wall_time:.2f}s"


def summary(reports) -> str:
    reports = list(reports)
    lines = []
    grid = [r for r in reports if r.phase in ("baseline", "update")]
    labels = sorted({r.label for r in grid})
    phases = [p for p in ("baseline", "update") if any(r.phase == p for r in grid)]
    if labels and phases:
        lines.append("Requests by tool and phase")
        width = max(len(_cell(r)) for r in grid) + 2
        lines.append(("".ljust(10) + "".join(l.ljust(width) for l in labels)).rstrip())
        for phase in phases:
            row = phase.ljust(10)
            for label in labels:
                match = [r for r in grid if r.phase == phase and r.label == label]
                row += (_cell(match[-1]) if match else "-").ljust(width)
            lines.append(row.rstrip())
    sweep = [r for r in reports if r.phase == "sweep"]
    if sweep:
        if lines:
            lines.append("")
        lines.append("Page-size sweep")
        lines.append(f"{'verb':<16}{'page_size':>10}{'oai_requests':>14}{'bytes':>12}{'wall_time_s':>13}")
        for r in sweep:
            lines.append(f"{r.verb or '':<16}{r.page_size:>10}{r.requests_oai:>14}{r.bytes:>12}{r.wall_time:>13.3f}")
    return "\n".join(lines) + ("\n" if lines else "")


def emit_report(reports, out_path: str) -> str:
    """Write the CSV to ``out_path`` and the summary next to it (``.txt``); return the summary."""
    reports = list(reports)
    write_csv(reports, out_path)
    text = summary(reports)
    with open(os.path.splitext(out_path)[0] + ".txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    return text
