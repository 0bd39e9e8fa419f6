"""Machine-readable reports with a deterministic content hash.

The JSON document has a ``content`` section (everything that depends only on
scenario, seeds and flags) and a ``timings`` section.  ``content_sha256`` is
taken over the canonical serialization of ``content`` alone, so repeated runs
with the same inputs hash identically.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1
STATUSES = ("pass", "fail", "inconclusive", "skipped")
EXIT_CODES = {"pass": 0, "fail": 1, "inconclusive": 2}
EXIT_INPUT_ERROR = 3


def plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        if math.isnan(val):
            return "nan"
        if math.isinf(val):
            return "inf" if val > 0 else "-inf"
        return val
    return obj


def canonical(obj) -> str:
    # json emits repr(float): shortest round-trip form, full double precision
    return json.dumps(plain(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def overall_status(statuses) -> str:
    seen = set(statuses) - {"skipped"}
    if "fail" in seen:
        return "fail"
    if "inconclusive" in seen:
        return "inconclusive"
    return "pass"


@dataclass
class Report:
    command: str
    scenario: str
    params: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def add(self, name: str, status: str, **values):
        if status not in STATUSES:
            raise ValueError(f"unknown status {status!r}")
        self.blocks[name] = {"status": status, **values}

    @property
    def status(self) -> str:
        return overall_status(b["status"] for b in self.blocks.values())

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    def content(self) -> dict:
        return plain({"schema": SCHEMA_VERSION, "command": self.command, "scenario": self.scenario,
                      "params": self.params, "status": self.status, "blocks": self.blocks})

    def content_hash(self) -> str:
        return hashlib.sha256(canonical(self.content()).encode("ascii")).hexdigest()

    def to_json(self) -> str:
        doc = {"schema": SCHEMA_VERSION, "content": self.content(),
               "content_sha256": self.content_hash(), "timings": plain(self.timings)}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list) and v and all(isinstance(x, (float, int)) or x is None for x in v):
        return "[" + ", ".join("-" if x is None else _fmt(x) for x in v) + "]"
    return str(v)


def render_text(report: Report) -> str:
    """Short human-readable summary; nested tables and long arrays are elided."""
    lines = [f"{report.command} {report.scenario}: {report.status.upper()}"]
    for name, block in report.blocks.items():
        lines.append(f"  [{block['status']}] {name}")
        for key, val in block.items():
            if key == "status":
                continue
            if isinstance(val, dict):
                flat = plain(val)
                if len(flat) <= 10 and all(not isinstance(x, (dict, list)) for x in flat.values()):
                    lines.append(f"      {key}: " + ", ".join(f"{k}={_fmt(x)}" for k, x in flat.items()))
                continue
            if isinstance(val, list) and len(val) > 8:
                continue
            lines.append(f"      {key}: {_fmt(plain(val))}")
    return "\n".join(lines)
