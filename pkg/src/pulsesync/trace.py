"""Run records and their line-delimited JSON form.

One record per line: ``{"t", "seq", "kind", "node", "detail"}``.  The first
record (kind ``config``) echoes the inputs, the last (kind ``summary``)
carries run metrics.  Files ending in ``.gz`` are gzip-compressed with a
fixed header timestamp so identical runs give identical bytes.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agreement import AgreementInstance


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class Trace:
    meta: dict = field(default_factory=dict)
    record_events: bool = True
    records: list[dict] = field(default_factory=list)
    pulses: dict[int, list[int]] = field(default_factory=dict)
    instances: list[dict] = field(default_factory=list)
    end: int = 0
    summary: dict | None = None
    counters: dict[str, int] = field(default_factory=dict)
    _seq: int = 0

    def event(self, t: int, kind: str, node: int | None = None, detail=None):
        self.counters[kind] = self.counters.get(kind, 0) + 1
        if not self.record_events:
            return
        self.records.append({"t": t, "seq": self._seq, "kind": kind, "node": node, "detail": detail})
        self._seq += 1

    def pulse(self, t: int, node: int):
        hist = self.pulses.setdefault(node, [])
        if hist and hist[-1] >= t:
            raise AssertionError(f"pulse history of node {node} not strictly increasing at {t}")
        hist.append(t)
        self.event(t, "pulse", node)

    def add_instance(self, inst: AgreementInstance):
        self.instances.append(inst.to_json())

    def lines(self):
        yield dumps({"t": 0, "seq": -1, "kind": "config", "node": None, "detail": self.meta})
        if self.record_events:
            for r in self.records:
                yield dumps(r)
        else:
            for node in sorted(self.pulses):
                for t in self.pulses[node]:
                    yield dumps({"t": t, "seq": None, "kind": "pulse", "node": node, "detail": None})
        for inst in self.instances:
            yield dumps({"t": inst["closed_at"], "seq": None, "kind": "instance", "node": inst["initiator"],
                         "detail": inst})
        yield dumps({"t": self.end, "seq": None, "kind": "summary", "node": None,
                     "detail": {"end": self.end, "counters": dict(sorted(self.counters.items())),
                                **(self.summary or {})}})

    def to_bytes(self) -> bytes:
        return "".join(line + "\n" for line in self.lines()).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def write(self, path: str | Path):
        path = Path(path)
        data = self.to_bytes()
        if path.suffix == ".gz":
            buf = io.BytesIO()
            with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
                gz.write(data)
            data = buf.getvalue()
        path.write_bytes(data)


def read_trace(path: str | Path) -> Trace:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    trace = Trace()
    events = []
    for line in raw.decode().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec["kind"]
        if kind == "config":
            trace.meta = rec["detail"]
        elif kind == "summary":
            trace.end = rec["detail"]["end"]
            trace.summary = rec["detail"]
        elif kind == "instance":
            trace.instances.append(rec["detail"])
        else:
            if kind == "pulse":
                trace.pulses.setdefault(rec["node"], []).append(rec["t"])
            if rec["seq"] is not None:
                events.append(rec)
    trace.records = events
    trace.record_events = bool(events)
    for hist in trace.pulses.values():
        hist.sort()
    return trace
