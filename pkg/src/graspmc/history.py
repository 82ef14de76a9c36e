"""Chain histories and their JSON Lines file format.

Line 1 is a metadata object, every further line one record::

    {"version": 1, "object": ..., "seed": ..., "sampler": "rw" | "kameleon",
     "params": {...}, "donor": ..., "transfer_mode": ..., "frozen_subsample": ...}
    {"iter": 0, "g": [x, y, z, qw, qx, qy, qz], "measure": ..., "feasible": ...,
     "accepted": ..., "temperature": ...}

Floats are written with 17 significant digits so files round-trip bit-exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GraspMCError
from .geometry import Grasp

FORMAT_VERSION = 1


@dataclass
class ChainRecord:
    iter: int
    proposal: Grasp
    measure: float
    feasible: bool
    accepted: bool
    temperature: float


@dataclass
class ChainHistory:
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def accepted_states(self):
        """States the chain actually visited, as an ``(m, 7)`` array."""
        rows = [r.proposal.vector for r in self.records if r.accepted]
        return np.array(rows, dtype=float).reshape(-1, 7)

    def chain_states(self):
        """State of the chain after each record, ``(len(records), 7)``.

        Rejected proposals repeat the previous state, so states are weighted
        by how long the chain stayed in them.
        """
        out = np.empty((len(self.records), 7))
        cur = None
        for i, r in enumerate(self.records):
            if r.accepted or cur is None:
                cur = r.proposal.vector
            out[i] = cur
        return out

    def proposals(self):
        return np.array([r.proposal.vector for r in self.records], dtype=float).reshape(-1, 7)

    @property
    def frozen_subsample(self):
        z = self.metadata.get("frozen_subsample")
        return None if z is None else np.asarray(z, dtype=float).reshape(-1, 7)

    def feasible_count(self, dedup=False, pos_tol=0.005, ang_tol=0.1):
        """Accepted feasible proposals, excluding the initial state (iter 0)."""
        from .geometry import quat_geodesic

        hits = [r.proposal for r in self.records if r.accepted and r.feasible and r.iter > 0]
        if not dedup:
            return len(hits)
        kept = []
        for g in hits:
            if not any(np.linalg.norm(g.position - k.position) <= pos_tol
                       and quat_geodesic(g.orientation, k.orientation) <= ang_tol for k in kept):
                kept.append(g)
        return len(kept)

    def acceptance_rate(self):
        moves = [r.accepted for r in self.records if r.iter > 0]
        return float(np.mean(moves)) if moves else 0.0


def _f(x):
    return "%.17g" % x


def _record_line(r):
    g = ", ".join(_f(v) for v in r.proposal.vector)
    return (f'{{"iter": {int(r.iter)}, "g": [{g}], "measure": {_f(r.measure)}, '
            f'"feasible": {"true" if r.feasible else "false"}, '
            f'"accepted": {"true" if r.accepted else "false"}, '
            f'"temperature": {_f(r.temperature)}}}')


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def dumps_history(history):
    meta = {"version": FORMAT_VERSION, **history.metadata}
    meta.setdefault("donor", None)
    meta.setdefault("transfer_mode", None)
    meta.setdefault("frozen_subsample", None)
    lines = [json.dumps(meta, default=_jsonable, sort_keys=True)]
    lines.extend(_record_line(r) for r in history.records)
    return "\n".join(lines) + "\n"


def save_history(history, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_history(history), encoding="utf-8")
    except OSError as exc:
        raise GraspMCError("io-error", f"{path}: {exc}") from exc


def load_history(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise GraspMCError("io-error", f"{path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GraspMCError("bad-history", f"{path}: empty file")
    meta = json.loads(lines[0])
    if meta.get("version") != FORMAT_VERSION:
        raise GraspMCError("bad-history", f"{path}: unsupported version {meta.get('version')!r}")
    meta.pop("version")
    records = []
    for ln in lines[1:]:
        d = json.loads(ln)
        records.append(ChainRecord(d["iter"], Grasp.from_vector(d["g"], exact=True), d["measure"],
                                   d["feasible"], d["accepted"], d["temperature"]))
    return ChainHistory(records, meta)
