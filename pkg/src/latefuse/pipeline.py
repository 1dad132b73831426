"""Event-log pipeline: parse, segment, filter, label, featurize, cache.

External file formats
---------------------

Event log (CSV, header required)::

    user_id,timestamp_ms,kind,f1,f2,f3,f4

  kind "alph":    f1 = key-hold duration (ms), f2 = time since previous
                  keypress (ms), f3/f4 = horizontal/vertical distance from
                  the previous key (opaque units).
  kind "special": f1 = category name (auto-correct, backspace, space,
                  suggestion, switching-keyboard, other); f2..f4 unused.
  kind "accel":   f1/f2/f3 = accelerometer x/y/z; f4 unused.

Label file (CSV, header required)::

    user_id,assessment_timestamp_ms,hdrs,ymrs

Session rule: keypresses (alph + special) that follow their predecessor
within ``gap_threshold_ms`` belong to the same session; a gap of at
least the threshold starts a new one. A session spans [first keypress,
last keypress]; accelerometer readings inside that closed span attach to
it, readings outside every span are discarded.

Filtering truncates every view to the first ``max_len`` elements and
drops the session when any view has fewer than ``min_len``.

Labels: a session belongs to the assessment whose window
[assessment - 7 days, assessment) contains the session start. Sessions
with no covering window are dropped (and counted).
"""

from __future__ import annotations

import csv
import logging
import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kernel import DTYPE

logger = logging.getLogger(__name__)

KIND_ALPH = "alph"
KIND_SPECIAL = "special"
KIND_ACCEL = "accel"
KINDS = (KIND_ALPH, KIND_SPECIAL, KIND_ACCEL)

VIEW_NAMES = ("alph", "special", "accel")
VIEW_DIMS = (4, 6, 3)

SPECIAL_CATEGORIES = ("auto-correct", "backspace", "space", "suggestion",
                      "switching-keyboard", "other")
_CATEGORY_INDEX = {c: i for i, c in enumerate(SPECIAL_CATEGORIES)}

GAP_THRESHOLD_MS = 5000
MAX_SEQ_LEN = 100
MIN_SEQ_LEN = 10
WEEK_MS = 7 * 24 * 3600 * 1000

EVENT_HEADER = ("user_id", "timestamp_ms", "kind", "f1", "f2", "f3", "f4")
LABEL_HEADER = ("user_id", "assessment_timestamp_ms", "hdrs", "ymrs")

CACHE_MAGIC = b"LFSC"
CACHE_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class RawEvent:
    user_id: str
    timestamp: int
    kind: str
    payload: object  # tuple of floats (alph/accel) or category string (special)


@dataclass
class LabelRecord:
    user_id: str
    timestamp: int
    hdrs: int
    ymrs: int


@dataclass
class Session:
    """One typing burst with its co-occurring sensor readings (pre-featurize)."""

    user_id: str
    start: int
    end: int
    alph: np.ndarray                 # (n1, 4): duration, time-since-last, dx, dy
    special_categories: List[str]    # length n2
    accel: np.ndarray                # (n3, 3): ax, ay, az
    hdrs: Optional[int] = None
    ymrs: Optional[int] = None

    def view_lengths(self) -> Tuple[int, int, int]:
        return (self.alph.shape[0], len(self.special_categories),
                self.accel.shape[0])


@dataclass
class SampleRecord:
    """Featurized, labeled session: the unit of learning."""

    user_id: str
    start: int
    end: int
    hdrs: int
    ymrs: int
    views: Tuple[np.ndarray, np.ndarray, np.ndarray]  # (n1,4), (n2,6), (n3,3)


def read_events(path) -> List[RawEvent]:
    """Parse an event log; raises DataError on format problems."""
    events: List[RawEvent] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EVENT_HEADER:
            raise DataError(
                f"bad event-log header {header}; expected {','.join(EVENT_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(EVENT_HEADER):
                raise DataError(f"line {line_no}: expected {len(EVENT_HEADER)} "
                                f"columns, got {len(row)}")
            user_id, ts, kind = row[0].strip(), row[1].strip(), row[2].strip()
            try:
                timestamp = int(ts)
            except ValueError:
                raise DataError(f"line {line_no}: bad timestamp {ts!r}") from None
            fields = [c.strip() for c in row[3:7]]
            try:
                if kind == KIND_ALPH:
                    payload = tuple(float(c) for c in fields)
                elif kind == KIND_ACCEL:
                    payload = tuple(float(c) for c in fields[:3])
                elif kind == KIND_SPECIAL:
                    payload = fields[0]
                else:
                    raise DataError(f"line {line_no}: unknown event kind {kind!r}")
            except ValueError:
                raise DataError(f"line {line_no}: bad numeric field in "
                                f"{fields}") from None
            events.append(RawEvent(user_id=user_id, timestamp=timestamp,
                                   kind=kind, payload=payload))
    return events


def write_events(path, events: Sequence[RawEvent]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EVENT_HEADER)
        for e in events:
            if e.kind == KIND_SPECIAL:
                fields = [e.payload, "", "", ""]
            elif e.kind == KIND_ACCEL:
                fields = [_fmt(v) for v in e.payload] + [""]
            else:
                fields = [_fmt(v) for v in e.payload]
            writer.writerow([e.user_id, e.timestamp, e.kind, *fields])


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def read_labels(path) -> List[LabelRecord]:
    labels: List[LabelRecord] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LABEL_HEADER:
            raise DataError(
                f"bad label-file header {header}; expected {','.join(LABEL_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(LABEL_HEADER):
                raise DataError(f"line {line_no}: expected {len(LABEL_HEADER)} "
                                f"columns, got {len(row)}")
            try:
                labels.append(LabelRecord(user_id=row[0].strip(),
                                          timestamp=int(row[1]),
                                          hdrs=int(row[2]), ymrs=int(row[3])))
            except ValueError:
                raise DataError(f"line {line_no}: bad label row {row}") from None
    return labels


def write_labels(path, labels: Sequence[LabelRecord]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LABEL_HEADER)
        for r in labels:
            writer.writerow([r.user_id, r.timestamp, r.hdrs, r.ymrs])


def group_by_user(events: Sequence[RawEvent]) -> Dict[str, List[RawEvent]]:
    """Group events per user; users come back in sorted id order."""
    by_user: Dict[str, List[RawEvent]] = {}
    for e in events:
        by_user.setdefault(e.user_id, []).append(e)
    return {u: by_user[u] for u in sorted(by_user)}


def is_sorted(events: Sequence[RawEvent]) -> bool:
    return all(events[i].timestamp <= events[i + 1].timestamp
               for i in range(len(events) - 1))


def segment_sessions(events: Sequence[RawEvent],
                     gap_threshold: int = GAP_THRESHOLD_MS) -> List[Session]:
    """Split one user's time-sorted events into keypress-bounded sessions.

    A keypress at least ``gap_threshold`` ms after its predecessor opens a
    new session. Accelerometer readings strictly outside every session
    span are discarded (logged).
    """
    if gap_threshold <= 0:
        raise DataError(f"gap threshold must be positive, got {gap_threshold}")
    if not events:
        return []
    user = events[0].user_id
    for e in events:
        if e.user_id != user:
            raise DataError("segment_sessions expects events of a single user")
    if not is_sorted(events):
        raise DataError("segment_sessions expects time-sorted events")

    keypresses = [e for e in events if e.kind in (KIND_ALPH, KIND_SPECIAL)]
    accel = [e for e in events if e.kind == KIND_ACCEL]
    if not keypresses:
        if accel:
            logger.info("user %s: %d accel readings but no keypresses; "
                        "nothing to segment", user, len(accel))
        return []

    groups: List[List[RawEvent]] = [[keypresses[0]]]
    for prev, cur in zip(keypresses, keypresses[1:]):
        if cur.timestamp - prev.timestamp >= gap_threshold:
            groups.append([cur])
        else:
            groups[-1].append(cur)

    sessions: List[Session] = []
    for g in groups:
        alph_rows = [e.payload for e in g if e.kind == KIND_ALPH]
        cats = [e.payload for e in g if e.kind == KIND_SPECIAL]
        sessions.append(Session(
            user_id=user,
            start=g[0].timestamp,
            end=g[-1].timestamp,
            alph=np.array(alph_rows, dtype=DTYPE).reshape(len(alph_rows), 4),
            special_categories=cats,
            accel=np.zeros((0, 3), dtype=DTYPE),
        ))

    # Attach accel readings to the session whose closed span covers them.
    assigned: List[List[tuple]] = [[] for _ in sessions]
    dropped = 0
    si = 0
    for e in accel:
        while si < len(sessions) and sessions[si].end < e.timestamp:
            si += 1
        if si < len(sessions) and sessions[si].start <= e.timestamp <= sessions[si].end:
            assigned[si].append(e.payload)
        else:
            dropped += 1
    for s, rows in zip(sessions, assigned):
        s.accel = np.array(rows, dtype=DTYPE).reshape(len(rows), 3)
    if dropped:
        logger.info("user %s: discarded %d accel readings outside all "
                    "session spans", user, dropped)
    return sessions


def filter_sessions(sessions: Sequence[Session], max_len: int = MAX_SEQ_LEN,
                    min_len: int = MIN_SEQ_LEN) -> Tuple[List[Session], int]:
    """Truncate each view to ``max_len`` rows, then drop sessions where any
    view is shorter than ``min_len``. Returns (kept, dropped_count)."""
    if min_len < 1 or max_len < min_len:
        raise DataError(f"bad length bounds [{min_len}, {max_len}]")
    kept: List[Session] = []
    dropped = 0
    for s in sessions:
        truncated = Session(
            user_id=s.user_id, start=s.start, end=s.end,
            alph=s.alph[:max_len],
            special_categories=s.special_categories[:max_len],
            accel=s.accel[:max_len],
            hdrs=s.hdrs, ymrs=s.ymrs,
        )
        if min(truncated.view_lengths()) < min_len:
            dropped += 1
        else:
            kept.append(truncated)
    return kept, dropped


def attach_labels(sessions: Sequence[Session],
                  labels: Sequence[LabelRecord]) -> Tuple[List[Session], int]:
    """Assign each session the scores of its covering assessment window.

    Window i is [t_i - 7 days, t_i). Raises DataError when two windows of
    one user overlap. Sessions with no covering window are dropped and
    counted. Returns (labeled_sessions, dropped_count).
    """
    by_user: Dict[str, List[LabelRecord]] = {}
    for r in labels:
        by_user.setdefault(r.user_id, []).append(r)
    for user, recs in by_user.items():
        recs.sort(key=lambda r: r.timestamp)
        for a, b in zip(recs, recs[1:]):
            if a.timestamp == b.timestamp:
                raise DataError(f"user {user}: duplicate assessment at "
                                f"{b.timestamp}")
            if b.timestamp - a.timestamp < WEEK_MS:
                raise DataError(
                    f"user {user}: assessment windows overlap "
                    f"({a.timestamp} and {b.timestamp} are less than 7 days apart)")

    labeled: List[Session] = []
    dropped = 0
    for s in sessions:
        recs = by_user.get(s.user_id, [])
        times = [r.timestamp for r in recs]
        # First assessment strictly after the session start; its window is
        # the only one that can contain the start.
        i = bisect_left(times, s.start + 1)
        if i < len(recs) and recs[i].timestamp - WEEK_MS <= s.start:
            labeled.append(Session(user_id=s.user_id, start=s.start, end=s.end,
                                   alph=s.alph,
                                   special_categories=s.special_categories,
                                   accel=s.accel,
                                   hdrs=recs[i].hdrs, ymrs=recs[i].ymrs))
        else:
            dropped += 1
    if dropped:
        logger.info("dropped %d sessions with no covering assessment window",
                    dropped)
    return labeled, dropped


def one_hot_specials(categories: Sequence[str]) -> Tuple[np.ndarray, int]:
    """Map category names to one-hot rows in the fixed category order.

    Unknown names map to "other"; the count of such rows is returned.
    """
    out = np.zeros((len(categories), len(SPECIAL_CATEGORIES)), dtype=DTYPE)
    unknown = 0
    other = _CATEGORY_INDEX["other"]
    for i, c in enumerate(categories):
        j = _CATEGORY_INDEX.get(c)
        if j is None:
            unknown += 1
            j = other
        out[i, j] = 1.0
    return out, unknown


def featurize(session: Session) -> Tuple[SampleRecord, int]:
    """Turn a filtered, labeled session into numeric per-view sequences.

    Keeps raw units; scale normalization happens later against train-split
    statistics (see :class:`Normalizer`). Returns (sample, unknown_count).
    """
    if session.hdrs is None or session.ymrs is None:
        raise DataError("featurize needs a labeled session")
    onehot, unknown = one_hot_specials(session.special_categories)
    sample = SampleRecord(
        user_id=session.user_id, start=session.start, end=session.end,
        hdrs=int(session.hdrs), ymrs=int(session.ymrs),
        views=(session.alph.astype(DTYPE, copy=True), onehot,
               session.accel.astype(DTYPE, copy=True)),
    )
    return sample, unknown


class Normalizer:
    """Per-column scaling fitted on the train split only.

    Alph columns 0 and 1 (duration, time since last) are first mapped
    through log(1 + x); all four alph columns and the three accel columns
    are then standardized to train mean 0 / std 1. One-hot columns pass
    through. Constants travel inside the checkpoint so evaluation applies
    exactly the train-time transform.
    """

    LOG_COLS = (0, 1)

    def __init__(self, alph_mean=None, alph_std=None, accel_mean=None,
                 accel_std=None):
        self.alph_mean = alph_mean
        self.alph_std = alph_std
        self.accel_mean = accel_mean
        self.accel_std = accel_std

    @staticmethod
    def _log_view(alph: np.ndarray) -> np.ndarray:
        out = alph.astype(DTYPE, copy=True)
        for col in Normalizer.LOG_COLS:
            out[:, col] = np.log1p(np.maximum(out[:, col], 0.0))
        return out

    @staticmethod
    def _safe_std(x: np.ndarray) -> np.ndarray:
        std = x.std(axis=0)
        return np.where(std < 1e-12, 1.0, std)

    def fit(self, samples: Sequence[SampleRecord]) -> "Normalizer":
        if not samples:
            raise DataError("cannot fit a normalizer on zero samples")
        alph = np.concatenate([self._log_view(s.views[0]) for s in samples])
        accel = np.concatenate([s.views[2] for s in samples])
        if alph.shape[0] == 0 or accel.shape[0] == 0:
            raise DataError("cannot fit a normalizer on empty views")
        self.alph_mean = alph.mean(axis=0)
        self.alph_std = self._safe_std(alph)
        self.accel_mean = accel.mean(axis=0)
        self.accel_std = self._safe_std(accel)
        return self

    def transform_views(self, views) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.alph_mean is None:
            raise DataError("normalizer used before fit/load")
        alph = (self._log_view(views[0]) - self.alph_mean) / self.alph_std
        accel = (views[2] - self.accel_mean) / self.accel_std
        return alph, views[1].astype(DTYPE, copy=True), accel

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {"norm.alph_mean": self.alph_mean, "norm.alph_std": self.alph_std,
                "norm.accel_mean": self.accel_mean,
                "norm.accel_std": self.accel_std}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "Normalizer":
        try:
            return cls(alph_mean=arrays["norm.alph_mean"],
                       alph_std=arrays["norm.alph_std"],
                       accel_mean=arrays["norm.accel_mean"],
                       accel_std=arrays["norm.accel_std"])
        except KeyError as e:
            raise DataError(f"checkpoint is missing normalizer array {e}") from None


@dataclass
class IngestResult:
    samples: List[SampleRecord]
    counts: Dict[str, int] = field(default_factory=dict)


def run_ingest(events: Sequence[RawEvent], labels: Sequence[LabelRecord],
               gap_threshold: int = GAP_THRESHOLD_MS,
               max_len: int = MAX_SEQ_LEN,
               min_len: int = MIN_SEQ_LEN) -> IngestResult:
    """Full pipeline pass: segment, filter, label, featurize.

    Events may arrive unsorted; they are sorted per user with a warning.
    """
    counts = {"events": len(events), "sessions_segmented": 0,
              "dropped_short": 0, "dropped_unlabeled": 0,
              "unknown_categories": 0, "samples": 0}
    samples: List[SampleRecord] = []
    for user, user_events in group_by_user(events).items():
        if not is_sorted(user_events):
            logger.warning("user %s: events out of order; sorting by timestamp",
                           user)
            user_events = sorted(user_events, key=lambda e: e.timestamp)
        sessions = segment_sessions(user_events, gap_threshold)
        counts["sessions_segmented"] += len(sessions)
        kept, dropped_short = filter_sessions(sessions, max_len, min_len)
        counts["dropped_short"] += dropped_short
        labeled, dropped_unlabeled = attach_labels(kept, labels)
        counts["dropped_unlabeled"] += dropped_unlabeled
        for session in labeled:
            sample, unknown = featurize(session)
            counts["unknown_categories"] += unknown
            samples.append(sample)
    counts["samples"] = len(samples)
    return IngestResult(samples=samples, counts=counts)


def write_cache(path, samples: Sequence[SampleRecord]) -> None:
    """Serialize featurized samples; deterministic bytes for equal inputs."""
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<B", CACHE_VERSION))
        f.write(struct.pack("<I", len(samples)))
        for s in samples:
            uid = s.user_id.encode("utf-8")
            f.write(struct.pack("<I", len(uid)))
            f.write(uid)
            f.write(struct.pack("<qqii", s.start, s.end, s.hdrs, s.ymrs))
            for view in s.views:
                f.write(struct.pack("<II", view.shape[0], view.shape[1]))
                f.write(np.ascontiguousarray(view, dtype="<f8").tobytes())


def read_cache(path) -> List[SampleRecord]:
    def need(f, count):
        data = f.read(count)
        if len(data) != count:
            raise DataError("session cache is truncated")
        return data

    with open(path, "rb") as f:
        if f.read(len(CACHE_MAGIC)) != CACHE_MAGIC:
            raise DataError("not a session cache (bad magic)")
        (version,) = struct.unpack("<B", need(f, 1))
        if version != CACHE_VERSION:
            raise DataError(f"session cache version {version} is not supported "
                            f"(expected {CACHE_VERSION})")
        (count,) = struct.unpack("<I", need(f, 4))
        samples: List[SampleRecord] = []
        for _ in range(count):
            (uid_len,) = struct.unpack("<I", need(f, 4))
            uid = need(f, uid_len).decode("utf-8")
            start, end, hdrs, ymrs = struct.unpack("<qqii", need(f, 24))
            views = []
            for _v in range(3):
                rows, cols = struct.unpack("<II", need(f, 8))
                data = np.frombuffer(need(f, 8 * rows * cols), dtype="<f8")
                views.append(data.reshape(rows, cols).astype(DTYPE))
            samples.append(SampleRecord(user_id=uid, start=start, end=end,
                                        hdrs=hdrs, ymrs=ymrs,
                                        views=tuple(views)))
        return samples
