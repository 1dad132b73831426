"""Deterministic synthetic event-stream generator with a known class signal.

Emits an event log and a label file in the pipeline's file formats. Each
generated session sits in its own 7-day assessment window, so the
session's latent binary class can be expressed exactly through the label
mechanism (one assessment per window).

Signal design. Let y be the session's class, g the ``class_signal``
strength, and f the ``interaction_fraction``. Each session also draws a
uniform random sign s (a nuisance factor independent of y):

- main effects (weight g * (1 - f)): the class shifts the log-median of
  keypress durations and inter-key intervals.
- cross-view interaction (weight g * f): durations are shifted by s and
  the accelerometer z level by s * (2y - 1). Each shift alone is
  symmetric noise; their PRODUCT equals the class, so this part of the
  signal lives only in the interaction between the alph view and the
  accel view, which is what product-based fusion models capture natively.

With g = 0 the streams are independent of the labels, so any classifier
should sit at chance. Given a seed, output files are byte-identical
across runs.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kernel import Rng
from .pipeline import (GAP_THRESHOLD_MS, KIND_ACCEL, KIND_ALPH, KIND_SPECIAL,
                       MIN_SEQ_LEN, SPECIAL_CATEGORIES, WEEK_MS, LabelRecord,
                       RawEvent, group_by_user, is_sorted, segment_sessions,
                       write_events, write_labels)

logger = logging.getLogger(__name__)

# Effect sizes at full weight (log-scale for timing, absolute for accel z).
KAPPA_DURATION = 0.25
KAPPA_INTERVAL = 0.20
LAMBDA_DURATION = 1.10
LAMBDA_ACCEL = 1.80

ACCEL_BASE = (1.0, 5.0, 8.0)
ACCEL_SIGMA = (0.6, 2.0, 1.2)
CATEGORY_P = (0.22, 0.18, 0.34, 0.10, 0.06, 0.10)

# Inter-key intervals are capped safely below the default session gap so a
# generated session can never be split by segmentation.
INTERVAL_CAP_MS = 4500


@dataclass
class SynthConfig:
    n_users: int = 20
    sessions_per_user: int = 200
    class_signal: float = 0.8
    interaction_fraction: float = 0.5
    noise_scale: float = 1.0
    seed: int = 0
    mean_len_alph: float = 24.0
    mean_len_special: float = 16.0
    mean_len_accel: float = 378.0
    len_floor_alph: int = 1
    len_floor_special: int = 1
    len_floor_accel: int = 1
    length_sigma: float = 0.5
    interval_median_ms: float = 380.0
    interval_sigma: float = 0.8
    duration_median_ms: float = 85.0
    duration_sigma: float = 0.37
    start_ts_ms: int = 1_500_000_000_000

    def __post_init__(self):
        if self.n_users < 1 or self.sessions_per_user < 1:
            raise ValueError("n_users and sessions_per_user must be >= 1")
        if not 0.0 <= self.class_signal <= 1.0:
            raise ValueError(f"class_signal must be in [0, 1], got "
                             f"{self.class_signal}")
        if not 0.0 <= self.interaction_fraction <= 1.0:
            raise ValueError("interaction_fraction must be in [0, 1]")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        for name in ("mean_len_alph", "mean_len_special", "mean_len_accel"):
            if getattr(self, name) < 1:
                raise ValueError(f"infeasible length target: {name} must be >= 1")
        for name in ("len_floor_alph", "len_floor_special", "len_floor_accel"):
            if getattr(self, name) < 1:
                raise ValueError(f"infeasible length floor: {name} must be >= 1")
        if (self.length_sigma <= 0 or self.interval_sigma <= 0
                or self.duration_sigma <= 0):
            raise ValueError("distribution sigmas must be positive")
        if self.interval_median_ms < 1 or self.duration_median_ms < 1:
            raise ValueError("timing medians must be >= 1 ms")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ValueError(f"unknown generator config key {key!r}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class SessionTruth:
    user_id: str
    start: int
    label_ts: int
    y: int
    lengths: Tuple[int, int, int]


@dataclass
class GenerationReport:
    """Generator-side bookkeeping to reconcile against pipeline output."""

    sessions_emitted: int = 0
    labels_emitted: int = 0
    expected_dropped_short: int = 0
    class_counts: Dict[int, int] = field(default_factory=lambda: {0: 0, 1: 0})
    truths: List[SessionTruth] = field(default_factory=list)


def _draw_length(rng: Rng, mean: float, sigma: float, floor: int) -> int:
    mu = np.log(mean) - 0.5 * sigma * sigma
    return max(floor, int(round(float(np.exp(rng.normal(mu, sigma))))))


def _draw_category(rng: Rng) -> str:
    u = float(rng.random())
    total = 0.0
    for cat, p in zip(SPECIAL_CATEGORIES, CATEGORY_P):
        total += p
        if u < total:
            return cat
    return SPECIAL_CATEGORIES[-1]


def generate(config: SynthConfig, events_path, labels_path) -> GenerationReport:
    """Write an event log and a label file; returns bookkeeping counts."""
    rng = Rng(config.seed)
    g = config.class_signal
    w_main = g * (1.0 - config.interaction_fraction)
    w_int = g * config.interaction_fraction
    noise = config.noise_scale
    report = GenerationReport()
    events: List[RawEvent] = []
    labels: List[LabelRecord] = []

    for u in range(config.n_users):
        user_id = f"u{u:03d}"
        user_base = config.start_ts_ms
        for w in range(config.sessions_per_user):
            window_start = user_base + w * WEEK_MS
            assessment_ts = window_start + WEEK_MS
            y = int(rng.integers(0, 2))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            cls = 2.0 * y - 1.0

            shift_duration = KAPPA_DURATION * w_main * cls + LAMBDA_DURATION * w_int * sign
            shift_interval = KAPPA_INTERVAL * w_main * cls
            shift_accel_z = LAMBDA_ACCEL * w_int * sign * cls

            n_alph = _draw_length(rng, config.mean_len_alph,
                                  config.length_sigma, config.len_floor_alph)
            n_spec = _draw_length(rng, config.mean_len_special,
                                  config.length_sigma, config.len_floor_special)
            n_accel = _draw_length(rng, config.mean_len_accel,
                                   config.length_sigma, config.len_floor_accel)

            # Session start sits well inside [window_start, assessment).
            offset = int(rng.integers(12 * 3600 * 1000, 5 * 24 * 3600 * 1000))
            start = window_start + offset

            n_keys = n_alph + n_spec
            special_slots = set(int(i) for i in rng.permutation(n_keys)[:n_spec])
            mu_iv = np.log(config.interval_median_ms) + shift_interval
            mu_d = np.log(config.duration_median_ms) + shift_duration

            session_events: List[RawEvent] = []
            ts = start
            prev_interval = 0.0
            for slot in range(n_keys):
                if slot > 0:
                    iv = float(np.exp(rng.normal(mu_iv, config.interval_sigma * noise)))
                    iv = min(max(1.0, round(iv)), INTERVAL_CAP_MS)
                    ts += int(iv)
                    prev_interval = iv
                if slot in special_slots:
                    session_events.append(RawEvent(
                        user_id=user_id, timestamp=ts, kind=KIND_SPECIAL,
                        payload=_draw_category(rng)))
                else:
                    duration = float(np.exp(
                        rng.normal(mu_d, config.duration_sigma * noise)))
                    dx = float(rng.normal(0.0, 3.0))
                    dy = float(rng.normal(0.0, 3.0))
                    session_events.append(RawEvent(
                        user_id=user_id, timestamp=ts, kind=KIND_ALPH,
                        payload=(round(duration, 3), prev_interval, round(dx, 4),
                                 round(dy, 4))))
            end = ts

            accel_ts = np.linspace(start, end, n_accel)
            az_mean = ACCEL_BASE[2] + shift_accel_z
            for t in accel_ts:
                ax = float(rng.normal(ACCEL_BASE[0], ACCEL_SIGMA[0] * noise))
                ay = float(rng.normal(ACCEL_BASE[1], ACCEL_SIGMA[1] * noise))
                az = float(rng.normal(az_mean, ACCEL_SIGMA[2] * noise))
                session_events.append(RawEvent(
                    user_id=user_id, timestamp=int(round(t)), kind=KIND_ACCEL,
                    payload=(round(ax, 4), round(ay, 4), round(az, 4))))

            session_events.sort(key=lambda e: e.timestamp)
            events.extend(session_events)

            hdrs = int(rng.integers(0, 8)) if y == 0 else int(rng.integers(8, 21))
            ymrs = int(np.clip(round(4.0 + 10.0 * g * y
                                     + float(rng.normal(0.0, 2.0 * noise))), 0, 30))
            labels.append(LabelRecord(user_id=user_id, timestamp=assessment_ts,
                                      hdrs=hdrs, ymrs=ymrs))

            report.sessions_emitted += 1
            report.class_counts[y] += 1
            if min(n_alph, n_spec, n_accel) < MIN_SEQ_LEN:
                report.expected_dropped_short += 1
            report.truths.append(SessionTruth(
                user_id=user_id, start=start, label_ts=assessment_ts, y=y,
                lengths=(n_alph, n_spec, n_accel)))

    report.labels_emitted = len(labels)
    write_events(events_path, events)
    write_labels(labels_path, labels)
    logger.info("generated %d sessions for %d users (%d expected to be "
                "filtered as too short)", report.sessions_emitted,
                config.n_users, report.expected_dropped_short)
    return report


def describe(events: Sequence[RawEvent],
             gap_threshold: int = GAP_THRESHOLD_MS) -> dict:
    """Corpus statistics: per-view point counts, session counts, lengths."""
    stats = {
        name: {"points": 0, "sessions": 0, "lengths": []}
        for name in (KIND_ALPH, KIND_SPECIAL, KIND_ACCEL)
    }
    total_sessions = 0
    by_user = group_by_user(events)
    for user, user_events in by_user.items():
        if not is_sorted(user_events):
            user_events = sorted(user_events, key=lambda e: e.timestamp)
        sessions = segment_sessions(user_events, gap_threshold)
        total_sessions += len(sessions)
        for s in sessions:
            for name, n in zip((KIND_ALPH, KIND_SPECIAL, KIND_ACCEL),
                               s.view_lengths()):
                stats[name]["points"] += n
                if n > 0:
                    stats[name]["sessions"] += 1
                    stats[name]["lengths"].append(n)
    out = {"users": len(by_user), "sessions_total": total_sessions, "views": {}}
    for name, s in stats.items():
        lengths = s["lengths"]
        out["views"][name] = {
            "points": s["points"],
            "sessions": s["sessions"],
            "mean_len": float(np.mean(lengths)) if lengths else 0.0,
            "median_len": float(statistics.median(lengths)) if lengths else 0.0,
            "max_len": int(max(lengths)) if lengths else 0,
        }
    return out
