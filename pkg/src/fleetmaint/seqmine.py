"""Differential mining of per-vehicle repair sequences.

Patterns are contiguous runs of system labels. Support counts occurrences
over all length-l windows (overlaps included, multiple hits per vehicle all
count) and is normalized by the total number of length-l windows in the
group, so left/right normalized supports are comparable proportions. The
left:right ratio (i-ratio) is capped at 10000.0 when the right side has zero
support, and H0: p_left = p_right is tested with a pooled two-proportion
z-test.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import backend
from .ingest import MaintenanceRecord, RejectedRow, VehicleRecord, normalize_make_model

I_RATIO_CAP = 10000.0
P_FLOOR = 1e-4


@dataclass
class EventSequence:
    """One vehicle's repair history as indices into a shared label table."""

    unit_no: str
    make_model: str
    events: np.ndarray  # int32 vocabulary indices, chronological

    def __len__(self) -> int:
        return int(self.events.shape[0])


@dataclass
class SequenceSet:
    labels: tuple[str, ...]
    sequences: list[EventSequence]

    def labels_of(self, seq: EventSequence) -> list[str]:
        return [self.labels[i] for i in seq.events]

    def as_label_lists(self) -> list[list[str]]:
        return [self.labels_of(s) for s in self.sequences]


@dataclass
class DiffPattern:
    pattern: tuple[str, ...]
    left_support: int
    left_norm: float
    right_support: int
    right_norm: float
    i_ratio: float
    z: float
    p: float


def extract_sequences(
    maintenance: list[MaintenanceRecord], vehicles: list[VehicleRecord]
) -> tuple[SequenceSet, list[RejectedRow]]:
    """Per-vehicle event sequences ordered by (job open date, job id)."""
    by_unit = {v.unit_no: v for v in vehicles}
    rejects: list[RejectedRow] = []
    kept: list[MaintenanceRecord] = []
    for idx, record in enumerate(maintenance):
        if record.unit_no not in by_unit:
            rejects.append(RejectedRow(idx, "unknown_vehicle", record.unit_no))
            continue
        kept.append(record)

    labels = tuple(sorted({r.system for r in kept}))
    index = {label: i for i, label in enumerate(labels)}

    grouped: dict[str, list[MaintenanceRecord]] = {}
    for record in kept:
        grouped.setdefault(record.unit_no, []).append(record)

    sequences = []
    for unit in sorted(grouped, key=lambda u: (by_unit[u].model_year, u)):
        jobs = sorted(grouped[unit], key=lambda r: (r.job_open_date, r.job_id))
        events = np.array([index[r.system] for r in jobs], dtype=np.int32)
        sequences.append(
            EventSequence(unit_no=unit, make_model=by_unit[unit].make_model, events=events)
        )
    return SequenceSet(labels=labels, sequences=sequences), rejects


def sequence_set_from_lists(
    label_lists: list[list[str]],
    make_models: list[str] | None = None,
    units: list[str] | None = None,
) -> SequenceSet:
    """Build a SequenceSet directly from lists of labels (tests, adapters)."""
    labels = tuple(sorted({lab for seq in label_lists for lab in seq}))
    index = {label: i for i, label in enumerate(labels)}
    sequences = []
    for i, seq in enumerate(label_lists):
        sequences.append(
            EventSequence(
                unit_no=units[i] if units else f"U{i:04d}",
                make_model=make_models[i] if make_models else "UNKNOWN UNKNOWN",
                events=np.array([index[lab] for lab in seq], dtype=np.int32),
            )
        )
    return SequenceSet(labels=labels, sequences=sequences)


def count_windows(sequences, length: int) -> int:
    """Number of contiguous windows of the given length across all sequences."""
    if length < 1:
        raise ValueError("length must be >= 1")
    total = 0
    for seq in sequences:
        total += max(0, len(seq) - length + 1)
    return total


def mine_frequent(
    sequences: list[EventSequence],
    min_len: int = 3,
    max_len: int = 4,
    top_n: int = 8,
) -> list[tuple[tuple[int, ...], int]]:
    """Most frequent contiguous patterns with lengths in [min_len, max_len].

    Every window occurrence counts, including overlapping repeats inside one
    vehicle. Ties are broken lexicographically by pattern.
    """
    if min_len < 1 or max_len < min_len:
        raise ValueError("need 1 <= min_len <= max_len")
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    counts: Counter = Counter()
    for seq in sequences:
        ev = tuple(int(v) for v in seq.events)
        for width in range(min_len, max_len + 1):
            for start in range(len(ev) - width + 1):
                counts[ev[start : start + width]] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_n]


def _concat(sequences: list[EventSequence]) -> tuple[np.ndarray, np.ndarray]:
    offsets = np.zeros(len(sequences) + 1, dtype=np.int64)
    for i, seq in enumerate(sequences):
        offsets[i + 1] = offsets[i] + len(seq)
    if sequences:
        events = np.concatenate([seq.events for seq in sequences]).astype(np.int32)
    else:
        events = np.zeros(0, dtype=np.int32)
    return events, offsets


def count_pattern(sequences: list[EventSequence], pattern: tuple[int, ...]) -> int:
    """Occurrences of one pattern across all windows of all sequences."""
    events, offsets = _concat(sequences)
    return int(
        backend.count_occurrences_kernel(
            events, offsets, np.asarray(pattern, dtype=np.int32)
        )
    )


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def normal_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def two_prop_z(x1: int, n1: int, x2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z-test of H0: p1 = p2.

    Returns (z, two-sided p). A degenerate pooled proportion (0 or 1) gives
    z = 0, p = 1.
    """
    if n1 <= 0 or n2 <= 0:
        raise ValueError("n1 and n2 must be positive")
    if not 0 <= x1 <= n1 or not 0 <= x2 <= n2:
        raise ValueError("need 0 <= x <= n on both sides")
    p1 = x1 / n1
    p2 = x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se_sq = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if se_sq == 0.0:
        return 0.0, 1.0
    z = (p1 - p2) / math.sqrt(se_sq)
    p = 2.0 * normal_cdf(-abs(z))
    return z, p


# ---------------------------------------------------------------------------
# differential mining
# ---------------------------------------------------------------------------


def differential(
    seqset: SequenceSet,
    target_make_model: str,
    min_len: int = 3,
    max_len: int = 4,
    top_n: int = 8,
) -> list[DiffPattern]:
    """Mine the target group's top patterns and contrast them with the rest.

    Output is sorted by left support descending, then by pattern.
    """
    target = " ".join(target_make_model.split()).upper()
    left = [s for s in seqset.sequences if s.make_model == target]
    right = [s for s in seqset.sequences if s.make_model != target]
    if not left:
        raise ValueError(f"no sequences for target make/model {target!r}")
    if not right:
        raise ValueError("no non-target sequences to compare against")

    mined = mine_frequent(left, min_len=min_len, max_len=max_len, top_n=top_n)
    n_left = {width: count_windows(left, width) for width in range(min_len, max_len + 1)}
    n_right = {width: count_windows(right, width) for width in range(min_len, max_len + 1)}

    out = []
    for pattern_idx, left_support in mined:
        width = len(pattern_idx)
        right_support = count_pattern(right, pattern_idx)
        left_norm = left_support / n_left[width]
        right_norm = right_support / n_right[width] if n_right[width] > 0 else 0.0
        if right_norm > 0:
            i_ratio = left_norm / right_norm
        else:
            i_ratio = I_RATIO_CAP
        z, p = two_prop_z(left_support, n_left[width], right_support, n_right[width])
        out.append(
            DiffPattern(
                pattern=tuple(seqset.labels[i] for i in pattern_idx),
                left_support=left_support,
                left_norm=left_norm,
                right_support=right_support,
                right_norm=right_norm,
                i_ratio=i_ratio,
                z=z,
                p=p,
            )
        )
    out.sort(key=lambda d: (-d.left_support, d.pattern))
    return out


# ---------------------------------------------------------------------------
# report formatting: norm supports at fixed 4 decimals, i-ratio rounded to 2
# and z to 1 with trailing zeros trimmed, p floored at "< 0.0001"
# ---------------------------------------------------------------------------


def format_pattern(pattern: tuple[str, ...]) -> str:
    return "(" + ", ".join(pattern) + ")"


def format_norm(value: float) -> str:
    return f"{value:.4f}"


def format_ratio(value: float) -> str:
    return repr(round(value, 2))


def format_z(value: float) -> str:
    return repr(round(value, 1))


def format_p(value: float) -> str:
    return "< 0.0001" if value < P_FLOOR else f"{value:.4f}"


DIFF_CSV_COLUMNS = (
    "pattern",
    "left_support",
    "left_norm",
    "right_support",
    "right_norm",
    "i_ratio",
    "z",
    "p",
)


def write_diff_csv(patterns: list[DiffPattern], path, bonferroni: bool = False) -> None:
    """Table-style CSV of mining results; optional Bonferroni-adjusted column."""
    columns = DIFF_CSV_COLUMNS + (("p_bonferroni",) if bonferroni else ())
    n_tests = len(patterns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for d in patterns:
            row = [
                format_pattern(d.pattern),
                str(d.left_support),
                format_norm(d.left_norm),
                str(d.right_support),
                format_norm(d.right_norm),
                format_ratio(d.i_ratio),
                format_z(d.z),
                format_p(d.p),
            ]
            if bonferroni:
                row.append(format_p(min(1.0, d.p * n_tests)))
            writer.writerow(row)
