"""Deterministic synthetic fleet generator with planted, checkable structure.

Emits vehicles.csv / maintenance.csv in the exact schemas the ingest module
consumes, plus a JSON truth manifest recording everything a test needs to
verify downstream results: realized per-cell counts, each vehicle's emitted
event order, planted low-rank component factors, and injected motif
positions.

Job counts per (vehicle, system, month) are Poisson draws whose means are a
background rate plus the planted component intensities; noiseless mode
replaces sampling with rounded means so exact-recovery tests are
deterministic. Sequence motifs are injected as contiguous runs at
deterministic per-vehicle counts chosen to hit a target fraction of the
vehicle's windows. All randomness comes from the single spec seed, so equal
specs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import normalize_system

VEHICLE_COLUMNS = (
    "Unit#", "Dept#", "Dept Desc", "Make", "Model", "Year", "Last Meter",
    "Last Fuel Date", "Purchase Cost", "Status Code", "Status Desc",
    "LTD Maintenance Cost", "LTD Fuel Cost", "LTD Fuel Gallons",
)
MAINTENANCE_COLUMNS = (
    "Job ID", "Year WO Completed", "Unit No", "Work Order No", "WO Open Date",
    "WO Completed Date", "Work Order Location", "Job Open Date", "Job Reason",
    "Job Reason Desc", "Job Open Date2", "Job Completed Date", "Job Code",
    "Job Description", "Labor Hours", "Actual Labor Cost", "Commercial Cost",
    "Part Cost", "Primary Meter", "Job Status", "Job WAC", "WACDescription",
    "Job System", "System Description", "Job Location",
)


@dataclass
class PlantedComponent:
    """Rank-one (vehicle-group x system x time) intensity bump."""

    name: str
    vehicle_weights: dict[str, float]
    system_weights: dict[str, float]
    time_profile: tuple[float, ...]
    intensity: float


@dataclass
class PlantedMotif:
    """Contiguous label run injected into one make/model's timelines."""

    make_model: str
    labels: tuple[str, ...]
    rate: float  # target fraction of length-len(labels) windows that match


@dataclass
class MarkovSpec:
    """First-order chain that replaces Poisson emission for one make/model."""

    labels: tuple[str, ...]
    transition: tuple[tuple[float, ...], ...]
    start: tuple[float, ...]
    length: int


@dataclass
class FleetSpec:
    seed: int
    vehicles: dict[str, int]
    window_start: str
    months: int
    systems: tuple[str, ...]
    background_rate: float = 0.02
    components: list[PlantedComponent] = field(default_factory=list)
    motifs: list[PlantedMotif] = field(default_factory=list)
    markov: dict[str, MarkovSpec] = field(default_factory=dict)
    purchase_years: tuple[int, ...] | None = None
    noiseless: bool = False

    def validate(self) -> None:
        if self.months < 1:
            raise ValueError("months must be >= 1")
        if self.background_rate < 0:
            raise ValueError("background_rate must be >= 0")
        if not self.vehicles:
            raise ValueError("need at least one make/model group")
        if _parse_month(self.window_start) is None:
            raise ValueError(f"bad window_start {self.window_start!r}")
        known = set(self.systems)
        for comp in self.components:
            if comp.intensity < 0:
                raise ValueError(f"component {comp.name}: negative intensity")
            if len(comp.time_profile) != self.months:
                raise ValueError(
                    f"component {comp.name}: time profile length "
                    f"{len(comp.time_profile)} != months {self.months}"
                )
            unknown = set(comp.system_weights) - known
            if unknown:
                raise ValueError(f"component {comp.name}: unknown systems {sorted(unknown)}")
        for motif in self.motifs:
            if set(motif.labels) - known:
                raise ValueError(f"motif labels outside the system vocabulary: {motif.labels}")
            width = len(motif.labels)
            if not 0 < motif.rate < 1.0 / width:
                raise ValueError(f"motif rate must be in (0, 1/{width})")
        for name, chain in self.markov.items():
            t = np.asarray(chain.transition)
            if t.shape != (len(chain.labels), len(chain.labels)):
                raise ValueError(f"markov {name}: transition shape mismatch")
            if not np.allclose(t.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError(f"markov {name}: transition rows must sum to 1")
            if set(chain.labels) - known:
                raise ValueError(f"markov {name}: labels outside the system vocabulary")


def _parse_month(value: str) -> tuple[int, int] | None:
    parts = value.split("-")
    if len(parts) != 2:
        return None
    try:
        y, m = int(parts[0]), int(parts[1])
    except ValueError:
        return None
    return (y, m) if 1 <= m <= 12 else None


def month_labels(window_start: str, months: int) -> list[str]:
    y, m = _parse_month(window_start)
    base = y * 12 + (m - 1)
    return [f"{(base + k) // 12:04d}-{(base + k) % 12 + 1:02d}" for k in range(months)]


@dataclass
class GeneratedFleet:
    vehicles_path: Path
    maintenance_path: Path
    manifest_path: Path
    manifest: dict


def _motif_count(base_len: int, width: int, rate: float) -> int:
    # solve m = rate * windows(final length) for the injection count
    raw = rate * (base_len - width + 1) / (1.0 - rate * width)
    return max(0, int(round(raw)))


def _sample_markov(chain: MarkovSpec, rng: np.random.Generator) -> list[str]:
    start = np.asarray(chain.start)
    transition = np.asarray(chain.transition)
    state = int(rng.choice(len(chain.labels), p=start / start.sum()))
    out = [chain.labels[state]]
    for _ in range(chain.length - 1):
        state = int(rng.choice(len(chain.labels), p=transition[state]))
        out.append(chain.labels[state])
    return out


def generate(spec: FleetSpec, out_dir) -> GeneratedFleet:
    """Write vehicles.csv, maintenance.csv and manifest.json under out_dir."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    labels = month_labels(spec.window_start, spec.months)
    start_y, start_m = _parse_month(spec.window_start)
    if spec.purchase_years is None:
        purchase_years = tuple(sorted({int(lbl[:4]) for lbl in labels}))
    else:
        purchase_years = spec.purchase_years

    # vehicle roster
    roster = []  # (unit, make_model, purchase_year)
    counter = 0
    for make_model, count in spec.vehicles.items():
        for _ in range(count):
            counter += 1
            unit = f"{counter:06d}"
            year = purchase_years[(counter - 1) % len(purchase_years)]
            roster.append((unit, make_model, year))

    system_index = {label: i for i, label in enumerate(spec.systems)}
    motifs_by_model: dict[str, list[PlantedMotif]] = {}
    for motif in spec.motifs:
        motifs_by_model.setdefault(motif.make_model, []).append(motif)

    cells: dict[str, int] = {}
    sequences: dict[str, list[str]] = {}
    motif_bookkeeping = [
        {"make_model": m.make_model, "labels": [normalize_system(x) for x in m.labels],
         "rate": m.rate, "injected_per_unit": {}, "positions_per_unit": {},
         "total_injected": 0}
        for m in spec.motifs
    ]
    component_units: list[dict[str, float]] = [{} for _ in spec.components]

    job_rows = []
    job_counter = 0
    for unit, make_model, purchase_year in roster:
        # per-vehicle event list: (month index, display label)
        if make_model in spec.markov:
            chain = spec.markov[make_model]
            drawn = _sample_markov(chain, rng)
            events = [
                (min(pos * spec.months // max(len(drawn), 1), spec.months - 1), lbl)
                for pos, lbl in enumerate(drawn)
            ]
        else:
            means = np.full((len(spec.systems), spec.months), float(spec.background_rate))
            for ci, comp in enumerate(spec.components):
                vw = comp.vehicle_weights.get(make_model, 0.0)
                if vw == 0.0:
                    continue
                component_units[ci][unit] = vw
                profile = np.asarray(comp.time_profile)
                for sys_label, sw in comp.system_weights.items():
                    means[system_index[sys_label]] += comp.intensity * vw * sw * profile
            if spec.noiseless:
                counts = np.rint(means).astype(np.int64)
            else:
                counts = rng.poisson(means)
            events = []
            for month in range(spec.months):
                for sys_pos, sys_label in enumerate(spec.systems):
                    events.extend([(month, sys_label)] * int(counts[sys_pos, month]))
            events.sort(key=lambda e: e[0])

        # motif injection (contiguous runs, months inherited from neighbors)
        for mi, motif in enumerate(spec.motifs):
            if motif.make_model != make_model:
                continue
            width = len(motif.labels)
            n_inject = _motif_count(len(events), width, motif.rate)
            if n_inject == 0:
                continue
            gaps = sorted(int(g) for g in rng.integers(0, len(events) + 1, size=n_inject))
            rebuilt = []
            positions = []
            gi = 0
            for pos in range(len(events) + 1):
                while gi < len(gaps) and gaps[gi] == pos:
                    month = (
                        events[pos - 1][0] if pos > 0
                        else (events[0][0] if events else 0)
                    )
                    positions.append(len(rebuilt))
                    rebuilt.extend((month, lbl) for lbl in motif.labels)
                    gi += 1
                if pos < len(events):
                    rebuilt.append(events[pos])
            events = rebuilt
            book = motif_bookkeeping[mi]
            book["injected_per_unit"][unit] = n_inject
            book["positions_per_unit"][unit] = positions
            book["total_injected"] += n_inject

        # date assignment: within a month, days ascend with list position
        per_month_seen: dict[int, int] = {}
        seq_labels = []
        for month, sys_label in events:
            slot = per_month_seen.get(month, 0)
            per_month_seen[month] = slot + 1
            day = min(slot + 1, 28)
            abs_month = start_y * 12 + (start_m - 1) + month
            date = f"{abs_month // 12:04d}-{abs_month % 12 + 1:02d}-{day:02d}"
            job_counter += 1
            job_id = f"{job_counter:07d}"
            sys_norm = normalize_system(sys_label)
            seq_labels.append(sys_norm)
            key = f"{unit}|{sys_norm}|{labels[month]}"
            cells[key] = cells.get(key, 0) + 1
            sys_no = system_index[sys_label]
            labor = round(float(rng.uniform(0.5, 8.0)), 2)
            cost = round(labor * 54.8, 2)
            job_rows.append({
                "Job ID": job_id,
                "Year WO Completed": date[:4],
                "Unit No": unit,
                "Work Order No": job_id,
                "WO Open Date": date,
                "WO Completed Date": date,
                "Work Order Location": "CODRF",
                "Job Open Date": date,
                "Job Reason": "B",
                "Job Reason Desc": "BREAKDOWN / REPAIR",
                "Job Open Date2": date,
                "Job Completed Date": date,
                "Job Code": f"{sys_no:02d}-13-000",
                "Job Description": f"REPAIR {sys_label}",
                "Labor Hours": f"{labor:.2f}",
                "Actual Labor Cost": f"${cost:,.2f}",
                "Commercial Cost": "$0",
                "Part Cost": f"${round(cost * 0.3, 2):,.2f}",
                "Primary Meter": str(int(rng.integers(1000, 99000))),
                "Job Status": "DON",
                "Job WAC": "24",
                "WACDescription": "REPAIR",
                "Job System": f"{sys_no:02d}",
                "System Description": sys_label,
                "Job Location": "CODRF",
            })
        if seq_labels:
            sequences[unit] = seq_labels

    vehicles_path = out_dir / "vehicles.csv"
    with open(vehicles_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=VEHICLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for unit, make_model, year in roster:
            make, _, model = make_model.partition(" ")
            cost = int(rng.integers(18, 95)) * 1000 + int(rng.integers(0, 1000))
            writer.writerow({
                "Unit#": unit,
                "Dept#": "19",
                "Dept Desc": "GENERAL SERVICES",
                "Make": make,
                "Model": model or "BASE",
                "Year": str(year),
                "Last Meter": str(int(rng.integers(500, 120000))),
                "Last Fuel Date": f"{year + 1}-06-15 08:30:00",
                "Purchase Cost": f"${cost:,}",
                "Status Code": "A",
                "Status Desc": "Active Unit",
                "LTD Maintenance Cost": f"${float(rng.integers(100, 9000)):,.2f}",
                "LTD Fuel Cost": f"${float(rng.integers(100, 9000)):,.2f}",
                "LTD Fuel Gallons": f"{float(rng.integers(100, 4000)):,.1f}",
            })

    maintenance_path = out_dir / "maintenance.csv"
    with open(maintenance_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MAINTENANCE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(job_rows)

    manifest = {
        "seed": spec.seed,
        "window_start": spec.window_start,
        "months": spec.months,
        "month_labels": labels,
        "systems": list(spec.systems),
        "totals": {"vehicles": len(roster), "jobs": len(job_rows)},
        "vehicles": {
            unit: {"make_model": mm, "purchase_year": year} for unit, mm, year in roster
        },
        "cells": cells,
        "sequences": sequences,
        "components": [
            {
                "name": comp.name,
                "intensity": comp.intensity,
                "vehicle_units": component_units[ci],
                "system_weights": {
                    normalize_system(k): v for k, v in comp.system_weights.items()
                },
                "time_profile": list(comp.time_profile),
                "active_months": [
                    labels[t] for t, v in enumerate(comp.time_profile) if v > 0
                ],
            }
            for ci, comp in enumerate(spec.components)
        ],
        "motifs": motif_bookkeeping,
        "markov": {
            name: {
                "labels": [normalize_system(x) for x in chain.labels],
                "transition": [list(row) for row in chain.transition],
                "start": list(chain.start),
                "length": chain.length,
            }
            for name, chain in spec.markov.items()
        },
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return GeneratedFleet(
        vehicles_path=vehicles_path,
        maintenance_path=maintenance_path,
        manifest_path=manifest_path,
        manifest=manifest,
    )


def demo_spec(seed: int = 1234) -> FleetSpec:
    """Three make/models, 60 vehicles, 48 months, planted patterns throughout.

    Plants a summer-seasonal mower component on the riding mowers, a periodic
    preventive-maintenance component on the police sedans, a slowly ramping
    brakes/exhaust wear component fleet-wide, and a (pm, tires, pm) sequence
    motif in the Charger group for the mining demo.
    """
    months = 48
    summer = tuple(1.0 if (m % 12) in (5, 6, 7) else 0.0 for m in range(months))
    pm_cycle = tuple(1.0 if m % 6 == 0 else 0.15 for m in range(months))
    ramp = tuple(m / (months - 1.0) for m in range(months))
    systems = (
        "Brakes",
        "Cab & Sheet Metal",
        "Electrical & Lighting",
        "Engine / Motor Systems Group",
        "Exhaust",
        "Mowing Blades",
        "PM Service All Levels",
        "Tires, Tubes, Liners & Valves",
    )
    return FleetSpec(
        seed=seed,
        vehicles={
            "DODGE CHARGER": 30,
            "FORD CROWN VICTORIA": 20,
            "HUSTLER X-ONE": 10,
        },
        window_start="2013-01",
        months=months,
        systems=systems,
        background_rate=0.03,
        components=[
            PlantedComponent(
                name="summer-mower",
                vehicle_weights={"HUSTLER X-ONE": 1.0},
                system_weights={
                    "Mowing Blades": 1.0,
                    "Tires, Tubes, Liners & Valves": 0.8,
                },
                time_profile=summer,
                intensity=2.5,
            ),
            PlantedComponent(
                name="police-pm",
                vehicle_weights={"DODGE CHARGER": 1.0, "FORD CROWN VICTORIA": 0.9},
                system_weights={"PM Service All Levels": 1.0},
                time_profile=pm_cycle,
                intensity=0.8,
            ),
            PlantedComponent(
                name="wear-ramp",
                vehicle_weights={
                    "DODGE CHARGER": 1.0,
                    "FORD CROWN VICTORIA": 1.0,
                    "HUSTLER X-ONE": 0.6,
                },
                system_weights={"Brakes": 1.0, "Exhaust": 0.4},
                time_profile=ramp,
                intensity=0.5,
            ),
        ],
        motifs=[
            PlantedMotif(
                make_model="DODGE CHARGER",
                labels=(
                    "PM Service All Levels",
                    "Tires, Tubes, Liners & Valves",
                    "PM Service All Levels",
                ),
                rate=0.08,
            )
        ],
        purchase_years=(2013, 2014),
    )
