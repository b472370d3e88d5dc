"""fleetmaint command line: synth, tensorize, parafac, report, seqmine,
train, eval, predict, and the end-to-end pipeline demo.

Every randomized step takes --seed (default 1234). A --config file of
``key = value`` lines (keys are long flag names with dashes or underscores)
overrides the corresponding flags. Failures print one machine-parseable
``<category>: <message>`` line to stderr and exit nonzero: 2 config-error,
3 io-error, 4 data-error, 1 internal-error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ingest import (
    DataError,
    TensorizeSpec,
    build_tensor,
    parse_maintenance,
    parse_vehicles,
    write_discard_summary,
)
from .lstm import (
    LstmConfig,
    SeqModel,
    perplexity,
    predict_next,
    split_by_vehicle,
    train as train_lstm,
    unigram_baseline,
)
from .parafac import AlsOptions, cp_als, load_model, save_model
from .report import export_component_reports
from .seqmine import differential, extract_sequences, write_diff_csv
from .synth import (
    FleetSpec,
    MarkovSpec,
    PlantedComponent,
    PlantedMotif,
    demo_spec,
    generate,
    month_labels,
)
from .tensor import load_tensor, save_tensor

DEFAULT_SEED = 1234


class ConfigError(ValueError):
    """Bad flags, bad config file, or an invalid spec file."""


def fleet_spec_from_json(payload: dict) -> FleetSpec:
    try:
        components = [
            PlantedComponent(
                name=c["name"],
                vehicle_weights=dict(c["vehicle_weights"]),
                system_weights=dict(c["system_weights"]),
                time_profile=tuple(c["time_profile"]),
                intensity=float(c["intensity"]),
            )
            for c in payload.get("components", [])
        ]
        motifs = [
            PlantedMotif(
                make_model=m["make_model"],
                labels=tuple(m["labels"]),
                rate=float(m["rate"]),
            )
            for m in payload.get("motifs", [])
        ]
        markov = {
            name: MarkovSpec(
                labels=tuple(c["labels"]),
                transition=tuple(tuple(row) for row in c["transition"]),
                start=tuple(c["start"]),
                length=int(c["length"]),
            )
            for name, c in payload.get("markov", {}).items()
        }
        return FleetSpec(
            seed=int(payload["seed"]),
            vehicles={k: int(v) for k, v in payload["vehicles"].items()},
            window_start=payload["window_start"],
            months=int(payload["months"]),
            systems=tuple(payload["systems"]),
            background_rate=float(payload.get("background_rate", 0.02)),
            components=components,
            motifs=motifs,
            markov=markov,
            purchase_years=(
                tuple(int(y) for y in payload["purchase_years"])
                if "purchase_years" in payload
                else None
            ),
            noiseless=bool(payload.get("noiseless", False)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed fleet spec: {exc}") from exc


def _apply_config_file(args: argparse.Namespace, parser_types: dict[str, object]) -> None:
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        dest = key.strip().replace("-", "_")
        if dest not in parser_types:
            raise ConfigError(f"{path}:{line_no}: unknown option {key.strip()!r}")
        caster = parser_types[dest] or str
        try:
            setattr(args, dest, caster(value.strip()))
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_no}: bad value for {key.strip()!r}: {exc}")


def _types_of(parser: argparse.ArgumentParser) -> dict[str, object]:
    return {
        action.dest: action.type
        for action in parser._actions
        if action.dest not in ("help",)
    }


def _load_tables(args):
    vehicles = parse_vehicles(args.vehicles)
    maintenance, rejects = parse_maintenance(args.maintenance)
    if rejects:
        print(f"note: {len(rejects)} rejected maintenance rows", file=sys.stderr)
    return vehicles, maintenance


def _tensorize_spec(args) -> TensorizeSpec:
    return TensorizeSpec(
        time_mode=args.time_mode,
        granularity=args.granularity,
        window_start=args.window_start,
        window_end=args.window_end,
        lifetime_horizon_years=args.horizon,
        purchase_year_floor=args.year_floor,
    )


def _lstm_config(args) -> LstmConfig:
    return LstmConfig(
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        layers=args.layers,
        dropout_keep=args.dropout_keep,
        bptt_steps=args.bptt_steps,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        lr_constant_epochs=args.lr_constant_epochs,
        lr_decay=args.lr_decay,
        grad_clip=args.grad_clip,
        seed=args.seed,
    )


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.spec:
        payload = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        spec = fleet_spec_from_json(payload)
    else:
        spec = demo_spec(seed=args.seed)
    fleet = generate(spec, args.out)
    print(f"wrote {fleet.vehicles_path}")
    print(f"wrote {fleet.maintenance_path}")
    print(f"wrote {fleet.manifest_path}")
    return 0


def cmd_tensorize(args) -> int:
    vehicles, maintenance = _load_tables(args)
    build = build_tensor(vehicles, maintenance, _tensorize_spec(args))
    save_tensor(build.tensor, args.out)
    if args.discards:
        write_discard_summary(build, args.discards)
        print(f"wrote {args.discards}")
    print(f"wrote {args.out} dims={build.tensor.dims} placed={build.placed}")
    return 0


def cmd_parafac(args) -> int:
    tensor = load_tensor(args.tensor)
    opts = AlsOptions(
        rank=args.rank,
        max_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
        n_restarts=args.restarts,
    )
    model = cp_als(tensor, opts)
    save_model(model, args.out)
    for warning in model.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(
        f"wrote {args.out} rank={model.rank} fit={model.fit:.6f} "
        f"iterations={model.iterations} converged={model.converged}"
    )
    if args.report_dir:
        written = export_component_reports(model, args.report_dir, svg=args.format != "csv")
        print(f"wrote {len(written)} report files under {args.report_dir}")
    return 0


def cmd_report(args) -> int:
    model = load_model(args.model)
    components = None if args.component == "all" else [int(args.component)]
    written = export_component_reports(model, args.out, components, svg=args.format != "csv")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_seqmine(args) -> int:
    vehicles, maintenance = _load_tables(args)
    seqset, rejects = extract_sequences(maintenance, vehicles)
    if rejects:
        print(f"note: {len(rejects)} maintenance rows had unknown vehicles", file=sys.stderr)
    patterns = differential(
        seqset,
        args.target,
        min_len=args.min_len,
        max_len=args.max_len,
        top_n=args.top_n,
    )
    write_diff_csv(patterns, args.out, bonferroni=args.bonferroni)
    print(f"wrote {args.out} patterns={len(patterns)}")
    return 0


def _split_label_lists(seqset, seed):
    lists = seqset.as_label_lists()
    return split_by_vehicle(lists, seed=seed)


def cmd_train(args) -> int:
    vehicles, maintenance = _load_tables(args)
    seqset, _ = extract_sequences(maintenance, vehicles)
    train_set, valid_set, _ = _split_label_lists(seqset, args.seed)
    model = train_lstm(train_set, valid_set, _lstm_config(args))
    model.save(args.out)
    best = min(model.history["valid_perplexity"]) if model.history["valid_perplexity"] else None
    print(f"wrote {args.out} vocab={model.vocab.size} valid_perplexity={best}")
    return 0


def cmd_eval(args) -> int:
    model = SeqModel.load(args.model)
    vehicles, maintenance = _load_tables(args)
    seqset, _ = extract_sequences(maintenance, vehicles)
    train_set, valid_set, test_set = _split_label_lists(seqset, args.seed)
    chosen = {"train": train_set, "valid": valid_set, "test": test_set,
              "all": seqset.as_label_lists()}[args.split]
    lstm_ppl = perplexity(model, chosen)
    baseline = unigram_baseline(train_set)
    baseline_ppl = perplexity(baseline, chosen)
    payload = {
        "split": args.split,
        "sequences": len(chosen),
        "lstm_perplexity": lstm_ppl,
        "unigram_perplexity": baseline_ppl,
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    model = SeqModel.load(args.model)
    prefix = [p for p in (s.strip() for s in args.prefix.split(",")) if p] if args.prefix else []
    ranked = predict_next(model, prefix, top_k=args.top_k)
    for label, prob in ranked:
        print(f"{prob:.6f}\t{label}")
    return 0


def cmd_pipeline(args) -> int:
    if not args.demo:
        raise ConfigError("pipeline currently supports --demo only")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = demo_spec(seed=args.seed)
    fleet = generate(spec, out / "data")

    vehicles = parse_vehicles(fleet.vehicles_path)
    maintenance, rejects = parse_maintenance(fleet.maintenance_path)
    labels = month_labels(spec.window_start, spec.months)
    tspec = TensorizeSpec(window_start=labels[0], window_end=labels[-1])
    build = build_tensor(vehicles, maintenance, tspec)
    save_tensor(build.tensor, out / "tensor.txt")
    write_discard_summary(build, out / "discards.json")
    conserved = build.tensor.data.sum() + sum(build.discards.values()) == len(maintenance)

    opts = AlsOptions(rank=5, max_iters=300, tol=1e-8, seed=args.seed, n_restarts=2)
    cp_model = cp_als(build.tensor, opts)
    save_model(cp_model, out / "cp_model.txt")
    export_component_reports(cp_model, out / "reports")

    seqset, _ = extract_sequences(maintenance, vehicles)
    patterns = differential(seqset, "DODGE CHARGER", top_n=8)
    write_diff_csv(patterns, out / "seqmine.csv")

    train_set, valid_set, test_set = _split_label_lists(seqset, args.seed)
    cfg = LstmConfig(
        embed_dim=16, hidden_dim=32, layers=1, dropout_keep=0.9,
        bptt_steps=20, batch_size=8, epochs=6, lr=1.0,
        lr_constant_epochs=4, lr_decay=0.7, seed=args.seed,
    )
    seq_model = train_lstm(train_set, valid_set, cfg)
    seq_model.save(out / "seq_model.txt")
    lstm_ppl = perplexity(seq_model, test_set)
    baseline_ppl = perplexity(unigram_baseline(train_set), test_set)

    metrics = {
        "seed": args.seed,
        "jobs": len(maintenance),
        "rejected_rows": len(rejects),
        "tensor_dims": list(build.tensor.dims),
        "tensor_sum": build.tensor.data.sum(),
        "discards": dict(sorted(build.discards.items())),
        "conservation_ok": bool(conserved),
        "cp_fit": cp_model.fit,
        "cp_iterations": cp_model.iterations,
        "cp_converged": cp_model.converged,
        "top_pattern": list(patterns[0].pattern),
        "top_pattern_i_ratio": patterns[0].i_ratio,
        "top_pattern_p": patterns[0].p,
        "lstm_test_perplexity": lstm_ppl,
        "unigram_test_perplexity": baseline_ppl,
        "lstm_beats_unigram": bool(lstm_ppl < baseline_ppl),
    }
    with open(out / "metrics.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"pipeline demo complete under {out}")
    print(f"  conservation: {'ok' if conserved else 'FAILED'}")
    print(f"  tensor: dims={build.tensor.dims} sum={build.tensor.data.sum():.0f}")
    print(f"  parafac: fit={cp_model.fit:.4f} iters={cp_model.iterations}")
    print(f"  top pattern: {patterns[0].pattern} i_ratio={patterns[0].i_ratio:.2f}")
    print(f"  lstm test perplexity: {lstm_ppl:.4f} (unigram {baseline_ppl:.4f})")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetmaint",
        description="Fleet maintenance analytics: tensors, PARAFAC, sequence mining, LSTM.",
    )
    parser.add_argument("--version", action="version", version=f"fleetmaint {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help="seed for randomized steps (default %(default)s)")
        p.add_argument("--config", type=str, default=None,
                       help="key = value file; values override flags")

    p = sub.add_parser("synth", help="generate a synthetic fleet")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", type=str, default=None, help="fleet spec JSON (default: demo spec)")
    add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tensorize", help="build the job-count tensor from CSVs")
    p.add_argument("--vehicles", required=True)
    p.add_argument("--maintenance", required=True)
    p.add_argument("--time-mode", choices=("absolute", "lifetime"), default="absolute")
    p.add_argument("--granularity", choices=("month", "year"), default="month")
    p.add_argument("--window-start", default="2010-01")
    p.add_argument("--window-end", default=None)
    p.add_argument("--horizon", type=int, default=8, help="lifetime horizon in years")
    p.add_argument("--year-floor", type=int, default=2010, help="purchase-year floor")
    p.add_argument("--out", required=True, help="tensor output path")
    p.add_argument("--discards", default=None, help="discard summary JSON path")
    add_common(p)
    p.set_defaults(func=cmd_tensorize)

    p = sub.add_parser("parafac", help="CP-ALS factorization of a tensor file")
    p.add_argument("--tensor", required=True)
    p.add_argument("--rank", type=int, default=25)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--report-dir", default=None, help="also export per-component reports")
    p.add_argument("--format", choices=("csv", "svg"), default="svg",
                   help="report format: csv only, or csv plus svg charts")
    add_common(p)
    p.set_defaults(func=cmd_parafac)

    p = sub.add_parser("report", help="export factor loading reports for a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--component", default="all", help="1-based component or 'all'")
    p.add_argument("--format", choices=("csv", "svg"), default="svg")
    p.add_argument("--out", required=True, help="output directory")
    add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("seqmine", help="differential sequence mining for a make/model")
    p.add_argument("--vehicles", required=True)
    p.add_argument("--maintenance", required=True)
    p.add_argument("--target", required=True, help='target make/model, e.g. "DODGE CHARGER"')
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=4)
    p.add_argument("--top-n", type=int, default=8)
    p.add_argument("--bonferroni", action="store_true",
                   help="append a Bonferroni-adjusted p column")
    p.add_argument("--out", required=True, help="CSV output path")
    add_common(p)
    p.set_defaults(func=cmd_seqmine)

    def add_lstm_flags(p):
        p.add_argument("--embed-dim", type=int, default=32)
        p.add_argument("--hidden-dim", type=int, default=64)
        p.add_argument("--layers", type=int, default=2)
        p.add_argument("--dropout-keep", type=float, default=0.75)
        p.add_argument("--bptt-steps", type=int, default=20)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--lr", type=float, default=1.0)
        p.add_argument("--lr-constant-epochs", type=int, default=6)
        p.add_argument("--lr-decay", type=float, default=0.7)
        p.add_argument("--grad-clip", type=float, default=5.0)

    p = sub.add_parser("train", help="train the LSTM next-job model")
    p.add_argument("--vehicles", required=True)
    p.add_argument("--maintenance", required=True)
    p.add_argument("--out", required=True, help="model output path")
    add_lstm_flags(p)
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity of a trained model on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--vehicles", required=True)
    p.add_argument("--maintenance", required=True)
    p.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="rank likely next jobs after a prefix")
    p.add_argument("--model", required=True)
    p.add_argument("--prefix", default="", help="comma-separated system labels")
    p.add_argument("--top-k", type=int, default=5)
    add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pipeline", help="end-to-end demo: synth through eval")
    p.add_argument("--demo", action="store_true", help="run the built-in demo fleet")
    p.add_argument("--out", required=True, help="output directory")
    add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        sub_actions = parser._subparsers._group_actions[0]  # type: ignore[union-attr]
        subparser = sub_actions.choices[args.command]
        _apply_config_file(args, _types_of(subparser))
        return args.func(args)
    except ConfigError as exc:
        print(f"config-error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 3
    except (DataError, ValueError) as exc:
        print(f"data-error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"internal-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
