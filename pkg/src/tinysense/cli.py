"""Command-line workflow: synth -> train -> quantize -> run, plus
inspection commands (ingest, split, features, test, export, bench).

Exit codes are a stable contract for CI: 0 success, 1 validation or
user error, 2 an acceptance bar failed (test accuracy below 90%, the
budget exceeded, or quantization costing more than 2 accuracy points).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .dataset import SplitSpec, build_dataset, read_dataset_dir, split, write_dataset_dir
from .dsp import featurize
from .model import EvalReport, evaluate, evaluate_probs, forward_batch, train
from .project import (
    ProjectConfig,
    load_config,
    load_model_json,
    save_model_json,
)
from .quant import (
    FLASH_BUDGET,
    RAM_BUDGET,
    budget_report,
    calibrate,
    q_forward_batch,
    quantize,
)
from .runtime import (
    BlobError,
    StreamClassifier,
    export_blob,
    format_event,
    load_blob,
)

ACCURACY_BAR = 0.90
QUANT_DROP_LIMIT = 0.02     # max tolerated accuracy loss, absolute

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_BAR_FAILED = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; our contract reserves 2 for
    # acceptance-bar failures, so turn usage problems into exit 1.
    def error(self, message):
        raise CliError(message)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def render_eval_text(rep: EvalReport) -> str:
    lines = [
        f"accuracy        {rep.accuracy:.4f}  "
        f"({rep.total - rep.rejected_count} accepted, {rep.rejected_count} rejected, "
        f"{rep.total} total)",
        f"min_confidence  {rep.min_confidence:.2f}",
        "",
    ]
    width = max(len(lab) for lab in rep.labels)
    width = max(width, len("label"))
    lines.append(f"{'label':<{width}}  precision  recall  support  rejected")
    for i, lab in enumerate(rep.labels):
        lines.append(
            f"{lab:<{width}}  {rep.precision[i]:>9.4f}  {rep.recall[i]:>6.4f}"
            f"  {rep.support[i]:>7d}  {rep.rejected_per_class[i]:>8d}"
        )
    lines.append("")
    lines.append("confusion (rows true, cols predicted, accepted only):")
    header = " " * width + "  " + "  ".join(f"{lab:>{width}}" for lab in rep.labels)
    lines.append(header)
    for i, lab in enumerate(rep.labels):
        row = "  ".join(f"{int(v):>{width}d}" for v in rep.confusion[i])
        lines.append(f"{lab:<{width}}  {row}")
    return "\n".join(lines) + "\n"


def render_budget_text(rep) -> str:
    mark_flash = "ok" if rep.flash_bytes <= FLASH_BUDGET else "OVER"
    mark_ram = "ok" if rep.ram_bytes <= RAM_BUDGET else "OVER"
    lines = [
        f"flash  {rep.flash_bytes:>9d} / {FLASH_BUDGET} bytes  {mark_flash}",
        f"ram    {rep.ram_bytes:>9d} /  {RAM_BUDGET} bytes  {mark_ram}",
        f"fits   {'yes' if rep.fits else 'no'}",
        "",
    ]
    for name, val in rep.breakdown.items():
        lines.append(f"  {name:<20} {val:>9d}")
    return "\n".join(lines) + "\n"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _load_project(args) -> ProjectConfig:
    if not args.config:
        raise CliError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            split=SplitSpec(train_fraction=cfg.split.train_fraction, seed=args.seed),
            train=dataclasses.replace(cfg.train, seed=args.seed),
        )
    return cfg


def _build_splits(cfg: ProjectConfig):
    recs = read_dataset_dir(cfg.dataset_root, cfg.kind)
    full = build_dataset(recs, cfg.kind)
    train_ds, test_ds = split(full, cfg.split)
    return full, train_ds, test_ds


def _check_layout(cfg: ProjectConfig, layout_id: str) -> None:
    if layout_id != cfg.layout_id():
        raise ValueError(
            f"kind mismatch: model was built with layout {layout_id!r} but the "
            f"config produces {cfg.layout_id()!r}"
        )


def cmd_synth(args) -> int:
    n = write_dataset_dir(args.out, args.kind, args.per_class, args.seed)
    print(f"wrote {n} recordings under {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _load_project(args)
    recs = read_dataset_dir(cfg.dataset_root, cfg.kind)
    full = build_dataset(recs, cfg.kind)
    print(f"dataset: kind={full.kind} labels={len(full.labels)} "
          f"recordings={len(recs)} windows={len(full.windows)}")
    for lab in full.labels:
        n_rec = sum(1 for r in recs if r.label == lab)
        print(f"  {lab}: {n_rec} recordings, {full.count(lab)} windows")
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _load_project(args)
    full, train_ds, test_ds = _build_splits(cfg)
    print(f"split: fraction={cfg.split.train_fraction} seed={cfg.split.seed}")
    for lab in full.labels:
        print(f"  {lab}: {train_ds.count(lab)} train / {test_ds.count(lab)} test")
    if args.out:
        doc = {
            "train": [[w.origin[0], w.origin[1]] for w in train_ds.windows],
            "test": [[w.origin[0], w.origin[1]] for w in test_ds.windows],
        }
        _write_json(Path(args.out), doc)
        print(f"membership written to {args.out}")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_project(args)
    recs = read_dataset_dir(cfg.dataset_root, cfg.kind)
    full = build_dataset(recs, cfg.kind)
    fs = featurize(full, cfg.dsp, cfg.sample_rate)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = Path(args.out) if args.out else cfg.out_dir / "features.csv"
    with open(out_csv, "w", encoding="utf-8", newline="\n") as fh:
        for row, yi in zip(fs.X, fs.y):
            fh.write(",".join(_fmt_float(v) for v in row))
            fh.write(f",{fs.labels[yi]}\n")
    meta = {
        "layout_id": fs.layout_id,
        "labels": fs.labels,
        "rows": int(fs.X.shape[0]),
        "columns": int(fs.X.shape[1]),
        "mean": [float(v) for v in fs.mean],
        "std": [float(v) for v in fs.std],
    }
    _write_json(out_csv.with_suffix(".meta.json"), meta)
    print(f"features: {fs.X.shape[0]} rows x {fs.X.shape[1]} columns -> {out_csv}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_project(args)
    _, train_ds, test_ds = _build_splits(cfg)
    fs_train = featurize(train_ds, cfg.dsp, cfg.sample_rate)
    fs_test = featurize(test_ds, cfg.dsp, cfg.sample_rate)
    params, history = train(fs_train.X, fs_train.y, fs_train.labels, cfg.train,
                            hidden=cfg.hidden)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_model_json(params, fs_train.layout_id, cfg.out_dir / "model.json")
    with open(cfg.out_dir / "history.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss,accuracy\n")
        for h in history:
            fh.write(f"{h.epoch},{_fmt_float(h.loss)},{_fmt_float(h.accuracy)}\n")

    train_rep = evaluate(params, fs_train.X, fs_train.y,
                         cfg.train.confidence_threshold)
    test_rep = evaluate(params, fs_test.X, fs_test.y, cfg.runtime.min_confidence)
    _write_json(cfg.out_dir / "train_report.json", {
        "train": train_rep.to_dict(),
        "test": test_rep.to_dict(),
        "epochs": cfg.train.epochs,
        "final_training_accuracy": history[-1].accuracy,
        "accuracy_bar": ACCURACY_BAR,
    })
    text = (f"== training set at confidence {cfg.train.confidence_threshold:.2f} ==\n"
            + render_eval_text(train_rep)
            + f"\n== test set at confidence {cfg.runtime.min_confidence:.2f} ==\n"
            + render_eval_text(test_rep))
    (cfg.out_dir / "train_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    if test_rep.accuracy < ACCURACY_BAR:
        print(f"FAIL: test accuracy {test_rep.accuracy:.4f} below bar {ACCURACY_BAR}",
              file=sys.stderr)
        return EXIT_BAR_FAILED
    print(f"test accuracy {test_rep.accuracy:.4f} meets the {ACCURACY_BAR} bar")
    return EXIT_OK


def cmd_test(args) -> int:
    cfg = _load_project(args)
    model_path = Path(args.model) if args.model else cfg.out_dir / "model.json"
    params, layout_id = load_model_json(model_path)
    _check_layout(cfg, layout_id)
    _, _, test_ds = _build_splits(cfg)
    fs_test = featurize(test_ds, cfg.dsp, cfg.sample_rate)
    rep = evaluate(params, fs_test.X, fs_test.y, cfg.runtime.min_confidence)
    text = render_eval_text(rep)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.out_dir / "test_report.json", rep.to_dict())
    (cfg.out_dir / "test_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    if rep.accuracy < ACCURACY_BAR:
        print(f"FAIL: test accuracy {rep.accuracy:.4f} below bar {ACCURACY_BAR}",
              file=sys.stderr)
        return EXIT_BAR_FAILED
    return EXIT_OK


def _quantized_from_model(cfg: ProjectConfig, params, fs_train):
    ranges = calibrate(params, fs_train.X)
    return quantize(params, ranges)


def cmd_quantize(args) -> int:
    cfg = _load_project(args)
    model_path = Path(args.model) if args.model else cfg.out_dir / "model.json"
    params, layout_id = load_model_json(model_path)
    _check_layout(cfg, layout_id)
    _, train_ds, test_ds = _build_splits(cfg)
    fs_train = featurize(train_ds, cfg.dsp, cfg.sample_rate)
    fs_test = featurize(test_ds, cfg.dsp, cfg.sample_rate)
    qm = _quantized_from_model(cfg, params, fs_train)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    blob_path = Path(args.out) if args.out else cfg.out_dir / "model.tnym"
    flash = export_blob(qm, cfg.dsp, cfg.runtime, blob_path)
    budget = budget_report(qm, cfg.dsp, cfg.runtime)

    float_rep = evaluate(params, fs_test.X, fs_test.y, cfg.runtime.min_confidence)
    q_probs = q_forward_batch(qm, fs_test.X)
    q_rep = evaluate_probs(q_probs, fs_test.y, qm.labels, cfg.runtime.min_confidence)
    agreement = float(np.mean(q_probs.argmax(axis=1)
                              == forward_batch(params, fs_test.X).argmax(axis=1)))
    drop = float_rep.accuracy - q_rep.accuracy

    _write_json(cfg.out_dir / "budget.json", budget.to_dict())
    (cfg.out_dir / "budget.txt").write_text(render_budget_text(budget),
                                            encoding="utf-8")
    _write_json(cfg.out_dir / "quant_report.json", {
        "blob": str(blob_path.name),
        "flash_bytes": flash,
        "float_accuracy": float_rep.accuracy,
        "quantized_accuracy": q_rep.accuracy,
        "accuracy_drop": drop,
        "argmax_agreement": agreement,
        "budget": budget.to_dict(),
    })
    print(f"blob: {blob_path} ({flash} bytes)")
    print(render_budget_text(budget), end="")
    print(f"float accuracy     {float_rep.accuracy:.4f}")
    print(f"quantized accuracy {q_rep.accuracy:.4f}  (drop {drop:+.4f})")
    print(f"argmax agreement   {agreement:.4f}")
    if not budget.fits:
        print("FAIL: model does not fit the device budget", file=sys.stderr)
        return EXIT_BAR_FAILED
    if drop > QUANT_DROP_LIMIT:
        print(f"FAIL: quantization drop {drop:.4f} exceeds {QUANT_DROP_LIMIT}",
              file=sys.stderr)
        return EXIT_BAR_FAILED
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_project(args)
    model_path = Path(args.model) if args.model else cfg.out_dir / "model.json"
    params, layout_id = load_model_json(model_path)
    _check_layout(cfg, layout_id)
    _, train_ds, _ = _build_splits(cfg)
    fs_train = featurize(train_ds, cfg.dsp, cfg.sample_rate)
    qm = _quantized_from_model(cfg, params, fs_train)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    blob_path = Path(args.out) if args.out else cfg.out_dir / "model.tnym"
    flash = export_blob(qm, cfg.dsp, cfg.runtime, blob_path)
    print(f"wrote {flash} bytes to {blob_path}")
    return EXIT_OK


def _read_stream_samples(args, kind: str) -> np.ndarray:
    src = args.input
    if src == "-":
        text = sys.stdin.read()
        if kind == "gesture":
            rows = [[float(v) for v in line.split(",")]
                    for line in text.splitlines() if line.strip()]
            arr = np.asarray(rows, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ValueError("gesture stdin rows must be x,y,z")
            return arr.T
        vals = [float(line) for line in text.splitlines() if line.strip()]
        return np.asarray(vals, dtype=np.float64)[np.newaxis, :]
    path = Path(src)
    if path.suffix == ".wav":
        if kind != "keyword":
            raise ValueError("kind mismatch: WAV input feeds a keyword blob")
        rec = ds_mod.load_wav_recording(path, "stream")
        if rec.sample_rate != ds_mod.KEYWORD_SAMPLE_RATE:
            raise ValueError(
                f"expected {int(ds_mod.KEYWORD_SAMPLE_RATE)} Hz audio, "
                f"got {int(rec.sample_rate)}"
            )
        return rec.samples
    if path.suffix == ".csv":
        if kind != "gesture":
            raise ValueError("kind mismatch: CSV input feeds a gesture blob")
        rec = ds_mod.load_csv_recording(path, "stream", ds_mod.GESTURE_SAMPLE_RATE)
        return rec.samples
    raise ValueError(f"unsupported input {src!r} (expected .csv, .wav or '-')")


def cmd_run(args) -> int:
    qm, dsp_cfg, runtime_cfg = load_blob(args.blob)
    samples = _read_stream_samples(args, runtime_cfg.kind)
    hook = None
    if args.verbose:
        labels = qm.labels

        def hook(end_index, smoothed):
            probs = " ".join(f"{lab}={p:.4f}" for lab, p in zip(labels, smoothed))
            print(f"# {end_index}\t{probs}")

    sc = StreamClassifier(qm, dsp_cfg, runtime_cfg, window_hook=hook)
    chunk = args.chunk if args.chunk is not None else sc.stride
    if chunk < 1:
        raise CliError("--chunk must be >= 1")
    chunk = min(chunk, sc.window_len)
    n = samples.shape[1]
    for start in range(0, n, chunk):
        for ev in sc.push_samples(samples[:, start:start + chunk]):
            print(format_event(ev))
    return EXIT_OK


def cmd_bench(args) -> int:
    qm, dsp_cfg, runtime_cfg = load_blob(args.blob)
    rep = budget_report(qm, dsp_cfg, runtime_cfg)
    print(render_budget_text(rep), end="")
    return EXIT_OK if rep.fits else EXIT_BAR_FAILED


def build_parser() -> _Parser:
    parser = _Parser(prog="tinysense",
                     description="Offline gesture/keyword TinyML pipeline")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="project config JSON")
    common.add_argument("--seed", type=int, default=None,
                        help="override split and training seeds")
    common.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled dataset")
    p.add_argument("--kind", choices=["gesture", "keyword"], required=True)
    p.add_argument("--out", required=True, help="dataset root to write")
    p.add_argument("--per-class", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    for name, func, extra in [
        ("ingest", cmd_ingest, None),
        ("split", cmd_split, "membership JSON to write"),
        ("features", cmd_features, "feature CSV to write"),
    ]:
        p = sub.add_parser(name, parents=[common])
        if extra:
            p.add_argument("--out", default=None, help=extra)
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common],
                       help="split, featurize, train and gate on accuracy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", parents=[common],
                       help="evaluate a trained model on the test split")
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("quantize", parents=[common],
                       help="calibrate, quantize, export and gate on budget/drop")
    p.add_argument("--model", default=None)
    p.add_argument("--out", default=None, help="blob path to write")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("export", parents=[common],
                       help="quantize and write the blob without gates")
    p.add_argument("--model", default=None)
    p.add_argument("--out", default=None, help="blob path to write")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run", parents=[common],
                       help="stream samples through a blob and print events")
    p.add_argument("--blob", required=True)
    p.add_argument("--input", required=True, help=".csv, .wav or '-' for stdin")
    p.add_argument("--chunk", type=int, default=None,
                   help="samples per push (default: one stride)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common],
                       help="budget report for a blob; exit 2 if it does not fit")
    p.add_argument("--blob", required=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth" and args.seed is None:
            args.seed = 42
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except (ValueError, OSError, BlobError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR


def entry() -> None:
    sys.exit(main())
