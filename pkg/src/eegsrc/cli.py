"""Command-line entry point for reproducible data validation, training,
classification, and evaluation runs.

Configuration is a flat key-value JSON file; command-line flags override
config keys, which override the built-in defaults (precedence:
flags > --config file > --preset > defaults).  Every run is deterministic
given its effective configuration: all randomness is seeded from it, and
artifacts land under ``<output_dir>/run-<config-hash>/`` so a rerun with
the same configuration rewrites identical reports.

Exit codes: 0 success, 1 validation/data error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import dataset as ds
from .classifier import (
    SrcModel,
    classify,
    load_model,
    save_model,
    train_model,
)
from .dict_learning import LearnConfig, LearnError
from .evaluation import (
    CSV_HEADER,
    case_report_csv_rows,
    case_report_to_dict,
    noise_sweep,
    run_case,
    summary_table,
    sweep_report_csv_rows,
    sweep_report_to_dict,
    write_csv,
    write_json,
)
from .sparse_coding import CodingConfig, CodingError, Dictionary

DEFAULT_SNR_GRID = [float(s) for s in range(-20, 21, 2)]

DEFAULTS: dict = {
    "data_dir": None,
    "output_dir": "runs",
    "case": "I",
    "cases": None,
    "algorithm": "cbwrlsu",
    "n_atoms": 1024,
    "sparsity": 10,
    "residual_tol": 0.0,
    "stop_rule": "fixed_k",
    "passes": 3,
    "init_strategy": "data_columns",
    "init_seed": 0,
    "seed": 0,
    "decimation": 8,
    "k_folds": 10,
    "segment_len": 4097,
    "zero_mean": False,
    "mod_iters": 20,
    "weight_floor": 0.0,
    "c_inverse_init_scale": 0.01,
    "snr_grid": DEFAULT_SNR_GRID,
    "synth_classes": 3,
    "synth_signal_len": 64,
    "synth_atoms": 128,
    "synth_sparsity": 5,
    "synth_train": 100,
    "synth_test": 50,
    "synth_snr_db": 0.0,
}

EXPECTED_LAYOUT = """\
Expected Bonn data layout under --data-dir (acquire the archive yourself):
  <data-dir>/Z000.txt .. Z099.txt   (subset A; or in a Z/ or A/ subdirectory)
  <data-dir>/O000.txt .. O099.txt   (subset B)
  <data-dir>/N000.txt .. N099.txt   (subset C)
  <data-dir>/F000.txt .. F099.txt   (subset D)
  <data-dir>/S000.txt .. S099.txt   (subset E)
Each file: one ASCII integer sample per line, exactly 4097 lines."""


def load_preset(name: str) -> dict:
    path = resources.files("eegsrc.presets").joinpath(f"{name}.json")
    return json.loads(path.read_text())


def build_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "preset", None):
        cfg.update(load_preset(args.preset))
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text()))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg.get("cases") is None and getattr(args, "all_cases", False):
        cfg["cases"] = list(ds.CASE_IDS)
    return cfg


def learn_config(cfg: dict) -> LearnConfig:
    return LearnConfig(
        n_atoms=int(cfg["n_atoms"]),
        coding=CodingConfig(
            max_sparsity=int(cfg["sparsity"]),
            residual_tol=float(cfg["residual_tol"]),
            stop_rule=cfg["stop_rule"],
        ),
        passes=int(cfg["passes"]),
        init_strategy=cfg["init_strategy"],
        init_seed=int(cfg["init_seed"]),
        c_inverse_init_scale=float(cfg["c_inverse_init_scale"]),
        weight_floor=float(cfg["weight_floor"]),
    )


def run_dir(cfg: dict) -> Path:
    canonical = json.dumps(cfg, sort_keys=True, default=str)
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:12]
    path = Path(cfg["output_dir"]) / f"run-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    return path


def load_subsets(cfg: dict, needed) -> dict:
    manifest = None
    manifest_path = Path(cfg["data_dir"]) / "manifest.json"
    if manifest_path.is_file():
        manifest = ds.load_manifest(manifest_path)
    subsets = {}
    for sid in needed:
        em = ds.load_bonn_subset(
            cfg["data_dir"], sid, segment_len=int(cfg["segment_len"]), manifest=manifest
        )
        em = ds.decimate(em, int(cfg["decimation"]))
        if cfg["zero_mean"]:
            em = ds.zero_mean(em)
        subsets[sid] = em
    return subsets


def subsets_for_cases(cases) -> list[str]:
    needed: set[str] = set()
    for cid in cases:
        for group in ds.CASE_COMPOSITIONS[cid]:
            needed.update(group)
    return sorted(needed)


# ---------------------------------------------------------------------------
# commands


def cmd_validate_data(args) -> int:
    cfg = build_config(args)
    if not cfg["data_dir"]:
        print(EXPECTED_LAYOUT)
        print("error: --data-dir is required for validation", file=sys.stderr)
        return 1
    manifest = None
    manifest_path = Path(cfg["data_dir"]) / "manifest.json"
    if getattr(args, "manifest", None):
        manifest = ds.load_manifest(args.manifest)
    elif manifest_path.is_file():
        manifest = ds.load_manifest(manifest_path)
    failures = 0
    for sid in ds.SUBSET_IDS:
        try:
            ds.load_bonn_subset(
                cfg["data_dir"], sid, segment_len=int(cfg["segment_len"]), manifest=manifest
            )
            checked = " (checksums verified)" if manifest else ""
            print(
                f"subset {sid}: OK, {ds.EPOCHS_PER_SUBSET} files x "
                f"{cfg['segment_len']} samples{checked}"
            )
        except ds.DatasetError as exc:
            print(f"subset {sid}: FAIL — {exc}")
            failures += 1
    print(f"{5 - failures}/5 subsets OK")
    if failures:
        print(EXPECTED_LAYOUT)
    return 1 if failures else 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    if not cfg["data_dir"]:
        print(EXPECTED_LAYOUT)
        print("error: train requires data_dir", file=sys.stderr)
        return 1
    case_id = cfg["case"]
    subsets = load_subsets(cfg, subsets_for_cases([case_id]))
    labeled = ds.assemble_scenario(case_id, subsets)
    if getattr(args, "fold", None) is not None:
        splits = ds.stratified_kfold(labeled, int(cfg["k_folds"]), int(cfg["seed"]))
        labeled = labeled.subset(splits[args.fold].train_indices)
    out = run_dir(cfg)
    model = train_model(
        labeled, learn_config(cfg), algorithm=cfg["algorithm"], mod_iters=int(cfg["mod_iters"])
    )
    bundle = out / f"model_case_{case_id}"
    save_model(model, bundle)
    log = {
        "case_id": case_id,
        "config_snapshot": cfg,
        "per_class": [
            {"class_name": d.learn_meta.get("class_name"), "learn_meta": d.learn_meta}
            for d in model.dictionaries
        ],
    }
    write_json(out / f"training_log_case_{case_id}.json", log)
    print(f"model bundle written to {bundle}")
    return 0


def _read_input_epochs(path: Path, segment_len: int | None):
    if path.suffix.lower() == ".csv":
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise ds.DatasetError(f"{path.name}: line {lineno}: {exc}") from None
        if not rows:
            return np.empty((0, segment_len or 0))
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ds.DatasetError(f"{path.name}: ragged rows with widths {sorted(widths)}")
        return np.asarray(rows)
    # Bonn-format text file: one sample per line, one epoch per file
    lines = path.read_bytes().decode("ascii").splitlines()
    values = []
    for lineno, text in enumerate(lines, start=1):
        try:
            values.append(float(text.strip()))
        except ValueError:
            raise ds.DatasetError(
                f"{path.name}: line {lineno}: not a number: {text.strip()!r}"
            ) from None
    return np.asarray(values)[None, :] if values else np.empty((0, segment_len or 0))


def cmd_classify(args) -> int:
    cfg = build_config(args)
    model = load_model(args.model)
    data = _read_input_epochs(Path(args.input), None)
    factor = int(cfg["decimation"])
    if data.shape[0] and data.shape[1] != model.signal_len and factor > 1:
        data = ds.decimate(ds.EpochMatrix(data=data), factor).data
    if data.shape[0] and data.shape[1] != model.signal_len:
        raise CodingError(
            f"epoch length {data.shape[1]} does not match model signal_len "
            f"{model.signal_len} (after decimation {factor})"
        )
    out_fh = open(args.output, "w", newline="") if args.output else None
    try:
        writer = csv.writer(out_fh or sys.stdout, lineterminator="\n")
        writer.writerow(
            ["epoch_index", "label"]
            + [f"residual_{n}" for n in model.class_names]
            + [f"normalized_error_{n}" for n in model.class_names]
        )
        for i, row in enumerate(data):
            result = classify(model, row)
            norm = float(np.linalg.norm(row))
            nerr = (
                np.sqrt(result.residuals) / norm
                if norm > 0
                else np.full(model.n_classes, np.nan)
            )
            writer.writerow(
                [i, result.label]
                + [f"{v:.10g}" for v in result.residuals]
                + [f"{v:.10g}" for v in nerr]
            )
    finally:
        if out_fh:
            out_fh.close()
    return 0


def _planted_model(cfg: dict):
    train, test, truth = ds.generate_synthetic_dataset(
        n_classes=int(cfg["synth_classes"]),
        signal_len=int(cfg["synth_signal_len"]),
        n_atoms=int(cfg["synth_atoms"]),
        sparsity=int(cfg["synth_sparsity"]),
        n_train=int(cfg["synth_train"]),
        n_test=int(cfg["synth_test"]),
        seed=int(cfg["seed"]),
    )
    dictionaries = tuple(
        Dictionary(atoms=truth[c], class_tag=c, learn_meta={"algorithm": "planted"})
        for c in range(int(cfg["synth_classes"]))
    )
    model = SrcModel(
        dictionaries=dictionaries,
        coding=CodingConfig(max_sparsity=int(cfg["synth_sparsity"])),
        class_names=train.class_names,
        case_id="SYNTH",
    )
    return train, test, model


def _accuracy(model, epochs, labels) -> float:
    hits = 0
    for row, truth in zip(epochs.data, labels):
        hits += int(classify(model, row).label == int(truth))
    return hits / len(labels)


def _synthetic_evaluate(cfg: dict) -> int:
    _, test, model = _planted_model(cfg)
    clean_acc = _accuracy(model, test.epochs, test.labels)
    snr = float(cfg["synth_snr_db"])
    noisy = ds.add_awgn(test.epochs, snr, int(cfg["seed"]) + 1)
    noisy_acc = _accuracy(model, noisy, test.labels)
    out = run_dir(cfg)
    payload = {
        "mode": "synthetic-planted",
        "clean_accuracy": clean_acc,
        "noisy_accuracy": noisy_acc,
        "noisy_snr_db": snr,
        "n_test": int(test.epochs.n_epochs),
        "config_snapshot": cfg,
    }
    write_json(out / "synthetic_report.json", payload)
    rows = [
        ["SYNTH", "pooled", "", f"{100 * clean_acc:.4f}", "", ""],
        ["SYNTH", "pooled", f"{snr:g}", f"{100 * noisy_acc:.4f}", "", ""],
    ]
    write_csv(out / "synthetic_report.csv", rows)
    print(f"synthetic planted-dictionary suite ({test.epochs.n_epochs} test signals)")
    print(f"  clean accuracy:        {100 * clean_acc:.2f}%")
    print(f"  accuracy at {snr:+g} dB:  {100 * noisy_acc:.2f}%")
    print(f"reports written to {out}")
    if clean_acc < 1.0 or noisy_acc < 0.9:
        print("synthetic suite below expected thresholds", file=sys.stderr)
        return 2
    return 0


def cmd_evaluate(args) -> int:
    cfg = build_config(args)
    if not cfg["data_dir"]:
        return _synthetic_evaluate(cfg)
    cases = cfg["cases"] or [cfg["case"]]
    subsets = load_subsets(cfg, subsets_for_cases(cases))
    out = run_dir(cfg)
    learn = learn_config(cfg)
    reports = []
    rows = []
    for cid in cases:
        report = run_case(
            cid,
            subsets,
            learn,
            k_folds=int(cfg["k_folds"]),
            seed=int(cfg["seed"]),
            algorithm=cfg["algorithm"],
        )
        reports.append(report)
        rows.extend(case_report_csv_rows(report))
        write_json(out / f"case_{cid}.json", case_report_to_dict(report))
    write_csv(out / "cases.csv", rows)
    print(summary_table(reports))
    print(f"reports written to {out}")
    return 0


def _synthetic_sweep(cfg: dict) -> int:
    _, test, model = _planted_model(cfg)
    grid = [float(s) for s in cfg["snr_grid"]]
    out = run_dir(cfg)
    rows = []
    points = []
    for si, snr in enumerate(sorted(grid)):
        noisy = ds.add_awgn(test.epochs, snr, int(cfg["seed"]) + 1 + si)
        acc = _accuracy(model, noisy, test.labels)
        points.append({"snr_db": snr, "accuracy": acc})
        rows.append(["SYNTH", "pooled", f"{snr:g}", f"{100 * acc:.4f}", "", ""])
        print(f"  {snr:+6.1f} dB: {100 * acc:6.2f}%")
    write_json(
        out / "sweep_SYNTH.json",
        {"mode": "synthetic-planted", "points": points, "config_snapshot": cfg},
    )
    write_csv(out / "sweep_SYNTH.csv", rows)
    print(f"reports written to {out}")
    return 0


def cmd_noise_sweep(args) -> int:
    cfg = build_config(args)
    if not cfg["data_dir"]:
        return _synthetic_sweep(cfg)
    cases = cfg["cases"] or [cfg["case"]]
    subsets = load_subsets(cfg, subsets_for_cases(cases))
    out = run_dir(cfg)
    learn = learn_config(cfg)
    for cid in cases:
        report = noise_sweep(
            cid,
            subsets,
            learn,
            snr_grid=[float(s) for s in cfg["snr_grid"]],
            seed=int(cfg["seed"]),
            k_folds=int(cfg["k_folds"]),
            algorithm=cfg["algorithm"],
        )
        write_json(out / f"sweep_{cid}.json", sweep_report_to_dict(report))
        write_csv(out / f"sweep_{cid}.csv", sweep_report_csv_rows(report))
        print(f"case {cid}:")
        for snr, acc in report.points:
            print(f"  {snr:+6.1f} dB: {100 * acc:6.2f}%")
    print(f"reports written to {out}")
    return 0


# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key-value JSON config file")
    p.add_argument("--preset", help="built-in preset name (desk, paper)")
    p.add_argument("--data-dir", dest="data_dir", help="Bonn data directory")
    p.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    p.add_argument("--case", help="scenario id (I..IX)")
    p.add_argument("--all-cases", action="store_true", help="run every scenario")
    p.add_argument("--algorithm", choices=["cbwrlsu", "mod"])
    p.add_argument("--n-atoms", dest="n_atoms", type=int)
    p.add_argument("--sparsity", type=int)
    p.add_argument("--passes", type=int)
    p.add_argument("--decimation", type=int)
    p.add_argument("--k-folds", dest="k_folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", dest="init_seed", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegsrc",
        description="Dictionary-learning SRC pipeline for Bonn EEG scenarios",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-data", help="check the Bonn directory layout")
    _add_common(p)
    p.add_argument("--manifest", help="manifest JSON with SHA-256 checksums")
    p.set_defaults(func=cmd_validate_data)

    p = sub.add_parser("train", help="train a model bundle for one scenario")
    _add_common(p)
    p.add_argument("--fold", type=int, help="train on this fold's training split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify epochs from a file")
    _add_common(p)
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--input", required=True, help="Bonn-format .txt or .csv epochs")
    p.add_argument("--output", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser(
        "evaluate",
        help="cross-validated scenario evaluation (synthetic suite without data_dir)",
    )
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("noise-sweep", help="accuracy versus SNR sweep")
    _add_common(p)
    p.add_argument("--snr-grid", dest="snr_grid", type=float, nargs="+")
    p.set_defaults(func=cmd_noise_sweep)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ds.DatasetError, FileNotFoundError, LearnError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CodingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
