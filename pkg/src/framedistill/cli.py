"""Command-line entry point for reproducible experiments.

Subcommands map one-to-one onto the experiment procedures: gen-data,
train-teacher, train-baseline, train-student, train-parallel, evaluate,
profile, dump-embeddings. Options come from a JSON config (--config) with
individual flags taking precedence; the fully resolved configuration is
written as a manifest under the output directory, and re-running a
subcommand with the manifest as its config reproduces the outputs bit for
bit (wall-clock timings excluded). Nothing is written outside the output
directory.

Exit codes: 0 success, 2 configuration/validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import Graph, Tensor
from .config import (ConfigError, encoder_from_config, gen_spec_from_config,
                     load_config, train_from_config, validate_config)
from .dataio import generate_dataset, read_records, split, write_records
from .encoders import embedding_width, encode, student_encoder_config
from .losses import COMBOS
from .metrics import evaluate
from .profiler import count_flops
from .sampling import KINDS, SamplerSpec, sample_indices
from .training import (ModelBundle, train_baseline, train_parallel,
                       train_student_serial, train_teacher)

_ENCODER_DEFAULTS = {
    "hrnn": {"kind": "hrnn", "input_dim": 16, "num_classes": 8,
             "frames_per_block": 4, "cell": 32, "dropout": 0.2},
    "netvlad": {"kind": "netvlad", "input_dim": 16, "num_classes": 8,
                "clusters": 4, "hidden": 32, "dropout": 0.2},
    "nextvlad": {"kind": "nextvlad", "input_dim": 16, "num_classes": 8,
                 "clusters": 4, "hidden": 32, "groups": 8, "expansion": 2,
                 "dropout": 0.2},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framedistill",
        description="Teacher-student frame-reduction distillation experiments",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    names = ["gen-data", "train-teacher", "train-baseline", "train-student",
             "train-parallel", "evaluate", "profile", "dump-embeddings"]
    for name in names:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--out", help="output directory (default 'out')")
        p.add_argument("--data", help="dataset file (.bin) or directory of splits")
        if name in ("train-baseline", "train-student", "train-parallel",
                    "evaluate", "dump-embeddings"):
            p.add_argument("--k", type=int, help="frames kept by the sampler")
            p.add_argument("--sampler", choices=KINDS, help="sampling strategy")
        if name in ("train-student", "train-parallel"):
            p.add_argument("--combo", choices=sorted(COMBOS), help="loss combination")
        if name in ("train-student", "dump-embeddings"):
            p.add_argument("--teacher", help="teacher checkpoint path")
        if name in ("evaluate", "dump-embeddings"):
            p.add_argument("--model", help="model checkpoint path")
        if name == "profile":
            p.add_argument("--encoder", choices=sorted(_ENCODER_DEFAULTS),
                           help="encoder kind to profile")
            p.add_argument("--frames", type=int, action="append",
                           help="frame count (repeatable)")
    return parser


def _override_seeds(doc: dict, seed: int) -> None:
    doc.setdefault("train", {})["seed"] = seed
    data = doc.setdefault("data", {})
    data["seed"] = seed
    if "gen" in data:
        data["gen"]["seed"] = seed


def _resolve(args) -> dict:
    doc = load_config(args.config) if args.config else {}
    doc.pop("subcommand", None)
    if args.seed is not None:
        _override_seeds(doc, args.seed)
    if args.out:
        doc.setdefault("output", {})["dir"] = args.out
    if getattr(args, "data", None):
        doc.setdefault("data", {})["path"] = args.data
    distill = doc.setdefault("distill", {})
    if getattr(args, "k", None) is not None:
        distill["k"] = args.k
    if getattr(args, "sampler", None):
        distill["sampler"] = args.sampler
    if getattr(args, "combo", None):
        distill["combo"] = args.combo
    if getattr(args, "encoder", None):
        doc["encoder"] = dict(_ENCODER_DEFAULTS[args.encoder])
    doc["subcommand"] = args.subcommand
    return validate_config(doc)


def _out_dir(doc: dict) -> Path:
    out = Path(doc.get("output", {}).get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(doc: dict, out: Path) -> None:
    path = out / f"manifest-{doc['subcommand']}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_splits(doc: dict):
    data = doc.get("data", {})
    if "path" in data:
        base = Path(data["path"])
        if not base.is_dir():
            raise ConfigError(f"data.path {base} is not a directory of splits")
        return tuple(read_records(base / f"{part}.bin") for part in
                     ("train", "val", "test"))
    spec = gen_spec_from_config(doc)
    records = generate_dataset(spec)
    fractions = data.get("split", [0.8, 0.1, 0.1])
    return split(records, fractions, data.get("seed", 0))


def _sampler_from(doc: dict, default_kind: str = "uniform") -> SamplerSpec:
    distill = doc.get("distill", {})
    kind = distill.get("sampler", default_kind)
    k = distill.get("k")
    if k is None:
        raise ConfigError("distill.k (or --k) is required")
    seed = doc.get("train", {}).get("seed", 0)
    return SamplerSpec(kind, k, seed)


def _write_history(history: list, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in history:
            fh.write(json.dumps({
                "epoch": entry["epoch"],
                "loss": entry["loss"],
                "val_gap": entry["val_gap"],
                "role": entry["role"],
            }) + "\n")


def _cmd_gen_data(doc: dict, out: Path) -> None:
    parts = _load_splits(doc)
    for name, records in zip(("train", "val", "test"), parts):
        write_records(records, out / f"{name}.bin", "bin")
    print(json.dumps({"train": len(parts[0]), "val": len(parts[1]),
                      "test": len(parts[2])}))


def _cmd_train_teacher(doc: dict, out: Path) -> None:
    train, val, _ = _load_splits(doc)
    bundle = train_teacher(train, val, encoder_from_config(doc), train_from_config(doc))
    bundle.save(out / "teacher.fdm")
    _write_history(bundle.history, out / "teacher-history.ndjson")
    print(json.dumps({"checkpoint": str(out / "teacher.fdm"),
                      "best_val_gap": max(h["val_gap"] for h in bundle.history)}))


def _cmd_train_baseline(doc: dict, out: Path) -> None:
    train, val, _ = _load_splits(doc)
    sampler = _sampler_from(doc)
    enc_cfg = encoder_from_config(doc)
    n_ref = int(np.median([r.num_frames for r in train]))
    enc_cfg = student_encoder_config(enc_cfg, sampler.k, n_ref)
    bundle = train_baseline(train, val, enc_cfg, train_from_config(doc), sampler)
    stem = f"baseline-{sampler.kind}-k{sampler.k}"
    bundle.save(out / f"{stem}.fdm")
    _write_history(bundle.history, out / f"{stem}-history.ndjson")
    print(json.dumps({"checkpoint": str(out / f"{stem}.fdm"),
                      "best_val_gap": max(h["val_gap"] for h in bundle.history)}))


def _distill_options(doc: dict) -> dict:
    distill = doc.get("distill", {})
    return {
        "rep_mode": distill.get("rep_mode", "final"),
        "pred_distance": distill.get("pred_distance", "sqerr"),
        "weights": distill.get("weights") or None,
    }


def _cmd_train_student(doc: dict, out: Path, teacher_path: str | None) -> None:
    train, val, _ = _load_splits(doc)
    distill = doc.get("distill", {})
    combo = distill.get("combo")
    if combo not in COMBOS:
        raise ConfigError("distill.combo (or --combo) must be one of a-e")
    k = distill.get("k")
    if k is None:
        raise ConfigError("distill.k (or --k) is required")
    teacher = ModelBundle.load(teacher_path or out / "teacher.fdm")
    bundle = train_student_serial(teacher, train, val, combo, k,
                                  train_from_config(doc), **_distill_options(doc))
    stem = f"student-{combo}-k{k}"
    bundle.save(out / f"{stem}.fdm")
    _write_history(bundle.history, out / f"{stem}-history.ndjson")
    print(json.dumps({"checkpoint": str(out / f"{stem}.fdm"),
                      "best_val_gap": max(h["val_gap"] for h in bundle.history)}))


def _cmd_train_parallel(doc: dict, out: Path) -> None:
    train, val, _ = _load_splits(doc)
    distill = doc.get("distill", {})
    combo = distill.get("combo")
    if combo not in COMBOS:
        raise ConfigError("distill.combo (or --combo) must be one of a-e")
    k = distill.get("k")
    if k is None:
        raise ConfigError("distill.k (or --k) is required")
    enc_cfg = encoder_from_config(doc)
    n_ref = int(np.median([r.num_frames for r in train]))
    s_cfg = student_encoder_config(enc_cfg, k, n_ref)
    t_bundle, s_bundle = train_parallel(train, val, enc_cfg, s_cfg, combo, k,
                                        train_from_config(doc), **_distill_options(doc))
    stem = f"parallel-{combo}-k{k}"
    t_bundle.save(out / f"{stem}-teacher.fdm")
    s_bundle.save(out / f"{stem}-student.fdm")
    _write_history(t_bundle.history + s_bundle.history, out / f"{stem}-history.ndjson")
    print(json.dumps({
        "teacher": str(out / f"{stem}-teacher.fdm"),
        "student": str(out / f"{stem}-student.fdm"),
    }))


def _cmd_evaluate(doc: dict, out: Path, model_path: str | None) -> None:
    if not model_path:
        raise ConfigError("evaluate needs --model")
    data = doc.get("data", {})
    if "path" not in data or not Path(data["path"]).is_file():
        raise ConfigError("evaluate needs --data pointing at a dataset file")
    bundle = ModelBundle.load(model_path)
    records = read_records(data["path"])
    sampler = None
    if doc.get("distill", {}).get("k") is not None:
        sampler = _sampler_from(doc)
    report = evaluate(bundle, records, sampler)
    print(report.to_json())
    (out / f"metrics-{Path(model_path).stem}.json").write_text(
        report.to_json() + "\n", encoding="utf-8")


def _cmd_profile(doc: dict, out: Path, frames: list | None) -> None:
    if "encoder" not in doc:
        raise ConfigError("profile needs --encoder or an encoder config section")
    cfg = encoder_from_config(doc)
    frames = frames or [300, 30]
    reports = [count_flops(cfg, t) for t in frames]
    header = f"{'frames':>8} {'total':>14} " + " ".join(f"{s:>12}" for s in reports[0].breakdown)
    print(header)
    for rep in reports:
        row = f"{rep.frames_used:>8} {rep.total:>14} " + " ".join(
            f"{v:>12}" for v in rep.breakdown.values())
        print(row)
    payload = json.dumps([rep.to_dict() for rep in reports], indent=2)
    (out / f"flops-{cfg.kind}.json").write_text(payload + "\n", encoding="utf-8")


def dump_embeddings(teacher: ModelBundle, student: ModelBundle, records,
                    path, k: int) -> None:
    """One TSV row per (video, role): id, role, top label, embedding."""
    if not records:
        raise ValueError("empty dataset")
    wt = embedding_width(teacher.encoder_cfg)
    ws = embedding_width(student.encoder_cfg)
    if wt != ws:
        raise ValueError(f"embedding widths differ: teacher {wt}, student {ws}")
    sampler = SamplerSpec("uniform", k)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\trole\tlabel\t" + "\t".join(f"e{i}" for i in range(wt)) + "\n")
        for rec in records:
            for role, bundle, frames in (
                ("teacher", teacher, rec.frames),
                ("student", student, rec.frames[sample_indices(sampler, rec.num_frames)]),
            ):
                g = Graph()
                emb = encode(g, Tensor(frames), bundle.params, bundle.encoder_cfg,
                             train=False)
                values = "\t".join(repr(v) for v in emb.e.data)
                fh.write(f"{rec.id}\t{role}\t{rec.labels[0]}\t{values}\n")


def _cmd_dump_embeddings(doc: dict, out: Path, teacher_path, model_path) -> None:
    if not teacher_path or not model_path:
        raise ConfigError("dump-embeddings needs --teacher and --model")
    data = doc.get("data", {})
    if "path" not in data or not Path(data["path"]).is_file():
        raise ConfigError("dump-embeddings needs --data pointing at a dataset file")
    k = doc.get("distill", {}).get("k")
    if k is None:
        raise ConfigError("distill.k (or --k) is required")
    teacher = ModelBundle.load(teacher_path)
    student = ModelBundle.load(model_path)
    records = read_records(data["path"])
    dump_embeddings(teacher, student, records, out / "embeddings.tsv", k)
    print(json.dumps({"embeddings": str(out / "embeddings.tsv"),
                      "rows": 2 * len(records)}))


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        doc = _resolve(args)
        out = _out_dir(doc)
        _write_manifest(doc, out)
        cmd = args.subcommand
        if cmd == "gen-data":
            _cmd_gen_data(doc, out)
        elif cmd == "train-teacher":
            _cmd_train_teacher(doc, out)
        elif cmd == "train-baseline":
            _cmd_train_baseline(doc, out)
        elif cmd == "train-student":
            _cmd_train_student(doc, out, getattr(args, "teacher", None))
        elif cmd == "train-parallel":
            _cmd_train_parallel(doc, out)
        elif cmd == "evaluate":
            _cmd_evaluate(doc, out, getattr(args, "model", None))
        elif cmd == "profile":
            _cmd_profile(doc, out, getattr(args, "frames", None))
        elif cmd == "dump-embeddings":
            _cmd_dump_embeddings(doc, out, getattr(args, "teacher", None),
                                 getattr(args, "model", None))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
