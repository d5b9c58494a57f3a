"""Command-line entry point.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import modal_models, synth_data
from .distill_losses import DistillConfig
from .errors import DataError, ModalKDError, ParameterError
from .gradcheck import TOLERANCE, run_gradcheck
from .modal_models import ModalityMode
from .train_eval import compare_kd_vs_mr, distill_student, evaluate, train_teacher
from .viz import emit_heatmap

log = logging.getLogger("modalkd")

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v >= 0.0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a finite value >= 0, got {text}")
    return v


def dump_json(doc, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_config(path) -> DistillConfig:
    if path is None:
        return DistillConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        return DistillConfig.from_dict(doc)
    except ParameterError as exc:
        raise ParameterError(f"{path}: {exc}") from None


def load_splits(data_path, cfg: DistillConfig):
    ds = synth_data.read_csv(data_path)
    return synth_data.split(ds, SPLIT_FRACTIONS, cfg.seed)


def load_model(path) -> modal_models.ModalNet:
    return modal_models.deserialize(Path(path).read_text(encoding="utf-8"))


def write_model(net, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(modal_models.serialize(net), encoding="utf-8")


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    try:
        ds = synth_data.generate(args.n, args.text_dim, args.image_dim, args.classes, args.noise, args.seed)
    except ParameterError as exc:
        args.parser.error(str(exc))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    synth_data.write_csv(ds, out)
    snapshot = {
        "command": "gen-data",
        "n": args.n,
        "classes": args.classes,
        "text_dim": args.text_dim,
        "image_dim": args.image_dim,
        "noise": args.noise,
        "seed": args.seed,
    }
    dump_json(snapshot, out.with_name(out.name + ".meta.json"))
    log.info("wrote %d samples to %s", len(ds), out)
    return 0


def cmd_train_teacher(args) -> int:
    cfg = load_config(args.config)
    train, val, test = load_splits(args.data, cfg)
    teacher, report = train_teacher(train, val, cfg)
    report.test_accuracy = evaluate(teacher, test)
    write_model(teacher, args.out_model)
    dump_json(report.to_document(), args.out_report)
    print(f"teacher val {report.val_accuracy:.4f} test {report.test_accuracy:.4f} "
          f"(best epoch {report.best_epoch}, {report.wall_clock_seconds:.1f}s)")
    return 0


def _check_teacher_fits(teacher, ds) -> None:
    for name, want in (("text_dim", ds.text_dim), ("image_dim", ds.image_dim), ("num_classes", ds.num_classes)):
        have = getattr(teacher, name)
        if have != want:
            raise DataError(f"teacher {name}={have} but data has {name}={want}")


def cmd_distill(args) -> int:
    cfg = load_config(args.config)
    train, val, test = load_splits(args.data, cfg)
    teacher = load_model(args.teacher)
    _check_teacher_fits(teacher, train)
    student, report, trace = distill_student(teacher, train, val, cfg)
    report.test_accuracy = evaluate(student, test)
    write_model(student, args.out_model)
    dump_json(report.to_document(), args.out_report)
    dump_json(trace.to_document(), args.out_trace)
    heat_dir = Path(args.heatmap_dir) if args.heatmap_dir else Path(args.out_trace).parent / "heatmaps"
    heat_dir.mkdir(parents=True, exist_ok=True)
    for rec in trace.records:
        for tag, m in (("gt", rec.gram_teacher), ("gs", rec.gram_student), ("absdiff", rec.abs_distance)):
            emit_heatmap(m, heat_dir / f"trace_epoch{rec.epoch}_{tag}.pgm")
    first, last = trace.records[1 if len(trace.records) > 1 else 0], trace.records[-1]
    print(f"student val {report.val_accuracy:.4f} test {report.test_accuracy:.4f}; "
          f"relation distance epoch {first.epoch} {first.frobenius_distance:.4f} -> "
          f"epoch {last.epoch} {last.frobenius_distance:.4f}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    ds = synth_data.read_csv(args.data)
    table = compare_kd_vs_mr(ds, cfg, args.seeds, SPLIT_FRACTIONS)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = table.render()
    (out / "comparison.txt").write_text(text, encoding="utf-8")
    doc = table.to_document()
    doc["config"] = cfg.to_dict()
    doc["seeds"] = args.seeds
    dump_json(doc, out / "comparison.json")
    sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    splits = dict(zip(("train", "val", "test"), load_splits(args.data, cfg)))
    net = load_model(args.model)
    _check_teacher_fits(net, splits["train"])
    print(repr(evaluate(net, splits[args.split], ModalityMode.parse(args.mode))))
    return 0


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    results = run_gradcheck(args.seed, args.trials)
    worst = max(r.max_rel_error for r in results)
    for r in results:
        if args.verbose or r.max_rel_error >= TOLERANCE:
            print(f"trial {r.trial:3d} {r.relation_mode.value:<15} {r.relation_source.value:<6} "
                  f"normalize={r.normalize_rows!s:<5} max_rel_err {r.max_rel_error:.3e}")
    ok = worst < TOLERANCE
    print(f"max relative error {worst:.3e} over {len(results)} trials "
          f"({time.perf_counter() - start:.1f}s): {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modalkd", description="Modality-relation knowledge distillation toy lab.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic two-modality dataset CSV")
    g.add_argument("--n", type=_positive_int, default=2000)
    g.add_argument("--classes", type=_positive_int, default=3)
    g.add_argument("--text-dim", type=_positive_int, default=4)
    g.add_argument("--image-dim", type=_positive_int, default=4)
    g.add_argument("--noise", type=_nonneg_float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data, parser=g)

    t = sub.add_parser("train-teacher", help="train the deep teacher on tri-modality cross-entropy")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out-model", required=True)
    t.add_argument("--out-report", required=True)
    t.set_defaults(func=cmd_train_teacher)

    d = sub.add_parser("distill", help="distill a shallow student from a saved teacher")
    d.add_argument("--data", required=True)
    d.add_argument("--teacher", required=True)
    d.add_argument("--config")
    d.add_argument("--out-model", required=True)
    d.add_argument("--out-report", required=True)
    d.add_argument("--out-trace", required=True)
    d.add_argument("--heatmap-dir", help="default: <dir of --out-trace>/heatmaps")
    d.set_defaults(func=cmd_distill)

    c = sub.add_parser("compare", help="KD vs KD + relation loss over several seeds")
    c.add_argument("--data", required=True)
    c.add_argument("--config")
    c.add_argument("--seeds", type=_positive_int, default=3)
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("evaluate", help="accuracy of a saved model on one split")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--config", help="supplies the split seed")
    e.add_argument("--split", choices=("train", "val", "test"), default="val")
    e.add_argument("--mode", choices=("text", "image", "joint"), default="joint")
    e.set_defaults(func=cmd_evaluate)

    k = sub.add_parser("gradcheck", help="finite-difference check of the distillation gradients")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--trials", type=_positive_int, default=20)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ModalKDError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
