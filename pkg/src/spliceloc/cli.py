"""Command-line interface: gen, train, eval, predict.

Every command writes a run manifest (manifest.json) into its output
directory before doing any work; all final artifacts are written to a
temporary name and atomically renamed, so an interrupted run never leaves a
corrupt output behind.
"""

from __future__ import annotations

import argparse
import datetime
import json
import subprocess
import sys
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from . import checkpoint as ckpt
from .config import (DEFAULTS, config_digest, parse_set_args, resolve_config,
                     to_model_config, to_train_config)
from .data import AttackSpec, load_corpus, save_sample, synthesize_corpus
from .metrics import evaluate, render_report, report_to_dict
from .model import SpliceLocNet, predict_probabilities
from .trainer import train


def _code_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, cwd=Path(__file__).parent, timeout=5,
        ).stdout.strip()
    except OSError:
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def atomic_write_png(path: Path, array: np.ndarray) -> None:
    ok, buf = cv2.imencode(".png", array)
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.tobytes())
    tmp.replace(path)


def write_manifest(out_dir: Path, command: str, config: dict,
                   inputs: dict, outputs: dict, seed: int) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "code_version": _code_version(),
        "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_from_args(args) -> dict:
    overrides = parse_set_args(args.set or [])
    cfg = resolve_config(args.config, overrides, desk_scale=getattr(args, "desk_scale", False))
    if args.seed is not None:
        cfg["train.seed"] = int(args.seed)
    return cfg


def cmd_gen(args) -> int:
    out = Path(args.out)
    n, size, seed = args.n, args.size, args.seed if args.seed is not None else 0
    write_manifest(out, "gen", {"n": n, "size": size, "feather": args.feather},
                   inputs={}, outputs={"corpus": str(out)}, seed=seed)
    for sample in synthesize_corpus(n, size, seed, feather=args.feather):
        save_sample(sample, out, sample.meta["stem"])
    print(f"wrote {n} samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_from_args(args)
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        print(f"error: corpus directory not found: {corpus_dir}", file=sys.stderr)
        return 2
    out = Path(args.out)
    ckpt_path = out / "checkpoint.ckpt"
    history_path = out / "history.jsonl"
    write_manifest(
        out, "train", cfg,
        inputs={"corpus": str(corpus_dir),
                "val_corpus": str(args.val_corpus) if args.val_corpus else None},
        outputs={"checkpoint": str(ckpt_path), "history": str(history_path)},
        seed=cfg["train.seed"],
    )
    print("resolved config:")
    for key in sorted(cfg):
        print(f"  {key} = {cfg[key]}")

    train_set = load_corpus(corpus_dir)
    if not train_set:
        print(f"error: corpus at {corpus_dir} is empty", file=sys.stderr)
        return 2
    val_set = load_corpus(args.val_corpus) if args.val_corpus else None
    result = train(to_train_config(cfg), train_set, val_set,
                   log=print if args.verbose else None)

    ckpt.save(ckpt_path, result.checkpoint)
    atomic_write_text(history_path,
                      "".join(json.dumps(rec) + "\n" for rec in result.history))
    last_val = next((r["val_f1"] for r in reversed(result.history) if "val_f1" in r), None)
    print(f"checkpoint: {ckpt_path}")
    if last_val is not None:
        print(f"final val F1: {last_val:.4f}")
    return 0


def _load_model(checkpoint_path: Path) -> tuple[SpliceLocNet, dict]:
    state = ckpt.load(checkpoint_path)
    digest = config_digest(state["config"])
    if digest != state["config_digest"]:
        raise SystemExit(
            f"error: checkpoint {checkpoint_path} config digest mismatch "
            f"(stored {state['config_digest'][:12]}, recomputed {digest[:12]}); "
            "the file was edited or corrupted, refusing to evaluate"
        )
    model = SpliceLocNet(to_model_config(state["config"]))
    model.load_state_dict(state["model"])
    model.eval()
    return model, state


def parse_attacks(spec: str, seed: int) -> list[AttackSpec]:
    attacks = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if item == "none":
            attacks.append(AttackSpec("none", seed=seed))
        elif item.startswith("resize:"):
            attacks.append(AttackSpec("resize", resize_ratio=float(item.split(":", 1)[1]),
                                      seed=seed))
        elif item.startswith("noise:"):
            attacks.append(AttackSpec("gaussian_noise",
                                      noise_variance=float(item.split(":", 1)[1]), seed=seed))
        else:
            raise ValueError(f"cannot parse attack {item!r} "
                             "(expected none, resize:<ratio>, or noise:<variance>)")
    if not attacks:
        raise ValueError("no attacks requested")
    return [a.validate() for a in attacks]


def cmd_eval(args) -> int:
    checkpoint_path = Path(args.checkpoint)
    corpus_dir = Path(args.corpus)
    for p in (checkpoint_path, corpus_dir):
        if not p.exists():
            print(f"error: {p} does not exist", file=sys.stderr)
            return 2
    seed = args.seed if args.seed is not None else 0
    attacks = parse_attacks(args.attacks, seed)
    out = Path(args.out)
    write_manifest(
        out, "eval",
        {"attacks": args.attacks, "aggregation": args.aggregation,
         "threshold": args.threshold, "seed": seed},
        inputs={"checkpoint": str(checkpoint_path), "corpus": str(corpus_dir)},
        outputs={"reports": str(out)}, seed=seed,
    )
    model, state = _load_model(checkpoint_path)
    samples = load_corpus(corpus_dir)
    if not samples:
        print(f"error: corpus at {corpus_dir} is empty", file=sys.stderr)
        return 2
    threshold = args.threshold if args.threshold is not None else state["config"]["head.threshold"]

    summary = [f"{'attack':<16} {'precision':>10} {'recall':>10} {'f1':>10}"]
    for attack in attacks:
        report = evaluate(model, samples, attack, args.aggregation, threshold)
        label = attack.label()
        atomic_write_text(out / f"report_{label}.txt", render_report(report))
        atomic_write_text(out / f"report_{label}.json",
                          json.dumps(report_to_dict(report), indent=2) + "\n")
        summary.append(f"{label:<16} {report.precision:>10.4f} "
                       f"{report.recall:>10.4f} {report.f1:>10.4f}")
    atomic_write_text(out / "summary.txt", "\n".join(summary) + "\n")
    print("\n".join(summary))
    return 0


def cmd_predict(args) -> int:
    checkpoint_path = Path(args.checkpoint)
    if not checkpoint_path.exists():
        print(f"error: checkpoint {checkpoint_path} does not exist", file=sys.stderr)
        return 2
    out = Path(args.out)
    write_manifest(
        out, "predict", {"threshold": args.threshold},
        inputs={"checkpoint": str(checkpoint_path), "images": [str(p) for p in args.images]},
        outputs={"dir": str(out)}, seed=args.seed if args.seed is not None else 0,
    )
    model, state = _load_model(checkpoint_path)
    threshold = args.threshold if args.threshold is not None else state["config"]["head.threshold"]

    n_ok = 0
    for image_path in args.images:
        bgr = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
        if bgr is None:
            print(f"warning: skipping unreadable image {image_path}", file=sys.stderr)
            continue
        image = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
        mask_prob, edge_prob = predict_probabilities(model, image)
        stem = Path(image_path).stem
        mask8 = ((mask_prob > threshold) * np.uint8(255))
        edge8 = np.clip(np.rint(edge_prob * 255.0), 0, 255).astype(np.uint8)
        color = np.zeros_like(image)
        color[..., 0] = mask8.astype(np.float32) / 255.0
        color[..., 1] = edge_prob
        overlay = np.clip(0.5 * image + 0.5 * color, 0.0, 1.0)
        overlay8 = np.rint(overlay * 255.0).astype(np.uint8)
        atomic_write_png(out / f"{stem}_mask.png", mask8)
        atomic_write_png(out / f"{stem}_edge.png", edge8)
        atomic_write_png(out / f"{stem}_overlay.png", cv2.cvtColor(overlay8, cv2.COLOR_RGB2BGR))
        n_ok += 1
    if n_ok == 0:
        print("error: no readable inputs", file=sys.stderr)
        return 2
    print(f"wrote predictions for {n_ok}/{len(args.images)} images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spliceloc",
        description="Splicing localization: data synthesis, training, evaluation, prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="synthesize a spliced corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--size", type=int, default=256)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--feather", type=float, default=0.0)
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train on a corpus")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--val-corpus", default=None)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", default=None, help="YAML config file")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    tr.add_argument("--desk-scale", action="store_true",
                    help="reduced preset that trains in minutes on CPU")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--verbose", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint, optionally under attacks")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--attacks", default="none",
                    help="comma list: none, resize:<ratio>, noise:<variance>")
    ev.add_argument("--aggregation", default="per_image_mean",
                    choices=("per_image_mean", "global_pixels"))
    ev.add_argument("--threshold", type=float, default=None)
    ev.add_argument("--seed", type=int, default=None)
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write mask/edge/overlay PNGs for images")
    pr.add_argument("images", nargs="+")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--threshold", type=float, default=None)
    pr.add_argument("--seed", type=int, default=None)
    pr.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
