"""Command line entry point: ``uvenet {synth,train,enhance,evaluate,gradcheck}``.

Every subcommand takes ``--config <json>`` and ``--seed``; explicit flags
override fields from the config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import gradcheck
from . import pipeline as P
from . import synth

log = logging.getLogger("uvenet")


def _file_config(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _merged(args: argparse.Namespace, keys: Sequence[str], defaults: dict) -> dict:
    """Defaults, then the JSON config, then flags that were given."""
    out = dict(defaults)
    out.update(_file_config(args.config))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with defaults for this command")
    p.add_argument("--seed", type=int)


# ---------------------------------------------------------------- subcommands


SYNTH_DEFAULTS = {"seed": 0, "styles": 3, "split": "220:60", "frames": 16, "size": [64, 64], "motion": 1,
                  "procedural": None, "clean_root": None, "crop": None, "presets": None}


def cmd_synth(args) -> int:
    c = _merged(args, ["out", "seed", "styles", "split", "frames", "size", "motion", "procedural", "clean_root", "crop", "presets"],
                SYNTH_DEFAULTS)
    if not c.get("out"):
        raise SystemExit("synth: --out is required")
    if c["procedural"]:
        n = int(c["procedural"])
        clips = [synth.gen_procedural_clip(int(c["seed"]) * 100003 + i, int(c["frames"]), int(c["size"][0]), int(c["size"][1]),
                                           int(c["motion"]), f"proc{i:04d}") for i in range(n)]
    elif c["clean_root"]:
        clips = P.load_clean_root(c["clean_root"], tuple(c["crop"]) if c["crop"] else None)
    else:
        raise SystemExit("synth: give --procedural N or --clean-root DIR")
    manifest = synth.build_dataset(clips, c["out"], int(c["styles"]), c["split"], int(c["seed"]), c["presets"])
    n_train, n_test = len(manifest.split("train")), len(manifest.split("test"))
    print(f"wrote {len(manifest.entries)} pairs ({n_train} train, {n_test} test) to {c['out']}")
    return 0


def cmd_train(args) -> int:
    model = {"T": args.T, "shift_len": args.shift_len, "aggregation": args.aggregation,
             "faam_scales": args.faam_scales}
    cfg = P.load_train_config(args.config, args.preset, seed=args.seed, manifest=args.manifest, checkpoint=args.checkpoint,
                              total_iters=args.iters, lr0=args.lr, batch_size=args.batch_size, crop_size=args.crop_size,
                              log_every=args.log_every, model=model)
    if not cfg.checkpoint:
        raise SystemExit("train: --checkpoint is required")
    _, report = P.train(cfg)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    last = report["loss_log"][-1]["loss"] if report["loss_log"] else float("nan")
    print(f"trained {cfg.total_iters} iterations, final loss {last:.5f}, checkpoint {cfg.checkpoint}")
    return 0


def cmd_enhance(args) -> int:
    c = _merged(args, ["checkpoint", "input", "output", "workers"], {"workers": None})
    for k in ("checkpoint", "input", "output"):
        if not c.get(k):
            raise SystemExit(f"enhance: --{k} is required")
    paths = P.enhance_video(c["checkpoint"], c["input"], c["output"], c["workers"])
    print(f"wrote {len(paths)} frames to {c['output']}")
    return 0


def cmd_evaluate(args) -> int:
    c = _merged(args, ["enhanced", "gt", "out", "name"], {"gt": None, "name": None})
    if not c.get("enhanced") or not c.get("out"):
        raise SystemExit("evaluate: --enhanced and --out are required")
    vm = P.evaluate_dirs(c["enhanced"], c["gt"])
    json_path, csv_path = P.write_report(vm, c["out"], c["name"] or Path(c["enhanced"]).name)
    for k, v in vm.summary().items():
        print(f"{k:>9} {v:.6f}")
    print(f"wrote {json_path} and {csv_path}")
    return 0


def cmd_gradcheck(args) -> int:
    c = _merged(args, ["seed", "points"], {"seed": 0, "points": 10})
    results = gradcheck.run_suite(int(c["seed"]), int(c["points"]))
    print(gradcheck.format_report(results))
    if args.json:
        Path(args.json).write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n")
    failed = [r.op for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return 1
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uvenet", description="Underwater video enhancement toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build a paired underwater/clean dataset")
    _common(p)
    p.add_argument("--out")
    p.add_argument("--procedural", type=int, metavar="N", help="generate N procedural clean clips")
    p.add_argument("--clean-root", dest="clean_root", help="directory of clean clips with depth/ subfolders")
    p.add_argument("--crop", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--styles", type=int)
    p.add_argument("--split", help='train:test clip ratio, e.g. "220:60"')
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--motion", type=int)
    p.add_argument("--presets", nargs="+", choices=sorted(synth.PRESETS))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train UVENet on a dataset manifest")
    _common(p)
    p.add_argument("--preset", default="tiny", choices=sorted(P.PRESETS))
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--report")
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--crop-size", dest="crop_size", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--shift-len", dest="shift_len", type=int)
    p.add_argument("--aggregation")
    p.add_argument("--faam-scales", dest="faam_scales", type=int, nargs="*")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="sliding-window enhancement of a frame directory")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--workers", type=int, help="defaults to $UVE_THREADS or 1")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="quality metrics for an enhanced clip")
    _common(p)
    p.add_argument("--enhanced")
    p.add_argument("--gt")
    p.add_argument("--out", help="report path prefix; writes .json and .csv")
    p.add_argument("--name")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--points", type=int)
    p.add_argument("--json")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
