"""Command-line entry point: ``freetalk <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataError, FreeTalkError

logger = logging.getLogger("freetalk")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file (validated against its schema)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    g.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker pool size")
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="freetalk", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--identities", type=int, dest="n_identities")
    p.add_argument("--sequences", type=int, dest="sequences_per_identity")

    for name, module in (("ats-train", "ats"), ("stm-train", "stm")):
        p = sub.add_parser(name, parents=[common], help=f"train the {module.upper()} module")
        p.set_defaults(module=module)
        p.add_argument("--data", action="append", help="dataset root (repeatable)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--max-steps", type=int, dest="max_steps")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float)

    p = sub.add_parser("animate", parents=[common], help="audio + affect to a mesh sequence")
    p.add_argument("--audio")
    p.add_argument("--emotion")
    p.add_argument("--intensity", type=int)
    p.add_argument("--mesh")
    p.add_argument("--landmark-spec", dest="landmark_spec")
    p.add_argument("--ats", dest="ats_checkpoint")
    p.add_argument("--stm", dest="stm_checkpoint")
    p.add_argument("--landmarks", help="motion JSON; bypasses ATS")
    p.add_argument("--format", choices=("obj", "ply", "packed"))
    p.add_argument("--ddim-steps", type=int, dest="ddim_steps")
    p.add_argument("--dump-attention", action="store_true", default=None, dest="dump_attention")

    p = sub.add_parser("evaluate", parents=[common], help="metric reports against ground truth")
    p.add_argument("--predictions")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--sequence", action="append", dest="sequences")
    p.add_argument("--mouth-region", dest="mouth")
    p.add_argument("--upper-region", dest="upper")
    p.add_argument("--lips-region", dest="lips")

    p = sub.add_parser("export", parents=[common], help="convert a mesh sequence between formats")
    p.add_argument("input", help="packed file or directory of frames")
    p.add_argument("--format", choices=("obj", "ply", "packed"), default="obj")
    return parser


def _config(args) -> dict:
    from .pipeline.config import read_json

    path = getattr(args, "config", None)
    return read_json(path) if path else {}


def _pick(args, *names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _out(args, cfg: dict, default: str) -> Path:
    return Path(getattr(args, "out", None) or cfg.get("out") or default)


def cmd_synth(args) -> int:
    from .pipeline.config import validate, write_resolved
    from .pipeline.synth import SyntheticDatasetSpec, synth_data

    cfg = {**_config(args), **_pick(args, "seed", "n_identities", "sequences_per_identity")}
    validate(cfg, "synth_config")
    spec = SyntheticDatasetSpec.from_json(cfg)
    out = _out(args, {}, "data/synthetic")
    synth_data(spec, out)
    write_resolved(spec.to_json(), out)
    print(out)
    return 0


def cmd_train(args) -> int:
    from .pipeline.config import TrainConfig
    from .pipeline.train import train

    cfg = {**_config(args), **_pick(args, "seed", "out", "workers", "epochs", "max_steps", "batch_size", "lr")}
    if args.data:
        cfg["data"] = args.data
    if cfg.get("module", args.module) != args.module:
        raise ConfigError(f"config is for module {cfg['module']!r}, not {args.module!r}")
    cfg["module"] = args.module
    cfg.setdefault("out", f"runs/{args.module}")
    if "data" not in cfg:
        raise ConfigError("no dataset root: pass --data or set 'data' in the config")
    result = train(TrainConfig.from_json(cfg))
    print(json.dumps({"checkpoint": str(result.checkpoint), "log": str(result.log),
                      "figure": str(result.figure), "best_epoch": result.best_epoch,
                      "final_loss": result.final_loss}))
    return 0


ANIMATE_DEFAULTS = {"emotion": "neutral", "intensity": 1, "format": "obj", "dump_attention": False,
                    "seed": 0, "batch_frames": 32, "ats_checkpoint": None, "landmarks": None,
                    "ddim_steps": None}


def cmd_animate(args) -> int:
    from .pipeline.config import validate, write_resolved
    from .pipeline.infer import animate

    cfg = {**ANIMATE_DEFAULTS, **_config(args),
           **_pick(args, "audio", "emotion", "intensity", "mesh", "landmark_spec", "ats_checkpoint",
                   "stm_checkpoint", "landmarks", "format", "ddim_steps", "dump_attention", "seed")}
    validate(cfg, "animate_config")
    for key in ("mesh", "landmark_spec", "stm_checkpoint"):
        if key not in cfg:
            raise ConfigError(f"animate needs {key.replace('_', '-')}")
    if cfg["landmarks"] is None and "audio" not in cfg:
        raise ConfigError("animate needs --audio (or --landmarks)")
    out = _out(args, {}, "runs/animate")
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    summary = animate(cfg.get("audio"), cfg["emotion"], cfg["intensity"], cfg["mesh"], cfg["landmark_spec"],
                      cfg["ats_checkpoint"], cfg["stm_checkpoint"], out, fmt=cfg["format"], seed=cfg["seed"],
                      ddim_steps=cfg["ddim_steps"], landmarks=cfg["landmarks"],
                      attention=cfg["dump_attention"], batch_frames=cfg["batch_frames"])
    print(json.dumps(summary))
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline.config import validate, write_resolved
    from .pipeline.evaluate import evaluate

    cfg = {"split": "test", "workers": 0, **_config(args),
           **_pick(args, "predictions", "data", "split", "sequences", "workers")}
    masks = {**cfg.get("masks", {}), **_pick(args, "mouth", "upper", "lips")}
    if masks:
        cfg["masks"] = masks
    validate(cfg, "evaluate_config")
    for key in ("predictions", "data"):
        if key not in cfg:
            raise ConfigError(f"evaluate needs --{key}")
    out = _out(args, {}, "runs/evaluate")
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    res = evaluate(cfg["predictions"], cfg["data"], out, cfg["split"], cfg.get("sequences"),
                   cfg.get("masks"), cfg["workers"])
    print(json.dumps(res["summary"]))
    return 0


def cmd_export(args) -> int:
    from .pipeline.config import write_resolved
    from .pipeline.export import export_sequence, read_sequence

    src = Path(args.input)
    if not src.exists():
        raise DataError(f"{src}: no such file or directory")
    verts, faces = read_sequence(src)
    out = _out(args, {}, "runs/export")
    files = export_sequence(verts, faces, out, args.format)
    write_resolved({"input": str(src), "format": args.format}, out)
    print(json.dumps({"frames": int(len(verts)), "files": len(files)}))
    return 0


COMMANDS = {"synth-data": cmd_synth, "ats-train": cmd_train, "stm-train": cmd_train,
            "animate": cmd_animate, "evaluate": cmd_evaluate, "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FreeTalkError as exc:
        print(f"freetalk {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"freetalk {args.command}: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
