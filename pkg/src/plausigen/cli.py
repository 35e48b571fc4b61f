"""Command-line entry point: ``plausigen {generate,split,stats,score,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import DEFAULT_CONFIG, Config
from .dataset import (
    dataset_stats,
    load_manifest,
    resolve_types,
    resplit_manifest,
    run_generation,
    score_from_metadata,
    split_scenes,
)
from .errors import CorruptMetadata, PlausigenError
from .scene import load_scene

logger = logging.getLogger("plausigen")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _scene_files(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.json"))
    if not files:
        raise UsageError(f"no scene files in {directory}")
    return files


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plausigen", description="Generate plausible/implausible scene image datasets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="render camera sequences for every scene")
    gen.add_argument("--scenes", type=Path, required=True, help="directory of scene JSON files")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--type", default="all", help="one implausibility type, or 'all'")
    gen.add_argument("--per-scene", type=_positive_int, default=1, help="camera attempts per scene and type")
    gen.add_argument("--seed", type=_nonneg_int, default=0)
    gen.add_argument("--config", type=Path, help="TOML file overriding configuration keys")
    gen.add_argument("--train", type=_nonneg_int)
    gen.add_argument("--test", type=_nonneg_int)

    sp = sub.add_parser("split", help="scene-level train/test split")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenes", type=Path, help="directory of scene JSON files")
    src.add_argument("--manifest", type=Path, help="re-split an existing manifest")
    sp.add_argument("--train", type=_nonneg_int, required=True)
    sp.add_argument("--test", type=_nonneg_int, required=True)
    sp.add_argument("--seed", type=_nonneg_int, default=0)
    sp.add_argument("--out", type=Path, help="write the result here instead of stdout")

    st = sub.add_parser("stats", help="balance statistics of a generated dataset")
    st.add_argument("--manifest", type=Path, required=True)

    sc = sub.add_parser("score", help="recompute an image's plausibility score")
    sc.add_argument("--image-meta", type=Path, required=True)

    va = sub.add_parser("validate", help="schema and invariant check of scene files")
    va.add_argument("--scenes", type=Path, required=True)
    return parser


def _cmd_generate(args) -> int:
    if "," in args.type or "+" in args.type:
        raise UsageError("one implausibility type per run (or 'all'); types are never mixed in a sequence")
    try:
        types = resolve_types(args.type)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    config = Config.from_toml(args.config) if args.config else DEFAULT_CONFIG
    files = _scene_files(args.scenes)
    manifest, results = run_generation(files, args.out, types, args.per_scene, args.seed, config,
                                       args.train, args.test)
    for fail in manifest["failures"]:
        logger.warning("%s", json.dumps(fail))
    failed_scenes = [r.scene for r in results if r.attempted and not r.images]
    print(json.dumps({"images": len(manifest["images"]), "failures": len(manifest["failures"]),
                      "failed_scenes": failed_scenes, "manifest": str(args.out / "manifest.json")}))
    if failed_scenes:
        _emit_error("generation_failed", "no images for some scenes", scenes=failed_scenes)
        return EXIT_FAILED
    return EXIT_OK


def _cmd_split(args) -> int:
    if args.manifest:
        doc = resplit_manifest(load_manifest(args.manifest), args.train, args.test, args.seed)
    else:
        names = [load_scene(p).name for p in _scene_files(args.scenes)]
        doc = split_scenes(names, args.train, args.test, args.seed)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_stats(args) -> int:
    print(json.dumps(dataset_stats(args.manifest), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_score(args) -> int:
    try:
        doc = json.loads(args.image_meta.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptMetadata(f"{args.image_meta}: {exc}") from exc
    print(score_from_metadata(doc))
    return EXIT_OK


def _cmd_validate(args) -> int:
    files = _scene_files(args.scenes)
    problems = []
    for path in files:
        try:
            load_scene(path)
        except PlausigenError as exc:
            problems.append({"file": str(path), "error": exc.kind, "message": str(exc)})
    print(json.dumps({"scenes": len(files), "invalid": problems}))
    if problems:
        _emit_error("schema_error", f"{len(problems)} invalid scene file(s)", files=[p["file"] for p in problems])
        return EXIT_FAILED
    return EXIT_OK


COMMANDS = {"generate": _cmd_generate, "split": _cmd_split, "stats": _cmd_stats,
            "score": _cmd_score, "validate": _cmd_validate}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except PlausigenError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
