"""Command-line front end for archive conversion and prompt embedding.

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .archive import LAYOUTS, ArchiveDescriptor
from .convert import convert_features
from .errors import AdapterError
from .extract import extract_patch_features
from .prompts import (
    DEFAULT_BACKGROUND_NAMES,
    DEFAULT_TEMPLATES,
    embed_prompts,
    read_templates_file,
)

PROG = "moc-adapter"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; route it to our own exit code 1 instead
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _read_label_table(path: Path) -> dict[str, str]:
    labels: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise AdapterError(f"{path}:{lineno}: expected slide_id<TAB>class_name, got {line!r}")
        labels[parts[0]] = parts[1]
    if not labels:
        raise AdapterError(f"{path}: empty label table")
    return labels


def _split_csv(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _cmd_convert(args) -> int:
    descriptor = ArchiveDescriptor(
        source=args.source,
        layout=args.layout,
        feature_key=args.feature_key,
        coord_key=None if args.no_coords else args.coord_key,
    )
    labels = _read_label_table(args.labels)
    class_names = _split_csv(args.classes) if args.classes else None
    dataset = convert_features(descriptor, labels, args.out, dataset_id=args.dataset_id,
                               class_names=class_names, threads=args.threads)
    print(f"convert: {len(dataset.slides)} slides, dim {dataset.embedding_dim}, "
          f"classes {', '.join(dataset.class_names)} -> {dataset.manifest_path}")
    if dataset.n_renormalized:
        print(f"convert: re-normalized rows in {dataset.n_renormalized} slides "
              f"(moved > 1e-3, see conversion.tsv)")
    return 0


def _cmd_embed_prompts(args) -> int:
    if args.classes_file:
        class_names = [ln.strip() for ln in args.classes_file.read_text(encoding="utf-8").splitlines()
                       if ln.strip()]
    elif args.classes:
        class_names = _split_csv(args.classes)
    else:
        raise _UsageError(f"{PROG}: one of --classes / --classes-file is required")
    backgrounds = (
        [] if args.no_backgrounds
        else (_split_csv(args.backgrounds) if args.backgrounds else list(DEFAULT_BACKGROUND_NAMES))
    )
    templates = read_templates_file(args.templates_file) if args.templates_file else DEFAULT_TEMPLATES
    out = embed_prompts(class_names, backgrounds, templates, args.encoder, args.out)
    print(f"embed-prompts: {len(class_names)} classes, {len(backgrounds)} backgrounds, "
          f"{len(templates)} templates via {args.encoder} -> {out}")
    return 0


def _cmd_extract(args) -> int:
    out = extract_patch_features(args.patches, args.encoder, args.out,
                                 slide_id=args.slide_id, label=args.label,
                                 coord_scale=args.coord_scale)
    print(f"extract: {args.patches} via {args.encoder} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("convert", help="convert a feature archive into canonical bags")
    p.add_argument("--source", type=Path, required=True, help="archive directory")
    p.add_argument("--layout", required=True, choices=LAYOUTS)
    p.add_argument("--labels", type=Path, required=True,
                   help="TSV label table: slide_id<TAB>class_name")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")
    p.add_argument("--dataset-id", dest="dataset_id", help="default: archive directory name")
    p.add_argument("--classes", help="comma list fixing class-name order (default: sorted)")
    p.add_argument("--feature-key", default="features", dest="feature_key")
    p.add_argument("--coord-key", default="coords", dest="coord_key")
    p.add_argument("--no-coords", action="store_true", dest="no_coords",
                   help="ignore coordinate arrays even when present")
    p.add_argument("--threads", type=int, default=1, help="slides read in parallel")
    p.set_defaults(fn=_cmd_convert)

    p = sub.add_parser("embed-prompts", help="embed class names into a prompt file")
    p.add_argument("--classes", help="comma list of class names")
    p.add_argument("--classes-file", type=Path, dest="classes_file", help="one class name per line")
    p.add_argument("--backgrounds", help=f"default: {', '.join(DEFAULT_BACKGROUND_NAMES)}")
    p.add_argument("--no-backgrounds", action="store_true", dest="no_backgrounds")
    p.add_argument("--templates-file", type=Path, dest="templates_file",
                   help=f"one template per line (default: {DEFAULT_TEMPLATES[0]!r})")
    p.add_argument("--encoder", default="hash-512", help="encoder id (default: hash-512)")
    p.add_argument("--out", type=Path, required=True, help="prompt file to write")
    p.set_defaults(fn=_cmd_embed_prompts)

    p = sub.add_parser("extract", help="embed a directory of patch images into one bag")
    p.add_argument("--patches", type=Path, required=True, help="directory of patch images")
    p.add_argument("--encoder", default="hash-512")
    p.add_argument("--out", type=Path, required=True, help="bag file to write")
    p.add_argument("--slide-id", dest="slide_id", help="default: patch directory name")
    p.add_argument("--label", type=int, help="class index to record (default: unlabeled)")
    p.add_argument("--coord-scale", type=int, default=1, dest="coord_scale",
                   help="multiply filename coordinates (e.g. 224 for grid indices)")
    p.set_defaults(fn=_cmd_extract)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except AdapterError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
