"""Embed directories of patch images into bag files."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .encoders import get_encoder
from .errors import NoPatches
from .formats import bag_bytes, normalize_rows

PATCH_SIZE = 224
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tif", ".tiff")

# patch files named "<x>_<y>.<ext>" carry their pixel origin
_COORD_NAME = re.compile(r"^(-?\d+)_(-?\d+)$")


def _parse_coords(paths: list[Path]) -> np.ndarray | None:
    pairs = []
    for path in paths:
        match = _COORD_NAME.match(path.stem)
        if match is None:
            return None
        pairs.append((int(match.group(1)), int(match.group(2))))
    return np.asarray(pairs, dtype=np.int32)


def extract_patch_features(patch_dir, encoder_id: str, out, slide_id: str | None = None,
                           label: int | None = None, coord_scale: int = 1) -> Path:
    """Embed every patch image under ``patch_dir`` into one bag file.

    Files are processed in sorted name order. When every file is named
    ``<x>_<y>.<ext>`` the pairs become patch coordinates (times
    ``coord_scale``, for extractors that store grid indices instead of
    pixel origins); otherwise coordinates are omitted. Re-running writes
    identical bytes as long as the encoder is deterministic.
    """
    patch_dir = Path(patch_dir)
    paths = sorted(
        (p for p in patch_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS),
        key=lambda p: p.name,
    ) if patch_dir.is_dir() else []
    if not paths:
        raise NoPatches(f"no patch images ({', '.join(IMAGE_EXTENSIONS)}) under {patch_dir}")
    encoder = get_encoder(encoder_id)
    rows = np.asarray([encoder.encode_image(p) for p in paths], dtype=np.float64)
    unit, _ = normalize_rows(rows, f"patches under {patch_dir.name}")
    coords = _parse_coords(paths)
    if coords is not None and coord_scale != 1:
        coords = coords * np.int32(coord_scale)
    if slide_id is None:
        slide_id = patch_dir.name
    data = bag_bytes(slide_id, unit, label=label, coords=coords)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    return out
