"""Builders for small feature archives used across the adapter tests."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1)[:, None]


def toy_slides(seed: int = 0, d: int = 12) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Four slides with varying patch counts; features f32 unit rows, grid coords."""
    rng = np.random.default_rng(seed)
    slides = {}
    for i, (sid, n) in enumerate([("s_alpha", 7), ("s_beta", 5), ("s_gamma", 9), ("s_delta", 6)]):
        features = unit_rows(rng, n, d).astype(np.float32)
        coords = np.stack([np.arange(n, dtype=np.int32) * 224,
                           np.full(n, i * 224, dtype=np.int32)], axis=1)
        slides[sid] = (features, coords)
    return slides


TOY_LABELS = {"s_alpha": "tumor", "s_beta": "normal", "s_gamma": "tumor", "s_delta": "normal"}


def write_npz_archive(out: Path, slides, feature_key="features", coord_key="coords",
                      with_coords=True) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    for sid, (features, coords) in slides.items():
        arrays = {feature_key: features}
        if with_coords:
            arrays[coord_key] = coords
        np.savez(out / f"{sid}.npz", **arrays)
    return out


def write_h5_archive(out: Path, slides, feature_key="features", coord_key="coords",
                     with_coords=True) -> Path:
    import h5py

    out.mkdir(parents=True, exist_ok=True)
    for sid, (features, coords) in slides.items():
        with h5py.File(out / f"{sid}.h5", "w") as handle:
            handle.create_dataset(feature_key, data=features)
            if with_coords:
                handle.create_dataset(coord_key, data=coords)
    return out


def write_csv_archive(out: Path, slides, with_coords=True) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    for sid, (features, coords) in slides.items():
        n, d = features.shape
        header = ["x", "y"] if with_coords else []
        header += [f"f{j}" for j in range(d)]
        with open(out / f"{sid}.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for i in range(n):
                row = [int(coords[i, 0]), int(coords[i, 1])] if with_coords else []
                row += [repr(float(v)) for v in features[i]]
                writer.writerow(row)
    return out


def write_pt_archive(out: Path, slides, feature_key="features", coord_key="coords") -> Path:
    import torch

    out.mkdir(parents=True, exist_ok=True)
    for sid, (features, coords) in slides.items():
        torch.save({feature_key: torch.from_numpy(features),
                    coord_key: torch.from_numpy(coords)}, out / f"{sid}.pt")
    return out


def write_labels(path: Path, mapping) -> Path:
    lines = [f"{sid}\t{name}" for sid, name in mapping.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
