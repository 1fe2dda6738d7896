"""Image datasets: a synthetic multi-band generator and a raw-tensor loader.

Raw format
----------
A JSON manifest lists samples; each sample lists its band files::

    {
      "format": "satjscc-raw-1",
      "target": {"height": 16, "width": 16},          # optional
      "samples": [
        {"id": "tile-0", "split": "train",             # split optional
         "bands": [{"file": "tile-0_b0.f32", "dtype": "<f4", "shape": [16, 16],
                    "resolution_m": 10, "max": 10000.0}, ...]}
      ]
    }

Band files are headerless row-major little-endian float32 planes, paths
relative to the manifest. Bands whose shape differs from the target grid
(default: the largest band of the sample) are resampled with bicubic
convolution; all bands are then divided by their ``max``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..seeding import make_rng

MANIFEST_FORMAT = "satjscc-raw-1"
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray                      # (N, bands, H, W), float32 in [0, 1]
    split: np.ndarray                       # (N,) entries of SPLITS
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.split = np.asarray(self.split, dtype="<U5")
        if self.images.ndim != 4:
            raise DatasetError(f"images must be (N, bands, H, W), got {self.images.shape}")
        if self.split.shape != (self.images.shape[0],):
            raise DatasetError("need one split label per image")
        if not set(self.split.tolist()) <= set(SPLITS):
            raise DatasetError(f"unknown split labels {set(self.split.tolist()) - set(SPLITS)}")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DatasetError("pixel values must lie in [0, 1]")

    def subset(self, name: str) -> np.ndarray:
        return self.images[self.split == name]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def fingerprint(self) -> str:
        digest = hashlib.sha256(np.ascontiguousarray(self.images).tobytes())
        digest.update("".join(self.split.tolist()).encode())
        return digest.hexdigest()


def assign_splits(count: int, seed: int, fractions=(0.8, 0.1, 0.1)) -> np.ndarray:
    """Deterministic shuffled split assignment with the given proportions."""
    order = make_rng(seed, "splits").permutation(count)
    n_train = int(round(fractions[0] * count))
    n_val = int(round(fractions[1] * count))
    labels = np.empty(count, dtype="<U5")
    labels[order[:n_train]] = "train"
    labels[order[n_train:n_train + n_val]] = "val"
    labels[order[n_train + n_val:]] = "test"
    return labels


def _unit_field(rng, size, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def generate_synthetic_dataset(count: int = 512, bands: int = 3, size: int = 16,
                               seed: int = 0) -> Dataset:
    """Smooth, band-correlated random images.

    Each image mixes a shared low-pass field (scene structure) with a
    per-band low-pass field, then applies a per-band gain and offset.
    """
    if min(count, bands, size) < 1:
        raise ValueError("count, bands and size must be positive")
    rng = make_rng(seed, "synthetic")
    images = np.empty((count, bands, size, size), dtype=np.float32)
    for n in range(count):
        shared = _unit_field(rng, size, rng.uniform(1.0, 2.5))
        rho = rng.uniform(0.6, 0.9)
        for b in range(bands):
            own = _unit_field(rng, size, rng.uniform(1.0, 2.0))
            mix = rho * shared + np.sqrt(1 - rho * rho) * own
            gain = rng.uniform(0.08, 0.16)
            offset = rng.uniform(0.3, 0.7)
            images[n, b] = np.clip(offset + gain * mix, 0.0, 1.0)
    provenance = {"kind": "synthetic", "seed": seed, "count": count, "bands": bands, "size": size}
    return Dataset(images, assign_splits(count, seed), provenance)


# -- bicubic resampling --------------------------------------------------------

def _keys_weights(t):
    """Keys cubic-convolution weights (a = -1/2) for fractional offsets t."""
    t = np.asarray(t)[:, None]
    d = np.abs(np.array([-1.0, 0.0, 1.0, 2.0])[None, :] - t)
    w = np.where(d <= 1, 1.5 * d ** 3 - 2.5 * d ** 2 + 1,
                 np.where(d < 2, -0.5 * d ** 3 + 2.5 * d ** 2 - 4 * d + 2, 0.0))
    return w


def _extend(line, pad):
    # quadratic extrapolation keeps polynomials up to degree 2 exact at the border
    out = list(line)
    for _ in range(pad):
        out.insert(0, 3 * out[0] - 3 * out[1] + out[2])
        out.append(3 * out[-1] - 3 * out[-2] + out[-3])
    return np.array(out)


def _resample_axis(a: np.ndarray, new: int, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    old = a.shape[-1]
    if old < 3:
        raise DatasetError("bicubic resampling needs at least 3 samples per axis")
    # pixel-centre alignment
    pos = (np.arange(new) + 0.5) * old / new - 0.5
    base = np.floor(pos).astype(int)
    weights = _keys_weights(pos - base)
    pad = 3
    ext = np.apply_along_axis(_extend, -1, a, pad)
    idx = base[:, None] + np.arange(-1, 3)[None, :] + pad
    out = np.einsum("...ij,ij->...i", ext[..., idx], weights)
    return np.moveaxis(out, -1, axis)


def resample_bicubic(band: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    band = np.asarray(band, dtype=np.float64)
    if band.shape == tuple(shape):
        return band
    return _resample_axis(_resample_axis(band, shape[0], 0), shape[1], 1)


# -- raw tensor files ----------------------------------------------------------

def load_raw_dataset(manifest_path, seed: int = 0) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{manifest_path}: cannot read manifest ({exc})") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DatasetError(f"{manifest_path}: format must be {MANIFEST_FORMAT!r}")
    samples = manifest.get("samples") or []
    if not samples:
        raise DatasetError(f"{manifest_path}: no samples")
    root = manifest_path.parent
    target = manifest.get("target")
    images, splits = [], []
    for s_idx, sample in enumerate(samples):
        sid = sample.get("id", f"#{s_idx}")
        bands = sample.get("bands") or []
        if not bands:
            raise DatasetError(f"sample {sid}: no bands")
        shapes = [tuple(int(v) for v in b["shape"]) for b in bands]
        grid = (int(target["height"]), int(target["width"])) if target else max(shapes, key=lambda t: t[0] * t[1])
        planes = []
        for b_idx, (band, shape) in enumerate(zip(bands, shapes)):
            where = f"sample {sid} band {b_idx} ({band.get('file')})"
            if band.get("dtype", "<f4") != "<f4":
                raise DatasetError(f"{where}: only little-endian float32 ('<f4') is supported")
            path = root / band["file"]
            try:
                raw = np.fromfile(path, dtype="<f4")
            except OSError as exc:
                raise DatasetError(f"{where}: {exc}") from None
            if raw.size != shape[0] * shape[1]:
                raise DatasetError(f"{where}: expected {shape[0]}x{shape[1]} values, found {raw.size}")
            peak = float(band.get("max", 1.0))
            if not peak > 0:
                raise DatasetError(f"{where}: normalization max must be positive")
            plane = raw.reshape(shape)
            if not np.all(np.isfinite(plane)) or plane.min() < 0 or plane.max() > peak:
                raise DatasetError(f"{where}: values outside [0, {peak}]")
            if shape != grid:
                plane = np.clip(resample_bicubic(plane, grid), 0.0, peak)
            planes.append(plane / peak if peak != 1.0 else plane)
        images.append(np.stack(planes))
        splits.append(sample.get("split"))
    if len({im.shape for im in images}) != 1:
        raise DatasetError("samples resolve to different shapes; set 'target' in the manifest")
    if any(s is None for s in splits):
        split = assign_splits(len(images), seed)
    else:
        split = np.array(splits)
    provenance = {"kind": "external", "manifest": str(manifest_path)}
    return Dataset(np.stack(images).astype(np.float32), split, provenance)


def write_raw_dataset(dataset: Dataset, directory, prefix: str = "img") -> Path:
    """Export in the raw format (one file per band, max 1.0). Returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = []
    for n, (image, split) in enumerate(zip(dataset.images, dataset.split)):
        bands = []
        for b, plane in enumerate(image):
            name = f"{prefix}{n:05d}_b{b}.f32"
            plane.astype("<f4").tofile(directory / name)
            bands.append({"file": name, "dtype": "<f4", "shape": list(plane.shape),
                          "resolution_m": 10, "max": 1.0})
        samples.append({"id": f"{prefix}{n:05d}", "split": str(split), "bands": bands})
    manifest = {"format": MANIFEST_FORMAT, "provenance": dataset.provenance, "samples": samples}
    path = directory / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)
    return path


def adjacent_correlation(images: np.ndarray) -> float:
    """Mean horizontal lag-1 sample correlation over all image planes."""
    planes = images.reshape(-1, images.shape[-2], images.shape[-1]).astype(np.float64)
    values = []
    for p in planes:
        a, b = p[:, :-1].ravel(), p[:, 1:].ravel()
        if a.std() > 0 and b.std() > 0:
            values.append(np.corrcoef(a, b)[0, 1])
    return float(np.mean(values))
