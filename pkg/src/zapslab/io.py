"""Image, CSV and manifest I/O.

Raw images are planar little-endian float32 with a sidecar ``<path>.hdr``
holding ``channels height width``. PGM export is 16-bit, one file per
channel, with values clipped to [0, 1] and quantized as ``round(v * 65535)``.
"""

from __future__ import annotations

import csv
import os

import numpy as np


def header_path(path) -> str:
    return f"{path}.hdr"


def write_raw(path, image) -> None:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {image.shape}")
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())
    with open(header_path(path), "w") as fh:
        fh.write("%d %d %d\n" % image.shape)


def read_raw(path) -> np.ndarray:
    with open(header_path(path)) as fh:
        tokens = fh.read().split()
    try:
        shape = tuple(int(tok) for tok in tokens)
    except ValueError:
        raise ValueError(f"{header_path(path)}: malformed header") from None
    if len(shape) != 3 or min(shape) <= 0:
        raise ValueError(f"{header_path(path)}: expected 'channels height width'")
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != int(np.prod(shape)) or os.path.getsize(path) != 4 * payload.size:
        raise ValueError(f"{path}: payload has {payload.size} values, header says {shape}")
    return payload.reshape(shape).astype(np.float64)


def quantize16(values) -> np.ndarray:
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 65535).astype(">u2")


def write_pgm(path, plane) -> None:
    """Write one 2-D plane as a binary 16-bit PGM."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError("PGM export takes a single 2-D plane")
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(quantize16(plane).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(tok) for tok in tokens[1:])
    pixels = np.frombuffer(data[pos + 1 :], dtype=">u2" if maxval > 255 else "u1", count=w * h)
    return pixels.reshape(h, w).astype(np.float64) / maxval


def export_pgm(prefix, image) -> list:
    """Write ``<prefix>_c<k>.pgm`` for each channel; returns the paths."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    paths = []
    for k, plane in enumerate(image):
        path = f"{prefix}_c{k}.pgm"
        write_pgm(path, plane)
        paths.append(path)
    return paths


EPOCH_FIELDS = ("epoch", "loss", "psnr", "ssim")
SUMMARY_FIELDS = ("run_id", "task", "method", "schedule", "epochs", "nfe",
                  "final_psnr", "final_ssim", "final_loss", "wct_seconds")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_epoch_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPOCH_FIELDS)
        for row in rows:
            writer.writerow([row.epoch, _fmt(float(row.loss)), _fmt(float(row.psnr)), _fmt(float(row.ssim))])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in SUMMARY_FIELDS})


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")
