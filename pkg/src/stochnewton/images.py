"""Grayscale image input/output for the denoising experiment.

Supported formats: binary PGM (``P5``, maxval up to 255) and a plain-text
matrix whose first line holds ``m1 m2`` followed by ``m1 * m2`` row-major
whitespace-separated reals.  PGM intensities are scaled to ``[0, 1]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` header tokens, skipping ``#`` comments; return tokens and body offset."""
    tokens = []
    i = 0
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    body = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    return body.reshape(h, w).astype(float) / maxval


def write_pgm(path, image: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(image, float) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: first line must be 'm1 m2'")
        m1, m2 = int(header[0]), int(header[1])
        values = np.array(fh.read().split(), dtype=float)
    if values.size != m1 * m2:
        raise ValueError(f"{path}: expected {m1 * m2} values, found {values.size}")
    return values.reshape(m1, m2)


def write_matrix(path, image: np.ndarray) -> None:
    image = np.asarray(image, float)
    m1, m2 = image.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m1} {m2}\n")
        for row in image:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_image(path) -> np.ndarray:
    """Dispatch on content: ``P5`` magic means PGM, anything else the text matrix."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    return read_pgm(path) if magic == b"P5" else read_matrix(path)


def synthetic_image(m1: int, m2: int, noise_sigma: float, rng) -> np.ndarray:
    """Smooth blob-and-bar test pattern with additive Gaussian noise.

    ``noise_sigma`` is in 8-bit units; the noisy image is clipped to
    ``[0, 255]`` and returned scaled to ``[0, 1]``.
    """
    yy, xx = np.meshgrid(np.linspace(-1, 1, m1), np.linspace(-1, 1, m2), indexing="ij")
    clean = 160.0 * np.exp(-4.0 * (xx ** 2 + yy ** 2)) + 60.0 * (np.abs(xx - 0.5) < 0.15) + 20.0
    noisy = clean + noise_sigma * rng.standard_normal((m1, m2))
    return np.clip(noisy, 0.0, 255.0) / 255.0
