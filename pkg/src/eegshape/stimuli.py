"""Ground-truth shape images: rasterization, [-1, 1] normalization and PGM I/O."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eeg import CLASSES

HEIGHT, WIDTH = 40, 56
_EDGE_EPS = 1e-9


@dataclass
class ShapeImage:
    pixels: np.ndarray  # [H, W]
    label: int
    domain: str = "raw"  # "raw" in [0, 1] or "normalized" in [-1, 1]


def _label_index(label) -> int:
    if isinstance(label, (int, np.integer)):
        if not 0 <= label < len(CLASSES):
            raise ValueError(f"class index {label} out of range 0..{len(CLASSES) - 1}")
        return int(label)
    if label not in CLASSES:
        raise ValueError(f"unknown shape {label!r}; valid: {', '.join(CLASSES)}")
    return CLASSES.index(label)


def star_vertices(cx, cy, outer, inner_ratio=0.4, points=5) -> np.ndarray:
    """Alternating outer/inner vertices, first one pointing up (negative y)."""
    ang = -np.pi / 2 + np.arange(2 * points) * np.pi / points
    rad = np.where(np.arange(2 * points) % 2 == 0, outer, outer * inner_ratio)
    return np.column_stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)])


def shape_polygon(label, width: int = WIDTH, height: int = HEIGHT) -> np.ndarray | None:
    """Vertex list (x, y) in pixel coordinates, or ``None`` for the circle."""
    name = CLASSES[_label_index(label)]
    cx, cy = width / 2, height / 2
    x0, x1 = 0.1 * width, 0.9 * width
    y0, y1 = 0.1 * height, 0.9 * height
    if name == "circle":
        return None
    if name == "star":
        return star_vertices(cx, cy, 0.4 * min(width, height))
    if name == "triangle":
        return np.array([[cx, y0], [x1, y1], [x0, y1]])
    if name == "rhombus":
        return np.array([[cx, y0], [x1, cy], [cx, y1], [x0, cy]])
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def scanline_fill(vertices: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd scan-line fill sampled at pixel centres.

    Each row's centre line is intersected with every non-horizontal edge
    (half-open in y, so shared vertices count once); pixels whose centre lies
    between an entering and leaving crossing, edges included, are set.
    """
    img = np.zeros((height, width), dtype=np.float32)
    xs_c = np.arange(width) + 0.5
    nxt = np.roll(vertices, -1, axis=0)
    for row in range(height):
        yc = row + 0.5
        hits = []
        for (xa, ya), (xb, yb) in zip(vertices, nxt):
            if ya == yb:
                continue
            if min(ya, yb) <= yc < max(ya, yb):
                hits.append(xa + (yc - ya) * (xb - xa) / (yb - ya))
        hits.sort()
        for left, right in zip(hits[::2], hits[1::2]):
            img[row, (xs_c >= left - _EDGE_EPS) & (xs_c <= right + _EDGE_EPS)] = 1.0
    return img


def rasterize(label, width: int = WIDTH, height: int = HEIGHT) -> ShapeImage:
    """Filled white shape on black, centred in the middle 80 % of the canvas."""
    idx = _label_index(label)
    poly = shape_polygon(idx, width, height)
    if poly is None:
        yy, xx = np.mgrid[0:height, 0:width] + 0.5
        r = 0.4 * min(width, height)
        inside = (xx - width / 2) ** 2 + (yy - height / 2) ** 2 <= r * r + _EDGE_EPS
        pixels = inside.astype(np.float32)
    else:
        pixels = scanline_fill(poly, width, height)
    return ShapeImage(pixels, idx, "raw")


def normalize_image(img: ShapeImage) -> ShapeImage:
    """Max-min scale to [0, 1], then map to [-1, 1]; constant images become 0."""
    p = img.pixels.astype(np.float64)
    lo, hi = p.min(), p.max()
    if hi == lo:
        return ShapeImage(np.zeros_like(img.pixels, dtype=np.float32), img.label, "normalized")
    r = (p - lo) / (hi - lo)
    return ShapeImage((2 * r - 1).astype(np.float32), img.label, "normalized")


def canonical_shapes(width: int = WIDTH, height: int = HEIGHT) -> np.ndarray:
    """Normalized images of all five classes, ``[5, H, W]`` in class order."""
    return np.stack([normalize_image(rasterize(k, width, height)).pixels for k in range(len(CLASSES))])


# --------------------------------------------------------------------------
# PGM

def to_bytes(pixels: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit grey levels, ``round(255·p)``."""
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)


def pgm_bytes(gray: np.ndarray) -> bytes:
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(gray, np.uint8).tobytes()


def write_pgm(path, pixels: np.ndarray, domain: str = "raw") -> None:
    """Write a raw-domain ([0, 1]) or normalized-domain ([-1, 1]) image as binary PGM."""
    p = np.asarray(pixels, dtype=np.float64)
    if domain == "normalized":
        p = (p + 1) / 2
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(to_bytes(p)))


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM as ``uint8 [H, W]``."""
    data = open(path, "rb").read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
