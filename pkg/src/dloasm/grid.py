"""Scalar image grids (depth maps, binary masks), IoU, and PGM/JSON I/O.

Depth grids store the distance from an overhead orthographic camera in
meters; 0 marks no-data pixels. Binary masks store {0, 1}. Pixel (row,
col) covers the world square whose center is
origin + ((col + 0.5) * pitch, (row + 0.5) * pitch, 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, ShapeError


@dataclass
class GridImage:
    values: np.ndarray
    pitch: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DegenerateInput("grid values must be 2D")
        if not self.pitch > 0:
            raise DegenerateInput("pixel pitch must be positive")
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def binary(self) -> np.ndarray:
        return self.values > 0.5

    def like(self, values: np.ndarray) -> "GridImage":
        return GridImage(np.asarray(values, dtype=float), self.pitch, self.origin.copy())

    def pixel_to_world(self, rows, cols):
        """World X-Y coordinates of pixel centers."""
        x = self.origin[0] + (np.asarray(cols) + 0.5) * self.pitch
        y = self.origin[1] + (np.asarray(rows) + 0.5) * self.pitch
        return x, y


def iou(a: GridImage, b: GridImage) -> float:
    """Intersection over union of two binary grids; 0 when the union is empty."""
    if a.values.shape != b.values.shape:
        raise ShapeError(f"mask shapes differ: {a.values.shape} vs {b.values.shape}")
    ma, mb = a.binary(), b.binary()
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def mask_iou_matrix(stack: np.ndarray) -> np.ndarray:
    """Pairwise IoU for a (n, h*w) boolean stack."""
    flat = stack.reshape(stack.shape[0], -1).astype(np.float64)
    inter = flat @ flat.T
    areas = flat.sum(axis=1)
    union = areas[:, None] + areas[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
    return out


def write_pgm16(path, img: GridImage) -> None:
    """16-bit PGM, depth in millimeters, 0 = no data."""
    mm = np.clip(np.rint(img.values * 1000.0), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n65535\n".encode("ascii"))
        f.write(mm.tobytes())


def read_pgm16(path, pitch: float, origin=(0.0, 0.0, 0.0)) -> GridImage:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise DegenerateInput(f"not a binary PGM: {magic!r}")
        dims = []
        while len(dims) < 3:
            line = f.readline()
            if not line:
                raise DegenerateInput("truncated PGM header")
            if line.startswith(b"#"):
                continue
            dims.extend(int(tok) for tok in line.split())
        width, height, maxval = dims[:3]
        dtype = ">u2" if maxval > 255 else np.uint8
        data = np.frombuffer(f.read(), dtype=dtype, count=width * height)
    values = data.reshape(height, width).astype(float) / 1000.0
    return GridImage(values, pitch, np.asarray(origin, dtype=float))


def write_pgm_mask(path, img: GridImage) -> None:
    data = np.where(img.binary(), 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm_mask(path, pitch: float, origin=(0.0, 0.0, 0.0)) -> GridImage:
    img = read_pgm16(path, pitch, origin)
    return img.like((img.values > 0).astype(float))


def grid_to_json(img: GridImage) -> dict:
    return {
        "width": img.width,
        "height": img.height,
        "pitch": img.pitch,
        "origin": [float(v) for v in img.origin],
        "values": [float(v) for v in img.values.ravel()],
    }


def grid_from_json(data: dict) -> GridImage:
    values = np.asarray(data["values"], dtype=float).reshape(data["height"], data["width"])
    return GridImage(values, float(data["pitch"]), np.asarray(data["origin"], dtype=float))
