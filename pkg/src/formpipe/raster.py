"""Page images: PGM/PNG decoding, Otsu thresholding and line morphology.

Rasters are plain 2-D ``uint8`` numpy arrays indexed ``[y, x]`` (0 = black,
255 = white).  Binary rasters are ``uint8`` arrays with values in {0, 1},
where 1 marks foreground ink.
"""
from __future__ import annotations

import io
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ImageDecodeError(ValueError):
    """Base class for image decoding failures."""


class MalformedHeader(ImageDecodeError):
    pass


class UnsupportedDepth(ImageDecodeError):
    pass


class TruncatedPayload(ImageDecodeError):
    pass


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pgm_header(data: bytes):
    if data[:2] != b"P5":
        raise MalformedHeader("not a binary PGM (missing P5 magic)")
    pos = 2
    values = []
    for _ in range(3):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise MalformedHeader("incomplete PGM header")
        tok = m.group(1)
        if not tok.isdigit():
            raise MalformedHeader(f"non-numeric PGM header field {tok!r}")
        values.append(int(tok))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise MalformedHeader("missing whitespace after maxval")
    width, height, maxval = values
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    return width, height, maxval, pos + 1


def decode_pgm(data: bytes) -> np.ndarray:
    width, height, maxval, offset = _read_pgm_header(data)
    if maxval > 255 or maxval < 1:
        raise UnsupportedDepth(f"maxval {maxval} is not 8-bit")
    need = width * height
    payload = data[offset : offset + need]
    if len(payload) < need:
        raise TruncatedPayload(f"expected {need} pixel bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def decode_png(data: bytes) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except UnidentifiedImageError as exc:
        raise MalformedHeader(f"not a PNG: {exc}") from exc
    except (OSError, SyntaxError) as exc:
        raise TruncatedPayload(str(exc)) from exc
    if im.mode != "L":
        raise UnsupportedDepth(f"PNG mode {im.mode!r} is not 8-bit grayscale")
    return np.asarray(im, dtype=np.uint8).copy()


def decode_image(data: bytes, fmt: str | None = None) -> np.ndarray:
    """Decode PGM (P5) or grayscale PNG bytes; ``fmt`` is sniffed when omitted."""
    if fmt is None:
        fmt = "png" if data[:8] == b"\x89PNG\r\n\x1a\n" else "pgm"
    if fmt == "pgm":
        return decode_pgm(data)
    if fmt == "png":
        return decode_png(data)
    raise ValueError(f"unknown image format {fmt!r}")


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_pgm(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img))


class OtsuResult(NamedTuple):
    threshold: int
    binary: np.ndarray
    degenerate: bool


def otsu_threshold(img: np.ndarray) -> OtsuResult:
    """Global Otsu threshold; pixels ``<= threshold`` become foreground.

    The between-class variance is compared in exact integer arithmetic so
    ties resolve to the smallest threshold regardless of rounding.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    hist = np.bincount(img.ravel(), minlength=256).astype(np.int64)
    if np.count_nonzero(hist) == 1:
        t = int(img.flat[0])
        return OtsuResult(t, np.ones(img.shape, np.uint8), True)

    total_n = int(hist.sum())
    total_s = int((hist * np.arange(256)).sum())
    n0 = s0 = 0
    best_t, best_num, best_den = 0, -1, 1
    for t in range(256):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * N^2 = (n1*s0 - n0*s1)^2 / (n0*n1)
        num = (n1 * s0 - n0 * (total_s - s0)) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    binary = (img <= best_t).astype(np.uint8)
    return OtsuResult(best_t, binary, False)


@dataclass(frozen=True)
class StructuringElement:
    kind: str  # "horizontal" | "vertical" | "rectangular"
    length_x: int
    length_y: int

    def __post_init__(self):
        if self.length_x < 1 or self.length_y < 1:
            raise ValueError("structuring element lengths must be >= 1")
        if self.kind == "horizontal" and self.length_y != 1:
            raise ValueError("horizontal element must have length_y == 1")
        if self.kind == "vertical" and self.length_x != 1:
            raise ValueError("vertical element must have length_x == 1")
        if self.kind not in ("horizontal", "vertical", "rectangular"):
            raise ValueError(f"unknown element kind {self.kind!r}")

    @classmethod
    def horizontal(cls, length: int) -> "StructuringElement":
        return cls("horizontal", length, 1)

    @classmethod
    def vertical(cls, length: int) -> "StructuringElement":
        return cls("vertical", 1, length)


def _window_count(bin_: np.ndarray, length: int, axis: int) -> np.ndarray:
    """Number of ones inside a centred window of ``length`` along ``axis``.

    Window covers offsets ``-(length // 2) .. length - 1 - length // 2``;
    out-of-bounds pixels count as 0.
    """
    before = length // 2
    after = length - 1 - before
    a = np.moveaxis(bin_.astype(np.int32), axis, -1)
    n = a.shape[-1]
    pad = [(0, 0)] * (a.ndim - 1) + [(before + 1, after)]
    c = np.cumsum(np.pad(a, pad), axis=-1)
    out = c[..., length : length + n] - c[..., 0:n]
    return np.moveaxis(out, -1, axis)


def _erode_1d(bin_, length, axis):
    if length == 1:
        return bin_.copy()
    return (_window_count(bin_, length, axis) == length).astype(np.uint8)


def _dilate_1d(bin_, length, axis):
    if length == 1:
        return bin_.copy()
    return (_window_count(bin_, length, axis) > 0).astype(np.uint8)


def morph(bin_: np.ndarray, op: str, se: StructuringElement) -> np.ndarray:
    """Binary erosion or dilation with a centred box element (zero border)."""
    bin_ = np.asarray(bin_, dtype=np.uint8)
    if op == "erode":
        f = _erode_1d
    elif op == "dilate":
        f = _dilate_1d
    else:
        raise ValueError(f"unknown morphology op {op!r}")
    # a box element is separable for both operations under a zero border
    return f(f(bin_, se.length_x, 1), se.length_y, 0)


def opening(bin_: np.ndarray, se: StructuringElement) -> np.ndarray:
    return morph(morph(bin_, "erode", se), "dilate", se)


class LinesResult(NamedTuple):
    lines: np.ndarray
    threshold: int
    degenerate: bool


def closing(bin_: np.ndarray, se: StructuringElement) -> np.ndarray:
    return morph(morph(bin_, "dilate", se), "erode", se)


def extract_table_lines(img: np.ndarray, h_len: int = 25, v_len: int = 25, fill_len: int = 1) -> LinesResult:
    """Keep only ink runs at least ``h_len`` wide or ``v_len`` tall.

    ``fill_len > 1`` first closes gaps shorter than ``fill_len`` along each
    line direction, so isolated dropout pixels do not notch the lines.
    """
    if h_len < 3 or v_len < 3:
        raise ValueError("h_len and v_len must be >= 3")
    t, bin_, degenerate = otsu_threshold(img)
    if degenerate:
        # a constant page carries no separable line structure
        return LinesResult(np.zeros_like(bin_), t, True)
    hb = closing(bin_, StructuringElement.horizontal(fill_len)) if fill_len > 1 else bin_
    vb = closing(bin_, StructuringElement.vertical(fill_len)) if fill_len > 1 else bin_
    horiz = opening(hb, StructuringElement.horizontal(h_len))
    vert = opening(vb, StructuringElement.vertical(v_len))
    return LinesResult(horiz | vert, t, False)
