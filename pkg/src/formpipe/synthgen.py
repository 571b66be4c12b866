"""Deterministic synthetic form pages with exact ground truth.

Pages are drawn in a template frame and then pushed through an optional
warp.  Table lines follow the warp; printed glyphs keep their shape and are
placed at the warped text origin, so crops stay readable by ``FontReader``.
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .template import Field, Template

LAYOUT_CLASSES = ("A", "B", "Other", "Empty")

PAGE_W, PAGE_H = 800, 600
LINE_THICKNESS = 3
GLYPH_SCALE = 2
FIELD_INSET = 6

# 5x7 bitmaps, one string per row.
FONT = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "/": ["00001", "00010", "00010", "00100", "01000", "01000", "10000"],
    "-": ["00000", "00000", "00000", "11111", "00000", "00000", "00000"],
    ".": ["00000", "00000", "00000", "00000", "00000", "01100", "01100"],
}
FONT_BITMAPS = {c: np.array([[int(v) for v in row] for row in rows], np.uint8) for c, rows in FONT.items()}


def glyph_ink(ch: str) -> np.ndarray:
    """Bitmap of ``ch`` cropped to its ink bounding box."""
    g = FONT_BITMAPS[ch]
    ys, xs = np.nonzero(g)
    return g[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


@dataclass(frozen=True)
class LayoutGeometry:
    xs: tuple[int, ...]
    ys: tuple[int, ...]
    bars: tuple[tuple[int, int, int, int], ...] = ()  # filled rectangles x0, y0, x1, y1
    fields: tuple[tuple[str, int, int], ...] = ()  # name, column index, row index


LAYOUTS = {
    "B": LayoutGeometry(
        xs=(60, 260, 460, 620, 740),
        ys=(110, 170, 230, 290, 350, 410),
        fields=(("birth_date", 0, 0), ("death_date", 1, 0), ("age", 2, 0)),
    ),
    "A": LayoutGeometry(
        xs=(100, 400, 700),
        ys=(60, 120, 180, 240, 300, 360, 420, 480, 540),
    ),
    "Other": LayoutGeometry(
        xs=(40, 150, 260, 370, 480, 590, 700, 760),
        ys=(150, 260, 330, 520),
        bars=((40, 30, 420, 60), (450, 30, 760, 60), (40, 80, 760, 95)),
    ),
    "Empty": LayoutGeometry(xs=(), ys=()),
}


@dataclass
class SynthSpec:
    seed: int = 0
    layout_class: str = "B"
    warp: tuple = ("none",)  # ("translation", dx, dy) | ("sinusoidal", amplitude, period)
    noise: float = 0.0
    texts: dict[str, str] = field(default_factory=dict)
    filler_text: bool = True

    def __post_init__(self):
        if self.layout_class not in LAYOUTS:
            raise ValueError(f"unknown layout class {self.layout_class!r}")
        if not 0.0 <= self.noise <= 0.05:
            raise ValueError("noise rate must be in [0, 0.05]")
        if self.warp[0] == "sinusoidal":
            geo = LAYOUTS[self.layout_class]
            cells = np.diff(geo.xs).tolist() + np.diff(geo.ys).tolist()
            if cells and self.warp[1] >= min(cells) / 4:
                raise ValueError("warp amplitude must stay below a quarter cell")
        elif self.warp[0] not in ("none", "translation"):
            raise ValueError(f"unknown warp {self.warp[0]!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "warp" in d:
            d["warp"] = tuple(d["warp"])
        return cls(**d)


def make_warp(warp: tuple):
    kind = warp[0]
    if kind == "none":
        return lambda x, y: (np.asarray(x, float), np.asarray(y, float))
    if kind == "translation":
        dx, dy = float(warp[1]), float(warp[2])
        return lambda x, y: (np.asarray(x, float) + dx, np.asarray(y, float) + dy)
    if kind == "sinusoidal":
        amp, period = float(warp[1]), float(warp[2])

        def f(x, y):
            x = np.asarray(x, float)
            y = np.asarray(y, float)
            return (
                x + amp * np.sin(2 * np.pi * y / period),
                y + amp * np.sin(2 * np.pi * x / period),
            )

        return f
    raise ValueError(f"unknown warp {kind!r}")


@dataclass
class SynthPage:
    image: np.ndarray
    layout_class: str
    landmarks: np.ndarray  # (n, 2) warped line-centre intersections
    fields: dict[str, np.ndarray]  # name -> (4, 2) warped polygon
    texts: dict[str, str]


def _centre(p: int) -> float:
    return p + (LINE_THICKNESS - 1) / 2


def _stamp(ink: np.ndarray, px: np.ndarray, py: np.ndarray, t: int) -> None:
    h, w = ink.shape
    x0 = np.floor(px - (t - 1) / 2 + 0.5).astype(int)
    y0 = np.floor(py - (t - 1) / 2 + 0.5).astype(int)
    for dy in range(t):
        for dx in range(t):
            xx, yy = x0 + dx, y0 + dy
            ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            ink[yy[ok], xx[ok]] = 1


def render_text(ink: np.ndarray, text: str, x: int, y: int, scale: int = GLYPH_SCALE) -> None:
    """Draw ``text`` with its top-left corner at ``(x, y)``."""
    h, w = ink.shape
    cx = x
    for ch in text:
        if ch == " ":
            cx += 4 * scale
            continue
        g = np.kron(glyph_ink(ch), np.ones((scale, scale), np.uint8))
        gh, gw = g.shape
        top = y + (7 * scale - gh) if ch in "-." else y
        if ch == "-":
            top = y + 3 * scale
        ys, xs = np.nonzero(g)
        ys, xs = ys + top, xs + cx
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        ink[ys[ok], xs[ok]] = 1
        cx += gw + 2 * scale


def text_width(text: str, scale: int = GLYPH_SCALE) -> int:
    width = 0
    for ch in text:
        width += 4 * scale if ch == " " else glyph_ink(ch).shape[1] * scale + 2 * scale
    return max(0, width - 2 * scale)


def random_date(rng: np.random.Generator, lo_year: int = 1850, hi_year: int = 1950) -> _dt.date:
    start = _dt.date(lo_year, 1, 1).toordinal()
    stop = _dt.date(hi_year, 12, 31).toordinal()
    return _dt.date.fromordinal(int(rng.integers(start, stop + 1)))


def format_date(d: _dt.date, style: int = 0) -> str:
    if style == 0:
        return f"{d.day}/{d.month}-{d.year}"
    if style == 1:
        return f"{d.day:02d}-{d.month:02d}-{d.year}"
    return f"{d.day}.{d.month}.{d.year}"


def random_record_texts(rng: np.random.Generator) -> dict[str, str]:
    birth = random_date(rng, 1820, 1900)
    age_days = int(rng.integers(0, 100 * 365))
    death = _dt.date.fromordinal(birth.toordinal() + age_days)
    age = death.year - birth.year - ((death.month, death.day) < (birth.month, birth.day))
    style = int(rng.integers(0, 3))
    return {
        "birth_date": format_date(birth, style),
        "death_date": format_date(death, style),
        "age": str(age),
    }


def _cell_box(geo: LayoutGeometry, col: int, row: int) -> tuple[float, float, float, float]:
    x0 = geo.xs[col] + LINE_THICKNESS + FIELD_INSET
    x1 = geo.xs[col + 1] - FIELD_INSET
    y0 = geo.ys[row] + LINE_THICKNESS + FIELD_INSET
    y1 = geo.ys[row + 1] - FIELD_INSET
    return x0, y0, x1, y1


def _bar_corners(geo: LayoutGeometry) -> list[tuple[float, float]]:
    pts = []
    for x0, y0, x1, y1 in geo.bars:
        pts += [(x0, y0), (x1 - 1, y0), (x0, y1 - 1), (x1 - 1, y1 - 1)]
    return [(float(x), float(y)) for x, y in pts]


def layout_template(layout_class: str = "B") -> Template:
    """Template (anchors + field polygons) in the unwarped page frame."""
    geo = LAYOUTS[layout_class]
    anchors = [(_centre(x), _centre(y)) for y in geo.ys for x in geo.xs] + _bar_corners(geo)
    fields = []
    for name, col, row in geo.fields:
        x0, y0, x1, y1 = _cell_box(geo, col, row)
        fields.append(Field(name, np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], float)))
    return Template(layout_class, np.array(anchors, float).reshape(-1, 2), fields, (PAGE_W, PAGE_H))


def generate_page(spec: SynthSpec) -> SynthPage:
    rng = np.random.default_rng(spec.seed)
    geo = LAYOUTS[spec.layout_class]
    warp = make_warp(spec.warp)
    ink = np.zeros((PAGE_H, PAGE_W), np.uint8)
    t = LINE_THICKNESS

    if geo.xs:
        y_top, y_bot = _centre(geo.ys[0]), _centre(geo.ys[-1])
        x_left, x_right = _centre(geo.xs[0]), _centre(geo.xs[-1])
        for x in geo.xs:
            ys = np.arange(y_top, y_bot + 0.25, 0.25)
            _stamp(ink, *warp(np.full_like(ys, _centre(x)), ys), t)
        for y in geo.ys:
            xs = np.arange(x_left, x_right + 0.25, 0.25)
            _stamp(ink, *warp(xs, np.full_like(xs, _centre(y))), t)
    for x0, y0, x1, y1 in geo.bars:
        yy, xx = np.mgrid[y0:y1:0.5, x0:x1:0.5]
        wx, wy = warp(xx.ravel(), yy.ravel())
        _stamp(ink, wx, wy, 1)

    texts = dict(spec.texts)
    if spec.layout_class == "B":
        defaults = random_record_texts(rng)
        for k, v in defaults.items():
            texts.setdefault(k, v)

    polygons = {}
    text_cells = {(c, r): n for n, c, r in geo.fields}
    for name, col, row in geo.fields:
        x0, y0, x1, y1 = _cell_box(geo, col, row)
        qx, qy = warp(np.array([x0, x1, x1, x0]), np.array([y0, y0, y1, y1]))
        polygons[name] = np.column_stack([qx, qy])
    # printed content, centred in the cell at its warped origin
    if geo.xs and spec.filler_text:
        for r in range(len(geo.ys) - 1):
            for c in range(len(geo.xs) - 1):
                name = text_cells.get((c, r))
                if name is not None:
                    text = texts.get(name, "")
                elif rng.random() < 0.5:
                    text = str(int(rng.integers(1, 10 ** int(rng.integers(1, 4)))))
                else:
                    continue
                x0, y0, x1, y1 = _cell_box(geo, c, r)
                tw, th = text_width(text), 7 * GLYPH_SCALE
                if tw > x1 - x0:
                    if name is not None:
                        raise ValueError(f"text {text!r} does not fit field {name!r}")
                    continue
                ox, oy = warp(np.array([(x0 + x1 - tw) / 2]), np.array([(y0 + y1 - th) / 2]))
                render_text(ink, text, int(np.floor(ox[0] + 0.5)), int(np.floor(oy[0] + 0.5)))

    if spec.noise > 0:
        flip = rng.random(ink.shape) < spec.noise
        ink[flip] = rng.integers(0, 2, size=int(flip.sum()), dtype=np.uint8)

    image = np.where(ink == 1, 0, 255).astype(np.uint8)
    if geo.xs:
        gx, gy = np.meshgrid([_centre(x) for x in geo.xs], [_centre(y) for y in geo.ys])
        lx, ly = warp(gx.ravel(), gy.ravel())
        landmarks = np.column_stack([lx, ly])
    else:
        landmarks = np.empty((0, 2))
    if geo.bars:
        bx, by = np.array(_bar_corners(geo)).T
        landmarks = np.vstack([landmarks, np.column_stack(warp(bx, by))])
    return SynthPage(image, spec.layout_class, landmarks, polygons, {k: texts[k] for k in polygons})


def corpus_specs(n: int, seed: int, classes=LAYOUT_CLASSES, noise: float = 0.002, max_amp: float = 3.0) -> list[SynthSpec]:
    """Balanced, seeded mix of layout classes with random jitter and warps."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        cls = classes[i % len(classes)]
        kind = rng.integers(0, 3)
        if kind == 0:
            warp = ("none",)
        elif kind == 1:
            warp = ("translation", int(rng.integers(-15, 16)), int(rng.integers(-15, 16)))
        else:
            warp = ("sinusoidal", float(rng.uniform(0.5, max_amp)), float(rng.uniform(400, 900)))
        specs.append(SynthSpec(seed=int(rng.integers(0, 2**31)), layout_class=cls, warp=warp, noise=noise))
    return specs


def random_grid(seed: int, n_range=(3, 8), thickness_range=(1, 3)):
    """Binary image of a random axis-aligned line grid and its intersections.

    Returns ``(lines, points, thickness)``; ``points`` are line-centre
    crossings as ``(x, y)`` rows.
    """
    rng = np.random.default_rng(seed)
    nx, ny = rng.integers(n_range[0], n_range[1] + 1, size=2)
    t = int(rng.integers(thickness_range[0], thickness_range[1] + 1))
    xs = 30 + np.cumsum(np.r_[0, rng.integers(25, 60, nx - 1)])
    ys = 30 + np.cumsum(np.r_[0, rng.integers(25, 60, ny - 1)])
    img = np.zeros((int(ys[-1]) + 40, int(xs[-1]) + 40), np.uint8)
    for x in xs:
        img[ys[0] : ys[-1] + t, x : x + t] = 1
    for y in ys:
        img[y : y + t, xs[0] : xs[-1] + t] = 1
    c = (t - 1) / 2
    pts = np.array([(x + c, y + c) for y in ys for x in xs], float)
    return img, pts, t


def warp_benchmark(seed: int, n_side: int = 10, size: float = 500.0, amplitude: float = 5.0, outliers: float = 0.1):
    """Point-set registration fixture: a grid, its sinusoidal warp, and uniform outliers.

    Returns ``(template, target, warped_template)``; ``target`` holds the
    warped grid plus ``outliers * n`` uniform points in shuffled order.
    """
    rng = np.random.default_rng(seed)
    g = np.linspace(size / 20, size - size / 20, n_side)
    Y = np.array([(x, y) for y in g for x in g])
    ph = rng.uniform(0, 2 * np.pi, 2)
    period = size
    Xw = Y + amplitude * np.column_stack(
        [np.sin(2 * np.pi * Y[:, 1] / period + ph[0]), np.sin(2 * np.pi * Y[:, 0] / period + ph[1])]
    )
    extra = rng.uniform(0, size, size=(int(round(outliers * len(Y))), 2))
    X = np.vstack([Xw, extra])
    return Y, X[rng.permutation(len(X))], Xw


# ---- glyph reading ---------------------------------------------------------

def _longest_run(a: np.ndarray, axis: int) -> np.ndarray:
    """Length of the longest run of ones along ``axis``."""
    a = np.moveaxis(a.astype(np.int64), axis, -1)
    run = np.zeros(a.shape[:-1], np.int64)
    best = np.zeros_like(run)
    for i in range(a.shape[-1]):
        run = (run + 1) * a[..., i]
        np.maximum(best, run, out=best)
    return best


class FontReader:
    """Reads text printed with ``FONT`` out of a (possibly line-cluttered) crop."""

    def __init__(self, scale: int = GLYPH_SCALE):
        self.scale = scale
        self._glyphs = {c: glyph_ink(c) for c in FONT_BITMAPS}

    def _clean(self, crop: np.ndarray):
        """Return ``(seg, ink)``: speck-free ink for segmentation and closed ink for matching."""
        from scipy import ndimage

        ink = (np.asarray(crop) < 128).astype(np.uint8)
        if ink.size == 0:
            return ink, ink
        # ruled lines are long unbroken runs; printed text always has glyph gaps
        long_run = 20 * self.scale
        ink[_longest_run(ink, axis=1) > long_run, :] = 0
        ink[:, _longest_run(ink, axis=0) > long_run] = 0
        # strokes are scale x scale blocks: fill pinholes, then drop specks stuck to them
        se = np.ones((self.scale, self.scale), bool)
        closed = ndimage.binary_closing(ink, se).astype(np.uint8)
        seg = ndimage.binary_opening(closed, se).astype(np.uint8)
        lab, n = ndimage.label(seg, structure=np.ones((3, 3)))
        if n == 0:
            return seg, seg
        sizes = ndimage.sum(seg, lab, index=np.arange(1, n + 1))
        border = set(np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))) - {0}
        keep = np.zeros(n + 1, bool)
        for i in range(1, n + 1):
            keep[i] = i not in border and sizes[i - 1] >= self.scale * self.scale
        return keep[lab].astype(np.uint8), closed

    def _classify(self, blob: np.ndarray) -> str | None:
        s = self.scale
        h, w = blob.shape
        best, best_d = None, None
        for ch, g in self._glyphs.items():
            gh, gw = g.shape
            if abs(h - gh * s) > s or abs(w - gw * s) > s:
                continue
            # resample the blob onto the glyph grid; edge dropouts only shift cell bounds
            ry = np.linspace(0, h, gh + 1).round().astype(int)
            rx = np.linspace(0, w, gw + 1).round().astype(int)
            cells = np.array(
                [[blob[ry[r] : ry[r + 1], rx[c] : rx[c + 1]].mean() for c in range(gw)] for r in range(gh)]
            )
            d = int(np.abs(g.astype(int) - (cells >= 0.5)).sum())
            if best_d is None or d < best_d:
                best, best_d = ch, d
        if best is None or best_d > max(2, self._glyphs[best].size // 8):
            return None
        return best

    def read(self, crop: np.ndarray) -> str:
        seg, ink = self._clean(crop)
        cols = np.nonzero(seg.any(axis=0))[0]
        if len(cols) == 0:
            return ""
        # glyphs are 2*scale apart; narrower gaps are strokes lost to dropouts
        groups, start = [], cols[0]
        for a, b in zip(cols[:-1], cols[1:]):
            if b - a - 1 > self.scale:
                groups.append((start, a + 1))
                start = b
        groups.append((start, cols[-1] + 1))
        out = []
        for x0, x1 in groups:
            rows = np.nonzero(seg[:, x0:x1].any(axis=1))[0]
            blob = ink[rows[0] : rows[-1] + 1, x0:x1]
            ch = self._classify(blob)
            if ch is not None:
                out.append(ch)
        return "".join(out)
