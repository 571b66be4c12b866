"""Form templates: JSON I/O, fitting onto landmarks, and field cropping."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .registration import CpdConfig, RegistrationResult, apply_transform, cpd_register

log = logging.getLogger(__name__)


class TemplateError(ValueError):
    pass


@dataclass
class Field:
    name: str
    polygon: np.ndarray  # (4, 2) x, y


@dataclass
class Template:
    layout_class: str
    anchors: np.ndarray  # (n, 2)
    fields: list[Field]
    reference_size: tuple[int, int]

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, float).reshape(-1, 2)
        if len(self.anchors) < 3:
            raise TemplateError("a template needs at least 3 anchors")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise TemplateError(f"duplicate field names in {names}")
        for f in self.fields:
            f.polygon = np.asarray(f.polygon, float).reshape(-1, 2)
            if f.polygon.shape != (4, 2):
                raise TemplateError(f"field {f.name!r} polygon needs 4 vertices")
            if abs(polygon_area(f.polygon)) == 0:
                raise TemplateError(f"field {f.name!r} has zero area")

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def load_template(data: bytes | str) -> Template:
    try:
        d = json.loads(data)
        return Template(
            layout_class=str(d["layout_class"]),
            anchors=np.array(d["anchors"], float),
            fields=[Field(f["name"], np.array(f["polygon"], float)) for f in d["fields"]],
            reference_size=tuple(int(v) for v in d["reference_size"]),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise TemplateError(f"malformed template: {exc}") from exc


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)


def save_template(t: Template) -> bytes:
    """Canonical JSON: fixed key order, one line per field, integral values as ints."""
    dump = lambda v: json.dumps(v, separators=(", ", ": "))
    pts = lambda a: [[_num(x), _num(y)] for x, y in a]
    lines = [
        "{",
        f'  "layout_class": {dump(t.layout_class)},',
        f'  "reference_size": {dump(list(t.reference_size))},',
        f'  "anchors": {dump(pts(t.anchors))},',
        '  "fields": [',
    ]
    for i, f in enumerate(t.fields):
        sep = "," if i < len(t.fields) - 1 else ""
        lines.append(f"    {dump({'name': f.name, 'polygon': pts(f.polygon)})}{sep}")
    lines += ["  ]", "}", ""]
    return "\n".join(lines).encode()


@dataclass
class FittedTemplate:
    source_doc: str
    warped_fields: list[Field]
    registration: RegistrationResult


def fit_template(
    t: Template,
    landmarks: np.ndarray,
    cfg: CpdConfig | None = None,
    doc_id: str = "",
    max_sigma2: float | None = 25.0,
) -> FittedTemplate:
    """Register the template anchors onto page landmarks and warp the fields.

    ``max_sigma2`` is a sanity bound (pixels squared) on the final mixture
    variance; exceeding it only logs a warning.
    """
    landmarks = np.asarray(landmarks, float)[:, :2]
    if len(landmarks) < 3:
        raise ValueError("fit_template needs at least 3 landmarks")
    reg = cpd_register(t.anchors, landmarks, cfg)
    if max_sigma2 is not None and reg.sigma2 > max_sigma2:
        log.warning("%s: template fit sigma2=%.2f px^2 exceeds %.2f", doc_id, reg.sigma2, max_sigma2)
    warped = [Field(f.name, apply_transform(reg.transform, f.polygon)) for f in t.fields]
    return FittedTemplate(doc_id, warped, reg)


@dataclass
class FieldImage:
    doc_id: str
    field_name: str
    crop: np.ndarray | None  # None marks a field that fell off the page
    origin: tuple[int, int] = (0, 0)

    @property
    def missing(self) -> bool:
        return self.crop is None


def crop_box(polygon: np.ndarray, width: int, height: int):
    """Half-open integer box ``(x0, y0, x1, y1)`` enclosing the polygon, clamped to the page."""
    x0 = math.floor(polygon[:, 0].min())
    y0 = math.floor(polygon[:, 1].min())
    x1 = math.ceil(polygon[:, 0].max())
    y1 = math.ceil(polygon[:, 1].max())
    x0, x1 = max(x0, 0), min(x1, width)
    y0, y1 = max(y0, 0), min(y1, height)
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def extract_fields(page: np.ndarray, fit: FittedTemplate) -> list[FieldImage]:
    h, w = page.shape
    out = []
    for f in fit.warped_fields:
        box = crop_box(f.polygon, w, h)
        if box is None:
            log.info("%s: field %s outside page", fit.source_doc, f.name)
            out.append(FieldImage(fit.source_doc, f.name, None))
            continue
        x0, y0, x1, y1 = box
        out.append(FieldImage(fit.source_doc, f.name, page[y0:y1, x0:x1].copy(), (x0, y0)))
    return out
