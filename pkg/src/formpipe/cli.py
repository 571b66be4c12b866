"""Command-line entry point and the three-stage pipeline:
layout classification, template fitting with field cutting, transcription."""
from __future__ import annotations

import argparse
import atexit
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .classify import SvmModel, cross_validate, svm_predict, svm_train
from .cluster import TsneConfig, annotation_sample, dbscan, group_indicator, read_features, tsne_embed
from .decode import DEFAULT_BEAM, ExternalModel, FontLookupModel, beam_search
from .features import Codebook, DescriptorConfig, descriptor_matrix, encode_bow, extract_descriptors, train_codebook, bow_from_descriptors
from .landmark import HarrisConfig, find_landmarks
from .metrics import EvalPair, date_component_accuracy, sequence_accuracy, token_accuracy
from .raster import extract_table_lines, read_image, write_pgm
from .registration import CpdConfig, cpd_register
from .synthgen import SynthSpec, corpus_specs, generate_page, layout_template
from .template import extract_fields, fit_template, load_template, save_template
from .tokens import TokenizeError, TokenSequence, detokenize, dictionary, parse_date, tokenize
from .verify import Record, consistency_filter, kde_density

log = logging.getLogger("formpipe")

DEFAULT_FIELDS = {"birth_date": "date", "death_date": "date", "age": "age"}


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestRow:
    doc_id: str
    image_path: str
    group_id: str = ""
    label: str = ""
    truth_text: str = ""


def parse_manifest(data: bytes | str, base_dir: str | os.PathLike | None = None) -> list[ManifestRow]:
    """Rows of a CSV manifest; relative image paths resolve against ``base_dir``."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(data))
    cols = reader.fieldnames or []
    missing = {"doc_id", "image_path"} - set(cols)
    if missing:
        raise ManifestError(f"manifest lacks columns {sorted(missing)}")
    base = Path(base_dir) if base_dir is not None else None
    seen = set()
    rows = []
    for rec in reader:
        doc = rec["doc_id"]
        if not doc:
            raise ManifestError(f"empty doc_id on line {reader.line_num}")
        if doc in seen:
            raise ManifestError(f"duplicate doc_id {doc!r}")
        seen.add(doc)
        path = rec["image_path"]
        if base is not None and path and not os.path.isabs(path):
            path = str(base / path)
        rows.append(ManifestRow(doc, path, rec.get("group_id") or "", rec.get("label") or "", rec.get("truth_text") or ""))
    return rows


def read_manifest(path) -> list[ManifestRow]:
    with open(path, "rb") as fh:
        return parse_manifest(fh.read(), Path(path).parent)


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "image_path", "group_id", "label"])
        for r in rows:
            w.writerow([r.doc_id, r.image_path, r.group_id, r.label])


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class LinesConfig:
    h_len: int = 25
    v_len: int = 25
    fill_len: int = 3


@dataclass(frozen=True)
class PipelineConfig:
    template: str | None = None  # None: the built-in synthetic layout-B template
    svm: str | None = None  # layout model from layout-train; None skips classification
    target_class: str = "B"
    fields: dict = field(default_factory=lambda: dict(DEFAULT_FIELDS))
    backend: str = "font"  # font | external
    model_cmd: str | None = None
    model_timeout: float = 10.0
    beam_width: int = DEFAULT_BEAM
    seed: int = 0
    jobs: int = 1
    save_fields: bool = True
    max_sigma2: float = 25.0
    lines: LinesConfig = LinesConfig()
    harris: HarrisConfig = HarrisConfig(rel_threshold=0.4)
    cpd: CpdConfig = CpdConfig()
    descriptor: DescriptorConfig = DescriptorConfig()

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.backend not in ("font", "external"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "external" and not self.model_cmd:
            raise ValueError("external backend needs model_cmd")
        for name, kind in self.fields.items():
            if kind not in ("date", "age"):
                raise ValueError(f"field {name!r} has unknown dictionary {kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        blocks = {"lines": LinesConfig, "harris": HarrisConfig, "cpd": CpdConfig, "descriptor": DescriptorConfig}
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        for k, typ in blocks.items():
            if k in d:
                d[k] = typ(**d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | None) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    with open(path) as fh:
        return PipelineConfig.from_dict(json.load(fh))


def load_layout_model(path) -> tuple[SvmModel, Codebook, DescriptorConfig]:
    with open(path) as fh:
        d = json.load(fh)
    cb = Codebook.from_json(json.dumps(d["codebook"]))
    desc = DescriptorConfig(**d.get("descriptor", {}))
    return SvmModel.from_json(json.dumps(d)), cb, desc


# ---------------------------------------------------------------- pipeline


@dataclass
class DocResult:
    doc_id: str
    layout: str = ""
    low_confidence: bool = False
    values: dict = field(default_factory=dict)  # field -> canonical text ("" if unreadable)
    tokens: dict = field(default_factory=dict)  # field -> token ids
    sigma2: float | None = None
    error: str | None = None
    stage: str | None = None
    timings: dict = field(default_factory=dict)


class _Resources:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        if cfg.template:
            with open(cfg.template, "rb") as fh:
                self.template = load_template(fh.read())
        else:
            self.template = layout_template(cfg.target_class)
        if cfg.svm:
            self.svm, self.codebook, self.desc = load_layout_model(cfg.svm)
        else:
            self.svm = self.codebook = self.desc = None
        self._models = {}

    def model(self, kind: str):
        if kind not in self._models:
            d = dictionary(kind)
            if self.cfg.backend == "external":
                self._models[kind] = ExternalModel(self.cfg.model_cmd, d, self.cfg.model_timeout)
            else:
                self._models[kind] = FontLookupModel(d)
        return self._models[kind]

    def close(self):
        for m in self._models.values():
            if hasattr(m, "close"):
                m.close()
        self._models.clear()


def _decode_field(res: _Resources, kind: str, crop, path) -> tuple[str, tuple[int, ...]]:
    m = res.model(kind)
    ctx = str(path) if res.cfg.backend == "external" else crop
    best, _ = beam_search(m, ctx, res.cfg.beam_width)
    if best.truncated:
        return "", best.ids
    try:
        return detokenize(best.sequence()), best.ids
    except TokenizeError:
        return "", best.ids


def process_document(row: ManifestRow, res: _Resources, field_dir: Path | None) -> DocResult:
    cfg = res.cfg
    out = DocResult(row.doc_id)
    stage = "read"
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        out.timings[name] = now - clock
        clock = now

    try:
        img = read_image(row.image_path)
        lap("read")
        if res.svm is not None:
            stage = "layout"
            pred = svm_predict(res.svm, encode_bow(img, res.codebook, res.desc))
            out.layout, out.low_confidence = str(pred.label), pred.low_confidence
            lap("layout")
        else:
            out.layout = cfg.target_class
        if out.layout != cfg.target_class:
            return out
        stage = "lines"
        lines = extract_table_lines(img, cfg.lines.h_len, cfg.lines.v_len, cfg.lines.fill_len).lines
        lap("lines")
        stage = "landmarks"
        lm = find_landmarks(lines, cfg.harris)
        lap("landmarks")
        stage = "register"
        fit = fit_template(res.template, lm, cfg.cpd, row.doc_id, cfg.max_sigma2)
        out.sigma2 = fit.registration.sigma2
        lap("register")
        stage = "extract"
        crops = {f.field_name: f for f in extract_fields(img, fit)}
        lap("extract")
        stage = "decode"
        for name, kind in cfg.fields.items():
            fi = crops.get(name)
            if fi is None or fi.missing:
                out.values[name], out.tokens[name] = "", ()
                continue
            path = None
            if field_dir is not None:
                path = field_dir / f"{row.doc_id}__{name}.pgm"
                write_pgm(path, fi.crop)
            out.values[name], out.tokens[name] = _decode_field(res, kind, fi.crop, path)
        lap("decode")
    except Exception as exc:  # per-document isolation
        out.error = f"{type(exc).__name__}: {exc}"
        out.stage = stage
        log.error("%s failed at %s: %s", row.doc_id, stage, out.error)
    return out


_WORKER: dict = {}


def _worker_init(cfg: PipelineConfig, field_dir):
    logging.getLogger().setLevel(logging.WARNING)
    _WORKER["res"] = _Resources(cfg)
    _WORKER["dir"] = field_dir
    atexit.register(_WORKER["res"].close)


def _worker_run(row: ManifestRow) -> DocResult:
    return process_document(row, _WORKER["res"], _WORKER["dir"])


@dataclass
class RunReport:
    results: list[DocResult]
    config: PipelineConfig

    @property
    def failures(self) -> list[DocResult]:
        return [r for r in self.results if r.error]

    @property
    def records(self) -> list[DocResult]:
        return [r for r in self.results if not r.error]

    def summary(self, manifest: list[ManifestRow] | None = None) -> dict:
        layouts: dict[str, int] = {}
        for r in self.records:
            layouts[r.layout] = layouts.get(r.layout, 0) + 1
        fstats = {}
        for name in self.config.fields:
            got = [r.values.get(name) for r in self.records if name in r.values]
            fstats[name] = {"attempted": len(got), "decoded": sum(bool(v) for v in got)}
        out = {
            "documents": len(self.results),
            "records": len(self.records),
            "failed": len(self.failures),
            "failures": [{"doc_id": r.doc_id, "stage": r.stage, "error": r.error} for r in self.failures],
            "layouts": dict(sorted(layouts.items())),
            "fields": fstats,
            "version": __version__,
        }
        if manifest and all(m.label for m in manifest) and self.config.svm:
            truth = {m.doc_id: m.label for m in manifest}
            pairs = [(truth[r.doc_id], r.layout) for r in self.records]
            out["layout_accuracy"] = sum(a == b for a, b in pairs) / len(pairs) if pairs else None
        return out


def run_pipeline(manifest: list[ManifestRow], cfg: PipelineConfig, outdir=None) -> RunReport:
    """Process every document; failures are recorded, never raised.

    With ``outdir`` writes ``records.csv``, ``tokens.csv``, ``report.json``
    (all deterministic) and ``timings.json``.
    """
    field_dir = None
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        if cfg.save_fields:
            field_dir = outdir / "fields"
            field_dir.mkdir(exist_ok=True)
    res = _Resources(cfg)  # load everything up front so config errors are fatal
    if cfg.jobs > 1 and len(manifest) > 1:
        res.close()
        with ProcessPoolExecutor(cfg.jobs, initializer=_worker_init, initargs=(cfg, field_dir)) as ex:
            results = list(ex.map(_worker_run, manifest, chunksize=max(1, len(manifest) // (4 * cfg.jobs))))
    else:
        try:
            results = [process_document(r, res, field_dir) for r in manifest]
        finally:
            res.close()
    rep = RunReport(results, cfg)
    if outdir is not None:
        write_records(outdir / "records.csv", rep.records, list(cfg.fields))
        write_tokens(outdir / "tokens.csv", rep.records, list(cfg.fields))
        with open(outdir / "report.json", "w") as fh:
            json.dump(rep.summary(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(outdir / "timings.json", "w") as fh:
            json.dump({r.doc_id: r.timings for r in results}, fh, indent=2)
            fh.write("\n")
    return rep


def write_records(path, results: list[DocResult], field_names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "layout", "low_confidence"] + field_names)
        for r in results:
            w.writerow([r.doc_id, r.layout, int(r.low_confidence)] + [r.values.get(f, "") for f in field_names])


def write_tokens(path, results: list[DocResult], field_names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "field", "token_ids"])
        for r in results:
            for f in field_names:
                if f in r.tokens:
                    w.writerow([r.doc_id, f, " ".join(map(str, r.tokens[f]))])


# ------------------------------------------------------------ subcommands


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_rows(path, header, rows) -> None:
    fh = open(path, "w", newline="") if path and path != "-" else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _dump_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path and path != "-":
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _num(v):
    return repr(float(v))


def _field_kind(name: str, override: str | None) -> str:
    if override and override != "auto":
        return override
    return "age" if "age" in name.lower() and "date" not in name.lower() else "date"


def cmd_synth(a, cfg):
    with open(a.spec) as fh:
        spec = json.load(fh)
    if isinstance(spec, dict) and "corpus" in spec:
        c = dict(spec["corpus"])
        specs = corpus_specs(int(c.get("n", 40)), int(c.get("seed", a.seed)), tuple(c.get("classes", ("A", "B", "Other", "Empty"))),
                             float(c.get("noise", 0.002)), float(c.get("max_amp", 3.0)))
    elif isinstance(spec, list):
        specs = [SynthSpec.from_dict(s) for s in spec]
    else:
        specs = [SynthSpec.from_dict(spec)]
    out = Path(a.outdir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(exist_ok=True)
    rows, truth = [], []
    for i, s in enumerate(specs):
        doc = f"doc{i:05d}"
        page = generate_page(s)
        write_pgm(out / "pages" / f"{doc}.pgm", page.image)
        rows.append(ManifestRow(doc, f"pages/{doc}.pgm", f"g{i // 2:05d}", page.layout_class))
        for k, v in sorted(page.texts.items()):
            truth.append([doc, k, v])
        with open(out / "truth" / f"{doc}.json", "w") as fh:
            json.dump({"spec": asdict(s), "layout_class": page.layout_class, "landmarks": page.landmarks.tolist(),
                       "fields": {k: v.tolist() for k, v in page.fields.items()}, "texts": page.texts}, fh, sort_keys=True)
    write_manifest(out / "manifest.csv", rows)
    _write_rows(out / "truth.csv", ["doc_id", "field", "text"], truth)
    (out / "template_B.json").write_bytes(save_template(layout_template("B")))
    log.info("wrote %d pages to %s", len(specs), out)
    return 0


def cmd_lines(a, cfg):
    img = read_image(a.input)
    r = extract_table_lines(img, a.hlen, a.vlen, a.fill)
    write_pgm(a.out, np.where(r.lines > 0, 0, 255).astype(np.uint8))
    if r.degenerate:
        log.warning("degenerate threshold: page has no contrast")
    return 0


def _as_binary(img):
    vals = np.unique(img)
    if set(vals.tolist()) <= {0, 1}:
        return img.astype(np.uint8)
    return (img < 128).astype(np.uint8)


def cmd_landmarks(a, cfg):
    img = read_image(a.input)
    if a.from_page:
        lines = extract_table_lines(img, cfg.lines.h_len, cfg.lines.v_len, cfg.lines.fill_len).lines
    else:
        lines = _as_binary(img)
    hc = replace(cfg.harris, **{k: v for k, v in (("rel_threshold", a.rel_threshold), ("nms_radius", a.nms_radius)) if v is not None})
    pts = find_landmarks(lines, hc)
    _write_rows(a.out, ["x", "y", "response"], [[_num(x), _num(y), _num(r)] for x, y, r in pts])
    return 0


def _read_points(path) -> np.ndarray:
    rows = _read_csv(path)
    return np.array([[float(r["x"]), float(r["y"])] for r in rows], float).reshape(-1, 2)


def cmd_register(a, cfg):
    if a.template:
        with open(a.template, "rb") as fh:
            src = load_template(fh.read()).anchors
    else:
        src = _read_points(a.source)
    tgt = _read_points(a.landmarks)
    r = cpd_register(src, tgt, cfg.cpd)
    _dump_json(a.out, r.transform.to_dict())
    log.info("sigma2=%.4g px^2 after %d iterations (converged=%s)", r.sigma2, r.iterations, r.converged)
    return 0


def cmd_extract(a, cfg):
    img = read_image(a.page)
    with open(a.template, "rb") as fh:
        t = load_template(fh.read())
    lines = extract_table_lines(img, cfg.lines.h_len, cfg.lines.v_len, cfg.lines.fill_len).lines
    lm = find_landmarks(lines, cfg.harris)
    doc = a.doc or Path(a.page).stem
    fit = fit_template(t, lm, cfg.cpd, doc, cfg.max_sigma2)
    out = Path(a.outdir)
    out.mkdir(parents=True, exist_ok=True)
    missing = 0
    for fi in extract_fields(img, fit):
        if fi.missing:
            missing += 1
            log.warning("%s: field %s is off the page", doc, fi.field_name)
            continue
        write_pgm(out / f"{doc}__{fi.field_name}.pgm", fi.crop)
    return 0


def _manifest_descriptors(rows, desc_cfg):
    return [descriptor_matrix(extract_descriptors(read_image(r.image_path), desc_cfg)) for r in rows]


def cmd_bow_train(a, cfg):
    rows = read_manifest(a.manifest)
    D = _manifest_descriptors(rows, cfg.descriptor)
    cb = train_codebook(np.vstack(D), a.M, a.seed)
    Path(a.out).write_text(cb.to_json())
    log.info("codebook: M=%d from %d descriptors, %d iterations", cb.M, sum(len(d) for d in D), cb.iterations)
    return 0


def cmd_bow_encode(a, cfg):
    cb = Codebook.from_json(Path(a.codebook).read_text())
    v = encode_bow(read_image(a.input), cb, cfg.descriptor)
    _write_rows(a.out, [f"f{i}" for i in range(cb.M)], [[_num(x) for x in v.freqs]])
    return 0


def cmd_layout_train(a, cfg):
    rows = read_manifest(a.manifest)
    if any(not r.label for r in rows):
        raise ManifestError("layout-train needs a label for every row")
    cb = Codebook.from_json(Path(a.codebook).read_text())
    X = np.vstack([bow_from_descriptors(d, cb).freqs for d in _manifest_descriptors(rows, cfg.descriptor)])
    y = [r.label for r in rows]
    rep = cross_validate(X, y, scheme=a.scheme, k=a.k, seed=a.seed)
    m = svm_train(X, y, rep.chosen["C"], rep.chosen["gamma"], a.seed)
    d = json.loads(m.to_json())
    d["codebook"] = json.loads(cb.to_json())
    d["descriptor"] = asdict(cfg.descriptor)
    d["cv"] = rep.to_dict()
    _dump_json(a.out, d)
    log.info("chosen C=%g gamma=%g", rep.chosen["C"], rep.chosen["gamma"])
    return 0


def cmd_layout_predict(a, cfg):
    rows = read_manifest(a.manifest)
    m, cb, desc = load_layout_model(a.svm)
    out = []
    for r in rows:
        p = svm_predict(m, encode_bow(read_image(r.image_path), cb, desc))
        out.append([r.doc_id, p.label, int(p.low_confidence)] + [_num(s) for s in p.scores])
    _write_rows(a.out, ["doc_id", "label", "low_confidence"] + [f"score_{c}" for c in m.classes], out)
    return 0


def cmd_cluster(a, cfg):
    fs = read_features(a.features)
    lab = dbscan(fs.X, a.eps, a.minpts, normalize=a.normalize)
    _write_rows(a.out, ["item_id", "group_id", "cluster"], [[i, g, int(l)] for i, g, l in zip(fs.item_ids, fs.group_ids, lab)])
    if a.sample_out:
        s = annotation_sample(lab, a.per_cluster, a.seed, fs.item_ids)
        _dump_json(a.sample_out, {"clusters": {str(k): v for k, v in s.clusters.items()}, "noise": s.noise})
    if a.positive is not None and a.groups_out:
        pos = {int(c) for c in a.positive.split(",") if c}
        flags = group_indicator(lab, fs.group_ids, pos)
        _write_rows(a.groups_out, ["group_id", "positive"], [[g, int(v)] for g, v in sorted(flags.items())])
    return 0


def cmd_tsne(a, cfg):
    fs = read_features(a.features)
    r = tsne_embed(fs.X, a.seed, TsneConfig(perplexity=a.perplexity, iters=a.iters))
    _write_rows(a.out, ["item_id", "x", "y"], [[i, _num(x), _num(y)] for i, (x, y) in zip(fs.item_ids, r.Y)])
    if a.kl_out:
        _write_rows(a.kl_out, ["iteration", "kl"], [[k, _num(v)] for k, v in enumerate(r.kl)])
    return 0


def cmd_tokenize(a, cfg):
    if a.text is not None:
        seq = tokenize(a.text, a.dict)
        print(" ".join(map(str, seq.ids)))
        print(" ".join(seq.names()))
        return 0
    out, bad = [], 0
    for r in _read_csv(a.input):
        try:
            seq = tokenize(r["text"], _field_kind(r["field"], a.dict))
        except TokenizeError as exc:
            bad += 1
            log.warning("%s/%s: %s", r["doc_id"], r["field"], exc)
            continue
        out.append([r["doc_id"], r["field"], " ".join(map(str, seq.ids))])
    _write_rows(a.out, ["doc_id", "field", "token_ids"], out)
    return 1 if bad else 0


def cmd_decode(a, cfg):
    files = sorted(Path(a.fields).glob("*.pgm"))
    models = {}
    out = []
    try:
        for p in files:
            doc, _, name = p.stem.partition("__")
            kind = _field_kind(name, a.dict)
            if kind not in models:
                d = dictionary(kind)
                models[kind] = ExternalModel(a.model_cmd, d, a.timeout) if a.model_cmd else FontLookupModel(d)
            ctx = str(p) if a.model_cmd else read_image(p)
            best, _ = beam_search(models[kind], ctx, a.beam)
            text = ""
            if not best.truncated:
                try:
                    text = detokenize(best.sequence())
                except TokenizeError:
                    pass
            out.append([doc, name, text, " ".join(map(str, best.ids)), _num(best.log_prob)])
    finally:
        for m in models.values():
            if hasattr(m, "close"):
                m.close()
    _write_rows(a.out, ["doc_id", "field", "text", "token_ids", "log_prob"], out)
    return 0


def _pred_sequence(row: dict | None, kind: str):
    d = dictionary(kind)
    if row is None:
        return (d.start_id, d.end_id)
    if row.get("token_ids"):
        return tuple(int(t) for t in row["token_ids"].split())
    try:
        return tokenize(row.get("text", ""), kind).ids
    except TokenizeError:
        return (d.start_id, d.end_id)


def evaluate(pred_rows: list[dict], truth_rows: list[dict], mode: str = "tokens", ms=(0, 1, 2), dict_kind: str | None = None) -> dict:
    pred = {(r["doc_id"], r["field"]): r for r in pred_rows}
    report: dict = {"mode": mode, "n_truth": len(truth_rows), "missing_predictions": 0, "untokenizable_truth": 0}
    if mode == "dates":
        pairs = []
        eq = 0
        for t in truth_rows:
            if _field_kind(t["field"], dict_kind) != "date":
                continue
            p = pred.get((t["doc_id"], t["field"]))
            report["missing_predictions"] += p is None
            ptxt = p.get("text", "") if p else ""
            pairs.append((t["text"], ptxt))
            try:
                a, b = parse_date(t["text"]), parse_date(ptxt)
                eq += (a.day, a.month, a.year.lstrip("0") or "0", len(a.year)) == (b.day, b.month, b.year.lstrip("0") or "0", len(b.year))
            except TokenizeError:
                pass
        if pairs:
            comp = date_component_accuracy(pairs)
            report["components"] = {k: {"value": v.value, "se": v.se, "n": v.n} for k, v in comp.items()}
            report["equivalent"] = eq / len(pairs)
        report["n"] = len(pairs)
        return report
    by_kind: dict[str, list] = {}
    for t in truth_rows:
        kind = _field_kind(t["field"], dict_kind)
        try:
            truth = tokenize(t["text"], kind)
        except TokenizeError:
            report["untokenizable_truth"] += 1
            continue
        p = pred.get((t["doc_id"], t["field"]))
        report["missing_predictions"] += p is None
        by_kind.setdefault(kind, []).append(EvalPair(truth, _pred_sequence(p, kind), t["doc_id"], t["field"]))
    report["kinds"] = {}
    for kind, pairs in sorted(by_kind.items()):
        ta = token_accuracy(pairs)
        entry = {"n": len(pairs), "token_accuracy": {"value": ta.value, "se": ta.se, "n": ta.n}}
        for m in ms:
            sa = sequence_accuracy(pairs, m)
            entry[f"sequence_accuracy_{m}"] = {"value": sa.value, "se": sa.se, "n": sa.n}
        report["kinds"][kind] = entry
    return report


def cmd_eval(a, cfg):
    ms = tuple(int(m) for m in a.m.split(",") if m != "")
    rep = evaluate(_read_csv(a.pred), _read_csv(a.truth), a.mode, ms, a.dict)
    _dump_json(a.out, rep)
    return 0


def _maybe_date(s: str):
    if not s:
        return None
    try:
        return parse_date(s)
    except TokenizeError:
        return None


def _maybe_int(s: str):
    s = (s or "").strip()
    return int(s) if s.isdigit() else None


def cmd_verify(a, cfg):
    recs = [
        Record(r["doc_id"], _maybe_date(r.get(a.birth_col, "")), _maybe_date(r.get(a.death_col, "")), _maybe_int(r.get(a.age_col, "")))
        for r in _read_csv(a.records)
    ]
    _dump_json(a.out, consistency_filter(recs, a.tolerance).to_dict())
    return 0


def cmd_kde(a, cfg):
    with open(a.values, newline="") as fh:
        vals = []
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                vals.append(float(row[a.column]))
            except ValueError:
                continue  # header or non-numeric cell
    lo, hi, n = (float(x) for x in a.grid.split(","))
    bw = a.bandwidth if a.bandwidth == "auto" else float(a.bandwidth)
    x, f = kde_density(vals, bw, (lo, hi, int(n)), restrict=not a.no_restrict)
    _write_rows(a.out, ["x", "density"], [[_num(u), _num(v)] for u, v in zip(x, f)])
    return 0


def cmd_run(a, cfg):
    over = {}
    for k in ("template", "svm", "model_cmd", "backend", "target_class"):
        v = getattr(a, k, None)
        if v is not None:
            over[k] = v
    if a.beam is not None:
        over["beam_width"] = a.beam
    cfg = replace(cfg, **over)
    rows = read_manifest(a.manifest)
    rep = run_pipeline(rows, cfg, a.outdir)
    log.info("%d documents, %d records, %d failures", len(rows), len(rep.records), len(rep.failures))
    return 1 if rep.failures else 0


# ------------------------------------------------------------------ parser


def _global_flags(p: argparse.ArgumentParser, sub: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if sub else {}
    p.add_argument("--seed", type=int, **({"default": 0} if not sub else kw), help="random seed")
    p.add_argument("--jobs", type=int, **({"default": None} if not sub else kw), help="parallel documents")
    p.add_argument("--config", **({"default": None} if not sub else kw), help="pipeline config JSON")
    p.add_argument("--log-level", **({"default": "INFO"} if not sub else kw), help="DEBUG, INFO, WARNING, ...")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="formpipe", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    _global_flags(p, False)
    sp = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        s = sp.add_parser(name, help=help_)
        _global_flags(s, True)
        s.set_defaults(func=fn)
        return s

    s = add("synth", cmd_synth, "generate a synthetic page corpus")
    s.add_argument("--spec", required=True)
    s.add_argument("--outdir", required=True)

    s = add("lines", cmd_lines, "extract table lines from a page")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--hlen", type=int, default=25)
    s.add_argument("--vlen", type=int, default=25)
    s.add_argument("--fill", type=int, default=1)
    s.add_argument("--out", required=True)

    s = add("landmarks", cmd_landmarks, "detect line intersections")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--from-page", action="store_true", help="input is a page, not a line image")
    s.add_argument("--rel-threshold", type=float)
    s.add_argument("--nms-radius", type=int)
    s.add_argument("--out", default="-")

    s = add("register", cmd_register, "register template anchors onto landmarks")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--template")
    g.add_argument("--source", help="CSV of x,y source points")
    s.add_argument("--landmarks", required=True)
    s.add_argument("--out", default="-")

    s = add("extract", cmd_extract, "fit a template to a page and cut field images")
    s.add_argument("--page", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--outdir", required=True)
    s.add_argument("--doc")

    s = add("bow-train", cmd_bow_train, "train a visual-word codebook")
    s.add_argument("--manifest", required=True)
    s.add_argument("--M", type=int, default=200)
    s.add_argument("--out", required=True)

    s = add("bow-encode", cmd_bow_encode, "encode one page as a word histogram")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--out", default="-")

    s = add("layout-train", cmd_layout_train, "train the layout classifier")
    s.add_argument("--manifest", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--scheme", choices=("kfold", "loo"), default="kfold")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--out", required=True)

    s = add("layout-predict", cmd_layout_predict, "classify page layouts")
    s.add_argument("--manifest", required=True)
    s.add_argument("--svm", required=True)
    s.add_argument("--out", default="-")

    s = add("cluster", cmd_cluster, "DBSCAN over a feature CSV")
    s.add_argument("--features", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--minpts", type=int, required=True)
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--out", default="-")
    s.add_argument("--sample-out")
    s.add_argument("--per-cluster", type=int, default=10)
    s.add_argument("--positive", help="comma-separated positive cluster ids")
    s.add_argument("--groups-out")

    s = add("tsne", cmd_tsne, "2-D t-SNE embedding of a feature CSV")
    s.add_argument("--features", required=True)
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--out", default="-")
    s.add_argument("--kl-out")

    s = add("tokenize", cmd_tokenize, "convert text to token ids")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--text")
    g.add_argument("--in", dest="input", help="CSV doc_id,field,text")
    s.add_argument("--dict", choices=("date", "age", "auto"), default="auto")
    s.add_argument("--out", default="-")

    s = add("decode", cmd_decode, "transcribe field images")
    s.add_argument("--fields", required=True)
    s.add_argument("--model-cmd", help="external model command; default is the built-in font reader")
    s.add_argument("--dict", choices=("date", "age", "auto"), default="auto")
    s.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    s.add_argument("--timeout", type=float, default=10.0)
    s.add_argument("--out", default="-")

    s = add("eval", cmd_eval, "score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--mode", choices=("tokens", "dates"), default="tokens")
    s.add_argument("--m", default="0,1,2")
    s.add_argument("--dict", choices=("date", "age", "auto"), default="auto")
    s.add_argument("--out", default="-")

    s = add("verify", cmd_verify, "check transcribed age against the dates")
    s.add_argument("--records", required=True)
    s.add_argument("--tolerance", type=int, default=1)
    s.add_argument("--birth-col", default="birth_date")
    s.add_argument("--death-col", default="death_date")
    s.add_argument("--age-col", default="age")
    s.add_argument("--out", default="-")

    s = add("kde", cmd_kde, "kernel density of a column of values")
    s.add_argument("--values", required=True)
    s.add_argument("--column", type=int, default=0)
    s.add_argument("--bandwidth", default="auto")
    s.add_argument("--grid", default="0,100,201")
    s.add_argument("--no-restrict", action="store_true")
    s.add_argument("--out", default="-")

    s = add("run", cmd_run, "run the full pipeline over a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--outdir", required=True)
    s.add_argument("--template")
    s.add_argument("--svm")
    s.add_argument("--model-cmd")
    s.add_argument("--backend", choices=("font", "external"))
    s.add_argument("--target-class")
    s.add_argument("--beam", type=int)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(a.log_level).upper(), logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(a.config)
        over = {"seed": a.seed}
        if a.jobs is not None:
            over["jobs"] = a.jobs
        if getattr(a, "model_cmd", None) and a.command == "run":
            over["backend"] = "external"
        cfg = replace(cfg, **over)
        return a.func(a, cfg)
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
