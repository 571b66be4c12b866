"""Sequence decoding over a pluggable next-token model.

A model exposes ``dictionary`` and ``step(ctx, prefix) -> probs``.  Decoders
force <Start>, never emit <Start> or <Padding>, and stop at <End> or when the
sequence reaches ``max_len`` tokens (counting <Start>).
"""
from __future__ import annotations

import itertools
import json
import logging
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .tokens import Dictionary, TokenizeError, TokenSequence, tokenize

log = logging.getLogger(__name__)

EXHAUSTIVE_BUDGET = 1_000_000
DEFAULT_BEAM = 10


class InvalidDistribution(ValueError):
    pass


class SequenceModel(Protocol):
    dictionary: Dictionary

    def step(self, ctx, prefix: tuple[int, ...]) -> np.ndarray: ...


def check_distribution(p, n: int, tol: float = 1e-6, step: int | None = None) -> np.ndarray:
    where = "" if step is None else f" at step {step}"
    try:
        p = np.asarray(p, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidDistribution(f"non-numeric probabilities{where}") from exc
    if p.shape != (n,):
        raise InvalidDistribution(f"expected {n} probabilities{where}, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or (p < 0).any():
        raise InvalidDistribution(f"negative or non-finite probability{where}")
    if abs(p.sum() - 1.0) > tol:
        raise InvalidDistribution(f"probabilities sum to {p.sum():.6g}{where}")
    return p


@dataclass
class DecodeResult:
    ids: tuple[int, ...]
    log_prob: float
    steps: int
    truncated: bool  # reached max_len without <End>
    dictionary: Dictionary = field(repr=False, default=None)

    def sequence(self) -> TokenSequence:
        if self.truncated:
            raise TokenizeError("decoded sequence has no <End>")
        return TokenSequence(self.ids, self.dictionary.kind)

    def names(self) -> list[str]:
        return [self.dictionary.name(i) for i in self.ids]


def _emittable(d: Dictionary) -> list[int]:
    return [i for i in range(len(d)) if i not in (d.start_id, d.pad_id)]


def _log(p: float) -> float:
    return float(np.log(p)) if p > 0 else -np.inf


def beam_search(m: SequenceModel, ctx, beam_width: int = DEFAULT_BEAM, max_len: int | None = None, tol: float = 1e-6):
    """Length-synchronous beam search without length normalisation.

    Returns ``(best, finalists)`` where ``finalists`` is the ranked list of
    up to ``beam_width`` results.  Ranking is by log-probability, ties to
    the lexicographically smaller id sequence.  Finished hypotheses leave the
    beam, which is refilled from the remaining expansions.
    """
    d = m.dictionary
    T = d.max_len if max_len is None else max_len
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    if T < 2:
        raise ValueError("max_len must be >= 2")
    tokens = _emittable(d)
    live = [((d.start_id,), 0.0)]
    done: list[tuple[tuple[int, ...], float, bool]] = []
    steps = 0
    while live:
        steps += 1
        cand = []
        for prefix, lp in live:
            p = check_distribution(m.step(ctx, prefix), len(d), tol, step=len(prefix))
            for t in tokens:
                cand.append((prefix + (t,), lp + _log(p[t])))
        cand.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for ids, lp in cand:
            if lp == -np.inf:
                break
            if ids[-1] == d.end_id:
                done.append((ids, lp, False))
            elif len(ids) >= T:
                done.append((ids, lp, True))
            else:
                live.append((ids, lp))
                if len(live) == beam_width:
                    break
        # stop once no live hypothesis can beat the worst kept finalist
        if len(done) >= beam_width:
            done.sort(key=lambda c: (-c[1], c[0]))
            done = done[:beam_width]
            if not live or live[0][1] < done[-1][1]:
                break
    if not done:
        raise InvalidDistribution("no sequence with positive probability")
    done.sort(key=lambda c: (-c[1], c[0]))
    out = [DecodeResult(ids, lp, steps, tr, d) for ids, lp, tr in done[:beam_width]]
    return out[0], out


def greedy_decode(m: SequenceModel, ctx, max_len: int | None = None) -> DecodeResult:
    d = m.dictionary
    T = d.max_len if max_len is None else max_len
    tokens = _emittable(d)
    ids, lp = (d.start_id,), 0.0
    while True:
        p = check_distribution(m.step(ctx, ids), len(d), step=len(ids))
        t = max(tokens, key=lambda k: (p[k], -k))
        ids, lp = ids + (t,), lp + _log(p[t])
        if t == d.end_id or len(ids) >= T:
            return DecodeResult(ids, lp, len(ids) - 1, t != d.end_id, d)


def exhaustive_decode(m: SequenceModel, ctx, max_len: int | None = None) -> DecodeResult:
    """Global argmax over every sequence the beam could produce (small instances only)."""
    d = m.dictionary
    T = d.max_len if max_len is None else max_len
    if len(d) ** T > EXHAUSTIVE_BUDGET:
        raise ValueError(f"|dictionary|^T = {len(d)}^{T} exceeds the exhaustive budget")
    tokens = _emittable(d)
    best = None
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def probs(prefix):
        if prefix not in cache:
            cache[prefix] = check_distribution(m.step(ctx, prefix), len(d), step=len(prefix))
        return cache[prefix]

    for n in range(1, T):
        for body in itertools.product(tokens, repeat=n):
            # only the last token may be <End>; length-T sequences may lack it
            if d.end_id in body[:-1]:
                continue
            if body[-1] != d.end_id and n < T - 1:
                continue
            ids = (d.start_id,) + body
            lp = 0.0
            for k in range(1, len(ids)):
                lp += _log(probs(ids[:k])[ids[k]])
            key = (-lp, ids)
            if best is None or key < best[0]:
                best = (key, ids, lp)
    _, ids, lp = best
    if lp == -np.inf:
        raise InvalidDistribution("no sequence with positive probability")
    return DecodeResult(ids, lp, len(ids) - 1, ids[-1] != d.end_id, d)


class TableModel:
    """Explicit next-token distributions keyed by prefix; other prefixes are uniform."""

    def __init__(self, dictionary: Dictionary, table: dict | None = None):
        self.dictionary = dictionary
        self.table: dict[tuple[int, ...], np.ndarray] = {}
        for k, v in (table or {}).items():
            self.table[tuple(int(i) for i in k)] = check_distribution(v, len(dictionary))

    def step(self, ctx, prefix) -> np.ndarray:
        p = self.table.get(tuple(prefix))
        if p is None:
            return np.full(len(self.dictionary), 1.0 / len(self.dictionary))
        return p

    def to_json(self) -> str:
        return json.dumps(
            {
                "dictionary": {"kind": self.dictionary.kind, "tokens": list(self.dictionary.tokens), "max_len": self.dictionary.max_len},
                "table": [{"prefix": list(k), "probs": v.tolist()} for k, v in sorted(self.table.items())],
            }
        )

    @classmethod
    def from_json(cls, data) -> "TableModel":
        o = json.loads(data)
        dd = o["dictionary"]
        d = Dictionary(dd["kind"], tuple(dd["tokens"]), int(dd["max_len"]))
        return cls(d, {tuple(r["prefix"]): r["probs"] for r in o["table"]})


def random_table_model(rng: np.random.Generator, dictionary: Dictionary, max_len: int, concentration: float = 0.5) -> TableModel:
    """Dirichlet-random distributions for every reachable prefix."""
    tokens = _emittable(dictionary)
    table = {}
    frontier = [(dictionary.start_id,)]
    while frontier:
        nxt = []
        for pre in frontier:
            table[pre] = rng.dirichlet(np.full(len(dictionary), concentration))
            if len(pre) + 1 < max_len:
                nxt += [pre + (t,) for t in tokens if t != dictionary.end_id]
        frontier = nxt
    return TableModel(dictionary, table)


def sequence_table_model(dictionary: Dictionary, ids, confidence: float = 0.999) -> TableModel:
    """Model that emits ``ids`` (after <Start>) with the given per-step confidence."""
    n = len(dictionary)
    table = {}
    ids = tuple(ids)
    for k in range(1, len(ids)):
        p = np.full(n, (1.0 - confidence) / (n - 1))
        p[ids[k]] = confidence
        table[ids[:k]] = p
    return TableModel(dictionary, table)


class FontLookupModel:
    """Reads a printed field with the synthetic font and serves the token
    sequence of what it read as a ``TableModel``.

    ``ctx`` is the field crop (uint8 array).  Text that does not tokenize is
    served as an immediate <End>.
    """

    def __init__(self, dictionary: Dictionary, reader=None, confidence: float = 0.999):
        from .synthgen import FontReader

        self.dictionary = dictionary
        self.reader = reader or FontReader()
        self.confidence = confidence
        self._key = None
        self._model: TableModel | None = None
        self.last_text = ""

    def model_for(self, img) -> TableModel:
        text = self.reader.read(np.asarray(img))
        self.last_text = text
        d = self.dictionary
        try:
            ids = tokenize(text, d.kind).ids
        except TokenizeError:
            ids = (d.start_id, d.end_id)
        return sequence_table_model(d, ids, self.confidence)

    def step(self, ctx, prefix) -> np.ndarray:
        if self._key is not ctx:
            self._key, self._model = ctx, self.model_for(ctx)
        return self._model.step(ctx, prefix)


# --------------------------------------------------------------- external


class ModelProcessError(RuntimeError):
    pass


class ExternalModel:
    """Client for a model running in a child process, speaking one JSON
    object per line on its stdin/stdout.

    ``ctx`` passed to ``step`` is the path of the field image.
    """

    def __init__(self, cmd, dictionary: Dictionary, timeout: float = 10.0, sum_tol: float = 1e-3):
        self.dictionary = dictionary
        self.timeout = timeout
        self.sum_tol = sum_tol
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()
        self._next_id = 0
        self._send({"hello": {"dict": dictionary.kind, "n_tokens": len(dictionary)}})
        msg = self._recv()
        if msg.get("ready") is not True:
            self.close()
            raise ModelProcessError(f"bad handshake reply {msg!r}")

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _send(self, obj):
        try:
            self.proc.stdin.write(json.dumps(obj) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelProcessError(f"model process exited (code {self.proc.poll()})") from exc

    def _recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ModelProcessError(f"model did not answer within {self.timeout}s") from None
        if line is None:
            self.proc.wait(timeout=self.timeout)
            raise ModelProcessError(f"model process exited (code {self.proc.returncode})")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ModelProcessError(f"malformed response line {line.strip()[:80]!r}") from exc
        if not isinstance(msg, dict):
            raise ModelProcessError("response is not a JSON object")
        return msg

    def step(self, ctx, prefix) -> np.ndarray:
        rid = self._next_id
        self._next_id += 1
        self._send({"id": rid, "image": str(ctx), "prefix": [int(i) for i in prefix], "dict": self.dictionary.kind})
        msg = self._recv()
        if msg.get("id") != rid:
            raise ModelProcessError(f"response id {msg.get('id')!r} does not match request {rid}")
        if "probs" not in msg:
            raise ModelProcessError("response lacks probs")
        return check_distribution(msg["probs"], len(self.dictionary), self.sum_tol, step=len(prefix))

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
