"""Minimal external model speaking the line-delimited JSON protocol.

    python -m formpipe.stub_model uniform
    python -m formpipe.stub_model table model.json
    python -m formpipe.stub_model font
    python -m formpipe.stub_model negative | badjson | wrongid | silent | crash

The broken modes exist to exercise the host's error handling.
"""
from __future__ import annotations

import json
import sys
import time

import numpy as np


def _serve(mode: str, arg: str | None) -> int:
    hello = json.loads(sys.stdin.readline())["hello"]
    n = int(hello["n_tokens"])
    model = None
    if mode == "table":
        from .decode import TableModel

        with open(arg) as fh:
            model = TableModel.from_json(fh.read())
    elif mode == "font":
        from .decode import FontLookupModel
        from .raster import read_image
        from .tokens import dictionary

        model = FontLookupModel(dictionary(hello["dict"]))
        images: dict[str, np.ndarray] = {}
    print(json.dumps({"ready": True}), flush=True)
    for line in sys.stdin:
        req = json.loads(line)
        rid = req["id"]
        if mode == "silent":
            time.sleep(3600)
        if mode == "crash":
            return 3
        if mode == "badjson":
            print("{not json", flush=True)
            continue
        if mode == "wrongid":
            rid += 1
        if mode == "table":
            probs = model.step(None, tuple(req["prefix"])).tolist()
        elif mode == "font":
            path = req["image"]
            if path not in images:
                images[path] = read_image(path)
            probs = model.step(images[path], tuple(req["prefix"])).tolist()
        elif mode == "negative":
            probs = [-1.0] + [2.0 / (n - 1)] * (n - 1)
        else:
            probs = [1.0 / n] * n
        print(json.dumps({"id": rid, "probs": probs}), flush=True)
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    mode = argv[0] if argv else "uniform"
    return _serve(mode, argv[1] if len(argv) > 1 else None)


if __name__ == "__main__":
    sys.exit(main())
