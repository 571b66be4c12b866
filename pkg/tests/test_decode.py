import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formpipe.decode import (
    ExternalModel,
    FontLookupModel,
    InvalidDistribution,
    ModelProcessError,
    TableModel,
    beam_search,
    check_distribution,
    exhaustive_decode,
    greedy_decode,
    random_table_model,
    sequence_table_model,
)
from formpipe.raster import write_pgm
from formpipe.synthgen import render_text, text_width
from formpipe.tokens import Dictionary, date_dictionary, tokenize_date

STUB = [sys.executable, "-m", "formpipe.stub_model"]


def small_dict(n, T):
    toks = ("<Start>", "<End>", "<Padding>") + tuple(f"<{c}>" for c in "abc"[: n - 3])
    return Dictionary("test", toks, T)


def test_hand_enumerated_instances():
    # T = 2, three tokens: the only sequence is <Start>,<End>
    d = small_dict(3, 2)
    m = TableModel(d, {(0,): [0.5, 0.3, 0.2]})
    r = exhaustive_decode(m, None)
    assert r.ids == (0, 1) and r.log_prob == pytest.approx(math.log(0.3))

    # T = 3 with one letter: candidates S E (0.4), S a E (0.18), S a a (0.18, truncated)
    d = Dictionary("test", ("<Start>", "<a>", "<End>", "<Padding>"), 3)
    m = TableModel(d, {(0,): [0.0, 0.6, 0.4, 0.0], (0, 1): [0.2, 0.3, 0.3, 0.2]})
    ex = exhaustive_decode(m, None)
    assert ex.ids == (0, 2) and ex.log_prob == pytest.approx(math.log(0.4))
    g = greedy_decode(m, None)
    assert g.ids == (0, 1, 1) and g.truncated  # the a/End tie goes to the lower id
    assert g.log_prob == pytest.approx(math.log(0.18))
    best, finals = beam_search(m, None, 2)
    assert best.ids == ex.ids
    assert [f.ids for f in finals] == [(0, 2), (0, 1, 1)]
    assert beam_search(m, None, 1)[0].ids == g.ids


def test_single_path_model():
    d = date_dictionary()
    seq = tokenize_date("1/7-2010")
    m = sequence_table_model(d, seq.ids, confidence=1.0)
    for B in (1, 3, 10):
        r, _ = beam_search(m, None, B)
        assert r.ids == seq.ids and r.log_prob == 0.0 and not r.truncated
        assert r.sequence() == seq


def test_fifty_instances_match_exhaustive():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n, T = int(rng.integers(3, 6)), int(rng.integers(2, 5))
        d = small_dict(n, T)
        m = random_table_model(rng, d, T)
        ex = exhaustive_decode(m, None)
        full, _ = beam_search(m, None, n**T)
        assert full.ids == ex.ids and full.log_prob == ex.log_prob
        lps = [beam_search(m, None, B)[0].log_prob for B in range(1, n**T + 1)]
        assert all(b >= a for a, b in zip(lps, lps[1:]))
        assert all(lp <= ex.log_prob for lp in lps)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(3, 5), st.integers(2, 4))
def test_greedy_equals_beam_one_and_bound(seed, n, T):
    rng = np.random.default_rng(seed)
    d = small_dict(n, T)
    m = random_table_model(rng, d, T)
    g = greedy_decode(m, None)
    b, _ = beam_search(m, None, 1)
    assert g.ids == b.ids and g.log_prob == b.log_prob
    assert b.log_prob <= exhaustive_decode(m, None).log_prob <= 0
    assert b.ids[0] == d.start_id and (b.ids[-1] == d.end_id or (b.truncated and len(b.ids) == T))


def test_errors():
    d = small_dict(4, 3)
    with pytest.raises(ValueError):
        beam_search(TableModel(d), None, 0)
    with pytest.raises(ValueError):
        beam_search(TableModel(d), None, 2, max_len=1)
    with pytest.raises(ValueError):
        exhaustive_decode(TableModel(date_dictionary()), None)  # 27^11 candidates

    class Bad:
        dictionary = d

        def step(self, ctx, prefix):
            return np.array([0.5, 0.5, 0.5, -0.5]) if len(prefix) > 1 else np.array([0, 0.5, 0, 0.5])

    with pytest.raises(InvalidDistribution, match="step 2"):
        beam_search(Bad(), None, 2)
    with pytest.raises(InvalidDistribution):
        check_distribution([0.5, 0.6], 2)
    with pytest.raises(InvalidDistribution):
        TableModel(d, {(0,): [1.0]})


def test_table_model_uniform_default_and_json():
    d = small_dict(5, 4)
    m = random_table_model(np.random.default_rng(0), d, 4)
    np.testing.assert_allclose(m.step(None, (9, 9)), 0.2)
    m2 = TableModel.from_json(m.to_json())
    assert m2.dictionary == d
    for k in m.table:
        np.testing.assert_array_equal(m.table[k], m2.table[k])


# ------------------------------------------------------- external process


def test_external_uniform():
    d = date_dictionary()
    with ExternalModel(STUB + ["uniform"], d) as em:
        p = em.step("x.pgm", (d.start_id,))
        np.testing.assert_allclose(p, 1 / len(d))
        p2 = em.step("x.pgm", (d.start_id, 1))
        np.testing.assert_array_equal(p, p2)


@pytest.mark.parametrize("mode,exc", [("negative", InvalidDistribution), ("badjson", ModelProcessError), ("wrongid", ModelProcessError), ("crash", ModelProcessError)])
def test_external_failures(mode, exc):
    d = date_dictionary()
    with ExternalModel(STUB + [mode], d) as em:
        with pytest.raises(exc):
            em.step("x.pgm", (d.start_id,))


def test_external_timeout():
    d = date_dictionary()
    em = ExternalModel(STUB + ["silent"], d, timeout=0.5)
    try:
        with pytest.raises(ModelProcessError, match="within"):
            em.step("x.pgm", (d.start_id,))
    finally:
        em.proc.kill()
        em.close()


def test_wire_and_in_process_equivalent(tmp_path):
    rng = np.random.default_rng(3)
    for trial in range(3):
        d = small_dict(5, 4)
        m = random_table_model(rng, d, 4)
        path = tmp_path / f"m{trial}.json"
        path.write_text(m.to_json())
        with ExternalModel(STUB + ["table", str(path)], d) as em:
            for B in (1, 3, 125):
                a, fa = beam_search(m, "img.pgm", B)
                b, fb = beam_search(em, "img.pgm", B)
                assert [(r.ids, r.log_prob) for r in fa] == [(r.ids, r.log_prob) for r in fb]


def _field_image(text):
    ink = np.zeros((40, text_width(text) + 20), np.uint8)
    render_text(ink, text, 10, 10)
    return np.where(ink == 1, 0, 255).astype(np.uint8)


def test_font_backend_in_process_and_wire(tmp_path):
    d = date_dictionary()
    img = _field_image("14-3-1899")
    fm = FontLookupModel(d)
    r, _ = beam_search(fm, img, 10)
    assert r.sequence() == tokenize_date("14-3-1899")
    path = tmp_path / "f.pgm"
    write_pgm(path, img)
    with ExternalModel(STUB + ["font"], d) as em:
        r2, _ = beam_search(em, str(path), 10)
    assert r2.ids == r.ids and r2.log_prob == pytest.approx(r.log_prob, abs=1e-12)


def test_font_backend_unreadable_is_empty():
    d = date_dictionary()
    r, _ = beam_search(FontLookupModel(d), np.full((30, 60), 255, np.uint8), 5)
    assert r.ids == (d.start_id, d.end_id)
