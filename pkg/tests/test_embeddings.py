import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bdma.embeddings import (EmbeddingSet, center_and_normalize, lookup, parse_vec, preprocess,
                             write_vec)
from bdma.errors import VecFormatError


def vec(text, max_vocab=200_000):
    return parse_vec(io.StringIO(text), max_vocab=max_vocab)


def test_minimal_file():
    e = vec("2 3\na 1 0 0\nb 0 1 0\n")
    assert len(e) == 2 and e.dim == 3
    assert e.words == ("a", "b")
    np.testing.assert_array_equal(e.matrix, [[1, 0, 0], [0, 1, 0]])


def test_duplicates_keep_first():
    e = vec("3 2\na 1 2\na 3 4\nb 5 6\n", max_vocab=10)
    assert len(e) == 2
    assert e.skipped_duplicates == 1
    np.testing.assert_array_equal(e.matrix[e.lookup("a")], [1, 2])


def test_truncates_to_max_vocab():
    text = "5 4\n" + "".join(f"w{i} {i} 0 0 1\n" for i in range(5))
    e = vec(text, max_vocab=2)
    assert e.words == ("w0", "w1")


def test_rows_past_the_cutoff_are_not_read():
    e = vec("3 2\na 1 2\nb 3 4\nbroken row\n", max_vocab=2)
    assert len(e) == 2


def test_trailing_space_tolerated():
    e = vec("1 2\na 1 2 \n")
    np.testing.assert_array_equal(e.matrix, [[1, 2]])


@pytest.mark.parametrize("text", [
    "",
    "2\na 1 2\n",
    "x 2\na 1 2\n",
    "2 3\na 1 2\n",
    "1 2\na 1 nan\n",
    "1 2\na 1 inf\n",
    "1 2\na 1 zz\n",
    "0 2\n",
])
def test_parse_errors(text):
    with pytest.raises(VecFormatError):
        vec(text)


def test_lookup():
    e = vec("2 2\ncat 1 0\ndog 0 1\n")
    assert lookup(e, "dog") == 1
    assert lookup(e, "bird") is None
    assert lookup(e, "Cat") is None
    assert "cat" in e and "Cat" not in e


def test_embedding_set_rejects_bad_input():
    with pytest.raises(VecFormatError):
        EmbeddingSet(("a", "a"), np.eye(2))
    with pytest.raises(VecFormatError):
        EmbeddingSet(("a",), np.array([[np.nan, 1.0]]))
    with pytest.raises(VecFormatError):
        EmbeddingSet(("a", "b"), np.eye(3))


def test_embedding_set_is_read_only():
    e = vec("1 2\na 1 2\n")
    with pytest.raises(ValueError):
        e.matrix[0, 0] = 5.0


def test_round_trip(rng):
    m = rng.standard_normal((20, 7))
    e = EmbeddingSet(tuple(f"w{i}" for i in range(20)), m)
    buf = io.StringIO()
    write_vec(e, buf)
    back = vec(buf.getvalue())
    assert back.words == e.words
    # 6 significant digits: half a unit in the sixth place
    np.testing.assert_allclose(back.matrix, e.matrix, rtol=5e-6, atol=0)


def test_round_trip_unit_scale_values(rng):
    m = rng.uniform(-1, 1, (20, 7))
    e = EmbeddingSet(tuple(f"w{i}" for i in range(20)), m)
    buf = io.StringIO()
    write_vec(e, buf)
    assert np.max(np.abs(vec(buf.getvalue()).matrix - m)) < 1e-6


def test_round_trip_unicode_tokens():
    e = EmbeddingSet(("über", "猫", "naïve"), np.eye(3))
    buf = io.StringIO()
    write_vec(e, buf)
    assert vec(buf.getvalue()).words == e.words


def test_preprocess_singleton_fails():
    e = EmbeddingSet(("a",), np.array([[3.0, 4.0]]))
    with pytest.raises(VecFormatError, match="'a'"):
        preprocess(e)


def test_preprocess_zero_row_reports_token():
    e = EmbeddingSet(("a", "zero"), np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(VecFormatError, match="zero"):
        preprocess(e)


def test_preprocess_symmetric_pair():
    e = EmbeddingSet(("a", "b"), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(preprocess(e).matrix, [[1, 0], [-1, 0]])


def test_preprocess_random(rng):
    m = rng.standard_normal((100, 50)) + 0.3
    e = EmbeddingSet(tuple(map(str, range(100))), m)
    out = preprocess(e).matrix
    # recompute the pipeline directly
    unit = m / np.sqrt((m ** 2).sum(axis=1))[:, None]
    centered = unit - unit.sum(axis=0) / 100
    assert np.all(np.abs(centered.mean(axis=0)) < 1e-6)
    np.testing.assert_allclose(out, centered / np.sqrt((centered ** 2).sum(axis=1))[:, None], atol=1e-12)
    assert np.all(np.abs(np.linalg.norm(out, axis=1) - 1) < 1e-6)
    mid, _ = center_and_normalize(m)
    assert np.all(np.abs(mid.mean(axis=0)) < 1e-6)


def test_preprocess_is_deterministic(rng):
    e = EmbeddingSet(tuple(map(str, range(30))), rng.standard_normal((30, 8)))
    assert preprocess(e).matrix.tobytes() == preprocess(e).matrix.tobytes()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(2, 10)),
              elements=st.floats(-10, 10, allow_nan=False, width=64)))
def test_preprocess_unit_rows_property(m):
    e = EmbeddingSet(tuple(map(str, range(len(m)))), m)
    try:
        out = preprocess(e).matrix
    except VecFormatError:
        return  # zero rows at either stage are legitimately rejected
    norms = np.linalg.norm(out, axis=1)
    assert np.all(np.abs(norms - 1) < 1e-6)
