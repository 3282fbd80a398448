import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from makeup_transfer.errors import DimensionError, InputError, ParseError
from makeup_transfer.recommend import (EmbeddingIndex, distances, knn_query, load_index, normalize_concat,
                                       save_index)

from conftest import FIXTURES


def test_normalize_concat_examples():
    assert normalize_concat([3, 4], [0, 5]).tolist() == [0.6, 0.8, 0.0, 1.0]
    u = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(normalize_concat(u, [0.0, 1.0]), [1.0, 0.0, 0.0, 0.0, 1.0])
    with pytest.raises(InputError):
        normalize_concat([0, 0], [1, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8))
def test_normalize_concat_norm(v1, v2):
    if np.linalg.norm(v1) < 1e-6 or np.linalg.norm(v2) < 1e-6:
        return
    assert abs(np.linalg.norm(normalize_concat(v1, v2)) - math.sqrt(2)) < 1e-12


def test_knn_hand_example():
    index = EmbeddingIndex(["a", "b"], np.array([[1.0, 0.0], [0.0, 1.0]]))
    res = knn_query(index, [1.0, 0.0], 2)
    assert res[0] == ("a", 0.0)
    assert res[1][0] == "b" and abs(res[1][1] - math.sqrt(2)) < 1e-15


def test_knn_brute_force(rng):
    vecs = rng.normal(size=(1000, 12))
    ids = [f"f{i:04d}" for i in rng.permutation(1000)]
    index = EmbeddingIndex(ids, vecs)
    q = rng.normal(size=12)
    brute = sorted(((float(np.sqrt(np.sum((v - q) ** 2))), i) for i, v in zip(ids, vecs)))
    got = knn_query(index, q, 1000)
    assert [g[0] for g in got] == [b[1] for b in brute]
    assert all(abs(g[1] - b[0]) < 1e-12 for g, b in zip(got, brute))
    assert [d for _, d in got] == sorted(d for _, d in got)


def test_knn_ties_and_self(rng):
    index = EmbeddingIndex(["z", "m", "a"], np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
    assert [i for i, _ in knn_query(index, [0.0, 0.0], 3)] == ["a", "m", "z"]
    assert knn_query(index, [0.0, 1.0], 1) == [("m", 0.0)]
    with pytest.raises(InputError):
        knn_query(index, [0.0, 0.0], 4)
    with pytest.raises(InputError):
        knn_query(EmbeddingIndex(), [0.0], 1)
    with pytest.raises(DimensionError):
        distances(index, [1.0, 2.0, 3.0])


def test_index_round_trip(tmp_path, rng):
    index = EmbeddingIndex([f"r{i}" for i in range(5)], rng.normal(size=(5, 3)))
    save_index(index, tmp_path / "i.jsonl")
    back = load_index(tmp_path / "i.jsonl")
    assert back.ids == index.ids and np.array_equal(back.vectors, index.vectors)


def test_fixture_index():
    index = load_index(FIXTURES / "index.jsonl")
    assert len(index) == 16 and index.dim == 10
    assert np.allclose(np.linalg.norm(index.vectors, axis=1), math.sqrt(2))
    res = knn_query(index, index.vectors[3], 4)
    assert res[0] == (index.ids[3], 0.0)


@pytest.mark.parametrize("lines,needle", [
    (["{bad"], ":1:"),
    (['{"id": "a", "embedding": [1, 2]}', '{"id": "b", "embedding": [1]}'], ":2:"),
    (['{"id": "a", "embedding": [1]}', '{"id": "a", "embedding": [2]}'], "duplicate"),
    (['{"id": 3, "embedding": [1]}'], "string 'id'"),
    (['{"id": "a"}'], "embedding"),
])
def test_index_parse_errors(tmp_path, lines, needle):
    path = tmp_path / "i.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=needle):
        load_index(path)


def test_empty_index_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    index = load_index(path)
    assert len(index) == 0
    with pytest.raises(InputError, match="empty"):
        knn_query(index, [1.0], 1)
    json.dumps(index.ids)
