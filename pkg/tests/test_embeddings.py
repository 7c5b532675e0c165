import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semantic_paste.embeddings import (
    DEFAULT_SUBSTITUTIONS,
    WordVector,
    estimate_similarity_flops,
    load_embeddings,
    loads_embeddings,
    resolve_label,
    similarity,
    similarity_matrix,
)
from semantic_paste.errors import EmbeddingLoadError, SemanticPasteError, UnresolvedLabelError


def wv(*values):
    return WordVector("x", np.array(values, dtype=np.float64))


def test_single_line_store():
    store = loads_embeddings("cat 1.0 0.0\n")
    assert store.dimension == 2
    assert len(store) == 1
    np.testing.assert_array_equal(store.entries["cat"].values, [1.0, 0.0])


def test_dimension_mismatch_names_line():
    with pytest.raises(EmbeddingLoadError) as exc:
        loads_embeddings("cat 1.0 0.0\ndog 1.0\n")
    assert exc.value.line_number == 2


def test_expected_dim_enforced():
    with pytest.raises(EmbeddingLoadError):
        loads_embeddings("cat 1.0 0.0\n", expected_dim=3)


@pytest.mark.parametrize("text", ["", "\n\n", "cat 0 0\n", "cat 1.0 abc\n", "cat nan 1\n"])
def test_bad_sources_rejected(text):
    with pytest.raises(EmbeddingLoadError):
        loads_embeddings(text)


def test_load_from_path_and_stream(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text("Cat 1 2 3\ndog 4 5 6\n")
    a = load_embeddings(path)
    b = load_embeddings(io.StringIO(path.read_text()))
    assert set(a.entries) == set(b.entries) == {"cat", "dog"}
    assert "CAT" in a


def test_case_duplicates_keep_first():
    store = loads_embeddings("the 1 0\nThe 0 1\n")
    np.testing.assert_array_equal(store.entries["the"].values, [1, 0])


def test_vectors_are_read_only():
    store = loads_embeddings("cat 1 0\n")
    with pytest.raises(ValueError):
        store.entries["cat"].values[0] = 5


def test_resolve_exact_match_first():
    store = loads_embeddings("cat 1 0\ntable 0 1\n")
    assert resolve_label(store, "cat") is store.entries["cat"]
    assert resolve_label(store, " Cat ") is store.entries["cat"]


@pytest.mark.parametrize("label,token", [("dining table", "table"), ("traffic light", "stoplight")])
def test_resolve_through_substitution(label, token):
    store = loads_embeddings(f"{token} 1 0\n")
    assert resolve_label(store, label).token == token


def test_unresolved_label():
    store = loads_embeddings("cat 1 0\n")
    with pytest.raises(UnresolvedLabelError) as exc:
        resolve_label(store, "hair drier")
    assert exc.value.label == "hair drier"
    assert isinstance(exc.value, KeyError)


def test_substitution_with_missing_target_dropped(caplog):
    store = loads_embeddings("cat 1 0\n")
    assert "dining table" not in store.substitutions
    assert "dropped" in caplog.text


def test_with_substitutions_extends_table():
    store = loads_embeddings("cat 1 0\nfeline 0 1\n").with_substitutions({"Kitty": "feline"})
    assert store.resolve("kitty").token == "feline"


def test_default_table_has_eleven_rows():
    assert len(DEFAULT_SUBSTITUTIONS) == 11


def test_similarity_examples():
    assert similarity("cosine", wv(1, 0, 0), wv(1, 0, 0)) == pytest.approx(1.0)
    assert similarity("cosine", wv(1, 0), wv(0, 1)) == 0.0
    expected = 32 / (math.sqrt(14) * math.sqrt(77))
    assert abs(similarity("cosine", wv(1, 2, 3), wv(4, 5, 6)) - expected) < 1e-12


def test_euclidean_is_negated_distance():
    assert similarity("euclidean", wv(0, 0), wv(3, 4)) == -5.0
    assert similarity("euclidean", wv(1, 1), wv(1, 1)) == 0.0


def test_similarity_errors():
    with pytest.raises(SemanticPasteError):
        similarity("cosine", wv(1, 0), wv(1, 0, 0))
    with pytest.raises(SemanticPasteError):
        similarity("cosine", wv(0, 0), wv(1, 0))
    with pytest.raises(SemanticPasteError):
        similarity("manhattan", wv(1, 0), wv(1, 0))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_matrix_matches_pairwise(n, m, d, seed):
    rng = np.random.default_rng(seed)
    left, right = rng.normal(size=(n, d)), rng.normal(size=(m, d))
    for metric in ("cosine", "euclidean"):
        mat = similarity_matrix(metric, left, right)
        for i in range(n):
            for j in range(m):
                assert mat[i, j] == pytest.approx(similarity(metric, left[i], right[j]), abs=1e-12)


@pytest.mark.parametrize("args,expected", [((80, 20, 300), 480_000), ((1, 1, 1), 1),
                                           ((20, 5, 100), 10_000)])
def test_flops(args, expected):
    assert estimate_similarity_flops(*args) == expected


@pytest.mark.parametrize("args", [(0, 1, 1), (1, -2, 1), (1, 1, 2.5)])
def test_flops_rejects_non_positive(args):
    with pytest.raises(ValueError):
        estimate_similarity_flops(*args)
