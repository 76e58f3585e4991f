import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synclin.datasets import (
    BY_COLUMN,
    BY_ROW,
    PartitionPlan,
    SparseMatrix,
    dump_libsvm,
    load_cache,
    load_libsvm,
    local_block,
    make_synthetic,
    partition,
    save_cache,
)
from synclin.errors import ConfigurationError, ParseError


def write(tmp_path, text, name="data.libsvm"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadLibsvm:
    def test_single_line(self, tmp_path):
        mat, y = load_libsvm(write(tmp_path, "1 1:0.5 3:2.0\n"))
        assert (mat.n_rows, mat.n_cols) == (1, 3)
        assert y.tolist() == [1.0]
        rows0, vals0 = mat.column(0)
        assert rows0.tolist() == [0] and vals0.tolist() == [0.5]
        rows2, vals2 = mat.column(2)
        assert rows2.tolist() == [0] and vals2.tolist() == [2.0]
        assert mat.column(1)[0].size == 0

    def test_empty_file(self, tmp_path):
        mat, y = load_libsvm(write(tmp_path, ""))
        assert (mat.n_rows, mat.n_cols, mat.nnz) == (0, 0, 0)
        assert y.size == 0

    def test_two_lines(self, tmp_path):
        mat, y = load_libsvm(write(tmp_path, "1 1:1\n-1 2:1\n"))
        assert (mat.n_rows, mat.n_cols) == (2, 2)
        assert mat.column(0)[0].tolist() == [0]
        assert mat.column(1)[0].tolist() == [1]
        assert y.tolist() == [1.0, -1.0]

    def test_malformed_line_carries_line_number(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_libsvm(write(tmp_path, "1 1:1\n1 2:oops\n"))
        assert exc.value.line_no == 2

    def test_non_increasing_indices_rejected(self, tmp_path):
        with pytest.raises(ParseError, match="strictly increasing"):
            load_libsvm(write(tmp_path, "1 3:1 2:1\n"))

    def test_bad_label(self, tmp_path):
        with pytest.raises(ParseError, match="label"):
            load_libsvm(write(tmp_path, "x 1:1\n"))

    def test_n_features_override(self, tmp_path):
        mat, _ = load_libsvm(write(tmp_path, "1 1:1\n"), n_features=5)
        assert mat.n_cols == 5

    def test_roundtrip_on_synthetic(self, tmp_path):
        mat, y = make_synthetic(40, 25, nnz_per_col=6, seed=3)
        path = tmp_path / "rt.libsvm"
        dump_libsvm(mat, y, path)
        mat2, y2 = load_libsvm(path, n_features=mat.n_cols)
        np.testing.assert_array_equal(mat.col_ptr, mat2.col_ptr)
        np.testing.assert_array_equal(mat.row_idx, mat2.row_idx)
        np.testing.assert_array_equal(mat.values, mat2.values)
        np.testing.assert_array_equal(y, y2)

    def test_cache_roundtrip(self, tmp_path):
        mat, y = make_synthetic(30, 12, nnz_per_col=4, seed=1)
        path = tmp_path / "cache.npz"
        save_cache(mat, y, path)
        mat2, y2 = load_cache(path)
        np.testing.assert_array_equal(mat.values, mat2.values)
        np.testing.assert_array_equal(mat.col_ptr, mat2.col_ptr)
        np.testing.assert_array_equal(y, y2)

    def test_cache_rejects_foreign_npz(self, tmp_path):
        path = tmp_path / "foreign.npz"
        np.savez(path, a=np.arange(3))
        with pytest.raises((ConfigurationError, KeyError)):
            load_cache(path)


@st.composite
def small_matrices(draw):
    m = draw(st.integers(1, 8))
    n = draw(st.integers(1, 8))
    entries = {}
    for _ in range(draw(st.integers(0, 20))):
        i = draw(st.integers(0, m - 1))
        j = draw(st.integers(0, n - 1))
        entries[(i, j)] = draw(
            st.floats(-100, 100, allow_nan=False, allow_infinity=False).filter(lambda x: x != 0)
        )
    rows = np.array([k[0] for k in sorted(entries)], dtype=np.int64)
    cols = np.array([k[1] for k in sorted(entries)], dtype=np.int64)
    vals = np.array([entries[k] for k in sorted(entries)])
    order = np.lexsort((rows, cols))
    col_ptr = np.concatenate(([0], np.cumsum(np.bincount(cols, minlength=n)))).astype(np.int64)
    return SparseMatrix(m, n, col_ptr, rows[order], vals[order])


@given(small_matrices())
@settings(max_examples=60, deadline=None)
def test_text_roundtrip_property(tmp_path_factory, mat):
    path = tmp_path_factory.mktemp("rt") / "m.libsvm"
    y = np.arange(mat.n_rows, dtype=np.float64)
    dump_libsvm(mat, y, path)
    mat2, y2 = load_libsvm(path, n_features=mat.n_cols)
    np.testing.assert_array_equal(mat.col_ptr, mat2.col_ptr)
    np.testing.assert_array_equal(mat.row_idx, mat2.row_idx)
    np.testing.assert_array_equal(mat.values, mat2.values)
    np.testing.assert_array_equal(y, y2)


def matrix_with_col_nnz(counts, m=None):
    """Matrix whose column nnz counts are exactly `counts`."""
    counts = list(counts)
    m = m or max(counts + [1])
    rows = np.concatenate([np.arange(c) for c in counts]).astype(np.int64)
    cols = np.repeat(np.arange(len(counts)), counts)
    col_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    vals = np.ones(rows.size)
    return SparseMatrix(m, len(counts), col_ptr, rows, vals)


class TestPartition:
    def test_lpt_symmetric_instance(self):
        mat = matrix_with_col_nnz([5, 4, 3, 3, 2, 1])
        plan = partition(mat, 2)
        assert sorted(plan.nnz_per_part.tolist()) == [9, 9]

    def test_single_partition_identity(self):
        mat = matrix_with_col_nnz([5, 4, 3])
        plan = partition(mat, 1)
        assert plan.nnz_per_part.tolist() == [12]
        assert plan.assignment[0].tolist() == [0, 1, 2]

    def test_three_equal_columns_two_parts_matches_opt(self):
        mat = matrix_with_col_nnz([3, 3, 3])
        plan = partition(mat, 2)
        assert sorted(plan.nnz_per_part.tolist()) == [3, 6]
        # brute force over all 2^3 assignments confirms OPT max-load is 6
        opt = min(
            max(sum(3 for i, a in enumerate(assign) if a == p) for p in (0, 1))
            for assign in itertools.product((0, 1), repeat=3)
            if len(set(assign)) == 2
        )
        assert max(plan.nnz_per_part) == opt

    def test_k_too_large(self):
        mat = matrix_with_col_nnz([1, 1])
        with pytest.raises(ConfigurationError):
            partition(mat, 3)

    def test_deterministic(self):
        mat, _ = make_synthetic(50, 40, nnz_per_col=5, seed=9)
        p1 = partition(mat, 4)
        p2 = partition(mat, 4)
        for a, b in zip(p1.assignment, p2.assignment):
            np.testing.assert_array_equal(a, b)

    def test_by_row_mode(self):
        mat, _ = make_synthetic(30, 20, nnz_per_col=4, seed=2)
        plan = partition(mat, 3, mode=BY_ROW)
        assert plan.mode == BY_ROW
        assert int(plan.nnz_per_part.sum()) == mat.nnz
        all_rows = np.sort(np.concatenate(plan.assignment))
        np.testing.assert_array_equal(all_rows, np.arange(mat.n_rows))

    @given(st.lists(st.integers(1, 50), min_size=2, max_size=40), st.integers(1, 6))
    @settings(max_examples=80, deadline=None)
    def test_lpt_bound_property(self, counts, k):
        if k > len(counts):
            k = len(counts)
        mat = matrix_with_col_nnz(counts)
        plan = partition(mat, k)
        mean = mat.nnz / k
        assert plan.nnz_per_part.max() <= mean + max(counts)

    def test_plan_validation_rejects_overlap(self):
        with pytest.raises(ValueError):
            PartitionPlan(
                mode=BY_COLUMN,
                assignment=[np.array([0, 1]), np.array([1, 2])],
                nnz_per_part=np.array([2, 2]),
                n_indices=3,
            )

    def test_plan_validation_rejects_gap(self):
        with pytest.raises(ValueError):
            PartitionPlan(
                mode=BY_COLUMN,
                assignment=[np.array([0]), np.array([2])],
                nnz_per_part=np.array([1, 1]),
                n_indices=3,
            )


class TestLocalBlock:
    def test_whole_matrix_for_k1(self):
        mat, _ = make_synthetic(20, 15, nnz_per_col=3, seed=5)
        plan = partition(mat, 1)
        block = local_block(mat, plan, 0)
        np.testing.assert_array_equal(block.values, mat.values)
        np.testing.assert_array_equal(block.col_ids, np.arange(15))

    def test_identity_split(self):
        # 2x2 identity, columns split across two workers
        mat = SparseMatrix(2, 2, np.array([0, 1, 2]), np.array([0, 1]), np.array([1.0, 1.0]))
        plan = PartitionPlan(
            mode=BY_COLUMN,
            assignment=[np.array([0]), np.array([1])],
            nnz_per_part=np.array([1, 1]),
            n_indices=2,
        )
        block = local_block(mat, plan, 1)
        assert block.n_rows == 2 and block.n_cols == 1
        rows, vals = block.column(0)
        assert rows.tolist() == [1] and vals.tolist() == [1.0]
        assert block.col_ids.tolist() == [1]

    def test_block_nnz_matches_plan(self):
        mat, _ = make_synthetic(60, 80, nnz_per_col=7, seed=11)
        plan = partition(mat, 5)
        for k in range(5):
            assert local_block(mat, plan, k).nnz == plan.nnz_per_part[k]

    def test_row_block(self):
        mat, y = make_synthetic(25, 10, nnz_per_col=4, seed=3)
        plan = partition(mat, 3, mode=BY_ROW)
        dense = mat.to_dense()
        for k in range(3):
            block = local_block(mat, plan, k)
            assert block.n_cols == mat.n_cols
            np.testing.assert_allclose(
                block.predictions(np.ones(mat.n_cols)),
                dense[plan.assignment[k]] @ np.ones(mat.n_cols),
            )

    def test_bad_worker_id(self):
        mat, _ = make_synthetic(10, 6, nnz_per_col=2, seed=0)
        plan = partition(mat, 2)
        with pytest.raises(ConfigurationError):
            local_block(mat, plan, 2)


class TestSparseMatrix:
    def test_invariant_validation(self):
        with pytest.raises(ValueError):
            SparseMatrix(2, 2, np.array([0, 1]), np.array([0]), np.array([1.0]))
        with pytest.raises(ValueError):  # decreasing rows within a column
            SparseMatrix(3, 1, np.array([0, 2]), np.array([2, 1]), np.array([1.0, 2.0]))

    def test_matvec_against_dense(self):
        mat, _ = make_synthetic(30, 20, nnz_per_col=5, seed=7)
        dense = mat.to_dense()
        rng = np.random.default_rng(0)
        x = rng.normal(size=20)
        w = rng.normal(size=30)
        np.testing.assert_allclose(mat.matvec(x), dense @ x, rtol=1e-12)
        np.testing.assert_allclose(mat.rmatvec(w), dense.T @ w, rtol=1e-12)

    def test_row_major_view(self):
        mat, _ = make_synthetic(15, 10, nnz_per_col=3, seed=8)
        rm = mat.to_row_major()
        dense = mat.to_dense()
        for i in range(15):
            cols, vals = rm.row(i)
            row = np.zeros(10)
            row[cols] = vals
            np.testing.assert_array_equal(row, dense[i])
