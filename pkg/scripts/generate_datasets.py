#!/usr/bin/env python3
"""Regenerate the LIBSVM files shipped under src/synclin/assets/.

The synthetic sets are deterministic (fixed seeds).  The public sets are
exports of datasets bundled with scikit-learn (UCI handwritten digits) and
networkx (the Les Miserables character co-occurrence network), written in
LIBSVM text format so the load-balancing and parsing paths exercise real
data offline.  Needs scikit-learn and networkx, which are not runtime
dependencies of the package itself.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from synclin.datasets import SparseMatrix, dump_libsvm, make_synthetic

ASSETS = Path(__file__).resolve().parents[1] / "src" / "synclin" / "assets"


def dense_to_sparse(dense: np.ndarray) -> SparseMatrix:
    m, n = dense.shape
    col_ptr = [0]
    rows, vals = [], []
    for j in range(n):
        nz = np.flatnonzero(dense[:, j])
        rows.extend(nz.tolist())
        vals.extend(dense[nz, j].tolist())
        col_ptr.append(len(rows))
    return SparseMatrix(m, n, np.array(col_ptr), np.array(rows, dtype=np.int64),
                        np.array(vals))


def write_tiny():
    mat, y = make_synthetic(m=200, n=100, nnz_per_col=10, seed=20240, noise=0.5,
                            col_scale_sigma=0.5)
    dump_libsvm(mat, y, ASSETS / "tiny.libsvm")
    print(f"tiny: {mat.n_rows}x{mat.n_cols}, nnz={mat.nnz}")


def write_bench():
    mat, y = make_synthetic(m=500, n=2000, nnz_per_col=25, seed=77270, noise=0.5,
                            col_scale_sigma=1.0)
    dump_libsvm(mat, y, ASSETS / "bench.libsvm")
    print(f"bench: {mat.n_rows}x{mat.n_cols}, nnz={mat.nnz}")


def write_digits():
    from sklearn.datasets import load_digits

    data = load_digits()
    mat = dense_to_sparse(data.data)
    dump_libsvm(mat, data.target.astype(float), ASSETS / "digits.libsvm")
    print(f"digits: {mat.n_rows}x{mat.n_cols}, nnz={mat.nnz}")


def write_lesmis():
    import networkx as nx

    graph = nx.les_miserables_graph()
    nodes = sorted(graph.nodes())
    index = {v: i for i, v in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)))
    for u, v, data in graph.edges(data=True):
        w = float(data.get("weight", 1.0))
        adj[index[u], index[v]] = w
        adj[index[v], index[u]] = w
    mat = dense_to_sparse(adj)
    labels = adj.sum(axis=1)  # weighted degree as the regression target
    dump_libsvm(mat, labels, ASSETS / "lesmis.libsvm")
    print(f"lesmis: {mat.n_rows}x{mat.n_cols}, nnz={mat.nnz}")


if __name__ == "__main__":
    ASSETS.mkdir(parents=True, exist_ok=True)
    write_tiny()
    write_bench()
    write_digits()
    write_lesmis()
