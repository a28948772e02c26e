"""Hybrid affinity graph construction from aggregated self-attention signals.

Pipeline: row-wise attention similarity -> percentile structural gate ->
output-space cosine affinity computed only at gated positions -> row
normalization.  The result is a sparse row-stochastic operator used for seed
propagation.

All similarity math runs in float64.  Row-similarity is computed in fixed row
blocks so that multi-worker runs produce bit-identical output to single-worker
runs: the block partition never depends on the worker count, and each block is
one BLAS call.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ValidationError

# rows per similarity block; fixed so results do not depend on worker count
_SIM_BLOCK = 512

# gated-cosine edges processed per chunk, sized to bound scratch memory
_EDGE_CHUNK = 1 << 18


@dataclass(frozen=True)
class GateParams:
    """Structural gate configuration.

    quantile 0.98 keeps the top 2% of row-similarity entries.  The diagonal
    participates in the percentile pool and may survive the gate; self-loops
    only slow diffusion, they never redirect it.
    """

    quantile: float = 0.98
    include_diagonal: bool = True

    def __post_init__(self):
        if not 0.0 < self.quantile < 1.0:
            raise ValidationError(f"gate quantile must be in (0, 1), got {self.quantile}")


@dataclass
class HybridGraph:
    """Gated, row-normalized affinity graph.

    edges holds the normalized weights in CSR form; rows whose gated weights
    summed to zero stay all-zero and are identifiable through
    row_sums_pre_norm == 0.
    """

    n: int
    edges: sparse.csr_matrix
    row_sums_pre_norm: np.ndarray
    tau_w: float
    gate_density: float
    _transpose: sparse.csr_matrix | None = field(default=None, repr=False)

    @property
    def transpose_operator(self) -> sparse.csr_matrix:
        """Cached transpose, the operator applied at each propagation step."""
        if self._transpose is None:
            self._transpose = self.edges.transpose().tocsr()
        return self._transpose


def _normalized_rows(mat: np.ndarray) -> np.ndarray:
    """Rows scaled to unit L2 norm in float64; zero rows stay zero."""
    out = np.asarray(mat, dtype=np.float64).copy()
    norms = np.linalg.norm(out, axis=1)
    nz = norms > 0.0
    out[nz] /= norms[nz, None]
    out[~nz] = 0.0
    return out


def row_similarity(a_ii_mean: np.ndarray, n_workers: int = 1) -> np.ndarray:
    """Cosine similarity between attention rows.

    Symmetric, diagonal 1 for nonzero rows, entries in [0, 1] because the
    inputs are non-negative.  Zero rows get cosine 0 everywhere, including the
    diagonal.
    """
    a = np.asarray(a_ii_mean)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"attention matrix must be square, got {a.shape}")
    if a.shape[0] < 2:
        raise ValidationError("need at least 2 tokens")
    rn = _normalized_rows(a)
    n = rn.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    starts = range(0, n, _SIM_BLOCK)

    def fill(i0: int) -> None:
        i1 = min(i0 + _SIM_BLOCK, n)
        np.dot(rn[i0:i1], rn.T, out=out[i0:i1])

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(fill, starts))
    else:
        for i0 in starts:
            fill(i0)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def percentile_threshold(values: np.ndarray, quantile: float) -> float:
    """Nearest-rank percentile by selection.

    Returns the value at index ceil(quantile * M) - 1 of the ascending-sorted
    multiset, located with introselect rather than a full sort.
    """
    v = np.asarray(values).ravel()
    if v.size == 0:
        raise ValidationError("percentile of empty input")
    if not 0.0 < quantile < 1.0:
        raise ValidationError(f"quantile must be in (0, 1), got {quantile}")
    k = max(math.ceil(quantile * v.size) - 1, 0)
    return float(np.partition(v, k)[k])


def _percentile_pool(w_attn: np.ndarray, params: GateParams) -> np.ndarray:
    if params.include_diagonal:
        return w_attn.ravel()
    n = w_attn.shape[0]
    mask = ~np.eye(n, dtype=bool)
    return w_attn[mask]


def build_gate(w_attn: np.ndarray, params: GateParams) -> sparse.csr_matrix:
    """Boolean mask keeping entries strictly above the percentile threshold.

    Strict '>' drops every tie at the threshold value, so the surviving count
    is at most (1 - quantile) * N^2 plus nothing; ties can only shrink it.
    """
    tau = percentile_threshold(_percentile_pool(w_attn, params), params.quantile)
    return _gate_at(w_attn, tau, params.include_diagonal)


def _gate_at(w_attn: np.ndarray, tau: float, include_diagonal: bool) -> sparse.csr_matrix:
    keep = w_attn > tau
    if not include_diagonal:
        np.fill_diagonal(keep, False)
    rows, cols = np.nonzero(keep)
    n = w_attn.shape[0]
    data = np.ones(rows.size, dtype=bool)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def full_gate(n: int) -> sparse.csr_matrix:
    """All-edges gate, used by the ungated ablation variant."""
    indptr = np.arange(0, n * n + 1, n, dtype=np.int64)
    indices = np.tile(np.arange(n, dtype=np.int64), n)
    data = np.ones(n * n, dtype=bool)
    return sparse.csr_matrix((data, indices, indptr), shape=(n, n))


def gated_output_affinity(o_ii_mean: np.ndarray, gate: sparse.spmatrix) -> sparse.csr_matrix:
    """Cosine of output-feature rows, evaluated only at gated positions.

    Never materializes the dense cosine matrix; negative cosines are clamped
    to 0 so that row normalization yields a proper distribution.
    """
    on = _normalized_rows(o_ii_mean)
    n = on.shape[0]
    if gate.shape != (n, n):
        raise ValidationError(f"gate shape {gate.shape} does not match {n} tokens")
    coo = gate.tocoo()
    rows, cols = coo.row, coo.col
    vals = np.empty(rows.size, dtype=np.float64)
    chunk = max(_EDGE_CHUNK // max(on.shape[1], 1), 1024)
    for s in range(0, rows.size, chunk):
        e = min(s + chunk, rows.size)
        vals[s:e] = np.einsum("ij,ij->i", on[rows[s:e]], on[cols[s:e]])
    np.clip(vals, 0.0, 1.0, out=vals)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def normalize_rows(w: sparse.spmatrix, tau_w: float = float("nan")) -> HybridGraph:
    """Divide each nonzero row by its sum; zero rows stay all-zero.

    Pre-normalization row sums are recorded so isolated tokens remain
    identifiable downstream.
    """
    w = w.tocsr().astype(np.float64)
    if (w.data < 0).any():
        raise ValidationError("row normalization requires non-negative weights")
    n = w.shape[0]
    row_sums = np.asarray(w.sum(axis=1)).ravel()
    scale = np.ones(n, dtype=np.float64)
    nz = row_sums > 0.0
    scale[nz] = 1.0 / row_sums[nz]
    w.data *= np.repeat(scale, np.diff(w.indptr))
    density = w.nnz / float(n * n)
    return HybridGraph(
        n=n,
        edges=w,
        row_sums_pre_norm=row_sums,
        tau_w=tau_w,
        gate_density=density,
    )


def build_hybrid_graph(
    signals,
    params: GateParams = GateParams(),
    n_workers: int = 1,
    use_gate: bool = True,
    use_cos_weights: bool = True,
) -> HybridGraph:
    """Compose similarity -> gate -> gated cosines -> row normalization.

    use_gate=False keeps every edge (ungated ablation); use_cos_weights=False
    replaces output-space cosines with unit weights on surviving edges
    (gate-only ablation).  Both default to the full hybrid graph.
    """
    o_ii_mean = signals.o_ii_mean
    n = o_ii_mean.shape[0]
    if use_gate:
        w_attn = row_similarity(signals.a_ii_mean, n_workers=n_workers)
        tau = percentile_threshold(_percentile_pool(w_attn, params), params.quantile)
        gate = _gate_at(w_attn, tau, params.include_diagonal)
        del w_attn
    else:
        tau = -math.inf
        gate = full_gate(n)
    if use_cos_weights:
        w = gated_output_affinity(o_ii_mean, gate)
    else:
        w = gate.astype(np.float64)
    return normalize_rows(w, tau_w=tau)


def dump_edges(graph: HybridGraph, path) -> None:
    """Debug dump: one 'i j weight' line per surviving edge (small N only)."""
    coo = graph.edges.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, w in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {w:.9g}\n")
