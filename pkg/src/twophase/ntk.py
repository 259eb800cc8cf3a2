"""Tangent-kernel assembly and the rank-preservation monitor.

The Jacobian J stacks output gradients sample-major: row (i * m_y + k) is
the derivative of output coordinate k at sample i with respect to the flat
parameter vector.  The kernel K = J J^T is symmetric positive semidefinite
and shares its rank with J; training phases that must not lose kernel rank
compare each step against the snapshot taken right after perturbation,
reusing the reference snapshot's threshold so the comparison cannot flap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DecompositionError
from .network import NetworkSpec, Params, backprop, forward_hidden

__all__ = [
    "NtkSnapshot",
    "compute_jacobian",
    "compute_ntk",
    "compute_ntk_streamed",
    "assert_rank_preserved",
]

DEFAULT_MAX_JACOBIAN_ENTRIES = 50_000_000


@dataclass
class NtkSnapshot:
    """Kernel spectrum, rank, and the threshold the rank was measured at."""

    rows: int
    cols: int
    kernel_spectrum: np.ndarray
    rank: int
    tolerance: float
    step: int = -1
    jacobian: np.ndarray | None = None
    kernel: np.ndarray | None = None

    def rank_at(self, tol: float) -> int:
        return int(np.count_nonzero(self.kernel_spectrum > tol))


def compute_jacobian(
    spec: NetworkSpec,
    params: Params,
    x,
    frozen_stats=None,
    max_entries: int = DEFAULT_MAX_JACOBIAN_ENTRIES,
) -> np.ndarray:
    """Full output Jacobian, shape (n * m_y) x d.

    Assembled as one backward pass per output coordinate over a shared
    forward trace, so batch-statistics coupling through BN layers is
    differentiated exactly.
    """
    trace = forward_hidden(spec, params, x, frozen_stats)
    n = trace.inputs.shape[0]
    d = spec.param_count()
    rows = n * spec.output_dim
    if rows * d > max_entries:
        raise MemoryError(
            f"Jacobian would hold {rows} x {d} entries (> {max_entries}); "
            "use compute_ntk_streamed for the rank without materializing J"
        )
    jac = np.empty((rows, d))
    upstream = np.zeros((n, spec.output_dim))
    for i in range(n):
        for k in range(spec.output_dim):
            upstream[i, k] = 1.0
            jac[i * spec.output_dim + k] = backprop(
                spec, params, x, upstream, subset="all", trace=trace
            )
            upstream[i, k] = 0.0
    return jac


def _spectrum_rank(spectrum: np.ndarray, rows: int, cols: int, tol: float | None):
    spectrum = np.sort(np.maximum(spectrum, 0.0))[::-1]
    if tol is None:
        top = float(spectrum[0]) if spectrum.size else 0.0
        tol = max(rows, cols) * np.finfo(np.float64).eps * top
    rank = int(np.count_nonzero(spectrum > tol))
    return spectrum, rank, float(tol)


def compute_ntk(jacobian, step: int = -1, tol: float | None = None,
                rank_via: str = "kernel") -> NtkSnapshot:
    """Snapshot of K = J J^T with its numerical rank.

    rank_via "kernel" measures the eigenvalues of the materialized K;
    "jacobian" squares J's singular values instead, which is the same
    spectrum without forming K.  The default threshold follows the stock
    rank convention, max(K.shape) * eps * largest eigenvalue.
    """
    jac = np.asarray(jacobian, dtype=np.float64)
    if jac.ndim != 2 or not np.all(np.isfinite(jac)):
        raise ValueError("jacobian must be a finite 2-D array")
    kernel = jac @ jac.T
    rows = kernel.shape[0]
    try:
        if rank_via == "kernel":
            spectrum = np.linalg.eigvalsh(kernel)
        elif rank_via == "jacobian":
            spectrum = np.linalg.svd(jac, compute_uv=False) ** 2
        else:
            raise ValueError(f"unknown rank_via {rank_via!r}")
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"spectrum of {rows} x {rows} kernel failed: {exc}") from exc
    spectrum, rank, used_tol = _spectrum_rank(spectrum, rows, rows, tol)
    return NtkSnapshot(
        rows=rows,
        cols=jac.shape[1],
        kernel_spectrum=spectrum,
        rank=rank,
        tolerance=used_tol,
        step=step,
        jacobian=jac,
        kernel=kernel,
    )


def compute_ntk_streamed(
    spec: NetworkSpec,
    params: Params,
    x,
    frozen_stats=None,
    step: int = -1,
    tol: float | None = None,
    block: int = 4096,
) -> NtkSnapshot:
    """Kernel snapshot accumulated over parameter blocks, J never stored whole.

    Runs the same per-output backward passes as compute_jacobian but adds
    J_block J_block^T into K one column block at a time.
    """
    trace = forward_hidden(spec, params, x, frozen_stats)
    n = trace.inputs.shape[0]
    rows = n * spec.output_dim
    d = spec.param_count()
    grads = np.empty((rows, min(block, d)))
    kernel = np.zeros((rows, rows))
    upstream = np.zeros((n, spec.output_dim))
    # all rows restricted to one column block at a time; memory stays
    # rows x block at the cost of one backward sweep per block
    for start in range(0, d, block):
        stop = min(start + block, d)
        for i in range(n):
            for k in range(spec.output_dim):
                upstream[i, k] = 1.0
                g = backprop(spec, params, x, upstream, subset="all", trace=trace)
                grads[i * spec.output_dim + k, : stop - start] = g[start:stop]
                upstream[i, k] = 0.0
        chunk = grads[:, : stop - start]
        kernel += chunk @ chunk.T
    try:
        spectrum = np.linalg.eigvalsh(kernel)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"spectrum of {rows} x {rows} kernel failed: {exc}") from exc
    spectrum, rank, used_tol = _spectrum_rank(spectrum, rows, rows, tol)
    return NtkSnapshot(
        rows=rows,
        cols=d,
        kernel_spectrum=spectrum,
        rank=rank,
        tolerance=used_tol,
        step=step,
        kernel=kernel,
    )


def assert_rank_preserved(reference: NtkSnapshot, current: NtkSnapshot) -> bool:
    """True iff the current kernel rank, measured at the reference snapshot's
    threshold, has not dropped below the reference rank."""
    if (reference.rows, reference.cols) != (current.rows, current.cols):
        raise ValueError(
            f"snapshot dimensions differ: {(reference.rows, reference.cols)} vs "
            f"{(current.rows, current.cols)}; same dataset and architecture required"
        )
    return current.rank_at(reference.tolerance) >= reference.rank
