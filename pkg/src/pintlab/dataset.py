"""Append-only store of coarse-correction evaluations with neighbor queries.

Each record holds one evaluated correction: an input state, the fine-minus-
coarse propagation difference at that input, and the (interval, iteration)
grid cell the evaluation came from. Records are appended in per-iteration
batches and never mutated, so a kd-tree over the inputs is rebuilt once per
batch and queried many times.

Neighbor selection rules:

* ``nearest`` ranks records by squared Euclidean distance to the query;
  groups of records at exactly the m-th smallest distance are permuted by
  the caller's seeded RNG before the cut, so ties do not silently favor
  insertion order.
* The remaining strategies pick records by their (iteration, interval)
  coordinates relative to the query cell; see :meth:`CorrectionStore.select_subset`.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["CorrectionStore", "SUBSET_STRATEGIES"]

SUBSET_STRATEGIES = ("nearest", "col_rnd", "col_only", "row_col", "row_major", "col_major")

# Extra neighbors fetched beyond m on the first kd pass; if the boundary
# distance still touches the last candidate, the query falls back to a ball
# query so no tied record can be missed.
_TIE_PAD = 8


def _sq_dists(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Canonical squared distances used by every selection path."""
    diff = points - query
    return np.einsum("ij,ij->i", diff, diff)


class CorrectionStore:
    """Grow-only collection of correction records indexed for nn queries."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self._inputs = np.empty((0, dim))
        self._outputs = np.empty((0, dim))
        self._intervals = np.empty(0, dtype=np.int64)
        self._iterations = np.empty(0, dtype=np.int64)
        self._tree: cKDTree | None = None

    @property
    def size(self) -> int:
        return self._inputs.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        return self._inputs

    @property
    def outputs(self) -> np.ndarray:
        return self._outputs

    @property
    def intervals(self) -> np.ndarray:
        return self._intervals

    @property
    def iterations(self) -> np.ndarray:
        return self._iterations

    def insert_batch(self, inputs, outputs, intervals, iteration: int) -> None:
        """Append one iteration's records and rebuild the index.

        inputs/outputs are (b, dim); intervals is the per-record interval
        index; iteration tags every record in the batch.
        """
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
        intervals = np.atleast_1d(np.asarray(intervals, dtype=np.int64))
        b = inputs.shape[0]
        if inputs.shape != (b, self.dim) or outputs.shape != (b, self.dim) or intervals.shape != (b,):
            raise ValueError("batch arrays must agree in length and have width dim")
        if b == 0:
            return
        self._inputs = np.concatenate([self._inputs, inputs])
        self._outputs = np.concatenate([self._outputs, outputs])
        self._intervals = np.concatenate([self._intervals, intervals])
        self._iterations = np.concatenate(
            [self._iterations, np.full(b, int(iteration), dtype=np.int64)]
        )
        self._tree = cKDTree(self._inputs)

    def query_m_nearest(self, query, m: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Indices of the m records closest to query in Euclidean distance.

        Records tied at the cut distance are permuted with rng (insertion
        order if rng is None) before filling the remaining slots. Result is
        ordered by (distance, tie permutation).
        """
        query = np.asarray(query, dtype=float)
        if query.shape != (self.dim,):
            raise ValueError(f"query must have shape ({self.dim},), got {query.shape}")
        if not 1 <= m <= self.size:
            raise ValueError(f"m must be in [1, {self.size}], got {m}")
        k = min(self.size, m + _TIE_PAD)
        kd_dists, kd_idx = self._tree.query(query, k=k)
        kd_dists = np.atleast_1d(kd_dists)
        kd_idx = np.atleast_1d(kd_idx)
        if k > m and kd_dists[-1] <= kd_dists[m - 1] * (1.0 + 1e-9) + 1e-300:
            # The tie group at the cut may extend past the fetched
            # candidates; fall back to an inclusive ball query.
            radius = float(kd_dists[m - 1]) * (1.0 + 1e-9) + 1e-300
            ball = self._tree.query_ball_point(query, radius)
            cand = np.unique(np.concatenate([kd_idx, np.asarray(ball, dtype=np.int64)]))
        else:
            cand = np.unique(kd_idx)
        return _resolve_m_nearest(self._inputs, cand, query, m, rng)

    def select_subset(
        self,
        strategy: str,
        m: int,
        interval: int,
        iteration: int,
        query=None,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """Pick up to m record indices for a prediction at the given cell.

        The prediction updates boundary ``interval`` during ``iteration``;
        a record from interval i' and iteration j sits at grid offsets
        dc = |i' - interval| and dr = iteration - j (dr >= 1 always).

        * nearest: Euclidean m-nn of query (rng breaks distance ties).
        * col_only: records from the same interval, most recent
          min(m, available) iterations; may return fewer than m.
        * col_rnd: col_only, then random fill from the remaining records.
        * row_col: cells by growing Chebyshev ring max(dr, dc), then
          dr + dc, then dc.
        * row_major: most recent iterations first, then nearest intervals.
        * col_major: nearest intervals first, then most recent iterations.

        Deterministic final tie order for the grid strategies: interval
        ascending, then iteration descending.
        """
        if strategy not in SUBSET_STRATEGIES:
            raise ValueError(f"unknown subset strategy {strategy!r}; choose from {SUBSET_STRATEGIES}")
        if self.size == 0:
            raise ValueError("cannot select a subset from an empty store")
        if strategy == "nearest":
            if query is None:
                raise ValueError("nearest strategy needs the query state")
            return self.query_m_nearest(query, min(m, self.size), rng)

        dc = np.abs(self._intervals - int(interval))
        dr = int(iteration) - self._iterations
        # Final keys make every ordering total: interval asc, iteration desc.
        tail = (self._intervals, -self._iterations)
        if strategy in ("col_only", "col_rnd"):
            in_col = np.flatnonzero(dc == 0)
            recent = in_col[np.lexsort((-self._iterations[in_col],))]
            chosen = recent[:m]
            if strategy == "col_only" or chosen.size >= m:
                return np.sort(chosen)
            rest = np.setdiff1d(np.arange(self.size), chosen)
            if rng is None:
                fill = rest[: m - chosen.size]
            else:
                take = min(m - chosen.size, rest.size)
                fill = rng.choice(rest, size=take, replace=False)
            return np.sort(np.concatenate([chosen, fill]))
        if strategy == "row_col":
            keys = (np.maximum(dr, dc), dr + dc, dc, *tail)
        elif strategy == "row_major":
            keys = (dr, dc, *tail)
        else:  # col_major
            keys = (dc, dr, *tail)
        order = np.lexsort(keys[::-1])
        return np.sort(order[:m])

    def to_csv(self, path) -> None:
        """Dump all records (inputs, outputs, interval, iteration) as CSV."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = (
                [f"input_{j}" for j in range(self.dim)]
                + [f"output_{j}" for j in range(self.dim)]
                + ["interval", "iteration"]
            )
            writer.writerow(header)
            for row in range(self.size):
                writer.writerow(
                    [repr(float(v)) for v in self._inputs[row]]
                    + [repr(float(v)) for v in self._outputs[row]]
                    + [int(self._intervals[row]), int(self._iterations[row])]
                )


def _resolve_m_nearest(
    points: np.ndarray,
    cand: np.ndarray,
    query: np.ndarray,
    m: int,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Shared tie-aware cut used by both the kd path and the test oracle.

    cand must contain every point whose distance can reach the m-th order
    statistic. Candidates are ranked by canonical squared distance with
    index as a provisional tiebreak; the group tied exactly at the cut
    distance is permuted by rng before truncation.
    """
    cand = np.asarray(cand, dtype=np.int64)
    d2 = _sq_dists(points[cand], query)
    order = np.lexsort((cand, d2))
    d2 = d2[order]
    cand = cand[order]
    boundary = d2[m - 1]
    tied = np.flatnonzero(d2 == boundary)
    first, last = tied[0], tied[-1]
    if rng is not None and last > first:
        tie_block = cand[first : last + 1].copy()
        tie_block = tie_block[rng.permutation(tie_block.size)]
        cand = cand.copy()
        cand[first : last + 1] = tie_block
    return cand[:m]
