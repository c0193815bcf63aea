"""Attacks on a secret random hash layer.

Given the attacker's prior pair distribution over raw inputs (N x N) and the
observed pair distribution over hashed outputs (P x P), recover the secret
input->output assignment. Two attacks are provided: a greedy marginal
frequency matcher, and a matching-pursuit construction of the one-hot
assignment minimizing the squared Frobenius gap between the observed pair
matrix and the pushforward of the prior pair matrix, followed by
coordinate-descent refinement. A brute-force enumerator supplies ground truth
on tiny instances.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import EmbleakError
from .freq_attack import AccuracyCurve, build_inversion_table, evaluate_topk
from .hashing import HashSpec, PrivateMapHash
from .trace import CategoricalDistribution, PairDistribution

UNASSIGNED = -1

SELECTION_FREQUENCY = "freq"  # fixed input order by descending pair mass
SELECTION_FULL = "full"  # rescan every (input, output) pair per step


@dataclass(eq=False)
class AssignmentMatrix:
    """Estimated hash as an assignment vector; one-hot P x N matrix on demand."""

    n: int
    p: int
    assign: np.ndarray  # int64, UNASSIGNED where not yet placed

    @classmethod
    def empty(cls, n: int, p: int) -> "AssignmentMatrix":
        return cls(n, p, np.full(n, UNASSIGNED, dtype=np.int64))

    @classmethod
    def from_table(cls, table, p: int) -> "AssignmentMatrix":
        table = np.asarray(table, dtype=np.int64)
        return cls(len(table), p, table.copy())

    def is_complete(self) -> bool:
        return bool(np.all(self.assign >= 0))

    def to_csr(self) -> sparse.csr_matrix:
        placed = np.flatnonzero(self.assign >= 0)
        return sparse.csr_matrix(
            (np.ones(len(placed)), (self.assign[placed], placed)),
            shape=(self.p, self.n),
        )

    def to_hash_spec(self) -> PrivateMapHash:
        if not self.is_complete():
            raise EmbleakError("assignment has unassigned inputs")
        return PrivateMapHash(self.n, self.p, self.assign.copy())


@dataclass
class OmpConfig:
    selection: str = SELECTION_FREQUENCY
    refinement_sweeps: int = 20
    convergence_tol: float = 1e-6
    dense_limit: int = 2048  # residual kept dense when P <= this

    def validate(self):
        if self.selection not in (SELECTION_FREQUENCY, SELECTION_FULL):
            raise EmbleakError(f"unknown selection rule {self.selection!r}")
        if self.refinement_sweeps < 0:
            raise EmbleakError("refinement_sweeps must be >= 0")
        if self.convergence_tol <= 0:
            raise EmbleakError("convergence_tol must be positive")


@dataclass
class FitTrajectory:
    """Loss after every assignment and sweep, plus optional accuracy track."""

    loss_per_iteration: list[float] = field(default_factory=list)
    construction_steps: int = 0
    sweeps_run: int = 0
    final_loss: float = 0.0
    accuracy_per_sweep: list[float] | None = None
    zero_mass_inputs: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# loss and pushforward
# ---------------------------------------------------------------------------


def pair_pushforward(pairs: PairDistribution, assign, p: int) -> PairDistribution:
    """Pair distribution induced on outputs by mapping both endpoints."""
    assign = np.asarray(assign, dtype=np.int64)
    coo = pairs.matrix.tocoo()
    m = sparse.coo_matrix(
        (coo.data, (assign[coo.row], assign[coo.col])), shape=(p, p)
    ).tocsr()
    m.sum_duplicates()
    return PairDistribution(p, m, pairs.total_count)


def assignment_loss(pre_pairs: PairDistribution, post_pairs: PairDistribution,
                    assignment: AssignmentMatrix) -> float:
    """Squared Frobenius distance between observed pairs and the pushforward."""
    if not assignment.is_complete():
        raise EmbleakError("assignment has unassigned inputs")
    if post_pairs.n != assignment.p:
        raise EmbleakError("observed pair matrix size does not match P")
    push = pair_pushforward(pre_pairs, assignment.assign, assignment.p)
    diff = (post_pairs.matrix - push.matrix).tocsr()
    return float((diff.data ** 2).sum())


# ---------------------------------------------------------------------------
# greedy marginal matcher
# ---------------------------------------------------------------------------


def greedy_frequency_match(prior: CategoricalDistribution,
                           observed: CategoricalDistribution) -> AssignmentMatrix:
    """Assign inputs (by descending prior) to the output with the largest
    residual observed frequency, deducting the input's mass as it is placed.

    Ties always go to the lowest index. Residuals are floored at zero.
    """
    n, p = prior.n, observed.n
    order = np.lexsort((np.arange(n), -prior.probs))
    residual = observed.probs.astype(np.float64).copy()
    heap = [(-residual[j], j) for j in range(p)]
    heapq.heapify(heap)
    assign = np.empty(n, dtype=np.int64)
    for i in order:
        while True:
            negv, j = heapq.heappop(heap)
            if -negv == residual[j]:
                break  # fresh entry; stale ones are discarded
        assign[i] = j
        residual[j] = max(0.0, residual[j] - prior.probs[i])
        heapq.heappush(heap, (-residual[j], j))
    return AssignmentMatrix(n, p, assign)


# ---------------------------------------------------------------------------
# matching-pursuit fit
# ---------------------------------------------------------------------------


class _DenseResidual:
    """Observed-minus-pushforward residual, dense storage."""

    def __init__(self, y: sparse.csr_matrix):
        self.r = y.toarray().astype(np.float64)

    def matvec_row(self, w):
        return self.r @ w  # sum_c R[j,c] w[c] for each j

    def matvec_col(self, w):
        return self.r.T @ w  # sum_c R[c,j] w[c] for each j

    def diagonal(self):
        return np.diagonal(self.r)

    def marginals(self):
        return self.r.sum(axis=1) + self.r.sum(axis=0)

    def update(self, rows, cols, vals, sign):
        if sign < 0:
            np.subtract.at(self.r, (rows, cols), vals)
        else:
            np.add.at(self.r, (rows, cols), vals)

    def loss(self):
        return float((self.r * self.r).sum())


class _SparseResidual:
    """Residual kept sparse for large P; diagonal tracked densely."""

    def __init__(self, y: sparse.csr_matrix, p: int):
        self.p = p
        self.r = y.astype(np.float64).tocsr()
        self._diag = y.diagonal().astype(np.float64)

    def matvec_row(self, w):
        return self.r.dot(w)

    def matvec_col(self, w):
        return self.r.T.dot(w)

    def diagonal(self):
        return self._diag

    def marginals(self):
        return (
            np.asarray(self.r.sum(axis=1)).ravel()
            + np.asarray(self.r.sum(axis=0)).ravel()
        )

    def update(self, rows, cols, vals, sign):
        delta = sparse.coo_matrix(
            (vals if sign > 0 else -vals, (rows, cols)), shape=(self.p, self.p)
        )
        self.r = (self.r + delta).tocsr()
        on_diag = rows == cols
        if np.any(on_diag):
            np.add.at(
                self._diag, rows[on_diag],
                (vals if sign > 0 else -vals)[on_diag],
            )

    def loss(self):
        return float((self.r.data ** 2).sum())


class _FitState:
    """Assignment vector plus the residual it induces.

    The candidate scan for one input aggregates that input's pair mass toward
    already-placed inputs by their output (w_out, w_in, and the self-pair
    mass), then scores every output j in one shot:

        delta(j) = sum(d^2) - 2 sum(R * d)  over the cells d touched by j,

    where the only cell receiving more than one aggregate is the diagonal
    (j, j); the cross term corrects its square.
    """

    def __init__(self, pre_pairs, post_pairs, p, config):
        self.n = pre_pairs.n
        self.p = p
        self.x_csr = pre_pairs.matrix.tocsr()
        self.x_csc = pre_pairs.matrix.tocsc()
        self.x_diag = pre_pairs.matrix.diagonal().astype(np.float64)
        if p <= config.dense_limit:
            self.residual = _DenseResidual(post_pairs.matrix)
        else:
            self.residual = _SparseResidual(post_pairs.matrix, p)
        self.assign = np.full(self.n, UNASSIGNED, dtype=np.int64)

    def support(self, i):
        h = self.assign
        s, e = self.x_csr.indptr[i], self.x_csr.indptr[i + 1]
        cols, vals = self.x_csr.indices[s:e], self.x_csr.data[s:e]
        keep = (h[cols] >= 0) & (cols != i)
        w_out = np.bincount(h[cols[keep]], weights=vals[keep], minlength=self.p)
        s, e = self.x_csc.indptr[i], self.x_csc.indptr[i + 1]
        rows, vals = self.x_csc.indices[s:e], self.x_csc.data[s:e]
        keep = (h[rows] >= 0) & (rows != i)
        w_in = np.bincount(h[rows[keep]], weights=vals[keep], minlength=self.p)
        return w_out, w_in, float(self.x_diag[i])

    def delta_vector(self, i):
        """Partial-loss change of placing input i at each output."""
        w_out, w_in, w_self = self.support(i)
        r = self.residual
        corr = r.matvec_row(w_out) + r.matvec_col(w_in) + w_self * r.diagonal()
        base = float(w_out @ w_out) + float(w_in @ w_in) + w_self * w_self
        both = w_out + w_in + w_self
        diag_sq_fix = both * both - w_out * w_out - w_in * w_in - w_self * w_self
        delta = base - 2.0 * corr + diag_sq_fix
        return delta, (w_out, w_in, w_self)

    def _cells(self, i, j, support):
        w_out, w_in, w_self = support
        out_c = np.flatnonzero(w_out)
        in_c = np.flatnonzero(w_in)
        rows = np.concatenate([np.full(len(out_c), j, dtype=np.int64), in_c])
        cols = np.concatenate([out_c, np.full(len(in_c), j, dtype=np.int64)])
        vals = np.concatenate([w_out[out_c], w_in[in_c]])
        if w_self != 0.0:
            rows = np.append(rows, j)
            cols = np.append(cols, j)
            vals = np.append(vals, w_self)
        return rows, cols, vals

    def place(self, i, j, support):
        self.assign[i] = j
        rows, cols, vals = self._cells(i, j, support)
        if len(rows):
            self.residual.update(rows, cols, vals, sign=-1)

    def remove(self, i):
        j = int(self.assign[i])
        self.assign[i] = UNASSIGNED
        support = self.support(i)
        rows, cols, vals = self._cells(i, j, support)
        if len(rows):
            self.residual.update(rows, cols, vals, sign=+1)
        return j


def _frequency_order(pre_pairs: PairDistribution) -> tuple[np.ndarray, np.ndarray]:
    row = np.asarray(pre_pairs.matrix.sum(axis=1)).ravel()
    col = np.asarray(pre_pairs.matrix.sum(axis=0)).ravel()
    mass = row + col
    order = np.lexsort((np.arange(len(mass)), -mass))
    return order, mass


def _construct(state: _FitState, pre_pairs, config, losses):
    order, mass = _frequency_order(pre_pairs)
    active = [int(i) for i in order if mass[i] > 0]
    zero_mass = sorted(int(i) for i in order if mass[i] == 0)
    loss = state.residual.loss()

    if config.selection == SELECTION_FREQUENCY:
        for i in active:
            delta, support = state.delta_vector(i)
            j = int(np.argmin(delta))  # first minimum, so lowest output wins ties
            state.place(i, j, support)
            loss += float(delta[j])
            losses.append(loss)
    else:
        remaining = sorted(active)
        while remaining:
            best = (np.inf, -1, -1, None)
            for i in remaining:
                delta, support = state.delta_vector(i)
                j = int(np.argmin(delta))
                if float(delta[j]) < best[0]:  # strict: earlier (lower) i keeps ties
                    best = (float(delta[j]), i, j, support)
            _, i, j, support = best
            state.place(i, j, support)
            loss += best[0]
            losses.append(loss)
            remaining.remove(i)

    # inputs never seen in the prior: loss-indifferent, steer them to the
    # output with the largest leftover marginal
    for i in zero_mass:
        marg = state.residual.marginals()
        j = int(np.argmax(marg))
        state.place(i, j, (np.zeros(state.p), np.zeros(state.p), 0.0))
        losses.append(loss)
    return loss, zero_mass


def _refine(state: _FitState, pre_pairs, config, truth, losses, accuracies, loss):
    order, _ = _frequency_order(pre_pairs)
    prev = loss
    sweeps = 0
    for _ in range(config.refinement_sweeps):
        for i in order:
            j_old = state.remove(int(i))
            delta, support = state.delta_vector(int(i))
            j_best = int(np.argmin(delta))
            # move only on strict improvement; exact ties keep the current slot
            j_new = j_best if delta[j_best] < delta[j_old] else j_old
            state.place(int(i), j_new, support)
            loss = loss - float(delta[j_old]) + float(delta[j_new])
        losses.append(loss)
        sweeps += 1
        if truth is not None:
            accuracies.append(top1_success(state.assign, truth[0], truth[1].probs))
        rel = (prev - loss) / max(abs(prev), 1e-300)
        if rel < config.convergence_tol:
            break
        prev = loss
    return loss, sweeps


def omp_fit(pre_pairs: PairDistribution, post_pairs: PairDistribution, p: int,
            config: OmpConfig | None = None, truth=None):
    """Fit a full assignment by greedy column construction plus refinement.

    Construction places one input per iteration. The ``freq`` rule fixes the
    input order by descending pair mass and picks the best output per input;
    ``full`` rescans every unplaced (input, output) candidate each step and
    takes the global best (small instances only). Refinement then sweeps
    coordinate descent until the relative loss change drops below
    ``convergence_tol`` or the sweep budget runs out.

    ``truth``, when given as ``(true_table, prior)``, adds a top-1 accuracy
    track sampled after construction and after every sweep.

    Returns ``(assignment, trajectory)``.
    """
    config = config or OmpConfig()
    config.validate()
    n = pre_pairs.n
    if p > n:
        raise EmbleakError(f"P={p} must not exceed N={n}")
    if post_pairs.n != p:
        raise EmbleakError(f"observed pair matrix is {post_pairs.n}x{post_pairs.n}, expected {p}x{p}")
    for pairs, name in ((pre_pairs, "pre"), (post_pairs, "post")):
        if abs(float(pairs.matrix.sum()) - 1.0) > 1e-9:
            raise EmbleakError(f"{name} pair distribution is not normalized")
    if truth is not None:
        true_table = np.asarray(
            truth[0].table() if hasattr(truth[0], "table") else truth[0],
            dtype=np.int64,
        )
        truth = (true_table, truth[1])

    state = _FitState(pre_pairs, post_pairs, p, config)
    losses: list[float] = []
    accuracies: list[float] = []

    loss, zero_mass = _construct(state, pre_pairs, config, losses)
    if truth is not None:
        accuracies.append(top1_success(state.assign, truth[0], truth[1].probs))
    loss, sweeps = _refine(state, pre_pairs, config, truth, losses, accuracies, loss)

    trajectory = FitTrajectory(
        loss_per_iteration=losses,
        construction_steps=n,
        sweeps_run=sweeps,
        final_loss=state.residual.loss(),
        accuracy_per_sweep=accuracies if truth is not None else None,
        zero_mass_inputs=zero_mass,
    )
    return AssignmentMatrix(n, p, state.assign.copy()), trajectory


def refine(pre_pairs: PairDistribution, post_pairs: PairDistribution,
           assignment: AssignmentMatrix, config: OmpConfig | None = None,
           truth=None):
    """Coordinate-descent sweeps starting from an existing full assignment."""
    config = config or OmpConfig()
    config.validate()
    if not assignment.is_complete():
        raise EmbleakError("refinement needs a fully assigned starting point")
    state = _FitState(pre_pairs, post_pairs, assignment.p, config)
    push = pair_pushforward(pre_pairs, assignment.assign, assignment.p)
    state.residual.update(*_coo_parts(push.matrix), sign=-1)
    state.assign = assignment.assign.copy()

    losses: list[float] = []
    accuracies: list[float] = []
    if truth is not None:
        true_table = np.asarray(
            truth[0].table() if hasattr(truth[0], "table") else truth[0],
            dtype=np.int64,
        )
        truth = (true_table, truth[1])
    loss, sweeps = _refine(
        state, pre_pairs, config, truth, losses, accuracies, state.residual.loss()
    )
    trajectory = FitTrajectory(
        loss_per_iteration=losses,
        construction_steps=0,
        sweeps_run=sweeps,
        final_loss=state.residual.loss(),
        accuracy_per_sweep=accuracies if truth is not None else None,
    )
    return AssignmentMatrix(assignment.n, assignment.p, state.assign.copy()), trajectory


def _coo_parts(m: sparse.spmatrix):
    coo = m.tocoo()
    return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.astype(np.float64)


# ---------------------------------------------------------------------------
# oracle and evaluation
# ---------------------------------------------------------------------------


def brute_force_oracle(pre_pairs: PairDistribution, post_pairs: PairDistribution,
                       p: int):
    """Global minimizer over all P^N assignments (P^N <= 1e6 enforced).

    Ties return the lexicographically smallest assignment. Returns
    ``(assignment, loss)``.
    """
    n = pre_pairs.n
    if p ** n > 1_000_000:
        raise EmbleakError(f"P^N = {p ** n} exceeds the enumeration cap of 1e6")
    if post_pairs.n != p:
        raise EmbleakError("observed pair matrix size does not match P")
    coo = pre_pairs.matrix.tocoo()
    ix, jx, vx = coo.row, coo.col, coo.data
    yd = post_pairs.matrix.toarray().astype(np.float64)
    push = np.zeros((p, p))
    best_loss = np.inf
    best = None
    for combo in itertools.product(range(p), repeat=n):
        h = np.asarray(combo, dtype=np.int64)
        push[:] = 0.0
        np.add.at(push, (h[ix], h[jx]), vx)
        loss = float(((yd - push) ** 2).sum())
        if loss < best_loss:  # strict: lexicographically first wins ties
            best_loss = loss
            best = h
    return AssignmentMatrix(n, p, best.copy()), best_loss


def top1_success(assign_est, true_table, prior_probs) -> float:
    """Prior-weighted chance that the top-ranked preimage is the true input."""
    est = np.asarray(assign_est, dtype=np.int64)
    if np.any(est < 0):
        raise EmbleakError("assignment has unassigned inputs")
    true_table = np.asarray(true_table, dtype=np.int64)
    probs = np.asarray(prior_probs, dtype=np.float64)
    n = len(est)
    order = np.lexsort((np.arange(n), -probs))
    sorted_buckets = est[order]
    _, first = np.unique(sorted_buckets, return_index=True)
    p = max(int(est.max()), int(true_table.max())) + 1
    top_guess = np.full(p, -1, dtype=np.int64)
    top_guess[sorted_buckets[first]] = order[first]
    hits = top_guess[true_table] == np.arange(n)
    return float(probs[hits].sum())


def evaluate_private_attack(b_hat: AssignmentMatrix, prior: CategoricalDistribution,
                            true_spec: HashSpec, eval_values, k: int) -> AccuracyCurve:
    """Top-K inversion accuracy of an estimated assignment against the truth."""
    if not b_hat.is_complete():
        raise EmbleakError("assignment has unassigned inputs")
    table = build_inversion_table(prior, b_hat.to_hash_spec(), k)
    return evaluate_topk(table, eval_values, true_spec, k)
