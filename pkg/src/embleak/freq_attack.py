"""Frequency attack on modulo-mask hashing.

The attacker knows the pre-hash prior and observes post-hash access
frequencies. Candidate-mask output profiles are circular shifts of one base
profile, so the best-matching mask is the argmax over shifted dot products,
computed both by a direct O(P^2) scan and by FFT circular cross-correlation
in O(P log P); the two paths must agree. Hash inversion then ranks each
output's preimages by prior probability and reports top-K accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmbleakError
from .hashing import HashSpec
from .trace import CategoricalDistribution

_TIE_EPS = 1e-12


@dataclass(eq=False)
class ShiftProfileBank:
    """Base output profile under mask 0; mask i's profile is a circular shift.

    The full P x P profile matrix is never materialized.
    """

    p: int
    base_profile: np.ndarray

    def profile(self, mask: int) -> np.ndarray:
        return np.roll(self.base_profile, mask)


def build_shift_bank(prior: CategoricalDistribution, p: int) -> ShiftProfileBank:
    """Push the prior through the mask-0 modulo hash to get the base profile."""
    if p > prior.n:
        raise EmbleakError(f"P={p} exceeds prior domain size {prior.n}")
    m0 = np.bincount(np.arange(prior.n) % p, weights=prior.probs, minlength=p)
    return ShiftProfileBank(p, m0)


def _scores_naive(m0: np.ndarray, observed: np.ndarray) -> np.ndarray:
    p = len(m0)
    return np.array([float(np.dot(np.roll(m0, i), observed)) for i in range(p)])


def _scores_fft(m0: np.ndarray, observed: np.ndarray) -> np.ndarray:
    # Linear cross-correlation via real FFTs padded to a power of two, then
    # folded back to the circular correlation of period P.
    p = len(m0)
    size = 1
    while size < 2 * p - 1:
        size *= 2
    fa = np.fft.rfft(observed, size)
    fb = np.fft.rfft(m0, size)
    lin = np.fft.irfft(fa * np.conj(fb), size)
    scores = lin[:p].copy()
    scores[1:] += lin[size - p + 1 : size]
    return scores


def _argmax_lowest(scores: np.ndarray) -> int:
    # ties (within fp noise) go to the smallest mask
    top = scores.max()
    tol = _TIE_EPS * max(1.0, abs(top))
    return int(np.flatnonzero(scores >= top - tol)[0])


@dataclass
class MaskEstimate:
    mask: int
    degenerate: bool
    scores: np.ndarray


def recover_mask(bank: ShiftProfileBank, observed: CategoricalDistribution) -> MaskEstimate:
    """Best-aligned mask for an observed post-hash distribution.

    Scores every candidate both ways and verifies the argmaxes agree. A flat
    prior makes all masks score equally; that degenerate case returns mask 0
    with the flag set.
    """
    if observed.n != bank.p:
        raise EmbleakError(
            f"observed distribution size {observed.n} != profile size {bank.p}"
        )
    a = observed.probs
    naive = _scores_naive(bank.base_profile, a)
    fft = _scores_fft(bank.base_profile, a)
    if not np.allclose(naive, fft, rtol=1e-9, atol=1e-12):
        raise EmbleakError("naive and FFT mask scores disagree")

    spread = float(naive.max() - naive.min())
    if spread <= _TIE_EPS * max(1.0, abs(float(naive.max()))):
        return MaskEstimate(0, True, naive)

    best_naive = _argmax_lowest(naive)
    best_fft = _argmax_lowest(fft)
    if best_naive != best_fft:
        raise EmbleakError(
            f"mask argmax mismatch: naive={best_naive}, fft={best_fft}"
        )
    return MaskEstimate(best_naive, False, naive)


# ---------------------------------------------------------------------------
# top-K hash inversion
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class InversionTable:
    """Per-output preimage lists ranked by prior probability (ties: lower id).

    ``ranks[x]`` is x's rank inside its own estimated bucket, or ``k_max``
    when x did not make the stored depth.
    """

    spec_estimate: HashSpec
    k_max: int
    buckets: list[np.ndarray]
    est_outputs: np.ndarray
    ranks: np.ndarray


def build_inversion_table(prior: CategoricalDistribution, spec_estimate: HashSpec,
                          k: int) -> InversionTable:
    if k < 1:
        raise EmbleakError("K must be >= 1")
    n, p = spec_estimate.n, spec_estimate.p
    if prior.n != n:
        raise EmbleakError(f"prior domain {prior.n} != hash input size {n}")
    est = np.asarray(spec_estimate.apply(np.arange(n)), dtype=np.int64)
    order = np.lexsort((np.arange(n), -prior.probs))  # prob desc, then low id
    ranks = np.full(n, k, dtype=np.int64)
    buckets = [[] for _ in range(p)]
    fill = np.zeros(p, dtype=np.int64)
    for x in order:
        y = est[x]
        r = fill[y]
        fill[y] += 1
        if r < k:
            ranks[x] = r
            buckets[y].append(int(x))
    return InversionTable(
        spec_estimate=spec_estimate,
        k_max=k,
        buckets=[np.asarray(b, dtype=np.int64) for b in buckets],
        est_outputs=est,
        ranks=ranks,
    )


@dataclass
class AccuracyCurve:
    """top_k_accuracy[i] is the hit rate within the attacker's first i+1 guesses."""

    top_k_accuracy: np.ndarray
    n_eval: int

    def validate(self):
        if np.any(np.diff(self.top_k_accuracy) < -1e-12):
            raise EmbleakError("accuracy curve must be non-decreasing in K")


def _hit_depths(table: InversionTable, values: np.ndarray, true_spec: HashSpec):
    """Boolean bucket match plus per-value rank; a hit at K needs both."""
    y_true = np.asarray(true_spec.apply(values), dtype=np.int64)
    match = table.est_outputs[values] == y_true
    return match, table.ranks[values]


def evaluate_topk(table: InversionTable, eval_values, true_spec: HashSpec,
                  k: int) -> AccuracyCurve:
    """Empirical top-1..top-K accuracy of the inversion over an eval stream."""
    values = np.asarray(eval_values, dtype=np.int64)
    if values.size == 0:
        raise EmbleakError("empty evaluation set")
    if k > table.k_max:
        raise EmbleakError(f"K={k} exceeds stored table depth {table.k_max}")
    if int(values.max()) >= table.spec_estimate.n:
        raise EmbleakError("eval values exceed hash input size")
    match, ranks = _hit_depths(table, values, true_spec)
    curve = np.array(
        [float(np.mean(match & (ranks < depth))) for depth in range(1, k + 1)]
    )
    result = AccuracyCurve(curve, int(values.size))
    result.validate()
    return result


def analytic_topk(prior_true: CategoricalDistribution, table: InversionTable,
                  true_spec: HashSpec, k: int) -> AccuracyCurve:
    """Closed-form expected curve when eval queries are drawn from prior_true."""
    if k > table.k_max:
        raise EmbleakError(f"K={k} exceeds stored table depth {table.k_max}")
    values = np.arange(prior_true.n, dtype=np.int64)
    match, ranks = _hit_depths(table, values, true_spec)
    w = prior_true.probs
    curve = np.array(
        [float(w[match & (ranks < depth)].sum()) for depth in range(1, k + 1)]
    )
    result = AccuracyCurve(curve, 0)
    result.validate()
    return result
