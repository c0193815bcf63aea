"""Entropy and mutual information of pre/post-hash index streams.

Plug-in (maximum likelihood) estimators, log base 2 throughout. No bias
correction is applied: reported values are raw empirical quantities.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import EmbleakError
from .hashing import HashSpec
from .trace import AccessTrace, CategoricalDistribution, PairDistribution, empirical_distribution


def _entropy_of(probs: np.ndarray) -> float:
    nz = probs[probs > 0]
    return float(-(nz * np.log2(nz)).sum())


def entropy(dist: CategoricalDistribution) -> float:
    """H(X) in bits; zero-probability outcomes contribute nothing."""
    if abs(float(dist.probs.sum()) - 1.0) > 1e-9:
        raise EmbleakError("distribution must be normalized")
    return _entropy_of(dist.probs)


def conditional_entropy(joint: PairDistribution) -> float:
    """H(second | first) of a joint pair distribution, in bits."""
    joint.validate()
    p_xy = joint.matrix.data
    p_x = np.asarray(joint.matrix.sum(axis=1)).ravel()
    return _entropy_of(p_xy) - _entropy_of(p_x)


def mutual_information(pre_stream, post_stream) -> float:
    """I(pre; post) in bits from the empirical joint of aligned samples."""
    x = np.asarray(pre_stream, dtype=np.int64)
    y = np.asarray(post_stream, dtype=np.int64)
    if x.shape != y.shape or x.ndim != 1:
        raise EmbleakError("streams must be 1-d and of equal length")
    if len(x) == 0:
        raise EmbleakError("streams must be non-empty")
    n = len(x)
    y_span = int(y.max()) + 1
    joint_counts = np.bincount(x * y_span + y)
    p_xy = joint_counts[joint_counts > 0] / n
    p_x = np.bincount(x) / n
    p_y = np.bincount(y) / n
    return _entropy_of(p_x) + _entropy_of(p_y) - _entropy_of(p_xy)


@dataclass
class LeakageReport:
    table_name: str
    original_size: int
    post_hash_size: int
    pre_entropy_bits: float
    post_entropy_bits: float
    mutual_information_bits: float

    def validate(self):
        eps = 1e-9
        mi = self.mutual_information_bits
        if min(self.pre_entropy_bits, self.post_entropy_bits, mi) < -eps:
            raise EmbleakError("entropies must be nonnegative")
        if mi > min(self.pre_entropy_bits, self.post_entropy_bits) + eps:
            raise EmbleakError("MI exceeds min(pre, post) entropy")

    def to_dict(self) -> dict:
        return asdict(self)


def hash_leakage_report(trace: AccessTrace, column: str, spec: HashSpec) -> LeakageReport:
    """Pre/post entropy and MI for one column in a single pass over the trace."""
    pre_dist = empirical_distribution(trace, column)
    pre_values = trace.column(column)
    if int(pre_values.max()) >= spec.n:
        raise EmbleakError("trace values exceed hash input size")
    post_values = spec.apply(pre_values)
    post_counts = np.bincount(post_values, minlength=spec.p)
    post_dist = CategoricalDistribution.from_counts(post_counts)
    report = LeakageReport(
        table_name=column,
        original_size=spec.n,
        post_hash_size=spec.p,
        pre_entropy_bits=entropy(pre_dist),
        post_entropy_bits=entropy(post_dist),
        mutual_information_bits=mutual_information(pre_values, post_values),
    )
    report.validate()
    return report
