"""Identification attack over static profiles and sensitive-attribute attack
over item interactions.

Identification: group users by their static-feature combination ("buckets");
a user in a bucket of size K is identified with probability 1/K. Sensitive
attribute: tally each item's accesses by the accessing user's group value;
an item's ambiguity is 100 minus the largest group share in percent, i.e. the
attacker's failure rate when predicting the group from one interaction.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import EmbleakError
from .trace import AccessTrace, ProfileTable, _btag_code


@dataclass(eq=False)
class BucketTable:
    feature_names: tuple[str, ...]
    buckets: dict[tuple[int, ...], np.ndarray]  # combination -> user ids
    user_ids: np.ndarray
    user_anonymity: np.ndarray  # bucket size per user, aligned with user_ids

    @property
    def n_buckets(self) -> int:
        return len(self.buckets)


def bucketize(profiles: ProfileTable, features) -> BucketTable:
    """Exact group-by on the tuple of selected static features."""
    features = tuple(features)
    if not features:
        raise EmbleakError("need at least one feature to bucketize on")
    cols = np.column_stack([profiles.column(name) for name in features])
    combos, inverse, counts = np.unique(
        cols, axis=0, return_inverse=True, return_counts=True
    )
    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(counts)[:-1]
    groups = np.split(profiles.user_ids[order], bounds)
    buckets = {
        tuple(int(v) for v in combo): np.sort(users)
        for combo, users in zip(combos, groups)
    }
    return BucketTable(
        feature_names=features,
        buckets=buckets,
        user_ids=profiles.user_ids,
        user_anonymity=counts[inverse],
    )


@dataclass
class AnonymityReport:
    bucket_count: int
    histogram: dict[int, int]  # bucket size -> number of buckets
    below_k_counts: np.ndarray  # entry K-1 = users with anonymity <= K

    def validate(self):
        if np.any(np.diff(self.below_k_counts) < 0):
            raise EmbleakError("below_k_counts must be non-decreasing")


def k_anonymity_report(buckets: BucketTable, k_max: int = 10) -> AnonymityReport:
    """Users whose bucket size is at or below each K in 1..k_max."""
    if buckets.n_buckets == 0:
        raise EmbleakError("empty bucket table")
    sizes = np.array([len(u) for u in buckets.buckets.values()])
    histogram = dict(sorted(Counter(int(s) for s in sizes).items()))
    below = np.array(
        [int(sizes[sizes <= k].sum()) for k in range(1, k_max + 1)], dtype=np.int64
    )
    report = AnonymityReport(buckets.n_buckets, histogram, below)
    report.validate()
    return report


# ---------------------------------------------------------------------------
# sensitive attribute: ambiguity
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AmbiguityRecord:
    item_id: int
    group_shares: np.ndarray
    ambiguity: float  # percent, 100 * (1 - max share)
    access_count: int


def ambiguity_per_item(trace: AccessTrace, profiles: ProfileTable,
                       item_column: str, group_attr: str,
                       btag=None) -> list[AmbiguityRecord]:
    """Per-item access shares by the interacting users' group value.

    Trace users are matched to profile rows on their raw ids. All interaction
    kinds count unless ``btag`` narrows the stream.
    """
    items = trace.column(item_column)
    raw_users = trace.raw_user_ids()
    if btag is not None:
        if trace.btags is None:
            raise EmbleakError("trace has no btag column to filter on")
        code = btag if isinstance(btag, (int, np.integer)) else _btag_code(btag)
        keep = trace.btags == code
        items, raw_users = items[keep], raw_users[keep]

    index = profiles.user_index()
    missing = sorted({int(u) for u in raw_users if int(u) not in index})
    if missing:
        shown = ", ".join(str(u) for u in missing[:10])
        raise EmbleakError(
            f"{len(missing)} trace user(s) have no profile row: {shown}"
            + ("..." if len(missing) > 10 else "")
        )
    rows = np.fromiter((index[int(u)] for u in raw_users), dtype=np.int64,
                       count=len(raw_users))
    groups = profiles.column(group_attr)[rows]

    n_items = trace.schema.cardinality(item_column)
    n_groups = int(profiles.column(group_attr).max()) + 1
    tally = sparse.coo_matrix(
        (np.ones(len(items)), (items, groups)), shape=(n_items, n_groups)
    ).tocsr()
    tally.sum_duplicates()

    records = []
    totals = np.asarray(tally.sum(axis=1)).ravel()
    for item in np.flatnonzero(totals):
        shares = np.asarray(tally[item].todense()).ravel() / totals[item]
        records.append(
            AmbiguityRecord(
                item_id=int(item),
                group_shares=shares,
                ambiguity=100.0 * (1.0 - float(shares.max())),
                access_count=int(totals[item]),
            )
        )
    return records


@dataclass
class AmbiguityDistribution:
    bin_edges: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    n_items: int
    fraction_zero: float
    fraction_le_20: float
    fraction_le_50: float
    access_weighted_fraction_zero: float
    access_weighted_fraction_le_20: float
    access_weighted_fraction_le_50: float


def ambiguity_distribution(records, bins: int) -> AmbiguityDistribution:
    """PDF/CDF over equal-width ambiguity bins on [0, 100].

    Summary fractions are per item (each item weighted once); access-weighted
    variants are reported alongside.
    """
    if not records:
        raise EmbleakError("no ambiguity records")
    values = np.array([r.ambiguity for r in records])
    weights = np.array([r.access_count for r in records], dtype=np.float64)
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 100.0))
    pdf = counts / len(values)

    eps = 1e-9

    def frac(limit, w=None):
        mask = values <= limit + eps
        if w is None:
            return float(mask.mean())
        return float(w[mask].sum() / w.sum())

    return AmbiguityDistribution(
        bin_edges=edges,
        pdf=pdf,
        cdf=np.cumsum(pdf),
        n_items=len(values),
        fraction_zero=frac(0.0),
        fraction_le_20=frac(20.0),
        fraction_le_50=frac(50.0),
        access_weighted_fraction_zero=frac(0.0, weights),
        access_weighted_fraction_le_20=frac(20.0, weights),
        access_weighted_fraction_le_50=frac(50.0, weights),
    )


def predict_group(item_id: int, records) -> int:
    """Most likely group value for one item; ties go to the lowest group id."""
    for r in records:
        if r.item_id == item_id:
            return int(np.argmax(r.group_shares))
    raise EmbleakError(f"item {item_id} has no recorded accesses")
