"""Re-identification through recent-purchase keys.

A user's m most recent purchases form a behavioral fingerprint ("key") that
is valid from the purchase completing it until the next purchase replaces it.
The attacker links queries that share a key and arrive within a time
threshold; precision/recall are measured over the universe of same-key query
pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmbleakError
from .trace import AccessTrace, BUY


def purchase_histories(trace: AccessTrace, item_column: str):
    """Per-user time-ordered (timestamps, items) of buy-tagged events.

    Traces without a btag column treat every event as a purchase.
    """
    items = trace.column(item_column)
    users = trace.user_ids
    ts = trace.timestamps
    if trace.btags is not None:
        keep = trace.btags == BUY
        items, users, ts = items[keep], users[keep], ts[keep]
    order = np.argsort(users, kind="stable")  # time order kept within user
    users, items, ts = users[order], items[order], ts[order]
    histories = {}
    if len(users) == 0:
        return histories
    uniq, starts = np.unique(users, return_index=True)
    bounds = np.append(starts[1:], len(users))
    for uid, s, e in zip(uniq, starts, bounds):
        histories[int(uid)] = (ts[s:e], items[s:e])
    return histories


@dataclass(eq=False)
class KeyIntervalIndex:
    """key (m-tuple of items) -> list of (user, start, end) validity intervals.

    Intervals are half-open [start, end); the last key of a user stays valid
    until ``current`` (max trace timestamp + 1).
    """

    m: int
    item_column: str
    current: int
    index: dict[tuple[int, ...], list[tuple[int, int, int]]]

    @property
    def n_keys(self) -> int:
        return len(self.index)

    def total_occurrences(self) -> int:
        return sum(len(v) for v in self.index.values())


def build_key_index(trace: AccessTrace, item_column: str, m: int) -> KeyIntervalIndex:
    """Sliding m-purchase windows per user, each with its validity interval."""
    if m < 1:
        raise EmbleakError("m must be >= 1")
    histories = purchase_histories(trace, item_column)
    current = int(trace.timestamps.max()) + 1 if trace.n_events else 0
    index: dict[tuple[int, ...], list[tuple[int, int, int]]] = {}
    for uid, (ts, items) in histories.items():
        n = len(items)
        if n < m:
            continue
        items_list = items.tolist()
        ts_list = ts.tolist()
        for w in range(n - m + 1):
            key = tuple(items_list[w : w + m])
            start = ts_list[w + m - 1]
            end = ts_list[w + m] if w + m < n else current
            index.setdefault(key, []).append((uid, start, end))
    return KeyIntervalIndex(m, item_column, current, index)


def uniqueness_probe(index: KeyIntervalIndex, trace: AccessTrace, m: int,
                     samples: int, seed: int) -> float:
    """Fraction of sampled (user, time) points whose current key is unique.

    Draws users uniformly over the trace's distinct users and timestamps
    uniformly over the trace span; a draw is skipped when the user has fewer
    than m purchases by that time. A sample is unique when no other user holds
    the same key with a validity interval containing the timestamp.
    """
    if samples < 1:
        raise EmbleakError("samples must be >= 1")
    if m != index.m:
        raise EmbleakError(f"index was built with m={index.m}, probe asked m={m}")
    histories = purchase_histories(trace, index.item_column)
    if not histories:
        raise EmbleakError("trace has no purchases")
    users = np.array(sorted(histories.keys()), dtype=np.int64)
    lo, hi = int(trace.timestamps.min()), int(trace.timestamps.max())
    rng = np.random.default_rng(seed)
    drawn_users = rng.choice(users, size=samples)
    drawn_ts = rng.integers(lo, hi + 1, size=samples)

    valid = 0
    unique = 0
    for uid, t in zip(drawn_users, drawn_ts):
        ts, items = histories[int(uid)]
        have = int(np.searchsorted(ts, t, side="right"))
        if have < m:
            continue
        valid += 1
        key = tuple(int(v) for v in items[have - m : have])
        clash = False
        for other, start, end in index.index[key]:
            if other != uid and start <= t < end:
                clash = True
                break
        if not clash:
            unique += 1
    if valid == 0:
        raise EmbleakError("no valid probe samples (users never reach m purchases)")
    return unique / valid


# ---------------------------------------------------------------------------
# query linkage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Query:
    query_id: int
    timestamp: int
    key: tuple[int, ...]
    true_user: int


def derive_queries(trace: AccessTrace, item_column: str, m: int) -> list[Query]:
    """One query per non-purchase event whose user already has >= m purchases.

    The query carries the user's current key at that moment. Purchases at the
    same timestamp count in trace (file) order.
    """
    if m < 1:
        raise EmbleakError("m must be >= 1")
    if trace.btags is None:
        raise EmbleakError("trace has no btag column; queries need non-purchase events")
    items = trace.column(item_column)
    recent: dict[int, list[int]] = {}
    queries: list[Query] = []
    for i in range(trace.n_events):
        uid = int(trace.user_ids[i])
        if trace.btags[i] == BUY:
            window = recent.setdefault(uid, [])
            window.append(int(items[i]))
            if len(window) > m:
                del window[0]
        else:
            window = recent.get(uid)
            if window is not None and len(window) == m:
                queries.append(
                    Query(len(queries), int(trace.timestamps[i]), tuple(window), uid)
                )
    return queries


@dataclass
class LinkageReport:
    threshold: int
    tp: int
    fp: int
    fn: int
    precision: float | None
    recall: float | None

    @property
    def precision_undefined(self) -> bool:
        return self.precision is None

    @property
    def recall_undefined(self) -> bool:
        return self.recall is None


def _count_pairs_within(times: list[int], threshold: int) -> int:
    # times sorted ascending; pairs with |dt| <= threshold via two pointers
    count = 0
    left = 0
    for right in range(len(times)):
        while times[right] - times[left] > threshold:
            left += 1
        count += right - left
    return count


def link_queries(queries, threshold: int) -> LinkageReport:
    """Link same-key query pairs closer than the threshold.

    The decision universe is every unordered pair of distinct queries sharing
    a key: predicted-same when |dt| <= threshold, actually-same when both came
    from one user. Precision or recall with a zero denominator is reported as
    None (undefined).
    """
    last = None
    groups: dict[tuple[int, ...], list[Query]] = {}
    for q in queries:
        if last is not None and q.timestamp < last:
            raise EmbleakError("queries must be time-sorted")
        last = q.timestamp
        groups.setdefault(q.key, []).append(q)

    tp = fp = fn = 0
    for members in groups.values():
        if len(members) < 2:
            continue
        times = [q.timestamp for q in members]
        predicted = _count_pairs_within(times, threshold)
        per_user: dict[int, list[int]] = {}
        for q in members:
            per_user.setdefault(q.true_user, []).append(q.timestamp)
        actual = 0
        tp_group = 0
        for user_times in per_user.values():
            c = len(user_times)
            actual += c * (c - 1) // 2
            tp_group += _count_pairs_within(user_times, threshold)
        tp += tp_group
        fp += predicted - tp_group
        fn += actual - tp_group

    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return LinkageReport(threshold, tp, fp, fn, precision, recall)


def threshold_sweep(queries, thresholds) -> list[LinkageReport]:
    """One linkage report per threshold (must be sorted ascending)."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise EmbleakError("thresholds must be sorted ascending")
    return [link_queries(queries, t) for t in thresholds]
