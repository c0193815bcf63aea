"""Deterministic synthetic traces and profiles with tunable leakage structure.

Every sampling decision flows through numpy's PCG64 generator. Behavior
generation derives one independent substream per user from (seed, user_id),
so output is reproducible and independent of any batching of users; the final
event order is canonical (timestamp, then user, then per-user sequence).
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmbleakError
from .trace import (
    AccessTrace,
    CategoricalDistribution,
    ProfileTable,
    make_schema,
    BTAG_CODES,
)

_BROWSE = BTAG_CODES["browse"]
_BUY = BTAG_CODES["buy"]


@dataclass(frozen=True)
class ZipfSpec:
    """Power-law weights w_i proportional to (i+1)^(-s)."""

    n: int
    s: float

    def probs(self) -> np.ndarray:
        if self.n < 1:
            raise EmbleakError("ZipfSpec.n must be >= 1")
        if self.s < 0:
            raise EmbleakError("ZipfSpec.s must be >= 0")
        w = (np.arange(1, self.n + 1, dtype=np.float64)) ** (-self.s)
        return w / w.sum()


def zipf_distribution(spec: ZipfSpec) -> CategoricalDistribution:
    return CategoricalDistribution.from_probs(spec.probs())


@dataclass(frozen=True)
class ProfileConfig:
    """Static-feature generator: B occupied buckets drawn from the cross-product."""

    cardinalities: tuple[int, ...]
    occupied_buckets: int
    bucket_weights: ZipfSpec
    feature_names: tuple[str, ...] | None = None

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"f{i}" for i in range(len(self.cardinalities)))


@dataclass(frozen=True)
class GroupAffinity:
    """Group-conditioned item preference: shifted Zipf supports.

    ``disjointness`` = 1 gives each group value its own item block (ambiguity
    0 by construction); 0 widens every window to the full item range.
    """

    feature: str
    zipf_s: float = 1.0
    disjointness: float = 1.0


@dataclass
class BehaviorConfig:
    users: int
    items: int
    events_per_user: float
    horizon: int = 22 * 86400
    purchase_fraction: float = 0.0
    item_dist: ZipfSpec | None = None  # start / i.i.d. marginal; None = uniform
    markov: np.ndarray | None = None  # row-stochastic (items, items)
    group_affinity: GroupAffinity | None = None
    item_column: str = "item"

    def validate(self):
        if not 0.0 <= self.purchase_fraction <= 1.0:
            raise EmbleakError("purchase_fraction must be in [0,1]")
        if self.markov is not None:
            m = np.asarray(self.markov, dtype=np.float64)
            if m.shape != (self.items, self.items):
                raise EmbleakError(f"markov matrix must be {self.items}x{self.items}")
            if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9) or m.min() < 0:
                raise EmbleakError("markov rows must be nonnegative and sum to 1")


def random_markov(n: int, seed: int, row_support: int | None = None,
                  concentration: float = 1.0) -> np.ndarray:
    """Seeded random row-stochastic matrix (optionally sparse rows).

    Rows are Dirichlet(concentration) over either all n states or
    ``row_support`` randomly chosen states per row.
    """
    rng = np.random.default_rng(seed)
    m = np.zeros((n, n))
    if row_support is None or row_support >= n:
        g = rng.gamma(concentration, size=(n, n))
        return g / g.sum(axis=1, keepdims=True)
    for i in range(n):
        support = rng.choice(n, size=row_support, replace=False)
        w = rng.gamma(concentration, size=row_support)
        m[i, support] = w / w.sum()
    return m


def popularity_markov(n: int, seed: int, s: float = 1.3, self_loop: float = 0.3,
                      row_support: int = 8) -> np.ndarray:
    """Sparse chain whose stationary distribution is long-tailed.

    Each row mixes a self-loop (repeat interactions) with a few transition
    targets sampled and weighted by Zipf(s) popularity, so heavy items stay
    heavy in the long run the way item popularity behaves in shopping logs.
    """
    if not 0.0 <= self_loop < 1.0:
        raise EmbleakError("self_loop must be in [0, 1)")
    rng = np.random.default_rng(seed)
    q = ZipfSpec(n, s).probs()
    m = np.zeros((n, n))
    for i in range(n):
        targets = rng.choice(n, size=min(row_support, n), replace=False, p=q)
        w = q[targets] * rng.gamma(1.0, size=len(targets))
        m[i, targets] = (1.0 - self_loop) * w / w.sum()
        m[i, i] += self_loop
    return m


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


def _decode_combo(index: int, cardinalities) -> tuple[int, ...]:
    out = []
    for card in reversed(cardinalities):
        index, r = divmod(index, card)
        out.append(r)
    return tuple(reversed(out))


def gen_profiles(config: ProfileConfig, users: int, seed: int) -> ProfileTable:
    """Sample B distinct feature combinations, then a bucket per user.

    Buckets are drawn from ``bucket_weights``; each user's features are the
    bucket's combination, so bucket sizes follow the (long-tailed) weights.
    """
    if users < 1:
        raise EmbleakError("users must be >= 1")
    cards = tuple(int(c) for c in config.cardinalities)
    cross = 1
    for c in cards:
        cross *= c
    b = config.occupied_buckets
    if b > cross:
        raise EmbleakError(f"occupied_buckets {b} exceeds cross-product size {cross}")
    if config.bucket_weights.n != b:
        raise EmbleakError("bucket_weights must cover exactly occupied_buckets entries")

    rng = np.random.default_rng(seed)
    if cross <= 1_000_000:
        combo_ids = rng.choice(cross, size=b, replace=False)
        combos = [_decode_combo(int(i), cards) for i in combo_ids]
    else:
        seen, combos = set(), []
        while len(combos) < b:
            combo = tuple(int(rng.integers(0, c)) for c in cards)
            if combo not in seen:
                seen.add(combo)
                combos.append(combo)
    combo_rows = np.asarray(combos, dtype=np.int64)

    buckets = rng.choice(b, size=users, p=config.bucket_weights.probs())
    return ProfileTable(
        feature_names=config.names(),
        cardinalities=cards,
        user_ids=np.arange(users, dtype=np.int64),
        features=combo_rows[buckets],
    )


# ---------------------------------------------------------------------------
# behavior
# ---------------------------------------------------------------------------


def _group_start_dists(items: int, n_groups: int, aff: GroupAffinity) -> np.ndarray:
    """One start distribution per group value: Zipf over a circular window."""
    if not 0.0 <= aff.disjointness <= 1.0:
        raise EmbleakError("disjointness must be in [0,1]")
    dists = np.zeros((n_groups, items))
    starts = [items * g // n_groups for g in range(n_groups)]
    starts.append(items)
    for g in range(n_groups):
        block = starts[g + 1] - starts[g]
        width = block + int(round((1.0 - aff.disjointness) * (items - block)))
        width = max(1, min(items, width))
        support = (starts[g] + np.arange(width)) % items
        w = (np.arange(1, width + 1, dtype=np.float64)) ** (-aff.zipf_s)
        dists[g, support] = w / w.sum()
    return dists


def _sample_chain(rng, k, start_cum, markov_cum_rows):
    """Length-k item path: first from start_cum, rest from the chain rows."""
    us = rng.random(k)
    if markov_cum_rows is None:
        idx = np.searchsorted(start_cum, us, side="right")
        return np.minimum(idx, len(start_cum) - 1)
    items = np.empty(k, dtype=np.int64)
    top = len(start_cum) - 1
    x = min(bisect_right(start_cum, us[0]), top)
    items[0] = x
    ulist = us.tolist()
    for t in range(1, k):
        x = min(bisect_right(markov_cum_rows[x], ulist[t]), top)
        items[t] = x
    return items


def gen_behavior(config: BehaviorConfig, profiles: ProfileTable | None, seed: int) -> AccessTrace:
    """Generate an interaction trace.

    Per user: Poisson event count, sorted uniform timestamps, first item from
    the group-conditioned (or global) marginal, subsequent items from the
    Markov row of the previous item when a chain is configured, independent
    draws otherwise. Each event is a buy with ``purchase_fraction``.
    """
    config.validate()
    n = config.items
    if profiles is not None:
        user_ids = profiles.user_ids
    else:
        user_ids = np.arange(config.users, dtype=np.int64)

    base = (
        config.item_dist.probs()
        if config.item_dist is not None
        else np.full(n, 1.0 / n)
    )
    if config.item_dist is not None and config.item_dist.n != n:
        raise EmbleakError("item_dist size must equal items")

    group_of_user = None
    group_cums = None
    if config.group_affinity is not None:
        if profiles is None:
            raise EmbleakError("group_affinity requires a profile table")
        aff = config.group_affinity
        groups = profiles.column(aff.feature)  # raises SchemaError if missing
        n_groups = int(groups.max()) + 1
        group_of_user = groups
        group_cums = np.cumsum(_group_start_dists(n, n_groups, aff), axis=1)
    base_cum = np.cumsum(base)

    markov_rows = None
    if config.markov is not None:
        markov_rows = np.cumsum(np.asarray(config.markov, dtype=np.float64), axis=1)
        markov_rows = [row.tolist() for row in markov_rows]

    all_ts, all_uid, all_items, all_btag, all_seq = [], [], [], [], []
    for pos, uid in enumerate(user_ids):
        rng = np.random.default_rng([seed, int(uid)])
        k = int(rng.poisson(config.events_per_user))
        if k == 0:
            continue
        ts = np.sort(rng.integers(0, config.horizon, size=k))
        if group_cums is not None:
            start_cum = group_cums[group_of_user[pos]]
        else:
            start_cum = base_cum
        if markov_rows is not None:
            items = _sample_chain(rng, k, start_cum.tolist(), markov_rows)
        else:
            items = _sample_chain(rng, k, start_cum, None)
        buys = rng.random(k) < config.purchase_fraction
        all_ts.append(ts)
        all_uid.append(np.full(k, uid, dtype=np.int64))
        all_items.append(items)
        all_btag.append(np.where(buys, _BUY, _BROWSE).astype(np.int64))
        all_seq.append(np.arange(k, dtype=np.int64))

    schema = make_schema([(config.item_column, n)], has_btag=True)
    if not all_ts:
        empty = np.empty(0, dtype=np.int64)
        return AccessTrace(schema, empty, empty.copy(), empty.copy(),
                           np.empty((0, 1), dtype=np.int64))

    ts = np.concatenate(all_ts)
    uid = np.concatenate(all_uid)
    items = np.concatenate(all_items)
    btag = np.concatenate(all_btag)
    seq = np.concatenate(all_seq)
    order = np.lexsort((seq, uid, ts))
    return AccessTrace(
        schema=schema,
        timestamps=ts[order],
        user_ids=uid[order],
        btags=btag[order],
        values=items[order].reshape(-1, 1),
    )


# ---------------------------------------------------------------------------
# JSON config (CLI surface)
# ---------------------------------------------------------------------------


def load_gen_config(path_or_dict, seed: int):
    """Parse the generator config document.

    Returns (profile_config_or_None, behavior_config, users). A markov spec of
    ``{"type": "random", ...}`` is realized from a (seed, tag) substream so
    the whole run stays reproducible from the single CLI seed.
    """
    if isinstance(path_or_dict, (str, Path)):
        with open(path_or_dict) as fh:
            doc = json.load(fh)
    else:
        doc = path_or_dict

    users = int(doc["users"])
    items = int(doc["items"])

    profile_cfg = None
    if "profile" in doc:
        p = doc["profile"]
        names, cards = zip(*[(str(n), int(c)) for n, c in p["features"]])
        profile_cfg = ProfileConfig(
            cardinalities=cards,
            occupied_buckets=int(p["occupied_buckets"]),
            bucket_weights=ZipfSpec(int(p["occupied_buckets"]),
                                    float(p.get("bucket_zipf_s", 1.0))),
            feature_names=names,
        )

    markov = None
    spec = doc.get("markov")
    if spec is not None:
        kind = spec.get("type", "random")
        if kind == "identity":
            markov = np.eye(items)
        elif kind == "matrix":
            markov = np.asarray(spec["rows"], dtype=np.float64)
        elif kind == "random":
            markov = random_markov(
                items,
                seed=[seed, 0x6D61726B],
                row_support=spec.get("row_support"),
                concentration=float(spec.get("concentration", 1.0)),
            )
        elif kind == "popularity":
            markov = popularity_markov(
                items,
                seed=[seed, 0x6D61726B],
                s=float(spec.get("s", 1.3)),
                self_loop=float(spec.get("self_loop", 0.3)),
                row_support=int(spec.get("row_support", 8)),
            )
        else:
            raise EmbleakError(f"unknown markov spec type {kind!r}")

    affinity = None
    if "group_affinity" in doc:
        a = doc["group_affinity"]
        affinity = GroupAffinity(
            feature=str(a["feature"]),
            zipf_s=float(a.get("s", 1.0)),
            disjointness=float(a.get("disjointness", 1.0)),
        )

    item_dist = None
    if "item_zipf_s" in doc:
        item_dist = ZipfSpec(items, float(doc["item_zipf_s"]))

    behavior = BehaviorConfig(
        users=users,
        items=items,
        events_per_user=float(doc["events_per_user"]),
        horizon=int(doc.get("horizon", 22 * 86400)),
        purchase_fraction=float(doc.get("purchase_fraction", 0.0)),
        item_dist=item_dist,
        markov=markov,
        group_affinity=affinity,
        item_column=str(doc.get("item_column", "item")),
    )
    return profile_cfg, behavior, users
