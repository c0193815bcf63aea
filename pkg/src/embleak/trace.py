"""Access traces, user profiles, and the empirical distributions built from them.

A trace is stored column-wise in numpy arrays (one row per interaction event)
because every analysis downstream is a whole-column computation. The
record-oriented view is available through :meth:`AccessTrace.events`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import sparse

from .errors import EmbleakError, SchemaError, TraceFormatError

BTAG_NAMES = ("browse", "cart", "favor", "buy")
BTAG_CODES = {name: code for code, name in enumerate(BTAG_NAMES)}
# aliases seen in raw interaction logs
_BTAG_ALIASES = {"pv": "browse", "brows": "browse", "fav": "favor"}
BUY = BTAG_CODES["buy"]


def _btag_code(raw: str) -> int:
    name = _BTAG_ALIASES.get(raw, raw)
    try:
        return BTAG_CODES[name]
    except KeyError:
        raise KeyError(raw) from None


# ---------------------------------------------------------------------------
# schema and event types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    cardinality: int


@dataclass(frozen=True)
class TraceSchema:
    """Feature columns of a trace; timestamp/user/btag columns are implicit."""

    columns: tuple[ColumnSpec, ...]
    has_btag: bool = False

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names: {names}")
        for c in self.columns:
            if c.cardinality < 1:
                raise SchemaError(f"column {c.name!r} has cardinality {c.cardinality}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"unknown column {name!r}; trace has {list(self.names)}")

    def cardinality(self, name: str) -> int:
        return self.columns[self.index(name)].cardinality


def make_schema(columns, has_btag=False) -> TraceSchema:
    """Build a schema from (name, cardinality) pairs."""
    return TraceSchema(tuple(ColumnSpec(n, int(c)) for n, c in columns), has_btag)


@dataclass(frozen=True)
class AccessEvent:
    timestamp: int
    user_id: int
    btag: int | None
    values: tuple[int, ...]


@dataclass(eq=False)
class AccessTrace:
    """Time-ordered interaction events plus the dictionaries that dense-coded them.

    ``id_dictionaries`` maps a column name (the user column included) to its
    raw-string -> dense-id dictionary, or to None for columns whose file values
    are already dense integers. It is None altogether for synthetic traces.
    """

    schema: TraceSchema
    timestamps: np.ndarray
    user_ids: np.ndarray
    btags: np.ndarray | None
    values: np.ndarray  # (n_events, n_feature_columns)
    id_dictionaries: dict[str, dict[str, int] | None] | None = None
    user_column: str = "user_id"

    @property
    def n_events(self) -> int:
        return len(self.timestamps)

    @property
    def n_users(self) -> int:
        return len(np.unique(self.user_ids)) if self.n_events else 0

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def events(self) -> Iterator[AccessEvent]:
        has_btag = self.btags is not None
        for i in range(self.n_events):
            yield AccessEvent(
                int(self.timestamps[i]),
                int(self.user_ids[i]),
                int(self.btags[i]) if has_btag else None,
                tuple(int(v) for v in self.values[i]),
            )

    def raw_user_ids(self) -> np.ndarray:
        """Per-event user ids in the input file's coding (for profile joins)."""
        if self.id_dictionaries is None:
            return self.user_ids
        mapping = self.id_dictionaries.get(self.user_column)
        if mapping is None:
            return self.user_ids
        inverse = np.empty(len(mapping), dtype=np.int64)
        try:
            for raw, dense in mapping.items():
                inverse[dense] = int(raw)
        except ValueError:
            raise EmbleakError(
                "raw user ids are not integers; cannot join against a profile table"
            ) from None
        return inverse[self.user_ids]

    def validate(self):
        if np.any(np.diff(self.timestamps) < 0):
            raise EmbleakError("events not sorted by timestamp")
        for j, col in enumerate(self.schema.columns):
            if self.n_events and int(self.values[:, j].max()) >= col.cardinality:
                raise EmbleakError(
                    f"column {col.name!r} has value >= cardinality {col.cardinality}"
                )
        if self.schema.has_btag != (self.btags is not None):
            raise EmbleakError("btag column does not match schema.has_btag")


def subset_trace(trace: AccessTrace, mask: np.ndarray) -> AccessTrace:
    """Event subset preserving order, schema, and dictionaries."""
    return AccessTrace(
        schema=trace.schema,
        timestamps=trace.timestamps[mask],
        user_ids=trace.user_ids[mask],
        btags=None if trace.btags is None else trace.btags[mask],
        values=trace.values[mask],
        id_dictionaries=trace.id_dictionaries,
        user_column=trace.user_column,
    )


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CategoricalDistribution:
    """Empirical (or analytic) distribution over a dense categorical domain."""

    n: int
    probs: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_counts(cls, counts) -> "CategoricalDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total <= 0:
            raise EmbleakError("cannot normalize an all-zero count vector")
        return cls(len(counts), counts / total, counts)

    @classmethod
    def from_probs(cls, probs) -> "CategoricalDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-9:
            raise EmbleakError("probabilities must be nonnegative and sum to 1")
        return cls(len(probs), probs, np.zeros(len(probs), dtype=np.int64))

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    def validate(self):
        if self.total_count > 0:
            expected = self.counts / self.total_count
            if not np.allclose(self.probs, expected, atol=1e-12):
                raise EmbleakError("probs inconsistent with counts")
        if abs(float(self.probs.sum()) - 1.0) > 1e-12:
            raise EmbleakError("probs do not sum to 1")


@dataclass(eq=False)
class PairDistribution:
    """Sparse joint distribution of ordered (earlier, later) value pairs."""

    n: int
    matrix: sparse.csr_matrix  # probabilities, sums to 1
    total_count: int

    @classmethod
    def from_pairs(cls, first, second, n: int) -> "PairDistribution":
        first = np.asarray(first, dtype=np.int64)
        second = np.asarray(second, dtype=np.int64)
        if first.size == 0:
            raise EmbleakError("no pairs to build a distribution from")
        m = sparse.coo_matrix(
            (np.ones(first.size), (first, second)), shape=(n, n)
        ).tocsr()
        m.sum_duplicates()
        return cls(n, m.multiply(1.0 / first.size).tocsr(), int(first.size))

    @classmethod
    def from_matrix(cls, matrix, total_count: int = 0) -> "PairDistribution":
        m = sparse.csr_matrix(matrix, dtype=np.float64)
        if m.shape[0] != m.shape[1]:
            raise EmbleakError("pair matrix must be square")
        return cls(m.shape[0], m, total_count)

    def entries(self) -> dict[tuple[int, int], float]:
        coo = self.matrix.tocoo()
        return {
            (int(i), int(j)): float(v)
            for i, j, v in zip(coo.row, coo.col, coo.data)
            if v != 0.0
        }

    def validate(self):
        if abs(float(self.matrix.sum()) - 1.0) > 1e-12:
            raise EmbleakError("pair probabilities do not sum to 1")


# ---------------------------------------------------------------------------
# ingestion / emission
# ---------------------------------------------------------------------------


def dictionary_sidecar_path(path) -> Path:
    return Path(str(path) + ".dicts.json")


def load_dictionaries(path) -> dict[str, dict[str, int] | None]:
    with open(path) as fh:
        raw = json.load(fh)
    return {
        col: (None if mapping is None else {k: int(v) for k, v in mapping.items()})
        for col, mapping in raw.items()
    }


def write_dictionaries(trace: AccessTrace, path) -> None:
    dicts = trace.id_dictionaries or {}
    out = {trace.user_column: dicts.get(trace.user_column)}
    for name in trace.schema.names:
        out[name] = dicts.get(name)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=0, sort_keys=True)
        fh.write("\n")


class _Coder:
    """Per-column raw -> dense id coder (first-appearance or frozen sidecar)."""

    def __init__(self, name, mapping, frozen):
        self.name = name
        self.mapping = mapping  # None means pass-through integers
        self.frozen = frozen

    def code(self, raw: str, line: int) -> int:
        if self.mapping is None:
            try:
                v = int(raw)
            except ValueError:
                raise TraceFormatError(
                    f"column {self.name!r}: non-integer value {raw!r}", line
                ) from None
            if v < 0:
                raise TraceFormatError(f"column {self.name!r}: negative id {v}", line)
            return v
        if self.frozen:
            try:
                return self.mapping[raw]
            except KeyError:
                raise TraceFormatError(
                    f"column {self.name!r}: value {raw!r} missing from dictionary", line
                ) from None
        return self.mapping.setdefault(raw, len(self.mapping))


def ingest_events(path, schema: TraceSchema | None = None, dictionaries=None) -> AccessTrace:
    """Load an event CSV into a time-sorted trace.

    Expected header: ``timestamp,<user>[,btag],<feature columns...>``. Feature
    column names must match the schema when one is given; with ``schema=None``
    the schema is inferred (cardinality = number of distinct values seen).
    Raw ids are replaced by dense ids assigned in first-appearance order unless
    ``dictionaries`` (e.g. from a sidecar file) pins the coding.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError("missing header row", line=1)
        header = [h.strip() for h in header]
        if len(header) < 3:
            raise TraceFormatError(f"header too short: {header}", line=1)

        if schema is not None:
            has_btag = schema.has_btag
        else:
            has_btag = len(header) > 2 and header[2] == "btag"
        first_feature = 3 if has_btag else 2
        user_column = header[1]
        feature_names = header[first_feature:]
        if not feature_names:
            raise TraceFormatError("no feature columns in header", line=1)
        if schema is not None and tuple(feature_names) != schema.names:
            raise SchemaError(
                f"header columns {feature_names} do not match schema {list(schema.names)}"
            )

        def coder_for(name):
            if dictionaries is not None and name in dictionaries:
                return _Coder(name, dictionaries[name], frozen=True)
            return _Coder(name, {}, frozen=False)

        user_coder = coder_for(user_column)
        coders = [coder_for(name) for name in feature_names]
        n_fields = len(header)

        timestamps, users, btags = [], [], []
        value_rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != n_fields:
                raise TraceFormatError(
                    f"expected {n_fields} fields, got {len(row)}", line
                )
            try:
                ts = int(row[0])
            except ValueError:
                raise TraceFormatError(f"bad timestamp {row[0]!r}", line) from None
            timestamps.append(ts)
            users.append(user_coder.code(row[1], line))
            if has_btag:
                try:
                    btags.append(_btag_code(row[2]))
                except KeyError:
                    raise TraceFormatError(f"unknown btag {row[2]!r}", line) from None
            value_rows.append(
                [c.code(raw, line) for c, raw in zip(coders, row[first_feature:])]
            )

    n = len(timestamps)
    ts_arr = np.asarray(timestamps, dtype=np.int64)
    user_arr = np.asarray(users, dtype=np.int64)
    btag_arr = np.asarray(btags, dtype=np.int64) if has_btag else None
    values = (
        np.asarray(value_rows, dtype=np.int64)
        if n
        else np.empty((0, len(feature_names)), dtype=np.int64)
    )

    order = np.argsort(ts_arr, kind="stable")
    ts_arr, user_arr, values = ts_arr[order], user_arr[order], values[order]
    if btag_arr is not None:
        btag_arr = btag_arr[order]

    def observed_card(coder, column_values):
        if coder.mapping is not None:
            return max(len(coder.mapping), 1)
        return int(column_values.max()) + 1 if len(column_values) else 1

    if schema is None:
        schema = make_schema(
            [(c.name, observed_card(c, values[:, j])) for j, c in enumerate(coders)],
            has_btag=has_btag,
        )
    else:
        for j, (c, col) in enumerate(zip(coders, schema.columns)):
            seen = observed_card(c, values[:, j]) if n else 0
            if seen > col.cardinality:
                raise SchemaError(
                    f"column {col.name!r}: {seen} distinct values exceed "
                    f"declared cardinality {col.cardinality}"
                )

    id_dicts = {user_column: user_coder.mapping}
    for c in coders:
        id_dicts[c.name] = c.mapping
    return AccessTrace(
        schema=schema,
        timestamps=ts_arr,
        user_ids=user_arr,
        btags=btag_arr,
        values=values,
        id_dictionaries=id_dicts,
        user_column=user_column,
    )


def write_events(trace: AccessTrace, path, sidecar: bool = True) -> None:
    """Emit a trace as CSV (raw ids restored) plus the dictionary sidecar."""
    path = Path(path)
    dicts = trace.id_dictionaries or {}

    def inverse_for(name):
        mapping = dicts.get(name)
        if mapping is None:
            return None
        inv = [None] * len(mapping)
        for raw, dense in mapping.items():
            inv[dense] = raw
        return inv

    user_inv = inverse_for(trace.user_column)
    feature_inv = [inverse_for(name) for name in trace.schema.names]

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["timestamp", trace.user_column]
        if trace.btags is not None:
            header.append("btag")
        header.extend(trace.schema.names)
        writer.writerow(header)
        for i in range(trace.n_events):
            row = [
                int(trace.timestamps[i]),
                user_inv[trace.user_ids[i]] if user_inv else int(trace.user_ids[i]),
            ]
            if trace.btags is not None:
                row.append(BTAG_NAMES[trace.btags[i]])
            for j, inv in enumerate(feature_inv):
                v = trace.values[i, j]
                row.append(inv[v] if inv else int(v))
            writer.writerow(row)
    if sidecar:
        write_dictionaries(trace, dictionary_sidecar_path(path))


def load_trace(path, schema: TraceSchema | None = None) -> AccessTrace:
    """Ingest, automatically picking up a dictionary sidecar when present."""
    sidecar = dictionary_sidecar_path(path)
    dicts = load_dictionaries(sidecar) if sidecar.exists() else None
    return ingest_events(path, schema=schema, dictionaries=dicts)


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ProfileTable:
    """Static per-user features, one row per user id."""

    feature_names: tuple[str, ...]
    cardinalities: tuple[int, ...]
    user_ids: np.ndarray
    features: np.ndarray  # (n_users, n_features)
    duplicate_warnings: int = 0
    _index: dict = field(default=None, repr=False)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    def user_index(self) -> dict[int, int]:
        if self._index is None:
            self._index = {int(u): i for i, u in enumerate(self.user_ids)}
        return self._index

    def row(self, user_id: int) -> np.ndarray:
        return self.features[self.user_index()[int(user_id)]]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.feature_names.index(name)
        except ValueError:
            raise SchemaError(
                f"unknown profile feature {name!r}; have {list(self.feature_names)}"
            ) from None
        return self.features[:, j]


def ingest_profiles(path) -> ProfileTable:
    """Load a profile CSV (``user_id,<static features...>``, integer-coded).

    Duplicate user ids keep the last row and bump ``duplicate_warnings``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise TraceFormatError("profile file needs a user id and >= 1 feature", line=1)
        feature_names = tuple(h.strip() for h in header[1:])
        rows: dict[int, list[int]] = {}
        warnings = 0
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise TraceFormatError(
                    f"expected {len(header)} fields, got {len(row)}", line
                )
            try:
                parsed = [int(v) for v in row]
            except ValueError:
                raise TraceFormatError(f"non-integer field in {row}", line) from None
            uid = parsed[0]
            if uid in rows:
                warnings += 1
            rows[uid] = parsed[1:]

    user_ids = np.fromiter(rows.keys(), dtype=np.int64, count=len(rows))
    features = (
        np.asarray(list(rows.values()), dtype=np.int64)
        if rows
        else np.empty((0, len(feature_names)), dtype=np.int64)
    )
    cards = tuple(
        int(features[:, j].max()) + 1 if len(features) else 1
        for j in range(len(feature_names))
    )
    return ProfileTable(feature_names, cards, user_ids, features, warnings)


def write_profiles(table: ProfileTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", *table.feature_names])
        for uid, row in zip(table.user_ids, table.features):
            writer.writerow([int(uid), *(int(v) for v in row)])


# ---------------------------------------------------------------------------
# distribution extraction and splitting
# ---------------------------------------------------------------------------


def empirical_distribution(trace: AccessTrace, column: str) -> CategoricalDistribution:
    """Occurrence counts of one column over all events, normalized."""
    if trace.n_events == 0:
        raise EmbleakError("empty trace")
    j = trace.schema.index(column)
    card = trace.schema.columns[j].cardinality
    counts = np.bincount(trace.values[:, j], minlength=card)
    return CategoricalDistribution.from_counts(counts)


def pair_distribution(trace: AccessTrace, column: str, btag=None,
                      n: int | None = None) -> PairDistribution:
    """Joint distribution of consecutive per-user (earlier, later) value pairs.

    Pairs never span users. ``btag`` (e.g. ``"buy"``) restricts the event
    stream before pairing, so pairs are consecutive within the filtered
    subsequence. ``n`` overrides the domain size (default: the column's
    cardinality).
    """
    j = trace.schema.index(column)
    vals = trace.values[:, j]
    users = trace.user_ids
    if btag is not None:
        if trace.btags is None:
            raise EmbleakError("trace has no btag column to filter on")
        code = btag if isinstance(btag, (int, np.integer)) else _btag_code(btag)
        keep = trace.btags == code
        vals, users = vals[keep], users[keep]
    order = np.argsort(users, kind="stable")  # time order preserved within user
    u, v = users[order], vals[order]
    same_user = u[1:] == u[:-1]
    first, second = v[:-1][same_user], v[1:][same_user]
    if first.size == 0:
        raise EmbleakError("no user contributes two or more events")
    if n is None:
        n = trace.schema.columns[j].cardinality
    return PairDistribution.from_pairs(first, second, n)


_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + _GOLDEN).astype(np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def split_trace(trace: AccessTrace, ratio: float, seed: int):
    """User-disjoint split: (train, eval) with P(user in train) = ratio.

    Membership comes from a seeded integer hash of the user id, so the split
    is stable regardless of event order or worker count.
    """
    if not 0.0 < ratio < 1.0:
        raise EmbleakError(f"ratio must be in (0,1), got {ratio}")
    with np.errstate(over="ignore"):
        salt = _splitmix64(np.array([seed], dtype=np.uint64))[0]
        h = _splitmix64(trace.user_ids.astype(np.uint64) ^ salt)
    u01 = (h >> np.uint64(11)).astype(np.float64) * 2.0**-53
    train_mask = u01 < ratio
    return subset_trace(trace, train_mask), subset_trace(trace, ~train_mask)
