"""The hash layer between raw sparse features and embedding indices.

Two variants are implemented: modulo with an additive mask (the production
style size reducer) and a secret uniform random map. Locality-sensitive,
frequency-map, and cryptographic variants are out of scope here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmbleakError
from .trace import AccessTrace, ColumnSpec, TraceSchema

MODULO = "modulo"
PRIVATE_MAP = "map"


@dataclass(frozen=True)
class ModuloMaskHash:
    """h(x) = (x + mask) mod p, mapping [0, n) onto [0, p)."""

    n: int
    p: int
    mask: int

    def __post_init__(self):
        if not (1 <= self.p <= self.n):
            raise EmbleakError(f"need 1 <= P <= N, got P={self.p}, N={self.n}")
        if not (0 <= self.mask < self.p):
            raise EmbleakError(f"mask must be in [0, P), got {self.mask}")

    variant = MODULO

    def apply(self, values):
        return (np.asarray(values) + self.mask) % self.p

    def preimages(self, y: int) -> np.ndarray:
        return np.arange((y - self.mask) % self.p, self.n, self.p, dtype=np.int64)

    def table(self) -> np.ndarray:
        return (np.arange(self.n, dtype=np.int64) + self.mask) % self.p


@dataclass(frozen=True, eq=False)
class PrivateMapHash:
    """Arbitrary (secret) mapping from n inputs to p outputs."""

    n: int
    p: int
    map_table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.map_table, dtype=np.int64)
        object.__setattr__(self, "map_table", t)
        if len(t) != self.n:
            raise EmbleakError(f"map table length {len(t)} != N={self.n}")
        if len(t) and (t.min() < 0 or t.max() >= self.p):
            raise EmbleakError("map table entries must lie in [0, P)")

    variant = PRIVATE_MAP

    def apply(self, values):
        return self.map_table[np.asarray(values)]

    def preimages(self, y: int) -> np.ndarray:
        return np.nonzero(self.map_table == y)[0]

    def table(self) -> np.ndarray:
        return self.map_table


HashSpec = ModuloMaskHash | PrivateMapHash


def modulo_mask_hash(x: int, mask: int, p: int) -> int:
    return (x + mask) % p


def random_private_hash(n: int, p: int, seed) -> PrivateMapHash:
    """Each input mapped i.i.d. uniformly onto [0, p); deterministic per seed."""
    if not 1 <= p <= n:
        raise EmbleakError(f"need 1 <= P <= N, got P={p}, N={n}")
    table = np.random.default_rng(seed).integers(0, p, size=n)
    return PrivateMapHash(n, p, table)


def balanced_private_hash(n: int, p: int, seed) -> PrivateMapHash:
    """Random map with preimage sizes as equal as possible (differ by <= 1)."""
    if not 1 <= p <= n:
        raise EmbleakError(f"need 1 <= P <= N, got P={p}, N={n}")
    sizes = np.full(p, n // p, dtype=np.int64)
    sizes[: n % p] += 1
    table = np.random.default_rng(seed).permutation(np.repeat(np.arange(p), sizes))
    return PrivateMapHash(n, p, table)


@dataclass(eq=False)
class HashedTrace:
    """A trace with one column pushed through a hash, plus the spec digest."""

    trace: AccessTrace
    column: str
    spec_fingerprint: str


def apply_hash(trace: AccessTrace, column: str, spec: HashSpec) -> HashedTrace:
    """Replace every value of one column by its hash; everything else untouched."""
    j = trace.schema.index(column)
    card = trace.schema.columns[j].cardinality
    if card > spec.n:
        raise EmbleakError(
            f"column cardinality {card} exceeds hash input size {spec.n}"
        )
    vals = trace.values[:, j]
    if len(vals) and int(vals.max()) >= spec.n:
        raise EmbleakError(f"value {int(vals.max())} out of hash domain [0, {spec.n})")

    new_values = trace.values.copy()
    new_values[:, j] = spec.apply(vals)
    new_columns = list(trace.schema.columns)
    new_columns[j] = ColumnSpec(column, spec.p)
    dicts = None
    if trace.id_dictionaries is not None:
        dicts = dict(trace.id_dictionaries)
        dicts[column] = None  # post-hash ids are plain integers
    hashed = AccessTrace(
        schema=TraceSchema(tuple(new_columns), trace.schema.has_btag),
        timestamps=trace.timestamps,
        user_ids=trace.user_ids,
        btags=trace.btags,
        values=new_values,
        id_dictionaries=dicts,
        user_column=trace.user_column,
    )
    return HashedTrace(hashed, column, fingerprint(spec))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def spec_to_json(spec: HashSpec) -> dict:
    if spec.variant == MODULO:
        return {"variant": MODULO, "N": spec.n, "P": spec.p, "mask": spec.mask}
    return {
        "variant": PRIVATE_MAP,
        "N": spec.n,
        "P": spec.p,
        "table": [int(v) for v in spec.map_table],
    }


def spec_from_json(doc: dict) -> HashSpec:
    variant = doc.get("variant")
    if variant == MODULO:
        return ModuloMaskHash(int(doc["N"]), int(doc["P"]), int(doc["mask"]))
    if variant == PRIVATE_MAP:
        table = np.asarray(doc["table"], dtype=np.int64)
        return PrivateMapHash(int(doc.get("N", len(table))), int(doc["P"]), table)
    raise EmbleakError(f"unknown hash variant {variant!r}")


def load_spec(path) -> HashSpec:
    with open(path) as fh:
        return spec_from_json(json.load(fh))


def save_spec(spec: HashSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec_to_json(spec), fh)
        fh.write("\n")


def fingerprint(spec: HashSpec) -> str:
    payload = json.dumps(spec_to_json(spec), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()
