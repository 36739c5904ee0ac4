"""Data types for egocentric network trials, structural validation and CSV I/O.

CSV layout, one row per participant::

    network_id,role,subgroup,treated,outcome
    n1,index,2,1,
    n1,member,,,3.4

``role`` is ``index`` or ``member``. Member rows may leave ``subgroup`` blank
(it is taken from their index) and must leave ``treated`` blank or 0. Index
outcomes are not modelled and may be blank. Lines starting with ``#`` are
skipped.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataValidationError

MAXIMIZE = "maximize"
MINIMIZE = "minimize"
DIRECTIONS = (MAXIMIZE, MINIMIZE)
CSV_COLUMNS = ("network_id", "role", "subgroup", "treated", "outcome")


def check_direction(direction):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return direction


@dataclass(frozen=True)
class EgoNetwork:
    network_id: str
    index_subgroup: int
    index_treated: bool
    member_outcomes: tuple

    def __post_init__(self):
        object.__setattr__(self, "member_outcomes", tuple(float(y) for y in self.member_outcomes))
        if not self.member_outcomes:
            raise DataValidationError(f"network {self.network_id!r} has no members")
        if not all(math.isfinite(y) for y in self.member_outcomes):
            raise DataValidationError(f"network {self.network_id!r} has a non-finite outcome")

    @property
    def member_count(self):
        return len(self.member_outcomes)


@dataclass(frozen=True)
class NetworkArrays:
    """Network-level arrays in canonical (sorted network_id) order."""

    subgroup: np.ndarray  # 0-based
    treated: np.ndarray
    sizes: np.ndarray
    outcomes: np.ndarray  # all member outcomes, grouped by network
    owner: np.ndarray  # network position of each entry of ``outcomes``

    @property
    def n_networks(self):
        return self.sizes.size


class EgoDataset:
    """Validated trial data.

    Stored as network-level arrays in canonical ``network_id`` order, so the
    order in which networks are supplied never affects downstream results.
    """

    def __init__(self, networks, n_subgroups, direction=MAXIMIZE):
        networks = tuple(networks)
        seen = set()
        for net in networks:
            if net.network_id in seen:
                raise DataValidationError(f"duplicate network_id {net.network_id!r}")
            seen.add(net.network_id)
        nets = sorted(networks, key=lambda net: net.network_id)
        sizes = np.array([net.member_count for net in nets], dtype=np.int64)
        self._init(
            ids=tuple(net.network_id for net in nets),
            subgroup=np.array([net.index_subgroup - 1 for net in nets], dtype=np.int64),
            treated=np.array([net.index_treated for net in nets], dtype=bool),
            sizes=sizes,
            outcomes=np.fromiter((y for net in nets for y in net.member_outcomes), dtype=float, count=int(sizes.sum())),
            n_subgroups=n_subgroups,
            direction=direction,
        )
        self._networks = networks

    @classmethod
    def from_arrays(cls, subgroup, treated, sizes, outcomes, n_subgroups, direction=MAXIMIZE, ids=None):
        """Build from network-level arrays; ``subgroup`` is 1-based.

        ``outcomes`` lists member outcomes network by network. Default ids are
        zero-padded positions, so canonical order equals the given order.
        """
        sizes = np.asarray(sizes, dtype=np.int64)
        K = sizes.size
        if ids is None:
            width = max(6, len(str(K)))
            ids = tuple(f"k{i:0{width}d}" for i in range(1, K + 1))
        ids = tuple(str(i) for i in ids)
        if len(set(ids)) != K:
            raise DataValidationError("duplicate network_id")
        order = sorted(range(K), key=ids.__getitem__)
        outcomes = np.asarray(outcomes, dtype=float)
        if np.any(sizes < 1):
            raise DataValidationError("every network needs at least one member")
        if outcomes.size != sizes.sum() or not np.all(np.isfinite(outcomes)):
            raise DataValidationError("outcomes must be finite and match the network sizes")
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        if order != list(range(K)):
            outcomes = np.concatenate([outcomes[starts[k]:starts[k] + sizes[k]] for k in order])
        obj = cls.__new__(cls)
        obj._init(
            ids=tuple(ids[k] for k in order),
            subgroup=np.asarray(subgroup, dtype=np.int64)[order] - 1,
            treated=np.asarray(treated, dtype=bool)[order],
            sizes=sizes[order],
            outcomes=outcomes,
            n_subgroups=n_subgroups,
            direction=direction,
        )
        obj._networks = None
        return obj

    def _init(self, ids, subgroup, treated, sizes, outcomes, n_subgroups, direction):
        check_direction(direction)
        if n_subgroups < 1:
            raise DataValidationError("need at least one subgroup")
        bad = np.flatnonzero((subgroup < 0) | (subgroup >= n_subgroups))
        if bad.size:
            k = bad[0]
            raise DataValidationError(f"network {ids[k]!r}: subgroup {subgroup[k] + 1} outside 1..{n_subgroups}")
        for arr in (subgroup, treated, sizes, outcomes):
            arr.setflags(write=False)
        owner = np.repeat(np.arange(sizes.size), sizes)
        owner.setflags(write=False)
        self.ids = ids
        self.n_subgroups = int(n_subgroups)
        self.direction = direction
        self.arrays = NetworkArrays(subgroup=subgroup, treated=treated, sizes=sizes, outcomes=outcomes, owner=owner)

    @property
    def networks(self):
        if self._networks is None:
            a = self.arrays
            ends = np.cumsum(a.sizes)
            self._networks = tuple(
                EgoNetwork(nid, int(h) + 1, bool(t), tuple(a.outcomes[e - n:e]))
                for nid, h, t, n, e in zip(self.ids, a.subgroup, a.treated, a.sizes, ends)
            )
        return self._networks

    @property
    def n_networks(self):
        return len(self.ids)

    @property
    def n_members(self):
        return int(self.arrays.sizes.sum())

    def cell_counts(self):
        """Networks per (subgroup, arm) as an ``H x 2`` array, columns control/treated."""
        a = self.arrays
        counts = np.zeros((self.n_subgroups, 2), dtype=np.int64)
        np.add.at(counts, (a.subgroup, a.treated.astype(int)), 1)
        return counts

    def with_direction(self, direction):
        out = EgoDataset.__new__(EgoDataset)
        out.__dict__.update(self.__dict__)
        check_direction(direction)
        out.direction = direction
        return out

    def __eq__(self, other):
        if not isinstance(other, EgoDataset):
            return NotImplemented
        a, b = self.arrays, other.arrays
        return (
            self.ids == other.ids
            and self.n_subgroups == other.n_subgroups
            and self.direction == other.direction
            and all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("subgroup", "treated", "sizes", "outcomes"))
        )

    __hash__ = None

    def __repr__(self):
        return f"EgoDataset(K={self.n_networks}, members={self.n_members}, H={self.n_subgroups}, direction={self.direction!r})"


@dataclass(frozen=True)
class DesignSpec:
    """Inputs for design-time power and sample-size calculations."""

    H: int
    n: int
    p: float
    g: tuple
    sigma2: float
    rho_y: float
    delta: tuple
    alpha: float = 0.05
    beta: float = 0.1
    direction: str = MAXIMIZE

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(x) for x in self.g))
        object.__setattr__(self, "delta", tuple(float(x) for x in self.delta))
        check_direction(self.direction)
        if self.H < 2:
            raise ValueError("a design needs H >= 2 subgroups")
        if self.n < 1 or int(self.n) != self.n:
            raise ValueError("n must be a positive integer")
        if len(self.g) != self.H or len(self.delta) != self.H:
            raise ValueError("g and delta must both have length H")
        if not all(0 < x < 1 for x in self.g) or abs(sum(self.g) - 1.0) > 1e-9:
            raise ValueError("g must be proportions in (0, 1) summing to 1")
        if not all(math.isfinite(d) for d in self.delta):
            raise ValueError("delta must be finite")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not 0 <= self.rho_y < 1:
            raise ValueError("rho_y must lie in [0, 1)")
        if not 0 < self.alpha < 1 or not 0 < self.beta < 1:
            raise ValueError("alpha and beta must lie in (0, 1)")

    @classmethod
    def balanced(cls, delta, n, rho_y, sigma2=1.0, p=0.5, **kw):
        H = len(delta)
        return cls(H=H, n=n, p=p, g=(1.0 / H,) * H, sigma2=sigma2, rho_y=rho_y, delta=tuple(delta), **kw)


@dataclass(frozen=True)
class BestStructure:
    b0: tuple  # 0-based indices of the best subgroups
    b1: tuple
    delta_diff: tuple = field(default=())


def best_structure(delta: Sequence[float], direction=MAXIMIZE) -> BestStructure:
    """Split subgroups into the best set and the rest.

    ``delta_diff[h]`` is delta_h minus the best of the others: the max of the
    others when maximizing, the min when minimizing.
    """
    check_direction(direction)
    d = np.asarray(delta, dtype=float)
    if d.ndim != 1 or d.size < 2:
        raise ValueError("need at least two subgroups")
    diff = np.empty_like(d)
    for h in range(d.size):
        others = np.delete(d, h)
        diff[h] = d[h] - (others.max() if direction == MAXIMIZE else others.min())
    best = d == (d.max() if direction == MAXIMIZE else d.min())
    return BestStructure(
        b0=tuple(int(i) for i in np.flatnonzero(best)),
        b1=tuple(int(i) for i in np.flatnonzero(~best)),
        delta_diff=tuple(float(x) for x in diff),
    )


def _parse_int(text, what, row):
    try:
        return int(text)
    except ValueError:
        raise DataValidationError(f"{what} {text!r} is not an integer", row) from None


def load_csv(path, n_subgroups=None, direction=MAXIMIZE) -> EgoDataset:
    """Read a participant-level CSV into a validated :class:`EgoDataset`.

    When ``n_subgroups`` is omitted it is the largest subgroup label present.
    Every error message names the offending file row.
    """
    check_direction(direction)
    index_rows = {}
    members = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = ((i, line) for i, line in enumerate(fh, start=1) if line.strip() and not line.lstrip().startswith("#"))
        numbered = list(lines)
    if not numbered:
        raise DataValidationError("file is empty")
    reader = csv.reader(line for _, line in numbered)
    header = [h.strip().lower() for h in next(reader)]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise DataValidationError(f"missing column(s): {', '.join(missing)}", numbered[0][0])
    col = {c: header.index(c) for c in CSV_COLUMNS}

    for (row, _), rec in zip(numbered[1:], reader):
        if len(rec) < len(header):
            raise DataValidationError(f"expected {len(header)} fields, found {len(rec)}", row)
        get = lambda c: rec[col[c]].strip()  # noqa: E731
        net_id = get("network_id")
        if not net_id:
            raise DataValidationError("blank network_id", row)
        role = get("role").lower()
        treated = get("treated")
        subgroup = get("subgroup")
        if role == "index":
            if net_id in index_rows:
                raise DataValidationError(
                    f"multiple index rows for network {net_id!r} (first at row {index_rows[net_id][0]})", row
                )
            if treated not in ("0", "1"):
                raise DataValidationError(f"index treated flag must be 0 or 1, got {treated!r}", row)
            if not subgroup:
                raise DataValidationError("index row has no subgroup", row)
            label = _parse_int(subgroup, "subgroup", row)
            if label < 1 or (n_subgroups is not None and label > n_subgroups):
                raise DataValidationError(f"unknown subgroup label {label}", row)
            index_rows[net_id] = (row, label, treated == "1")
        elif role == "member":
            if treated not in ("", "0"):
                raise DataValidationError(f"member row with treatment flag set ({treated!r})", row)
            text = get("outcome")
            try:
                y = float(text)
            except ValueError:
                raise DataValidationError(f"non-numeric outcome {text!r}", row) from None
            if not math.isfinite(y):
                raise DataValidationError(f"non-finite outcome {text!r}", row)
            label = _parse_int(subgroup, "subgroup", row) if subgroup else None
            members.setdefault(net_id, []).append((row, label, y))
        else:
            raise DataValidationError(f"role must be 'index' or 'member', got {role!r}", row)

    for net_id, rows in members.items():
        if net_id not in index_rows:
            raise DataValidationError(f"network {net_id!r} has members but no index row", rows[0][0])
    networks = []
    for net_id, (row, label, treated) in index_rows.items():
        rows = members.get(net_id)
        if not rows:
            raise DataValidationError(f"network {net_id!r} has no member rows", row)
        for mrow, mlabel, _ in rows:
            if mlabel is not None and mlabel != label:
                raise DataValidationError(
                    f"member subgroup {mlabel} disagrees with index subgroup {label} for network {net_id!r}", mrow
                )
        networks.append(EgoNetwork(net_id, label, treated, tuple(y for _, _, y in rows)))
    H = n_subgroups if n_subgroups is not None else max(label for _, label, _ in index_rows.values())
    return EgoDataset(tuple(networks), H, direction)


def write_csv(data: EgoDataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for net in data.networks:
            w.writerow([net.network_id, "index", net.index_subgroup, int(net.index_treated), ""])
            for y in net.member_outcomes:
                w.writerow([net.network_id, "member", "", "", repr(y)])
