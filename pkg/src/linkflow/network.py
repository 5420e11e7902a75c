"""Road networks, trajectories, detector volumes and OD demand.

All file formats are plain delimited text. Loaders validate strictly and
abort on the first problem with row context; savers write a canonical form
so that ``save(load(f))`` is byte-stable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

ROAD_TYPES = ("freeway", "arterial road", "collector", "local road")

NETWORK_COLUMNS = (
    "link_id",
    "from_node",
    "to_node",
    "capacity",
    "free_flow_time",
    "bpr_alpha",
    "bpr_beta",
    "length_m",
    "road_type",
    "max_speed_kmh",
)

DEFAULT_BPR_ALPHA = 0.15
DEFAULT_BPR_BETA = 4.0


class NetworkFormatError(ValueError):
    """A data file could not be parsed or failed validation."""


def format_number(x: float) -> str:
    """Canonical text form of a number: integers without a trailing ``.0``."""
    x = float(x)
    if math.isfinite(x) and x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass(frozen=True)
class Link:
    id: str
    tail: str
    head: str
    capacity: float
    free_flow_time: float
    bpr_alpha: float = DEFAULT_BPR_ALPHA
    bpr_beta: float = DEFAULT_BPR_BETA
    length_m: float = 100.0
    road_type: str = "local road"
    max_speed_kmh: float = 50.0

    def cost(self, flow: float) -> float:
        """BPR travel time at ``flow``."""
        return self.free_flow_time * (1.0 + self.bpr_alpha * (flow / self.capacity) ** self.bpr_beta)


@dataclass
class RoadNetwork:
    """Directed graph whose edges are road links.

    Link ids are arbitrary strings; ``index`` maps them to dense indices in
    file order. ``adjacency`` lists downstream link ids: ``l2`` is downstream
    of ``l1`` iff ``l1.head == l2.tail``.
    """

    links: list[Link]
    nodes: set[str] = field(default_factory=set)
    adjacency: dict[str, list[str]] = field(default_factory=dict)
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.nodes:
            self.nodes = {n for l in self.links for n in (l.tail, l.head)}
        self.validate()
        self.index = {l.id: i for i, l in enumerate(self.links)}
        self.adjacency = self.compute_adjacency()

    def validate(self) -> None:
        seen = set()
        for row, l in enumerate(self.links, start=1):
            if l.id in seen:
                raise NetworkFormatError(f"link row {row}: duplicate link id {l.id!r}")
            seen.add(l.id)
            if l.tail not in self.nodes or l.head not in self.nodes:
                raise NetworkFormatError(f"link row {row}: link {l.id!r} references an unknown node")
            if l.tail == l.head:
                raise NetworkFormatError(f"link row {row}: link {l.id!r} is a self-loop")
            for name in ("capacity", "free_flow_time", "length_m", "max_speed_kmh"):
                value = getattr(l, name)
                if not (math.isfinite(value) and value > 0):
                    raise NetworkFormatError(f"link row {row}: {name} must be positive, got {value}")
            for name in ("bpr_alpha", "bpr_beta"):
                value = getattr(l, name)
                if not (math.isfinite(value) and value >= 0):
                    raise NetworkFormatError(f"link row {row}: {name} must be non-negative, got {value}")
            if l.road_type not in ROAD_TYPES:
                raise NetworkFormatError(f"link row {row}: unknown road_type {l.road_type!r}")

    def compute_adjacency(self) -> dict[str, list[str]]:
        by_tail: dict[str, list[str]] = {}
        for l in self.links:
            by_tail.setdefault(l.tail, []).append(l.id)
        return {l.id: list(by_tail.get(l.head, [])) for l in self.links}

    def link(self, link_id: str) -> Link:
        return self.links[self.index[link_id]]

    @property
    def link_ids(self) -> list[str]:
        return [l.id for l in self.links]

    def __len__(self) -> int:
        return len(self.links)


@dataclass(frozen=True)
class Trajectory:
    id: str
    links: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.links)


@dataclass
class VolumeObservations:
    """Exact detector counts; key order is the detector column order."""

    entries: dict[str, float]

    @property
    def detector_links(self) -> list[str]:
        return list(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class OdDemand:
    entries: list[tuple[str, str, float]]

    def __post_init__(self):
        seen = set()
        for row, (o, d, q) in enumerate(self.entries, start=1):
            if o == d:
                raise NetworkFormatError(f"od row {row}: origin equals destination ({o!r})")
            if (o, d) in seen:
                raise NetworkFormatError(f"od row {row}: duplicate OD pair ({o!r}, {d!r})")
            if not (math.isfinite(q) and q >= 0):
                raise NetworkFormatError(f"od row {row}: demand must be non-negative, got {q}")
            seen.add((o, d))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def _float(value: str, what: str, row: int) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise NetworkFormatError(f"row {row}: cannot parse {what} {value!r}") from None


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise NetworkFormatError(f"{path}: {exc.strerror or exc}") from None


def load_network(path) -> RoadNetwork:
    """Read a network CSV (header required).

    ``bpr_alpha`` and ``bpr_beta`` may be empty or absent, in which case the
    usual 0.15 / 4 defaults apply.
    """
    reader = csv.DictReader(io.StringIO(_read_text(path)))
    required = set(NETWORK_COLUMNS) - {"bpr_alpha", "bpr_beta"}
    missing = required - set(reader.fieldnames or ())
    if missing:
        raise NetworkFormatError(f"{path}: missing columns {sorted(missing)}")
    links = []
    nodes = set()
    for row, rec in enumerate(reader, start=1):
        if None in rec or any(v is None for v in rec.values()):
            raise NetworkFormatError(f"{path}: row {row}: wrong number of fields")
        alpha = rec.get("bpr_alpha") or ""
        beta = rec.get("bpr_beta") or ""
        link = Link(
            id=rec["link_id"].strip(),
            tail=rec["from_node"].strip(),
            head=rec["to_node"].strip(),
            capacity=_float(rec["capacity"], "capacity", row),
            free_flow_time=_float(rec["free_flow_time"], "free_flow_time", row),
            bpr_alpha=_float(alpha, "bpr_alpha", row) if alpha.strip() else DEFAULT_BPR_ALPHA,
            bpr_beta=_float(beta, "bpr_beta", row) if beta.strip() else DEFAULT_BPR_BETA,
            length_m=_float(rec["length_m"], "length_m", row),
            road_type=rec["road_type"].strip(),
            max_speed_kmh=_float(rec["max_speed_kmh"], "max_speed_kmh", row),
        )
        links.append(link)
        nodes.update((link.tail, link.head))
    try:
        return RoadNetwork(links, nodes=nodes)
    except NetworkFormatError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from None


def save_network(net: RoadNetwork, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(NETWORK_COLUMNS)
    for l in net.links:
        w.writerow([
            l.id, l.tail, l.head, format_number(l.capacity), format_number(l.free_flow_time),
            format_number(l.bpr_alpha), format_number(l.bpr_beta), format_number(l.length_m),
            l.road_type, format_number(l.max_speed_kmh),
        ])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def check_trajectory(traj: Trajectory, net: RoadNetwork) -> None:
    if not traj.links:
        raise NetworkFormatError(f"trajectory {traj.id!r} is empty")
    for l in traj.links:
        if l not in net.index:
            raise NetworkFormatError(f"trajectory {traj.id!r}: unknown link {l!r}")
    for a, b in zip(traj.links, traj.links[1:]):
        if b not in net.adjacency[a]:
            raise NetworkFormatError(f"trajectory {traj.id!r}: link {b!r} is not downstream of {a!r}")


def load_trajectories(path, net: RoadNetwork) -> list[Trajectory]:
    """Read ``traj_id;link,link,...`` rows; blank lines are skipped."""
    out = []
    seen = set()
    for row, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        if line.count(";") != 1:
            raise NetworkFormatError(f"{path}: row {row}: expected 'traj_id;link,link,...'")
        tid, rest = line.split(";")
        tid = tid.strip()
        if not tid:
            raise NetworkFormatError(f"{path}: row {row}: empty trajectory id")
        if tid in seen:
            raise NetworkFormatError(f"{path}: row {row}: duplicate trajectory id {tid!r}")
        seen.add(tid)
        traj = Trajectory(tid, tuple(x.strip() for x in rest.split(",") if x.strip()))
        try:
            check_trajectory(traj, net)
        except NetworkFormatError as exc:
            raise NetworkFormatError(f"{path}: row {row}: {exc}") from None
        out.append(traj)
    return out


def save_trajectories(trajectories, path) -> None:
    text = "".join(f"{t.id};{','.join(t.links)}\n" for t in trajectories)
    Path(path).write_text(text, encoding="utf-8")


def _csv_rows(path, header: tuple[str, ...]):
    rows = list(csv.reader(io.StringIO(_read_text(path))))
    rows = [(i, r) for i, r in enumerate(rows, start=1) if any(c.strip() for c in r)]
    if rows and tuple(c.strip() for c in rows[0][1]) == header:
        rows = rows[1:]
    for i, r in rows:
        if len(r) != len(header):
            raise NetworkFormatError(f"{path}: row {i}: expected {len(header)} fields, got {len(r)}")
    return rows


def check_volumes(volumes: VolumeObservations, net: RoadNetwork) -> None:
    for link_id, v in volumes.entries.items():
        if link_id not in net.index:
            raise NetworkFormatError(f"volume for unknown link {link_id!r}")
        if not (math.isfinite(v) and v >= 0):
            raise NetworkFormatError(f"volume on {link_id!r} must be non-negative, got {v}")


def load_volumes(path, net: RoadNetwork) -> VolumeObservations:
    """Read ``link_id,volume`` rows (header optional). Row order is kept."""
    entries: dict[str, float] = {}
    for row, (link_id, value) in _csv_rows(path, ("link_id", "volume")):
        link_id = link_id.strip()
        if link_id in entries:
            raise NetworkFormatError(f"{path}: row {row}: duplicate link id {link_id!r}")
        entries[link_id] = _float(value, "volume", row)
        try:
            check_volumes(VolumeObservations({link_id: entries[link_id]}), net)
        except NetworkFormatError as exc:
            raise NetworkFormatError(f"{path}: row {row}: {exc}") from None
    return VolumeObservations(entries)


def save_volumes(volumes: VolumeObservations, path) -> None:
    lines = ["link_id,volume"] + [f"{k},{format_number(v)}" for k, v in volumes.entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_od(path) -> OdDemand:
    entries = []
    for row, (o, d, q) in _csv_rows(path, ("origin", "destination", "demand")):
        entries.append((o.strip(), d.strip(), _float(q, "demand", row)))
    try:
        return OdDemand(entries)
    except NetworkFormatError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from None


def save_od(od: OdDemand, path) -> None:
    lines = ["origin,destination,demand"] + [f"{o},{d},{format_number(q)}" for o, d, q in od]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_detector_list(path, net: RoadNetwork | None = None) -> list[str]:
    """One link id per line (blank lines and ``#`` comments ignored)."""
    out = []
    for row, line in enumerate(_read_text(path).splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if net is not None and line not in net.index:
            raise NetworkFormatError(f"{path}: row {row}: unknown link {line!r}")
        if line in out:
            raise NetworkFormatError(f"{path}: row {row}: duplicate link {line!r}")
        out.append(line)
    return out
