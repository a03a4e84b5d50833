"""Mesh-free node sets: generation, boundary tagging, ordering, persistence.

A cloud is a flat list of 2-D nodes. Every node is either internal or
belongs to exactly one named boundary segment with a boundary-condition
kind (Dirichlet / Neumann / Robin) and a unit outward normal. Solvers
rely on the canonical ordering: internal nodes first, then Dirichlet,
then Neumann, then Robin.

Node-file format (one node per line, '#' starts a comment):

    x y kind segment [nx ny] [beta]

Internal nodes use segment "-" and carry no normal; Robin nodes append
their coefficient beta after the normal. Coordinates are written with
repr-level precision so a save/load round trip is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.stats import qmc

from .errors import EmptyCloudError, InvalidSizeError, NodeFileError, TagError


class BCKind(IntEnum):
    """Node kind; integer order defines the canonical block order."""

    INTERNAL = 0
    DIRICHLET = 1
    NEUMANN = 2
    ROBIN = 3


_KIND_NAMES = {k: k.name.lower() for k in BCKind}
_NAME_KINDS = {v: k for k, v in _KIND_NAMES.items()}

# Channel segments (inflow, outflow, walls, blowing slot, suction slot)
# plus the unit-square walls.
SEGMENTS = ("inflow", "outflow", "walls", "blowing", "suction",
            "top", "bottom", "left", "right")


@dataclass(frozen=True)
class NodeTag:
    """Boundary-condition kind plus segment membership for one node."""

    kind: BCKind
    segment: str = ""
    beta: float | None = None

    def __post_init__(self):
        if self.kind is BCKind.ROBIN:
            if self.beta is None or not np.isfinite(self.beta):
                raise ValueError("Robin nodes require a finite beta")
        elif self.beta is not None:
            raise ValueError("beta is only meaningful for Robin nodes")
        if self.kind is not BCKind.INTERNAL and not self.segment:
            raise ValueError("boundary nodes must name a segment")


@dataclass
class PointCloud:
    """Immutable-by-convention node set.

    coords   : (N, 2) float array
    kinds    : (N,) int array of BCKind values
    segments : list of N segment names ('' for internal nodes)
    normals  : (N, 2) outward unit normals (zero rows for internal nodes)
    betas    : (N,) Robin coefficients (nan where not applicable)
    """

    coords: np.ndarray
    kinds: np.ndarray
    segments: list[str]
    normals: np.ndarray
    betas: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.coords)
        if self.betas is None:
            self.betas = np.full(n, np.nan)
        self.coords = np.asarray(self.coords, dtype=float).reshape(n, 2)
        self.kinds = np.asarray(self.kinds, dtype=int)
        self.normals = np.asarray(self.normals, dtype=float).reshape(n, 2)

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def counts(self) -> tuple[int, int, int, int]:
        """(N_internal, N_dirichlet, N_neumann, N_robin)."""
        return tuple(int(np.sum(self.kinds == k)) for k in BCKind)

    @property
    def n_internal(self) -> int:
        return self.counts[0]

    def indices_of_kind(self, kind: BCKind) -> np.ndarray:
        return np.flatnonzero(self.kinds == int(kind))

    def segment_indices(self, name: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.segments) if s == name],
                        dtype=int)

    def segment_names(self) -> list[str]:
        seen = []
        for s in self.segments:
            if s and s not in seen:
                seen.append(s)
        return seen

    def is_canonical(self) -> bool:
        return bool(np.all(np.diff(self.kinds) >= 0))

    def validate(self):
        """Check the structural invariants; raise ValueError on violation."""
        if self.n == 0:
            raise ValueError("empty cloud")
        if sum(self.counts) != self.n:
            raise ValueError("counts do not add up")
        bnd = self.kinds != BCKind.INTERNAL
        lens = np.linalg.norm(self.normals[bnd], axis=1)
        if bnd.any() and np.max(np.abs(lens - 1.0)) > 1e-12:
            raise ValueError("boundary normals are not unit length")
        for i in np.flatnonzero(bnd):
            if not self.segments[i]:
                raise ValueError(f"boundary node {i} has no segment")
        robin = self.kinds == BCKind.ROBIN
        if robin.any() and not np.all(np.isfinite(self.betas[robin])):
            raise ValueError("Robin nodes must carry finite beta")
        # pairwise-distinct nodes
        order = np.lexsort((self.coords[:, 1], self.coords[:, 0]))
        sc = self.coords[order]
        same = np.all(sc[1:] == sc[:-1], axis=1)
        if same.any():
            raise ValueError("duplicate nodes in cloud")


def reorder_canonical(cloud: PointCloud) -> tuple[PointCloud, np.ndarray]:
    """Stable permutation into internal->Dirichlet->Neumann->Robin blocks.

    Returns (reordered cloud, perm) where perm[new_index] = old_index, so
    a nodal field f transforms as f_new = f_old[perm].
    """
    perm = np.argsort(cloud.kinds, kind="stable")
    out = PointCloud(
        coords=cloud.coords[perm].copy(),
        kinds=cloud.kinds[perm].copy(),
        segments=[cloud.segments[i] for i in perm],
        normals=cloud.normals[perm].copy(),
        betas=cloud.betas[perm].copy(),
    )
    return out, perm


def make_unit_square_grid(nx: int, ny: int,
                          top_kind: BCKind = BCKind.DIRICHLET,
                          top_beta: float | None = None) -> PointCloud:
    """Regular nx-by-ny lattice on [0,1]^2 with tagged walls.

    Segments are top/bottom/left/right. Corner ownership: the top wall
    (the controlled segment) owns its two corners, the bottom wall owns
    the other two, so left/right hold only edge-interior nodes.
    """
    if nx < 2 or ny < 2:
        raise InvalidSizeError(f"grid must be at least 2x2, got {nx}x{ny}")
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    coords = np.column_stack([X.ravel(), Y.ravel()])

    n = len(coords)
    kinds = np.full(n, int(BCKind.INTERNAL))
    segments = [""] * n
    normals = np.zeros((n, 2))
    betas = np.full(n, np.nan)

    x, y = coords[:, 0], coords[:, 1]
    on_top = y == 1.0
    on_bottom = y == 0.0
    on_left = (x == 0.0) & ~on_top & ~on_bottom
    on_right = (x == 1.0) & ~on_top & ~on_bottom

    for mask, seg, nrm, kind in (
        (on_top, "top", (0.0, 1.0), top_kind),
        (on_bottom, "bottom", (0.0, -1.0), BCKind.DIRICHLET),
        (on_left, "left", (-1.0, 0.0), BCKind.DIRICHLET),
        (on_right, "right", (1.0, 0.0), BCKind.DIRICHLET),
    ):
        idx = np.flatnonzero(mask)
        kinds[idx] = int(kind)
        normals[idx] = nrm
        for i in idx:
            segments[i] = seg
        if kind is BCKind.ROBIN:
            if top_beta is None or not np.isfinite(top_beta):
                raise ValueError("Robin top wall requires finite top_beta")
            betas[idx] = top_beta

    cloud = PointCloud(coords, kinds, segments, normals, betas)
    cloud, _ = reorder_canonical(cloud)
    cloud.validate()
    return cloud


def _edge_nodes(p0, p1, spacing, include_ends):
    """Evenly spaced points along segment p0->p1 at roughly `spacing`."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    length = float(np.linalg.norm(p1 - p0))
    n_cells = max(1, int(round(length / spacing)))
    ts = np.linspace(0.0, 1.0, n_cells + 1)
    if not include_ends[0]:
        ts = ts[1:]
    if not include_ends[1]:
        ts = ts[:-1]
    return p0[None, :] + ts[:, None] * (p1 - p0)[None, :]


def make_channel_cloud(lx: float, ly: float, target_count: int,
                       seed: int = 0) -> PointCloud:
    """Scattered channel cloud [0,lx]x[0,ly] with five boundary segments.

    inflow (x=0) / outflow (x=lx) / walls (y=0 and y=ly) plus a blowing
    slot on the bottom wall and a suction slot on the top wall, both
    centred at x = lx/2 with width ly/3. The inflow owns its corners;
    the walls own the outflow corners. Interior nodes come from a seeded
    Halton sequence with minimum-separation rejection at half the
    nominal spacing, so clouds are reproducible.
    """
    if lx <= 0 or ly <= 0:
        raise InvalidSizeError("channel dimensions must be positive")
    if target_count < 1:
        raise InvalidSizeError("target_count must be positive")

    # nominal spacing h from: interior lx*ly/h^2 + perimeter 2(lx+ly)/h = N
    area, perim = lx * ly, 2.0 * (lx + ly)
    z = (-perim + np.sqrt(perim**2 + 4.0 * area * target_count)) / (2.0 * area)
    if z <= 0:
        raise InvalidSizeError(f"target_count {target_count} too small")
    h = 1.0 / z

    slot_lo = lx / 2.0 - ly / 6.0
    slot_hi = lx / 2.0 + ly / 6.0

    pieces = []  # (coords, segment, normal)

    # Inflow owns the left corners; outflow loses its corners to the walls.
    pieces.append((_edge_nodes((0, 0), (0, ly), h, (True, True)),
                   "inflow", (-1.0, 0.0)))
    pieces.append((_edge_nodes((lx, 0), (lx, ly), h, (False, False)),
                   "outflow", (1.0, 0.0)))
    for y_wall, nrm, slot_seg in ((0.0, (0.0, -1.0), "blowing"),
                                  (ly, (0.0, 1.0), "suction")):
        wall = _edge_nodes((0, y_wall), (lx, y_wall), h, (False, True))
        in_slot = (wall[:, 0] >= slot_lo) & (wall[:, 0] <= slot_hi)
        pieces.append((wall[~in_slot], "walls", nrm))
        pieces.append((wall[in_slot], slot_seg, nrm))

    for pc, seg, _ in pieces:
        if len(pc) == 0:
            raise InvalidSizeError(
                f"target_count {target_count} too small: segment '{seg}' empty")

    b_coords = np.vstack([pc for pc, _, _ in pieces])
    b_segments = sum(([seg] * len(pc) for pc, seg, _ in pieces), [])
    b_normals = np.vstack([np.tile(nrm, (len(pc), 1))
                           for pc, _, nrm in pieces])

    n_interior = target_count - len(b_coords)
    if n_interior < 1:
        raise InvalidSizeError(
            f"target_count {target_count} leaves no room for interior nodes")

    # Halton fill with min-separation rejection at h/2, margin h/2 from walls.
    min_sep = 0.5 * h
    margin = 0.5 * h
    halton = qmc.Halton(d=2, scramble=True, seed=seed)
    accepted = []
    kept = [b_coords]
    pool = np.vstack(kept)
    attempts = 0
    while len(accepted) < n_interior and attempts < 200 * n_interior:
        cand = halton.random(256)
        cand = np.column_stack([
            margin + cand[:, 0] * (lx - 2 * margin),
            margin + cand[:, 1] * (ly - 2 * margin),
        ])
        attempts += len(cand)
        for p in cand:
            d2 = np.sum((pool - p) ** 2, axis=1)
            if np.min(d2) >= min_sep**2:
                accepted.append(p)
                pool = np.vstack([pool, p])
                if len(accepted) >= n_interior:
                    break
    if len(accepted) < n_interior:
        raise InvalidSizeError(
            f"could not place {n_interior} interior nodes at spacing {h:.4g}")

    i_coords = np.array(accepted)
    coords = np.vstack([i_coords, b_coords])
    n = len(coords)
    kinds = np.full(n, int(BCKind.INTERNAL))
    segments = [""] * len(i_coords) + b_segments
    normals = np.vstack([np.zeros((len(i_coords), 2)), b_normals])

    # Velocity-oriented tags: outflow is Neumann, every other segment
    # carries Dirichlet data. Field solvers may override per segment.
    for i in range(len(i_coords), n):
        kinds[i] = int(BCKind.NEUMANN if segments[i] == "outflow"
                       else BCKind.DIRICHLET)

    cloud = PointCloud(coords, kinds, segments, normals)
    cloud, _ = reorder_canonical(cloud)
    cloud.validate()
    return cloud


def save_nodes(cloud: PointCloud, path):
    """Write a cloud to a plain-text node file (see module docstring)."""
    lines = ["# x y kind segment [nx ny] [beta]"]
    for i in range(cloud.n):
        x, y = cloud.coords[i]
        kind = BCKind(cloud.kinds[i])
        parts = [repr(float(x)), repr(float(y)), _KIND_NAMES[kind]]
        if kind is BCKind.INTERNAL:
            parts.append("-")
        else:
            parts.append(cloud.segments[i])
            parts.append(repr(float(cloud.normals[i, 0])))
            parts.append(repr(float(cloud.normals[i, 1])))
            if kind is BCKind.ROBIN:
                parts.append(repr(float(cloud.betas[i])))
        lines.append(" ".join(parts))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_nodes(path) -> PointCloud:
    """Read a node file written by :func:`save_nodes`."""
    coords, kinds, segments, normals, betas = [], [], [], [], []
    with open(path) as fh:
        raw = fh.readlines()
    for lineno, line in enumerate(raw, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) < 4:
            raise NodeFileError(f"expected at least 4 fields, got {len(parts)}",
                                line=lineno)
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise NodeFileError(f"bad coordinates {parts[0]!r} {parts[1]!r}",
                                line=lineno) from None
        kind_token = parts[2]
        if kind_token not in _NAME_KINDS:
            raise TagError(f"unknown tag {kind_token!r}", line=lineno)
        kind = _NAME_KINDS[kind_token]
        seg = parts[3]
        if kind is BCKind.INTERNAL:
            coords.append((x, y))
            kinds.append(int(kind))
            segments.append("")
            normals.append((0.0, 0.0))
            betas.append(np.nan)
            continue
        if seg == "-" or seg not in SEGMENTS:
            raise TagError(f"unknown segment {seg!r}", line=lineno)
        want = 6 + (1 if kind is BCKind.ROBIN else 0)
        if len(parts) != want:
            raise NodeFileError(
                f"{kind_token} node needs {want} fields, got {len(parts)}",
                line=lineno)
        try:
            nx_, ny_ = float(parts[4]), float(parts[5])
            beta = float(parts[6]) if kind is BCKind.ROBIN else np.nan
        except ValueError:
            raise NodeFileError("bad normal or beta value", line=lineno) from None
        coords.append((x, y))
        kinds.append(int(kind))
        segments.append(seg)
        normals.append((nx_, ny_))
        betas.append(beta)
    if not coords:
        raise EmptyCloudError("node file holds no nodes")
    cloud = PointCloud(np.array(coords), np.array(kinds), segments,
                       np.array(normals), np.array(betas))
    cloud.validate()
    return cloud
