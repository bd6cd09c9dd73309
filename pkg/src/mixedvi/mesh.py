"""Structured triangulations of a rectangle with a four-part boundary partition."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

TAGS = ("G1", "G2", "G3", "G4")
SIDES = ("left", "right", "bottom", "top")

DEFAULT_PARTITION = {"left": "G1", "right": "G2", "bottom": "G3", "top": "G4"}


class MeshError(ValueError):
    pass


def check_partition(partition: dict[str, str]) -> list[str]:
    """Return the list of problems with a side -> tag assignment (empty if valid)."""
    problems = []
    unknown = sorted(set(partition) - set(SIDES))
    if unknown:
        problems.append(f"unknown rectangle side(s) {unknown}; expected {list(SIDES)}")
    for side in SIDES:
        if side not in partition:
            problems.append(f"side '{side}' has no boundary tag")
    bad = sorted({t for t in partition.values() if t not in TAGS})
    if bad:
        problems.append(f"unknown boundary tag(s) {bad}; expected {list(TAGS)}")
    used = set(partition.values())
    for tag in TAGS:
        if tag not in used:
            problems.append(f"tag {tag} covers no side: meas(Γᵢ) > 0 required for every boundary part")
    return problems


@dataclass(frozen=True, eq=False)
class Mesh:
    """P1 triangulation of ``[0, width] x [0, height]``.

    ``edges`` holds boundary edges as node pairs oriented counter-clockwise
    along the boundary, so the outward normal is the edge direction rotated
    by -90 degrees. ``edge_tags`` and ``edge_lengths`` are aligned with it.
    """

    nx: int
    ny: int
    width: float
    height: float
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: tuple[str, ...]
    edge_lengths: np.ndarray
    partition: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PARTITION))

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.edges, self.edge_lengths):
            arr.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def boundary_edges(self) -> list[tuple[tuple[int, int], str, float]]:
        return [
            ((int(a), int(b)), tag, float(h))
            for (a, b), tag, h in zip(self.edges, self.edge_tags, self.edge_lengths)
        ]

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return self.tag_nodes("G1")

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    def tag_nodes(self, tag: str) -> np.ndarray:
        _check_tag(tag)
        sel = [i for i, t in enumerate(self.edge_tags) if t == tag]
        return np.unique(self.edges[sel].ravel())

    def tag_measure(self, tag: str) -> float:
        _check_tag(tag)
        return float(sum(h for t, h in zip(self.edge_tags, self.edge_lengths) if t == tag))

    @cached_property
    def areas(self) -> np.ndarray:
        """Signed triangle areas (positive for counter-clockwise triangles)."""
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        out = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        out.flags.writeable = False
        return out

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """Constant gradients of the three P1 basis functions, shape (n_tri, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        out = np.stack([gx, gy], axis=2) / two_a[:, None, None]
        out.flags.writeable = False
        return out

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "nx": self.nx,
            "ny": self.ny,
            "width": self.width,
            "height": self.height,
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_edges": [
                {"nodes": [a, b], "tag": tag, "length": h} for (a, b), tag, h in self.boundary_edges
            ],
            "dirichlet_nodes": self.dirichlet_nodes.tolist(),
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _check_tag(tag: str) -> None:
    if tag not in TAGS:
        raise MeshError(f"invalid boundary tag {tag!r}; expected one of {TAGS}")


def build_rect_mesh(
    nx: int,
    ny: int,
    width: float = 1.0,
    height: float = 1.0,
    partition: dict[str, str] | None = None,
) -> Mesh:
    """Triangulate the rectangle with every cell cut along its SW-NE diagonal.

    Nodes are numbered row by row (x fastest); a partition maps each side
    (``left``, ``right``, ``bottom``, ``top``) to a tag ``G1``..``G4``.
    """
    if partition is None:
        partition = dict(DEFAULT_PARTITION)
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"nx and ny must be positive integers, got {nx}, {ny}")
    if not (width > 0 and height > 0 and np.isfinite(width) and np.isfinite(height)):
        raise MeshError(f"width and height must be positive, got {width}, {height}")
    problems = check_partition(partition)
    if problems:
        raise MeshError("; ".join(problems))
    nx, ny = int(nx), int(ny)

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            sw, se, ne, nw = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((sw, se, ne))
            tris.append((sw, ne, nw))
    triangles = np.array(tris, dtype=np.int64)

    # counter-clockwise walk: bottom, right, top, left
    edges, tags = [], []
    for i in range(nx):
        edges.append((nid(i, 0), nid(i + 1, 0)))
        tags.append(partition["bottom"])
    for j in range(ny):
        edges.append((nid(nx, j), nid(nx, j + 1)))
        tags.append(partition["right"])
    for i in range(nx, 0, -1):
        edges.append((nid(i, ny), nid(i - 1, ny)))
        tags.append(partition["top"])
    for j in range(ny, 0, -1):
        edges.append((nid(0, j), nid(0, j - 1)))
        tags.append(partition["left"])
    edges = np.array(edges, dtype=np.int64)
    d = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])

    return Mesh(
        nx=nx,
        ny=ny,
        width=float(width),
        height=float(height),
        nodes=nodes,
        triangles=triangles,
        edges=edges,
        edge_tags=tuple(tags),
        edge_lengths=lengths,
        partition=dict(partition),
    )


def trace_dofs(mesh: Mesh, tag: str) -> list[tuple[int, tuple[int, int], float]]:
    """Edges carrying ``tag`` as (edge index, endpoint nodes, length), sorted by midpoint."""
    _check_tag(tag)
    sel = [i for i, t in enumerate(mesh.edge_tags) if t == tag]
    mids = {i: tuple(mesh.nodes[mesh.edges[i]].mean(axis=0)) for i in sel}
    sel.sort(key=lambda i: mids[i])
    out = []
    for i in sel:
        a, b = mesh.edges[i]
        if tuple(mesh.nodes[a]) > tuple(mesh.nodes[b]):
            a, b = b, a
        out.append((i, (int(a), int(b)), float(mesh.edge_lengths[i])))
    return out
