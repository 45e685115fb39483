"""Triangle meshes with optional per-face semantic labels, ascii PLY I/O,
and grid-clustering simplification."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import IO, Optional, Union

import numpy as np

__all__ = ["TriMesh", "load_ply", "save_ply", "simplify_mesh"]


@dataclass
class TriMesh:
    vertices: np.ndarray  # (n, 3) float
    faces: np.ndarray  # (m, 3) int
    labels: Optional[np.ndarray] = None  # (m,) int semantic label per face

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise ValueError("face indices out of range")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.faces):
                raise ValueError(
                    f"labels ({len(self.labels)}) must match faces ({len(self.faces)})"
                )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum()) if self.n_faces else 0.0

    def copy(self) -> "TriMesh":
        return TriMesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.labels is None else self.labels.copy(),
        )


def save_ply(mesh: TriMesh, target: Union[str, IO[str], None] = None) -> Optional[str]:
    """Write ascii PLY; faces carry `property int label` when labels are
    present.  With no target, returns the text."""
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"element vertex {mesh.n_vertices}\n")
    out.write("property double x\nproperty double y\nproperty double z\n")
    out.write(f"element face {mesh.n_faces}\n")
    out.write("property list uchar int vertex_indices\n")
    if mesh.labels is not None:
        out.write("property int label\n")
    out.write("end_header\n")
    for v in mesh.vertices:
        out.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
    for i, f in enumerate(mesh.faces):
        line = f"3 {f[0]} {f[1]} {f[2]}"
        if mesh.labels is not None:
            line += f" {mesh.labels[i]}"
        out.write(line + "\n")
    text = out.getvalue()
    if target is None:
        return text
    if isinstance(target, str):
        with open(target, "w") as fh:
            fh.write(text)
        return None
    target.write(text)
    return None


def load_ply(source: Union[str, IO[str]]) -> TriMesh:
    """Read ascii PLY written by save_ply (or compatible)."""
    if isinstance(source, str) and "\n" not in source:
        with open(source) as fh:
            text = fh.read()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError("not a PLY file")
    n_vertex = n_face = 0
    has_label = False
    header_end = 0
    element = None
    for i, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "element":
            element = tokens[1]
            if element == "vertex":
                n_vertex = int(tokens[2])
            elif element == "face":
                n_face = int(tokens[2])
        elif tokens[0] == "property" and element == "face" and tokens[-1] == "label":
            has_label = True
        elif tokens[0] == "format" and tokens[1] != "ascii":
            raise ValueError("only ascii PLY is supported")
        elif tokens[0] == "end_header":
            header_end = i
            break
    body = lines[header_end + 1 :]
    vertices = np.array(
        [[float(x) for x in body[i].split()[:3]] for i in range(n_vertex)]
    ).reshape(-1, 3)
    faces = np.zeros((n_face, 3), dtype=np.int64)
    labels = np.zeros(n_face, dtype=np.int64) if has_label else None
    for i in range(n_face):
        tokens = body[n_vertex + i].split()
        count = int(tokens[0])
        if count != 3:
            raise ValueError("only triangle faces are supported")
        faces[i] = [int(t) for t in tokens[1:4]]
        if has_label:
            labels[i] = int(tokens[4])
    return TriMesh(vertices, faces, labels)


def simplify_mesh(mesh: TriMesh, cell: float) -> tuple[TriMesh, np.ndarray]:
    """Vertex-clustering simplification on a uniform grid.

    Vertices falling in the same grid cell collapse to their centroid;
    faces that become degenerate are dropped and duplicate faces are kept
    once (first occurrence carries its label).  Returns the simplified
    mesh and the map original vertex -> simplified vertex.
    """
    if cell <= 0:
        raise ValueError("cell must be positive")
    if mesh.n_vertices == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), np.zeros(
            0, dtype=np.int64
        )
    keys = np.floor(mesh.vertices / cell).astype(np.int64)
    _, first_index, inverse = np.unique(
        keys, axis=0, return_index=True, return_inverse=True
    )
    # order clusters by first appearance so output is stable under
    # permutations of later vertices
    order = np.argsort(first_index, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    vertex_map = rank[inverse]

    n_clusters = len(first_index)
    sums = np.zeros((n_clusters, 3))
    counts = np.zeros(n_clusters)
    np.add.at(sums, vertex_map, mesh.vertices)
    np.add.at(counts, vertex_map, 1.0)
    new_vertices = sums / counts[:, None]

    new_faces = vertex_map[mesh.faces]
    ok = (
        (new_faces[:, 0] != new_faces[:, 1])
        & (new_faces[:, 1] != new_faces[:, 2])
        & (new_faces[:, 0] != new_faces[:, 2])
    )
    new_faces = new_faces[ok]
    new_labels = mesh.labels[ok] if mesh.labels is not None else None
    if len(new_faces):
        canon = np.sort(new_faces, axis=1)
        _, keep = np.unique(canon, axis=0, return_index=True)
        keep = np.sort(keep)
        new_faces = new_faces[keep]
        if new_labels is not None:
            new_labels = new_labels[keep]
    return TriMesh(new_vertices, new_faces, new_labels), vertex_map
