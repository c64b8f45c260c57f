"""Triangle meshes carrying a per-corner UV atlas, plus a small OBJ reader/writer."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, ObjParseError, UnsupportedInputError


@dataclass
class UvMesh:
    """Triangle mesh with per-corner texture coordinates.

    ``uvs`` is the texture-coordinate table (one row per OBJ ``vt``) and
    ``uv_index[f, c]`` selects the UV of corner ``c`` of triangle ``f``.
    Vertices are shared between charts, which is what makes seams detectable.
    """
    vertices: np.ndarray              # (V, 3)
    triangles: np.ndarray             # (F, 3) int
    uvs: np.ndarray                   # (U, 2)
    uv_index: np.ndarray              # (F, 3) int
    normals: np.ndarray = None        # (V, 3) unit
    chart_id: np.ndarray = field(default=None)  # (F,) optional chart label

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
        self.uv_index = np.asarray(self.uv_index, dtype=np.int64).reshape(-1, 3)
        if self.uv_index.shape != self.triangles.shape:
            raise ContractError("every triangle needs three UV corners")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ContractError("triangle vertex index out of range")
        if self.uv_index.size and (self.uv_index.min() < 0 or self.uv_index.max() >= len(self.uvs)):
            raise ContractError("triangle UV index out of range")
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.triangles)
        else:
            self.normals = _normalize_rows(np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))
        if self.chart_id is not None:
            self.chart_id = np.asarray(self.chart_id, dtype=np.int64)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def corner_uvs(self) -> np.ndarray:
        """(F, 3, 2) UV of every triangle corner."""
        return self.uvs[self.uv_index]

    @property
    def corner_positions(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        p = self.corner_positions
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def uv_areas(self) -> np.ndarray:
        q = self.corner_uvs
        e1, e2 = q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def bounding_sphere(self):
        lo, hi = self.vertices.min(0), self.vertices.max(0)
        center = 0.5 * (lo + hi)
        radius = float(np.linalg.norm(self.vertices - center, axis=1).max())
        return center, radius


def _normalize_rows(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), v)


def vertex_normals(vertices, triangles) -> np.ndarray:
    """Area-weighted average of incident face normals."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    normals = np.zeros_like(vertices)
    if len(triangles):
        p = vertices[triangles]
        # cross product length is twice the area, i.e. already area weighted
        fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        for c in range(3):
            np.add.at(normals, triangles[:, c], fn)
    return _normalize_rows(normals)


def load_obj(path) -> UvMesh:
    """Read the ``v``/``vt``/``vn``/``f`` subset of Wavefront OBJ.

    Polygons are fan-triangulated.  Faces must reference a ``vt``.  When ``vn``
    records are present the per-vertex normal is the mean of the normals its
    corners reference; otherwise normals are area-weighted face averages.
    """
    verts, uvs, vns = [], [], []
    tris, tri_uv, tri_vn = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            try:
                if tag == "v":
                    verts.append([float(x) for x in rest[:3]])
                    if len(rest) < 3:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "vt":
                    if len(rest) < 2:
                        raise ValueError("texture coordinate needs 2 values")
                    uvs.append([float(x) for x in rest[:2]])
                elif tag == "vn":
                    if len(rest) < 3:
                        raise ValueError("normal needs 3 values")
                    vns.append([float(x) for x in rest[:3]])
                elif tag == "f":
                    if len(rest) < 3:
                        raise ValueError("face needs at least 3 corners")
                    corners = []
                    for tok in rest:
                        parts = tok.split("/")
                        if len(parts) < 2 or parts[1] == "":
                            raise UnsupportedInputError(
                                f"{path}:{lineno}: face corner {tok!r} has no texture coordinate")
                        idx = [_obj_index(parts[0], len(verts)), _obj_index(parts[1], len(uvs))]
                        idx.append(_obj_index(parts[2], len(vns)) if len(parts) > 2 and parts[2] else -1)
                        corners.append(idx)
                    for k in range(1, len(corners) - 1):
                        a, b, c = corners[0], corners[k], corners[k + 1]
                        tris.append([a[0], b[0], c[0]])
                        tri_uv.append([a[1], b[1], c[1]])
                        tri_vn.append([a[2], b[2], c[2]])
                # other records (o, g, s, usemtl, mtllib) are ignored
            except UnsupportedInputError:
                raise
            except (ValueError, IndexError) as exc:
                raise ObjParseError(str(exc), path, lineno) from None

    vertices = np.array(verts, dtype=np.float64).reshape(-1, 3)
    triangles = np.array(tris, dtype=np.int64).reshape(-1, 3)
    normals = None
    if vns and len(triangles):
        tri_vn = np.array(tri_vn, dtype=np.int64)
        if (tri_vn >= 0).all():
            vn = np.array(vns, dtype=np.float64)
            acc = np.zeros_like(vertices)
            np.add.at(acc, triangles.reshape(-1), vn[tri_vn.reshape(-1)])
            normals = acc
    try:
        return UvMesh(vertices, triangles, np.array(uvs).reshape(-1, 2),
                      np.array(tri_uv, dtype=np.int64).reshape(-1, 3), normals)
    except ContractError as exc:
        raise ObjParseError(str(exc), path) from None


def _obj_index(tok: str, count: int) -> int:
    i = int(tok)
    if i > 0:
        i -= 1
    elif i < 0:
        i += count
    else:
        raise ValueError("OBJ indices are 1-based; got 0")
    if not 0 <= i < count:
        raise ValueError(f"index {tok} refers to an undefined element")
    return i


def write_obj(mesh: UvMesh, path) -> None:
    """Write ``mesh`` with one ``vn`` per vertex (indices shared with ``v``)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = ["# pointuv mesh"]
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines += ["vt %.17g %.17g" % tuple(t) for t in mesh.uvs]
    lines += ["vn %.17g %.17g %.17g" % tuple(n) for n in mesh.normals]
    for tri, tuv in zip(mesh.triangles + 1, mesh.uv_index + 1):
        lines.append("f " + " ".join(f"{v}/{t}/{v}" for v, t in zip(tri, tuv)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
