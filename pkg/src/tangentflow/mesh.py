"""Triangle meshes of closed surfaces: construction, validation, refinement, I/O."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Surface, Sphere, Torus, Ellipsoid, MeshOnly


class MeshError(ValueError):
    """Invalid mesh; ``element`` is the offending triangle (or -1)."""

    def __init__(self, message: str, element: int = -1):
        super().__init__(f"{message} (element {element})" if element >= 0 else message)
        self.element = element
        self.edge: tuple[int, int] | None = None


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    surface: Surface = field(default_factory=MeshOnly)
    level: int = 0

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self._edges = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def _build_edges(self):
        t = self.triangles
        local = np.array([[0, 1], [1, 2], [2, 0]])
        pairs = t[:, local].reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        self._edges = edges
        self._tri_edges = inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        if self._edges is None:
            self._build_edges()
        return self._edges

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edges (0,1), (1,2), (2,0) of each triangle."""
        if self._edges is None:
            self._build_edges()
        return self._tri_edges

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    def face_normals(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals of the triangulation."""
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        out = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(out, self.triangles[:, k], n)
        return out / np.linalg.norm(out, axis=1, keepdims=True)

    def mesh_size(self) -> float:
        e = self.vertices[self.edges]
        return float(np.max(np.linalg.norm(e[:, 1] - e[:, 0], axis=1)))

    def total_area(self) -> float:
        return float(self.areas().sum())

    def enclosed_volume(self) -> float:
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


@dataclass(frozen=True)
class MeshMetrics:
    h_max: float
    h_min: float
    area_total: float


def mesh_metrics(mesh: TriMesh) -> MeshMetrics:
    e = mesh.vertices[mesh.edges]
    lengths = np.linalg.norm(e[:, 1] - e[:, 0], axis=1)
    return MeshMetrics(float(lengths.max()), float(lengths.min()), mesh.total_area())


# ---------------------------------------------------------------------------
# validation


def validate_mesh(mesh: TriMesh, repair: bool = True) -> TriMesh:
    """Check that ``mesh`` is a closed orientable 2-manifold.

    Inconsistent triangle orientation is repaired by a breadth-first flood
    over edge neighbours when ``repair`` is set; the orientation is then chosen
    so that the enclosed volume is positive (outward normals).
    """
    t = mesh.triangles
    nv = mesh.n_vertices
    if t.ndim != 2 or t.shape[1] != 3:
        raise MeshError("triangles must be an (n, 3) index array")
    if len(t) == 0:
        raise MeshError("mesh has no triangles")
    bad = np.where((t < 0) | (t >= nv))[0]
    if len(bad):
        raise MeshError("vertex index out of range", int(bad[0]))
    rep = np.where((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2]))[0]
    if len(rep):
        raise MeshError("triangle repeats a vertex", int(rep[0]))
    area = mesh.areas()
    scale = max(mesh.mesh_size(), 1e-300) if len(t) else 1.0
    deg = np.where(area <= 1e-14 * scale ** 2)[0]
    if len(deg):
        raise MeshError("degenerate triangle", int(deg[0]))

    counts = np.bincount(mesh.triangle_edges.ravel(), minlength=mesh.n_edges)
    for e in np.where(counts != 2)[0]:
        tri = int(np.where(mesh.triangle_edges == e)[0][0])
        a, b = (int(v) for v in mesh.edges[e])
        kind = "boundary edge, surface is not closed" if counts[e] == 1 else "non-manifold edge"
        err = MeshError(f"{kind}: edge ({a}, {b})", tri)
        err.edge = (a, b)
        raise err

    used = np.zeros(nv, dtype=bool)
    used[t.ravel()] = True
    if not used.all():
        raise MeshError(f"vertex {int(np.where(~used)[0][0])} is not referenced by any triangle")
    _check_vertex_fans(mesh)

    tri = t.copy()
    flips = _orient(tri, mesh.triangle_edges.copy(), mesh.edges)
    if flips and not repair:
        raise MeshError("inconsistent triangle orientation", int(flips[0]))
    out = TriMesh(mesh.vertices, tri, mesh.surface, mesh.level)
    if out.enclosed_volume() < 0:
        out = TriMesh(mesh.vertices, tri[:, ::-1].copy(), mesh.surface, mesh.level)
    return out


def _check_vertex_fans(mesh: TriMesh) -> None:
    """Every vertex link must be a single cycle."""
    t = mesh.triangles
    nv = mesh.n_vertices
    order = np.argsort(t.ravel(), kind="stable")
    tri_of = order // 3
    starts = np.searchsorted(t.ravel()[order], np.arange(nv + 1))
    for v in range(nv):
        tris = tri_of[starts[v]:starts[v + 1]]
        adj: dict[int, list[int]] = {}
        for k in tris:
            others = [int(w) for w in t[k] if w != v]
            adj.setdefault(others[0], []).append(others[1])
            adj.setdefault(others[1], []).append(others[0])
        start = next(iter(adj))
        seen = {start}
        stack = [start]
        while stack:
            a = stack.pop()
            for b in adj[a]:
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        if len(seen) != len(adj):
            raise MeshError(f"vertex {v} is non-manifold", int(tris[0]))


def _orient(tri: np.ndarray, tri_edges: np.ndarray, edges: np.ndarray) -> list[int]:
    """Flip triangles in place so neighbours agree; returns flipped indices."""
    n = len(tri)
    owners = [[] for _ in range(len(edges))]
    for k in range(n):
        for e in tri_edges[k]:
            owners[e].append(k)
    state = np.zeros(n, dtype=np.int8)  # 0 unvisited, 1 visited
    flipped = []

    def directed(k, a, b):
        r = list(tri[k])
        i = r.index(a)
        return r[(i + 1) % 3] == b

    for seed in range(n):
        if state[seed]:
            continue
        state[seed] = 1
        queue = deque([seed])
        while queue:
            k = queue.popleft()
            for le in range(3):
                e = tri_edges[k, le]
                a, b = tri[k, le], tri[k, (le + 1) % 3]
                for j in owners[e]:
                    if j == k:
                        continue
                    consistent = not directed(j, a, b)
                    if state[j]:
                        if not consistent:
                            raise MeshError("surface is not orientable", int(j))
                        continue
                    if not consistent:
                        tri[j] = tri[j, ::-1]
                        # reversing the rows changes local edge numbering
                        tri_edges[j] = tri_edges[j][[1, 0, 2]]
                        flipped.append(j)
                    state[j] = 1
                    queue.append(j)
    return flipped


# ---------------------------------------------------------------------------
# construction


def octahedron(surface: Surface | None = None) -> TriMesh:
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    t = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                  [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    surface = surface or Sphere()
    m = TriMesh(v, t, surface)
    return _project(m)


def icosahedron(surface: Surface | None = None) -> TriMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                  [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                  [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    surface = surface or Sphere()
    return _project(TriMesh(v, t, surface))


def torus_grid(n_major: int, n_minor: int, surface: Torus | None = None) -> TriMesh:
    """Structured triangulation of a torus from an angle grid."""
    surface = surface or Torus()
    if n_major < 3 or n_minor < 3:
        raise MeshError("torus grid needs at least 3 cells per direction")
    phi = 2 * np.pi * np.arange(n_major) / n_major
    theta = 2 * np.pi * np.arange(n_minor) / n_minor
    P, T = np.meshgrid(phi, theta, indexing="ij")
    R, r = surface.major, surface.minor
    v = np.stack([(R + r * np.cos(T)) * np.cos(P), (R + r * np.cos(T)) * np.sin(P),
                  r * np.sin(T)], axis=-1).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    a = idx
    b = np.roll(idx, -1, axis=0)
    c = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    d = np.roll(idx, -1, axis=1)
    t = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                        np.stack([a, c, d], -1).reshape(-1, 3)])
    return validate_mesh(TriMesh(v, t, surface))


def _project(mesh: TriMesh) -> TriMesh:
    if mesh.surface.exact:
        mesh.vertices = mesh.surface.closest_point(mesh.vertices)
    return mesh


def refine(mesh: TriMesh, project: bool = True) -> TriMesh:
    """One step of midpoint subdivision; new vertices are projected to the surface."""
    e = mesh.edges
    mid = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    v = np.concatenate([mesh.vertices, mid])
    nv = mesh.n_vertices
    t = mesh.triangles
    m = mesh.triangle_edges + nv
    t_new = np.concatenate([
        np.stack([t[:, 0], m[:, 0], m[:, 2]], -1),
        np.stack([m[:, 0], t[:, 1], m[:, 1]], -1),
        np.stack([m[:, 2], m[:, 1], t[:, 2]], -1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], -1),
    ])
    out = TriMesh(v, t_new, mesh.surface, mesh.level + 1)
    if project and mesh.surface.exact:
        out.vertices[nv:] = mesh.surface.closest_point(out.vertices[nv:])
    return out


def refine_n(mesh: TriMesh, n: int) -> TriMesh:
    for _ in range(n):
        mesh = refine(mesh)
    return mesh


def build_mesh(surface: Surface, level: int, base: str = "icosahedron") -> TriMesh:
    """Standard mesh of a built-in surface at a refinement level."""
    if isinstance(surface, Torus):
        # level 0 is a 12 x 6 grid; each level doubles both counts
        return refine_n(torus_grid(12, 6, surface), level)
    if isinstance(surface, Ellipsoid):
        if base == "octahedron":
            m = octahedron(Sphere())
        else:
            m = icosahedron(Sphere())
        m = TriMesh(m.vertices * np.asarray(surface.axes_lengths), m.triangles, surface)
        return refine_n(_project(m), level)
    raise MeshError(f"no standard mesh for surface kind {surface.kind!r}")


# ---------------------------------------------------------------------------
# quadrature on the reference triangle (barycentric points, weights sum to 1)


def _sym_rule(groups):
    pts, wts = [], []
    for w, bary in groups:
        a, b, c = bary
        perms = {(a, b, c), (b, c, a), (c, a, b), (a, c, b), (c, b, a), (b, a, c)}
        for p in sorted(perms):
            pts.append(p)
            wts.append(w)
    return np.array(pts), np.array(wts)


QUADRATURE = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: _sym_rule([(1 / 3, (2 / 3, 1 / 6, 1 / 6))]),
    4: _sym_rule([
        (0.223381589678011, (0.108103018168070, 0.445948490915965, 0.445948490915965)),
        (0.109951743655322, (0.816847572980459, 0.091576213509771, 0.091576213509771)),
    ]),
    6: _sym_rule([
        (0.116786275726379, (0.501426509658179, 0.249286745170910, 0.249286745170910)),
        (0.050844906370207, (0.873821971016996, 0.063089014491502, 0.063089014491502)),
        (0.082851075618374, (0.053145049844817, 0.310352451033784, 0.636502499121399)),
    ]),
}


def quadrature_rule(order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and weights of a symmetric rule exact to ``order``."""
    for k in sorted(QUADRATURE):
        if k >= order:
            pts, w = QUADRATURE[k]
            return pts, w / w.sum()
    raise ValueError(f"no quadrature rule of order {order}")


# ---------------------------------------------------------------------------
# file formats


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def read_off(path) -> tuple[np.ndarray, np.ndarray]:
    tokens: list[str] = []
    with open(path) as fh:
        lines = [_strip(l) for l in fh]
    lines = [l for l in lines if l]
    if not lines or not lines[0].upper().startswith("OFF"):
        raise MeshError("OFF file must start with 'OFF'")
    head = lines[0][3:].split()
    rest = lines[1:]
    if not head:
        head, rest = rest[0].split(), rest[1:]
    nv, nf = int(head[0]), int(head[1])
    for l in rest:
        tokens.extend(l.split())
    vals = tokens
    v = np.array(vals[: 3 * nv], dtype=float).reshape(nv, 3)
    pos = 3 * nv
    faces = []
    for k in range(nf):
        n = int(vals[pos])
        idx = [int(i) for i in vals[pos + 1: pos + 1 + n]]
        pos += 1 + n
        if n < 3:
            raise MeshError("face with fewer than three vertices", k)
        for j in range(1, n - 1):
            faces.append([idx[0], idx[j], idx[j + 1]])
    return v, np.array(faces, dtype=np.int64)


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Read vertices and faces; normals, texture coordinates and materials are ignored."""
    v, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = _strip(line).split()
            if not parts:
                continue
            if parts[0] == "v":
                v.append([float(a) for a in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(v) + i)
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    return np.array(v, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def load_mesh(path, surface: Surface | None = None, validate: bool = True) -> TriMesh:
    """Load an OFF or OBJ file; the format is chosen by the file extension."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".off":
        v, t = read_off(path)
    elif ext == ".obj":
        v, t = read_obj(path)
    else:
        raise MeshError(f"unsupported mesh format {ext!r}")
    mesh = TriMesh(v, t, surface or MeshOnly())
    return validate_mesh(mesh) if validate else mesh


def write_off(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_edges}\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
