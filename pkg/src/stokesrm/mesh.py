"""Conforming triangular meshes, face skeleton, and bisection refinement.

Cells are stored counterclockwise.  The refinement edge of a cell is the
edge between its first two vertices; builders tag the longest edge, and
bisection hands the parent's remaining edges down as the children's
refinement edges (newest-vertex bisection).
"""

from dataclasses import dataclass, field

import numpy as np

from .shape import LOCAL_EDGES


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


@dataclass(frozen=True)
class FaceSet:
    """Oriented skeleton of a mesh.

    Normals point from the "+" cell to the "-" cell on interior faces
    (the "+" cell is the owner with the lower index) and outward on
    boundary faces.
    """

    vertices: np.ndarray      # (nf, 2) endpoint vertex ids, low id first
    cell_plus: np.ndarray     # (nf,)
    cell_minus: np.ndarray    # (nf,), -1 on boundary faces
    local_edge_plus: np.ndarray   # local edge index within the "+" cell
    local_edge_minus: np.ndarray  # local edge index within the "-" cell, -1 on boundary
    normals: np.ndarray       # (nf, 2) unit normals
    lengths: np.ndarray       # (nf,) h_F
    interior: np.ndarray      # (nf,) bool

    @property
    def n_faces(self):
        return len(self.lengths)

    def index_of(self):
        """Lookup dict from sorted endpoint pair to face index."""
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.vertices)}


@dataclass
class Mesh:
    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3) CCW vertex indices
    generations: np.ndarray = None
    parent_cells: np.ndarray = None  # ancestor cell in the mesh this one was bisected from
    faces: FaceSet = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if self.generations is None:
            self.generations = np.zeros(len(self.cells), dtype=np.int64)
        if np.any(self.cell_areas() <= 0.0):
            raise MeshError("cell with non-positive area (not CCW?)")
        if self.faces is None:
            self.faces = compute_skeleton(self)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    def cell_coords(self):
        """Vertex coordinates per cell, shape (nc, 3, 2)."""
        return self.vertices[self.cells]

    def cell_areas(self):
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def cell_diameters(self):
        p = self.vertices[self.cells]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
        return np.linalg.norm(e, axis=-1).max(axis=0)

    def min_angle(self):
        p = self.vertices[self.cells]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return np.min(angles)


def _tag_longest_edges(vertices, cells):
    """Cyclically rotate each cell so its longest edge comes first."""
    cells = np.array(cells, dtype=np.int64)
    p = vertices[cells]
    lengths = np.stack([
        np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
    ], axis=1)
    shift = lengths.argmax(axis=1)
    out = cells.copy()
    for s in (1, 2):
        rows = shift == s
        out[rows] = np.roll(cells[rows], -s, axis=1)
    return out


def compute_skeleton(mesh: Mesh) -> FaceSet:
    """Classify every edge, fix normals, and record owners."""
    owners = {}
    for c, cell in enumerate(mesh.cells):
        for le, (a, b) in enumerate(LOCAL_EDGES):
            key = (int(min(cell[a], cell[b])), int(max(cell[a], cell[b])))
            owners.setdefault(key, []).append((c, le))
    verts, plus, minus, lplus, lminus = [], [], [], [], []
    for key in sorted(owners):
        own = owners[key]
        if len(own) > 2:
            raise MeshError(f"non-manifold edge {key} shared by {len(own)} cells")
        own.sort()
        verts.append(key)
        plus.append(own[0][0])
        lplus.append(own[0][1])
        if len(own) == 2:
            minus.append(own[1][0])
            lminus.append(own[1][1])
        else:
            minus.append(-1)
            lminus.append(-1)
    verts = np.array(verts, dtype=np.int64)
    plus = np.array(plus, dtype=np.int64)
    minus = np.array(minus, dtype=np.int64)
    pa = mesh.vertices[verts[:, 0]]
    pb = mesh.vertices[verts[:, 1]]
    tang = pb - pa
    lengths = np.linalg.norm(tang, axis=1)
    if np.any(lengths <= 0.0):
        raise MeshError("degenerate zero-length edge")
    normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]
    # orient outward from the "+" cell
    centroids = mesh.vertices[mesh.cells[plus]].mean(axis=1)
    flip = np.einsum("ij,ij->i", normals, 0.5 * (pa + pb) - centroids) < 0.0
    normals[flip] *= -1.0
    return FaceSet(
        vertices=verts, cell_plus=plus, cell_minus=minus,
        local_edge_plus=np.array(lplus, dtype=np.int64),
        local_edge_minus=np.array(lminus, dtype=np.int64),
        normals=normals, lengths=lengths, interior=minus >= 0)


def build_structured_unit_square(n: int) -> Mesh:
    """2n^2 triangles on (0,1)^2, squares split along the lower-left to
    upper-right diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    vid = lambda i, j: i * (n + 1) + j
    cells = []
    for i in range(n):
        for j in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    cells = _tag_longest_edges(vertices, cells)
    return Mesh(vertices, cells)


def build_circular_segment(radius_divisions: int) -> Mesh:
    """Polygonal triangulation of the sector 0 < r < 1, 0 < phi < 3*pi/2.

    Boundary vertices lie exactly on r=1 (up to rounding); the straight
    edges lie exactly on phi=0 (y=0, x>0) and phi=3*pi/2 (x=0, y<0).
    """
    if radius_divisions < 1:
        raise ValueError("radius_divisions must be >= 1")
    n = radius_divisions
    omega = 1.5 * np.pi
    m = 3 * n  # angular divisions, ~pi/2 per radial step
    angles = omega * np.arange(m + 1) / m
    vertices = [np.array([0.0, 0.0])]
    index = {}
    for i in range(1, n + 1):
        r = i / n
        for j in range(m + 1):
            x, y = r * np.cos(angles[j]), r * np.sin(angles[j])
            if j == 0:
                x, y = r, 0.0
            elif j == m:
                x, y = 0.0, -r
            index[(i, j)] = len(vertices)
            vertices.append(np.array([x, y]))
    vertices = np.array(vertices)
    cells = []
    for j in range(m):
        cells.append((0, index[(1, j)], index[(1, j + 1)]))
    for i in range(1, n):
        for j in range(m):
            a, b = index[(i, j)], index[(i + 1, j)]
            c, d = index[(i + 1, j + 1)], index[(i, j + 1)]
            cells.append((a, b, c))
            cells.append((a, c, d))
    cells = _tag_longest_edges(vertices, cells)
    return Mesh(vertices, cells)


def bisect(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked cells with recursive closure.

    The returned mesh carries ``parent_cells`` mapping each new cell to
    its ancestor in ``mesh``.
    """
    marked = sorted(set(int(c) for c in marked))
    if any(c < 0 or c >= mesh.n_cells for c in marked):
        raise ValueError("marked cell index out of range")
    if not marked:
        return Mesh(mesh.vertices.copy(), mesh.cells.copy(),
                    mesh.generations.copy(),
                    parent_cells=np.arange(mesh.n_cells))

    cells = mesh.cells
    edge_key = lambda a, b: (min(a, b), max(a, b))
    ref_edge = [edge_key(int(c[0]), int(c[1])) for c in cells]
    cell_edges = [
        (edge_key(int(c[0]), int(c[1])), edge_key(int(c[1]), int(c[2])),
         edge_key(int(c[2]), int(c[0]))) for c in cells]

    marked_edges = set(ref_edge[c] for c in marked)
    # closure: a cell with any marked edge must also bisect its own
    # refinement edge
    changed = True
    while changed:
        changed = False
        for c in range(mesh.n_cells):
            if ref_edge[c] in marked_edges:
                continue
            if any(e in marked_edges for e in cell_edges[c]):
                marked_edges.add(ref_edge[c])
                changed = True

    new_vertices = list(mesh.vertices)
    midpoint = {}
    for a, b in sorted(marked_edges):
        midpoint[(a, b)] = len(new_vertices)
        new_vertices.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))

    out_cells, out_gen, out_parent = [], [], []

    def split(tri, gen, parent):
        a, b, c = tri
        key = edge_key(a, b)
        if key not in marked_edges:
            out_cells.append(tri)
            out_gen.append(gen)
            out_parent.append(parent)
            return
        m = midpoint[key]
        split((c, a, m), gen + 1, parent)
        split((b, c, m), gen + 1, parent)

    for c in range(mesh.n_cells):
        tri = (int(cells[c, 0]), int(cells[c, 1]), int(cells[c, 2]))
        split(tri, int(mesh.generations[c]), c)

    return Mesh(np.array(new_vertices), np.array(out_cells, dtype=np.int64),
                np.array(out_gen, dtype=np.int64),
                parent_cells=np.array(out_parent, dtype=np.int64))


def write_mesh(mesh: Mesh, path):
    """ASCII export: `ntri-mesh v1` header, vertex and cell blocks."""
    with open(path, "w") as fh:
        fh.write("ntri-mesh v1\n")
        fh.write(f"V {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"C {mesh.n_cells}\n")
        for i, j, k in mesh.cells:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        tokens = fh.read().split()
    if tokens[:2] != ["ntri-mesh", "v1"]:
        raise MeshError("not an ntri-mesh v1 file")
    pos = 2
    if tokens[pos] != "V":
        raise MeshError("expected vertex block")
    nv = int(tokens[pos + 1])
    pos += 2
    vertices = np.array(tokens[pos:pos + 2 * nv], dtype=float).reshape(nv, 2)
    pos += 2 * nv
    if tokens[pos] != "C":
        raise MeshError("expected cell block")
    nc = int(tokens[pos + 1])
    pos += 2
    cells = np.array(tokens[pos:pos + 3 * nc], dtype=np.int64).reshape(nc, 3)
    return Mesh(vertices, cells)
