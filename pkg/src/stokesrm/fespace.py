"""Global function spaces over a mesh: continuous P^k and broken P^k_d,
scalar or 2-vector, with DOF maps, interpolation, traces, and embedding.

Vector DOFs are interleaved per scalar node: (u_x, u_y).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .shape import LOCAL_EDGES, reference_basis, triangle_quadrature

CONTINUOUS = "continuous"
BROKEN = "broken"


class FunctionSpace:
    def __init__(self, mesh: Mesh, degree: int, continuity: str, components: int = 1):
        if continuity not in (CONTINUOUS, BROKEN):
            raise ValueError(f"unknown continuity {continuity!r}")
        if degree == 0 and continuity == CONTINUOUS:
            raise ValueError("degree-0 spaces are discontinuous only")
        if components not in (1, 2):
            raise ValueError("components must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.continuity = continuity
        self.components = components
        self.basis = reference_basis(degree)
        self._build_dof_map()
        self._geometry()

    def _build_dof_map(self):
        mesh, k = self.mesh, self.degree
        nloc = self.basis.ndofs
        if self.continuity == BROKEN:
            scalar_map = np.arange(mesh.n_cells * nloc).reshape(mesh.n_cells, nloc)
            self.n_scalar_dofs = mesh.n_cells * nloc
        else:
            face_index = mesh.faces.index_of()
            n_edge = max(k - 1, 0)
            n_int = nloc - 3 - 3 * n_edge
            edge_base = mesh.n_vertices
            cell_base = edge_base + mesh.faces.n_faces * n_edge
            self.n_scalar_dofs = cell_base + mesh.n_cells * n_int
            scalar_map = np.empty((mesh.n_cells, nloc), dtype=np.int64)
            for c, cell in enumerate(mesh.cells):
                for i, tag in enumerate(self.basis.node_tags):
                    if tag[0] == "vertex":
                        scalar_map[c, i] = cell[tag[1]]
                    elif tag[0] == "edge":
                        le, j = tag[1], tag[2]
                        ga, gb = int(cell[LOCAL_EDGES[le][0]]), int(cell[LOCAL_EDGES[le][1]])
                        f = face_index[(min(ga, gb), max(ga, gb))]
                        # order edge dofs along the canonical (low->high) direction
                        jj = j if ga < gb else n_edge - 1 - j
                        scalar_map[c, i] = edge_base + f * n_edge + jj
                    else:
                        scalar_map[c, i] = cell_base + c * n_int + tag[1]
        self.scalar_cell_dofs = scalar_map
        self.ndofs = self.n_scalar_dofs * self.components
        if self.components == 1:
            self.cell_dofs = scalar_map
        else:
            nc = self.mesh.n_cells
            cd = np.empty((nc, nloc * 2), dtype=np.int64)
            cd[:, 0::2] = 2 * scalar_map
            cd[:, 1::2] = 2 * scalar_map + 1
            self.cell_dofs = cd

    def _geometry(self):
        p = self.mesh.cell_coords()
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # (nc,2,2)
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        invB = np.empty_like(B)
        invB[:, 0, 0] = B[:, 1, 1] / det
        invB[:, 0, 1] = -B[:, 0, 1] / det
        invB[:, 1, 0] = -B[:, 1, 0] / det
        invB[:, 1, 1] = B[:, 0, 0] / det
        self.affine_b = B
        self.affine_det = det
        self.affine_inv = invB
        self.affine_origin = p[:, 0]

    # -- geometry helpers -------------------------------------------------

    def physical_points(self, ref_points):
        """Map reference points (nq,2) to all cells, shape (nc, nq, 2)."""
        rp = np.asarray(ref_points, dtype=float).reshape(-1, 2)
        return (np.einsum("cij,qj->cqi", self.affine_b, rp)
                + self.affine_origin[:, None, :])

    def reference_coords(self, cell_ids, points):
        """Pull physical points back to reference coordinates per cell."""
        d = points - self.affine_origin[cell_ids]
        return np.einsum("cij,cj->ci", self.affine_inv[cell_ids], d)

    def node_coords(self):
        """Physical coordinates of each scalar DOF's node."""
        coords = np.empty((self.n_scalar_dofs, 2))
        pts = self.physical_points(self.basis.nodes)  # (nc, nloc, 2)
        coords[self.scalar_cell_dofs.ravel()] = pts.reshape(-1, 2)
        return coords

    def local_dim(self):
        return self.basis.ndofs * self.components


@dataclass
class FieldCoefficients:
    space: FunctionSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.ndofs,):
            raise ValueError("coefficient vector length does not match space")

    def copy(self):
        return FieldCoefficients(self.space, self.values.copy())


def build_space(mesh, degree, continuity, components=1) -> FunctionSpace:
    return FunctionSpace(mesh, degree, continuity, components)


def interpolate(space: FunctionSpace, f) -> FieldCoefficients:
    """Nodal interpolant of f(x, y); f returns a scalar or a length-2
    vector (vectorized over point arrays)."""
    coords = space.node_coords()
    vals = np.asarray(f(coords[:, 0], coords[:, 1]), dtype=float)
    if space.components == 1:
        if vals.shape != (space.n_scalar_dofs,):
            vals = np.broadcast_to(vals, (space.n_scalar_dofs,))
        return FieldCoefficients(space, vals.copy())
    if vals.shape != (space.n_scalar_dofs, 2):
        raise ValueError("vector interpolation needs f returning (n,2) values")
    out = np.empty(space.ndofs)
    out[0::2] = vals[:, 0]
    out[1::2] = vals[:, 1]
    return FieldCoefficients(space, out)


def evaluate_at_cells(field: FieldCoefficients, cell_ids, ref_points_per_cell):
    """Evaluate a field at per-cell reference points.

    ref_points_per_cell has shape (n, nq, 2) aligned with cell_ids (n,).
    Returns values (n, nq, components) and physical gradients
    (n, nq, components, 2).
    """
    space = field.space
    n, nq, _ = ref_points_per_cell.shape
    vals, grads = space.basis.eval(ref_points_per_cell.reshape(-1, 2))
    nloc = space.basis.ndofs
    vals = vals.reshape(n, nq, nloc)
    grads = grads.reshape(n, nq, nloc, 2)
    # physical gradients: grad_x = invB^T grad_ref
    phys = np.einsum("cqld,cde->cqle", grads, space.affine_inv[cell_ids])
    out_v = np.empty((n, nq, space.components))
    out_g = np.empty((n, nq, space.components, 2))
    for comp in range(space.components):
        dofs = field.space.cell_dofs[cell_ids][:, comp::space.components] \
            if space.components == 2 else field.space.cell_dofs[cell_ids]
        coef = field.values[dofs]  # (n, nloc)
        out_v[:, :, comp] = np.einsum("cql,cl->cq", vals, coef)
        out_g[:, :, comp, :] = np.einsum("cqld,cl->cqd", phys, coef)
    return out_v, out_g


def face_ref_points(space: FunctionSpace, face_ids, side, ts):
    """Reference coordinates, in the owner cell on the given side, of the
    points x(t) = a + t (b - a) along each face (a, b canonical)."""
    faces = space.mesh.faces
    ts = np.asarray(ts, dtype=float)
    a = space.mesh.vertices[faces.vertices[face_ids, 0]]
    b = space.mesh.vertices[faces.vertices[face_ids, 1]]
    pts = a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]
    cells = faces.cell_plus[face_ids] if side == "+" else faces.cell_minus[face_ids]
    if side == "-" and np.any(cells < 0):
        raise ValueError('side "-" requested on a boundary face')
    d = pts - space.affine_origin[cells][:, None, :]
    ref = np.einsum("cij,cqj->cqi", space.affine_inv[cells], d)
    return cells, ref, pts


def face_trace(field: FieldCoefficients, face, side, ts):
    """Trace values and physical gradients of a field on one face.

    Returns (values, grads) with shapes (nq, components) and
    (nq, components, 2).
    """
    face_ids = np.array([face], dtype=np.int64)
    cells, ref, _ = face_ref_points(field.space, face_ids, side, ts)
    v, g = evaluate_at_cells(field, cells, ref)
    return v[0], g[0]


def face_jump_average(field: FieldCoefficients, face, ts):
    """Jump v+ - v- and average (v+ + v-)/2; on boundary faces both equal
    the trace."""
    vp, _ = face_trace(field, face, "+", ts)
    if field.space.mesh.faces.interior[face]:
        vm, _ = face_trace(field, face, "-", ts)
        return vp - vm, 0.5 * (vp + vm)
    return vp, vp


def mean_value(field: FieldCoefficients) -> float:
    """(1/|Omega|) * integral of a scalar field, by exact quadrature."""
    space = field.space
    if space.components != 1:
        raise ValueError("mean_value is defined for scalar fields")
    rule = triangle_quadrature(max(space.degree, 1))
    vals, _ = space.basis.eval(rule.points)
    coef = field.values[space.scalar_cell_dofs]  # (nc, nloc)
    cellvals = coef @ vals.T  # (nc, nq)
    integral = np.einsum("cq,q,c->", cellvals, rule.weights, space.affine_det)
    area = float(space.affine_det.sum()) * 0.5
    return float(integral) / area


def embedding_matrix(trial: FunctionSpace, test: FunctionSpace):
    """Sparse inclusion of a trial space into a broken test space on the
    same mesh (degree elevation cell by cell)."""
    if trial.mesh is not test.mesh:
        raise ValueError("embedding requires matching meshes")
    if trial.components != test.components:
        raise ValueError("component count mismatch")
    if trial.degree > test.degree:
        raise ValueError("trial degree exceeds test degree")
    if test.continuity != BROKEN:
        raise ValueError("embedding target must be a broken space")
    vals, _ = trial.basis.eval(test.basis.nodes)  # (nloc_test, nloc_trial)
    nc = trial.mesh.n_cells
    comp = trial.components
    rows, cols, data = [], [], []
    for c in range(comp):
        trial_dofs = trial.cell_dofs[:, c::comp] if comp == 2 else trial.cell_dofs
        test_dofs = test.cell_dofs[:, c::comp] if comp == 2 else test.cell_dofs
        r = np.repeat(test_dofs, trial_dofs.shape[1], axis=1)
        col = np.tile(trial_dofs, (1, test_dofs.shape[1]))
        rows.append(r.ravel())
        cols.append(col.ravel())
        data.append(np.tile(vals.ravel(), nc))
    # broken test dofs live in a single cell, so no (row, col) duplicates
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(test.ndofs, trial.ndofs)).tocsr()
    mat.eliminate_zeros()
    return mat


def embed(field: FieldCoefficients, test: FunctionSpace) -> FieldCoefficients:
    """Represent a trial-space field exactly in a broken test space."""
    E = embedding_matrix(field.space, test)
    return FieldCoefficients(test, E @ field.values)
