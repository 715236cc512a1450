"""Assembly of the DG bilinear forms, Gram matrices of the DG norms, and
the load vector, as sparse matrices over (test x trial) space pairs.

All face integrals use the fixed face orientation of the mesh skeleton;
assembled values are invariant under flipping any face's +/- assignment.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import BROKEN, FunctionSpace, embedding_matrix, face_ref_points
from .shape import edge_quadrature, triangle_quadrature


@dataclass(frozen=True)
class FormParameters:
    eta: float
    beta: float = 1.0
    nu: float = 1.0

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError("penalty eta must be positive")
        if self.beta < 1.0:
            raise ValueError("super-penalization exponent beta must be >= 1")


def default_eta(degree: int) -> float:
    """Standard SIPG penalty sizing, 10*(k+1)^2."""
    return 10.0 * (degree + 1) ** 2


@dataclass
class SparseForm:
    rows: FunctionSpace
    cols: FunctionSpace
    mat: sp.csr_matrix


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.data = [], [], []

    def add(self, blocks, row_dofs, col_dofs):
        """blocks (n,a,b), row_dofs (n,a), col_dofs (n,b)."""
        n, a, b = blocks.shape
        self.rows.append(np.repeat(row_dofs, b, axis=1).ravel())
        self.cols.append(np.tile(col_dofs, (1, a)).ravel())
        self.data.append(blocks.reshape(n, a * b).ravel())

    def matrix(self, shape):
        mat = sp.coo_matrix(
            (np.concatenate(self.data),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=shape).tocsr()
        mat.sum_duplicates()
        return mat


def _check_meshes(*spaces):
    mesh = spaces[0].mesh
    for s in spaces[1:]:
        if s.mesh is not mesh:
            raise ValueError("spaces live on different meshes")


def _require_broken(space, what):
    if space.continuity != BROKEN:
        raise ValueError(f"{what} must be a broken space")


class _VolumeData:
    """Basis values/physical gradients at volume quadrature points."""

    def __init__(self, space, exactness):
        self.rule = triangle_quadrature(exactness)
        vals, grads = space.basis.eval(self.rule.points)
        self.vals = vals                      # (nq, nloc)
        # (nc, nq, nloc, 2)
        self.phys_grads = np.einsum("qld,cde->cqle", grads, space.affine_inv)
        self.wdet = self.rule.weights[None, :] * space.affine_det[:, None]


class _FaceData:
    """Traces of all local basis functions on every face, both sides."""

    def __init__(self, space, exactness):
        self.rule = edge_quadrature(exactness)
        faces = space.mesh.faces
        self.faces = faces
        ids = np.arange(faces.n_faces)
        self.int_ids = ids[faces.interior]
        nloc = space.basis.ndofs
        nq = len(self.rule.points)

        def side_data(face_ids, side):
            cells, ref, pts = face_ref_points(space, face_ids, side, self.rule.points)
            vals, grads = space.basis.eval(ref.reshape(-1, 2))
            vals = vals.reshape(len(face_ids), nq, nloc)
            grads = grads.reshape(len(face_ids), nq, nloc, 2)
            phys = np.einsum("fqld,fde->fqle", grads, space.affine_inv[cells])
            dn = np.einsum("fqld,fd->fql", phys, faces.normals[face_ids])
            return cells, vals, dn, pts

        self.cells_p, self.vals_p, self.dn_p, self.points = side_data(ids, "+")
        self.cells_m, self.vals_m, self.dn_m, _ = side_data(self.int_ids, "-")
        self.wh = self.rule.weights[None, :] * faces.lengths[:, None]  # (nf, nq)


def _scalar_dofs(space, cells):
    return space.scalar_cell_dofs[cells]


def _component_dofs(space, cells, comp):
    if space.components == 1:
        return space.scalar_cell_dofs[cells]
    return 2 * space.scalar_cell_dofs[cells] + comp


def _jump_sign(side):
    return 1.0 if side == "p" else -1.0


def _face_term(tri, fd, space_row, space_col, weight, kind_row, kind_col,
               interior_only=False, row_grad=False, col_grad=False,
               components=None):
    """Accumulate sum_F w_F int_F R(row) * C(col), where R and C are jump
    or average operators applied to traces (or normal derivatives when
    *_grad); on boundary faces jump = average = trace."""
    faces = fd.faces
    all_ids = np.arange(faces.n_faces)
    int_pos = {int(f): i for i, f in enumerate(fd.int_ids)}

    def traces(side, face_ids, grad):
        if side == "p":
            arr = fd.dn_p if grad else fd.vals_p
            return arr[face_ids], fd.cells_p[face_ids]
        idx = np.array([int_pos[int(f)] for f in face_ids], dtype=np.int64)
        arr = fd.dn_m if grad else fd.vals_m
        return arr[idx], fd.cells_m[idx]

    comps = components if components is not None else [(0, 0)]
    for side_r in ("p", "m"):
        for side_c in ("p", "m"):
            if side_r == "p" and side_c == "p":
                ids = fd.int_ids if interior_only else all_ids
            else:
                ids = fd.int_ids
            if len(ids) == 0:
                continue
            tr_r, cells_r = traces(side_r, ids, row_grad)
            tr_c, cells_c = traces(side_c, ids, col_grad)
            bdry = ~faces.interior[ids]

            def factor(kind, side):
                f = np.full(len(ids), 0.5 if kind == "avg" else _jump_sign(side))
                f[bdry] = 1.0
                return f

            fac = factor(kind_row, side_r) * factor(kind_col, side_c)
            wq = fd.wh[ids] * weight[ids][:, None]
            blocks = np.einsum("fq,f,fqi,fqj->fij", wq, fac, tr_r, tr_c)
            for comp_r, comp_c in comps:
                tri.add(blocks,
                        _component_dofs(space_row, cells_r, comp_r),
                        _component_dofs(space_col, cells_c, comp_c))


def _maybe_embed(mat, test, trial):
    if trial is test:
        return mat
    return (mat @ embedding_matrix(trial, test)).tocsr()


def _maybe_embed_rows(mat, test, trial):
    if trial is test:
        return mat
    return (embedding_matrix(trial, test).T @ mat).tocsr()


def _volume_exactness(space):
    return max(2 * space.degree + 2, 1)


def _edge_exactness(space):
    return max(2 * space.degree + 1, 1)


def assemble_a(test: FunctionSpace, trial: FunctionSpace,
               params: FormParameters) -> SparseForm:
    """Super-penalized SIPG form for the viscous term: entry (i, j) is
    a_h(trial_j, test_i)."""
    _check_meshes(test, trial)
    _require_broken(test, "SIPG test space")
    if test.components != 2:
        raise ValueError("velocity form needs 2-vector spaces")
    vd = _VolumeData(test, _volume_exactness(test))
    tri = _Triplets()
    # volume: grad v : grad w, block diagonal per component
    blocks = np.einsum("cq,cqid,cqjd->cij", vd.wdet, vd.phys_grads, vd.phys_grads)
    cells = np.arange(test.mesh.n_cells)
    for comp in range(2):
        dofs = _component_dofs(test, cells, comp)
        tri.add(blocks, dofs, dofs)
    fd = _FaceData(test, _edge_exactness(test))
    faces = test.mesh.faces
    pen = params.eta / faces.lengths ** params.beta
    comps = [(0, 0), (1, 1)]
    _face_term(tri, fd, test, test, pen, "jump", "jump", components=comps)
    mone = -np.ones(faces.n_faces)
    _face_term(tri, fd, test, test, mone, "jump", "avg", col_grad=True,
               components=comps)
    _face_term(tri, fd, test, test, mone, "avg", "jump", row_grad=True,
               components=comps)
    mat = tri.matrix((test.ndofs, test.ndofs)) * params.nu
    return SparseForm(test, trial, _maybe_embed(mat, test, trial))


def assemble_gram_velocity(test: FunctionSpace, params: FormParameters) -> SparseForm:
    """Inner product inducing the broken H1 + jump-penalty velocity norm."""
    _require_broken(test, "velocity test space")
    if test.components != 2:
        raise ValueError("velocity Gram needs a 2-vector space")
    vd = _VolumeData(test, _volume_exactness(test))
    tri = _Triplets()
    blocks = np.einsum("cq,cqid,cqjd->cij", vd.wdet, vd.phys_grads, vd.phys_grads)
    cells = np.arange(test.mesh.n_cells)
    for comp in range(2):
        dofs = _component_dofs(test, cells, comp)
        tri.add(blocks, dofs, dofs)
    fd = _FaceData(test, _edge_exactness(test))
    pen = params.eta / test.mesh.faces.lengths ** params.beta
    _face_term(tri, fd, test, test, pen, "jump", "jump",
               components=[(0, 0), (1, 1)])
    return SparseForm(test, test, tri.matrix((test.ndofs, test.ndofs)))


def assemble_b(test: FunctionSpace, trial: FunctionSpace) -> SparseForm:
    """Pressure-velocity coupling b_h; entry (i, j) = b_h(v_i, q_j) with
    v over the broken velocity test space, q over the pressure trial."""
    _check_meshes(test, trial)
    _require_broken(test, "velocity test space")
    qspace = _broken_scalar_peer(test)
    ex = max(_volume_exactness(test), _volume_exactness(qspace))
    vd_v = _VolumeData(test, ex)
    vd_q = _VolumeData(qspace, ex)
    tri = _Triplets()
    cells = np.arange(test.mesh.n_cells)
    qdofs = _scalar_dofs(qspace, cells)
    # -int q div(v): component d of grad v_d
    for comp in range(2):
        blocks = -np.einsum("cq,cqi,qj->cij", vd_v.wdet,
                            vd_v.phys_grads[:, :, :, comp], vd_q.vals)
        tri.add(blocks, _component_dofs(test, cells, comp), qdofs)
    eex = max(_edge_exactness(test), _edge_exactness(qspace))
    fd_v = _FaceData(test, eex)
    fd_q = _FaceData(qspace, eex)
    _cross_face_term(tri, fd_v, fd_q, test, qspace,
                     np.ones(test.mesh.faces.n_faces),
                     "jump", "avg", interior_only=False, normal_on_row=True)
    mat = tri.matrix((test.ndofs, qspace.ndofs))
    return SparseForm(test, trial, _maybe_embed(mat, qspace, trial))


def assemble_d(test: FunctionSpace, trial: FunctionSpace) -> SparseForm:
    """Velocity-pressure coupling d_h; entry (i, j) = d_h(v_j, q_i) with
    q over the broken pressure test space, v over the velocity trial."""
    _check_meshes(test, trial)
    _require_broken(test, "pressure test space")
    vspace = _broken_vector_peer(test)
    ex = max(_volume_exactness(test), _volume_exactness(vspace))
    vd_q = _VolumeData(test, ex)
    vd_v = _VolumeData(vspace, ex)
    tri = _Triplets()
    cells = np.arange(test.mesh.n_cells)
    qdofs = _scalar_dofs(test, cells)
    # int v . grad q
    for comp in range(2):
        blocks = np.einsum("cq,cqi,qj->cij", vd_q.wdet,
                           vd_q.phys_grads[:, :, :, comp], vd_v.vals)
        tri.add(blocks, qdofs, _component_dofs(vspace, cells, comp))
    eex = max(_edge_exactness(test), _edge_exactness(vspace))
    fd_q = _FaceData(test, eex)
    fd_v = _FaceData(vspace, eex)
    _cross_face_term(tri, fd_q, fd_v, test, vspace,
                     -np.ones(test.mesh.faces.n_faces),
                     "jump", "avg", interior_only=True, normal_on_col=True)
    mat = tri.matrix((test.ndofs, vspace.ndofs))
    return SparseForm(test, trial, _maybe_embed(mat, vspace, trial))


def assemble_s(test: FunctionSpace, trial: FunctionSpace) -> SparseForm:
    """Pressure-jump stabilization sum_F h_F int [q][r], interior faces."""
    _check_meshes(test, trial)
    _require_broken(test, "pressure test space")
    tri = _Triplets()
    fd = _FaceData(test, _edge_exactness(test))
    _face_term(tri, fd, test, test, test.mesh.faces.lengths, "jump", "jump",
               interior_only=True)
    mat = tri.matrix((test.ndofs, test.ndofs))
    return SparseForm(test, trial, _maybe_embed(mat, test, trial))


def assemble_mass(space: FunctionSpace) -> SparseForm:
    """Scalar or per-component L2 mass matrix."""
    vd = _VolumeData(space, _volume_exactness(space))
    tri = _Triplets()
    blocks = np.einsum("cq,qi,qj->cij", vd.wdet, vd.vals, vd.vals)
    cells = np.arange(space.mesh.n_cells)
    for comp in range(space.components):
        dofs = _component_dofs(space, cells, comp)
        tri.add(blocks, dofs, dofs)
    return SparseForm(space, space, tri.matrix((space.ndofs, space.ndofs)))


def assemble_gram_pressure(test: FunctionSpace) -> SparseForm:
    """Inner product inducing the L2 + interior-jump pressure norm."""
    _require_broken(test, "pressure test space")
    mass = assemble_mass(test).mat
    stab = assemble_s(test, test).mat
    return SparseForm(test, test, (mass + stab).tocsr())


def assemble_rhs(test: FunctionSpace, case, params: FormParameters,
                 volume_exactness=None) -> np.ndarray:
    """Load vector: body force plus weak (Nitsche-type) Dirichlet terms."""
    _require_broken(test, "velocity test space")
    ex = volume_exactness
    if ex is None:
        ex = min(2 * test.degree + 4, 11)
    vd = _VolumeData(test, ex)
    rhs = np.zeros(test.ndofs)
    pts = test.physical_points(vd.rule.points)  # (nc, nq, 2)
    fvals = np.asarray(case.f(pts[..., 0].ravel(), pts[..., 1].ravel()))
    fvals = fvals.reshape(test.mesh.n_cells, -1, 2)
    cells = np.arange(test.mesh.n_cells)
    for comp in range(2):
        contrib = np.einsum("cq,cq,qi->ci", vd.wdet, fvals[:, :, comp], vd.vals)
        np.add.at(rhs, _component_dofs(test, cells, comp), contrib)

    fd = _FaceData(test, max(_edge_exactness(test), 7))
    faces = test.mesh.faces
    bids = np.where(~faces.interior)[0]
    if len(bids) == 0:
        return rhs
    pts_b = fd.points[bids]  # (nb, nq, 2)
    u0 = np.asarray(case.u0(pts_b[..., 0].ravel(), pts_b[..., 1].ravel()))
    u0 = u0.reshape(len(bids), -1, 2)
    wq = fd.wh[bids]
    pen = params.nu * params.eta / faces.lengths[bids] ** params.beta
    cells_b = fd.cells_p[bids]
    for comp in range(2):
        dofs = _component_dofs(test, cells_b, comp)
        # penalty: (eta/h^beta) int u0 . v
        contrib = np.einsum("fq,f,fq,fqi->fi", wq, pen, u0[:, :, comp],
                            fd.vals_p[bids])
        # consistency: -int u0 . (grad v) n, per component of u0
        contrib -= params.nu * np.einsum("fq,fq,fqi->fi", wq, u0[:, :, comp],
                                         fd.dn_p[bids])
        np.add.at(rhs, dofs, contrib)
    return rhs


def mean_vector(space: FunctionSpace) -> np.ndarray:
    """Integral of every scalar basis function (mean-constraint row)."""
    if space.components != 1:
        raise ValueError("mean vector is defined for scalar spaces")
    vd = _VolumeData(space, max(space.degree, 1))
    out = np.zeros(space.ndofs)
    contrib = np.einsum("cq,qi->ci", vd.wdet, vd.vals)
    np.add.at(out, space.scalar_cell_dofs, contrib)
    return out


# -- internals ---------------------------------------------------------

def _broken_peer(space, components):
    """Broken space of the same mesh/degree with the given component
    count, cached on the mesh object."""
    cache = getattr(space.mesh, "_broken_peers", None)
    if cache is None:
        cache = {}
        object.__setattr__(space.mesh, "_broken_peers", cache)
    key = (space.degree, components)
    if key not in cache:
        cache[key] = FunctionSpace(space.mesh, space.degree, BROKEN, components)
    return cache[key]


def _broken_scalar_peer(vspace):
    return _broken_peer(vspace, 1)


def _broken_vector_peer(qspace):
    return _broken_peer(qspace, 2)


def _cross_face_term(tri, fd_row, fd_col, space_row, space_col, weight,
                     kind_row, kind_col, interior_only, normal_on_row=False,
                     normal_on_col=False):
    """Velocity-pressure face couplings.

    With normal_on_row: sum_F w int (jump/avg of row-vector . n) *
    (avg/jump of col-scalar); rows are the vector space.  With
    normal_on_col the roles of scalar/vector swap (rows scalar).
    """
    faces = fd_row.faces
    all_ids = np.arange(faces.n_faces)
    int_pos = {int(f): i for i, f in enumerate(fd_row.int_ids)}

    def traces(fd, side, ids):
        if side == "p":
            return fd.vals_p[ids], fd.cells_p[ids]
        idx = np.array([int_pos[int(f)] for f in ids], dtype=np.int64)
        return fd.vals_m[idx], fd.cells_m[idx]

    for side_r in ("p", "m"):
        for side_c in ("p", "m"):
            if side_r == "p" and side_c == "p":
                ids = fd_row.int_ids if interior_only else all_ids
            else:
                ids = fd_row.int_ids
            if len(ids) == 0:
                continue
            tr_r, cells_r = traces(fd_row, side_r, ids)
            tr_c, cells_c = traces(fd_col, side_c, ids)
            bdry = ~faces.interior[ids]

            def factor(kind, side):
                f = np.full(len(ids), 0.5 if kind == "avg" else _jump_sign(side))
                f[bdry] = 1.0
                return f

            fac = factor(kind_row, side_r) * factor(kind_col, side_c)
            wq = fd_row.wh[ids] * weight[ids][:, None]
            base = np.einsum("fq,f,fqi,fqj->fij", wq, fac, tr_r, tr_c)
            nrm = faces.normals[ids]
            if normal_on_row:
                # rows: vector components; cols: scalar
                for comp in range(2):
                    tri.add(base * nrm[:, comp, None, None],
                            _component_dofs(space_row, cells_r, comp),
                            _scalar_dofs(space_col, cells_c))
            else:
                # rows: scalar; cols: vector components
                for comp in range(2):
                    tri.add(base * nrm[:, comp, None, None],
                            _scalar_dofs(space_row, cells_r),
                            _component_dofs(space_col, cells_c, comp))
