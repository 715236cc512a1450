"""Error indicators, Dörfler marking, and the adaptive solve loop.

The residual representatives returned by the saddle solver carry the
error estimate; their triple norm is localized to per-cell indicators
E_K by splitting each interior face's jump contribution evenly between
its two neighbor cells, preserving sum(E_K^2) = |||(e_u, e_p)|||^2
exactly.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .bench import BenchmarkCase, ConvergenceRecord, error_norms
from .fespace import (BROKEN, CONTINUOUS, FieldCoefficients, FunctionSpace,
                      evaluate_at_cells, face_ref_points)
from .mesh import bisect
from .shape import edge_quadrature, triangle_quadrature
from .solver import (SolverError, build_block_system, solve_direct,
                     solve_fixed_point, triple_norm_residual)


@dataclass(frozen=True)
class IndicatorField:
    """Per-cell error indicators E_K and their global total."""
    values_sq: np.ndarray     # E_K^2, one entry per cell
    total: float              # |||(e_u, e_p)|||

    @property
    def values(self):
        return np.sqrt(self.values_sq)


def compute_indicators(solution, params) -> IndicatorField:
    """Localize the residual-representative triple norm to cells."""
    e_u, e_p = solution.e_u, solution.e_p
    space_u, space_p = e_u.space, e_p.space
    mesh = space_u.mesh
    k = space_u.degree
    nc = mesh.n_cells
    ind = np.zeros(nc)

    rule = triangle_quadrature(2 * k + 2)
    cells = np.arange(nc)
    ref = np.broadcast_to(rule.points, (nc,) + rule.points.shape)
    wdet = rule.weights[None, :] * space_u.affine_det[:, None]
    _, grads = evaluate_at_cells(e_u, cells, ref)
    pv, _ = evaluate_at_cells(e_p, cells, ref)
    ind += np.einsum("cq,cqid->c", wdet, grads ** 2)
    ind += np.einsum("cq,cq->c", wdet, pv[..., 0] ** 2)

    faces = mesh.faces
    erule = edge_quadrature(2 * k + 1)
    ts, wts = erule.points, erule.weights
    all_ids = np.arange(faces.lengths.size)
    int_mask = faces.interior
    int_ids = np.where(int_mask)[0]

    def jump(fld):
        cp, refp, _ = face_ref_points(fld.space, all_ids, "+", ts)
        vp, _ = evaluate_at_cells(fld, cp, refp)
        if len(int_ids):
            cm, refm, _ = face_ref_points(fld.space, int_ids, "-", ts)
            vm, _ = evaluate_at_cells(fld, cm, refm)
            vp[int_ids] -= vm
        return vp

    wh = wts[None, :] * faces.lengths[:, None]
    ju = jump(e_u)
    pen = params.nu * params.eta / faces.lengths ** params.beta
    face_u = pen * np.einsum("fq,fqd->f", wh, ju ** 2)
    jp = jump(e_p)[..., 0]
    face_p = np.where(int_mask,
                      faces.lengths * np.einsum("fq,fq->f", wh, jp ** 2), 0.0)
    contrib = face_u + face_p
    share = np.where(int_mask, 0.5, 1.0) * contrib
    np.add.at(ind, faces.cell_plus, share)
    valid = int_mask
    np.add.at(ind, faces.cell_minus[valid], share[valid])

    ind = np.maximum(ind, 0.0)
    return IndicatorField(values_sq=ind, total=float(np.sqrt(ind.sum())))


def dorfler_mark(indicators: IndicatorField, theta: float,
                 mode: str = "squares") -> np.ndarray:
    """Bulk-chasing cell selection.

    In "squares" mode the minimal prefix of cells (by descending E_K,
    ties broken by cell index) with sum(E_K^2) >= theta^2 * total^2 is
    marked; "linear" mode cumulates E_K against theta * sum(E_K).
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("dorfler fraction must lie in (0, 1]")
    if mode not in ("squares", "linear"):
        raise ValueError(f"unknown marking mode {mode!r}")
    vals_sq = indicators.values_sq
    total_sq = vals_sq.sum()
    if total_sq == 0.0:
        return np.array([], dtype=np.int64)
    order = np.lexsort((np.arange(len(vals_sq)), -vals_sq))
    if mode == "squares":
        csum = np.cumsum(vals_sq[order])
        target = theta ** 2 * total_sq
    else:
        vals = np.sqrt(vals_sq)
        csum = np.cumsum(vals[order])
        target = theta * vals.sum()
    count = int(np.searchsorted(csum, target * (1.0 - 1e-12)) + 1)
    count = min(count, len(order))
    marked = np.sort(order[:count])
    return marked[vals_sq[marked] > 0.0]


def transfer_field(old_field: FieldCoefficients, new_space: FunctionSpace,
                   parent_cells: np.ndarray) -> FieldCoefficients:
    """Interpolate a field onto a refined mesh (nodal, via parent cells)."""
    old_space = old_field.space
    nodes = new_space.basis.nodes
    nc = new_space.mesh.n_cells
    pts = new_space.physical_points(nodes)         # (nc, nloc, 2)
    parents = np.asarray(parent_cells, dtype=np.int64)
    d = pts - old_space.affine_origin[parents][:, None, :]
    ref = np.einsum("cij,cqj->cqi", old_space.affine_inv[parents], d)
    vals, _ = evaluate_at_cells(old_field, parents, ref)  # (nc, nloc, comp)
    out = np.zeros(new_space.ndofs)
    for comp in range(new_space.components):
        dofs = (new_space.cell_dofs[:, comp::new_space.components]
                if new_space.components == 2 else new_space.cell_dofs)
        out[dofs] = vals[:, :, comp]
    return FieldCoefficients(new_space, out)


@dataclass
class AdaptiveLevel:
    level: int
    mesh: object
    solution: object
    indicators: Optional[IndicatorField]
    marked: Optional[np.ndarray]
    record: ConvergenceRecord
    failure: Optional[str] = None


def _make_spaces(mesh, degree_u, degree_p, trial_broken):
    test_v = FunctionSpace(mesh, degree_u, BROKEN, 2)
    test_q = FunctionSpace(mesh, degree_u, BROKEN, 1)
    if trial_broken:
        trial_u, trial_p = test_v, test_q
    else:
        trial_u = FunctionSpace(mesh, degree_u, CONTINUOUS, 2)
        p_cont = CONTINUOUS if degree_p >= 1 else BROKEN
        trial_p = FunctionSpace(mesh, degree_p, p_cont, 1)
    return trial_u, trial_p, test_v, test_q


def adaptive_loop(case: BenchmarkCase, params, *, degree_u, degree_p=None,
                  trial_broken=False, levels=5, theta=None, uniform=False,
                  solver="direct", tol=1e-9, initial_mesh=None,
                  mark_mode="squares") -> List[AdaptiveLevel]:
    """Solve-estimate-mark-refine, returning one record per level.

    With uniform=True the marking step is bypassed and every cell is
    bisected.  The previous level's trial solution is interpolated onto
    the refined mesh and used as the iterative solver's initial guess.
    """
    if degree_p is None:
        degree_p = degree_u
    if theta is None:
        theta = case.default_theta
    mesh = initial_mesh if initial_mesh is not None else case.initial_mesh(4)
    results: List[AdaptiveLevel] = []
    prev = None  # (solution, trial_u, trial_p)
    for level in range(levels):
        trial_u, trial_p, test_v, test_q = _make_spaces(
            mesh, degree_u, degree_p, trial_broken)
        system = build_block_system(mesh, trial_u, trial_p, test_v, test_q,
                                    params, case)
        x0 = None
        if prev is not None and solver == "fixed_point":
            old_sol, pc = prev
            u0 = transfer_field(old_sol.u, trial_u, pc)
            p0 = transfer_field(old_sol.p, trial_p, pc)
            x0 = np.concatenate([u0.values, p0.values])
        try:
            if solver == "direct":
                solution = solve_direct(system)
            else:
                solution = solve_fixed_point(system, tol=tol, x0=x0)
                if not solution.diagnostics.get("converged", False):
                    raise SolverError(
                        "fixed-point iteration stalled at residual "
                        f"{solution.diagnostics['residual']:.3e}")
        except SolverError as exc:
            record = _base_record(level, system, mesh)
            results.append(AdaptiveLevel(level, mesh, None, None, None,
                                         record, failure=str(exc)))
            break
        indicators = compute_indicators(solution, params)
        record = _base_record(level, system, mesh)
        record.est_triple = indicators.total
        record.solver_iters = solution.diagnostics.get("cg_iters")
        if case.has_exact:
            err = error_norms(solution, case, params)
            record.err_u_l2 = err.u_l2
            record.err_p_l2 = err.p_l2
            record.err_triple = err.triple
        if uniform:
            marked = np.arange(mesh.n_cells)
        else:
            marked = dorfler_mark(indicators, theta, mode=mark_mode)
        record.marked_cells = int(len(marked))
        results.append(AdaptiveLevel(level, mesh, solution, indicators,
                                     marked, record))
        if level + 1 < levels:
            new_mesh = bisect(mesh, marked)
            prev = (solution, new_mesh.parent_cells)
            mesh = new_mesh
    return results


def _base_record(level, system, mesh):
    nV, nQ, nU, nP = system.dims
    return ConvergenceRecord(
        level=level, ndof_u=nU, ndof_p=nP, ndof_test=nV + nQ,
        ndof_total=nU + nP + nV + nQ + 1,
        h_max=float(mesh.cell_diameters().max()))
