"""Benchmark problems and error measurement.

Three configurations: a manufactured smooth solution on the unit square
(case1), a singular corner solution on a three-quarter disc with zero
body force (case2), and the lid-driven cavity with a regularized lid
profile (case3).  Exact fields, where they exist, are derived
symbolically once at construction and evaluated through compiled numpy
callables.
"""

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy

from .fespace import evaluate_at_cells, face_ref_points
from .mesh import build_circular_segment, build_structured_unit_square
from .shape import MAX_EXACTNESS, edge_quadrature, triangle_quadrature

SECTOR_ALPHA = 856399.0 / 1572864.0
SECTOR_OMEGA = 1.5 * np.pi
LID_RAMP = 1.0 / 64.0


@dataclass(frozen=True)
class BenchmarkCase:
    """One benchmark: domain factory, data, and optional exact fields.

    All field callables take flat coordinate arrays (x, y); vector
    fields return (..., 2), gradients (..., 2, 2), scalars (...,).
    """
    name: str
    initial_mesh: Callable
    f: Callable
    u0: Callable
    u_sol: Optional[Callable] = None
    grad_u_sol: Optional[Callable] = None
    p_sol: Optional[Callable] = None
    default_degree: int = 2
    default_theta: float = 0.5

    @property
    def has_exact(self):
        return self.u_sol is not None


def _zero_vector(x, y):
    return np.zeros(np.broadcast(x, y).shape + (2,))


@functools.lru_cache(maxsize=1)
def case1() -> BenchmarkCase:
    """Manufactured smooth Stokes solution on the unit square.

    The velocity has compact boundary support (both components vanish on
    all four edges), the pressure has zero mean, and the body force is
    the symbolically computed Stokes residual of the exact pair.
    """
    x, y = sympy.symbols("x y")
    q = y * y - y
    ux = 2 * sympy.exp(x) * (x - 1) ** 2 * x ** 2 * q * (2 * y - 1)
    uy = -sympy.exp(x) * (x - 1) * x * (x * (x + 3) - 2) * (y - 1) ** 2 * y ** 2
    p = (-424 + 156 * sympy.E
         + q * (-456 + sympy.exp(x) * (456 + x ** 2 * (228 - 5 * q)
                                       + 2 * x * (q - 228)
                                       + 2 * x ** 3 * (q - 36)
                                       + x ** 4 * (12 + q))))
    fx = -(ux.diff(x, 2) + ux.diff(y, 2)) + p.diff(x)
    fy = -(uy.diff(x, 2) + uy.diff(y, 2)) + p.diff(y)

    def lam(expr):
        return sympy.lambdify((x, y), expr, "numpy")

    u_fns = (lam(ux), lam(uy))
    g_fns = tuple(tuple(lam(c.diff(v)) for v in (x, y)) for c in (ux, uy))
    p_fn = lam(p)
    f_fns = (lam(fx), lam(fy))

    def u_sol(xv, yv):
        return np.stack([u_fns[0](xv, yv), u_fns[1](xv, yv)], axis=-1)

    def grad_u_sol(xv, yv):
        rows = [np.stack([g(xv, yv) for g in row], axis=-1) for row in g_fns]
        return np.stack(rows, axis=-2)

    def p_sol(xv, yv):
        return p_fn(xv, yv)

    def f(xv, yv):
        return np.stack([f_fns[0](xv, yv), f_fns[1](xv, yv)], axis=-1)

    return BenchmarkCase(name="case1",
                         initial_mesh=build_structured_unit_square,
                         f=f, u0=_zero_vector,
                         u_sol=u_sol, grad_u_sol=grad_u_sol, p_sol=p_sol)


@functools.lru_cache(maxsize=1)
def case2() -> BenchmarkCase:
    """Singular corner flow on the sector 0 < r < 1, 0 < phi < 3*pi/2.

    A homogeneous-data Stokes field whose velocity scales like r^alpha
    and pressure like r^(alpha-1) at the reentrant corner; the body
    force vanishes and all Dirichlet data come from the exact velocity
    (identically zero on the two straight edges).
    """
    alpha = sympy.Rational(856399, 1572864)
    omega = 3 * sympy.pi / 2
    r, t = sympy.symbols("r t", positive=True)
    c = sympy.cos(alpha * omega)
    psi = (sympy.sin((1 + alpha) * t) * c / (1 + alpha)
           - sympy.cos((1 + alpha) * t)
           + sympy.sin((alpha - 1) * t) * c / (1 - alpha)
           + sympy.cos((alpha - 1) * t))
    dpsi = psi.diff(t)
    ux = r ** alpha * ((1 + alpha) * sympy.sin(t) * psi + sympy.cos(t) * dpsi)
    uy = r ** alpha * (sympy.sin(t) * dpsi - (1 + alpha) * sympy.cos(t) * psi)
    p = -r ** (alpha - 1) * ((1 + alpha) ** 2 * dpsi + psi.diff(t, 3)) / (1 - alpha)

    def lam(expr):
        return sympy.lambdify((r, t), expr, "numpy")

    u_fns = (lam(ux), lam(uy))
    ur_fns = (lam(ux.diff(r)), lam(uy.diff(r)))
    ut_fns = (lam(ux.diff(t)), lam(uy.diff(t)))
    p_fn = lam(p)
    # angular pressure profile, for the exact sector mean
    g_fn = lam(p * r ** (1 - alpha))

    # mean of p over the sector: the radial integral of r^(alpha-1) * r
    # separates, leaving a 1D angular quadrature
    nodes, weights = np.polynomial.legendre.leggauss(64)
    tq = 0.5 * SECTOR_OMEGA * (nodes + 1.0)
    ang = 0.5 * SECTOR_OMEGA * weights @ g_fn(np.ones_like(tq), tq)
    area = 0.5 * SECTOR_OMEGA
    p_mean = float(ang) / (SECTOR_ALPHA + 1.0) / area

    def polar(xv, yv):
        xv = np.asarray(xv, dtype=float)
        yv = np.asarray(yv, dtype=float)
        rv = np.hypot(xv, yv)
        tv = np.arctan2(yv, xv)
        tv = np.where(tv < 0.0, tv + 2.0 * np.pi, tv)
        return rv, tv

    def u_sol(xv, yv):
        rv, tv = polar(xv, yv)
        safe = np.where(rv > 0.0, rv, 1.0)
        out = np.stack([u_fns[0](safe, tv), u_fns[1](safe, tv)], axis=-1)
        return np.where(rv[..., None] > 0.0, out, 0.0)

    def grad_u_sol(xv, yv):
        rv, tv = polar(xv, yv)
        if np.any(rv == 0.0):
            raise ValueError("exact velocity gradient is singular at r=0")
        ct, st = np.cos(tv), np.sin(tv)
        rows = []
        for dr, dt in zip(ur_fns, ut_fns):
            fr, ft = dr(rv, tv), dt(rv, tv) / rv
            rows.append(np.stack([ct * fr - st * ft, st * fr + ct * ft],
                                 axis=-1))
        return np.stack(rows, axis=-2)

    def p_sol(xv, yv):
        rv, tv = polar(xv, yv)
        if np.any(rv == 0.0):
            raise ValueError("exact pressure is singular at r=0")
        return p_fn(rv, tv) - p_mean

    return BenchmarkCase(name="case2",
                         initial_mesh=build_circular_segment,
                         f=_zero_vector, u0=u_sol,
                         u_sol=u_sol, grad_u_sol=grad_u_sol, p_sol=p_sol,
                         default_degree=1)


@functools.lru_cache(maxsize=1)
def case3() -> BenchmarkCase:
    """Lid-driven cavity on the unit square: no-slip walls and a lid
    velocity ramping linearly over width 1/64 at each top corner."""

    def u0(xv, yv):
        xv = np.asarray(xv, dtype=float)
        yv = np.asarray(yv, dtype=float)
        lid = np.isclose(yv, 1.0)
        profile = np.minimum(xv, 1.0 - xv) / LID_RAMP
        horizontal = np.where(lid, np.clip(profile, 0.0, 1.0), 0.0)
        return np.stack([horizontal, np.zeros_like(horizontal)], axis=-1)

    return BenchmarkCase(name="case3",
                         initial_mesh=build_structured_unit_square,
                         f=_zero_vector, u0=u0,
                         default_degree=3, default_theta=0.25)


_CASES = {"case1": case1, "case2": case2, "case3": case3}


def get_case(name: str) -> BenchmarkCase:
    try:
        return _CASES[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark case {name!r}") from None


# -- error norms --------------------------------------------------------

@dataclass
class ErrorTriple:
    u_l2: float
    p_l2: float
    triple: float


def _volume_rule(space, margin=3):
    return triangle_quadrature(min(2 * space.degree + margin + 2,
                                   MAX_EXACTNESS))


def error_norms(solution, case: BenchmarkCase, params) -> ErrorTriple:
    """L2 and broken-norm errors of a solve against the exact fields.

    The pressure error is measured after aligning means over the
    computational domain (discrete and exact pressures are each
    zero-mean over slightly different regions when the domain boundary
    is curved).  Velocity jump terms reduce to boundary faces for
    conforming trials and use u_h - u0 there.
    """
    if not case.has_exact:
        raise ValueError(f"{case.name} has no exact solution")
    u_h, p_h = solution.u, solution.p
    mesh = u_h.space.mesh
    rule = _volume_rule(u_h.space)
    cells = np.arange(mesh.n_cells)
    ref = np.broadcast_to(rule.points, (mesh.n_cells,) + rule.points.shape)
    wdet = rule.weights[None, :] * u_h.space.affine_det[:, None]
    pts = u_h.space.physical_points(rule.points)
    xf, yf = pts[..., 0].ravel(), pts[..., 1].ravel()

    u_ex = np.asarray(case.u_sol(xf, yf)).reshape(mesh.n_cells, -1, 2)
    gu_ex = np.asarray(case.grad_u_sol(xf, yf)).reshape(mesh.n_cells, -1, 2, 2)
    p_ex = np.asarray(case.p_sol(xf, yf)).reshape(mesh.n_cells, -1)
    uh, guh = evaluate_at_cells(u_h, cells, ref)
    ph, _ = evaluate_at_cells(p_h, cells, ref)
    ph = ph[..., 0]

    du = u_ex - uh
    dg = gu_ex - guh
    dp = p_ex - ph
    area = float(wdet.sum())
    shift = float((wdet * dp).sum()) / area
    dp = dp - shift

    err_u_sq = float(np.einsum("cq,cqi->", wdet, du ** 2))
    err_gu_sq = float(np.einsum("cq,cqid->", wdet, dg ** 2))
    err_p_sq = float(np.einsum("cq,cq->", wdet, dp ** 2))

    jump_u_sq, jump_p_sq = _error_jump_terms(solution, case, params)
    triple = np.sqrt(err_gu_sq + jump_u_sq + err_p_sq + jump_p_sq)
    return ErrorTriple(np.sqrt(err_u_sq), np.sqrt(err_p_sq), float(triple))


def _face_values(fld, face_ids, side, ts):
    cells, ref, pts = face_ref_points(fld.space, face_ids, side, ts)
    vals, _ = evaluate_at_cells(fld, cells, ref)
    return vals, pts


def _error_jump_terms(solution, case, params):
    """Squared jump contributions of the triple-norm error.

    Exact fields are single-valued across interior faces, so interior
    jumps of the error equal the (negated) discrete jumps; boundary
    velocity jumps compare the discrete trace with the Dirichlet data.
    """
    u_h, p_h = solution.u, solution.p
    mesh = u_h.space.mesh
    faces = mesh.faces
    rule = edge_quadrature(min(2 * u_h.space.degree + 5, MAX_EXACTNESS))
    ts, wts = rule.points, rule.weights
    all_ids = np.arange(faces.lengths.size)
    int_ids = np.where(faces.interior)[0]
    bnd_ids = np.where(~faces.interior)[0]

    up, _ = _face_values(u_h, all_ids, "+", ts)
    jump_u = np.zeros_like(up)
    if len(int_ids):
        um, _ = _face_values(u_h, int_ids, "-", ts)
        jump_u[int_ids] = up[int_ids] - um
    if len(bnd_ids):
        _, _, pts_b = face_ref_points(u_h.space, bnd_ids, "+", ts)
        u0 = np.asarray(case.u0(pts_b[..., 0].ravel(), pts_b[..., 1].ravel()))
        jump_u[bnd_ids] = up[bnd_ids] - u0.reshape(len(bnd_ids), -1, 2)
    pen = params.nu * params.eta / faces.lengths ** params.beta
    wh = wts[None, :] * faces.lengths[:, None]
    jump_u_sq = float(np.einsum("fq,f,fqd->", wh, pen, jump_u ** 2))

    jump_p_sq = 0.0
    if len(int_ids):
        pp, _ = _face_values(p_h, int_ids, "+", ts)
        pm, _ = _face_values(p_h, int_ids, "-", ts)
        jp = (pp - pm)[..., 0]
        jump_p_sq = float(np.einsum("fq,f->", wh[int_ids] * jp ** 2,
                                    faces.lengths[int_ids]))
    return jump_u_sq, jump_p_sq


def discrete_triple_norm(system, du_values, dp_values) -> float:
    """Triple norm of a discrete pair given by trial coefficients,
    computed through the test-space Gram matrices."""
    from .fespace import embedding_matrix
    E_u = embedding_matrix(system.trial_u, system.test_v)
    E_p = embedding_matrix(system.trial_p, system.test_q)
    a = E_u @ du_values
    b = E_p @ dp_values
    return float(np.sqrt(max(a @ (system.G_u @ a) + b @ (system.G_p @ b), 0.0)))


# -- convergence records ------------------------------------------------

@dataclass
class ConvergenceRecord:
    level: int
    ndof_u: int
    ndof_p: int
    ndof_test: int
    ndof_total: int
    h_max: float
    err_u_l2: Optional[float] = None
    err_p_l2: Optional[float] = None
    err_triple: Optional[float] = None
    est_triple: Optional[float] = None
    eoc_u: Optional[float] = None
    eoc_p: Optional[float] = None
    eoc_triple: Optional[float] = None
    marked_cells: Optional[int] = None
    solver_iters: Optional[int] = None


def compute_eoc(records, adaptive=False):
    """Fill the per-column EOC fields of a record sequence in place.

    Uniform runs rate against h_max; adaptive runs against
    ndof_total^(-1/2).
    """
    for prev, cur in zip(records, records[1:]):
        if adaptive:
            ratio = np.sqrt(prev.ndof_total / cur.ndof_total)
        else:
            ratio = cur.h_max / prev.h_max
        if ratio <= 0 or ratio == 1.0:
            continue
        for name in ("u", "p", "triple"):
            e0 = getattr(prev, f"err_{name}" if name == "triple"
                         else f"err_{name}_l2")
            e1 = getattr(cur, f"err_{name}" if name == "triple"
                         else f"err_{name}_l2")
            if e0 and e1 and e0 > 0 and e1 > 0:
                setattr(cur, f"eoc_{name}",
                        float(np.log(e0 / e1) / np.log(1.0 / ratio)))
    return records
