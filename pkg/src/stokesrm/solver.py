"""The 4-field saddle-point system of the residual minimization and its
solvers: a sparse direct factorization (baseline oracle) and the Schur
fixed-point iteration with an inner preconditioned CG.

Unknown layout: [e_u, e_p, u, p, lambda] with a single Lagrange
multiplier enforcing the zero-mean pressure constraint on the trial
pressure.  The second residual carries the pressure-jump stabilization
of the DG scheme, so a trial space equal to the test space collapses to
the plain DG solution with vanishing residual representatives.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (FormParameters, assemble_a, assemble_b, assemble_d,
                       assemble_gram_pressure, assemble_gram_velocity,
                       assemble_mass, assemble_rhs, assemble_s, mean_vector)
from .fespace import BROKEN, FieldCoefficients, FunctionSpace, embedding_matrix


class SolverError(Exception):
    pass


@dataclass
class BlockSystem:
    test_v: FunctionSpace
    test_q: FunctionSpace
    trial_u: FunctionSpace
    trial_p: FunctionSpace
    params: FormParameters
    G_u: sp.csr_matrix
    G_p: sp.csr_matrix
    A: sp.csr_matrix          # (nV, nU)  a_h(z_j, v_i)
    B: sp.csr_matrix          # (nV, nP)  b_h(v_i, r_j)
    D: sp.csr_matrix          # (nQ, nU)  d_h(z_j, q_i)
    S: sp.csr_matrix          # (nQ, nP)  s_h(q_i, r_j), stabilization coupling
    m: np.ndarray             # (nP,) integral of each trial pressure basis fn
    L: np.ndarray             # (nV,) load vector
    matrix: sp.csr_matrix = field(default=None, repr=False)

    @property
    def dims(self):
        return (self.test_v.ndofs, self.test_q.ndofs,
                self.trial_u.ndofs, self.trial_p.ndofs)

    @property
    def rhs(self):
        nV, nQ, nU, nP = self.dims
        out = np.zeros(nV + nQ + nU + nP + 1)
        out[:nV] = self.L
        return out

    def assemble_global(self):
        """Symmetric global sparse matrix with the mean-constraint row."""
        if self.matrix is not None:
            return self.matrix
        nV, nQ, nU, nP = self.dims
        mcol = sp.csr_matrix(self.m.reshape(-1, 1))
        Z = lambda r, c: sp.csr_matrix((r, c))
        M = sp.bmat([
            [self.G_u, None,     self.A,      self.B,       None],
            [None,     self.G_p, self.D,      -self.S,      None],
            [self.A.T, self.D.T, None,        None,         None],
            [self.B.T, -self.S.T, None,       None,         mcol],
            [None,     None,     Z(1, nU),    mcol.T,       None],
        ], format="csr")
        self.matrix = M
        return M


@dataclass
class SaddleSolution:
    e_u: FieldCoefficients
    e_p: FieldCoefficients
    u: FieldCoefficients
    p: FieldCoefficients
    lam: float
    diagnostics: dict

    def vector(self):
        return np.concatenate([self.e_u.values, self.e_p.values,
                               self.u.values, self.p.values, [self.lam]])


def build_block_system(mesh, trial_u, trial_p, test_v, test_q, params, case,
                       rhs=None) -> BlockSystem:
    """Assemble all blocks of the mixed system on one mesh."""
    for space in (trial_u, trial_p, test_v, test_q):
        if space.mesh is not mesh:
            raise ValueError("all spaces must share the mesh")
    if test_v.continuity != BROKEN or test_q.continuity != BROKEN:
        raise ValueError("test spaces must be broken")
    G_u = assemble_gram_velocity(test_v, params).mat
    G_p = assemble_gram_pressure(test_q).mat
    A = assemble_a(test_v, trial_u, params).mat
    B = assemble_b(test_v, trial_p).mat
    D = assemble_d(test_q, trial_u).mat
    S = assemble_s(test_q, trial_p).mat
    m = mean_vector(trial_p)
    L = rhs if rhs is not None else assemble_rhs(test_v, case, params)
    return BlockSystem(test_v, test_q, trial_u, trial_p, params,
                       G_u, G_p, A, B, D, S, m, L)


def _solution_from_vector(system, x, diagnostics):
    nV, nQ, nU, nP = system.dims
    return SaddleSolution(
        e_u=FieldCoefficients(system.test_v, x[:nV]),
        e_p=FieldCoefficients(system.test_q, x[nV:nV + nQ]),
        u=FieldCoefficients(system.trial_u, x[nV + nQ:nV + nQ + nU]),
        p=FieldCoefficients(system.trial_p, x[nV + nQ + nU:nV + nQ + nU + nP]),
        lam=float(x[-1]),
        diagnostics=diagnostics)


def solve_direct(system: BlockSystem) -> SaddleSolution:
    """Sparse LU factorization of the full symmetric indefinite system."""
    M = system.assemble_global()
    rhs = system.rhs
    try:
        lu = spla.splu(M.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    denom = np.linalg.norm(rhs)
    resid = np.linalg.norm(M @ x - rhs) / (denom if denom > 0 else 1.0)
    if not np.isfinite(x).all() or resid > 1e-8:
        raise SolverError(f"direct solve residual too large: {resid:.3e} "
                          "(penalty too small?)")
    return _solution_from_vector(system, x, {"method": "direct",
                                             "residual": float(resid)})


class _GramFactor:
    """Block-diagonal SPD factorization of G = diag(G_u, G_p)."""

    def __init__(self, system):
        self.nV = system.test_v.ndofs
        self.lu_u = spla.splu(system.G_u.tocsc())
        self.lu_p = spla.splu(system.G_p.tocsc())

    def solve(self, r):
        return np.concatenate([self.lu_u.solve(r[:self.nV]),
                               self.lu_p.solve(r[self.nV:])])


def _schur_preconditioner(system):
    """Block preconditioner diag(K, diag(M_p)) for the trial Schur block.

    K is the restriction of the velocity test Gram to the conforming
    trial space (stiffness plus boundary jump penalty; the bare
    stiffness is singular under purely weak Dirichlet data).
    """
    E_u = embedding_matrix(system.trial_u, system.test_v)
    K = (E_u.T @ system.G_u @ E_u).tocsc()
    lu_k = spla.splu(K)
    mp_diag = assemble_mass(system.trial_p).mat.diagonal()
    nU = system.trial_u.ndofs

    def apply(r):
        return np.concatenate([lu_k.solve(r[:nU]), r[nU:] / mp_diag])

    return apply


def solve_fixed_point(system: BlockSystem, tol: float = 1e-9,
                      max_iter: int = 200, cg_tol: float = 1e-10,
                      cg_max_iter: int = 20000, x0=None) -> SaddleSolution:
    """Schur-complement fixed-point iteration.

    The Gram preconditioner F is the exact sparse factorization of G, so
    the splitting remainder vanishes and each outer pass is a pure Schur
    solve; the inner solver is preconditioned CG on the (consistent,
    positive semidefinite) Schur complement, with the constant-pressure
    kernel projected out and the zero-mean constraint applied afterward.
    """
    nV, nQ, nU, nP = system.dims
    G = _GramFactor(system)
    N = sp.bmat([[system.A, system.B], [system.D, -system.S]], format="csr")
    L = np.concatenate([system.L, np.zeros(nQ)])

    # constant-pressure kernel direction in trial coefficients
    z0 = np.zeros(nU + nP)
    z0[nU:] = 1.0
    z0 /= np.linalg.norm(z0)

    def project(v):
        return v - (z0 @ v) * z0

    def schur_apply(t):
        return project(N.T @ G.solve(N @ project(t)))

    precond = _schur_preconditioner(system)
    S_op = spla.LinearOperator((nU + nP, nU + nP), matvec=schur_apply)
    M_op = spla.LinearOperator((nU + nP, nU + nP),
                               matvec=lambda r: project(precond(project(r))))

    M_global = system.assemble_global()
    rhs_global = system.rhs
    denom = np.linalg.norm(rhs_global)
    if denom == 0.0:
        x = np.zeros(nV + nQ + nU + nP + 1)
        return _solution_from_vector(system, x, {
            "method": "fixed_point", "outer_iters": 1, "cg_iters": 0,
            "residual": 0.0, "converged": True})

    g = project(N.T @ G.solve(L))
    cg_iters = 0
    t = project(np.asarray(x0, dtype=float)) if x0 is not None else None
    history = []
    converged = False
    outer = 0
    last_resid = np.inf
    while outer < max_iter:
        outer += 1
        counter = [0]

        def cb(_):
            counter[0] += 1

        t, info = spla.cg(S_op, g, x0=t, rtol=cg_tol, atol=0.0,
                          maxiter=cg_max_iter, M=M_op, callback=cb)
        cg_iters += counter[0]
        t = project(t)
        e = G.solve(L - N @ t)
        # restore the exact zero-mean pressure
        p = t[nU:]
        shift = (system.m @ p) / system.m.sum()
        p = p - shift
        x = np.concatenate([e, t[:nU], p, [0.0]])
        resid = np.linalg.norm(M_global @ x - rhs_global) / denom
        history.append(resid)
        if resid <= tol:
            converged = True
            break
        if info != 0 or resid >= 0.999 * last_resid:
            break  # exact splitting: repeating the pass cannot improve
        last_resid = resid
    diagnostics = {"method": "fixed_point", "outer_iters": outer,
                   "cg_iters": cg_iters, "residual": float(history[-1]),
                   "history": history, "converged": converged}
    return _solution_from_vector(system, x, diagnostics)


def solve_dg(mesh, degree, params, case, rhs=None):
    """Direct solve of the plain equal-order DG Stokes system (oracle).

    Returns broken (u, p) fields with zero-mean pressure.
    """
    V = FunctionSpace(mesh, degree, BROKEN, 2)
    Q = FunctionSpace(mesh, degree, BROKEN, 1)
    A = assemble_a(V, V, params).mat
    B = assemble_b(V, Q).mat
    S = assemble_s(Q, Q).mat
    m = mean_vector(Q)
    L = rhs if rhs is not None else assemble_rhs(V, case, params)
    mcol = sp.csr_matrix(m.reshape(-1, 1))
    M = sp.bmat([[A, B, None],
                 [B.T, -S, mcol],
                 [None, mcol.T, None]], format="csc")
    b = np.concatenate([L, np.zeros(Q.ndofs + 1)])
    x = spla.splu(M).solve(b)
    return (FieldCoefficients(V, x[:V.ndofs]),
            FieldCoefficients(Q, x[V.ndofs:V.ndofs + Q.ndofs]))


def galerkin_orthogonality_residual(system: BlockSystem,
                                    solution: SaddleSolution) -> float:
    """max over trial basis of |n*_h((e_u,e_p),(z,r))| / |||(e_u,e_p)|||."""
    e_u, e_p = solution.e_u.values, solution.e_p.values
    r_u = system.A.T @ e_u + system.D.T @ e_p
    r_p = system.B.T @ e_u - system.S.T @ e_p
    enorm = triple_norm_residual(system, solution)
    resid = max(np.abs(r_u).max(initial=0.0), np.abs(r_p).max(initial=0.0))
    if enorm == 0.0:
        return resid
    return resid / enorm


def triple_norm_residual(system: BlockSystem, solution: SaddleSolution) -> float:
    """|||(e_u, e_p)||| via the Gram matrices."""
    e_u, e_p = solution.e_u.values, solution.e_p.values
    return float(np.sqrt(max(e_u @ (system.G_u @ e_u)
                             + e_p @ (system.G_p @ e_p), 0.0)))


def load_dual_norm(system: BlockSystem) -> float:
    """|||l_h|||_* = ||G^(-1/2) L|| computed from the same Grams."""
    G = _GramFactor(system)
    L = np.concatenate([system.L, np.zeros(system.test_q.ndofs)])
    return float(np.sqrt(max(L @ G.solve(L), 0.0)))


def dump_matrix(system: BlockSystem, path):
    """Coordinate text dump of the global block system."""
    M = system.assemble_global().tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric-indefinite\n")
        fh.write(f"{M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{i + 1} {j + 1} {v!r}\n")
