"""Command-line driver: configuration parsing, benchmark orchestration,
convergence CSV tables, and ASCII-VTK field snapshots."""

import argparse
import re
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adapt import adaptive_loop
from .assembly import FormParameters, default_eta
from .bench import compute_eoc, get_case
from .fespace import evaluate_at_cells
from .shape import MAX_DEGREE

CSV_COLUMNS = ("level", "ndof_u", "ndof_p", "ndof_test", "ndof_total",
               "h_max", "err_u_L2", "err_p_L2", "err_triple", "est_triple",
               "eoc_u", "eoc_p", "eoc_triple", "marked_cells", "solver_iters")

_TRIAL_RE = re.compile(r"^(?:DG([1-4])|P([1-4])P([0-4]))$")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    case: str
    trial: str
    beta: float = 1.0
    eta: Optional[float] = None      # None -> degree-based default
    refine: str = "uniform"
    dorfler: Optional[float] = None  # None -> case default
    levels: int = 4
    solver: str = "direct"
    tol: float = 1e-9
    mark_mode: str = "squares"
    out: str = "convergence.csv"
    snapshot: Optional[str] = None   # per-level VTK path prefix

    def __post_init__(self):
        m = _TRIAL_RE.match(self.trial)
        if not m:
            raise ConfigError(f"invalid trial label {self.trial!r}")
        if m.group(1):
            self.trial_broken = True
            self.degree_u = self.degree_p = int(m.group(1))
        else:
            self.trial_broken = False
            self.degree_u, self.degree_p = int(m.group(2)), int(m.group(3))
            if self.degree_p > self.degree_u:
                raise ConfigError("pressure degree must not exceed velocity "
                                  f"degree in {self.trial!r}")
        if self.degree_u > MAX_DEGREE:
            raise ConfigError(f"unsupported degree in {self.trial!r}")
        if self.refine not in ("uniform", "adaptive"):
            raise ConfigError(f"invalid refinement mode {self.refine!r}")
        if self.refine == "adaptive" and self.dorfler is not None \
                and not 0.0 < self.dorfler <= 1.0:
            raise ConfigError("dorfler fraction must lie in (0, 1]")
        if self.solver not in ("direct", "fixed_point"):
            raise ConfigError(f"invalid solver {self.solver!r}")
        if self.levels < 1:
            raise ConfigError("level count must be >= 1")
        if self.mark_mode not in ("squares", "linear"):
            raise ConfigError(f"invalid marking mode {self.mark_mode!r}")

    @property
    def resolved_eta(self):
        return self.eta if self.eta is not None else default_eta(self.degree_u)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, records, header_comments=()):
    with open(path, "w") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            row = (r.level, r.ndof_u, r.ndof_p, r.ndof_test, r.ndof_total,
                   r.h_max, r.err_u_l2, r.err_p_l2, r.err_triple,
                   r.est_triple, r.eoc_u, r.eoc_p, r.eoc_triple,
                   r.marked_cells, r.solver_iters)
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _vertex_values(field):
    """Field values at the mesh vertices (per-cell corner evaluation)."""
    space = field.space
    mesh = space.mesh
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cells = np.arange(mesh.n_cells)
    ref = np.broadcast_to(corners, (mesh.n_cells, 3, 2))
    vals, _ = evaluate_at_cells(field, cells, ref)
    out = np.zeros((len(mesh.vertices), space.components))
    out[mesh.cells.ravel()] = vals.reshape(-1, space.components)
    return out


def emit_field_snapshot(solution, mesh, path, indicators=None):
    """Legacy ASCII VTK unstructured-grid dump of one solved level."""
    u = _vertex_values(solution.u)
    p = _vertex_values(solution.p)[:, 0]
    nv, nc = len(mesh.vertices), mesh.n_cells
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write("stokesrm field snapshot\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        fh.write(f"CELLS {nc} {4 * nc}\n")
        for a, b, c in mesh.cells:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nc}\n")
        fh.write("5\n" * nc)
        fh.write(f"POINT_DATA {nv}\n")
        fh.write("VECTORS velocity double\n")
        for vx, vy in u:
            fh.write(f"{_fmt(vx)} {_fmt(vy)} 0\n")
        fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        for v in p:
            fh.write(f"{_fmt(v)}\n")
        if indicators is not None:
            fh.write(f"CELL_DATA {nc}\n")
            fh.write("SCALARS indicator double 1\nLOOKUP_TABLE default\n")
            for v in indicators.values:
                fh.write(f"{_fmt(v)}\n")


def run(config: RunConfig) -> int:
    """Execute one configuration; returns the process exit code."""
    case = get_case(config.case)
    params = FormParameters(eta=config.resolved_eta, beta=config.beta)
    theta = config.dorfler if config.dorfler is not None \
        else case.default_theta
    levels = adaptive_loop(
        case, params,
        degree_u=config.degree_u, degree_p=config.degree_p,
        trial_broken=config.trial_broken, levels=config.levels,
        theta=theta, uniform=(config.refine == "uniform"),
        solver=config.solver, tol=config.tol, mark_mode=config.mark_mode)
    records = [lv.record for lv in levels]
    compute_eoc(records, adaptive=(config.refine == "adaptive"))
    src = "auto" if config.eta is None else "explicit"
    comments = [f"case={config.case} trial={config.trial} "
                f"beta={_fmt(config.beta)} refine={config.refine}",
                f"eta={_fmt(config.resolved_eta)} ({src})"]
    write_csv(config.out, records, comments)
    failed = [lv for lv in levels if lv.failure]
    if config.snapshot:
        for lv in levels:
            if lv.solution is not None:
                emit_field_snapshot(lv.solution, lv.mesh,
                                    f"{config.snapshot}_level{lv.level}.vtk",
                                    lv.indicators)
    if failed:
        print(f"solver failure at level {failed[0].level}: "
              f"{failed[0].failure}", file=sys.stderr)
        return 2
    return 0


def read_config_file(path):
    """Minimal key=value configuration file: one pair per line, # comments."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip().strip('"')
    return values

_FIELD_TYPES = {"case": str, "trial": str, "beta": float, "eta": str,
                "refine": str, "dorfler": float, "levels": int,
                "solver": str, "tol": float, "mark_mode": str,
                "out": str, "snapshot": str}


def build_parser():
    p = argparse.ArgumentParser(
        prog="stokesrm",
        description="Adaptive stabilized FEM benchmarks for Stokes flow")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--case", choices=("case1", "case2", "case3"))
    p.add_argument("--trial", help="trial label: DGk or PkPr (k in 1..4)")
    p.add_argument("--beta", type=float)
    p.add_argument("--eta", help='penalty constant, or "auto"')
    p.add_argument("--refine", choices=("uniform", "adaptive"))
    p.add_argument("--dorfler", type=float, help="marking fraction theta")
    p.add_argument("--levels", type=int)
    p.add_argument("--solver", choices=("direct", "fixed_point"))
    p.add_argument("--tol", type=float)
    p.add_argument("--mark-mode", dest="mark_mode",
                   choices=("squares", "linear"))
    p.add_argument("--out", help="convergence CSV path")
    p.add_argument("--snapshot", help="per-level VTK path prefix")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = {}
        if args.config:
            for key, val in read_config_file(args.config).items():
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"unknown configuration key {key!r}")
                values[key] = _FIELD_TYPES[key](val)
        for key in _FIELD_TYPES:
            cli_val = getattr(args, key)
            if cli_val is not None:
                values[key] = cli_val
        eta = values.pop("eta", None)
        if eta is not None and eta != "auto":
            try:
                values["eta"] = float(eta)
            except ValueError:
                raise ConfigError(f"invalid eta value {eta!r}") from None
        if "case" not in values or "trial" not in values:
            raise ConfigError("both a case and a trial label are required")
        config = RunConfig(**values)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        return run(config)
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
