"""Error norms, convergence records, and the grid-convergence study driver."""

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import cases as case_mod
from . import euler
from .basis import triangle_rule
from .dg import Discretization, eval_tables
from .timestepping import newton_steady_solve, rk_steady_solve

VARNAMES = ("rho", "rhou", "rhov", "rhoE")


def l2_error(disc, coef, exact, t=0.0):
    """Unnormalized L2 error per conserved variable over the mesh.

    exact maps (n, 2) points (and time) to conserved states; the quadrature
    uses exactness >= 2p+2 so the error itself dominates the measurement.
    """
    rule = triangle_rule(2 * disc.degree + 3)
    pts = np.einsum("qi,tix->tqx", rule.points, disc.verts)
    w = rule.weights[None, :] * disc.area[:, None]
    vals = eval_tables(pts, disc.centroid, disc.h_basis, disc.degree)
    Uh = vals @ coef
    Ue = np.asarray(exact(pts.reshape(-1, 2), t)).reshape(Uh.shape)
    diff2 = (Uh - Ue) ** 2
    return np.sqrt(np.einsum("tq,tqv->v", w, diff2))


@dataclass
class ConvergenceRecord:
    level: int
    h: float
    errors: np.ndarray  # per conserved variable
    rates: np.ndarray = None  # None on the first level
    info: str = ""


@dataclass
class StudyResult:
    case: str
    degree: int
    bc_mode: str
    records: list = field(default_factory=list)

    def rates(self, var=0):
        return [r.rates[var] for r in self.records if r.rates is not None]

    def errors(self, var=0):
        return [r.errors[var] for r in self.records]


def observed_rates(prev, cur):
    return np.log(prev.errors / cur.errors) / np.log(prev.h / cur.h)


def solve_steady_case(case, mesh, degree, bc_mode, solver="newton", tol=1e-11,
                      verbose=False, max_iters=200_000):
    """Build the discretization, start from the projected exact solution, and
    converge the steady state (Newton by default, RK as fallback/alternative)."""
    disc = Discretization(
        mesh,
        degree,
        geometry=case.geometry,
        bcs=case.bcs(bc_mode),
        source=case.source,
        gamma=case.gamma,
    )
    coef0 = disc.project(lambda pts: case.exact(pts, 0.0))
    if solver == "newton":
        phi = case.downstream(disc.centroid) if case.downstream else None
        coef, report = newton_steady_solve(disc, coef0, phi=phi, verbose=verbose)
        if not report.converged:
            coef, report = rk_steady_solve(disc, coef, tol=tol, max_iters=max_iters)
    elif solver == "rk":
        coef, report = rk_steady_solve(disc, coef0, tol=tol, max_iters=max_iters)
    else:
        raise ValueError(f"unknown steady solver {solver!r}")
    return disc, coef, report


def run_convergence_study(case_name, degrees, levels, bc_mode, solver="newton",
                          verbose=False, on_record=None):
    """Solve each (degree, level) pair and accumulate error/rate tables.

    Solve failures are recorded per row and the study continues.
    """
    case = case_mod.get_case(case_name)
    results = []
    for degree in degrees:
        res = StudyResult(case_name, degree, bc_mode)
        prev = None
        for level in levels:
            mesh = case_mod.case_mesh(case, level)
            t0 = time.perf_counter()
            try:
                disc, coef, report = solve_steady_case(case, mesh, degree, bc_mode, solver)
                errors = l2_error(disc, coef, case.exact)
                info = f"{report.reason}; {time.perf_counter() - t0:.1f}s"
            except Exception as exc:  # noqa: BLE001 - record and continue
                rec = ConvergenceRecord(level, mesh.h, np.full(4, np.nan), None, f"failed: {exc}")
                res.records.append(rec)
                prev = None
                continue
            rec = ConvergenceRecord(level, mesh.h, errors, None, info)
            if prev is not None:
                rec.rates = observed_rates(prev, rec)
            res.records.append(rec)
            prev = rec
            if verbose:
                rates = "" if rec.rates is None else " rates " + " ".join(
                    f"{r:.2f}" for r in rec.rates
                )
                print(f"  {case_name} p{degree} L{level}: err_rho {errors[0]:.4e}{rates} ({info})")
            if on_record is not None:
                on_record(res, rec)
        results.append(res)
    return results


def study_to_csv(results, path_or_buf):
    """CSV columns: case, degree, bc, level, h, then err/rate per variable."""
    close = False
    if isinstance(path_or_buf, (str, bytes)):
        f = open(path_or_buf, "w", newline="")
        close = True
    else:
        f = path_or_buf
    try:
        wr = csv.writer(f, lineterminator="\n")
        header = ["case", "degree", "bc", "level", "h"]
        for v in VARNAMES:
            header += [f"err_{v}", f"rate_{v}"]
        wr.writerow(header)
        for res in results:
            for rec in res.records:
                row = [res.case, res.degree, res.bc_mode, rec.level, f"{rec.h:.12e}"]
                for k in range(4):
                    row.append(f"{rec.errors[k]:.12e}")
                    row.append("" if rec.rates is None else f"{rec.rates[k]:.6f}")
                wr.writerow(row)
    finally:
        if close:
            f.close()


def study_csv_string(results):
    buf = io.StringIO()
    study_to_csv(results, buf)
    return buf.getvalue()
