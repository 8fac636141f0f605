"""Time integration: CFL control, pseudo-time RK for steady states, a Newton
accelerator for the convergence studies, and the one-step ADER
predictor-corrector with local space-time Picard iteration.

The space-time predictor uses the modal basis

    theta_l(x, y, t) = psi_{m_l}(x, y) (t - t^n)^{r_l} / (r_l! hK^{r_l})

so each theta factors into a spatial mode and a time power.  The predictor
matrix consequently factors as K1 = D(tau) K1hat D(tau) with tau = dt/hK and
D(tau) = diag(tau^{r_l}); K1hat is time-step independent and is inverted once
per element at setup.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import euler


class ConfigurationError(Exception):
    pass


class DivergenceError(Exception):
    pass


def cfl_timestep(h_min, lam_max, N, cfl):
    """dt = cfl * h_min / ((2N+1) |lambda_max|)."""
    if lam_max <= 0.0 or not np.isfinite(lam_max):
        raise ConfigurationError(f"max wave speed {lam_max} is not positive")
    return cfl * h_min / ((2 * N + 1) * lam_max)


def compute_timestep(disc, coef, cfl, N):
    return cfl_timestep(disc.h_min, disc.max_wave_speed(coef), N, cfl)


def residual_l2_norm(disc, R):
    """Functional L2 norm of the strong residual M^-1 R."""
    X = disc.Minv @ R
    return float(np.sqrt(abs(np.sum(X * R))))


# ---------------------------------------------------------------------------
# explicit pseudo-time iteration for steady states
# ---------------------------------------------------------------------------


@dataclass
class SteadyReport:
    converged: bool
    iterations: int
    residual_history: list = field(default_factory=list)
    reason: str = ""


def rk_steady_solve(
    disc,
    coef0,
    tol=1e-11,
    atol=1e-13,
    max_iters=200_000,
    cfl=0.2,
    scheme="ssprk3",
    local_dt=True,
    divergence_factor=1e6,
    history_stride=1,
):
    """Pseudo-time march dU/dt = -M^-1 R(U) until the residual drops by `tol`.

    Local (per element) time steps accelerate convergence without changing
    the fixed point.  Returns (solution, SteadyReport); hitting max_iters is
    reported, residual growth beyond divergence_factor raises.
    """
    coef = np.array(coef0)
    T = disc.mesh.num_elements
    hs = disc.mesh.indiameters()
    history = []
    norm0 = None

    def dt_field():
        lam = disc.element_wave_speeds(coef)
        dte = cfl * hs / ((2 * disc.degree + 1) * lam)
        if not local_dt:
            dte = np.full(T, dte.min())
        return dte[:, None, None]

    def L(c):
        return -(disc.Minv @ disc.residual(c))

    it = 0
    while it < max_iters:
        R = disc.residual(coef)
        norm = residual_l2_norm(disc, R)
        if it % history_stride == 0:
            history.append(norm)
        if norm0 is None:
            norm0 = norm if norm > 0 else 1.0
        if norm <= max(tol * norm0, atol):
            return coef, SteadyReport(True, it, history, "tolerance reached")
        if norm > divergence_factor * norm0:
            raise DivergenceError(f"residual grew to {norm:.3e} from {norm0:.3e}")
        dt = dt_field()
        if scheme == "euler":
            coef = coef - dt * (disc.Minv @ R)
        elif scheme == "ssprk3":
            u1 = coef - dt * (disc.Minv @ R)
            u2 = 0.75 * coef + 0.25 * (u1 + dt * L(u1))
            coef = coef / 3.0 + 2.0 / 3.0 * (u2 + dt * L(u2))
        else:
            raise ConfigurationError(f"unknown steady scheme {scheme!r}")
        it += 1
    return coef, SteadyReport(False, it, history, "max_iters reached")


# ---------------------------------------------------------------------------
# Newton accelerator (same fixed point R(U) = 0, used by the study harness)
# ---------------------------------------------------------------------------


def build_jacobian(disc, coef, t=0.0, eps=1e-7):
    """Block-sparse Jacobian dR/dc by kernel-wise finite differences.

    The element-local part (volume + source + boundary) is differenced for
    all elements at once; the interface kernel is differenced one side at a
    time, which yields the four face block couplings exactly.
    """
    T = disc.mesh.num_elements
    D = disc.D
    m = 4 * D
    base_local = disc.residual(coef, t, parts="local")
    CL0, CR0 = disc._interior_face_contribs(coef)
    nf = len(disc.fL)

    diag = np.zeros((T, m, m))
    dLR = np.zeros((nf, m, m))  # d R[left] / d c[right]
    dRL = np.zeros((nf, m, m))  # d R[right] / d c[left]

    scale = np.maximum(1.0, np.abs(coef).max())
    e = eps * scale
    work = np.array(coef)
    for k in range(D):
        for v in range(4):
            col = 4 * k + v
            work[:, k, v] += e
            Rp = disc.residual(work, t, parts="local")
            diag[:, :, col] += ((Rp - base_local) / e).reshape(T, m)
            ULp = disc.PsiL @ work[disc.fL]
            CLp, CRp = disc._interior_face_contribs(coef, ULp=ULp)
            dCL = ((CLp - CL0) / e).reshape(nf, m)
            dCR = ((CRp - CR0) / e).reshape(nf, m)
            np.add.at(diag[:, :, col], disc.fL, dCL)
            dRL[:, :, col] = dCR
            URp = disc.PsiR @ work[disc.fR]
            CLp, CRp = disc._interior_face_contribs(coef, URp=URp)
            dLR[:, :, col] = ((CLp - CL0) / e).reshape(nf, m)
            np.add.at(diag[:, :, col], disc.fR, ((CRp - CR0) / e).reshape(nf, m))
            work[:, k, v] = coef[:, k, v]

    rows = np.concatenate([np.arange(T), disc.fL, disc.fR])
    cols = np.concatenate([np.arange(T), disc.fR, disc.fL])
    data = np.concatenate([diag, dLR, dRL])
    order = np.lexsort((cols, rows))
    indptr = np.searchsorted(rows[order], np.arange(T + 1))
    J = sp.bsr_matrix((data[order], cols[order], indptr), shape=(T * m, T * m))
    return J


class BlockILU0:
    """Block ILU(0) in a downstream element order, plus a p0 coarse solve.

    Levels group elements that are mutually independent given already-swept
    face neighbors, so both the factorization and the triangular solves run
    as batched dense block operations per level.  The optional coarse
    correction solves the Galerkin restriction of J to the cell-average
    (constant-mode) subspace with a sparse LU, which removes the global
    transport/acoustic modes that the local smoother cannot reach.
    """

    def __init__(self, disc, J, phi=None, coarse=True):
        T = disc.mesh.num_elements
        self.T = T
        self.m = J.blocksize[0]
        self.J = J
        m = self.m
        order = np.argsort(phi, kind="stable") if phi is not None else np.arange(T)
        rank = np.empty(T, dtype=np.int64)
        rank[order] = np.arange(T)

        nbrs = [[] for _ in range(T)]
        for f in range(len(disc.fL)):
            l, r = int(disc.fL[f]), int(disc.fR[f])
            nbrs[l].append(r)
            nbrs[r].append(l)
        level = np.zeros(T, dtype=np.int64)
        for e in order:
            lv = 0
            for nb in nbrs[e]:
                if rank[nb] < rank[e]:
                    lv = max(lv, level[nb] + 1)
            level[e] = lv
        nlev = int(level.max()) + 1 if T else 0
        levels = [np.nonzero(level == l)[0] for l in range(nlev)]
        self.levels = levels

        # split each element's off-diagonal blocks into lower/upper by rank
        indptr, indices, data = J.indptr, J.indices, J.data
        Dblocks = np.zeros((T, m, m))
        lower = [[] for _ in range(T)]  # (nbr, block, reciprocal block)
        upper = [[] for _ in range(T)]
        block_at = {}
        for e in range(T):
            for ptr in range(indptr[e], indptr[e + 1]):
                block_at[(e, int(indices[ptr]))] = ptr
        for e in range(T):
            for ptr in range(indptr[e], indptr[e + 1]):
                c = int(indices[ptr])
                if c == e:
                    Dblocks[e] = data[ptr]
                elif rank[c] < rank[e]:
                    lower[e].append((c, ptr, block_at[(c, e)]))
                else:
                    upper[e].append((c, ptr, block_at[(c, e)]))

        # ILU(0) diagonal recurrence, batched per level:
        #   D_e = A_ee - sum_{nb lower} A_{e,nb} Dinv_nb A_{nb,e}
        Dinv = np.zeros((T, m, m))
        for elems in levels:
            for e in elems:
                for nb, ptr, rptr in lower[e]:
                    Dblocks[e] -= data[ptr] @ (Dinv[nb] @ data[rptr])
            Dinv[elems] = np.linalg.inv(Dblocks[elems])
        self.Dinv = Dinv

        def gather(level_elems, table):
            """Contiguous (positions, neighbor ids, blocks) per slot."""
            out = []
            maxslots = max((len(table[e]) for e in level_elems), default=0)
            for k in range(maxslots):
                pos = [i for i, e in enumerate(level_elems) if len(table[e]) > k]
                if not pos:
                    continue
                es = [level_elems[i] for i in pos]
                nb = np.array([table[e][k][0] for e in es])
                blk = np.ascontiguousarray(data[[table[e][k][1] for e in es]])
                out.append((np.array(pos), nb, blk))
            return out

        self.fwd = [(elems, gather(elems, lower)) for elems in levels]
        self.bwd = [(elems, gather(elems, upper)) for elems in reversed(levels)]

        self.lu_coarse = None
        if coarse and T > 1:
            Jc = sp.bsr_matrix(
                (data[:, :4, :4].copy(), indices, indptr), shape=(T * 4, T * 4)
            )
            self.lu_coarse = spla.splu(Jc.tocsc())
            self.D = self.m // 4

    def smooth(self, bb):
        """Solve (D+L) y = b, then (I + Dinv U) x = y, per-level batched."""
        x = np.zeros_like(bb)
        for elems, slots in self.fwd:
            rhs = bb[elems].copy()
            for pos, nb, blk in slots:
                rhs[pos] -= np.einsum("eij,ej->ei", blk, x[nb])
            x[elems] = np.einsum("eij,ej->ei", self.Dinv[elems], rhs)
        for elems, slots in self.bwd:
            if not slots:
                continue
            acc = np.zeros((len(elems), self.m))
            for pos, nb, blk in slots:
                acc[pos] += np.einsum("eij,ej->ei", blk, x[nb])
            x[elems] -= np.einsum("eij,ej->ei", self.Dinv[elems], acc)
        return x

    def solve(self, b):
        bb = np.asarray(b, dtype=float).reshape(self.T, self.m)
        x = self.smooth(bb)
        if self.lu_coarse is not None:
            r = bb - (self.J @ x.reshape(-1)).reshape(self.T, self.m)
            xc = self.lu_coarse.solve(r.reshape(self.T, self.D, 4)[:, 0, :].ravel())
            x = x.reshape(self.T, self.D, 4)
            x[:, 0, :] += xc.reshape(self.T, 4)
            x = x.reshape(self.T, self.m)
            r = bb - (self.J @ x.reshape(-1)).reshape(self.T, self.m)
            x = x + self.smooth(r)
        return x.reshape(-1)


def newton_steady_solve(
    disc,
    coef0,
    t=0.0,
    rtol=1e-12,
    atol=1e-13,
    max_newton=40,
    direct_dof_limit=40_000,
    phi=None,
    verbose=False,
):
    """Damped Newton on R(U) = 0 with a finite-difference block Jacobian.

    Small systems use a sparse LU; larger ones use GMRES preconditioned with
    downstream-ordered symmetric block Gauss-Seidel (phi gives the ordering
    functional per element; flow-aligned orderings make it strong).
    Shares its fixed point with rk_steady_solve.
    """
    coef = np.array(coef0)
    T, D = disc.mesh.num_elements, disc.D
    ndof = T * D * 4
    R = disc.residual(coef, t)
    rnorm0 = max(np.linalg.norm(R), 1e-300)
    rnorm = rnorm0
    history = [rnorm]
    solver = None
    newton_since_build = 0

    for it in range(max_newton):
        if rnorm <= max(rtol * rnorm0, atol):
            return coef, SteadyReport(True, it, history, "tolerance reached")
        if solver is None or newton_since_build >= 6:
            J = build_jacobian(disc, coef, t)
            if ndof <= direct_dof_limit:
                lu = spla.splu(J.tocsc())
                solver = lu.solve
            else:
                prec = BlockILU0(disc, J, phi)
                Mop = spla.LinearOperator((ndof, ndof), matvec=prec.solve, dtype=float)

                def solver(b, J=J, Mop=Mop):
                    x, info = spla.gmres(J, b, M=Mop, rtol=1e-6, atol=0.0,
                                         restart=60, maxiter=400)
                    return x
            newton_since_build = 0
        dx = solver(-R.ravel())
        if not np.all(np.isfinite(dx)):
            raise DivergenceError("linear solver returned non-finite update")
        alpha = 1.0
        while alpha >= 1.0 / 64.0:
            cand = coef + alpha * dx.reshape(T, D, 4)
            try:
                Rc = disc.residual(cand, t)
            except euler.PhysicsError:
                alpha *= 0.5
                continue
            rn = np.linalg.norm(Rc)
            if rn < rnorm or rn <= max(rtol * rnorm0, atol):
                break
            alpha *= 0.5
        else:
            # stagnation: accept only if already near round-off, else rebuild
            if solver is not None and newton_since_build > 0:
                solver = None
                continue
            return coef, SteadyReport(False, it, history, "line search stagnated")
        coef, R, rnorm = cand, Rc, rn
        history.append(rnorm)
        newton_since_build += 1
        if verbose:
            print(f"  newton {it}: |R| = {rnorm:.3e} (alpha {alpha})")
    return coef, SteadyReport(False, max_newton, history, "max_newton reached")


# ---------------------------------------------------------------------------
# ADER predictor-corrector
# ---------------------------------------------------------------------------


def spacetime_exponents(N):
    """(a, b, r) exponents of the space-time basis up to total degree N."""
    exps = []
    for deg in range(N + 1):
        for r in range(deg + 1):
            for b in range(deg - r + 1):
                a = deg - r - b
                exps.append((a, b, r))
    return exps


class AderIntegrator:
    """One-step ADER: local space-time predictor plus corrector quadrature."""

    def __init__(self, disc, N=None, picard_extra=2):
        self.disc = disc
        self.N = disc.degree if N is None else N
        if self.N != disc.degree:
            raise ConfigurationError("predictor degree N is fixed to p in this build")
        N = self.N
        self.exps = spacetime_exponents(N)
        self.Q = len(self.exps)
        from .basis import monomial_exponents

        space_index = {e: i for i, e in enumerate(monomial_exponents(disc.degree))}
        self.m_of = np.array([space_index[(a, b)] for a, b, r in self.exps])
        self.r_of = np.array([r for a, b, r in self.exps])
        self.rows0 = np.nonzero(self.r_of == 0)[0]

        x, w = np.polynomial.legendre.leggauss(N + 1)
        self.alpha = 0.5 * (x + 1.0)
        self.wt = 0.5 * w

        # K1hat: dt-independent predictor matrix per element
        M = disc.M
        g = np.empty((self.Q, self.Q))
        for k in range(self.Q):
            rk = self.r_of[k]
            for l in range(self.Q):
                rl = self.r_of[l]
                if rk == 0:
                    g[k, l] = 1.0 / factorial(rl)
                else:
                    g[k, l] = rl / ((rk + rl) * factorial(rk) * factorial(rl))
        K1hat = M[:, self.m_of[:, None], self.m_of[None, :]] * g[None, :, :]
        self.K1hat_inv = np.linalg.inv(K1hat)

        # unweighted gradient tables for the pointwise flux divergence
        from .dg import eval_tables

        _, Grad = eval_tables(disc.qpts, disc.centroid, disc.h_basis, disc.degree, grad=True)
        self.GradX = np.ascontiguousarray(Grad[..., 0])
        self.GradY = np.ascontiguousarray(Grad[..., 1])
        self.picard_budget = N + 1 + picard_extra
        self.Svals = disc.Svals

    def collapse(self, q, s):
        """Spatial modal coefficients of the predictor at time offset s."""
        disc = self.disc
        c = np.zeros((q.shape[0], disc.D, 4))
        sh = s / disc.h_basis
        powers = {}
        for l in range(self.Q):
            r = self.r_of[l]
            if r not in powers:
                powers[r] = sh**r / factorial(r)
            c[:, self.m_of[l], :] += powers[r][:, None] * q[:, l, :]
        return c

    def predict(self, coef, dt):
        """Picard iteration of the local space-time weak problem.

        Returns (q, trouble) where trouble flags elements whose iteration
        failed to converge or went non-finite.
        """
        disc = self.disc
        T = disc.mesh.num_elements
        tau = dt / disc.h_basis
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            q = np.zeros((T, self.Q, 4))
            q[:, self.rows0, :] = coef[:, self.m_of[self.rows0], :]
            b0 = np.zeros((T, self.Q, 4))
            b0[:, self.rows0, :] = (disc.M @ coef)[:, self.m_of[self.rows0], :]

            tfac = np.empty((len(self.alpha), T, self.Q))
            for j, a in enumerate(self.alpha):
                at = a * tau
                for l in range(self.Q):
                    tfac[j, :, l] = at ** self.r_of[l] / factorial(self.r_of[l])
            taur = tau[:, None] ** self.r_of[None, :]
            inv_taur = 1.0 / taur

            delta = np.inf
            for _ in range(self.picard_budget):
                b = b0.copy()
                for j, a in enumerate(self.alpha):
                    c = self.collapse(q, a * dt)
                    U = disc.Psi @ c
                    dUx = self.GradX @ c
                    dUy = self.GradY @ c
                    f = euler.flux_directional_derivative(U, dUx, dUy, disc.gamma)
                    if self.Svals is not None:
                        f = f - self.Svals
                    P = disc.PsiW @ f
                    b -= (dt * self.wt[j]) * tfac[j][:, :, None] * P[:, self.m_of, :]
                y = self.K1hat_inv @ (b * inv_taur[:, :, None])
                q_new = y * inv_taur[:, :, None]
                delta = np.abs(q_new - q).max(axis=(1, 2))
                q = q_new
                if np.nanmax(delta) < 1e-12:
                    break
            trouble = ~np.isfinite(q).all(axis=(1, 2))
            trouble |= ~np.isfinite(delta) | (delta > 1e-6)
        return q, trouble

    def step(self, coef, t, dt, limiter=None):
        """Advance one time slab; returns (new coef, info dict)."""
        disc = self.disc
        q, pred_trouble = self.predict(coef, dt)
        acc = np.zeros_like(coef)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            for a, w in zip(self.alpha, self.wt):
                c = self.collapse(q, a * dt)
                acc += w * disc.residual(c, t + a * dt, strict=False)
            cand = coef - dt * (disc.Minv @ acc)
        info = {"predictor_trouble": int(pred_trouble.sum()), "troubled": 0}
        if limiter is not None:
            cand, flags = limiter.apply(cand, coef, t, dt, force=pred_trouble)
            info["troubled"] = int(flags.troubled.sum())
            info["reasons"] = flags.reason_counts()
        return cand, info
