"""Semi-discrete DG residual assembly on triangular meshes.

The residual of element K against test function psi_i is

    R_i = oint_dK psi_i Fhat . n dS - int_K grad psi_i . F dx - int_K psi_i S dx

and the semi-discrete system is dU/dt = -M^-1 R.  Assembly is fully
vectorized: per-element basis tables are precomputed once, interface fluxes
are evaluated once per face and scattered with opposite signs, and boundary
faces are grouped per tag so each group dispatches to exactly one boundary
treatment.
"""

import numpy as np

from . import boundary as bc
from . import euler
from .basis import (
    SimplexBasis,
    edge_rule,
    monomial_exponents,
    space_dimension,
    triangle_rule,
)
from .geometry import Straight, map_points

_FACTORIALS = [1, 1, 2, 6, 24, 120, 720]


def eval_tables(pts, centroids, hs, degree, grad=False):
    """Basis values (and gradients) at per-element points.

    pts: (n, m, 2) points, centroids: (n, 2), hs: (n,).  Returns (n, m, D)
    values, plus (n, m, D, 2) gradients when grad is True.
    """
    xi = (pts[..., 0] - centroids[:, None, 0]) / hs[:, None]
    eta = (pts[..., 1] - centroids[:, None, 1]) / hs[:, None]
    p = degree
    pow_xi = np.ones(xi.shape + (p + 1,))
    pow_eta = np.ones(eta.shape + (p + 1,))
    for k in range(1, p + 1):
        pow_xi[..., k] = pow_xi[..., k - 1] * xi
        pow_eta[..., k] = pow_eta[..., k - 1] * eta
    exps = monomial_exponents(p)
    D = len(exps)
    vals = np.empty(xi.shape + (D,))
    for m, (a, b) in enumerate(exps):
        vals[..., m] = pow_xi[..., a] * pow_eta[..., b] / (_FACTORIALS[a] * _FACTORIALS[b])
    if not grad:
        return vals
    grads = np.zeros(xi.shape + (D, 2))
    inv_h = 1.0 / hs
    for m, (a, b) in enumerate(exps):
        if a > 0:
            grads[..., m, 0] = (
                pow_xi[..., a - 1]
                * pow_eta[..., b]
                / (_FACTORIALS[a - 1] * _FACTORIALS[b])
                * inv_h[:, None]
            )
        if b > 0:
            grads[..., m, 1] = (
                pow_xi[..., a]
                * pow_eta[..., b - 1]
                / (_FACTORIALS[a] * _FACTORIALS[b - 1])
                * inv_h[:, None]
            )
    return vals, grads


class BoundaryGroup:
    """All boundary faces sharing one tag, with precomputed quadrature data."""

    def __init__(self, tag_name, spec):
        self.tag_name = tag_name
        self.spec = spec
        self.kind = spec.kind


class Discretization:
    """Mesh + degree + boundary bindings, with all assembly tables built."""

    def __init__(self, mesh, degree, geometry=None, bcs=None, source=None,
                 gamma=euler.GAMMA_DEFAULT):
        if not 0 <= degree <= 4:
            raise ValueError("polynomial degree must be in [0, 4]")
        self.mesh = mesh
        self.degree = degree
        self.geometry = geometry
        self.bcs = dict(bcs or {})
        self.gamma = gamma
        self.D = space_dimension(degree)
        self.sbm_fallbacks = 0

        verts = mesh.element_vertices()
        self.verts = verts
        self.centroid = verts.mean(axis=1)
        self.area = mesh.areas()
        # basis scale: circumradius keeps the scaled monomials well conditioned
        self.h_basis = 0.5 * mesh.circumdiameters()
        self.h_min = mesh.h_min

        self.rule = triangle_rule(2 * degree + 1)
        self.nq = len(self.rule.weights)
        self.qpts = np.einsum("qi,tix->tqx", self.rule.points, verts)
        self.qw = self.rule.weights[None, :] * self.area[:, None]

        Psi, Grad = eval_tables(self.qpts, self.centroid, self.h_basis, degree, grad=True)
        self.Psi = Psi
        T = mesh.num_elements
        self.PsiW = np.ascontiguousarray(np.swapaxes(Psi * self.qw[..., None], 1, 2))
        self.GradW = np.ascontiguousarray(
            (Grad * self.qw[..., None, None]).transpose(0, 2, 1, 3).reshape(T, self.D, 2 * self.nq)
        )
        self.M = self.PsiW @ Psi
        self.Minv = np.linalg.inv(self.M)
        self.avg_w = self.rule.weights @ Psi  # cell-average weights per element

        self.source = source
        self.Svals = None if source is None else np.asarray(source(self.qpts))

        self._build_interior_faces()
        self._build_boundary_groups()

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    def _face_geometry(self, a_idx, b_idx):
        a = self.mesh.nodes[a_idx]
        b = self.mesh.nodes[b_idx]
        tvec = b - a
        length = np.linalg.norm(tvec, axis=-1)
        normal = np.stack([tvec[..., 1], -tvec[..., 0]], axis=-1) / length[..., None]
        s, w = edge_rule(self.degree + 1)
        pts = a[:, None, :] + s[None, :, None] * tvec[:, None, :]
        weights = w[None, :] * length[:, None]
        return normal, length, pts, weights

    def _build_interior_faces(self):
        faces = self.mesh.interior_faces
        self.fL = faces[:, 0]
        self.fR = faces[:, 1]
        normal, length, pts, weights = self._face_geometry(faces[:, 2], faces[:, 3])
        self.fnormal = normal
        self.fpts = pts
        PsiL = eval_tables(pts, self.centroid[self.fL], self.h_basis[self.fL], self.degree)
        PsiR = eval_tables(pts, self.centroid[self.fR], self.h_basis[self.fR], self.degree)
        self.PsiL = PsiL
        self.PsiR = PsiR
        self.PsiLW = np.ascontiguousarray(np.swapaxes(PsiL * weights[..., None], 1, 2))
        self.PsiRW = np.ascontiguousarray(np.swapaxes(PsiR * weights[..., None], 1, 2))

    def _build_boundary_groups(self):
        self.boundary_groups = []
        faces = self.mesh.boundary_faces
        if len(faces) == 0:
            return
        names = self.mesh.tag_names
        for tag in np.unique(faces[:, 3]):
            name = names.get(int(tag), str(tag))
            if name not in self.bcs:
                raise KeyError(f"boundary tag {name!r} has no boundary condition bound")
            spec = self.bcs[name]
            g = BoundaryGroup(name, spec)
            rows = faces[faces[:, 3] == tag]
            g.elems = rows[:, 0]
            ntilde, length, pts, weights = self._face_geometry(rows[:, 1], rows[:, 2])
            g.ntilde = ntilde
            g.xq = pts
            g.w = weights
            cent = self.centroid[g.elems]
            hb = self.h_basis[g.elems]
            PsiB = eval_tables(pts, cent, hb, self.degree)
            g.PsiB = PsiB
            g.PsiBW = np.ascontiguousarray(np.swapaxes(PsiB * weights[..., None], 1, 2))

            nfq = pts.shape[1]
            if g.kind == bc.WALL_CLASSICAL or self.geometry is None:
                descr = Straight()
            else:
                descr = self.geometry.descriptor(name)
            flat = pts.reshape(-1, 2)
            ntile = np.repeat(ntilde, nfq, axis=0)
            x, n, d = map_points(descr, flat, ntile)
            g.x_true = x.reshape(pts.shape)
            g.n_true = n.reshape(pts.shape)
            g.d = d.reshape(pts.shape)
            g.t_true = bc.tangent_of(g.n_true)
            g.PsiBD = eval_tables(g.x_true, cent, hb, self.degree)
            g.frame = bc.WallFrame(
                n=g.n_true, t=g.t_true, ntilde=np.broadcast_to(ntilde[:, None, :], g.n_true.shape)
            )
            g.wall_w = 0.0
            if self.geometry is not None:
                g.wall_w = self.geometry.speed(name)

            g.U_presc = None
            if spec.kind in (bc.FARFIELD_CLASSICAL, bc.FARFIELD_SBM) and spec.static:
                # prescribed data lives on the true boundary: evaluate at the
                # mapped points x_tilde + d, not at the surrogate points
                g.U_presc = np.asarray(
                    spec.prescribed(g.x_true.reshape(-1, 2), 0.0)
                ).reshape(pts.shape[:2] + (4,))
            g.U_ref = None
            if spec.kind == bc.RIEMANN:
                rho, p, mach, direction = spec.reference
                g.U_ref = bc.reference_state(rho, p, mach, direction, self.gamma)
            self.boundary_groups.append(g)

    # ------------------------------------------------------------------
    # assembly
    # ------------------------------------------------------------------

    def check_admissible(self, U, strict, context=""):
        if strict:
            euler.require_admissible(U, self.gamma, context)

    def residual(self, coef, t=0.0, strict=True, parts="all"):
        """Assemble the DG residual R; dU/dt = -M^-1 R.

        strict=False suppresses admissibility errors (NaNs are allowed to
        propagate; the a-posteriori limiter deals with them).  parts selects
        'all', 'local' (volume + source + boundary), or 'interior'.
        """
        T = self.mesh.num_elements
        R = np.zeros((T, self.D, 4))
        err = np.errstate(invalid="ignore", divide="ignore", over="ignore")
        with err:
            if parts in ("all", "local"):
                Uq = self.Psi @ coef
                self.check_admissible(Uq, strict, "at volume quadrature point")
                Fq = euler.flux(Uq, self.gamma)
                R -= self.GradW @ Fq.reshape(T, 2 * self.nq, 4)
                if self.Svals is not None:
                    R -= self.PsiW @ self.Svals
                for g in self.boundary_groups:
                    contrib = self._boundary_contrib(g, coef, t, strict)
                    np.add.at(R, g.elems, contrib)
            if parts in ("all", "interior") and len(self.fL):
                CL, CR = self._interior_face_contribs(coef, strict)
                np.add.at(R, self.fL, CL)
                np.add.at(R, self.fR, CR)
        return R

    def _interior_face_contribs(self, coef, strict=True, ULp=None, URp=None):
        UL = self.PsiL @ coef[self.fL] if ULp is None else ULp
        UR = self.PsiR @ coef[self.fR] if URp is None else URp
        self.check_admissible(UL, strict, "at interior face")
        self.check_admissible(UR, strict, "at interior face")
        nx = self.fnormal[:, None, 0]
        ny = self.fnormal[:, None, 1]
        Fh = euler.rusanov_flux(UL, UR, nx, ny, self.gamma)
        return self.PsiLW @ Fh, -(self.PsiRW @ Fh)

    def _boundary_contrib(self, g, coef, t, strict=True, Ubp=None):
        Ub = g.PsiB @ coef[g.elems] if Ubp is None else Ubp
        self.check_admissible(Ub, strict, f"on boundary {g.tag_name!r}")
        kind = g.kind
        nx = g.ntilde[:, None, 0]
        ny = g.ntilde[:, None, 1]
        if kind in (bc.FARFIELD_CLASSICAL, bc.FARFIELD_SBM):
            U_presc = g.U_presc
            if U_presc is None:
                U_presc = np.asarray(g.spec.prescribed(g.x_true.reshape(-1, 2), t)).reshape(
                    Ub.shape
                )
            if kind == bc.FARFIELD_CLASSICAL:
                ghost = U_presc
            else:
                Ud = g.PsiBD @ coef[g.elems]
                ghost, fb = bc.sbm_dirichlet_state(Ub, Ud, U_presc, self.gamma)
                self.sbm_fallbacks += int(np.count_nonzero(fb))
            F = euler.rusanov_flux(Ub, ghost, nx, ny, self.gamma)
        elif kind == bc.RIEMANN:
            ghost = bc.riemann_ghost(Ub, g.U_ref, g.ntilde[:, None, :], self.gamma)
            F = euler.rusanov_flux(Ub, ghost, nx, ny, self.gamma)
        elif kind == bc.WALL_CLASSICAL:
            F = bc.wall_flux_sbm(
                Ub, Ub, g.frame, w=0.0, variant="velocity", gamma=self.gamma
            )
        elif kind in (bc.WALL_SBM_VELOCITY, bc.WALL_SBM_MOMENTUM):
            Ud = g.PsiBD @ coef[g.elems]
            variant = "velocity" if kind == bc.WALL_SBM_VELOCITY else "momentum"
            F = bc.wall_flux_sbm(
                Ub, Ud, g.frame, w=g.wall_w, variant=variant, gamma=self.gamma
            )
        elif kind == bc.WALL_BERGER:
            F = bc.berger_wall_flux(Ub, g.frame.ntilde, g.n_true, self.gamma)
        else:  # pragma: no cover - kinds validated in the spec
            raise ValueError(f"unhandled boundary kind {kind}")
        return g.PsiBW @ F

    def apply_inverse_mass(self, R):
        """Solve M X = R per element and variable (backward-stable solve)."""
        return np.linalg.solve(self.M, R)

    # ------------------------------------------------------------------
    # solution helpers
    # ------------------------------------------------------------------

    def project(self, fn, t=None):
        """L2-project a pointwise state function onto the modal space.

        fn maps (n, 2) points to (n, 4) conserved states.
        """
        vals = np.asarray(fn(self.qpts.reshape(-1, 2))).reshape(self.qpts.shape[:2] + (-1,))
        rhs = self.PsiW @ vals
        return np.linalg.solve(self.M, rhs)

    def evaluate(self, coef, elems, pts):
        """Evaluate the DG solution of given elements at given points."""
        vals = eval_tables(pts, self.centroid[elems], self.h_basis[elems], self.degree)
        return vals @ coef[elems]

    def cell_averages(self, coef):
        return np.einsum("td,tdv->tv", self.avg_w, coef)

    def max_wave_speed(self, coef):
        Uq = self.Psi @ coef
        return float(np.max(euler.max_wave_speed(Uq, self.gamma)))

    def element_wave_speeds(self, coef):
        Uq = self.Psi @ coef
        return np.max(euler.max_wave_speed(Uq, self.gamma), axis=1)

    def quadrature_states(self, coef):
        """States at all volume and face quadrature points, per element."""
        states = [self.Psi @ coef]
        if len(self.fL):
            states.append(self.PsiL @ coef[self.fL])
            states.append(self.PsiR @ coef[self.fR])
        for g in self.boundary_groups:
            states.append(g.PsiB @ coef[g.elems])
        return states

    def admissibility_flags(self, coef):
        """Per-element mask flagging inadmissible quadrature-point states."""
        T = self.mesh.num_elements
        bad = np.zeros(T, dtype=bool)
        ok = euler.is_admissible(self.Psi @ coef, self.gamma)
        bad |= ~np.all(ok, axis=1)
        if len(self.fL):
            okL = np.all(euler.is_admissible(self.PsiL @ coef[self.fL], self.gamma), axis=1)
            okR = np.all(euler.is_admissible(self.PsiR @ coef[self.fR], self.gamma), axis=1)
            np.logical_or.at(bad, self.fL, ~okL)
            np.logical_or.at(bad, self.fR, ~okR)
        for g in self.boundary_groups:
            okB = np.all(euler.is_admissible(g.PsiB @ coef[g.elems], self.gamma), axis=1)
            np.logical_or.at(bad, g.elems, ~okB)
        return bad
