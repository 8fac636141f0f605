"""Built-in benchmark cases: exact solutions, sources, and boundary bindings.

Each case bundles a shipped mesh, the analytic boundary geometry, optional
exact solution / source callbacks, and a function producing the per-tag
boundary conditions for a requested treatment mode.
"""

from dataclasses import dataclass, field

import numpy as np

from . import boundary as bc
from . import euler
from .geometry import BoundaryGeometry, Circle, PolarCurve, Straight
from .meshio_paths import builtin_mesh_path

GAMMA = euler.GAMMA_DEFAULT

# supersonic vortex parameters: Mach and density on the inner circle
VORTEX_RI = 1.0
VORTEX_RO = 1.384
VORTEX_MI = 2.25
VORTEX_RHOI = 1.0

# shock-cylinder parameters
SHOCK_MACH = 1.3
SHOCK_X0 = -1.0
SHOCK_RHO1 = 1.4
SHOCK_P1 = 1.0


def manufactured_primitives(pts):
    pts = np.asarray(pts)
    s = 1.0 + 0.2 * np.sin(pts[..., 0] + pts[..., 1])
    one = np.ones_like(s)
    return s, one, one, s.copy()


def manufactured_exact(pts, t=0.0, gamma=GAMMA):
    rho, u, v, p = manufactured_primitives(pts)
    return euler.conserved(rho, u, v, p, gamma)


def vortex_primitives(pts, gamma=GAMMA):
    """Isentropic supersonic vortex between two circular walls.

    Density exponent uses (gamma-1)/2: with p = rho^gamma/gamma and
    ||u|| = c_i M_i / r this is the variant that satisfies the steady Euler
    equations and the isentropy invariant p/rho^gamma = const (the gate test
    in the suite enforces exactly that).  c_i = 1 for rho_i = 1.
    """
    pts = np.asarray(pts)
    r = np.hypot(pts[..., 0], pts[..., 1])
    base = 1.0 + 0.5 * (gamma - 1.0) * VORTEX_MI**2 * (1.0 - (VORTEX_RI / r) ** 2)
    if np.any(base <= 1e-12) or np.any(r <= 0.0):
        raise ValueError("radius outside the vortex domain of validity")
    rho = VORTEX_RHOI * base ** (1.0 / (gamma - 1.0))
    speed = VORTEX_MI / r  # c_i = sqrt(gamma p_i / rho_i) = 1
    u = speed * pts[..., 1] / r
    v = -speed * pts[..., 0] / r
    p = rho**gamma / gamma
    return rho, u, v, p


def vortex_exact(pts, t=0.0, gamma=GAMMA):
    rho, u, v, p = vortex_primitives(pts, gamma)
    return euler.conserved(rho, u, v, p, gamma)


def rankine_hugoniot(ms=SHOCK_MACH, rho1=SHOCK_RHO1, p1=SHOCK_P1, gamma=GAMMA):
    """Post-shock (rho2, u2, p2) for a shock moving at Mach ms into still gas."""
    c1 = np.sqrt(gamma * p1 / rho1)
    W = ms * c1
    rho2 = rho1 * (gamma + 1.0) * ms**2 / ((gamma - 1.0) * ms**2 + 2.0)
    p2 = p1 * (1.0 + 2.0 * gamma / (gamma + 1.0) * (ms**2 - 1.0))
    u2 = W * (1.0 - rho1 / rho2)
    return rho2, u2, p2


def moving_shock_state(pts, t=0.0, gamma=GAMMA):
    """Exact 1D moving-shock field (ignoring the cylinder) at time t."""
    pts = np.asarray(pts)
    c1 = np.sqrt(gamma * SHOCK_P1 / SHOCK_RHO1)
    xs = SHOCK_X0 + SHOCK_MACH * c1 * t
    rho2, u2, p2 = rankine_hugoniot(gamma=gamma)
    behind = pts[..., 0] < xs
    rho = np.where(behind, rho2, SHOCK_RHO1)
    u = np.where(behind, u2, 0.0)
    p = np.where(behind, p2, SHOCK_P1)
    return euler.conserved(rho, u, np.zeros_like(u), p, gamma)


def freestream_m03(pts, t=0.0, gamma=GAMMA):
    pts = np.asarray(pts)
    shape = pts.shape[:-1]
    rho = np.ones(shape)
    return euler.conserved(rho, 0.3 * rho, 0.0 * rho, rho / gamma, gamma)


@dataclass
class Case:
    """One benchmark configuration (mesh family + physics + BC factory)."""

    name: str
    mesh_name: str
    geometry: BoundaryGeometry
    make_bcs: callable
    exact: callable = None
    source: callable = None
    time_mode: str = "steady"
    downstream: callable = None  # element ordering functional for the solver
    gamma: float = GAMMA

    def bcs(self, mode="sbm"):
        return self.make_bcs(mode)


def _manufactured_bcs(mode):
    kind = {"classical": bc.FARFIELD_CLASSICAL, "sbm": bc.FARFIELD_SBM}[mode]
    return {"farfield": bc.BoundaryConditionSpec(kind, prescribed=manufactured_exact)}


def _wall_kind(mode):
    return {
        "classical": bc.WALL_CLASSICAL,
        "sbm": bc.WALL_SBM_MOMENTUM,
        "sbm_velocity": bc.WALL_SBM_VELOCITY,
        "berger": bc.WALL_BERGER,
    }[mode]


def _vortex_bcs(mode):
    wall = bc.BoundaryConditionSpec(_wall_kind(mode))
    inflow = bc.BoundaryConditionSpec(bc.FARFIELD_CLASSICAL, prescribed=vortex_exact)
    return {
        "wall_inner": wall,
        "wall_outer": wall,
        "inflow": inflow,
        "outflow": inflow,
    }


def _subsonic_cylinder_bcs(mode):
    return {
        "cylinder": bc.BoundaryConditionSpec(_wall_kind(mode)),
        "farfield": bc.BoundaryConditionSpec(
            bc.RIEMANN, reference=(1.0, 1.0 / GAMMA, 0.3, (1.0, 0.0))
        ),
    }


def _shock_bcs(mode):
    return {
        "cylinder": bc.BoundaryConditionSpec(_wall_kind(mode)),
        "outer": bc.BoundaryConditionSpec(
            bc.FARFIELD_CLASSICAL, prescribed=moving_shock_state, static=False
        ),
    }


_CASES = {
    "manufactured2d": Case(
        name="manufactured2d",
        mesh_name="flower",
        geometry=BoundaryGeometry({"farfield": PolarCurve(1.0, 3.0)}),
        make_bcs=_manufactured_bcs,
        exact=manufactured_exact,
        source=euler.manufactured_source,
        downstream=lambda pts: pts[:, 0] + pts[:, 1],
    ),
    "vortex2d": Case(
        name="vortex2d",
        mesh_name="vortex_annulus",
        geometry=BoundaryGeometry(
            {
                "wall_inner": Circle((0.0, 0.0), VORTEX_RI),
                "wall_outer": Circle((0.0, 0.0), VORTEX_RO),
                "inflow": Straight(),
                "outflow": Straight(),
            }
        ),
        make_bcs=_vortex_bcs,
        exact=vortex_exact,
        downstream=lambda pts: -np.arctan2(pts[:, 1], pts[:, 0]),
    ),
    "subsonic_cylinder": Case(
        name="subsonic_cylinder",
        mesh_name="cylinder_subsonic",
        geometry=BoundaryGeometry(
            {
                "cylinder": Circle((0.0, 0.0), 1.0),
                "farfield": Circle((0.0, 0.0), 20.0),
            }
        ),
        make_bcs=_subsonic_cylinder_bcs,
        exact=freestream_m03,
        downstream=lambda pts: pts[:, 0],
    ),
    "shock_cylinder": Case(
        name="shock_cylinder",
        mesh_name="shock_cylinder",
        geometry=BoundaryGeometry(
            {
                "cylinder": Circle((0.0, 0.0), 0.5),
                "outer": Straight(),
            }
        ),
        make_bcs=_shock_bcs,
        exact=moving_shock_state,
        time_mode="ader",
    ),
}


def get_case(name):
    try:
        return _CASES[name]
    except KeyError:
        raise KeyError(f"unknown case {name!r}; have {sorted(_CASES)}") from None


def case_mesh(case, level=0):
    """Load the case's built-in mesh and refine it `level` times."""
    from .geometry import load_gmsh, refine_by_splitting

    mesh = load_gmsh(builtin_mesh_path(case.mesh_name))
    for _ in range(level):
        mesh = refine_by_splitting(mesh, case.geometry)
    return mesh
