"""Linear triangular meshes, connectivity, and the surrogate-to-true boundary map.

A mesh is a straight-sided triangulation whose boundary vertices lie on an
analytically described curve.  The polygonal boundary is the *surrogate*
boundary; each quadrature point on it is mapped to the *true* curve along the
curve normal, producing a distance vector d with x_true = x_surrogate + d.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "MeshFormatError",
    "MeshTopologyError",
    "GeometryError",
    "BoundaryGeometry",
    "Circle",
    "PolarCurve",
    "Straight",
    "SurrogateFacePoint",
    "load_gmsh",
    "refine_by_splitting",
    "map_to_true_boundary",
]


class MeshFormatError(Exception):
    pass


class MeshTopologyError(Exception):
    pass


class GeometryError(Exception):
    pass


@dataclass
class Mesh:
    """Triangulation with full face connectivity.

    nodes: (N, 2) coordinates.
    triangles: (T, 3) CCW node indices.
    interior_faces: (left elem, right elem, node a, node b) per row; the face
        normal (rotate b-a clockwise) points from left to right.
    boundary_faces: (elem, node a, node b, tag id) per row, (a, b) in the
        element's CCW order so the same rotation gives the outward normal.
    tag_names: physical-group id -> name.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    interior_faces: np.ndarray
    boundary_faces: np.ndarray
    tag_names: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.interior_faces, self.boundary_faces):
            arr.setflags(write=False)

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_elements(self):
        return len(self.triangles)

    def element_vertices(self):
        return self.nodes[self.triangles]

    def areas(self):
        v = self.element_vertices()
        return 0.5 * (
            (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
            - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1])
        )

    def edge_lengths(self):
        v = self.element_vertices()
        return np.stack(
            [np.linalg.norm(v[:, (i + 1) % 3] - v[:, i], axis=1) for i in range(3)], axis=1
        )

    def circumdiameters(self):
        le = self.edge_lengths()
        return le[:, 0] * le[:, 1] * le[:, 2] / (2.0 * self.areas())

    def indiameters(self):
        le = self.edge_lengths()
        return 4.0 * self.areas() / le.sum(axis=1)

    @property
    def h(self):
        """Characteristic mesh size: max circumscribed-circle diameter."""
        return float(self.circumdiameters().max())

    @property
    def h_min(self):
        """Smallest characteristic size (inscribed-circle diameter), for CFL."""
        return float(self.indiameters().min())

    def tag_id(self, name):
        for k, v in self.tag_names.items():
            if v == name:
                return k
        raise KeyError(f"no boundary tag named {name!r}; have {sorted(self.tag_names.values())}")


def build_mesh(nodes, triangles, boundary_lines, tag_names):
    """Assemble a Mesh from raw arrays, fixing orientation and deriving faces.

    boundary_lines: iterable of (n0, n1, tag).  Raises MeshTopologyError for
    orphan boundary lines, untagged boundary edges, or non-manifold edges.
    """
    nodes = np.asarray(nodes, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64).copy()
    v = nodes[tris]
    signed = 0.5 * (
        (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
        - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1])
    )
    if np.any(signed == 0.0):
        raise MeshTopologyError("degenerate (zero-area) triangle present")
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    # edge -> (element, local edge) uses; local edge k runs from vertex k to k+1
    edge_use = {}
    for e in range(len(tris)):
        for k in range(3):
            a, b = int(tris[e, k]), int(tris[e, (k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            edge_use.setdefault(key, []).append((e, a, b))
    for key, uses in edge_use.items():
        if len(uses) > 2:
            raise MeshTopologyError(f"edge {key} shared by {len(uses)} triangles")

    tag_of_edge = {}
    for n0, n1, tag in boundary_lines:
        key = (n0, n1) if n0 < n1 else (n1, n0)
        if key not in edge_use:
            raise MeshTopologyError(f"orphan boundary line {key}: no adjacent triangle")
        tag_of_edge[key] = tag

    interior = []
    boundary = []
    for key, uses in edge_use.items():
        if len(uses) == 2:
            (e0, a0, b0), (e1, _, _) = uses
            interior.append((e0, e1, a0, b0))
        else:
            (e0, a0, b0) = uses[0]
            if key not in tag_of_edge:
                raise MeshTopologyError(f"boundary edge {key} has no physical tag")
            boundary.append((e0, a0, b0, tag_of_edge[key]))

    interior = np.asarray(interior, dtype=np.int64).reshape(-1, 4)
    boundary = np.asarray(boundary, dtype=np.int64).reshape(-1, 4)
    return Mesh(nodes, tris, interior, boundary, dict(tag_names))


# ---------------------------------------------------------------------------
# Gmsh MSH reader (ASCII v2.2 and v4.1)
# ---------------------------------------------------------------------------

_GMSH_LINE = 1
_GMSH_TRIANGLE = 2
_GMSH_POINT = 15


def load_gmsh(path):
    """Read an ASCII Gmsh MSH file (v2.2 or v4.1) into a Mesh.

    Boundary tags come from physical group names of the 1D entities.
    """
    with open(path) as f:
        lines = f.read().splitlines()

    sections = {}
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        if s.startswith("$") and not s.startswith("$End"):
            name = s[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != f"$End{name}":
                j += 1
            if j == len(lines):
                raise MeshFormatError(f"line {i + 1}: unterminated section ${name}")
            sections[name] = (i + 1, lines[i + 1 : j])
            i = j + 1
        else:
            i += 1

    if "MeshFormat" not in sections:
        raise MeshFormatError("line 1: missing $MeshFormat section")
    start, body = sections["MeshFormat"]
    fields = body[0].split()
    version = fields[0]
    if fields[1] != "0":
        raise MeshFormatError(f"line {start + 1}: binary MSH files are not supported")

    tag_names = {}
    if "PhysicalNames" in sections:
        start, body = sections["PhysicalNames"]
        n = int(body[0])
        for k in range(n):
            parts = body[1 + k].split(None, 2)
            dim, num = int(parts[0]), int(parts[1])
            name = parts[2].strip().strip('"')
            if dim == 1:
                tag_names[num] = name

    if version.startswith("2"):
        nodes, tris, blines = _parse_v2(sections)
    elif version.startswith("4"):
        nodes, tris, blines = _parse_v41(sections)
    else:
        raise MeshFormatError(f"unsupported MSH version {version}")
    return build_mesh(nodes, tris, blines, tag_names)


def _parse_v2(sections):
    start, body = sections["Nodes"]
    n = int(body[0])
    ids = np.empty(n, dtype=np.int64)
    xyz = np.empty((n, 2))
    for k in range(n):
        parts = body[1 + k].split()
        ids[k] = int(parts[0])
        xyz[k] = float(parts[1]), float(parts[2])
    remap = {int(i): k for k, i in enumerate(ids)}

    start, body = sections["Elements"]
    n = int(body[0])
    tris = []
    blines = []
    for k in range(n):
        lineno = start + 2 + k
        parts = [int(x) for x in body[1 + k].split()]
        etype = parts[1]
        ntags = parts[2]
        tags = parts[3 : 3 + ntags]
        conn = parts[3 + ntags :]
        phys = tags[0] if tags else 0
        if etype == _GMSH_TRIANGLE:
            tris.append([remap[c] for c in conn])
        elif etype == _GMSH_LINE:
            blines.append((remap[conn[0]], remap[conn[1]], phys))
        elif etype == _GMSH_POINT:
            continue
        else:
            raise MeshFormatError(f"line {lineno}: unsupported element type {etype}")
    return xyz, np.asarray(tris), blines


def _parse_v41(sections):
    # entity (dim, tag) -> physical id
    phys_of_entity = {}
    if "Entities" in sections:
        start, body = sections["Entities"]
        counts = [int(x) for x in body[0].split()]
        row = 1
        for dim, cnt in enumerate(counts):
            for _ in range(cnt):
                parts = body[row].split()
                tag = int(parts[0])
                # points: tag x y z nphys ...; others: tag 6 bbox floats nphys ...
                off = 4 if dim == 0 else 7
                nphys = int(parts[off])
                if nphys > 0:
                    phys_of_entity[(dim, tag)] = int(parts[off + 1])
                row += 1

    start, body = sections["Nodes"]
    header = [int(x) for x in body[0].split()]
    nblocks, nnodes = header[0], header[1]
    ids = []
    coords = []
    row = 1
    for _ in range(nblocks):
        _dim, _etag, _param, nb = (int(x) for x in body[row].split())
        row += 1
        btags = [int(body[row + k]) for k in range(nb)]
        row += nb
        for k in range(nb):
            parts = body[row + k].split()
            coords.append((float(parts[0]), float(parts[1])))
            ids.append(btags[k])
        row += nb
    remap = {i: k for k, i in enumerate(ids)}
    xyz = np.asarray(coords)

    start, body = sections["Elements"]
    header = [int(x) for x in body[0].split()]
    nblocks = header[0]
    tris = []
    blines = []
    row = 1
    for _ in range(nblocks):
        lineno = start + 1 + row
        dim, etag, etype, nb = (int(x) for x in body[row].split())
        row += 1
        phys = phys_of_entity.get((dim, etag), 0)
        for k in range(nb):
            parts = [int(x) for x in body[row + k].split()]
            conn = parts[1:]
            if etype == _GMSH_TRIANGLE:
                tris.append([remap[c] for c in conn])
            elif etype == _GMSH_LINE:
                blines.append((remap[conn[0]], remap[conn[1]], phys))
            elif etype == _GMSH_POINT:
                continue
            else:
                raise MeshFormatError(f"line {lineno}: unsupported element type {etype}")
        row += nb
    return xyz, np.asarray(tris), blines


def write_gmsh_v2(path, nodes, triangles, boundary_lines, tag_names):
    """Write an ASCII MSH v2.2 file (used for the shipped built-in meshes)."""
    with open(path, "w") as f:
        f.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        if tag_names:
            f.write("$PhysicalNames\n%d\n" % len(tag_names))
            for num, name in sorted(tag_names.items()):
                f.write('1 %d "%s"\n' % (num, name))
            f.write("$EndPhysicalNames\n")
        f.write("$Nodes\n%d\n" % len(nodes))
        for i, (x, y) in enumerate(nodes):
            f.write("%d %.17g %.17g 0\n" % (i + 1, x, y))
        f.write("$EndNodes\n$Elements\n%d\n" % (len(boundary_lines) + len(triangles)))
        eid = 1
        for a, b, tag in boundary_lines:
            f.write("%d 1 2 %d %d %d %d\n" % (eid, tag, tag, a + 1, b + 1))
            eid += 1
        for a, b, c in triangles:
            f.write("%d 2 2 0 0 %d %d %d\n" % (eid, a + 1, b + 1, c + 1))
            eid += 1
        f.write("$EndElements\n")


# ---------------------------------------------------------------------------
# Analytic boundary descriptors and the map to the true boundary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")


@dataclass(frozen=True)
class PolarCurve:
    """r(theta) = r0 (1 + sin(alpha*theta) / 10)."""

    r0: float
    alpha: float

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")

    def radius(self, theta):
        return self.r0 * (1.0 + 0.1 * np.sin(self.alpha * theta))

    def point(self, theta):
        r = self.radius(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def tangent(self, theta):
        r = self.radius(theta)
        dr = 0.1 * self.r0 * self.alpha * np.cos(self.alpha * theta)
        ct, st = np.cos(theta), np.sin(theta)
        return np.stack([dr * ct - r * st, dr * st + r * ct], axis=-1)

    def second(self, theta):
        r = self.radius(theta)
        dr = 0.1 * self.r0 * self.alpha * np.cos(self.alpha * theta)
        ddr = -0.1 * self.r0 * self.alpha**2 * np.sin(self.alpha * theta)
        ct, st = np.cos(theta), np.sin(theta)
        return np.stack(
            [ddr * ct - 2 * dr * st - r * ct, ddr * st + 2 * dr * ct - r * st], axis=-1
        )


@dataclass(frozen=True)
class Straight:
    pass


@dataclass(frozen=True)
class SurrogateFacePoint:
    """One boundary quadrature point with its mapped true-boundary data."""

    xtilde: np.ndarray  # point on the surrogate boundary
    ntilde: np.ndarray  # unit outward surrogate normal
    x: np.ndarray  # mapped point on the true boundary
    n: np.ndarray  # unit outward true normal at x
    d: np.ndarray  # distance vector x - xtilde
    weight: float = 0.0


@dataclass
class BoundaryGeometry:
    """Tagged analytic boundary descriptors plus per-tag wall speeds."""

    descriptors: dict
    wall_speed: dict = field(default_factory=dict)

    def descriptor(self, tag_name):
        try:
            return self.descriptors[tag_name]
        except KeyError:
            raise KeyError(f"boundary tag {tag_name!r} has no geometry descriptor") from None

    def speed(self, tag_name):
        return self.wall_speed.get(tag_name, 0.0)


def _orient(n, ntilde):
    if ntilde is None:
        return n
    flip = np.sum(n * ntilde, axis=-1) < 0
    return np.where(flip[..., None], -n, n)


def project_polar(descr, pts, tol=1e-12, maxit=50):
    """Newton solve of (x - X(theta)) . X'(theta) = 0 for each point.

    Falls back to a golden-section search on the squared distance when
    Newton fails; raises GeometryError if that also fails to converge.
    """
    pts = np.atleast_2d(pts)
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    for _ in range(maxit):
        X = descr.point(theta)
        T = descr.tangent(theta)
        S = descr.second(theta)
        r = pts - X
        g = np.sum(r * T, axis=-1)
        gp = -np.sum(T * T, axis=-1) + np.sum(r * S, axis=-1)
        step = g / gp
        theta = theta - step
        if np.max(np.abs(step)) < tol:
            break
    X = descr.point(theta)
    T = descr.tangent(theta)
    bad = np.abs(np.sum((pts - X) * T, axis=-1)) > 1e-9 * np.maximum(
        1.0, np.sum(T * T, axis=-1)
    )
    if np.any(bad):
        for i in np.nonzero(bad)[0]:
            theta[i] = _golden_section(descr, pts[i])
        X = descr.point(theta)
        T = descr.tangent(theta)
        res = np.abs(np.sum((pts - X) * T, axis=-1))
        if np.any(res > 1e-8):
            i = int(np.argmax(res))
            raise GeometryError(
                f"boundary projection failed at {pts[i]}, residual {res[i]:.3e}"
            )
    return theta


def _golden_section(descr, p, halfwidth=0.7, tol=1e-14, maxit=200):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    t0 = np.arctan2(p[1], p[0])
    a, b = t0 - halfwidth, t0 + halfwidth

    def dist2(t):
        q = descr.point(np.asarray(t))
        return float(np.sum((q - p) ** 2))

    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = dist2(c), dist2(d)
    for _ in range(maxit):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = dist2(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = dist2(d)
        if abs(b - a) < tol:
            break
    return 0.5 * (a + b)


def map_points(descr, pts, ntilde=None):
    """Vectorized boundary map: returns (x, n, d) arrays for points on the
    surrogate boundary.  ntilde (broadcastable to pts) orients the normal."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if isinstance(descr, Straight):
        n = np.broadcast_to(ntilde, pts.shape).astype(float)
        return pts.copy(), n.copy(), np.zeros_like(pts)
    if isinstance(descr, Circle):
        v = pts - np.asarray(descr.center)
        dist = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(dist == 0):
            raise GeometryError("cannot project the circle center")
        radial = v / dist
        x = np.asarray(descr.center) + descr.radius * radial
        n = _orient(radial, ntilde)
        return x, n, x - pts
    if isinstance(descr, PolarCurve):
        theta = project_polar(descr, pts)
        x = descr.point(theta)
        T = descr.tangent(theta)
        that = T / np.linalg.norm(T, axis=-1, keepdims=True)
        n = np.stack([that[..., 1], -that[..., 0]], axis=-1)  # outward for CCW curves
        n = _orient(n, ntilde)
        return x, n, x - pts
    raise TypeError(f"unknown boundary descriptor {type(descr).__name__}")


def map_to_true_boundary(xtilde, descr, ntilde=None, weight=0.0):
    """Map one surrogate-boundary point to the true boundary (see map_points)."""
    xtilde = np.asarray(xtilde, dtype=float)
    nt = None if ntilde is None else np.atleast_2d(np.asarray(ntilde, dtype=float))
    x, n, d = map_points(descr, xtilde[None, :], nt)
    return SurrogateFacePoint(
        xtilde=xtilde, ntilde=None if ntilde is None else np.asarray(ntilde, dtype=float),
        x=xtilde + d[0], n=n[0], d=d[0], weight=weight,
    )


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


def refine_by_splitting(mesh, geometry=None):
    """Split every triangle into 4 children through the edge midpoints.

    When a BoundaryGeometry is given, midpoints of curved boundary faces are
    projected onto the true curve, so the surrogate gap keeps shrinking like
    h^2 across the refined sequence.  Interior splits are exact midpoints.
    """
    nodes = list(map(tuple, mesh.nodes))
    nnodes = len(nodes)
    midpoint = {}

    curved = {}
    if geometry is not None:
        for tag, name in mesh.tag_names.items():
            descr = geometry.descriptors.get(name)
            if descr is not None and not isinstance(descr, Straight):
                curved[tag] = descr
    boundary_tag = {}
    for e, a, b, tag in mesh.boundary_faces:
        key = (min(a, b), max(a, b))
        boundary_tag[key] = tag

    new_xy = []

    def midpoint_index(a, b):
        nonlocal nnodes
        key = (min(a, b), max(a, b))
        if key in midpoint:
            return midpoint[key]
        p = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
        tag = boundary_tag.get(key)
        if tag is not None and int(tag) in curved:
            x, _, _ = map_points(curved[int(tag)], p[None, :])
            p = x[0]
        midpoint[key] = nnodes
        new_xy.append(p)
        nnodes += 1
        return midpoint[key]

    tris = []
    for a, b, c in mesh.triangles:
        mab = midpoint_index(a, b)
        mbc = midpoint_index(b, c)
        mca = midpoint_index(c, a)
        tris.extend([(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)])

    blines = []
    for e, a, b, tag in mesh.boundary_faces:
        m = midpoint[(min(a, b), max(a, b))]
        blines.append((a, m, tag))
        blines.append((m, b, tag))

    all_nodes = np.vstack([mesh.nodes, np.asarray(new_xy).reshape(-1, 2)])
    return build_mesh(all_nodes, np.asarray(tris), blines, mesh.tag_names)
