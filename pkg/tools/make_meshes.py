#!/usr/bin/env python3
"""Generate the built-in level-0 meshes shipped with the package.

Run from the repository root:

    python3 tools/make_meshes.py

Writes ASCII Gmsh v2.2 files into src/shiftdg/meshes/.  The generators are
deterministic (fixed seeds), so the shipped files are reproducible.
"""

import sys
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from shiftdg.geometry import build_mesh, write_gmsh_v2  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "src" / "shiftdg" / "meshes"


def stitch_rings(inner_idx, inner_ang, outer_idx, outer_ang):
    """Triangulate the band between two concentric rings by angular merge."""
    tris = []
    m, M = len(inner_idx), len(outer_idx)
    i = j = 0
    # walk both rings once around
    while i < m or j < M:
        ia = inner_ang[i % m] + 2 * np.pi * (i // m)
        ja = outer_ang[j % M] + 2 * np.pi * (j // M)
        inext = inner_ang[(i + 1) % m] + 2 * np.pi * ((i + 1) // m)
        jnext = outer_ang[(j + 1) % M] + 2 * np.pi * ((j + 1) // M)
        if j >= M or (i < m and inext <= jnext):
            tris.append((inner_idx[i % m], inner_idx[(i + 1) % m], outer_idx[j % M]))
            i += 1
        else:
            tris.append((outer_idx[(j + 1) % M], outer_idx[j % M], inner_idx[i % m]))
            j += 1
    return tris


def flower_mesh():
    """Star-shaped domain bounded by r(t) = 1 + 0.1 sin(3t); ~61 nodes, ~98 tris."""

    def radius(t):
        return 1.0 + 0.1 * np.sin(3.0 * t)

    ring_counts = [6, 12, 18, 24]
    fractions = [0.25, 0.5, 0.75, 1.0]
    nodes = [(0.0, 0.0)]
    ring_idx = []
    ring_ang = []
    for cnt, frac in zip(ring_counts, fractions):
        ang = 2 * np.pi * np.arange(cnt) / cnt
        idx = []
        for t in ang:
            r = frac * radius(t)
            idx.append(len(nodes))
            nodes.append((r * np.cos(t), r * np.sin(t)))
        ring_idx.append(np.array(idx))
        ring_ang.append(ang)

    tris = [(0, ring_idx[0][k], ring_idx[0][(k + 1) % 6]) for k in range(6)]
    for k in range(len(ring_counts) - 1):
        tris += stitch_rings(ring_idx[k], ring_ang[k], ring_idx[k + 1], ring_ang[k + 1])

    outer = ring_idx[-1]
    blines = [(outer[k], outer[(k + 1) % len(outer)], 1) for k in range(len(outer))]
    return np.asarray(nodes), np.asarray(tris), blines, {1: "farfield"}


def vortex_mesh(seed=11, r_i=1.0, r_o=1.384):
    """Isotropic quarter annulus in the first quadrant; ~238 nodes, ~376 tris.

    Isotropy matters here: the wall-fit gap of the polygonal boundary is what
    the slip-wall corrections are tested against, and a structured mesh with
    fine angular spacing would understate it.
    """
    h0 = 0.0614

    def fd(p):
        ring = np.maximum(dcircle(p, 0, 0, r_o), -dcircle(p, 0, 0, r_i))
        return np.maximum(ring, np.maximum(-p[:, 0], -p[:, 1]))

    pfix = np.array([[r_i, 0.0], [r_o, 0.0], [0.0, r_i], [0.0, r_o]])
    p, tris = distmesh(fd, lambda q: np.ones(len(q)), h0, (0, r_o, 0, r_o), pfix, seed=seed)
    classifiers = [
        (1, lambda q: abs(np.hypot(*q) - r_i), lambda q: r_i * q / np.hypot(*q)),
        (2, lambda q: abs(np.hypot(*q) - r_o), lambda q: r_o * q / np.hypot(*q)),
        (3, lambda q: abs(q[0]), lambda q: np.array([0.0, q[1]])),  # inflow x=0
        (4, lambda q: abs(q[1]), lambda q: np.array([q[0], 0.0])),  # outflow y=0
    ]
    blines = snap_and_tag(p, tris, classifiers, tol=0.25 * h0)
    names = {1: "wall_inner", 2: "wall_outer", 3: "inflow", 4: "outflow"}
    return p, tris, blines, names


# ---------------------------------------------------------------------------
# distmesh-style generator for the two cylinder meshes
# ---------------------------------------------------------------------------


def dcircle(p, cx, cy, r):
    return np.hypot(p[:, 0] - cx, p[:, 1] - cy) - r


def drectangle(p, x1, x2, y1, y2):
    return -np.minimum(
        np.minimum(np.minimum(-y1 + p[:, 1], y2 - p[:, 1]), -x1 + p[:, 0]), x2 - p[:, 0]
    )


def ddiff(d1, d2):
    return np.maximum(d1, -d2)


def distmesh(fd, fh, h0, bbox, pfix, seed=0, maxit=400):
    rng = np.random.default_rng(seed)
    x1, x2, y1, y2 = bbox
    geps = 0.001 * h0
    deps = np.sqrt(np.finfo(float).eps) * h0
    # hex-packed candidate points
    xs = np.arange(x1, x2 + h0, h0)
    ys = np.arange(y1, y2 + h0 * np.sqrt(3) / 2, h0 * np.sqrt(3) / 2)
    X, Y = np.meshgrid(xs, ys)
    X[1::2] += h0 / 2
    p = np.column_stack([X.ravel(), Y.ravel()])
    p = p[fd(p) < geps]
    r0 = 1.0 / fh(p) ** 2
    p = p[rng.random(len(p)) < r0 / r0.max()]
    if len(pfix):
        p = np.vstack([pfix, p])
    nfix = len(pfix)

    pold = np.full_like(p, np.inf)
    for it in range(maxit):
        if np.max(np.hypot(*(p - pold).T)) > 0.1 * h0:
            pold = p.copy()
            tri = Delaunay(p).simplices
            cent = p[tri].mean(axis=1)
            tri = tri[fd(cent) < -geps]
            bars = np.unique(np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1), axis=0)
        vec = p[bars[:, 0]] - p[bars[:, 1]]
        L = np.hypot(vec[:, 0], vec[:, 1])
        mid = 0.5 * (p[bars[:, 0]] + p[bars[:, 1]])
        hbars = fh(mid)
        L0 = hbars * 1.2 * np.sqrt((L**2).sum() / (hbars**2).sum())
        F = np.maximum(L0 - L, 0.0)
        Fvec = (F / L)[:, None] * vec
        move = np.zeros_like(p)
        np.add.at(move, bars[:, 0], Fvec)
        np.add.at(move, bars[:, 1], -Fvec)
        move[:nfix] = 0.0
        p = p + 0.2 * move
        # project escaped points back onto the boundary
        d = fd(p)
        out = d > 0
        if np.any(out):
            dgx = (fd(p[out] + [deps, 0]) - d[out]) / deps
            dgy = (fd(p[out] + [0, deps]) - d[out]) / deps
            norm = dgx**2 + dgy**2
            p[out] -= np.column_stack([d[out] * dgx / norm, d[out] * dgy / norm])
        interior = d < -geps
        if len(p[interior]) and np.max(np.hypot(*((0.2 * move)[interior]).T)) < 1e-3 * h0:
            break

    # final triangulation + light Laplacian smoothing of interior nodes
    for _ in range(3):
        tri = Delaunay(p).simplices
        cent = p[tri].mean(axis=1)
        tri = tri[fd(cent) < -geps]
        nbr_sum = np.zeros_like(p)
        nbr_cnt = np.zeros(len(p))
        bars = np.unique(np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1), axis=0)
        np.add.at(nbr_sum, bars[:, 0], p[bars[:, 1]])
        np.add.at(nbr_sum, bars[:, 1], p[bars[:, 0]])
        np.add.at(nbr_cnt, bars[:, 0], 1)
        np.add.at(nbr_cnt, bars[:, 1], 1)
        d = fd(p)
        keep = (d < -geps) & (nbr_cnt > 0)
        keep[:nfix] = False
        p[keep] = nbr_sum[keep] / nbr_cnt[keep, None]
    tri = Delaunay(p).simplices
    cent = p[tri].mean(axis=1)
    tri = tri[fd(cent) < -geps]
    used = np.unique(tri)
    remap = -np.ones(len(p), dtype=int)
    remap[used] = np.arange(len(used))
    return p[used], remap[tri]


def boundary_edges(tris):
    edges = {}
    for t in tris:
        for k in range(3):
            a, b = int(t[k]), int(t[(k + 1) % 3])
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    return [k for k, cnt in edges.items() if cnt == 1]


def snap_and_tag(p, tris, classifiers, tol):
    """Project boundary nodes onto their nearest curve and tag boundary edges.

    classifiers: list of (tag, distance_fn, snap_fn).  Nodes snap to the
    closest curve (corners sit on two curves and either snap is exact);
    edges are tagged by the classifier closest to their midpoint.
    """
    bedges = boundary_edges(tris)
    bnodes = sorted({n for e in bedges for n in e})
    for n in bnodes:
        dists = [dist_fn(p[n]) for _, dist_fn, _ in classifiers]
        k = int(np.argmin(dists))
        if dists[k] > tol:
            raise RuntimeError(f"boundary node {p[n]} is {dists[k]:.3g} from any curve")
        p[n] = classifiers[k][2](p[n])
    blines = []
    for a, b in bedges:
        mid = 0.5 * (p[a] + p[b])
        k = int(np.argmin([dist_fn(mid) for _, dist_fn, _ in classifiers]))
        blines.append((a, b, classifiers[k][0]))
    return blines


def cylinder_subsonic_mesh(seed=7):
    """Unstructured graded ring 1 <= r <= 20; ~1096 nodes, ~2087 triangles."""
    h0 = 0.1385

    def fd(p):
        return ddiff(dcircle(p, 0, 0, 20.0), dcircle(p, 0, 0, 1.0))

    def fh(p):
        return np.maximum(np.hypot(p[:, 0], p[:, 1]), 1.0)

    # candidate grid scaled by the size function needs a fine bbox grid
    p, tris = distmesh(fd, lambda q: h0 * fh(q), h0, (-20, 20, -20, 20), np.zeros((0, 2)), seed=seed)
    classifiers = [
        (1, lambda q: abs(np.hypot(*q) - 1.0), lambda q: q / np.hypot(*q)),
        (2, lambda q: abs(np.hypot(*q) - 20.0), lambda q: 20.0 * q / np.hypot(*q)),
    ]
    blines = snap_and_tag(p, tris, classifiers, tol=1.5)
    return p, tris, blines, {1: "cylinder", 2: "farfield"}


def shock_cylinder_mesh(seed=3):
    """Rectangle [-2,6]x[-3,3] minus the r=0.5 disk; ~7.8k nodes, ~15.2k tris."""
    h0 = 0.0851

    def fd(p):
        return ddiff(drectangle(p, -2, 6, -3, 3), dcircle(p, 0, 0, 0.5))

    pfix = np.array([[-2, -3], [6, -3], [6, 3], [-2, 3]], dtype=float)
    p, tris = distmesh(fd, lambda q: np.ones(len(q)), h0, (-2, 6, -3, 3), pfix, seed=seed)

    def box_dist(q):
        return min(abs(q[0] + 2), abs(q[0] - 6), abs(q[1] + 3), abs(q[1] - 3))

    def snap_box(q):
        q = q.copy()
        side = np.argmin([abs(q[0] + 2), abs(q[0] - 6), abs(q[1] + 3), abs(q[1] - 3)])
        if side == 0:
            q[0] = -2
        elif side == 1:
            q[0] = 6
        elif side == 2:
            q[1] = -3
        else:
            q[1] = 3
        return q

    classifiers = [
        (1, lambda q: abs(np.hypot(*q) - 0.5), lambda q: 0.5 * q / np.hypot(*q)),
        (2, box_dist, snap_box),
    ]
    blines = snap_and_tag(p, tris, classifiers, tol=0.05)
    return p, tris, blines, {1: "cylinder", 2: "outer"}


def report(name, nodes, tris, blines, names):
    mesh = build_mesh(nodes, tris, blines, names)
    areas = mesh.areas()
    q = mesh.indiameters() / mesh.circumdiameters()
    print(
        f"{name}: {mesh.num_nodes} nodes, {mesh.num_elements} tris, "
        f"h={mesh.h:.4f}, h_min={mesh.h_min:.4f}, min quality={q.min():.3f}"
    )
    assert np.all(areas > 0)
    return mesh


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, builder in [
        ("flower", flower_mesh),
        ("vortex_annulus", vortex_mesh),
        ("cylinder_subsonic", cylinder_subsonic_mesh),
        ("shock_cylinder", shock_cylinder_mesh),
    ]:
        nodes, tris, blines, names = builder()
        mesh = report(name, nodes, tris, blines, names)
        write_gmsh_v2(OUT / f"{name}.msh", mesh.nodes, mesh.triangles,
                      [(a, b, t) for _, a, b, t in mesh.boundary_faces], names)
        print(f"  -> {OUT / (name + '.msh')}")


if __name__ == "__main__":
    main()
