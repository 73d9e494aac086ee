"""Topological-disk patches and the energy-minimizing disk parameterization.

Pipeline: extract a triangulated disk patch from a ball of a surface sample,
flatten it harmonically onto the unit disk with an arc-length boundary trace,
pin three boundary points to the cube roots of unity with a disk Moebius
map, and evaluate the conformal diagnostics: log conformal factor,
quasi-symmetry ratios, scaled-isometry affine fits, dyadic BMO / A2 /
inverse-Hoelder statistics, large Lipschitz pieces, curvature-equation
residuals, and isoperimetric ratios of Jordan cycles.

Conventions
-----------
* The parameterization maps unit-disk mesh vertices to the original patch
  points; the harmonic solve determines the disk positions (patch -> disk
  per coordinate, then read inversely), so vertices never leave the sample.
* The log conformal factor w is defined by ``e^{2w} = |det grad f|`` (the
  Jacobian area factor), so the pullback metric is ``e^{2w} (dx^2 + dy^2)``
  for near-conformal maps.
* Dyadic squares live on the parameter disk.  A square is admissible when
  it holds at least ``min_square_triangles`` triangle centroids and those
  triangles cover at least ``square_coverage`` of its area, which skips
  squares straddling the mesh boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.sparse.linalg import splu
from scipy.spatial import Delaunay, cKDTree

from .config import DEFAULT_CONFIG, AnalysisConfig
from .curvature import CurvatureField
from .errors import (
    DegenerateTriangle,
    DisconnectedPatch,
    FoldedTriangles,
    MissingCurvature,
    NoBoundaryCycle,
    NotDiskTopology,
    NotJordan,
    RankDeficient,
    SolverSingular,
    TooFewPoints,
)
from .geometry import WeightedSurfaceSample, fit_plane_pca
from .meshing import (
    angle_defects,
    cotangent_laplacian,
    edge_face_counts,
    triangle_areas,
    vertex_areas,
)

__all__ = [
    "AffineFit",
    "ConformalDiagnostics",
    "ConformalFactor",
    "CurvatureResiduals",
    "DiskMesh",
    "DiskParameterization",
    "DiskPatch",
    "DyadicSquare",
    "LipschitzPieces",
    "QuasisymmetryTable",
    "a2_constant",
    "bmo_norm",
    "conformal_diagnostics",
    "conformal_factor",
    "curvature_equation_residuals",
    "dyadic_squares",
    "extract_disk_patch",
    "harmonic_disk_param",
    "intrinsic_metric_diagnostics",
    "inverse_holder_check",
    "inverse_holder_max",
    "isoperimetric_check",
    "large_lipschitz_pieces",
    "mobius_reparameterized",
    "parameter_domain_svg",
    "quasisymmetry_table",
    "refine_disk_patch",
    "semmes_affine_fit",
    "waypoint_cycle",
]


# ---------------------------------------------------------------------------
# disk patch


@dataclass(eq=False)
class DiskPatch:
    """Edge-connected triangulated patch with disk topology.

    Attributes
    ----------
    points : ndarray, shape (k, n)
        Vertex positions in the ambient space.
    triangles : ndarray, shape (t, 3)
        Vertex triples, counterclockwise in ``plane_coords``.
    boundary : ndarray
        The single boundary cycle, counterclockwise in ``plane_coords``.
    plane_coords : ndarray, shape (k, 2)
        Reference-plane coordinates used for the triangulation.
    plane_basis, plane_origin : ndarray
        The reference plane behind ``plane_coords``.
    center : ndarray
        Ball center the patch was extracted around.
    sigma : float
        Ball radius.
    psi : float
        Measured inclusion margin: every sample point within
        ``(1 - psi) * sigma`` of the center is a patch vertex.
    spacing : float
        Mean sample spacing at extraction time.
    metric_radius : float
        Neighborhood-graph radius for intrinsic shortest paths.
    sample_rows : ndarray
        Source sample row per vertex, -1 for vertices created later
        (e.g. by refinement).
    boundary_chord_arc : float
        Measured constant C in  minor-arc(x, y) <= C sqrt(sigma |x - y|)
        over boundary pairs.
    """

    points: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    plane_coords: np.ndarray
    plane_basis: np.ndarray
    plane_origin: np.ndarray
    center: np.ndarray
    sigma: float
    psi: float
    spacing: float
    metric_radius: float
    sample_rows: np.ndarray
    boundary_chord_arc: float
    _skeleton: sparse.csr_matrix | None = field(default=None, repr=False)
    _metric: sparse.csr_matrix | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def euler_characteristic(self) -> int:
        edges = edge_face_counts(self.triangles)
        return len(self.points) - len(edges) + len(self.triangles)

    def surface_triangle_areas(self) -> np.ndarray:
        return triangle_areas(self.points, self.triangles)

    def skeleton_graph(self) -> sparse.csr_matrix:
        """Symmetric edge graph of the triangulation, weighted by length."""
        if self._skeleton is None:
            edges = np.unique(
                np.sort(
                    np.concatenate(
                        [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                         self.triangles[:, [2, 0]]]
                    ),
                    axis=1,
                ),
                axis=0,
            )
            self._skeleton = _length_graph(self.points, edges)
        return self._skeleton

    def metric_graph(self) -> sparse.csr_matrix:
        """Neighborhood graph (radius ``metric_radius``) plus the skeleton."""
        if self._metric is None:
            tree = cKDTree(self.points)
            pairs = tree.query_pairs(self.metric_radius, output_type="ndarray")
            edges = np.unique(
                np.sort(
                    np.concatenate(
                        [pairs.reshape(-1, 2),
                         self.triangles[:, [0, 1]],
                         self.triangles[:, [1, 2]],
                         self.triangles[:, [2, 0]]]
                    ),
                    axis=1,
                ),
                axis=0,
            )
            graph = _length_graph(self.points, edges)
            if connected_components(graph, directed=False)[0] != 1:
                raise DisconnectedPatch("patch neighborhood graph is disconnected")
            self._metric = graph
        return self._metric

    @classmethod
    def from_mesh(
        cls,
        points,
        triangles,
        *,
        plane_coords=None,
        center=None,
        sigma: float | None = None,
        spacing: float | None = None,
        metric_radius_mult: float = 4.0,
    ) -> "DiskPatch":
        """Wrap an explicit triangle mesh, validating disk topology.

        ``plane_coords`` defaults to the first two ambient coordinates.
        """
        pts = np.asarray(points, dtype=float)
        tris = np.asarray(triangles, dtype=int)
        coords = (
            pts[:, :2].copy()
            if plane_coords is None
            else np.asarray(plane_coords, dtype=float)
        )
        tris, boundary = _disk_complex(coords, tris, len(pts))
        ctr = (
            pts.mean(axis=0) if center is None else np.asarray(center, dtype=float)
        )
        sig = (
            float(np.linalg.norm(pts - ctr, axis=1).max())
            if sigma is None
            else float(sigma)
        )
        if spacing is None:
            seg = pts[tris[:, 1]] - pts[tris[:, 0]]
            spacing = float(np.median(np.linalg.norm(seg, axis=1)))
        bd_r = np.linalg.norm(pts[boundary] - ctr, axis=1)
        psi = float(np.clip(1.0 - bd_r.min() / sig, 0.0, 1.0)) if sig > 0 else 0.0
        basis = np.zeros((2, pts.shape[1]))
        basis[0, 0] = 1.0
        basis[1, 1] = 1.0
        return cls(
            points=pts,
            triangles=tris,
            boundary=boundary,
            plane_coords=coords,
            plane_basis=basis,
            plane_origin=np.zeros(pts.shape[1]),
            center=ctr,
            sigma=sig,
            psi=psi,
            spacing=float(spacing),
            metric_radius=metric_radius_mult * float(spacing),
            sample_rows=np.full(len(pts), -1, dtype=int),
            boundary_chord_arc=_boundary_chord_arc(pts, boundary, sig),
        )


def _length_graph(points: np.ndarray, edges: np.ndarray) -> sparse.csr_matrix:
    lengths = np.linalg.norm(points[edges[:, 0]] - points[edges[:, 1]], axis=1)
    k = len(points)
    graph = sparse.coo_matrix(
        (
            np.concatenate([lengths, lengths]),
            (
                np.concatenate([edges[:, 0], edges[:, 1]]),
                np.concatenate([edges[:, 1], edges[:, 0]]),
            ),
        ),
        shape=(k, k),
    )
    return graph.tocsr()


def _orient_ccw(coords: np.ndarray, tris: np.ndarray) -> np.ndarray:
    e1 = coords[tris[:, 1]] - coords[tris[:, 0]]
    e2 = coords[tris[:, 2]] - coords[tris[:, 0]]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    out = tris.copy()
    flip = det < 0
    out[flip, 1], out[flip, 2] = tris[flip, 2], tris[flip, 1]
    return out


def _disk_complex(coords: np.ndarray, tris: np.ndarray, n_vertices: int):
    """Validate that the triangle set is a disk; return (ccw tris, boundary).

    Checks: every vertex is used, edges are shared by at most two triangles,
    every vertex link is a single fan, Euler characteristic is one, and the
    boundary is a single cycle.
    """
    if len(tris) == 0:
        raise NotDiskTopology("no triangles survive in the patch")
    used = np.unique(tris)
    if len(used) != n_vertices:
        raise NotDiskTopology(
            f"{n_vertices - len(used)} vertices are not in any triangle"
        )
    tris = _orient_ccw(coords, tris)

    counts: dict = {}
    for a, b, c in tris:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(int(u), int(v)), max(int(u), int(v)))
            counts[key] = counts.get(key, 0) + 1
    if any(c > 2 for c in counts.values()):
        raise NotDiskTopology("an edge is shared by more than two triangles")

    # single-fan check per vertex: triangles around a vertex must be
    # connected through the edges containing that vertex
    vert_tris: list = [[] for _ in range(n_vertices)]
    for t, (a, b, c) in enumerate(tris):
        vert_tris[int(a)].append(t)
        vert_tris[int(b)].append(t)
        vert_tris[int(c)].append(t)
    tri_rows = [tuple(int(x) for x in row) for row in tris]
    for v, tlist in enumerate(vert_tris):
        if len(tlist) <= 1:
            continue
        edge_map: dict = {}
        for t in tlist:
            row = tri_rows[t]
            others = [x for x in row if x != v]
            for w in others:
                edge_map.setdefault(w, []).append(t)
        # BFS over triangles joined by shared v-edges
        seen = {tlist[0]}
        stack = [tlist[0]]
        while stack:
            t = stack.pop()
            row = tri_rows[t]
            for w in row:
                if w == v:
                    continue
                for s in edge_map[w]:
                    if s not in seen:
                        seen.add(s)
                        stack.append(s)
        if len(seen) != len(tlist):
            raise NotDiskTopology(f"pinched vertex {v}: link is not a single fan")

    euler = n_vertices - len(counts) + len(tris)
    if euler != 1:
        raise NotDiskTopology(f"Euler characteristic {euler}, expected 1")

    succ: dict = {}
    for a, b, c in tris:
        for u, v in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
            key = (min(u, v), max(u, v))
            if counts[key] == 1:
                if u in succ:
                    raise NoBoundaryCycle(f"boundary forks at vertex {u}")
                succ[u] = v
    if not succ:
        raise NoBoundaryCycle("patch has no boundary edges")
    start = min(succ)
    cycle = [start]
    cur = succ[start]
    while cur != start:
        cycle.append(cur)
        if len(cycle) > len(succ):
            raise NoBoundaryCycle("boundary walk does not close")
        cur = succ[cur]
    if len(cycle) != len(succ):
        raise NoBoundaryCycle("patch has more than one boundary cycle")
    boundary = np.asarray(cycle, dtype=int)
    poly = coords[boundary]
    area2 = np.sum(
        poly[:, 0] * np.roll(poly[:, 1], -1) - poly[:, 1] * np.roll(poly[:, 0], -1)
    )
    if area2 < 0:
        boundary = boundary[::-1].copy()
    return tris, boundary


def _boundary_chord_arc(
    points: np.ndarray, boundary: np.ndarray, sigma: float, max_samples: int = 256
) -> float:
    bp = points[boundary]
    seg = np.linalg.norm(np.roll(bp, -1, axis=0) - bp, axis=1)
    total = float(seg.sum())
    if total <= 0 or sigma <= 0:
        return 0.0
    cum = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    if len(bp) > max_samples:
        sel = np.linspace(0, len(bp) - 1, max_samples).astype(int)
        bp = bp[sel]
        cum = cum[sel]
    ds = np.abs(cum[:, None] - cum[None, :])
    arc = np.minimum(ds, total - ds)
    chord = np.linalg.norm(bp[:, None, :] - bp[None, :, :], axis=2)
    mask = chord > 1e-12 * sigma
    if not mask.any():
        return 0.0
    return float(np.max(arc[mask] / np.sqrt(sigma * chord[mask])))


def extract_disk_patch(
    sample: WeightedSurfaceSample,
    center,
    sigma: float,
    *,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> DiskPatch:
    """Triangulated disk patch of the sample inside a ball.

    Projects the ball onto its PCA reference plane, triangulates the
    projected points, keeps triangles whose circumradius stays below
    ``patch_alpha_mult`` mean spacings (so holes and sliver fills are
    dropped), extracts the edge-connected component containing the vertex
    nearest the center, and validates disk topology.  Intended for balls
    where the multiscale flatness certificates hold; on wilder input it
    raises rather than returning a non-disk complex.

    Raises
    ------
    NotDiskTopology
        Non-graphical (double-covering) projection, non-manifold link,
        or Euler characteristic different from one.
    NoBoundaryCycle
        Boundary is empty, forked, or has several cycles.
    TooFewPoints
        Ball holds fewer than six sample points.
    """
    center = np.asarray(center, dtype=float)
    rows = np.sort(np.asarray(sample.ball_query(center, sigma), dtype=int))
    if len(rows) < 6:
        raise TooFewPoints(f"ball holds {len(rows)} points; need at least 6")
    pts = sample.points[rows]
    spacing = sample.mean_spacing
    plane = fit_plane_pca(pts, weights=sample.weights[rows], dim=2)
    coords = plane.coordinates(pts)

    # a graphical patch projects injectively: nearby plane images must be
    # nearby in space, otherwise the ball wraps more than one sheet
    flat_tree = cKDTree(coords)
    close = flat_tree.query_pairs(0.35 * spacing, output_type="ndarray")
    if len(close):
        d3 = np.linalg.norm(pts[close[:, 0]] - pts[close[:, 1]], axis=1)
        if np.any(d3 > 2.5 * spacing):
            raise NotDiskTopology(
                "ball projects more than one sheet onto the reference plane"
            )

    tris = Delaunay(coords).simplices
    # alpha filter: circumradius against spacing, plus a planar-area floor
    p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    la = np.linalg.norm(p1 - p0, axis=1)
    lb = np.linalg.norm(p2 - p1, axis=1)
    lc = np.linalg.norm(p0 - p2, axis=1)
    area3 = triangle_areas(pts, tris)
    area2 = triangle_areas(coords, tris)
    with np.errstate(divide="ignore", invalid="ignore"):
        circum = np.where(area3 > 0, la * lb * lc / (4.0 * area3), np.inf)
    keep = (
        (circum <= config.patch_alpha_mult * spacing)
        & (area2 > 1e-9 * spacing * spacing)
    )
    tris = tris[keep]
    if len(tris) == 0:
        raise NotDiskTopology("no triangle passes the circumradius filter")

    seed_vertex = int(np.argmin(np.linalg.norm(pts - center, axis=1)))
    comp = _edge_component(tris, seed_vertex)
    if comp is None:
        raise NotDiskTopology("vertex nearest the center is isolated")
    tris = tris[comp]

    used = np.unique(tris)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    tris = remap[tris]
    patch_pts = pts[used]
    patch_coords = coords[used]
    tris, boundary = _disk_complex(patch_coords, tris, len(used))

    # measured inclusion margin
    bd_r = np.linalg.norm(patch_pts[boundary] - center, axis=1)
    r_in = float(bd_r.min())
    dropped = np.setdiff1d(np.arange(len(pts)), used)
    if len(dropped):
        r_miss = float(np.linalg.norm(pts[dropped] - center, axis=1).min())
        r_in = min(r_in, r_miss * (1.0 - 1e-9))
    psi = float(np.clip(1.0 - r_in / sigma, 0.0, 1.0))

    return DiskPatch(
        points=patch_pts,
        triangles=tris,
        boundary=boundary,
        plane_coords=patch_coords,
        plane_basis=plane.basis,
        plane_origin=plane.basepoint,
        center=center,
        sigma=float(sigma),
        psi=psi,
        spacing=spacing,
        metric_radius=config.metric_radius_mult * spacing,
        sample_rows=rows[used],
        boundary_chord_arc=_boundary_chord_arc(patch_pts, boundary, sigma),
    )


def _edge_component(tris: np.ndarray, seed_vertex: int):
    """Mask of the edge-connected triangle component containing the vertex."""
    edge_map: dict = {}
    for t, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(int(u), int(v)), max(int(u), int(v)))
            edge_map.setdefault(key, []).append(t)
    parent = np.arange(len(tris))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for members in edge_map.values():
        if len(members) == 2:
            a, b = find(members[0]), find(members[1])
            if a != b:
                parent[a] = b
    roots = np.fromiter((find(t) for t in range(len(tris))), dtype=int)
    seed_tris = np.where((tris == seed_vertex).any(axis=1))[0]
    if len(seed_tris) == 0:
        return None
    seed_roots, counts = np.unique(roots[seed_tris], return_counts=True)
    sizes = [(int((roots == r).sum()), -int(r)) for r in seed_roots]
    best = seed_roots[int(np.argmax([s for s, _ in sizes]))]
    return roots == best


def refine_disk_patch(
    patch: DiskPatch,
    projector: Callable | None = None,
    boundary_projector: Callable | None = None,
) -> DiskPatch:
    """Midpoint 1-to-4 subdivision; new vertices optionally projected.

    ``projector`` maps an (m, n) array of interior-edge midpoints onto the
    underlying surface (e.g. radial projection onto a sphere);
    ``boundary_projector`` does the same for boundary-edge midpoints (e.g.
    projection onto the rim circle, keeping the boundary unragged).
    Unprojected midpoints stay on their chords.  Plane coordinates of new
    vertices are re-derived from the patch reference plane.
    """
    pts = patch.points
    tris = patch.triangles
    bd_edges = {
        (min(int(patch.boundary[i]), int(patch.boundary[(i + 1) % len(patch.boundary)])),
         max(int(patch.boundary[i]), int(patch.boundary[(i + 1) % len(patch.boundary)])))
        for i in range(len(patch.boundary))
    }
    edge_index: dict = {}
    mids = []
    on_boundary = []
    for a, b, c in tris:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(int(u), int(v)), max(int(u), int(v)))
            if key not in edge_index:
                edge_index[key] = len(pts) + len(mids)
                mids.append(0.5 * (pts[key[0]] + pts[key[1]]))
                on_boundary.append(key in bd_edges)
    mids = np.asarray(mids)
    on_boundary = np.asarray(on_boundary, dtype=bool)
    if projector is not None and (~on_boundary).any():
        mids[~on_boundary] = np.asarray(
            projector(mids[~on_boundary]), dtype=float
        )
    if boundary_projector is not None and on_boundary.any():
        mids[on_boundary] = np.asarray(
            boundary_projector(mids[on_boundary]), dtype=float
        )
    new_pts = np.vstack([pts, mids])
    new_coords = np.vstack(
        [
            patch.plane_coords,
            (mids - patch.plane_origin) @ patch.plane_basis.T,
        ]
    )
    new_tris = []
    for a, b, c in tris:
        a, b, c = int(a), int(b), int(c)
        mab = edge_index[(min(a, b), max(a, b))]
        mbc = edge_index[(min(b, c), max(b, c))]
        mca = edge_index[(min(c, a), max(c, a))]
        new_tris += [[a, mab, mca], [b, mbc, mab], [c, mca, mbc], [mab, mbc, mca]]
    new_tris = np.asarray(new_tris, dtype=int)
    bd = patch.boundary
    new_bd = []
    for i, v in enumerate(bd):
        w = bd[(i + 1) % len(bd)]
        new_bd.append(int(v))
        new_bd.append(edge_index[(min(int(v), int(w)), max(int(v), int(w)))])
    new_bd = np.asarray(new_bd, dtype=int)
    rows = np.concatenate([patch.sample_rows, np.full(len(mids), -1, dtype=int)])
    return DiskPatch(
        points=new_pts,
        triangles=_orient_ccw(new_coords, new_tris),
        boundary=new_bd,
        plane_coords=new_coords,
        plane_basis=patch.plane_basis,
        plane_origin=patch.plane_origin,
        center=patch.center,
        sigma=patch.sigma,
        psi=patch.psi,
        spacing=0.5 * patch.spacing,
        metric_radius=0.5 * patch.metric_radius,
        sample_rows=rows,
        boundary_chord_arc=_boundary_chord_arc(new_pts, new_bd, patch.sigma),
    )


# ---------------------------------------------------------------------------
# intrinsic metric diagnostics and Jordan cycles


def intrinsic_metric_diagnostics(
    patch: DiskPatch,
    *,
    sources: int = 24,
    chord_floor: float | None = None,
    cycle_radii: Sequence[float] | None = None,
    waypoints: int = 24,
    seed: int = 0,
) -> dict:
    """Shortest-path versus chord comparisons plus cycle shape ratios.

    Reports the maximal ratio of the neighborhood-graph path metric to the
    ambient chord over sampled pairs (chords below ``chord_floor`` are
    skipped: the graph metric only resolves distances a couple of dozen
    spacings wide), the maximal ratio of the triangulation-skeleton metric
    to the neighborhood metric, and diameter / length for sampled interior
    circle cycles.

    Raises
    ------
    DisconnectedPatch
        The patch neighborhood graph has more than one component.
    """
    k = len(patch)
    metric = patch.metric_graph()
    skeleton = patch.skeleton_graph()
    rng = np.random.default_rng(seed)
    src = np.sort(rng.choice(k, size=min(sources, k), replace=False))
    d_metric = dijkstra(metric, directed=False, indices=src)
    d_skel = dijkstra(skeleton, directed=False, indices=src)
    chords = np.linalg.norm(
        patch.points[src][:, None, :] - patch.points[None, :, :], axis=2
    )
    r_max = float(np.linalg.norm(patch.plane_coords, axis=1).max())
    if chord_floor is None:
        chord_floor = max(24.0 * patch.spacing, 0.25 * r_max)
    mask = (chords >= chord_floor) & np.isfinite(d_metric)
    if not mask.any():
        raise TooFewPoints("no vertex pair above the chord floor")
    ratios = d_metric[mask] / chords[mask]
    skel_ratio = d_skel[mask] / np.maximum(d_metric[mask], 1e-300)
    if cycle_radii is None:
        cycle_radii = (0.55 * r_max,)
    cycle_out = []
    for radius in cycle_radii:
        angles = 2.0 * np.pi * np.arange(waypoints) / waypoints
        pts2 = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        cyc = waypoint_cycle(patch, pts2)
        inside = _polygon_contains(patch.plane_coords[cyc], patch.plane_coords)
        enclosed = np.where(inside)[0]
        if len(enclosed) > 1500:
            enclosed = rng.choice(enclosed, 1500, replace=False)
        epts = patch.points[enclosed]
        diam = 0.0
        for i in range(0, len(epts), 256):
            block = epts[i : i + 256]
            diam = max(
                diam,
                float(
                    np.linalg.norm(block[:, None, :] - epts[None, :, :], axis=2).max()
                ),
            )
        cpts = patch.points[cyc]
        length = float(np.linalg.norm(np.roll(cpts, -1, axis=0) - cpts, axis=1).sum())
        cycle_out.append(
            {"radius": float(radius), "diameter_over_length": diam / length}
        )
    return {
        "path_over_chord_max": float(ratios.max()),
        "path_over_chord_mean": float(ratios.mean()),
        "skeleton_over_path_max": float(skel_ratio.max()),
        "pairs_used": int(mask.sum()),
        "chord_floor": float(chord_floor),
        "cycles": cycle_out,
    }


def waypoint_cycle(patch: DiskPatch, waypoints2) -> np.ndarray:
    """Jordan cycle through plane-coordinate waypoints via shortest paths.

    Snaps each waypoint to its nearest vertex and joins consecutive
    waypoints by neighborhood-graph shortest paths, closing the loop.
    """
    coords = patch.plane_coords
    tree = cKDTree(coords)
    idx = tree.query(np.asarray(waypoints2, dtype=float))[1]
    anchors = [int(idx[0])]
    for i in idx[1:]:
        if int(i) != anchors[-1]:
            anchors.append(int(i))
    while len(anchors) > 1 and anchors[-1] == anchors[0]:
        anchors.pop()
    if len(anchors) < 3:
        raise NotJordan("fewer than three distinct waypoint vertices")
    graph = patch.metric_graph()
    cycle: list = []
    for i, a in enumerate(anchors):
        b = anchors[(i + 1) % len(anchors)]
        dist, pred = dijkstra(
            graph, directed=False, indices=[a], return_predecessors=True
        )
        if not np.isfinite(dist[0, b]):
            raise DisconnectedPatch(f"no path between waypoints {a} and {b}")
        path = [b]
        while path[-1] != a:
            path.append(int(pred[0, path[-1]]))
        path.reverse()
        cycle.extend(path[:-1])
    cyc = np.asarray(cycle, dtype=int)
    if len(np.unique(cyc)) != len(cyc):
        raise NotJordan("waypoint paths intersect each other")
    return cyc


def _polygon_contains(polygon: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Even-odd containment of points in a closed polygon (vectorized)."""
    px = points[:, 0]
    py = points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcut = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        hit = crosses & (px < xcut)
        inside ^= hit
    return inside


def _segments_intersect(polygon: np.ndarray) -> bool:
    """True when any two non-adjacent closed-polygon edges cross."""
    n = len(polygon)
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    for i in range(n):
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if len(js) == 0:
            continue
        p, r = a[i], b[i] - a[i]
        q, s = a[js], b[js] - a[js]
        rxs = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = q - p
        qpxr = qp[:, 0] * r[1] - qp[:, 1] * r[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / rxs
            u = qpxr / rxs
        hit = (np.abs(rxs) > 1e-300) & (t > 0) & (t < 1) & (u > 0) & (u < 1)
        if hit.any():
            return True
    return False


def isoperimetric_check(patch: DiskPatch, cycle) -> float:
    """Enclosed area over squared length for a Jordan cycle in the patch.

    The enclosed region is the set of triangles whose plane-coordinate
    centroid lies inside the cycle polygon; area is measured in the ambient
    space, length along the cycle edges.

    Raises
    ------
    NotJordan
        Repeated vertices, edges longer than the patch graph radius, or a
        self-intersecting polygon.
    """
    cyc = np.asarray(cycle, dtype=int)
    if len(cyc) < 3:
        raise NotJordan("cycle needs at least three vertices")
    if len(np.unique(cyc)) != len(cyc):
        raise NotJordan("cycle repeats a vertex")
    cpts = patch.points[cyc]
    seg = np.linalg.norm(np.roll(cpts, -1, axis=0) - cpts, axis=1)
    if np.any(seg > 1.5 * patch.metric_radius):
        raise NotJordan("cycle jumps beyond the patch graph radius")
    poly = patch.plane_coords[cyc]
    if _segments_intersect(poly):
        raise NotJordan("cycle polygon self-intersects")
    centroids = patch.plane_coords[patch.triangles].mean(axis=1)
    inside = _polygon_contains(poly, centroids)
    if not inside.any():
        raise NotJordan("cycle encloses no triangles")
    area = float(patch.surface_triangle_areas()[inside].sum())
    length = float(seg.sum())
    return area / (length * length)


# ---------------------------------------------------------------------------
# harmonic disk parameterization


@dataclass(eq=False)
class DiskParameterization:
    """Piecewise-linear map from the unit-disk mesh onto patch points.

    ``disk_points[i]`` is the parameter position of ``surface_points[i]``;
    triangles are shared.  Immutable once solved.
    """

    disk_points: np.ndarray
    surface_points: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray | None = None
    energy: float = float("nan")
    initializer_energy: float = float("nan")
    pinned: np.ndarray | None = None
    pin_targets: np.ndarray | None = None
    pin_error: float = float("nan")
    patch: DiskPatch | None = None

    def __post_init__(self):
        self.disk_points = np.asarray(self.disk_points, dtype=float)
        self.surface_points = np.asarray(self.surface_points, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=int)
        if self.boundary is not None:
            self.boundary = np.asarray(self.boundary, dtype=int)

    def __len__(self) -> int:
        return len(self.disk_points)

    def boundary_vertices(self) -> np.ndarray:
        if self.boundary is not None:
            return self.boundary
        counts = edge_face_counts(self.triangles)
        verts = sorted({v for e, c in counts.items() if c == 1 for v in e})
        return np.asarray(verts, dtype=int)

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(len(self.disk_points), dtype=bool)
        mask[self.boundary_vertices()] = False
        return mask


def _affine_maps(disk_pts: np.ndarray, tris: np.ndarray, values: np.ndarray):
    """Per-triangle Jacobians of the PL map disk -> values.

    Returns (jacobians (t, d, 2), disk_areas (t,)).  Raises
    DegenerateTriangle when a parameter triangle is degenerate or flipped.
    """
    u = disk_pts[tris]
    e1 = u[:, 1] - u[:, 0]
    e2 = u[:, 2] - u[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    scale = float(np.abs(det).max()) if len(det) else 0.0
    if scale <= 0 or np.any(det <= 1e-14 * scale):
        raise DegenerateTriangle("non-positive parameter-triangle area")
    v = values[tris]
    s1 = v[:, 1] - v[:, 0]
    s2 = v[:, 2] - v[:, 0]
    jx = (s1 * e2[:, [1]] - s2 * e1[:, [1]]) / det[:, None]
    jy = (-s1 * e2[:, [0]] + s2 * e1[:, [0]]) / det[:, None]
    jac = np.stack([jx, jy], axis=2)
    return jac, 0.5 * det


def _gram_eigs(jac: np.ndarray):
    g11 = np.einsum("tn,tn->t", jac[:, :, 0], jac[:, :, 0])
    g22 = np.einsum("tn,tn->t", jac[:, :, 1], jac[:, :, 1])
    g12 = np.einsum("tn,tn->t", jac[:, :, 0], jac[:, :, 1])
    tr = g11 + g22
    disc = np.sqrt(np.maximum((g11 - g22) ** 2 + 4.0 * g12 * g12, 0.0))
    lam_hi = 0.5 * (tr + disc)
    lam_lo = np.maximum(0.5 * (tr - disc), 0.0)
    return g11, g22, g12, lam_hi, lam_lo


def _dirichlet_energy(disk_pts, tris, values) -> float:
    jac, areas = _affine_maps(disk_pts, tris, values)
    _, _, _, lam_hi, lam_lo = _gram_eigs(jac)
    return float(np.sum((lam_hi + lam_lo) * areas))


def _uniform_laplacian(n: int, tris: np.ndarray) -> sparse.csr_matrix:
    edges = np.unique(
        np.sort(
            np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]),
            axis=1,
        ),
        axis=0,
    )
    ones = np.ones(len(edges))
    adj = sparse.coo_matrix(
        (
            np.concatenate([ones, ones]),
            (
                np.concatenate([edges[:, 0], edges[:, 1]]),
                np.concatenate([edges[:, 1], edges[:, 0]]),
            ),
        ),
        shape=(n, n),
    ).tocsr()
    return (adj - sparse.diags(np.asarray(adj.sum(axis=1)).ravel())).tocsr()


def _solve_trace(lap, boundary, boundary_values, interior, n: int) -> np.ndarray:
    out = np.zeros((n, boundary_values.shape[1]))
    out[boundary] = boundary_values
    if interior.size:
        a = (-lap[interior][:, interior]).tocsc()
        rhs = np.asarray(lap[interior][:, boundary] @ boundary_values)
        try:
            solved = splu(a).solve(rhs)
        except RuntimeError as exc:  # pragma: no cover - singular factorization
            raise SolverSingular(f"harmonic solve failed: {exc}") from exc
        if not np.all(np.isfinite(solved)):
            raise SolverSingular("harmonic solve produced non-finite values")
        out[interior] = solved
    return out


def _mobius_through(src, dst) -> np.ndarray:
    """2x2 complex coefficients of the Moebius map sending src[j] -> dst[j]."""

    def standard(z1, z2, z3):
        return np.array(
            [[z2 - z3, -z1 * (z2 - z3)], [z2 - z1, -z3 * (z2 - z1)]],
            dtype=complex,
        )

    a = standard(*src)
    b = standard(*dst)
    b_inv = np.array([[b[1, 1], -b[0, 1]], [-b[1, 0], b[0, 0]]], dtype=complex)
    return b_inv @ a


def _apply_mobius(mat: np.ndarray, z: np.ndarray) -> np.ndarray:
    return (mat[0, 0] * z + mat[0, 1]) / (mat[1, 0] * z + mat[1, 1])


def harmonic_disk_param(
    patch: DiskPatch, *, config: AnalysisConfig = DEFAULT_CONFIG
) -> DiskParameterization:
    """Discrete Dirichlet-minimizing disk parameterization of a patch.

    The boundary cycle maps to the unit circle by normalized arc length;
    interior parameter positions solve the cotangent-Laplace system of the
    patch metric per coordinate (the flattening direction), and the
    correspondence is read inversely as a map from the disk mesh onto the
    original patch points.  A disk Moebius map then pins the three boundary
    vertices nearest the arc-length thirds to the cube roots of unity.
    Energy is the per-triangle Dirichlet sum of the disk-to-patch map; the
    energy of the uniform-weight (Tutte-style) flattening with the same
    trace is recorded for comparison.

    Raises
    ------
    SolverSingular, FoldedTriangles, NoBoundaryCycle
    """
    pts = patch.points
    tris = patch.triangles
    bd = patch.boundary
    if len(bd) < 3:
        raise NoBoundaryCycle("boundary cycle needs at least three vertices")
    bp = pts[bd]
    seg = np.linalg.norm(np.roll(bp, -1, axis=0) - bp, axis=1)
    total = float(seg.sum())
    if total <= 0:
        raise DegenerateTriangle("boundary cycle has zero length")
    cum = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    theta = 2.0 * np.pi * cum / total
    circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    interior = np.setdiff1d(np.arange(len(pts)), bd)

    lap_cot = cotangent_laplacian(pts, tris)
    disk = _solve_trace(lap_cot, bd, circle, interior, len(pts))
    lap_uni = _uniform_laplacian(len(pts), tris)
    disk_init = _solve_trace(lap_uni, bd, circle, interior, len(pts))

    # pin the boundary vertices nearest the arc-length thirds
    pin_pos = [int(np.argmin(np.abs(cum - total * j / 3.0))) for j in range(3)]
    if len(set(pin_pos)) != 3:
        raise NoBoundaryCycle("boundary too short to pin three distinct points")
    pins = bd[pin_pos]
    z = disk[:, 0] + 1j * disk[:, 1]
    src = z[pins]
    dst = np.exp(2j * np.pi * np.arange(3) / 3.0)
    mat = _mobius_through(src, dst)
    z_new = _apply_mobius(mat, z)
    pin_error = float(np.abs(z_new[pins] - dst).max())
    zb = z_new[bd]
    z_new[bd] = zb / np.abs(zb)
    z_new[pins] = dst
    disk_new = np.stack([z_new.real, z_new.imag], axis=1)
    if interior.size and float(np.abs(z_new[interior]).max()) >= 1.0:
        raise SolverSingular("Moebius normalization pushed interior outside")

    u = disk_new[tris]
    e1 = u[:, 1] - u[:, 0]
    e2 = u[:, 2] - u[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    folded = int(np.sum(det <= 0))
    if folded:
        raise FoldedTriangles(
            f"{folded} parameter triangles are folded after normalization",
            count=folded,
        )
    energy = _dirichlet_energy(disk_new, tris, pts)
    try:
        energy_init = _dirichlet_energy(disk_init, tris, pts)
    except DegenerateTriangle:
        energy_init = float("nan")
    return DiskParameterization(
        disk_points=disk_new,
        surface_points=pts,
        triangles=tris,
        boundary=bd,
        energy=energy,
        initializer_energy=energy_init,
        pinned=pins,
        pin_targets=np.stack([dst.real, dst.imag], axis=1),
        pin_error=pin_error,
        patch=patch,
    )


def mobius_reparameterized(
    param: DiskParameterization, center=(0.0, 0.0), phase: float = 0.0
) -> DiskParameterization:
    """Post-compose the parameter domain with a disk Moebius map.

    ``z -> e^{i phase} (z - a) / (1 - conj(a) z)`` with ``a`` = center.
    The surface correspondence is unchanged; energy is recomputed (discrete
    conformal invariance keeps it nearly constant).
    """
    a = complex(center[0], center[1])
    if abs(a) >= 1.0:
        raise ValueError("Moebius center must lie inside the unit disk")
    z = param.disk_points[:, 0] + 1j * param.disk_points[:, 1]
    z_new = np.exp(1j * phase) * (z - a) / (1.0 - np.conj(a) * z)
    bd = param.boundary_vertices()
    zb = z_new[bd]
    z_new[bd] = zb / np.abs(zb)
    disk_new = np.stack([z_new.real, z_new.imag], axis=1)
    energy = _dirichlet_energy(disk_new, param.triangles, param.surface_points)
    return DiskParameterization(
        disk_points=disk_new,
        surface_points=param.surface_points,
        triangles=param.triangles,
        boundary=param.boundary,
        energy=energy,
        initializer_energy=float("nan"),
        pinned=None,
        pin_targets=None,
        pin_error=float("nan"),
        patch=param.patch,
    )


# ---------------------------------------------------------------------------
# conformal factor


@dataclass(eq=False)
class ConformalFactor:
    """Per-triangle conformal data of a disk parameterization.

    ``w`` is half the log area factor (``e^{2w} = |det grad f|``);
    ``axis_ratio`` is |f_x| / |f_y|; ``angle_cos`` the cosine between the
    coordinate derivatives; ``qc_dilatation`` the singular-value ratio.
    """

    w: np.ndarray
    area_factor: np.ndarray
    axis_ratio: np.ndarray
    angle_cos: np.ndarray
    qc_dilatation: np.ndarray
    disk_areas: np.ndarray


def conformal_factor(param: DiskParameterization) -> ConformalFactor:
    jac, areas = _affine_maps(param.disk_points, param.triangles, param.surface_points)
    g11, g22, g12, lam_hi, lam_lo = _gram_eigs(jac)
    det_gram = np.maximum(g11 * g22 - g12 * g12, 0.0)
    factor = np.sqrt(det_gram)
    floor = 1e-15 * float(np.median(factor)) if len(factor) else 0.0
    if len(factor) == 0 or np.any(factor <= floor):
        raise DegenerateTriangle("Jacobian area factor vanishes on a triangle")
    return ConformalFactor(
        w=0.5 * np.log(factor),
        area_factor=factor,
        axis_ratio=np.sqrt(g11 / g22),
        angle_cos=g12 / np.sqrt(g11 * g22),
        qc_dilatation=np.sqrt(lam_hi / np.maximum(lam_lo, 1e-300)),
        disk_areas=areas,
    )


# ---------------------------------------------------------------------------
# quasi-symmetry


@dataclass(eq=False)
class QuasisymmetryTable:
    """H(z, s) = max_{|y-z|<=s} |f(y)-f(z)| / min_{|y-z|>=s} |f(y)-f(z)|."""

    center_indices: np.ndarray
    scales: np.ndarray
    values: np.ndarray

    @property
    def max(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(finite.max()) if len(finite) else float("nan")


def quasisymmetry_table(
    param: DiskParameterization, centers, scales
) -> QuasisymmetryTable:
    """Quasi-symmetry ratios at the given parameter centers and scales.

    Centers snap to their nearest mesh vertices; scales should sit above
    the mesh resolution.
    """
    disk = param.disk_points
    f = param.surface_points
    tree = cKDTree(disk)
    idx = np.atleast_1d(tree.query(np.asarray(centers, dtype=float))[1])
    scales = np.asarray(scales, dtype=float)
    values = np.full((len(idx), len(scales)), np.nan)
    for row, c in enumerate(idx):
        d = np.linalg.norm(disk - disk[c], axis=1)
        df = np.linalg.norm(f - f[c], axis=1)
        others = d > 1e-15
        for col, s in enumerate(scales):
            near = others & (d <= s)
            far = d >= s
            if near.any() and far.any():
                lo = float(df[far].min())
                if lo > 0:
                    values[row, col] = float(df[near].max()) / lo
    return QuasisymmetryTable(
        center_indices=idx, scales=scales, values=values
    )


# ---------------------------------------------------------------------------
# scaled-isometry (conformal-affine) fit


@dataclass(eq=False)
class AffineFit:
    """Least-squares fit f(u) ~ scale * frame @ u + offset on a disk.

    Deviations are normalized by scale times the fit radius; ``area_gap``
    compares measured image area with the affine prediction.
    """

    scale: float
    frame: np.ndarray
    offset: np.ndarray
    sup_deviation: float
    energy_deviation: float
    area_gap: float
    vertex_count: int


def _scaled_isometry(u: np.ndarray, v: np.ndarray, weights: np.ndarray):
    w = weights / weights.sum()
    ub = (w[:, None] * u).sum(axis=0)
    vb = (w[:, None] * v).sum(axis=0)
    du = u - ub
    dv = v - vb
    m = (dv * w[:, None]).T @ du
    uu, s, vt = np.linalg.svd(m, full_matrices=False)
    if s[0] <= 0 or s[1] <= 1e-12 * s[0]:
        raise RankDeficient("cross-covariance is rank deficient")
    frame = uu @ vt
    var = float((w * np.einsum("ij,ij->i", du, du)).sum())
    if var <= 0:
        raise RankDeficient("zero parameter variance in the fit region")
    scale = float(s.sum()) / var
    offset = vb - scale * (frame @ ub)
    return scale, frame, offset


def semmes_affine_fit(
    param: DiskParameterization, center, radius: float
) -> AffineFit:
    """Weighted conformal-affine fit of f over a parameter sub-disk.

    Solves the scaled orthogonal-Procrustes problem (positive scale times a
    linear isometry R^2 -> R^n plus offset), weighting vertices by lumped
    parameter area, and reports sup / energy deviations normalized by
    ``scale * radius`` together with the relative area gap.

    Raises
    ------
    RankDeficient
        Fewer than three vertices in the disk or degenerate covariance.
    """
    center = np.asarray(center, dtype=float)
    disk = param.disk_points
    sel = np.linalg.norm(disk - center, axis=1) <= radius
    if sel.sum() < 3:
        raise RankDeficient(f"only {int(sel.sum())} vertices inside the fit disk")
    lumped = vertex_areas(disk, param.triangles)
    u = disk[sel]
    v = param.surface_points[sel]
    w = np.maximum(lumped[sel], 1e-300)
    scale, frame, offset = _scaled_isometry(u, v, w)
    pred = scale * (u @ frame.T) + offset
    dev = np.linalg.norm(v - pred, axis=1)
    wn = w / w.sum()
    sup_dev = float(dev.max()) / (scale * radius)
    energy_dev = float(np.sqrt((wn * dev * dev).sum())) / (scale * radius)
    cf = conformal_factor(param)
    centroids = disk[param.triangles].mean(axis=1)
    inside = np.linalg.norm(centroids - center, axis=1) <= radius
    if inside.any():
        measured = float((cf.area_factor[inside] * cf.disk_areas[inside]).sum())
        affine = scale * scale * float(cf.disk_areas[inside].sum())
        area_gap = abs(measured - affine) / affine
    else:
        area_gap = float("nan")
    return AffineFit(
        scale=scale,
        frame=frame,
        offset=offset,
        sup_deviation=sup_dev,
        energy_deviation=energy_dev,
        area_gap=area_gap,
        vertex_count=int(sel.sum()),
    )


# ---------------------------------------------------------------------------
# dyadic squares on the parameter disk


@dataclass(frozen=True)
class DiskMesh:
    """Bare parameter-domain mesh for dyadic statistics on raw fields."""

    points: np.ndarray
    triangles: np.ndarray


@dataclass(frozen=True)
class DyadicSquare:
    x0: float
    y0: float
    size: float
    depth: int

    @property
    def center(self):
        return (self.x0 + 0.5 * self.size, self.y0 + 0.5 * self.size)


def _as_mesh(obj) -> DiskMesh:
    if isinstance(obj, DiskMesh):
        return obj
    if isinstance(obj, DiskParameterization):
        return DiskMesh(obj.disk_points, obj.triangles)
    points, triangles = obj
    return DiskMesh(np.asarray(points, dtype=float), np.asarray(triangles, dtype=int))


def _mesh_cells(mesh: DiskMesh):
    centroids = mesh.points[mesh.triangles].mean(axis=1)
    areas = triangle_areas(mesh.points, mesh.triangles)
    lo = mesh.points.min(axis=0)
    hi = mesh.points.max(axis=0)
    size = float((hi - lo).max())
    origin = 0.5 * (lo + hi) - 0.5 * size
    return centroids, areas, origin, size


def _square_buckets(centroids, origin, size, depth):
    cells = size / (1 << depth)
    ij = np.floor((centroids - origin) / cells).astype(int)
    ij = np.clip(ij, 0, (1 << depth) - 1)
    return ij[:, 0] + (ij[:, 1] << depth), cells


def dyadic_squares(
    mesh_or_param,
    depth: int | None = None,
    *,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> list:
    """Admissible dyadic squares over the mesh bounding square.

    Admissible: at least ``min_square_triangles`` triangle centroids and
    triangle area at least ``square_coverage`` of the square, which skips
    squares straddling the mesh boundary.
    """
    mesh = _as_mesh(mesh_or_param)
    depth = config.dyadic_depth if depth is None else depth
    centroids, areas, origin, size = _mesh_cells(mesh)
    out = []
    for d in range(depth + 1):
        buckets, cells = _square_buckets(centroids, origin, size, d)
        counts = np.bincount(buckets, minlength=1 << (2 * d))
        covered = np.bincount(buckets, weights=areas, minlength=1 << (2 * d))
        ok = np.where(
            (counts >= config.min_square_triangles)
            & (covered >= config.square_coverage * cells * cells)
        )[0]
        for b in ok:
            i = int(b) & ((1 << d) - 1)
            j = int(b) >> d
            out.append(
                DyadicSquare(
                    x0=float(origin[0] + i * cells),
                    y0=float(origin[1] + j * cells),
                    size=float(cells),
                    depth=d,
                )
            )
    return out


def _square_sup(mesh, tri_values, depth, config, statistic):
    """Supremum of a per-square statistic over admissible dyadic squares."""
    centroids, areas, origin, size = _mesh_cells(mesh)
    best = None
    for d in range(depth + 1):
        buckets, cells = _square_buckets(centroids, origin, size, d)
        nsq = 1 << (2 * d)
        counts = np.bincount(buckets, minlength=nsq)
        covered = np.bincount(buckets, weights=areas, minlength=nsq)
        ok = (counts >= config.min_square_triangles) & (
            covered >= config.square_coverage * cells * cells
        )
        if not ok.any():
            continue
        val = statistic(buckets, nsq, areas, covered, ok, tri_values)
        if val is not None:
            best = val if best is None else max(best, val)
    return best


def bmo_norm(
    mesh_or_param,
    values,
    depth: int | None = None,
    *,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> float:
    """Sup over admissible dyadic squares of the mean absolute oscillation.

    ``values`` is a per-triangle scalar field; means are triangle-area
    weighted.  Returns 0.0 when no square is admissible.
    """
    mesh = _as_mesh(mesh_or_param)
    depth = config.dyadic_depth if depth is None else depth
    vals = np.asarray(values, dtype=float)

    def statistic(buckets, nsq, areas, covered, ok, v):
        mean = np.bincount(buckets, weights=areas * v, minlength=nsq) / np.maximum(
            covered, 1e-300
        )
        dev = np.abs(v - mean[buckets])
        osc = np.bincount(buckets, weights=areas * dev, minlength=nsq) / np.maximum(
            covered, 1e-300
        )
        return float(osc[ok].max())

    out = _square_sup(mesh, vals, depth, config, statistic)
    return 0.0 if out is None else out


def a2_constant(
    mesh_or_param,
    w_values,
    depth: int | None = None,
    *,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> float:
    """Sup over admissible dyadic squares of mean(e^{2w}) * mean(e^{-2w})."""
    mesh = _as_mesh(mesh_or_param)
    depth = config.dyadic_depth if depth is None else depth
    w = np.asarray(w_values, dtype=float)

    def statistic(buckets, nsq, areas, covered, ok, v):
        up = np.bincount(
            buckets, weights=areas * np.exp(2.0 * v), minlength=nsq
        ) / np.maximum(covered, 1e-300)
        dn = np.bincount(
            buckets, weights=areas * np.exp(-2.0 * v), minlength=nsq
        ) / np.maximum(covered, 1e-300)
        return float((up[ok] * dn[ok]).max())

    out = _square_sup(mesh, w, depth, config, statistic)
    return 1.0 if out is None else out


def inverse_holder_check(param: DiskParameterization, square: DyadicSquare) -> float:
    """mean(|det grad f|) / mean(sqrt|det grad f|)^2 over one square (>= 1)."""
    cf = conformal_factor(param)
    centroids = param.disk_points[param.triangles].mean(axis=1)
    inside = (
        (centroids[:, 0] >= square.x0)
        & (centroids[:, 0] < square.x0 + square.size)
        & (centroids[:, 1] >= square.y0)
        & (centroids[:, 1] < square.y0 + square.size)
    )
    if not inside.any():
        raise TooFewPoints("square contains no triangle centroids")
    areas = cf.disk_areas[inside]
    j = cf.area_factor[inside]
    total = areas.sum()
    mean_j = float((areas * j).sum() / total)
    mean_root = float((areas * np.sqrt(j)).sum() / total)
    return mean_j / (mean_root * mean_root)


def inverse_holder_max(
    param: DiskParameterization,
    depth: int | None = None,
    *,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> float:
    """Sup of the inverse-Hoelder ratio over admissible dyadic squares."""
    depth = config.dyadic_depth if depth is None else depth
    cf = conformal_factor(param)
    mesh = _as_mesh(param)

    def statistic(buckets, nsq, areas, covered, ok, j):
        mean_j = np.bincount(buckets, weights=areas * j, minlength=nsq) / np.maximum(
            covered, 1e-300
        )
        mean_root = np.bincount(
            buckets, weights=areas * np.sqrt(j), minlength=nsq
        ) / np.maximum(covered, 1e-300)
        return float((mean_j[ok] / mean_root[ok] ** 2).max())

    out = _square_sup(mesh, cf.area_factor, depth, config, statistic)
    return 1.0 if out is None else out


# ---------------------------------------------------------------------------
# curvature-equation residuals


@dataclass(eq=False)
class CurvatureResiduals:
    """Weighted-L1 residuals of the curvature equations on the disk mesh.

    ``mc_*``: discrete Laplacian of f against (H o f) e^{2w};
    ``gauss_*``: the cell-integrated metric curvature (angle defect of the
    image mesh, the distributional -Laplacian of w) against the discrete
    frame wedge; ``frame_energy``: Dirichlet energy of the unit coordinate
    frames.  Relative values are NaN when the reference term vanishes.
    """

    mc_absolute: float | None
    mc_relative: float | None
    gauss_absolute: float
    gauss_relative: float
    frame_energy: float
    interior_count: int


def _pl_gradients(disk_pts, tris, vertex_values):
    u = disk_pts[tris]
    e1 = u[:, 1] - u[:, 0]
    e2 = u[:, 2] - u[:, 0]
    det = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])[:, None]
    v = vertex_values[tris]
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    gx = (e2[:, [1]] * d1 - e1[:, [1]] * d2) / det
    gy = (-e2[:, [0]] * d1 + e1[:, [0]] * d2) / det
    return np.stack([gx, gy], axis=1)


def curvature_equation_residuals(
    param: DiskParameterization, curvature
) -> CurvatureResiduals:
    """Residuals of the mean-curvature and metric-curvature identities.

    ``curvature`` is a CurvatureField over the originating sample (matched
    through the patch's sample rows), a callable mapping (k, n) surface
    points to mean-curvature vectors, or None to skip the mean-curvature
    residual.  The metric side of the Gauss identity is measured as the
    angle defect of the image mesh (its distributional curvature, i.e. the
    cell integral of -Laplacian(w)); the frame side averages per-triangle
    unit frames to vertices and takes the wedge of their PL differentials.
    Both residuals sum over interior vertices with a one-ring boundary
    buffer: lumped vertex averages in triangles touching the boundary are
    one-sided, so the first ring measures the trace rather than the
    interior equations.

    Raises
    ------
    MissingCurvature
        A CurvatureField is supplied but does not cover the patch vertices.
    """
    disk = param.disk_points
    tris = param.triangles
    f = param.surface_points
    interior = param.interior_mask()
    near_boundary = np.zeros(len(disk), dtype=bool)
    touches = (~interior[tris]).any(axis=1)
    near_boundary[np.unique(tris[touches])] = True
    deep = interior & ~near_boundary
    if deep.any():
        interior = deep
    lap = cotangent_laplacian(disk, tris)

    mc_abs: float | None = None
    mc_rel: float | None = None
    if curvature is not None:
        if isinstance(curvature, CurvatureField):
            if param.patch is None:
                raise MissingCurvature(
                    "parameterization has no patch rows to match the field"
                )
            rows = param.patch.sample_rows
            if np.any(rows < 0):
                raise MissingCurvature(
                    "patch has synthesized vertices; supply a callable field"
                )
            hvec = curvature.at(rows)
        else:
            hvec = np.asarray(curvature(f), dtype=float)
        cell_surface = vertex_areas(f, tris)
        lhs = lap @ f
        rhs = hvec * cell_surface[:, None]
        diff = np.linalg.norm(lhs[interior] - rhs[interior], axis=1)
        ref = np.linalg.norm(rhs[interior], axis=1)
        mc_abs = float(diff.sum())
        mc_rel = float(diff.sum() / ref.sum()) if ref.sum() > 0 else float("nan")

    jac, areas = _affine_maps(disk, tris, f)
    f1 = jac[:, :, 0]
    f2 = jac[:, :, 1]
    n1 = np.linalg.norm(f1, axis=1, keepdims=True)
    n2 = np.linalg.norm(f2, axis=1, keepdims=True)
    if np.any(n1 <= 0) or np.any(n2 <= 0):
        raise DegenerateTriangle("vanishing coordinate derivative")
    e1 = f1 / n1
    e2 = f2 / n2
    k = len(disk)
    ebar1 = np.zeros_like(f)
    ebar2 = np.zeros_like(f)
    for c in range(3):
        np.add.at(ebar1, tris[:, c], e1 * (areas / 3.0)[:, None])
        np.add.at(ebar2, tris[:, c], e2 * (areas / 3.0)[:, None])
    norm1 = np.linalg.norm(ebar1, axis=1, keepdims=True)
    norm2 = np.linalg.norm(ebar2, axis=1, keepdims=True)
    if norm1.min() <= 1e-8 or norm2.min() <= 1e-8:
        raise DegenerateTriangle("frame field cancels at a vertex")
    ebar1 /= norm1
    ebar2 /= norm2
    g1 = _pl_gradients(disk, tris, ebar1)
    g2 = _pl_gradients(disk, tris, ebar2)
    wedge = np.einsum("tn,tn->t", g1[:, 0], g2[:, 1]) - np.einsum(
        "tn,tn->t", g1[:, 1], g2[:, 0]
    )
    rhs_g = np.zeros(k)
    for c in range(3):
        np.add.at(rhs_g, tris[:, c], wedge * areas / 3.0)
    lhs_g = angle_defects(f, tris)
    diff_g = np.abs(lhs_g[interior] - rhs_g[interior])
    ref_g = float(np.abs(rhs_g[interior]).sum())
    gauss_abs = float(diff_g.sum())
    gauss_rel = gauss_abs / ref_g if ref_g > 0 else float("nan")
    frame_energy = float(
        np.sum(
            (
                np.einsum("tin,tin->t", g1, g1)
                + np.einsum("tin,tin->t", g2, g2)
            )
            * areas
        )
    )
    return CurvatureResiduals(
        mc_absolute=mc_abs,
        mc_relative=mc_rel,
        gauss_absolute=gauss_abs,
        gauss_relative=gauss_rel,
        frame_energy=frame_energy,
        interior_count=int(interior.sum()),
    )


# ---------------------------------------------------------------------------
# large Lipschitz pieces


@dataclass(eq=False)
class LipschitzPieces:
    """Exceptional set and restricted Lipschitz constant on a square.

    ``excluded_area`` + ``excluded_image_area / scale^2`` should stay below
    ``budget`` = t^{-q} (size/2)^2 for well-behaved parameterizations.
    """

    scale: float
    threshold: float
    excluded_area: float
    excluded_image_area: float
    budget: float
    lipschitz: float
    excluded_count: int
    kept_count: int
    excluded_vertices: np.ndarray

    @property
    def within_budget(self) -> bool:
        s2 = max(self.scale * self.scale, 1e-300)
        return self.excluded_area + self.excluded_image_area / s2 <= self.budget


def large_lipschitz_pieces(
    param: DiskParameterization,
    square: DyadicSquare,
    t: float,
    q: float = 2.0,
    *,
    seed: int = 0,
) -> LipschitzPieces:
    """Threshold the one-ring maximal gradient and verify the complement.

    A vertex joins the exceptional set when the maximum of |grad f| over
    its incident triangles exceeds ``t * scale`` or the inverse-gradient
    proxy exceeds ``t / scale``, with ``scale`` from the conformal-affine
    fit over the square.  Reports lumped areas of the exceptional set and
    the measured Lipschitz constant of f over remaining vertex pairs.
    """
    disk = param.disk_points
    tris = param.triangles
    f = param.surface_points
    jac, _ = _affine_maps(disk, tris, f)
    _, _, _, lam_hi, lam_lo = _gram_eigs(jac)
    sig_hi = np.sqrt(lam_hi)
    inv_lo = 1.0 / np.sqrt(np.maximum(lam_lo, 1e-300))
    k = len(disk)
    max_grad = np.zeros(k)
    max_inv = np.zeros(k)
    for c in range(3):
        np.maximum.at(max_grad, tris[:, c], sig_hi)
        np.maximum.at(max_inv, tris[:, c], inv_lo)
    in_square = (
        (disk[:, 0] >= square.x0)
        & (disk[:, 0] < square.x0 + square.size)
        & (disk[:, 1] >= square.y0)
        & (disk[:, 1] < square.y0 + square.size)
    )
    if in_square.sum() < 3:
        raise TooFewPoints("square holds fewer than three vertices")
    lumped = vertex_areas(disk, tris)
    scale, _, _ = _scaled_isometry(
        disk[in_square], f[in_square], np.maximum(lumped[in_square], 1e-300)
    )
    exceptional = (max_grad > t * scale) | (max_inv > t / scale)
    bad = in_square & exceptional
    kept = in_square & ~exceptional
    lumped_surface = vertex_areas(f, tris)
    half = 0.5 * square.size
    budget = t ** (-q) * half * half
    kept_idx = np.where(kept)[0]
    if len(kept_idx) > 1200:
        rng = np.random.default_rng(seed)
        kept_idx = np.sort(rng.choice(kept_idx, 1200, replace=False))
    lip = 0.0
    if len(kept_idx) >= 2:
        du = disk[kept_idx]
        dv = f[kept_idx]
        for i in range(0, len(kept_idx), 256):
            bu = du[i : i + 256]
            bv = dv[i : i + 256]
            dd = np.linalg.norm(bu[:, None, :] - du[None, :, :], axis=2)
            df = np.linalg.norm(bv[:, None, :] - dv[None, :, :], axis=2)
            ok = dd > 1e-14
            if ok.any():
                lip = max(lip, float((df[ok] / dd[ok]).max()))
    return LipschitzPieces(
        scale=scale,
        threshold=float(t),
        excluded_area=float(lumped[bad].sum()),
        excluded_image_area=float(lumped_surface[bad].sum()),
        budget=float(budget),
        lipschitz=lip,
        excluded_count=int(bad.sum()),
        kept_count=int(kept.sum()),
        excluded_vertices=np.where(bad)[0],
    )


# ---------------------------------------------------------------------------
# bundled diagnostics and exports


@dataclass(eq=False)
class ConformalDiagnostics:
    """Headline conformal diagnostics of one parameterized patch."""

    bmo: float
    a2: float
    inverse_holder_max: float
    quasisymmetry_max: float
    mc_residual: float | None
    mc_residual_absolute: float | None
    gauss_residual: float
    gauss_residual_relative: float
    frame_energy: float
    energy: float
    initializer_energy: float
    image_area: float
    energy_area_gap: float
    max_qc_dilatation: float
    pin_error: float
    square_count: int
    psi: float | None
    boundary_chord_arc: float | None

    def to_dict(self) -> dict:
        def clean(x):
            if x is None:
                return None
            x = float(x)
            return x if np.isfinite(x) else None

        return {
            "bmo": clean(self.bmo),
            "a2": clean(self.a2),
            "inverse_holder_max": clean(self.inverse_holder_max),
            "quasisymmetry_max": clean(self.quasisymmetry_max),
            "mc_residual": clean(self.mc_residual),
            "mc_residual_absolute": clean(self.mc_residual_absolute),
            "gauss_residual": clean(self.gauss_residual),
            "gauss_residual_relative": clean(self.gauss_residual_relative),
            "frame_energy": clean(self.frame_energy),
            "energy": clean(self.energy),
            "initializer_energy": clean(self.initializer_energy),
            "image_area": clean(self.image_area),
            "energy_area_gap": clean(self.energy_area_gap),
            "max_qc_dilatation": clean(self.max_qc_dilatation),
            "pin_error": clean(self.pin_error),
            "square_count": int(self.square_count),
            "psi": clean(self.psi),
            "boundary_chord_arc": clean(self.boundary_chord_arc),
        }


def conformal_diagnostics(
    param: DiskParameterization,
    curvature=None,
    *,
    depth: int | None = None,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> ConformalDiagnostics:
    """Evaluate the full diagnostic battery on one parameterization.

    ``mc_residual`` is relative to the curvature term when that term is
    nonzero, otherwise the absolute weighted-L1 value.
    """
    depth = config.dyadic_depth if depth is None else depth
    cf = conformal_factor(param)
    squares = dyadic_squares(param, depth, config=config)
    bmo = bmo_norm(param, cf.w, depth, config=config)
    a2 = a2_constant(param, cf.w, depth, config=config)
    ih = inverse_holder_max(param, depth, config=config)
    rng = np.random.default_rng(config.seed)
    inner = np.where(np.linalg.norm(param.disk_points, axis=1) <= 0.55)[0]
    if len(inner) > 20:
        inner = np.sort(rng.choice(inner, 20, replace=False))
    qs = quasisymmetry_table(
        param, param.disk_points[inner], scales=(0.1, 0.2, 0.35)
    )
    res = curvature_equation_residuals(param, curvature)
    image_area = float((cf.area_factor * cf.disk_areas).sum())
    gap = (param.energy - 2.0 * image_area) / param.energy if param.energy else 0.0
    if res.mc_relative is not None and np.isfinite(res.mc_relative):
        mc_headline: float | None = res.mc_relative
    else:
        mc_headline = res.mc_absolute
    return ConformalDiagnostics(
        bmo=bmo,
        a2=a2,
        inverse_holder_max=ih,
        quasisymmetry_max=qs.max,
        mc_residual=mc_headline,
        mc_residual_absolute=res.mc_absolute,
        gauss_residual=res.gauss_absolute,
        gauss_residual_relative=res.gauss_relative,
        frame_energy=res.frame_energy,
        energy=param.energy,
        initializer_energy=param.initializer_energy,
        image_area=image_area,
        energy_area_gap=float(gap),
        max_qc_dilatation=float(cf.qc_dilatation.max()),
        pin_error=param.pin_error,
        square_count=len(squares),
        psi=param.patch.psi if param.patch is not None else None,
        boundary_chord_arc=(
            param.patch.boundary_chord_arc if param.patch is not None else None
        ),
    )


_SVG_STOPS = np.array(
    [
        (0.267, 0.005, 0.329),
        (0.229, 0.322, 0.545),
        (0.127, 0.566, 0.551),
        (0.369, 0.789, 0.383),
        (0.993, 0.906, 0.144),
    ]
)


def _color_hex(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_SVG_STOPS) - 1)
    i = min(int(t), len(_SVG_STOPS) - 2)
    frac = t - i
    rgb = (1 - frac) * _SVG_STOPS[i] + frac * _SVG_STOPS[i + 1]
    return "#%02x%02x%02x" % tuple(int(round(255 * c)) for c in rgb)


def parameter_domain_svg(
    param: DiskParameterization, values=None, size: int = 640
) -> str:
    """SVG of the parameter-domain mesh, triangles colored by a field.

    ``values`` defaults to the log conformal factor w.
    """
    if values is None:
        values = conformal_factor(param).w
    values = np.asarray(values, dtype=float)
    lo = float(values.min())
    hi = float(values.max())
    span = hi - lo if hi > lo else 1.0
    half = size / 2.0
    scale = half / 1.1

    def to_px(p):
        return (half + scale * p[0], half - scale * p[1])

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<circle cx="{half:.1f}" cy="{half:.1f}" r="{scale:.1f}" '
        'fill="none" stroke="#888" stroke-width="1"/>',
    ]
    disk = param.disk_points
    for tri, val in zip(param.triangles, values):
        pts = " ".join(
            "%.2f,%.2f" % to_px(disk[v]) for v in tri
        )
        lines.append(
            f'<polygon points="{pts}" fill="{_color_hex((val - lo) / span)}" '
            'stroke="none"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines)
