"""Triangle-mesh utilities: areas, normals, Laplacians, adjacency.

Shared by the curvature cross-check path and the disk parameterization.
Orientation conventions follow the face winding as given; no reordering is
performed here.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import DegenerateTriangle, NonManifoldMesh
from .geometry import WeightedSurfaceSample


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    if v.shape[1] == 2:
        cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        return 0.5 * np.abs(cross)
    cross = np.cross(e1, e2)
    return 0.5 * np.linalg.norm(cross, axis=1)


def angle_defects(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """2*pi minus the sum of incident corner angles, per vertex.

    The distributional (integrated) Gauss curvature of the piecewise-linear
    surface at interior vertices; boundary vertices report the same formula
    and should be masked by the caller.
    """
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    out = np.full(len(v), 2.0 * np.pi)
    for c in range(3):
        a = v[f[:, c]]
        b = v[f[:, (c + 1) % 3]]
        d = v[f[:, (c + 2) % 3]]
        e1 = b - a
        e2 = d - a
        denom = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
        if np.any(denom <= 0):
            raise DegenerateTriangle("zero-length edge at a corner")
        cosang = np.einsum("ij,ij->i", e1, e2) / denom
        np.subtract.at(out, f[:, c], np.arccos(np.clip(cosang, -1.0, 1.0)))
    return out


def structured_disk_mesh(rings: int, radius: float = 1.0):
    """Polar disk mesh with a clean circular boundary.

    Ring ``j`` (1..rings) carries ``6 j`` vertices at radius ``j / rings``
    times ``radius``; triangles come from a Delaunay pass over the rings
    (a tiny deterministic radial perturbation breaks cocircular ties).
    Returns ``(points (k, 2), triangles (t, 3))`` with counterclockwise
    triangles; the convex hull is the outer ring.
    """
    from scipy.spatial import Delaunay

    if rings < 1:
        raise ValueError("rings must be at least 1")
    pts = [np.zeros((1, 2))]
    for j in range(1, rings + 1):
        m = 6 * j
        ang = 2.0 * np.pi * np.arange(m) / m
        r = radius * (j / rings) * (1.0 + 1e-9 * np.sin(7.0 * np.arange(m)))
        pts.append(np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1))
    points = np.vstack(pts)
    tris = Delaunay(points).simplices
    e1 = points[tris[:, 1]] - points[tris[:, 0]]
    e2 = points[tris[:, 2]] - points[tris[:, 0]]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep = np.abs(det) > 1e-12 * radius * radius
    tris = tris[keep]
    det = det[keep]
    flip = det < 0
    out = tris.copy()
    out[flip, 1], out[flip, 2] = tris[flip, 2], tris[flip, 1]
    return points, out


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norms = np.linalg.norm(cross, axis=1, keepdims=True)
    if np.any(norms <= 0):
        raise DegenerateTriangle("zero-area face")
    return cross / norms


def vertex_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Barycentric vertex areas: one third of each incident face."""
    areas = triangle_areas(vertices, faces)
    out = np.zeros(len(vertices))
    for k in range(3):
        np.add.at(out, faces[:, k], areas / 3.0)
    return out


def _cotangents(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Cotangent of the angle at each face corner, shape (F, 3)."""
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    cots = np.empty((len(f), 3))
    for k in range(3):
        a = v[f[:, (k + 1) % 3]] - v[f[:, k]]
        b = v[f[:, (k + 2) % 3]] - v[f[:, k]]
        dot = np.einsum("ij,ij->i", a, b)
        if v.shape[1] == 2:
            crossn = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        else:
            crossn = np.linalg.norm(np.cross(a, b), axis=1)
        if np.any(crossn <= 0):
            raise DegenerateTriangle("zero-area face in cotangent assembly")
        cots[:, k] = dot / crossn
    return cots


def cotangent_laplacian(vertices: np.ndarray, faces: np.ndarray) -> sparse.csr_matrix:
    """Negative-semidefinite cotangent operator.

    Off-diagonal entry for edge (i, j) is half the sum of the cotangents of
    the angles opposite to the edge; diagonal holds minus the row sum, so
    constants are in the kernel.
    """
    f = np.asarray(faces, dtype=int)
    cots = _cotangents(vertices, f)
    rows, cols, vals = [], [], []
    for k in range(3):
        i = f[:, (k + 1) % 3]
        j = f[:, (k + 2) % 3]
        w = 0.5 * cots[:, k]
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    n = len(vertices)
    L = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    L = L - sparse.diags(np.asarray(L.sum(axis=1)).ravel())
    return L.tocsr()


def edge_face_counts(faces: np.ndarray) -> dict:
    """Undirected edge -> number of incident faces."""
    counts: dict = {}
    for tri in np.asarray(faces, dtype=int):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(int(a), int(b)), max(int(a), int(b)))
            counts[key] = counts.get(key, 0) + 1
    return counts


def check_manifold(faces: np.ndarray) -> dict:
    """Raise on edges shared by three or more faces; return the edge counts."""
    counts = edge_face_counts(faces)
    bad = [e for e, c in counts.items() if c > 2]
    if bad:
        raise NonManifoldMesh(f"{len(bad)} edges shared by more than two faces")
    return counts


def boundary_loops(faces: np.ndarray) -> list:
    """Ordered vertex cycles of the mesh boundary (edges on one face only)."""
    counts = check_manifold(faces)
    boundary = [e for e, c in counts.items() if c == 1]
    if not boundary:
        return []
    succ: dict = {}
    # orient boundary edges as they appear in faces so loops are ordered
    bset = set(boundary)
    for tri in np.asarray(faces, dtype=int):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(int(a), int(b)), max(int(a), int(b)))
            if key in bset:
                succ[int(a)] = int(b)
    loops = []
    seen: set = set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = succ[start]
        while cur != start:
            loop.append(cur)
            seen.add(cur)
            cur = succ[cur]
        loops.append(loop)
    return loops


def mesh_to_sample(vertices: np.ndarray, faces: np.ndarray) -> WeightedSurfaceSample:
    """Weighted sample at the vertices of a triangle mesh.

    Weights are barycentric vertex areas; tangent planes come from
    area-weighted averages of incident face normals.
    """
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    check_manifold(f)
    areas = triangle_areas(v, f)
    normals = face_normals(v, f)
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, f[:, k], normals * areas[:, None])
    norms = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(norms <= 0):
        raise DegenerateTriangle("vertex with cancelling incident normals")
    n_hat = acc / norms
    bases = _orthonormal_complement(n_hat)
    return WeightedSurfaceSample(v, vertex_areas(v, f), bases, faces=f)


def _orthonormal_complement(normals: np.ndarray) -> np.ndarray:
    ref = np.where(
        np.abs(normals[:, [0]]) < 0.9,
        np.array([[1.0, 0.0, 0.0]]),
        np.array([[0.0, 1.0, 0.0]]),
    )
    t1 = np.cross(normals, ref)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    t2 /= np.linalg.norm(t2, axis=1, keepdims=True)
    return np.stack([t1, t2], axis=1)
