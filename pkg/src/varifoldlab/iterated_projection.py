"""Stagewise graph smoothing and iterated nearest-graph projection.

The pipeline attaches a contraction gauge to every sample point, extracts
the subset whose multiscale tilt is below a threshold, rebuilds the
complement from local moving-least-squares graphs glued along a separated
net with a partition of unity, and maps each rebuilt stage onto the next by
projecting along a blended normal bundle.  Composing the stage maps
parameterizes the surface from the first (coarsest) smoothed stage, and
empirical bi-Lipschitz statistics quantify the distortion of the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .config import DEFAULT_CONFIG, AnalysisConfig
from .errors import (
    EmptyFineSet,
    GraphTestFailure,
    NonContraction,
    NoValidPreimage,
    PointOutsideDomain,
    TooFewPoints,
    UncoveredQuery,
)
from .geometry import Ball, Plane, WeightedSurfaceSample, fit_plane_pca, grassmann_project
from .multiscale import local_maximal_tilt, resolution_floor

# The gauge is this fraction of the distance to the domain boundary.
GAUGE_SHRINK = 100.0


# ---------------------------------------------------------------------------
# gauge fields


@dataclass
class DeltaField:
    """Contraction gauge evaluated on a point set, with a functional form.

    `values` are the gauge at `points`; `evaluate` extends the same formula
    to arbitrary queries so synthesized stage points can be gauged too.
    """

    points: np.ndarray
    values: np.ndarray
    provenance: str  # "initial_gauge" | "distance_to_fine_set"
    domain: Ball
    fine_points: np.ndarray | None = None
    _fine_tree: cKDTree | None = field(default=None, repr=False)

    def evaluate(self, queries) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        rad = np.linalg.norm(q - self.domain.center, axis=1)
        if np.any(rad > self.domain.radius * (1.0 + 1e-9)):
            raise PointOutsideDomain("query outside the analysis domain ball")
        base = (self.domain.radius - rad) / GAUGE_SHRINK
        if self.provenance == "initial_gauge":
            return base
        if self._fine_tree is None:
            object.__setattr__(self, "_fine_tree", cKDTree(self.fine_points))
        dist, _ = self._fine_tree.query(q)
        return np.minimum(dist, base)


def make_delta0(
    sample: WeightedSurfaceSample, domain: Ball | None = None
) -> DeltaField:
    """Initial gauge: distance to the domain sphere over the shrink factor."""
    if domain is None:
        domain = Ball(np.zeros(sample.ambient_dim), 1.0)
    rad = np.linalg.norm(sample.points - domain.center, axis=1)
    if np.any(rad > domain.radius * (1.0 + 1e-9)):
        raise PointOutsideDomain("sample exceeds the analysis domain ball")
    values = (domain.radius - rad) / GAUGE_SHRINK
    return DeltaField(sample.points, values, "initial_gauge", domain)


def next_delta(
    sample: WeightedSurfaceSample, fine: "FineSet", domain: Ball | None = None
) -> DeltaField:
    """Successor gauge: min of distance-to-fine-set and the initial formula."""
    if domain is None:
        domain = Ball(np.zeros(sample.ambient_dim), 1.0)
    if fine.indices.size == 0:
        raise EmptyFineSet("cannot gauge against an empty fine set")
    fine_pts = sample.points[fine.indices]
    out = DeltaField(
        sample.points,
        np.zeros(len(sample)),
        "distance_to_fine_set",
        domain,
        fine_points=fine_pts,
    )
    out.values = out.evaluate(sample.points)
    return out


# ---------------------------------------------------------------------------
# fine sets


@dataclass
class FineSet:
    """Rows whose multiscale tilt at twice the gauge stays below `nu`.

    `plane_bases`/`plane_origins` cache the reference plane per member;
    members admitted because their gauge ball is below sample resolution
    carry their own tangent plane as the reference.
    """

    indices: np.ndarray
    nu: float
    plane_bases: np.ndarray
    plane_origins: np.ndarray
    tilts: np.ndarray

    def __contains__(self, row: int) -> bool:
        pos = np.searchsorted(self.indices, row)
        return pos < self.indices.size and self.indices[pos] == row

    def covers_all(self, n_rows: int) -> bool:
        return self.indices.size == n_rows


def reference_plane(
    sample: WeightedSurfaceSample, x, scale: float
) -> Plane:
    """Weighted principal plane of the ball around x, pinned at x."""
    idx = sample.ball_query(x, scale)
    m = sample.intrinsic_dim
    if idx.size < m + 1:
        raise TooFewPoints(
            f"{idx.size} points inside radius {scale:.4g}; need {m + 1}"
        )
    return fit_plane_pca(
        sample.points[idx],
        weights=sample.weights[idx],
        dim=m,
        center=np.asarray(x, dtype=float),
        pin_to_center=True,
    )


def extract_fine_set(
    sample: WeightedSurfaceSample,
    delta: DeltaField,
    nu: float,
    floor: float | None = None,
    refine: int = 1,
) -> FineSet:
    """Rows where the gauge vanishes or the 2-gauge maximal tilt is ≤ nu.

    Rows whose doubled gauge falls below the tilt resolution floor cannot be
    measured and are admitted (their flatness is unresolvable, and the zero
    set must always be contained).
    """
    if not nu > 0:
        raise ValueError("threshold nu must be positive")
    if floor is None:
        floor = resolution_floor(sample, 4.0)
    m = sample.intrinsic_dim
    n = sample.ambient_dim
    members: list[int] = []
    bases: list[np.ndarray] = []
    origins: list[np.ndarray] = []
    tilts: list[float] = []
    for i in range(len(sample)):
        d = float(delta.values[i])
        x = sample.points[i]
        if 2.0 * d < floor:
            # gauge ball below resolution (includes the zero set)
            members.append(i)
            bases.append(sample.tangent_bases[i])
            origins.append(x)
            tilts.append(0.0)
            continue
        try:
            plane = reference_plane(sample, x, 2.0 * d)
        except TooFewPoints:
            continue
        tilt = local_maximal_tilt(
            sample, x, 2.0 * d, plane, floor=floor, refine=refine
        )
        if tilt <= nu:
            members.append(i)
            bases.append(plane.basis)
            origins.append(x)
            tilts.append(tilt)
    if members:
        order = np.argsort(members)
        idx = np.asarray(members, dtype=int)[order]
        basis_arr = np.asarray(bases)[order]
        origin_arr = np.asarray(origins)[order]
        tilt_arr = np.asarray(tilts)[order]
    else:
        idx = np.zeros(0, dtype=int)
        basis_arr = np.zeros((0, m, n))
        origin_arr = np.zeros((0, n))
        tilt_arr = np.zeros(0)
    return FineSet(idx, float(nu), basis_arr, origin_arr, tilt_arr)


# ---------------------------------------------------------------------------
# separated nets


@dataclass
class SeparatedNet:
    """Greedy gauge-proportional packing with a conflict-free grouping."""

    indices: np.ndarray  # sample rows, in greedy acceptance order
    group_ids: np.ndarray
    group_count: int

    def groups(self):
        for g in range(self.group_count):
            yield self.indices[self.group_ids == g]


def build_separated_net(
    sample: WeightedSurfaceSample,
    delta: DeltaField,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> SeparatedNet:
    """Pack {gauge > 0} greedily, then color at a tenth-gauge separation.

    Processing runs in decreasing gauge order with stable index tie-breaks,
    so the result is deterministic.  Packing rejects a candidate inside the
    packing radius of an accepted point; coverage by accepted balls at twice
    the packing radius follows.  The group count is asserted against the
    10^(5m+1) ceiling and the true count recorded.
    """
    m = sample.intrinsic_dim
    vals = np.asarray(delta.values, dtype=float)
    cand = np.flatnonzero(vals > 0.0)
    if cand.size == 0:
        raise EmptyFineSet("no points with positive gauge to pack")
    order = cand[np.lexsort((cand, -vals[cand]))]
    pts = sample.points

    pack_mult = config.net_packing_mult
    r_pack = pack_mult * vals
    tree_all = cKDTree(pts[order])
    # only pairs closer than the largest packing radius can ever conflict
    close = tree_all.query_pairs(float(r_pack[order].max()), output_type="ndarray")
    conflicts: dict[int, list[int]] = {}
    for a, b in close:  # a < b in acceptance order
        conflicts.setdefault(int(b), []).append(int(a))
    accepted_mask = np.zeros(order.size, dtype=bool)
    for pos in range(order.size):
        row = order[pos]
        ok = True
        for earlier in conflicts.get(pos, ()):
            if accepted_mask[earlier] and (
                np.linalg.norm(pts[row] - pts[order[earlier]])
                < r_pack[order[earlier]]
            ):
                ok = False
                break
        accepted_mask[pos] = ok
    net_rows = order[accepted_mask]

    # greedy coloring with symmetric tenth-gauge separation
    net_pts = pts[net_rows]
    net_vals = vals[net_rows]
    sep = config.group_sep_mult
    tree_net = cKDTree(net_pts)
    forbidden: list[set[int]] = [set() for _ in range(net_rows.size)]
    group_ids = np.full(net_rows.size, -1, dtype=int)
    for pos in range(net_rows.size):
        taken = set(forbidden[pos])
        for nb in tree_net.query_ball_point(net_pts[pos], sep * net_vals[pos]):
            if nb != pos and group_ids[nb] >= 0:
                taken.add(int(group_ids[nb]))
        g = 0
        while g in taken:
            g += 1
        group_ids[pos] = g
        # forward-mark later points inside this member's own separation ball
        for nb in tree_net.query_ball_point(net_pts[pos], sep * net_vals[pos]):
            if nb > pos:
                forbidden[nb].add(g)
    q = int(group_ids.max()) + 1
    assert q <= 10 ** (5 * m + 1), "group count exceeded the packing ceiling"
    return SeparatedNet(net_rows, group_ids, q)


# ---------------------------------------------------------------------------
# partition of unity


def _pou_matrix(
    centers: np.ndarray, supports: np.ndarray, queries: np.ndarray
) -> csr_matrix:
    """Rows: queries; columns: bump centers; entries: normalized weights."""
    queries = np.atleast_2d(queries)
    tree_q = cKDTree(queries)
    rows, cols, vals = [], [], []
    for j, (c, r) in enumerate(zip(centers, supports)):
        if not r > 0:
            continue
        hit = tree_q.query_ball_point(c, r)
        if not hit:
            continue
        hit = np.asarray(hit, dtype=int)
        d2 = ((queries[hit] - c) ** 2).sum(axis=1) / r**2
        inside = d2 < 1.0
        rows.append(hit[inside])
        cols.append(np.full(int(inside.sum()), j))
        vals.append((1.0 - d2[inside]) ** 2)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    mat = csr_matrix(
        (vals, (rows, cols)), shape=(len(queries), len(centers))
    )
    sums = np.asarray(mat.sum(axis=1)).ravel()
    covered = sums > 0
    inv = np.zeros_like(sums)
    inv[covered] = 1.0 / sums[covered]
    return mat.multiply(inv[:, None]).tocsr()


def partition_of_unity(
    net: SeparatedNet,
    delta: DeltaField,
    query,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> list[tuple[int, float]]:
    """Normalized bump weights of the net members at one query point.

    Each bump is supported exactly on the ball of half the member's gauge.
    """
    centers = delta.points[net.indices]
    supports = config.pou_support_mult * np.asarray(delta.values)[net.indices]
    mat = _pou_matrix(centers, supports, np.asarray(query, dtype=float)[None, :])
    row = mat.getrow(0)
    if row.nnz == 0:
        raise UncoveredQuery("no bump support contains the query")
    return [(int(j), float(v)) for j, v in zip(row.indices, row.data)]


# ---------------------------------------------------------------------------
# smoothed stages


@dataclass
class SmoothedSurfaceStage:
    """One rebuilt surface: kept fine points plus synthesized graph points."""

    index: int
    points: np.ndarray
    gauge: np.ndarray
    sample_rows: np.ndarray  # source sample row per point; -1 if synthesized
    patch_centers: np.ndarray
    patch_bases: np.ndarray
    patch_origins: np.ndarray
    patch_gauge: np.ndarray
    graph_lipschitz: np.ndarray
    synth_offset_ratio: float
    overlap_mismatch: float
    normal_projectors: np.ndarray | None = None
    normal_lipschitz: np.ndarray | None = None

    @property
    def fine_mask(self) -> np.ndarray:
        return self.sample_rows >= 0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "points": self.points.tolist(),
            "gauge": self.gauge.tolist(),
            "fine_flags": self.fine_mask.astype(int).tolist(),
            "patches": [
                {
                    "center": c.tolist(),
                    "basis": b.tolist(),
                    "gauge": float(g),
                }
                for c, b, g in zip(
                    self.patch_centers, self.patch_bases, self.patch_gauge
                )
            ],
            "graph_lipschitz_max": float(self.graph_lipschitz.max())
            if self.graph_lipschitz.size
            else 0.0,
            "synth_offset_ratio": self.synth_offset_ratio,
            "overlap_mismatch": self.overlap_mismatch,
        }


def _square_grid(radius: float, step: float, m: int) -> np.ndarray:
    """Integer grid of in-plane coordinates covering a disk, center included."""
    if radius < step:
        return np.zeros((1, m))
    k = int(np.floor(radius / step))
    axes = [np.arange(-k, k + 1) * step] * m
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    return mesh[(mesh**2).sum(axis=1) <= radius**2]


def _mls_normal_offset(coords, normals, weights, eval_coords):
    """Weighted affine fit of normal offsets, evaluated at grid coordinates.

    coords : (N, m) in-plane data coordinates, normals : (N, n) their normal
    components, weights : (N,) bump weights recentred per evaluation node.
    Returns (K, n) fitted normal offsets or None when the fit is rank
    deficient at some node.
    """
    out = np.zeros((len(eval_coords), normals.shape[1]))
    m = coords.shape[1]
    for k, g in enumerate(eval_coords):
        rel = coords - g
        w = weights[k]
        mask = w > 0
        if int(mask.sum()) < m + 1:
            return None
        a = np.concatenate(
            [np.ones((int(mask.sum()), 1)), rel[mask]], axis=1
        )
        aw = a * w[mask][:, None]
        gram = aw.T @ a
        rhs = aw.T @ normals[mask]
        try:
            sol = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            return None
        out[k] = sol[0]
    return out


def build_sigma_delta(
    sample: WeightedSurfaceSample,
    fine: FineSet,
    net: SeparatedNet,
    delta: DeltaField,
    nu: float,
    config: AnalysisConfig = DEFAULT_CONFIG,
    stage_index: int = 0,
) -> SmoothedSurfaceStage:
    """Keep the fine points and fill the rest with local graph patches.

    Patches are fitted per net member, over that member's reference plane,
    by moving least squares on the fine points inside half a gauge, with the
    same bump profile as the partition of unity for weights.  Groups are
    processed in order and a synthesized candidate defers to any existing
    stage point within half a grid step (prior heights win on overlap).
    """
    m = sample.intrinsic_dim
    grid_step = sample.mean_spacing
    lip_bound = config.graph_lip_mult * nu
    floor = resolution_floor(sample, 4.0)
    vals = np.asarray(delta.values, dtype=float)

    fine_pts = sample.points[fine.indices]
    if fine_pts.shape[0] == 0:
        raise GraphTestFailure("no fine points to anchor any graph patch")
    fine_tree = cKDTree(fine_pts)
    sample_tree = sample.spatial_index

    stage_pts: list[np.ndarray] = [fine_pts]
    stage_rows: list[np.ndarray] = [fine.indices.copy()]
    patch_centers, patch_bases, patch_origins, patch_gauge = [], [], [], []
    overlap_mismatch = 0.0
    offset_ratio = 0.0

    support_mult = config.pou_support_mult
    fill_mult = config.patch_radius_mult
    for g in range(net.group_count):
        members = net.indices[net.group_ids == g]
        existing = np.concatenate(stage_pts)
        existing_tree = cKDTree(existing)
        new_pts: list[np.ndarray] = []
        for row in members:
            u = sample.points[row]
            d_u = vals[row]
            support_r = support_mult * d_u
            fill_r = fill_mult * d_u
            if row in fine:
                # the member's own points are kept verbatim; its cached
                # reference plane still anchors the partition of unity
                pos = int(np.searchsorted(fine.indices, row))
                basis = fine.plane_bases[pos]
                patch_centers.append(u)
                patch_bases.append(basis)
                patch_origins.append(u)
                patch_gauge.append(d_u)
                if 2.0 * d_u < floor:
                    # gauge below sample resolution: nothing to refit
                    continue
                local = fine_tree.query_ball_point(u, support_r)
                if len(local) < m + 1:
                    # too few anchors to refit; the kept points stand
                    continue
            else:
                local = fine_tree.query_ball_point(u, support_r)
                if len(local) < m + 1:
                    raise GraphTestFailure(
                        f"net point at {np.round(u, 6).tolist()} has only "
                        f"{len(local)} fine anchors inside {support_r:.4g}"
                    )
                plane = reference_plane(sample, u, 2.0 * d_u)
                basis = plane.basis
                patch_centers.append(u)
                patch_bases.append(basis)
                patch_origins.append(u)
                patch_gauge.append(d_u)
            local = np.asarray(local, dtype=int)
            pts_local = fine_pts[local]
            rel = pts_local - u
            coords = rel @ basis.T
            normals = rel - coords @ basis
            grid = _square_grid(fill_r, grid_step, m)
            d2 = (
                (coords[None, :, :] - grid[:, None, :]) ** 2
            ).sum(axis=2) / support_r**2
            bump_w = np.where(d2 < 1.0, (1.0 - np.minimum(d2, 1.0)) ** 2, 0.0)
            bump_w = bump_w * sample.weights[fine.indices[local]][None, :]
            offsets = _mls_normal_offset(coords, normals, bump_w, grid)
            if offsets is None:
                raise GraphTestFailure(
                    f"rank-deficient graph fit at {np.round(u, 6).tolist()}"
                )
            candidates = u + grid @ basis + offsets
            near_d, _ = existing_tree.query(candidates)
            keep = near_d > 0.5 * grid_step
            overlap_mismatch = max(
                overlap_mismatch,
                float(near_d[~keep].max()) if np.any(~keep) else 0.0,
            )
            if np.any(keep):
                new_pts.append(candidates[keep])
        if new_pts:
            batch = np.concatenate(new_pts)
            # candidates synthesized within one group can still collide with
            # each other near group boundaries; keep first come
            batch_tree = cKDTree(batch)
            pairs = batch_tree.query_pairs(0.5 * grid_step, output_type="ndarray")
            drop = np.zeros(len(batch), dtype=bool)
            for a, b in pairs:
                if not drop[a]:
                    drop[b] = True
            batch = batch[~drop]
            stage_pts.append(batch)
            stage_rows.append(np.full(len(batch), -1, dtype=int))

    points = np.concatenate(stage_pts)
    rows = np.concatenate(stage_rows)
    gauge = delta.evaluate(points)

    synth = rows < 0
    if np.any(synth):
        d_sample, _ = sample_tree.query(points[synth])
        d_fine, _ = fine_tree.query(points[synth])
        denom = nu * np.maximum(d_fine, 1e-300)
        offset_ratio = float((d_sample / denom).max())

    # graph test per patch over the finished stage
    stage_tree = cKDTree(points)
    lips = np.zeros(len(patch_centers))
    for k, (c, basis, d_u) in enumerate(
        zip(patch_centers, patch_bases, patch_gauge)
    ):
        ball = stage_tree.query_ball_point(c, support_mult * d_u)
        if len(ball) < 2:
            continue
        if len(ball) > 300:
            # bound the pairwise cost on wide patches with a uniform stride
            ball = list(np.asarray(ball)[:: len(ball) // 300 + 1])
        local = points[np.asarray(ball, dtype=int)] - c
        cc = local @ np.asarray(basis).T
        hh = local - cc @ np.asarray(basis)
        dc = np.linalg.norm(cc[:, None, :] - cc[None, :, :], axis=2)
        dh = np.linalg.norm(hh[:, None, :] - hh[None, :, :], axis=2)
        mask = dc > 1e-12
        if mask.any():
            lips[k] = float((dh[mask] / dc[mask]).max())
        if lips[k] > lip_bound:
            raise GraphTestFailure(
                f"patch at {np.round(c, 6).tolist()} fails the graph test: "
                f"Lipschitz {lips[k]:.3g} exceeds {lip_bound:.3g}"
            )

    return SmoothedSurfaceStage(
        index=stage_index,
        points=points,
        gauge=gauge,
        sample_rows=rows,
        patch_centers=np.asarray(patch_centers).reshape(-1, sample.ambient_dim),
        patch_bases=np.asarray(patch_bases).reshape(
            -1, m, sample.ambient_dim
        ),
        patch_origins=np.asarray(patch_origins).reshape(
            -1, sample.ambient_dim
        ),
        patch_gauge=np.asarray(patch_gauge, dtype=float),
        graph_lipschitz=lips,
        synth_offset_ratio=offset_ratio,
        overlap_mismatch=overlap_mismatch,
    )


def _fine_only_stage(
    sample: WeightedSurfaceSample,
    fine: FineSet,
    delta: DeltaField,
    stage_index: int,
) -> SmoothedSurfaceStage:
    """Stage for a fine set that already covers everything: no synthesis."""
    pts = sample.points[fine.indices]
    n = sample.ambient_dim
    m = sample.intrinsic_dim
    projs = np.eye(n)[None] - np.einsum(
        "nmi,nmj->nij",
        sample.tangent_bases[fine.indices],
        sample.tangent_bases[fine.indices],
    )
    return SmoothedSurfaceStage(
        index=stage_index,
        points=pts,
        gauge=np.asarray(delta.values)[fine.indices],
        sample_rows=fine.indices.copy(),
        patch_centers=np.zeros((0, n)),
        patch_bases=np.zeros((0, m, n)),
        patch_origins=np.zeros((0, n)),
        patch_gauge=np.zeros(0),
        graph_lipschitz=np.zeros(0),
        synth_offset_ratio=0.0,
        overlap_mismatch=0.0,
        normal_projectors=projs,
        normal_lipschitz=np.zeros(0),
    )


# ---------------------------------------------------------------------------
# normal bundle


def normal_field(
    stage: SmoothedSurfaceStage,
    sample: WeightedSurfaceSample,
    config: AnalysisConfig = DEFAULT_CONFIG,
) -> SmoothedSurfaceStage:
    """Blend patch normal projectors with the partition of unity.

    Kept fine points outside every bump support fall back to their own
    sample tangent plane's normal projector (their plane is exact there);
    a synthesized point without coverage is an error.  The per-patch
    Lipschitz quotient of the blended field is recorded.
    """
    n = stage.points.shape[1]
    m = stage.patch_bases.shape[1] if stage.patch_bases.size else n - 1
    projs = np.zeros((len(stage.points), n, n))
    if len(stage.patch_centers) == 0:
        if stage.normal_projectors is None:
            raise UncoveredQuery("stage has no patches and no fallback planes")
        return stage
    supports = config.pou_support_mult * stage.patch_gauge
    mat = _pou_matrix(stage.patch_centers, supports, stage.points)
    sums = np.asarray(mat.sum(axis=1)).ravel()
    uncovered = sums <= 0
    if np.any(uncovered & ~stage.fine_mask):
        raise UncoveredQuery(
            f"{int((uncovered & ~stage.fine_mask).sum())} synthesized points "
            "have no bump coverage"
        )
    patch_normals = np.stack(
        [
            np.eye(n) - b.T @ b
            for b in stage.patch_bases
        ]
    )
    blended = np.einsum(
        "kij,pk->pij", patch_normals, mat.toarray()
    )
    for i in range(len(stage.points)):
        if uncovered[i]:
            row = stage.sample_rows[i]
            basis = sample.tangent_bases[row]
            projs[i] = np.eye(n) - basis.T @ basis
        else:
            projs[i] = grassmann_project(blended[i], n - m).projector

    # per-patch Lipschitz quotient of the blended field
    tree = cKDTree(stage.points)
    lips = np.zeros(len(stage.patch_centers))
    for k, (c, r) in enumerate(zip(stage.patch_centers, supports)):
        ball = tree.query_ball_point(c, r)
        if len(ball) < 2:
            continue
        ball = np.asarray(ball[:50], dtype=int)
        pp = projs[ball]
        dp = np.linalg.norm(
            (pp[:, None, :, :] - pp[None, :, :, :]).reshape(
                len(ball), len(ball), -1
            ),
            axis=2,
        )
        dx = np.linalg.norm(
            stage.points[ball][:, None, :] - stage.points[ball][None, :, :],
            axis=2,
        )
        mask = dx > 1e-12
        if mask.any():
            lips[k] = float((dp[mask] / dx[mask]).max())
    stage.normal_projectors = projs
    stage.normal_lipschitz = lips
    return stage


# ---------------------------------------------------------------------------
# stage-to-stage projection


@dataclass
class CorrespondenceMap:
    """Pairing of one stage's points with their projections on the next."""

    source_points: np.ndarray
    target_points: np.ndarray
    target_indices: np.ndarray
    displacements: np.ndarray  # v with source = target + v, exactly
    depth: int
    tangential_residuals: np.ndarray

    @property
    def displacement_norms(self) -> np.ndarray:
        return np.linalg.norm(self.displacements, axis=1)

    def to_csv_rows(self):
        header = ["source_idx", "target_idx"] + [
            f"v{k + 1}" for k in range(self.displacements.shape[1])
        ]
        yield header
        for i, (t, v) in enumerate(zip(self.target_indices, self.displacements)):
            yield [i, int(t)] + [f"{c:.17g}" for c in v]


def project_tau(
    stage_from: SmoothedSurfaceStage,
    stage_to: SmoothedSurfaceStage,
    beta: float,
    candidates: int = 12,
    slack: float | None = None,
) -> CorrespondenceMap:
    """Project each source point onto the target stage's nearest graph.

    For source x and candidate target y the decomposition x = y + v splits
    v into normal and tangential parts of y's blended normal projector; the
    admissible candidate with the smallest tangential residual wins.  The
    normal part must stay within beta times the target gauge, padded by a
    resolution slack so kept fine points (gauge zero) remain reachable.
    """
    if stage_to.normal_projectors is None:
        raise MissingNormalField()
    src = stage_from.points
    tgt = stage_to.points
    if slack is None:
        nn, _ = cKDTree(tgt).query(tgt, k=2)
        slack = 2.0 * float(np.median(nn[:, 1]))
    tree = cKDTree(tgt)
    k = min(candidates, len(tgt))
    dist, idx = tree.query(src, k=k)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    chosen = np.full(len(src), -1, dtype=int)
    tang_res = np.zeros(len(src))
    for i in range(len(src)):
        best = None
        for j in range(k):
            y_row = int(idx[i, j])
            d = src[i] - tgt[y_row]
            v_norm = stage_to.normal_projectors[y_row] @ d
            if np.linalg.norm(v_norm) > beta * stage_to.gauge[y_row] + slack:
                continue
            t_res = float(np.linalg.norm(d - v_norm))
            if best is None or t_res < best[0]:
                best = (t_res, y_row)
        if best is None:
            raise NoValidPreimage(
                f"source point {np.round(src[i], 6).tolist()} has no "
                f"admissible target within normal reach"
            )
        tang_res[i], chosen[i] = best
    return CorrespondenceMap(
        source_points=src,
        target_points=tgt[chosen],
        target_indices=chosen,
        displacements=src - tgt[chosen],
        depth=1,
        tangential_residuals=tang_res,
    )


class MissingNormalField(UncoveredQuery):
    def __init__(self):
        super().__init__("target stage has no normal field; run normal_field")


def compose_maps(maps: list[CorrespondenceMap]) -> CorrespondenceMap:
    """Chain stage maps by index: the step-wise composition, exactly."""
    if not maps:
        raise ValueError("nothing to compose")
    chain = maps[0].target_indices.copy()
    targets = maps[0].target_points.copy()
    residuals = maps[0].tangential_residuals.copy()
    for nxt in maps[1:]:
        targets = nxt.target_points[chain]
        residuals = nxt.tangential_residuals[chain]
        chain = nxt.target_indices[chain]
    src = maps[0].source_points
    return CorrespondenceMap(
        source_points=src,
        target_points=targets,
        target_indices=chain,
        displacements=src - targets,
        depth=sum(mp.depth for mp in maps),
        tangential_residuals=residuals,
    )


# ---------------------------------------------------------------------------
# distortion statistics


@dataclass
class DistortionReport:
    """Empirical pointwise upper/lower distortion of a discrete map."""

    f_upper: np.ndarray
    f_lower: np.ndarray
    p: float
    lp_upper: float
    lp_lower_inverse: float
    lp_deviation: float
    exponent_forward: float
    exponent_inverse: float
    pair_budget: int

    @property
    def spread(self) -> float:
        return float(self.f_upper.max() / self.f_lower.min())

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "upper_max": float(self.f_upper.max()),
            "upper_mean": float(self.f_upper.mean()),
            "lower_min": float(self.f_lower.min()),
            "lower_mean": float(self.f_lower.mean()),
            "spread": self.spread,
            "lp_upper": self.lp_upper,
            "lp_lower_inverse": self.lp_lower_inverse,
            "lp_deviation": self.lp_deviation,
            "exponent_forward": self.exponent_forward,
            "exponent_inverse": self.exponent_inverse,
            "pair_budget": self.pair_budget,
        }


def distortion_report(
    source_points,
    target_points,
    weights=None,
    pairs: int = 2000,
    p: float = 2.0,
    seed: int = 0,
) -> DistortionReport:
    """Pointwise sup/inf difference quotients over sampled partners.

    All pairs are used when the point count is at most `pairs`; otherwise
    each point gets its nearest neighbors plus seeded random partners.
    """
    src = np.atleast_2d(np.asarray(source_points, dtype=float))
    tgt = np.atleast_2d(np.asarray(target_points, dtype=float))
    if len(src) < 2:
        raise TooFewPoints("distortion needs at least two mapped points")
    n_pts = len(src)
    if weights is None:
        w = np.full(n_pts, 1.0 / n_pts)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()

    if n_pts <= pairs:
        partner_lists = [np.delete(np.arange(n_pts), i) for i in range(n_pts)]
    else:
        rng = np.random.default_rng(seed)
        k_near = 8
        _, near = cKDTree(src).query(src, k=k_near + 1)
        n_rand = max(4, pairs // n_pts + 1)
        partner_lists = []
        for i in range(n_pts):
            cand = np.concatenate(
                [near[i, 1:], rng.integers(0, n_pts, n_rand)]
            )
            cand = np.unique(cand[cand != i])
            partner_lists.append(cand)

    f_up = np.zeros(n_pts)
    f_lo = np.zeros(n_pts)
    dev_up = np.zeros(n_pts)
    logs_s: list[np.ndarray] = []
    logs_t: list[np.ndarray] = []
    dev = tgt - src
    for i in range(n_pts):
        js = partner_lists[i]
        ds = np.linalg.norm(src[js] - src[i], axis=1)
        dt = np.linalg.norm(tgt[js] - tgt[i], axis=1)
        dd = np.linalg.norm(dev[js] - dev[i], axis=1)
        ok = ds > 1e-300
        ratio = dt[ok] / ds[ok]
        if ratio.size == 0:
            f_up[i] = f_lo[i] = 1.0
            continue
        f_up[i] = ratio.max()
        f_lo[i] = ratio.min()
        dev_up[i] = (dd[ok] / ds[ok]).max()
        pos = ok & (dt > 1e-300)
        logs_s.append(np.log(np.linalg.norm(src[js][pos] - src[i], axis=1)))
        logs_t.append(np.log(dt[pos]))

    if logs_s:
        ls = np.concatenate(logs_s)
        lt = np.concatenate(logs_t)
        var = float(((ls - ls.mean()) ** 2).sum())
        if var > 0:
            cov = float(((ls - ls.mean()) * (lt - lt.mean())).sum())
            exp_fwd = cov / var
        else:
            exp_fwd = 1.0
        var_t = float(((lt - lt.mean()) ** 2).sum())
        exp_inv = (cov / var_t) if var_t > 0 else 1.0
    else:
        exp_fwd = exp_inv = 1.0

    lp_upper = float((w * f_up**p).sum())
    safe_lo = np.maximum(f_lo, 1e-300)
    lp_lower_inverse = float((w * safe_lo ** (-p)).sum())
    lp_deviation = float((w * dev_up**p).sum())
    return DistortionReport(
        f_upper=f_up,
        f_lower=f_lo,
        p=p,
        lp_upper=lp_upper,
        lp_lower_inverse=lp_lower_inverse,
        lp_deviation=lp_deviation,
        exponent_forward=exp_fwd,
        exponent_inverse=exp_inv,
        pair_budget=pairs,
    )


# ---------------------------------------------------------------------------
# the full iteration


@dataclass
class IterationResult:
    """First smoothed stage, the composed projection, and its distortion."""

    stage0: SmoothedSurfaceStage
    map: CorrespondenceMap
    report: DistortionReport
    stages: list[SmoothedSurfaceStage]
    step_maps: list[CorrespondenceMap]
    displacement_history: list[float]
    bad_weight_history: list[float]
    group_count_history: list[int]
    nu: float
    beta: float
    tail_bound: float
    embed_scale: float
    embed_center: np.ndarray


def _embed(sample: WeightedSurfaceSample, radius: float):
    """Rescale into a small ball at the origin so the gauge resolves."""
    center = (sample.weights[:, None] * sample.points).sum(
        axis=0
    ) / sample.total_weight
    extent = float(np.linalg.norm(sample.points - center, axis=1).max())
    scale = radius / max(extent, 1e-300)
    moved = sample.transformed(translation=-center).transformed(scale=scale)
    return moved, scale, center


def iterate_parameterization(
    sample: WeightedSurfaceSample,
    gamma_hint: float,
    depth: int | None = None,
    config: AnalysisConfig = DEFAULT_CONFIG,
    nu: float | None = None,
) -> IterationResult:
    """Run the full stagewise smoothing-and-projection loop.

    The sample is first rescaled into a ball of the configured embedding
    radius so the gauge stays several sample spacings wide.  Stages stop
    early once the maximal step displacement falls under the sample spacing;
    two consecutive steps that fail to halve the displacement abort with
    NonContraction.  All returned coordinates are mapped back to the input
    frame.
    """
    if depth is None:
        depth = config.stage_depth
    if nu is None:
        nu = (
            config.fine_threshold
            if config.fine_threshold is not None
            else float(np.sqrt(max(gamma_hint, 1e-300)))
        )
    beta = (
        config.bundle_radius
        if config.bundle_radius is not None
        else float(np.sqrt(nu))
    )
    work, scale, center = _embed(sample, config.embedding_radius)
    domain = Ball(np.zeros(sample.ambient_dim), 1.0)
    spacing = work.mean_spacing

    delta = make_delta0(work, domain)
    fine = extract_fine_set(work, delta, nu)
    if fine.indices.size == 0:
        raise EmptyFineSet(
            "no point passes the tilt threshold at the initial gauge; "
            "the surface is outside the certifiable regime"
        )
    bad_weights = [
        float(work.total_weight - work.weights[fine.indices].sum())
    ]
    group_counts: list[int] = []

    if fine.covers_all(len(work)):
        stage0 = _fine_only_stage(work, fine, delta, 0)
    else:
        net = build_separated_net(work, delta, config)
        group_counts.append(net.group_count)
        stage0 = build_sigma_delta(work, fine, net, delta, nu, config, 0)
        normal_field(stage0, work, config)

    stages = [stage0]
    maps: list[CorrespondenceMap] = []
    disp_hist: list[float] = []
    worse_streak = 0
    for j in range(depth):
        delta = next_delta(work, fine, domain)
        fine = extract_fine_set(work, delta, nu)
        bad_weights.append(
            float(work.total_weight - work.weights[fine.indices].sum())
        )
        if fine.covers_all(len(work)):
            stage = _fine_only_stage(work, fine, delta, j + 1)
        else:
            net = build_separated_net(work, delta, config)
            group_counts.append(net.group_count)
            stage = build_sigma_delta(work, fine, net, delta, nu, config, j + 1)
            normal_field(stage, work, config)
        tau = project_tau(stages[-1], stage, beta)
        stages.append(stage)
        maps.append(tau)
        dmax = float(tau.displacement_norms.max())
        disp_hist.append(dmax)
        if fine.covers_all(len(work)) and dmax <= spacing:
            # every sample row is kept verbatim and the last step moved
            # nothing resolvable: later stages would repeat identically
            break
        if (
            len(disp_hist) >= 2
            and dmax > 0.5 * disp_hist[-2]
            and dmax >= spacing
        ):
            # sub-resolution wobble is sampling noise, not divergence
            worse_streak += 1
            if worse_streak >= 2:
                raise NonContraction(
                    f"step displacement failed to halve twice in a row: "
                    f"{disp_hist[-3:]}"
                )
        else:
            worse_streak = 0

    if maps:
        composed = compose_maps(maps)
    else:
        composed = CorrespondenceMap(
            source_points=stage0.points.copy(),
            target_points=stage0.points.copy(),
            target_indices=np.arange(len(stage0.points)),
            displacements=np.zeros_like(stage0.points),
            depth=0,
            tangential_residuals=np.zeros(len(stage0.points)),
        )
    report = distortion_report(
        composed.source_points,
        composed.target_points,
        pairs=2000,
        p=config.p_exponent,
        seed=config.seed,
    )
    ratios = [
        disp_hist[i + 1] / disp_hist[i]
        for i in range(len(disp_hist) - 1)
        if disp_hist[i] > 0
    ]
    rho = min(max(ratios), 0.5) if ratios else 0.5
    tail = disp_hist[-1] * rho / (1.0 - rho) if disp_hist else 0.0

    # map everything back to the input frame
    inv = 1.0 / scale
    for st in stages:
        st.points = st.points * inv + center
        st.gauge = st.gauge * inv
        if st.patch_centers.size:
            st.patch_centers = st.patch_centers * inv + center
            st.patch_origins = st.patch_origins * inv + center
            st.patch_gauge = st.patch_gauge * inv
    for mp in maps + [composed]:
        mp.source_points = mp.source_points * inv + center
        mp.target_points = mp.target_points * inv + center
        # recompute rather than rescale so source = target + v stays exact
        mp.displacements = mp.source_points - mp.target_points
        mp.tangential_residuals = mp.tangential_residuals * inv
    disp_hist = [d * inv for d in disp_hist]
    tail *= inv

    return IterationResult(
        stage0=stage0,
        map=composed,
        report=report,
        stages=stages,
        step_maps=maps,
        displacement_history=disp_hist,
        bad_weight_history=bad_weights,
        group_count_history=group_counts,
        nu=float(nu),
        beta=float(beta),
        tail_bound=float(tail),
        embed_scale=scale,
        embed_center=center,
    )
