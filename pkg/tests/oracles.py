"""Independent oracles for derived test values.

Everything here is deliberately naive: O(N^2) double loops, dense parameter
grids, explicit quadrature on analytic surfaces.  Implementation modules never
import this file; tests freeze values produced here and compare the library
against them.  scripts/freeze_oracle_values.py prints the constants.
"""

from __future__ import annotations

import numpy as np

# ---------------------------------------------------------------------------
# brute-force set and plane distances


def brute_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """O(N*M) bilateral Hausdorff distance between point sets."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(max(_directed_max_min(a, b), _directed_max_min(b, a)))


def _directed_max_min(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> float:
    worst = 0.0
    for lo in range(0, a.shape[0], chunk):
        block = a[lo : lo + chunk]
        d2 = np.sum((block[:, None, :] - b[None, :, :]) ** 2, axis=2)
        worst = max(worst, float(np.sqrt(d2.min(axis=1)).max()))
    return worst


def fibonacci_directions(count: int) -> np.ndarray:
    """Deterministic unit vectors covering S^2 (golden-angle lattice)."""
    i = np.arange(count, dtype=float) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def grid_min_projector_distance(matrix: np.ndarray, count: int = 20000):
    """Best rank-2 orthogonal projector in R^3 from a dense normal grid.

    Returns (min Frobenius distance over the grid, best projector).
    """
    m = np.asarray(matrix, dtype=float)
    sym = 0.5 * (m + m.T)
    best = np.inf
    best_p = None
    for n in fibonacci_directions(count):
        p = np.eye(3) - np.outer(n, n)
        d = float(np.linalg.norm(sym - p))
        if d < best:
            best = d
            best_p = p
    return best, best_p


def grid_beta_m2(points, weights, center, s, n_normals=20000):
    """Brute-force Jones beta^2 for a 2-surface sample in R^3.

    Minimizes s^-4 * sum w * dist^2 over affine planes: coarse grid of unit
    normals followed by a fine local grid around the coarse argmin.  For
    each normal the 1-d offset least-squares problem is solved by its
    closed form (weighted mean of the heights).
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    c = np.asarray(center, dtype=float)
    rel = pts - c
    keep = np.einsum("ij,ij->i", rel, rel) <= s * s
    rel = rel[keep]
    w = w[keep]
    if rel.shape[0] == 0:
        return 0.0
    w_sum = float(w.sum())

    def sweep(dirs):
        best_val, best_dir = np.inf, dirs[0]
        for block in np.array_split(dirs, max(1, len(dirs) // 4000)):
            H = rel @ block.T
            vals = w @ (H * H) - (w @ H) ** 2 / w_sum
            k = int(np.argmin(vals))
            if vals[k] < best_val:
                best_val, best_dir = float(vals[k]), block[k]
        return best_val, best_dir

    best, n_star = sweep(fibonacci_directions(n_normals))
    # local refinement: quadratic error in the patch step size
    delta = 2.0 * np.sqrt(4.0 * np.pi / n_normals)
    u = np.cross(n_star, [1.0, 0.0, 0.0])
    if np.linalg.norm(u) < 1e-6:
        u = np.cross(n_star, [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(n_star, u)
    g = np.linspace(-delta, delta, 41)
    aa, bb = np.meshgrid(g, g)
    local = n_star + aa.ravel()[:, None] * u + bb.ravel()[:, None] * v
    local /= np.linalg.norm(local, axis=1, keepdims=True)
    best_local, _ = sweep(local)
    return min(best, best_local) / s**4


def grid_beta_m1(points, weights, center, s, n_angles=20000):
    """Brute-force Jones beta^2 for a curve sample in R^2 (exponent s^-3)."""
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    c = np.asarray(center, dtype=float)
    rel = pts - c
    keep = np.einsum("ij,ij->i", rel, rel) <= s * s
    rel = rel[keep]
    w = w[keep]
    if rel.shape[0] == 0:
        return 0.0
    best = np.inf
    for t in np.linspace(0.0, np.pi, n_angles, endpoint=False):
        n = np.array([np.sin(t), -np.cos(t)])
        h = rel @ n
        d_star = float(np.sum(w * h) / np.sum(w))
        val = float(np.sum(w * (h - d_star) ** 2))
        if val < best:
            best = val
    return best / s**3


# ---------------------------------------------------------------------------
# analytic sphere cap (pole at the origin, sphere center at (0, 0, R))


def cap_point(R, theta, phi):
    return np.stack(
        [
            R * np.sin(theta) * np.cos(phi),
            R * np.sin(theta) * np.sin(phi),
            R * (1.0 - np.cos(theta)),
        ],
        axis=-1,
    )


def cap_theta_of_chord(R, chord):
    """Polar angle at which |p| equals the given chord distance."""
    return 2.0 * np.arcsin(np.clip(chord / (2.0 * R), -1.0, 1.0))


def cap_area_chord(R, chord):
    """Area of the cap cut by the extrinsic ball of radius `chord`."""
    theta = cap_theta_of_chord(R, chord)
    return 2.0 * np.pi * R * R * (1.0 - np.cos(theta))


def cap_area_planar(R, a):
    """Area of the cap with planar rim radius a: 2 pi R (R - sqrt(R^2-a^2))."""
    return 2.0 * np.pi * R * (R - np.sqrt(R * R - a * a))


def cap_quadrature(R, chord, f, n_theta=4000):
    """Integral of f(theta) over the cap of given chord radius.

    f takes the polar angle and returns the integrand value; the measure is
    2 pi R^2 sin(theta) dtheta (rotationally symmetric integrands only).
    """
    tm = cap_theta_of_chord(R, chord)
    theta = np.linspace(0.0, tm, n_theta)
    vals = f(theta) * 2.0 * np.pi * R * R * np.sin(theta)
    return float(np.trapezoid(vals, theta))


def oracle_tilt_excess_cap(R, sigma):
    """sigma^-2 * integral over the chord-sigma cap of ||P - P0||_F^2."""
    return cap_quadrature(R, sigma, lambda t: 2.0 * np.sin(t) ** 2) / sigma**2


def oracle_tilt_excess_tilted_plane(alpha, sigma=1.0, density=1.0):
    """Tilt excess of a flat unit-density disk measured against a reference
    plane tilted by alpha: closed form 2 pi sin^2(alpha) (sigma-free)."""
    area = np.pi * sigma * sigma * density
    return 2.0 * np.sin(alpha) ** 2 * area / sigma**2


def oracle_flatness_cap(R, sigma, n_dense=120):
    """Continuum Reifenberg flatness of the cap at the pole, scale sigma.

    Dense bilateral Hausdorff distance between the cap piece and candidate
    plane disks through the pole, minimized over a tilt grid.
    """
    tm = cap_theta_of_chord(R, sigma)
    theta = np.linspace(0.0, tm, n_dense)
    phi = np.linspace(0.0, 2.0 * np.pi, n_dense, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    cap_pts = cap_point(R, tt.ravel(), pp.ravel())

    best = np.inf
    for ax in np.linspace(-0.05, 0.05, 11):
        # plane through the origin with normal ~ (-ax, 0, 1); by symmetry a
        # one-parameter tilt family suffices
        n = np.array([-ax, 0.0, 1.0])
        n = n / np.linalg.norm(n)
        u = np.array([1.0, 0.0, 0.0]) - n[0] * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        rr = np.linspace(0.0, sigma, n_dense)
        aa = np.linspace(0.0, 2.0 * np.pi, n_dense, endpoint=False)
        r2, a2 = np.meshgrid(rr, aa, indexing="ij")
        disk_pts = (
            r2.ravel()[:, None] * np.cos(a2.ravel())[:, None] * u[None, :]
            + r2.ravel()[:, None] * np.sin(a2.ravel())[:, None] * v[None, :]
        )
        inside = np.linalg.norm(disk_pts, axis=1) <= sigma
        d = brute_hausdorff(cap_pts, disk_pts[inside])
        if d < best:
            best = d
    return best / sigma


def oracle_beta2_cap(R, s):
    """Continuum beta^2 of the sphere at scale s: pi s^2 / (48 R^2)."""
    # derived by minimizing over parallel planes; verified by quadrature here
    def integrand(theta):
        z = R * (1.0 - np.cos(theta))
        return (z - _cap_mean_height(R, s)) ** 2

    val = cap_quadrature(R, s, integrand)
    return val / s**4


def _cap_mean_height(R, s):
    area = cap_area_chord(R, s)
    total = cap_quadrature(R, s, lambda t: R * (1.0 - np.cos(t)))
    return total / area


def oracle_carleson_cap(R, sigma, floor):
    """Continuum Carleson sum with the scale integral cut at the floor."""
    # beta^2(y, s) is y-independent on the sphere; integral over scales of
    # beta^2 ds/s from floor to sigma, times cap area.
    def beta2(s):
        return oracle_beta2_cap(R, s)

    scales = np.geomspace(max(floor, 1e-6), sigma, 200)
    vals = np.array([beta2(s) for s in scales])
    inner = float(np.trapezoid(vals / scales, scales))
    return cap_area_chord(R, sigma) * inner


def oracle_monotonicity_terms_cap(R, sigma, rho):
    """Quadrature values of every named monotonicity term on the cap.

    Center point x = pole (origin).  Returns a dict of term values.
    """
    H_sq = 4.0 / R**2

    def ann(f):
        return cap_quadrature(R, rho, f) - cap_quadrature(R, sigma, f)

    area_s = cap_area_chord(R, sigma)
    area_r = cap_area_chord(R, rho)

    # |grad_perp r / r + H/4|^2 vanishes identically on spheres
    perp_term = ann(
        lambda t: (_perp_over_r(R, t) - 0.5 / R) ** 2
    )

    def pairing_integrand(t):
        # r <grad_perp r, H> = -r^2 / R^2 on the sphere
        chord2 = (2.0 * R * np.sin(t / 2.0)) ** 2
        return -chord2 / R**2

    pair_rho = cap_quadrature(R, rho, pairing_integrand)
    pair_sigma = cap_quadrature(R, sigma, pairing_integrand)

    return {
        "density_sigma": area_s / sigma**2,
        "density_rho": area_r / rho**2,
        "willmore_term": H_sq / 16.0 * (area_r - area_s),
        "perp_term": perp_term,
        "pairing_rho": pair_rho / (2.0 * rho**2),
        "pairing_sigma": pair_sigma / (2.0 * sigma**2),
    }


def _perp_over_r(R, theta):
    # |grad_perp r| / r at polar angle theta: chord/(2R) divided by chord
    return 0.5 / R


# ---------------------------------------------------------------------------
# analytic stereographic parameterization of the cap


def stereographic_to_cap(R, u):
    """Inverse stereographic map R^2 -> sphere (pole at origin).

    Projection point sits at (0, 0, 2R); u = 0 maps to the origin and the
    map is conformal with factor 4R^2 / (4R^2 + |u|^2).
    """
    u = np.asarray(u, dtype=float)
    uu = np.sum(u * u, axis=-1)
    t = 4.0 * R * R / (uu + 4.0 * R * R)
    x = t[..., None] * u
    z = 2.0 * R * (1.0 - t)
    return np.concatenate([x, z[..., None]], axis=-1)


def stereographic_factor(R, u):
    u = np.asarray(u, dtype=float)
    uu = np.sum(u * u, axis=-1)
    return 4.0 * R * R / (uu + 4.0 * R * R)


def stereographic_radius_for_chord(R, chord):
    """Plane radius whose image has the given chord distance from the pole."""
    # chord^2 = t^2 |u|^2 + 4R^2 (1-t)^2 with t = 4R^2/(|u|^2+4R^2);
    # solving gives |u| = 2 R chord / sqrt(4R^2 - chord^2).
    return 2.0 * R * chord / np.sqrt(4.0 * R * R - chord * chord)


def oracle_frame_energy_cap(R, chord, n_grid=160):
    """Quadrature of |grad e1|^2 + |grad e2|^2 for the stereographic frames.

    Frames e_i = f_i / |f_i| of the inverse stereographic map, energy
    integrated over the plane disk that maps onto the cap, with respect to
    the parameter area element (matching the discrete frame energy).
    """
    rad = stereographic_radius_for_chord(R, chord)
    xs = np.linspace(-rad, rad, n_grid)
    h = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    U = np.stack([X, Y], axis=-1)
    P = stereographic_to_cap(R, U)
    # unit frames along the two coordinate directions
    fx = np.gradient(P, h, axis=0)
    fy = np.gradient(P, h, axis=1)
    e1 = fx / np.linalg.norm(fx, axis=-1, keepdims=True)
    e2 = fy / np.linalg.norm(fy, axis=-1, keepdims=True)
    energy = 0.0
    inside = X * X + Y * Y <= rad * rad
    for e in (e1, e2):
        gx = np.gradient(e, h, axis=0)
        gy = np.gradient(e, h, axis=1)
        dens = np.sum(gx * gx, axis=-1) + np.sum(gy * gy, axis=-1)
        energy += float(np.sum(dens[inside]) * h * h)
    return energy


# ---------------------------------------------------------------------------
# analytic graph surface z = eps (x1^2 - x2^2) / 2


def graph_height(eps, xy):
    xy = np.asarray(xy, dtype=float)
    return 0.5 * eps * (xy[..., 0] ** 2 - xy[..., 1] ** 2)


def graph_mean_curvature_vector(eps, xy):
    """Mean curvature vector (trace of second fundamental form) of the graph."""
    xy = np.asarray(xy, dtype=float)
    gx = eps * xy[..., 0]
    gy = -eps * xy[..., 1]
    g2 = gx * gx + gy * gy
    # scalar mean curvature (sum of principal curvatures) for z = g(x, y):
    # ((1+gy^2) gxx - 2 gx gy gxy + (1+gx^2) gyy) / (1+|grad g|^2)^{3/2}
    num = (1.0 + gy * gy) * eps + (1.0 + gx * gx) * (-eps)
    scal = num / (1.0 + g2) ** 1.5
    denom = np.sqrt(1.0 + g2)
    normal = np.stack([-gx / denom, -gy / denom, np.ones_like(gx) / denom], axis=-1)
    return scal[..., None] * normal


def oracle_graph_area(eps, radius=1.0, n=2000):
    r = np.linspace(0.0, radius, n)
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    x = rr * np.cos(pp)
    y = rr * np.sin(pp)
    gx = eps * x
    gy = -eps * y
    integrand = np.sqrt(1.0 + gx * gx + gy * gy) * rr
    # periodic in phi, so the mean times 2 pi is spectrally accurate
    return float(np.trapezoid(integrand.mean(axis=1) * 2.0 * np.pi, r))


def graph_H_finite_difference(eps, xy, h=1e-4):
    """Mean curvature vector of the graph via -div_S(n) finite differences.

    Independent of the closed form: builds an orthonormal tangent basis at
    each point, differentiates the unit normal field numerically along the
    two tangent directions, and sums the tangential components.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))

    def normal(q):
        gx = eps * q[..., 0]
        gy = -eps * q[..., 1]
        denom = np.sqrt(1.0 + gx * gx + gy * gy)
        return np.stack([-gx / denom, -gy / denom, np.ones_like(gx) / denom], axis=-1)

    out = []
    for q in xy:
        gx = eps * q[0]
        gy = -eps * q[1]
        l1 = np.array([1.0, 0.0, gx])
        l2 = np.array([0.0, 1.0, gy])
        t1 = l1 / np.linalg.norm(l1)
        t2 = l2 - (l2 @ t1) * t1
        t2 /= np.linalg.norm(t2)
        div = 0.0
        for t in (t1, t2):
            step = t[:2] * h  # xy-projection parameterizes the surface curve
            npl = normal(q + step)
            nmi = normal(q - step)
            dn = (npl - nmi) / (2.0 * h)
            div += float(t @ dn)
        out.append(-div * normal(q))
    return np.array(out)


# ---------------------------------------------------------------------------
# naive references for the stagewise projection pipeline


def all_pairs_distortion(source: np.ndarray, target: np.ndarray):
    """Per-point sup and inf difference quotients over every other point."""
    n = len(source)
    f_up = np.zeros(n)
    f_lo = np.zeros(n)
    for i in range(n):
        up, lo = 0.0, np.inf
        for j in range(n):
            if j == i:
                continue
            ds = float(np.linalg.norm(source[j] - source[i]))
            if ds <= 0:
                continue
            ratio = float(np.linalg.norm(target[j] - target[i])) / ds
            up = max(up, ratio)
            lo = min(lo, ratio)
        f_up[i], f_lo[i] = up, lo
    return f_up, f_lo


def fine_membership_scan(sample, delta, nu, floor, tilt_fn, plane_fn):
    """Per-point membership scan: gauge below resolution, or tilt <= nu.

    `tilt_fn(sample, x, scale, plane, floor)` and `plane_fn(sample, x, scale)`
    are passed in so this stays a thin independent loop over the definition.
    """
    members = []
    for i in range(len(sample)):
        d = float(delta.values[i])
        if 2.0 * d < floor:
            members.append(i)
            continue
        try:
            plane = plane_fn(sample, sample.points[i], 2.0 * d)
        except Exception:
            continue
        if tilt_fn(sample, sample.points[i], 2.0 * d, plane, floor=floor) <= nu:
            members.append(i)
    return np.asarray(members, dtype=int)


# ---------------------------------------------------------------------------
# closed-form constants frozen into tests


def frozen_constants():
    return {
        "sqrt2_sin01": np.sqrt(2.0) * np.sin(0.1),
        "orth_complement_r4": 2.0,
        "tilt_closed_form": oracle_tilt_excess_tilted_plane(0.1),
        "cap_area_R10_a1": cap_area_planar(10.0, 1.0),
        "willmore_cap_R10_s1": 0.04 * np.pi,
        "willmore_sphere": 16.0 * np.pi,
        "ih_two_value": 2.5 / 2.25,
        "a2_two_value": 2.5 * 0.625,
        "bmo_checkerboard": 0.5 * np.log(2.0),
        "isoper_circle": 1.0 / (4.0 * np.pi),
        "isoper_square": 1.0 / 16.0,
        "flatness_cap_R10_s05": oracle_flatness_cap(10.0, 0.5),
        "tilt_cap_R10_s05": oracle_tilt_excess_cap(10.0, 0.5),
        "beta2_cap_R10_s05": oracle_beta2_cap(10.0, 0.5),
        "gamma_sphere_R10_s05": float(
            np.sqrt(oracle_tilt_excess_cap(10.0, 0.5))
        ),
    }


if __name__ == "__main__":
    for key, val in frozen_constants().items():
        print(f"{key} = {val!r}")


# ---------------------------------------------------------------------------
# disk parameterization oracles


def graph_chord_length(eps, p, q, n=4000):
    """Length of the lifted straight chord on the saddle graph.

    1-D quadrature of |(q - p, dg/dt)| along the planar segment p -> q with
    g = eps (x^2 - y^2) / 2.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    t = np.linspace(0.0, 1.0, n)
    xy = p[None, :] + t[:, None] * (q - p)[None, :]
    gx = eps * xy[:, 0]
    gy = -eps * xy[:, 1]
    dxy = q - p
    dz = gx * dxy[0] + gy * dxy[1]
    speed = np.sqrt(dxy[0] ** 2 + dxy[1] ** 2 + dz * dz)
    return float(np.trapezoid(speed, t))


def cap_conformal_w(R, rho, z2):
    """log |f'| for z -> inverse-stereographic(rho z) on the radius-R sphere."""
    z2 = np.asarray(z2, dtype=float)
    rr = np.sum(z2 * z2, axis=-1)
    return np.log(rho * 4.0 * R * R / (4.0 * R * R + rho * rho * rr))


def circle_arc_chord_ratio_max(r_circle, sigma, n=20000):
    """max over angle gaps of minor-arc / sqrt(sigma * chord) on a circle."""
    dtheta = np.linspace(1e-6, np.pi, n)
    arc = r_circle * dtheta
    chord = 2.0 * r_circle * np.sin(0.5 * dtheta)
    return float(np.max(arc / np.sqrt(sigma * chord)))


def affine_fit_direct(coords2, values, weights=None):
    """Weighted scaled-isometry fit values ~ a T coords + b, independent route.

    Uses the polar decomposition of the weighted cross-covariance through
    eigh of M^T M rather than an SVD of M.  Returns (a, T, b).
    """
    u = np.asarray(coords2, dtype=float)
    f = np.asarray(values, dtype=float)
    w = np.ones(len(u)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    ub = (w[:, None] * u).sum(axis=0)
    fb = (w[:, None] * f).sum(axis=0)
    du = u - ub
    df = f - fb
    m = (df * w[:, None]).T @ du  # (n, 2)
    mm = m.T @ m  # (2, 2)
    evals, evecs = np.linalg.eigh(mm)
    if evals.min() <= 1e-30 * max(evals.max(), 1.0):
        raise ValueError("rank-deficient oracle fit")
    inv_sqrt = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    t = m @ inv_sqrt  # polar factor, columns orthonormal
    var = float((w * np.sum(du * du, axis=1)).sum())
    # the sum of singular values of M over the coordinate variance
    a = float(np.sum(np.sqrt(np.maximum(evals, 0.0)))) / var
    b = fb - a * (t @ ub)
    return a, t, b


def quasisymmetry_bruteforce(points2, values, center_index, s):
    """Plain-loop L_f / l_f at one center and scale (independent scan)."""
    z = points2[center_index]
    fz = values[center_index]
    big = 0.0
    small = np.inf
    for i in range(len(points2)):
        if i == center_index:
            continue
        d = float(np.hypot(points2[i][0] - z[0], points2[i][1] - z[1]))
        df = float(np.linalg.norm(values[i] - fz))
        if d <= s and df > big:
            big = df
        if d >= s and df < small:
            small = df
    return big / small


def dirichlet_energy_direct(disk_pts, surf_pts, tris):
    """Per-triangle energy, area integral of |det grad f|, max dilatation.

    Independent of the library's vectorized Jacobian path: solves the 2x2
    affine system per triangle with numpy.linalg.solve.
    """
    energy = 0.0
    area_int = 0.0
    max_dil = 1.0
    for tri in tris:
        u0, u1, u2 = disk_pts[tri]
        p0, p1, p2 = surf_pts[tri]
        d = np.stack([u1 - u0, u2 - u0], axis=1)  # 2x2, columns edges
        s = np.stack([p1 - p0, p2 - p0], axis=1)  # n x 2
        area = 0.5 * np.linalg.det(d)
        jac = np.linalg.solve(d.T, s.T).T  # n x 2
        gram = jac.T @ jac
        ev = np.linalg.eigvalsh(gram)
        ev = np.maximum(ev, 0.0)
        energy += (ev[0] + ev[1]) * area
        area_int += np.sqrt(ev[0] * ev[1]) * area
        if ev[0] > 0:
            max_dil = max(max_dil, float(np.sqrt(ev[1] / ev[0])))
    return float(energy), float(area_int), float(max_dil)


def oracle_cap_total_curvature(R, chord):
    """Quadrature-free |A|^2 integral of a cap: (2/R^2) * pi chord^2."""
    return 2.0 * np.pi * chord * chord / (R * R)
