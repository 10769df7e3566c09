"""Coordinate chart atlas for the reference and gap domains.

Boundary charts are shear-Monge maps: the unit half-ball is sheared along a
rotated graph direction so that the flat face lands exactly on the boundary
surface while the Jacobian determinant stays exactly constant (the map is
triangular in the rotated frame).  Interior charts are affine ball maps.
Neck charts carry the vertical stretch of the gap family; hemisphere charts
ride with the hemisphere translation; everything else is epsilon-independent.

Classes follow the three-way split: neck charts live strictly inside the
middle neck band and cover the critical subcylinder; hemisphere charts touch
the hemisphere region; non-hemisphere charts touch neither, and their images
stay disjoint from every hemisphere-chart image.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, DomainParameterError, GeometryError
from .geometry import DomainSpec, neck_scales

NECK, NON_HEMISPHERE, HEMISPHERE = "neck", "non_hemisphere", "hemisphere"
BOUNDARY, INTERIOR = "boundary", "interior"


def quintic_bump(t):
    """C^2 bump on [0, 1]: 1 at 0, 0 at 1, with two flat derivatives."""
    t = np.clip(np.abs(t), 0.0, 1.0)
    s = 1.0 - t
    return 10.0 * s**3 - 15.0 * s**4 + 6.0 * s**5


def _frame(direction):
    n = np.asarray(direction, dtype=float)
    n = n / np.linalg.norm(n)
    a = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(a, n)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n], axis=1)  # columns: tangent1, tangent2, normal


class Chart:
    """One chart of the atlas.

    Boundary charts map the half-ball B+ = B(0,1) & {y3 > 0}; interior
    charts map the full unit ball.  ``det_jacobian`` is exact and constant.
    """

    def __init__(self, name, klass, kind, det_jacobian):
        self.name = name
        self.klass = klass
        self.kind = kind
        self.det_jacobian = float(det_jacobian)
        # post-composition x -> scale_z * x + shift applied by the eps-family
        self._post_shift = np.zeros(3)
        self._post_zscale = 1.0
        self._post_zoffset = 0.0

    # epsilon-family transforms -------------------------------------------
    def translated(self, shift):
        c = self._copy()
        c._post_shift = self._post_shift + np.asarray(shift, dtype=float)
        return c

    def z_stretched(self, scale, offset):
        """Compose with x3 -> scale*x3 + offset (the neck stretch H^eps)."""
        c = self._copy()
        c._post_zscale = scale * self._post_zscale
        c._post_zoffset = scale * self._post_zoffset + offset
        c._post_shift = self._post_shift.copy()
        c.det_jacobian = self.det_jacobian * scale
        return c

    def _post(self, x):
        out = x.copy()
        out[:, 2] = self._post_zscale * out[:, 2] + self._post_zoffset
        return out + self._post_shift

    def _post_inv(self, x):
        out = x - self._post_shift
        out[:, 2] = (out[:, 2] - self._post_zoffset) / self._post_zscale
        return out

    def map(self, y):
        return self._post(self._map_base(np.atleast_2d(np.asarray(y, float))))

    def inverse(self, x):
        return self._inverse_base(self._post_inv(np.atleast_2d(np.asarray(x, float))))

    def contains(self, x, tol=1e-9):
        y = self.inverse(x)
        r = np.einsum("ij,ij->i", y, y)
        inside = r <= 1.0 + tol
        if self.kind == BOUNDARY:
            inside &= y[:, 2] >= -tol
        return inside

    def cutoff(self, x):
        """Quintic cutoff xi(theta^-1(x)); zero outside the chart image."""
        y = self.inverse(x)
        r = np.sqrt(np.einsum("ij,ij->i", y, y))
        val = quintic_bump(r)
        if self.kind == BOUNDARY:
            val = np.where(y[:, 2] >= -1e-12, val, 0.0)
        return np.where(r <= 1.0, val, 0.0)


class AffineChart(Chart):
    """Interior ball chart x = center + rho * y (det = rho^3)."""

    def __init__(self, name, klass, center, rho):
        super().__init__(name, klass, INTERIOR, rho**3)
        self.center = np.asarray(center, dtype=float)
        self.rho = float(rho)

    def _copy(self):
        c = AffineChart(self.name, self.klass, self.center, self.rho)
        c._post_shift = self._post_shift.copy()
        c._post_zscale = self._post_zscale
        c._post_zoffset = self._post_zoffset
        return c

    def _map_base(self, y):
        return self.center + self.rho * y

    def _inverse_base(self, x):
        return (x - self.center) / self.rho


class ShearMongeChart(Chart):
    """Boundary chart: half-ball sheared onto the boundary graph.

    In the frame (t1, t2, n) centered at a boundary point p0 (n = inward
    normal), the boundary is locally a graph w = f(u1, u2).  The chart is

        theta(y) = p0 + R @ (a y1, b y2, f(a y1, b y2) + c y3),

    a triangular map with exact constant determinant a*b*c.  f is evaluated
    by a deterministic bisection of the signed distance along the graph
    direction.
    """

    def __init__(self, name, klass, spec, p0, a, b, c, depth_sign=1.0):
        super().__init__(name, klass, BOUNDARY, a * b * c)
        self.spec = spec
        self.p0 = np.asarray(p0, dtype=float)
        inward = -spec.sdf_grad(self.p0)
        self.R = _frame(inward * depth_sign)
        self.a, self.b, self.c = float(a), float(b), float(c)
        self._fmax = 0.6 * max(a, b)

    def _copy(self):
        c = ShearMongeChart.__new__(ShearMongeChart)
        Chart.__init__(c, self.name, self.klass, BOUNDARY, self.det_jacobian)
        c.spec, c.p0, c.R = self.spec, self.p0, self.R
        c.a, c.b, c.c = self.a, self.b, self.c
        c._fmax = self._fmax
        c._post_shift = self._post_shift.copy()
        c._post_zscale = self._post_zscale
        c._post_zoffset = self._post_zoffset
        return c

    def _graph_height(self, u):
        """f(u1, u2): signed offset along the inward axis to the zero set."""
        lo = np.full(u.shape[0], -self._fmax)
        hi = np.full(u.shape[0], +self._fmax)
        n = self.R[:, 2]
        base = self.p0 + u[:, 0:1] * self.R[:, 0] + u[:, 1:2] * self.R[:, 1]
        flo = self.spec.sdf(base + lo[:, None] * n)
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            fm = self.spec.sdf(base + mid[:, None] * n)
            same = (fm > 0) == (flo > 0)
            lo = np.where(same, mid, lo)
            flo = np.where(same, fm, flo)
            hi = np.where(same, hi, mid)
        return 0.5 * (lo + hi)

    def _map_base(self, y):
        u = np.stack([self.a * y[:, 0], self.b * y[:, 1]], axis=1)
        f = self._graph_height(u)
        w = f + self.c * y[:, 2]
        return (self.p0 + u[:, 0:1] * self.R[:, 0] + u[:, 1:2] * self.R[:, 1]
                + w[:, None] * self.R[:, 2])

    def _inverse_base(self, x):
        rel = np.einsum("ki,nk->ni", self.R, x - self.p0)
        u = rel[:, :2]
        f = self._graph_height(u)
        y3 = (rel[:, 2] - f) / self.c
        return np.stack([u[:, 0] / self.a, u[:, 1] / self.b, y3], axis=1)


@dataclass
class ChartAtlas:
    charts: list
    h: float
    epsilon: float = 1.0  # reference atlas corresponds to the eps=1 domain
    delta1: float = 0.0
    delta2: float = 0.0

    def by_class(self, klass, kind=None):
        out = [c for c in self.charts if c.klass == klass]
        if kind is not None:
            out = [c for c in out if c.kind == kind]
        return out

    def counts(self):
        out = {}
        for c in self.charts:
            out[(c.klass, c.kind)] = out.get((c.klass, c.kind), 0) + 1
        return out

    def covering_charts(self, x):
        """Boolean (npoints, ncharts) membership table."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([c.contains(x) for c in self.charts], axis=1)


def reference_charts(spec: DomainSpec, n_azimuth=8) -> ChartAtlas:
    """Build the reference-domain atlas (requires the eps = 1 spec).

    Neck charts cover the critical subcylinder and stay strictly inside the
    middle neck band; hemisphere charts cover the spherical cap and the
    lower neck; non-hemisphere charts cover everything else.  Coverage of
    the boundary and the closure is verified by sampling before returning.
    """
    if not spec.is_reference:
        raise DomainParameterError("reference_charts needs the reference "
                                   "(eps = 1) domain spec")
    h = spec.h
    d1, d2 = neck_scales(h)
    z_lo, z_hi = 2.0 + h / 3.0, 2.0 + 2.0 * h / 3.0   # middle neck band
    charts = []

    def ring_points(z, n=n_azimuth, radius=1.0, center=(0.0, 0.0)):
        ang = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([center[0] + radius * np.cos(ang),
                         center[1] + radius * np.sin(ang),
                         np.full(n, z)], axis=1)

    # --- neck boundary charts: wall patches strictly inside the middle band
    zc = 2.0 + h / 3.0 + 0.5 * (d1 + d2)
    band = 0.5 * (z_hi - z_lo)
    a = b = min(0.45 * band * 3.0, 0.9 * np.pi / n_azimuth * 2.0)
    a = max(a, 1.2 * (d2 - d1))
    half_band = min(zc - z_lo, z_hi - zc)
    b = min(a, 0.95 * half_band)
    a = min(a, 1.05)
    c_depth = 1.2
    for k, p in enumerate(ring_points(zc)):
        charts.append(ShearMongeChart(f"neck_b{k}", NECK, spec, p, a, b, c_depth))

    # --- neck interior charts: balls covering the solid critical subcylinder
    rho = 0.95 * half_band
    for k, p in enumerate(ring_points(zc, radius=0.45)):
        charts.append(AffineChart(f"neck_i{k}", NECK, (p[0], p[1], zc), rho))
    charts.append(AffineChart("neck_i_axis", NECK, (0.0, 0.0, zc), rho))

    # --- hemisphere charts: spherical cap + lower neck (stay below z_lo + d1)
    cap_top = min(z_lo + 0.9 * d1, z_lo + d1)
    charts.append(ShearMongeChart("hemi_pole", HEMISPHERE, spec,
                                  (0.0, 0.0, 1.0), 0.55, 0.55, 1.0))
    for k, p in enumerate(ring_points(1.35, radius=np.sqrt(1 - (2 - 1.35)**2))):
        q = spec.project_to_surface(p)
        charts.append(ShearMongeChart(f"hemi_m{k}", HEMISPHERE, spec, q,
                                      0.55, 0.55, 0.9))
    for k, p in enumerate(ring_points(0.5 * (2.0 + cap_top))):
        charts.append(ShearMongeChart(f"hemi_wall{k}", HEMISPHERE, spec, p,
                                      0.6, 0.52 * (cap_top - 2.0), 1.2))
    charts.append(AffineChart("hemi_i0", HEMISPHERE, (0.0, 0.0, 1.7), 0.68))
    charts.append(AffineChart("hemi_i1", HEMISPHERE, (0.0, 0.0, 2.3), 0.62))

    # --- non-hemisphere: upper neck, connector, base (stay above z_lo + d2)
    nh_bot = z_lo + 1.1 * d2
    zc_up = 0.5 * (nh_bot + 2.0 + h)
    bu = 0.95 * (zc_up - nh_bot)
    for k, p in enumerate(ring_points(zc_up)):
        charts.append(ShearMongeChart(f"upneck_b{k}", NON_HEMISPHERE, spec, p,
                                      0.6, bu, 1.2))
    charts.append(AffineChart("upneck_i", NON_HEMISPHERE, (0, 0, zc_up),
                              min(0.9, bu)))

    conn = spec.connector
    bend_c = np.array([conn.bend_radius, 0.0, 2.0 + h])
    for k, ang in enumerate(np.linspace(0.15, np.pi - 0.15, 6)):
        d = np.array([-np.cos(ang), 0.0, np.sin(ang)])
        for rot in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2):
            axis = bend_c + conn.bend_radius * d
            t = np.array([np.sin(ang), 0.0, np.cos(ang)])  # along the bend
            side = np.cross(d, np.array([0.0, 1.0, 0.0]))
            rim = d * np.cos(rot) + np.array([0.0, 1.0, 0.0]) * np.sin(rot)
            p = axis + conn.tube_radius * rim
            charts.append(ShearMongeChart(f"bend{k}_{int(np.degrees(rot))}",
                                          NON_HEMISPHERE, spec, p,
                                          0.5 * conn.tube_radius,
                                          0.5 * conn.tube_radius,
                                          0.9 * conn.tube_radius))
        charts.append(AffineChart(f"bend_i{k}", NON_HEMISPHERE, axis,
                                  0.9 * conn.tube_radius))

    leg_x = 2.0 * conn.bend_radius
    for k, z in enumerate(np.linspace(2.0 + h - 0.4, 0.3, 6)):
        for rot in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2):
            p = np.array([leg_x + conn.tube_radius * np.cos(rot),
                          conn.tube_radius * np.sin(rot), z])
            charts.append(ShearMongeChart(f"leg{k}_{int(np.degrees(rot))}",
                                          NON_HEMISPHERE, spec, p,
                                          0.55 * conn.tube_radius,
                                          0.35, 0.9 * conn.tube_radius))
        charts.append(AffineChart(f"leg_i{k}", NON_HEMISPHERE,
                                  (leg_x, 0.0, z), 0.9 * conn.tube_radius))

    # base top (floor), bottom, and outer wall
    cb = np.array([conn.base_center_x, 0.0])
    flat = conn.base_radius - conn.fillet_radius
    for ring_r, nring in ((0.0, 1), (0.45 * flat, 6), (0.85 * flat, 10)):
        for k in range(nring):
            ang = 2 * np.pi * (k + 0.3) / nring
            p = np.array([cb[0] + ring_r * np.cos(ang),
                          cb[1] + ring_r * np.sin(ang), 0.0])
            if np.hypot(p[0] - leg_x, p[1]) < 1.35 * conn.tube_radius:
                continue
            charts.append(ShearMongeChart(f"floor_{int(ring_r*100)}_{k}",
                                          NON_HEMISPHERE, spec, p,
                                          0.5 * flat / 2, 0.5 * flat / 2,
                                          0.8 * conn.base_depth))
            p2 = p.copy()
            p2[2] = -conn.base_depth
            charts.append(ShearMongeChart(f"bbot_{int(ring_r*100)}_{k}",
                                          NON_HEMISPHERE, spec, p2,
                                          0.5 * flat / 2, 0.5 * flat / 2,
                                          0.8 * conn.base_depth))
    for k in range(12):
        ang = 2 * np.pi * (k + 0.5) / 12
        p = np.array([cb[0] + conn.base_radius * np.cos(ang),
                      cb[1] + conn.base_radius * np.sin(ang),
                      -0.5 * conn.base_depth])
        charts.append(ShearMongeChart(f"bwall{k}", NON_HEMISPHERE, spec, p,
                                      0.45, 0.42 * conn.base_depth,
                                      0.8 * conn.fillet_radius + 0.3))
        pr = np.array([cb[0] + (conn.base_radius - 0.4 * conn.fillet_radius)
                       * np.cos(ang),
                       cb[1] + (conn.base_radius - 0.4 * conn.fillet_radius)
                       * np.sin(ang), 0.0])
        prs = spec.project_to_surface(pr + np.array([0, 0, 0.0]))
        charts.append(ShearMongeChart(f"brim{k}", NON_HEMISPHERE, spec,
                                      spec.project_to_surface(
                                          np.array([cb[0] + conn.base_radius
                                                    * np.cos(ang),
                                                    cb[1] + conn.base_radius
                                                    * np.sin(ang), 0.0])),
                                      0.4, 0.3, 0.35))
        charts.append(ShearMongeChart(f"brimlo{k}", NON_HEMISPHERE, spec,
                                      spec.project_to_surface(
                                          np.array([cb[0] + conn.base_radius
                                                    * np.cos(ang),
                                                    cb[1] + conn.base_radius
                                                    * np.sin(ang),
                                                    -conn.base_depth])),
                                      0.4, 0.3, 0.35))
    # base interior
    for ring_r, nring in ((0.0, 1), (0.5 * flat, 6), (0.95 * flat, 10)):
        for k in range(nring):
            ang = 2 * np.pi * (k + 0.15) / nring
            center = np.array([cb[0] + ring_r * np.cos(ang),
                               cb[1] + ring_r * np.sin(ang),
                               -0.5 * conn.base_depth])
            rho = min(0.48 * conn.base_depth,
                      -float(spec.sdf(center)) * 0.95)
            if rho > 0.05:
                charts.append(AffineChart(f"base_i{int(ring_r*100)}_{k}",
                                          NON_HEMISPHERE, center, rho))

    atlas = ChartAtlas(charts=charts, h=h, epsilon=1.0, delta1=d1, delta2=d2)
    _validate_reference_atlas(atlas, spec)
    return atlas


def _class_band_check(atlas, spec):
    """Class constraints: neck image bounds, hemisphere/non-hemisphere
    disjointness, via dense sampling of chart images."""
    h = atlas.h
    z_lo, z_hi = 2.0 + h / 3.0, 2.0 + 2.0 * h / 3.0
    rng = np.random.default_rng(20260809)
    y = rng.uniform(-1, 1, size=(600, 3))
    y = y[np.einsum("ij,ij->i", y, y) < 1.0]
    problems = []
    samples = {}
    for c in atlas.charts:
        yy = y.copy()
        if c.kind == BOUNDARY:
            yy[:, 2] = np.abs(yy[:, 2])
        img = c.map(yy)
        samples[c.name] = img
        if c.klass == NECK:
            inside_band = (img[:, 2] > z_lo - 1e-9) & (img[:, 2] < z_hi + 1e-9) \
                & (np.hypot(img[:, 0], img[:, 1]) < 1.0 + 1e-6)
            if not inside_band.all():
                problems.append(f"neck chart {c.name} leaves the middle band")
    hemi = [c for c in atlas.charts if c.klass == HEMISPHERE]
    nonh = [c for c in atlas.charts if c.klass == NON_HEMISPHERE]
    for ch in hemi:
        pts = samples[ch.name]
        for cn in nonh:
            if cn.contains(pts).any():
                problems.append(f"hemisphere chart {ch.name} overlaps "
                                f"non-hemisphere chart {cn.name}")
    # hemisphere charts must intersect the hemisphere region and avoid C_r;
    # C_r avoidance for hemisphere/non-hemisphere classes
    d1, d2 = atlas.delta1, atlas.delta2
    for c in hemi + nonh:
        pts = samples[c.name]
        in_cr = (pts[:, 2] > z_lo + d1) & (pts[:, 2] < z_lo + d2) \
            & (np.hypot(pts[:, 0], pts[:, 1]) < 1.0)
        if in_cr.any():
            problems.append(f"{c.klass} chart {c.name} intersects C_r")
    return problems


def boundary_sample_points(spec, n=1500, seed=2026):
    """Deterministic quasi-random points on the boundary (projected)."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.bounding_box(pad=0.0)
    pts = []
    while sum(len(p) for p in pts) < n:
        cand = rng.uniform(lo, hi, size=(4 * n, 3))
        phi = spec.sdf(cand)
        near = np.abs(phi) < 0.25
        proj = spec.project_to_surface(cand[near])
        good = np.abs(spec.sdf(proj)) < 1e-9
        pts.append(proj[good])
    return np.vstack(pts)[:n]


def interior_sample_points(spec, n=1500, seed=2027):
    rng = np.random.default_rng(seed)
    lo, hi = spec.bounding_box(pad=0.0)
    pts = []
    while sum(len(p) for p in pts) < n:
        cand = rng.uniform(lo, hi, size=(4 * n, 3))
        keep = spec.sdf(cand) < -1e-6
        pts.append(cand[keep])
    return np.vstack(pts)[:n]


def coverage_report(atlas, spec, n=1500, crease_margin=0.05):
    """Fractions of sampled boundary/interior/C_r points covered; returns
    (report dict, uncovered boundary points)."""
    bpts = boundary_sample_points(spec, n)
    keep = spec.crease_proximity(bpts) > crease_margin
    bpts = bpts[keep]
    cov_b = atlas.covering_charts(bpts).any(axis=1)
    ipts = interior_sample_points(spec, n)
    cov_i = atlas.covering_charts(ipts).any(axis=1)
    h = atlas.h
    d1, d2 = atlas.delta1, atlas.delta2
    rng = np.random.default_rng(2028)
    zc = rng.uniform(2.0 + h / 3.0 + d1, 2.0 + h / 3.0 + d2, size=400)
    rc = np.sqrt(rng.uniform(0, 1, size=400))
    ac = rng.uniform(0, 2 * np.pi, size=400)
    cr = np.stack([rc * np.cos(ac), rc * np.sin(ac), zc], axis=1)
    neck_charts = atlas.by_class(NECK)
    cov_cr = np.zeros(len(cr), dtype=bool)
    for c in neck_charts:
        cov_cr |= c.contains(cr)
    report = {
        "boundary_fraction": float(cov_b.mean()),
        "interior_fraction": float(cov_i.mean()),
        "critical_cylinder_fraction": float(cov_cr.mean()),
    }
    return report, bpts[~cov_b]


def _validate_reference_atlas(atlas, spec):
    problems = _class_band_check(atlas, spec)
    if problems:
        raise GeometryError("chart class constraints violated: "
                            + "; ".join(problems[:5]))
    report, gaps = coverage_report(atlas, spec)
    if report["critical_cylinder_fraction"] < 1.0:
        raise CoverageError("neck charts fail to cover the critical "
                            f"subcylinder ({report})", gaps=[])
    if report["boundary_fraction"] < 1.0:
        raise CoverageError(f"boundary not fully covered: {report}",
                            gaps=gaps.tolist())
    if report["interior_fraction"] < 1.0:
        raise CoverageError(f"interior not fully covered: {report}", gaps=[])


def epsilon_charts(atlas: ChartAtlas, epsilon) -> ChartAtlas:
    """Transform the reference atlas to the eps-domain atlas.

    Neck charts compose with the vertical stretch x3 -> s (x3 - 2 - h/3) +
    h/3 + 1 - eps with s = (h + 3 + 3 eps)/h (so their determinants scale by
    exactly s); hemisphere charts translate down by (1 - eps) e3; all other
    charts are unchanged.
    """
    h = atlas.h
    if not (0.0 < epsilon < h / 3.0):
        raise DomainParameterError(f"epsilon={epsilon} outside (0, h/3)")
    s = (h + 3.0 + 3.0 * epsilon) / h
    # x3 -> s*(x3 - 2 - h/3) + h/3 + 1 - eps  ==  s*x3 + offset
    offset = -s * (2.0 + h / 3.0) + h / 3.0 + 1.0 - epsilon
    out = []
    for c in atlas.charts:
        if c.klass == NECK:
            out.append(c.z_stretched(s, offset))
        elif c.klass == HEMISPHERE:
            out.append(c.translated((0.0, 0.0, -(1.0 - epsilon))))
        else:
            out.append(c._copy())
    return ChartAtlas(charts=out, h=h, epsilon=epsilon,
                      delta1=atlas.delta1, delta2=atlas.delta2)


def stretch_map(h, epsilon):
    """H^eps and its inverse g^eps as callables on x3."""
    s = (h + 3.0 + 3.0 * epsilon) / h

    def H(x3):
        return s * (np.asarray(x3) - 2.0 - h / 3.0) + h / 3.0 + 1.0 - epsilon

    def g(x3):
        return (np.asarray(x3) - 1.0 - h / 3.0 + epsilon) / s + 2.0 + h / 3.0

    return H, g
