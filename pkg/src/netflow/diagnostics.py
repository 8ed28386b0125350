"""Monotone quantities and densities on networks and trajectories.

Everything here is a pure function of immutable snapshots.  Integrals over
a network use the trapezoid rule on markers; fields that only exist on part
of the network (the Liouville primitive inside a ball, say) are NaN
elsewhere and must be multiplied by a weight that vanishes there.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
import shapely
from scipy.special import erf

from .network import Network, NetworkError, curvature_profile, marker_tangents, rot90

KERNEL_FLOOR = 1e-16
TRUNC_FACTOR = 2.0 * np.sqrt(np.log(1.0 / KERNEL_FLOOR))


class UnderResolvedWarning(UserWarning):
    """Kernel scale comparable to the marker spacing near its center."""


class NotTreeLike(NetworkError):
    pass


# ---------------------------------------------------------------------------
# kernel and density


@dataclass(frozen=True)
class DensityKernel:
    """Backwards heat kernel with center ``x0`` and scale ``r`` (t0 - t = r**2)."""

    x0: tuple
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("kernel scale r must be positive")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    @property
    def truncation_radius(self) -> float:
        """Distance beyond which the kernel drops below 1e-16 of its peak."""
        return TRUNC_FACTOR * self.r

    def __call__(self, pts) -> np.ndarray:
        d = np.asarray(pts, dtype=float) - np.asarray(self.x0)
        q = np.einsum("...i,...i->...", d, d) / (4.0 * self.r**2)
        return np.exp(-q) / np.sqrt(4.0 * np.pi * self.r**2)


def integrate(net: Network, values) -> float:
    """Trapezoid rule of per-marker values (a dict or list keyed like the segments)."""
    total = 0.0
    for i, s in enumerate(net.segments):
        v = values[s.id] if isinstance(values, dict) else values[i]
        sp = s.spacings()
        total += float(np.sum(sp * 0.5 * (v[:-1] + v[1:])))
    return total


def curvature_energy(net: Network) -> float:
    """Integral of k^2 over the network: the rate at which length is lost."""
    return integrate(net, [curvature_profile(s).k ** 2 for s in net.segments])


def length_rate_defect(snapshots) -> np.ndarray:
    """Relative defect of dL/dt = -int k^2 between consecutive snapshots.

    The length difference quotient is compared with the time average of the
    curvature energy at both ends, which is second order in the time gap.
    """
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots")
    L = np.array([s.net.total_length() for s in snaps])
    E = np.array([curvature_energy(s.net) for s in snaps])
    t = np.array([s.t for s in snaps])
    rate = np.diff(L) / np.diff(t)
    avg = 0.5 * (E[1:] + E[:-1])
    return np.abs(rate + avg) / avg


def _kernel_values(net: Network, kernel: DensityKernel) -> list:
    return [kernel(s.points) for s in net.segments]


def gaussian_density(net: Network, x0, r: float) -> float:
    """Gaussian density of the network at center ``x0`` and scale ``r``.

    Trapezoid quadrature over the markers.  The relative quadrature error is
    O(h^2 / r^2); a :class:`UnderResolvedWarning` is issued when ``r`` is less
    than twice the largest marker spacing within the truncation radius.
    """
    if not net.segments:
        raise NetworkError("density of an empty network")
    kernel = DensityKernel(tuple(x0), r)
    if under_resolved(net, kernel):
        warnings.warn(f"scale r={r:g} under-resolved by the marker spacing", UnderResolvedWarning, stacklevel=2)
    return integrate(net, _kernel_values(net, kernel))


def under_resolved(net: Network, kernel: DensityKernel) -> bool:
    c = np.asarray(kernel.x0)
    R = kernel.truncation_radius
    hmax = 0.0
    for s in net.segments:
        mid = 0.5 * (s.points[1:] + s.points[:-1])
        near = np.hypot(*(mid - c).T) < R
        if near.any():
            hmax = max(hmax, float(s.spacings()[near].max()))
    return kernel.r < 2.0 * hmax


def polyline_density(net: Network, x0, r: float) -> float:
    """Gaussian density of the polyline itself, integrated exactly chord by chord.

    Along a chord a + s u (0 <= s <= L) the kernel integral is
    exp(-q^2 / 4r^2) (erf((p + L) / 2r) - erf(p / 2r)) / 2 with p, q the
    tangential and normal offsets of a from x0, so no scale is too small.
    """
    if not net.segments:
        raise NetworkError("density of an empty network")
    c = np.asarray(x0, dtype=float)
    total = 0.0
    for s in net.segments:
        a = s.points[:-1] - c
        d = np.diff(s.points, axis=0)
        L = np.hypot(*d.T)
        ok = L > 0
        a, d, L = a[ok], d[ok], L[ok]
        u = d / L[:, None]
        p = np.einsum("ij,ij->i", a, u)
        q2 = np.maximum(np.einsum("ij,ij->i", a, a) - p**2, 0.0)
        total += float(np.sum(np.exp(-q2 / (4 * r**2)) * 0.5 * (erf((p + L) / (2 * r)) - erf(p / (2 * r)))))
    return total


def density_ratio_max(net: Network, centers, radii, exact: bool = True) -> float:
    """Largest density over all (center, scale) pairs.

    ``exact`` integrates the polyline chord by chord; otherwise the marker
    trapezoid rule is used (and scales below the spacing are unreliable).
    """
    best = -np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderResolvedWarning)
        for x in centers:
            for r in radii:
                val = polyline_density(net, x, r) if exact else gaussian_density(net, x, r)
                best = max(best, val)
    return float(best)


# ---------------------------------------------------------------------------
# marker geometry


def _frames(net: Network):
    """Per segment: points, curvature vectors, unit normals."""
    out = []
    for s in net.segments:
        kvec = curvature_profile(s).kvec
        nu = rot90(marker_tangents(s))
        out.append((s.points, kvec, nu))
    return out


def _normal_part(v, nu):
    return np.einsum("ij,ij->i", v, nu)[:, None] * nu


# ---------------------------------------------------------------------------
# Huisken trace


@dataclass(frozen=True)
class HuiskenTrace:
    t: np.ndarray
    theta: np.ndarray
    defect: np.ndarray

    @property
    def slack(self) -> float:
        """Largest positive increment of the density between consecutive snapshots."""
        if len(self.theta) < 2:
            return 0.0
        return float(max(0.0, np.max(np.diff(self.theta))))

    def increments(self) -> np.ndarray:
        return np.diff(self.theta)


def shrinker_defect(net: Network, x0, t0: float, t: float) -> float:
    """Integral of |k + (x - x0)^perp / (2 (t0 - t))|^2 against the kernel."""
    tau = t0 - t
    kernel = DensityKernel(tuple(x0), np.sqrt(tau))
    vals = []
    for pts, kvec, nu in _frames(net):
        v = kvec + _normal_part(pts - np.asarray(x0, float), nu) / (2.0 * tau)
        vals.append(np.einsum("ij,ij->i", v, v) * kernel(pts))
    return integrate(net, vals)


def huisken_trace(traj, x0, t0: float) -> HuiskenTrace:
    """Density and shrinker defect along a trajectory for the kernel at (x0, t0)."""
    ts, th, de = [], [], []
    for snap in traj:
        if not snap.t < t0:
            raise ValueError(f"snapshot time {snap.t} is not before t0={t0}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnderResolvedWarning)
            th.append(gaussian_density(snap.net, x0, np.sqrt(t0 - snap.t)))
        de.append(shrinker_defect(snap.net, x0, t0, snap.t))
        ts.append(snap.t)
    return HuiskenTrace(np.array(ts), np.array(th), np.array(de))


# ---------------------------------------------------------------------------
# angle field and Liouville primitive


@dataclass(frozen=True)
class _Piece:
    sid: int
    idx: np.ndarray  # marker indices in increasing order
    a: object  # node at idx[0]
    b: object  # node at idx[-1]


def _pieces(net: Network, center=None, radius=None) -> list:
    """Sub-polylines inside an open ball (or whole segments when radius is None)."""
    if radius is None:
        return [_Piece(s.id, np.arange(len(s.points)), s.start, s.end) for s in net.segments]
    c = np.asarray(center if center is not None else (0.0, 0.0), float)
    out = []
    for s in net.segments:
        inside = np.hypot(*(s.points - c).T) < radius
        n = len(inside)
        k = 0
        while k < n:
            if not inside[k]:
                k += 1
                continue
            j = k
            while j + 1 < n and inside[j + 1]:
                j += 1
            a = s.start if k == 0 else ("cut", s.id, k)
            b = s.end if j == n - 1 else ("cut", s.id, j)
            if j > k:
                out.append(_Piece(s.id, np.arange(k, j + 1), a, b))
            k = j + 1
    return out


def _propagate(net: Network, pieces: list, root, seed, along, tree: bool, name: str) -> dict:
    """Breadth-first assignment of a per-marker field over pieces.

    ``seed(piece, from_start)`` returns the field on a piece when nothing is
    known yet; ``along(piece, from_start, value_at_node)`` continues it from a
    known node value.  Returns per-segment arrays (NaN off the pieces).
    """
    out = {s.id: np.full(len(s.points), np.nan) for s in net.segments}
    by_node: dict = {}
    for p in pieces:
        by_node.setdefault(p.a, []).append((p, True))
        by_node.setdefault(p.b, []).append((p, False))
    node_val: dict = {}
    done: set = set()
    order = list(by_node)
    if root in by_node:
        order.remove(root)
        order.insert(0, root)
    for start in order:
        if start in node_val:
            continue
        q = deque([start])
        first = True
        while q:
            v = q.popleft()
            for p, from_a in by_node[v]:
                key = (p.sid, int(p.idx[0]))
                if key in done:
                    continue
                done.add(key)
                if first:
                    vals = seed(p, from_a)
                    first = False
                    node_val[v] = vals[0] if from_a else vals[-1]
                else:
                    vals = along(p, from_a, node_val[v])
                out[p.sid][p.idx] = vals
                other = p.b if from_a else p.a
                end_val = vals[-1] if from_a else vals[0]
                if other in node_val:
                    if tree:
                        raise NotTreeLike(f"{name}: not tree-like, cycle closes through segment {p.sid}")
                    continue
                node_val[other] = end_val
                q.append(other)
    return out


@dataclass(frozen=True)
class AngleField:
    """Tangent angle made continuous across junctions by multiples of pi/3."""

    root: int
    values: dict

    def __getitem__(self, sid):
        return self.values[sid]


@dataclass(frozen=True)
class LiouvillePrimitive:
    """Primitive of x dy - y dx along a tree-like (sub)network, zero at the root."""

    root: int
    values: dict

    def __getitem__(self, sid):
        return self.values[sid]


def _default_root(net: Network) -> int:
    for v in net.vertices:
        if net.degree(v.id) == 1:
            return v.id
    return net.vertices[0].id


def _raw_angles(net: Network) -> dict:
    out = {}
    for s in net.segments:
        tau = marker_tangents(s)
        out[s.id] = np.unwrap(np.arctan2(tau[:, 1], tau[:, 0]))
    return out


def theta_field(net: Network, root: int | None = None, reference: float | None = None,
                center=None, radius=None) -> AngleField:
    """Continuous tangent-angle field by breadth-first propagation from ``root``.

    At the root the principal value of the tangent angle is used, or the
    representative closest to ``reference`` modulo pi/3 when given (useful for
    keeping the branch constant continuous along a trajectory).
    """
    root = _default_root(net) if root is None else root
    raw = _raw_angles(net)
    third = np.pi / 3

    def seed(p, from_a):
        vals = raw[p.sid][p.idx]
        v0 = vals[0] if from_a else vals[-1]
        if reference is not None:
            return vals + third * np.round((reference - v0) / third)
        # principal value in (-pi, pi]
        return vals + (np.angle(np.exp(1j * v0)) - v0)

    def along(p, from_a, at_node):
        vals = raw[p.sid][p.idx]
        v0 = vals[0] if from_a else vals[-1]
        return vals + third * np.round((at_node - v0) / third)

    pieces = _pieces(net, center, radius)
    return AngleField(root, _propagate(net, pieces, root, seed, along, tree=False, name="theta"))


def beta_field(net: Network, root: int | None = None, center=None, radius=None) -> LiouvillePrimitive:
    """Primitive of x dy - y dx with value 0 at ``root``.

    Along each chord the increment is the exact line integral
    ``p_x q_y - p_y q_x``.  With ``radius`` given, only the part of the
    network inside the ball is used and each of its components is anchored
    at its own first node.  Raises :class:`NotTreeLike` on a cycle.
    """
    root = _default_root(net) if root is None else root
    seg = {s.id: s for s in net.segments}

    def cum(p, from_a):
        pts = seg[p.sid].points[p.idx]
        inc = pts[:-1, 0] * pts[1:, 1] - pts[:-1, 1] * pts[1:, 0]
        c = np.concatenate([[0.0], np.cumsum(inc)])
        return c if from_a else c - c[-1]

    def seed(p, from_a):
        return cum(p, from_a)

    def along(p, from_a, at_node):
        return cum(p, from_a) + at_node

    pieces = _pieces(net, center, radius)
    return LiouvillePrimitive(root, _propagate(net, pieces, root, seed, along, tree=True, name="beta"))


# ---------------------------------------------------------------------------
# weighted functionals


@dataclass(frozen=True)
class WeightedValue:
    value: float
    dissipation_gradient: float  # int f''(alpha) |x^perp - 2t k|^2 rho
    dissipation_shrinker: float  # int f(alpha) |k + (x-x0)^perp / 2(t0-t)|^2 rho

    @property
    def dissipation(self) -> float:
        return self.dissipation_gradient + self.dissipation_shrinker


def alpha_field(net: Network, t: float, root=None, theta_ref=None, beta_offset: float = 0.0,
                center=None, radius=None) -> dict:
    """beta + 2 t theta per marker, with ``beta_offset`` added to beta."""
    th = theta_field(net, root, theta_ref, center, radius)
    be = beta_field(net, root, center, radius)
    return {sid: be[sid] + beta_offset + 2.0 * t * th[sid] for sid in be.values}


def weighted_functional(net: Network, t: float, f, f2, x0, t0: float, root=None,
                        theta_ref=None, beta_offset: float = 0.0) -> WeightedValue:
    """Integral of f(beta + 2t theta) against the kernel at (x0, t0), with both dissipations.

    ``f`` and its second derivative ``f2`` act elementwise on arrays.
    ``beta_offset`` fixes the additive constant of beta (see
    :func:`beta_gauge_offset`).
    """
    if not t < t0:
        raise ValueError("need t < t0")
    alpha = alpha_field(net, t, root, theta_ref, beta_offset)
    kernel = DensityKernel(tuple(x0), np.sqrt(t0 - t))
    val, dg, ds = [], [], []
    x0 = np.asarray(x0, float)
    for s, (pts, kvec, nu) in zip(net.segments, _frames(net)):
        a = alpha[s.id]
        rho = kernel(pts)
        g = _normal_part(pts, nu) - 2.0 * t * kvec
        h = kvec + _normal_part(pts - x0, nu) / (2.0 * (t0 - t))
        val.append(f(a) * rho)
        dg.append(f2(a) * np.einsum("ij,ij->i", g, g) * rho)
        ds.append(f(a) * np.einsum("ij,ij->i", h, h) * rho)
    return WeightedValue(integrate(net, val), integrate(net, dg), integrate(net, ds))


def root_theta(net: Network, root=None, theta_ref=None) -> float:
    root = _default_root(net) if root is None else root
    th = theta_field(net, root, theta_ref)
    seg, at_start = net.incident(root)[0]
    return float(th[seg.id][0 if at_start else -1])


def beta_gauge_offset(snapshots, root=None) -> tuple[np.ndarray, np.ndarray]:
    """Additive constants of beta in the gauge d beta/dt = <X, Jx> - 2 theta.

    ``root`` must be a pinned endpoint (X = 0 there), so the constant obeys
    b' = -2 theta(root); it is integrated by the trapezoid rule over the
    snapshot times.  Returns ``(offsets, theta_refs)``; the angle references
    keep the branch constant of theta continuous in time.
    """
    snaps = list(snapshots)
    ref = None
    thetas = []
    for s in snaps:
        ref = root_theta(s.net, root, ref)
        thetas.append(ref)
    thetas = np.array(thetas)
    ts = np.array([s.t for s in snaps])
    b = np.concatenate([[0.0], np.cumsum(-2.0 * 0.5 * (thetas[1:] + thetas[:-1]) * np.diff(ts))])
    return b, thetas


@dataclass(frozen=True)
class MonotonicityCheck:
    t: np.ndarray
    value: np.ndarray
    dissipation: np.ndarray
    rate: np.ndarray  # finite-difference derivative between snapshots
    slack: np.ndarray  # rate + mean dissipation, positive part is the violation

    @property
    def max_slack(self) -> float:
        return float(max(0.0, self.slack.max())) if len(self.slack) else 0.0


def weighted_monotonicity(snapshots, f, f2, x0, t0: float, root=None) -> MonotonicityCheck:
    """Compare d/dt of the weighted functional with minus its dissipation along a trajectory."""
    snaps = list(snapshots)
    offsets, refs = beta_gauge_offset(snaps, root)
    vals = [weighted_functional(s.net, s.t, f, f2, x0, t0, root, r, b) for s, r, b in zip(snaps, refs, offsets)]
    ts = np.array([s.t for s in snaps])
    v = np.array([w.value for w in vals])
    d = np.array([w.dissipation for w in vals])
    rate = np.diff(v) / np.diff(ts)
    slack = rate + 0.5 * (d[1:] + d[:-1])
    return MonotonicityCheck(ts, v, d, rate, slack)


def smoothstep(u):
    """Quintic step: 1 for u <= 0, 0 for u >= 1, C^2 in between."""
    u = np.clip(u, 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def ball_cutoff(x, inner: float = 2.0, outer: float = 3.0, center=(0.0, 0.0)):
    r = np.hypot(*(np.asarray(x, float) - np.asarray(center, float)).T)
    return smoothstep((r - inner) / (outer - inner))


@dataclass(frozen=True)
class LocalizedValue:
    value: float  # int phi |alpha|^2 rho
    annulus: float  # int over B3 minus B2 of |alpha|^2 rho
    dissipation: float  # int phi |x^perp - 2t k|^2 rho


def localized_functional(net: Network, t: float, x0, t0: float, cutoff=ball_cutoff,
                         inner: float = 2.0, outer: float = 3.0, center=(0.0, 0.0),
                         theta_ref=None) -> LocalizedValue:
    """Cut-off version of the quadratic weighted functional.

    beta and theta are built on the part of the network inside the outer
    ball only, each component anchored separately.  A cycle inside the outer
    ball raises :class:`NotTreeLike`.
    """
    if not t < t0:
        raise ValueError("need t < t0")
    c = np.asarray(center, float)
    alpha = alpha_field(net, t, None, theta_ref, 0.0, c, outer)
    kernel = DensityKernel(tuple(x0), np.sqrt(t0 - t))
    val, ann, dis = [], [], []
    for s, (pts, kvec, nu) in zip(net.segments, _frames(net)):
        r = np.hypot(*(pts - c).T)
        phi = np.where(r < outer, cutoff(pts, inner, outer, c), 0.0)
        a = np.nan_to_num(alpha[s.id])
        rho = kernel(pts)
        g = _normal_part(pts, nu) - 2.0 * t * kvec
        val.append(phi * a**2 * rho)
        ann.append(np.where((r >= inner) & (r < outer), a**2 * rho, 0.0))
        dis.append(phi * np.einsum("ij,ij->i", g, g) * rho)
    return LocalizedValue(integrate(net, val), integrate(net, ann), integrate(net, dis))


# ---------------------------------------------------------------------------
# expanders, junctions, distances


def expander_defect(net: Network, R: float) -> float:
    """Integral of |k - x^perp|^2 over the part of the network in B_R(0)."""
    if not R > 0:
        raise ValueError("R must be positive")
    vals = []
    for pts, kvec, nu in _frames(net):
        v = kvec - _normal_part(pts, nu)
        inside = np.hypot(*pts.T) < R
        vals.append(np.where(inside, np.einsum("ij,ij->i", v, v), 0.0))
    return integrate(net, vals)


def junction_separation(net: Network, R: float = np.inf, center=(0.0, 0.0)) -> float:
    """Smallest distance between two triple junctions inside B_R(center)."""
    c = np.asarray(center, float)
    pts = np.array([net.vertex(v).position for v in net.junction_ids()]).reshape(-1, 2)
    pts = pts[np.hypot(*(pts - c).T) < R]
    if len(pts) < 2:
        return float("inf")
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    return float(d[np.triu_indices(len(pts), 1)].min())


def _lines(net: Network):
    return shapely.MultiLineString([s.points for s in net.segments])


def _dense(net: Network, step: float) -> np.ndarray:
    out = []
    for s in net.segments:
        p = s.points
        for a, b in zip(p[:-1], p[1:]):
            n = max(1, int(np.ceil(np.hypot(*(b - a)) / step)))
            out.append(a + np.linspace(0.0, 1.0, n, endpoint=False)[:, None] * (b - a))
        out.append(p[-1:])
    return np.concatenate(out) if out else np.zeros((0, 2))


def hausdorff(a: Network, b: Network, center=(0.0, 0.0), radius: float = np.inf, step: float | None = None) -> float:
    """Hausdorff distance of the two networks as seen from the ball B_radius(center).

    Points of either network inside the ball are measured against the whole
    other network, so curves leaving the ball do not create boundary effects.
    """
    c = np.asarray(center, float)
    if step is None:
        step = 0.25 * min(min(s.spacings().min() for s in a.segments), min(s.spacings().min() for s in b.segments))
    worst = 0.0
    for p, q in ((a, b), (b, a)):
        pts = _dense(p, step)
        pts = pts[np.hypot(*(pts - c).T) < radius]
        if len(pts):
            d = shapely.distance(shapely.points(pts), _lines(q))
            worst = max(worst, float(d.max()))
    return worst
