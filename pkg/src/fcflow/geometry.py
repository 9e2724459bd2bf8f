"""Overlapping-patch decomposition of the flow domain.

A domain (rectangular outer box minus circular obstacles) is covered by
overlapping patches, each the image of the unit parameter square under a
smooth invertible map.  Patches are split into overlapping subpatches
carrying fixed-size tensor grids; those grids are the unit of FC expansion
and of data exchange.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainSpec", "PatchMap", "AffinePatchMap", "AnnularPatchMap",
    "GeneralSPatchMap", "ParameterGrid", "Subpatch", "Patch",
    "Decomposition", "build_s_patch", "build_affine_patch",
    "build_decomposition", "refine_decomposition", "validate_decomposition",
    "fringe_mask",
]

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class DomainSpec:
    """Outer rectangular box minus a set of circular obstacles."""

    box: tuple[float, float, float, float]          # x0, x1, y0, y1
    holes: tuple[tuple[float, float, float], ...] = ()   # (cx, cy, radius)

    def contains(self, xy, tol=1e-9):
        x, y = xy[..., 0], xy[..., 1]
        x0, x1, y0, y1 = self.box
        inside = (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
        for cx, cy, r in self.holes:
            inside &= (x - cx) ** 2 + (y - cy) ** 2 >= (r - tol) ** 2
        return inside

    def on_boundary(self, xy, tol=1e-7):
        x, y = xy[..., 0], xy[..., 1]
        x0, x1, y0, y1 = self.box
        on = (np.abs(x - x0) < tol) | (np.abs(x - x1) < tol) \
            | (np.abs(y - y0) < tol) | (np.abs(y - y1) < tol)
        for cx, cy, r in self.holes:
            on |= np.abs(np.hypot(x - cx, y - cy) - r) < tol
        return on & self.contains(xy, tol=tol)


class PatchMap:
    """Smooth invertible map from the unit square onto a patch closure."""

    kind = "I"

    def forward(self, q):
        raise NotImplementedError

    def inverse(self, xy):
        raise NotImplementedError

    def forward_jacobian(self, q):
        """dx/dq, shape (..., 2, 2)."""
        raise NotImplementedError

    def inverse_jacobian(self, q):
        """dq/dx evaluated at parameter q, shape (..., 2, 2)."""
        fj = self.forward_jacobian(q)
        det = fj[..., 0, 0] * fj[..., 1, 1] - fj[..., 0, 1] * fj[..., 1, 0]
        inv = np.empty_like(fj)
        inv[..., 0, 0] = fj[..., 1, 1] / det
        inv[..., 0, 1] = -fj[..., 0, 1] / det
        inv[..., 1, 0] = -fj[..., 1, 0] / det
        inv[..., 1, 1] = fj[..., 0, 0] / det
        return inv


class AffinePatchMap(PatchMap):
    """Axis-aligned rectangle [x0, x0+wx] x [y0, y0+wy]."""

    def __init__(self, kind, x0, y0, wx, wy):
        if wx <= 0 or wy <= 0:
            raise ValueError(f"degenerate rectangle: wx={wx}, wy={wy}")
        if kind not in ("C", "I", "S"):
            raise ValueError(f"unknown patch kind {kind!r}")
        self.kind = kind
        self.x0, self.y0, self.wx, self.wy = float(x0), float(y0), float(wx), float(wy)

    def forward(self, q):
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        out[..., 0] = self.x0 + q[..., 0] * self.wx
        out[..., 1] = self.y0 + q[..., 1] * self.wy
        return out

    def inverse(self, xy):
        xy = np.asarray(xy, dtype=float)
        out = np.empty_like(xy)
        out[..., 0] = (xy[..., 0] - self.x0) / self.wx
        out[..., 1] = (xy[..., 1] - self.y0) / self.wy
        return out

    def forward_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        fj = np.zeros(q.shape[:-1] + (2, 2))
        fj[..., 0, 0] = self.wx
        fj[..., 1, 1] = self.wy
        return fj


class AnnularPatchMap(PatchMap):
    """Annular sector hugging a circular obstacle; q2=0 on the circle."""

    kind = "S"

    def __init__(self, cx, cy, radius, height, theta0, theta1):
        if height <= 0 or radius <= 0:
            raise ValueError("radius and height must be positive")
        if height >= radius * 40:
            raise ValueError("annulus height is implausibly large")
        if not theta1 > theta0:
            raise ValueError("need theta1 > theta0")
        self.cx, self.cy = float(cx), float(cy)
        self.r0 = float(radius)
        self.H = float(height)
        self.theta0, self.theta1 = float(theta0), float(theta1)

    def _theta(self, q1):
        return self.theta0 + q1 * (self.theta1 - self.theta0)

    def forward(self, q):
        q = np.asarray(q, dtype=float)
        th = self._theta(q[..., 0])
        r = self.r0 + q[..., 1] * self.H
        out = np.empty_like(q)
        out[..., 0] = self.cx + r * np.cos(th)
        out[..., 1] = self.cy + r * np.sin(th)
        return out

    def inverse(self, xy):
        xy = np.asarray(xy, dtype=float)
        dx = xy[..., 0] - self.cx
        dy = xy[..., 1] - self.cy
        dth = self.theta1 - self.theta0
        th = np.arctan2(dy, dx)
        rel = np.mod(th - self.theta0, 2 * np.pi)
        # put out-of-range angles on the nearer side of the sector
        rel = np.where(rel > (dth + 2 * np.pi) / 2, rel - 2 * np.pi, rel)
        out = np.empty_like(xy)
        out[..., 0] = rel / dth
        out[..., 1] = (np.hypot(dx, dy) - self.r0) / self.H
        return out

    def forward_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        th = self._theta(q[..., 0])
        r = self.r0 + q[..., 1] * self.H
        dth = self.theta1 - self.theta0
        fj = np.empty(q.shape[:-1] + (2, 2))
        fj[..., 0, 0] = -r * np.sin(th) * dth
        fj[..., 0, 1] = np.cos(th) * self.H
        fj[..., 1, 0] = r * np.cos(th) * dth
        fj[..., 1, 1] = np.sin(th) * self.H
        return fj


class GeneralSPatchMap(PatchMap):
    """S-type patch from a boundary arc l(t) swept along its normal nu(t)."""

    kind = "S"

    def __init__(self, arc, normal, height, arc_tangent=None, normal_tangent=None):
        if height <= 0:
            raise ValueError("height must be positive")
        self.arc = arc
        self.normal = normal
        self.H = float(height)
        self._dl = arc_tangent
        self._dn = normal_tangent

    def forward(self, q):
        q = np.asarray(q, dtype=float)
        base = np.asarray(self.arc(q[..., 0]), dtype=float)
        nu = np.asarray(self.normal(q[..., 0]), dtype=float)
        return base + q[..., 1:2] * self.H * nu

    def forward_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        t = q[..., 0]
        if self._dl is not None:
            dl = np.asarray(self._dl(t), dtype=float)
        else:
            dl = self._fd(self.arc, t)
        if self._dn is not None:
            dn = np.asarray(self._dn(t), dtype=float)
        else:
            dn = self._fd(self.normal, t)
        nu = np.asarray(self.normal(t), dtype=float)
        fj = np.empty(q.shape[:-1] + (2, 2))
        dxdq1 = dl + q[..., 1:2] * self.H * dn
        fj[..., 0, 0] = dxdq1[..., 0]
        fj[..., 1, 0] = dxdq1[..., 1]
        fj[..., 0, 1] = self.H * nu[..., 0]
        fj[..., 1, 1] = self.H * nu[..., 1]
        return fj

    @staticmethod
    def _fd(fn, t, eps=1e-7):
        hi = np.asarray(fn(np.clip(t + eps, 0.0, 1.0)), dtype=float)
        lo = np.asarray(fn(np.clip(t - eps, 0.0, 1.0)), dtype=float)
        dt = np.clip(t + eps, 0.0, 1.0) - np.clip(t - eps, 0.0, 1.0)
        return (hi - lo) / dt[..., None]

    def inverse(self, xy, tol=1e-12, max_iter=60):
        """Newton iteration on the forward map, seeded by coarse search."""
        xy = np.asarray(xy, dtype=float)
        flat = xy.reshape(-1, 2)
        nseed = 33
        tt, ss = np.meshgrid(np.linspace(0, 1, nseed), np.linspace(0, 1, nseed),
                             indexing="ij")
        seeds = np.stack([tt.ravel(), ss.ravel()], axis=-1)
        spts = self.forward(seeds)
        d2 = ((flat[:, None, :] - spts[None, :, :]) ** 2).sum(-1)
        q = seeds[np.argmin(d2, axis=1)].copy()
        for _ in range(max_iter):
            r = self.forward(q) - flat
            if np.abs(r).max() < tol:
                break
            fj = self.forward_jacobian(q)
            det = fj[..., 0, 0] * fj[..., 1, 1] - fj[..., 0, 1] * fj[..., 1, 0]
            dq1 = (fj[..., 1, 1] * r[..., 0] - fj[..., 0, 1] * r[..., 1]) / det
            dq2 = (-fj[..., 1, 0] * r[..., 0] + fj[..., 0, 0] * r[..., 1]) / det
            q[..., 0] -= dq1
            q[..., 1] -= dq2
            q = np.clip(q, -0.25, 1.25)
        return q.reshape(xy.shape)


def build_s_patch(arc, normal, height, arc_tangent=None, normal_tangent=None,
                  check_samples=65):
    """S-type patch map from a boundary arc; errors if the sweep folds."""
    pm = GeneralSPatchMap(arc, normal, height, arc_tangent, normal_tangent)
    tt, ss = np.meshgrid(np.linspace(0, 1, check_samples),
                         np.linspace(0, 1, check_samples), indexing="ij")
    q = np.stack([tt, ss], axis=-1)
    fj = pm.forward_jacobian(q)
    det = fj[..., 0, 0] * fj[..., 1, 1] - fj[..., 0, 1] * fj[..., 1, 0]
    sign = np.sign(det.ravel()[np.abs(det).argmax()])
    bad = det * sign <= 0
    if bad.any():
        i, j = np.unravel_index(np.argmax(bad), bad.shape)
        raise ValueError(
            "s-patch sweep self-intersects (height too large) near "
            f"q=({tt[i, j]:.4f}, {ss[i, j]:.4f})")
    return pm


def build_affine_patch(kind, x0, x1, y0, y1):
    """Affine C- or I-type patch on the rectangle [x0,x1] x [y0,y1]."""
    return AffinePatchMap(kind, x0, y0, x1 - x0, y1 - y0)


# ---------------------------------------------------------------------------
# grids and subpatches

@dataclass(frozen=True)
class ParameterGrid:
    r_p: int
    s_p: int
    n_0: int
    n_v: int

    @property
    def N1(self):
        return self.r_p * (self.n_0 + 1) - 1

    @property
    def N2(self):
        return self.s_p * (self.n_0 + 1) - 1

    @property
    def npts1(self):
        return self.N1 + 2 * self.n_v

    @property
    def npts2(self):
        return self.N2 + 2 * self.n_v

    @property
    def h1(self):
        return 1.0 / (self.npts1 - 1)

    @property
    def h2(self):
        return 1.0 / (self.npts2 - 1)

    def subpatch_index_window(self, r, s):
        n0, nv = self.n_0, self.n_v
        i_lo = r * (n0 + 1)
        i_hi = (r + 1) * (n0 + 1) + 2 * nv - 2
        j_lo = s * (n0 + 1)
        j_hi = (s + 1) * (n0 + 1) + 2 * nv - 2
        return i_lo, i_hi, j_lo, j_hi


@dataclass
class Subpatch:
    r: int
    s: int
    i_lo: int
    i_hi: int
    j_lo: int
    j_hi: int
    external: dict = field(default_factory=dict)   # side -> bool

    @property
    def n1(self):
        return self.i_hi - self.i_lo + 1

    @property
    def n2(self):
        return self.j_hi - self.j_lo + 1

    def param_rect(self, grid: ParameterGrid):
        return (self.i_lo * grid.h1, self.i_hi * grid.h1,
                self.j_lo * grid.h2, self.j_hi * grid.h2)


def fringe_mask(sp: Subpatch, n: int) -> np.ndarray:
    """Points at max-index distance < n from this subpatch's internal sides."""
    mask = np.zeros((sp.n1, sp.n2), dtype=bool)
    if n <= 0:
        return mask
    ii = np.arange(sp.n1)[:, None]
    jj = np.arange(sp.n2)[None, :]
    if not sp.external.get("left", False):
        mask |= ii < n
    if not sp.external.get("right", False):
        mask |= (sp.n1 - 1 - ii) < n
    if not sp.external.get("bottom", False):
        mask |= jj < n
    if not sp.external.get("top", False):
        mask |= (sp.n2 - 1 - jj) < n
    return mask


class Patch:
    """One patch: map, parameter grid, physical grid, subpatches."""

    def __init__(self, pmap: PatchMap, grid: ParameterGrid, domain: DomainSpec,
                 index: int = 0):
        self.map = pmap
        self.grid = grid
        self.domain = domain
        self.index = index
        self.kind = pmap.kind
        self.q1 = np.arange(grid.npts1) * grid.h1
        self.q2 = np.arange(grid.npts2) * grid.h2
        qq = np.stack(np.meshgrid(self.q1, self.q2, indexing="ij"), axis=-1)
        xy = pmap.forward(qq)
        self.X = xy[..., 0]
        self.Y = xy[..., 1]
        self.jac = pmap.inverse_jacobian(qq)       # dq/dx at grid points
        det = (self.jac[..., 0, 0] * self.jac[..., 1, 1]
               - self.jac[..., 0, 1] * self.jac[..., 1, 0])
        self.min_det_jac = float(np.abs(det).min())
        dx1 = np.hypot(np.diff(self.X, axis=0), np.diff(self.Y, axis=0))
        dx2 = np.hypot(np.diff(self.X, axis=1), np.diff(self.Y, axis=1))
        self.h_tilde = min(dx1.min(), dx2.min())
        self.h_hat = max(dx1.max(), dx2.max())
        self.subpatches = []
        for r in range(grid.r_p):
            for s in range(grid.s_p):
                i_lo, i_hi, j_lo, j_hi = grid.subpatch_index_window(r, s)
                sp = Subpatch(r, s, i_lo, i_hi, j_lo, j_hi)
                sp.external = self._classify_sides(sp)
                self.subpatches.append(sp)

    def _classify_sides(self, sp):
        ext = {}
        edges = {
            "left": (np.full(sp.n2, sp.i_lo), np.arange(sp.j_lo, sp.j_hi + 1)),
            "right": (np.full(sp.n2, sp.i_hi), np.arange(sp.j_lo, sp.j_hi + 1)),
            "bottom": (np.arange(sp.i_lo, sp.i_hi + 1), np.full(sp.n1, sp.j_lo)),
            "top": (np.arange(sp.i_lo, sp.i_hi + 1), np.full(sp.n1, sp.j_hi)),
        }
        for side, (ii, jj) in edges.items():
            pts = np.stack([self.X[ii, jj], self.Y[ii, jj]], axis=-1)
            ext[side] = bool(self.domain.on_boundary(pts).all())
        return ext

    def sub_xy(self, sp):
        return (self.X[sp.i_lo:sp.i_hi + 1, sp.j_lo:sp.j_hi + 1],
                self.Y[sp.i_lo:sp.i_hi + 1, sp.j_lo:sp.j_hi + 1])

    def sub_jac(self, sp):
        return self.jac[sp.i_lo:sp.i_hi + 1, sp.j_lo:sp.j_hi + 1]


class Decomposition:
    def __init__(self, patches, domain, n_0, n_v, specs):
        self.patches = patches
        self.domain = domain
        self.n_0 = n_0
        self.n_v = n_v
        self._specs = specs          # (pmap, r_p, s_p) used to build / refine

    def total_points(self):
        return sum(p.grid.npts1 * p.grid.npts2 for p in self.patches)

    def subpatch_list(self):
        """(patch_idx, subpatch) pairs in deterministic order."""
        out = []
        for pi, p in enumerate(self.patches):
            for sp in p.subpatches:
                out.append((pi, sp))
        return out

    def summary(self):
        lines = [f"decomposition: {len(self.patches)} patches, "
                 f"{self.total_points()} grid points, n_0={self.n_0}, n_v={self.n_v}"]
        for p in self.patches:
            g = p.grid
            lines.append(
                f"  patch {p.index} kind={p.kind} subpatches={g.r_p}x{g.s_p} "
                f"grid={g.npts1}x{g.npts2} h_tilde={p.h_tilde:.5g} h_hat={p.h_hat:.5g}")
        return "\n".join(lines)


def build_decomposition(specs, domain, n_0=83, n_v=9):
    """Assemble patches from (map, r_p, s_p) specs over the given domain."""
    if n_0 < 1 or n_v < 1:
        raise ValueError("n_0 and n_v must be positive")
    patches = []
    for idx, (pmap, r_p, s_p) in enumerate(specs):
        grid = ParameterGrid(r_p=r_p, s_p=s_p, n_0=n_0, n_v=n_v)
        patches.append(Patch(pmap, grid, domain, index=idx))
    kind_order = {"S": 0, "C": 1, "I": 2}
    patches.sort(key=lambda p: (kind_order[p.kind], p.index))
    return Decomposition(patches, domain, n_0, n_v, list(specs))


def refine_decomposition(dec: Decomposition, K: int) -> Decomposition:
    """Multiply every patch's subpatch counts by K; maps are unchanged."""
    if K < 1:
        raise ValueError("refinement factor must be >= 1")
    if K == 1:
        return build_decomposition(dec._specs, dec.domain, dec.n_0, dec.n_v)
    specs = [(pmap, r_p * K, s_p * K) for pmap, r_p, s_p in dec._specs]
    return build_decomposition(specs, dec.domain, dec.n_0, dec.n_v)


# ---------------------------------------------------------------------------
# containment and depth queries

def patch_contains(patch: Patch, xy, tol=1e-9):
    q = patch.map.inverse(xy)
    return ((q[..., 0] >= -tol) & (q[..., 0] <= 1 + tol)
            & (q[..., 1] >= -tol) & (q[..., 1] <= 1 + tol)), q


def cell_depth(q, grid: ParameterGrid):
    """Depth into the patch in grid-cell units (0 on the boundary)."""
    d1 = np.minimum(q[..., 0], 1.0 - q[..., 0]) / grid.h1
    d2 = np.minimum(q[..., 1], 1.0 - q[..., 1]) / grid.h2
    return np.minimum(d1, d2)


def subpatch_cell_depth(q, sp: Subpatch, grid: ParameterGrid):
    a, b, c, d = sp.param_rect(grid)
    d1 = np.minimum(q[..., 0] - a, b - q[..., 0]) / grid.h1
    d2 = np.minimum(q[..., 1] - c, d - q[..., 1]) / grid.h2
    return np.minimum(d1, d2)


_OWNER_KIND_RANK = {"C": 0, "I": 1, "S": 2}


def ownership_masks(dec: Decomposition, tol=1e-9):
    """Disjoint ownership of overlapped grid points.

    Each physical grid point is owned by the subpatch in which it sits
    deepest (in grid-cell units); exact ties go to the lowest
    (kind, patch, subpatch) key.  Every point is owned by exactly one of the
    subpatches containing it, so diagnostics over owned points count overlap
    regions once.
    """
    subs = dec.subpatch_list()
    masks = []
    for sid, (pi, sp) in enumerate(subs):
        patch = dec.patches[pi]
        x, y = patch.sub_xy(sp)
        xy = np.stack([x.ravel(), y.ravel()], axis=-1)
        gi = np.broadcast_to(np.arange(sp.i_lo, sp.i_hi + 1)[:, None],
                             (sp.n1, sp.n2)).ravel()
        gj = np.broadcast_to(np.arange(sp.j_lo, sp.j_hi + 1)[None, :],
                             (sp.n1, sp.n2)).ravel()
        self_key = (_OWNER_KIND_RANK[patch.kind] * 10 ** 6
                    + pi * 10 ** 3 + sp.r * 32 + sp.s)
        best_depth = np.full(xy.shape[0], -np.inf)
        best_key = np.full(xy.shape[0], np.inf)
        for pi2, patch2 in enumerate(dec.patches):
            if pi2 == pi:
                q = None
            else:
                q = patch2.map.inverse(xy)
            for sp2 in patch2.subpatches:
                key = (_OWNER_KIND_RANK[patch2.kind] * 10 ** 6
                       + pi2 * 10 ** 3 + sp2.r * 32 + sp2.s)
                if pi2 == pi:
                    inside = ((gi >= sp2.i_lo) & (gi <= sp2.i_hi)
                              & (gj >= sp2.j_lo) & (gj <= sp2.j_hi))
                    depth = np.minimum.reduce([
                        gi - sp2.i_lo, sp2.i_hi - gi,
                        gj - sp2.j_lo, sp2.j_hi - gj]).astype(float)
                else:
                    a, b, c, d = sp2.param_rect(patch2.grid)
                    inside = ((q[:, 0] >= a - tol) & (q[:, 0] <= b + tol)
                              & (q[:, 1] >= c - tol) & (q[:, 1] <= d + tol))
                    depth = subpatch_cell_depth(q, sp2, patch2.grid)
                depth = np.where(inside, depth, -np.inf)
                with np.errstate(invalid="ignore"):
                    better = (depth > best_depth + tol) | (
                        (np.abs(depth - best_depth) <= tol) & (key < best_key))
                best_depth = np.where(better, depth, best_depth)
                best_key = np.where(better, key, best_key)
        masks.append((best_key == self_key).reshape(sp.n1, sp.n2))
    return masks


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    overlap_violations: list
    donor_receiver_violations: list
    spacing: dict
    coverage_misses: int
    side_classification: list

    @property
    def ok(self):
        return (not self.overlap_violations
                and not self.donor_receiver_violations
                and self.coverage_misses == 0)

    def text(self):
        lines = [f"overlap violations: {len(self.overlap_violations)}"]
        lines += [f"  {v}" for v in self.overlap_violations[:20]]
        lines.append(f"donor/receiver violations: {len(self.donor_receiver_violations)}")
        lines += [f"  {v}" for v in self.donor_receiver_violations[:20]]
        lines.append(f"coverage misses (monte carlo): {self.coverage_misses}")
        for k, v in self.spacing.items():
            lines.append(f"spacing patch {k}: h_tilde={v[0]:.5g} h_hat={v[1]:.5g}")
        return "\n".join(lines)


def _patch_side_layer(patch: Patch, side, width):
    """Grid points of the (width)-point layer adjacent to a patch side."""
    if side == "left":
        sel = (slice(0, width), slice(None))
    elif side == "right":
        sel = (slice(patch.grid.npts1 - width, None), slice(None))
    elif side == "bottom":
        sel = (slice(None), slice(0, width))
    else:
        sel = (slice(None), slice(patch.grid.npts2 - width, None))
    return np.stack([patch.X[sel].ravel(), patch.Y[sel].ravel()], axis=-1)


def _patch_side_external(patch: Patch, side):
    n1, n2 = patch.grid.npts1, patch.grid.npts2
    idx = {"left": (np.zeros(n2, int), np.arange(n2)),
           "right": (np.full(n2, n1 - 1), np.arange(n2)),
           "bottom": (np.arange(n1), np.zeros(n1, int)),
           "top": (np.arange(n1), np.full(n1, n2 - 1))}[side]
    pts = np.stack([patch.X[idx], patch.Y[idx]], axis=-1)
    return bool(patch.domain.on_boundary(pts).all())


def validate_decomposition(dec: Decomposition, n_f=5, n_v=None, h_bar=None,
                           plan=None, mc_points=100_000, seed=7):
    """Diagnostic report: overlap layers, donor/receiver conflicts, spacing.

    The donor/receiver section requires a communication plan (built by the
    exchange module); without one it is skipped.
    """
    n_v = dec.n_v if n_v is None else n_v
    overlap = []
    sides_info = []
    for p in dec.patches:
        for side in SIDES:
            if _patch_side_external(p, side):
                sides_info.append((p.index, side, "external"))
                continue
            sides_info.append((p.index, side, "internal"))
            layer = _patch_side_layer(p, side, 2 * n_v + 1)
            covered = np.zeros(layer.shape[0], dtype=bool)
            for other in dec.patches:
                if other is p:
                    continue
                inside, _ = patch_contains(other, layer, tol=1e-9)
                covered |= inside
                if covered.all():
                    break
            if not covered.all():
                overlap.append((p.index, side, int((~covered).sum())))

    dr = []
    if plan is not None:
        donors = plan.donor_point_set()
        receivers = plan.receiver_point_set()
        clash = donors & receivers
        dr = sorted(clash)

    spacing = {p.index: (p.h_tilde, p.h_hat) for p in dec.patches}
    if h_bar is not None:
        for p in dec.patches:
            if p.h_hat > h_bar:
                overlap.append((p.index, "h_hat", f"exceeds bound {h_bar}"))

    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = dec.domain.box
    pts = np.stack([rng.uniform(x0, x1, mc_points),
                    rng.uniform(y0, y1, mc_points)], axis=-1)
    pts = pts[dec.domain.contains(pts, tol=-1e-12)]
    misses = np.ones(pts.shape[0], dtype=bool)
    for p in dec.patches:
        inside, _ = patch_contains(p, pts[misses], tol=1e-12)
        idx = np.where(misses)[0]
        misses[idx[inside]] = False
        if not misses.any():
            break

    return ValidationReport(
        overlap_violations=overlap,
        donor_receiver_violations=dr,
        spacing=spacing,
        coverage_misses=int(misses.sum()),
        side_classification=sides_info,
    )
