"""Network-gated smooth artificial viscosity.

Per subpatch, lines of the Mach-number proxy are classified for smoothness;
classes map to weights R, which scale a localized wave-speed bound into a
preliminary viscosity on the subpatch's viscosity-generation subgrid (the
grid minus its n_v-fringe).  A normalized cos^2-window blend then turns
those pointwise values into one globally smooth field: at every grid point
of every subpatch the result is a convex combination of nearby generation
values, identical across subpatches sharing the point.
"""

from __future__ import annotations

import numpy as np

from . import classifier as cl
from .euler import check_positivity
from .geometry import Decomposition, fringe_mask

__all__ = ["proxy_variable", "mwsb", "classify_field", "window_weight",
           "preliminary_viscosity", "BlendOperator", "CoverageError",
           "VISCOSITY_WEIGHTS"]

VISCOSITY_WEIGHTS = np.array([np.nan, 1.5, 1.0, 0.5, 0.0])   # R(tau), 1-based
_STENCIL_HALF = 3          # 7x7 localization stencil for the wave-speed max


class CoverageError(RuntimeError):
    pass


def proxy_variable(rho, u, v, p, gamma=1.4):
    """Local Mach number, the quantity whose oscillations are classified."""
    check_positivity(rho, p, "proxy variable")
    return np.hypot(u, v) * np.sqrt(rho / (gamma * p))


def mwsb(rho, u, v, p, gamma=1.4):
    """Maximum wave speed bound |u| + |v| + a."""
    check_positivity(rho, p, "wave speed bound")
    return np.abs(u) + np.abs(v) + np.sqrt(gamma * p / rho)


def classify_field(phi, op, model=None):
    """Smoothness class at every grid point of one subpatch array.

    Each point inherits the least-smooth class of the two grid lines through
    it (the full lines are the classification windows).
    """
    phi = np.asarray(phi, dtype=float)
    tau_lines_q1 = cl.classify_windows(phi.T, op, model)   # per j, along q1
    tau_lines_q2 = cl.classify_windows(phi, op, model)     # per i, along q2
    return np.minimum(tau_lines_q1[None, :], tau_lines_q2[:, None])


def _running_max_1d(a, half, axis):
    out = a.copy()
    for shift in range(1, half + 1):
        sl_fwd = [slice(None)] * a.ndim
        sl_bwd = [slice(None)] * a.ndim
        sl_fwd[axis] = slice(shift, None)
        sl_bwd[axis] = slice(None, -shift)
        np.maximum(out[tuple(sl_fwd)], a[tuple(sl_bwd)], out=out[tuple(sl_fwd)])
        np.maximum(out[tuple(sl_bwd)], a[tuple(sl_fwd)], out=out[tuple(sl_bwd)])
    return out


def local_wave_speed_max(S, half=_STENCIL_HALF):
    """Max of S over the (2*half+1)^2 stencil, clipped at subpatch edges."""
    return _running_max_1d(_running_max_1d(S, half, 0), half, 1)


def preliminary_viscosity(tau, S, h_hat, gen_mask):
    """R(tau) * local wave-speed max * h_hat on the generation subgrid."""
    mu_hat = VISCOSITY_WEIGHTS[tau] * local_wave_speed_max(S) * h_hat
    return np.where(gen_mask, mu_hat, 0.0)


def window_weight(x, c, r, h):
    """cos^2 window: 1 inside |x| < c*h/2, smooth decay to 0 at (c/2 + r)*h."""
    x = np.abs(np.asarray(x, dtype=float))
    inner = 0.5 * c * h
    outer = inner + r * h
    rise = np.cos(np.pi * (x - inner) / (2.0 * r * h)) ** 2
    return np.where(x < inner, 1.0, np.where(x > outer, 0.0, rise))


def _snapped_window_kernel(r):
    """Window values at integer grid offsets (c=0); support |m| <= r-1."""
    m = np.arange(-(r - 1), r)
    return np.cos(np.pi * np.abs(m) / (2.0 * r)) ** 2


def _correlate_sep(a, kernel):
    """Separable 2D correlation with zero padding, kernel centered."""
    half = kernel.size // 2
    pad = np.pad(a, ((half, half), (0, 0)))
    out = np.zeros_like(a)
    for k, w in enumerate(kernel):
        out += w * pad[k:k + a.shape[0], :]
    pad = np.pad(out, ((0, 0), (half, half)))
    out2 = np.zeros_like(a)
    for k, w in enumerate(kernel):
        out2 += w * pad[:, k:k + a.shape[1]]
    return out2


class BlendOperator:
    """Precomputed normalized multi-patch windowed blending.

    For each grid point x of each subpatch, the sum over all generation
    points of all subpatches containing x reduces to: correlate each
    subpatch's generation field with the separable snapped window kernel,
    then gather at x's rounded parameter-grid image in every containing
    subpatch.  Geometry is static, so gather lists and the normalization
    denominator are built once.
    """

    def __init__(self, dec: Decomposition, n_f=5):
        self.dec = dec
        n_v = dec.n_v
        self.kernel = _snapped_window_kernel(n_v)
        subs = dec.subpatch_list()
        self.subs = subs
        self.gen_masks = [~fringe_mask(sp, n_v) for _, sp in subs]
        self.den = [_correlate_sep(m.astype(float), self.kernel)
                    for m in self.gen_masks]

        # gather lists: (recv_sid, donor_sid, recv_flat, donor_flat)
        self.gathers = []
        tol = 1e-9
        by_patch = {}
        for sid2, (pi2, sp2) in enumerate(subs):
            by_patch.setdefault(pi2, []).append(sid2)
        for sid, (pi, sp) in enumerate(subs):
            patch = dec.patches[pi]
            x, y = patch.sub_xy(sp)
            xy = np.stack([x.ravel(), y.ravel()], axis=-1)
            gi = np.broadcast_to(np.arange(sp.i_lo, sp.i_hi + 1)[:, None],
                                 (sp.n1, sp.n2)).ravel()
            gj = np.broadcast_to(np.arange(sp.j_lo, sp.j_hi + 1)[None, :],
                                 (sp.n1, sp.n2)).ravel()
            for pi2, patch2 in enumerate(dec.patches):
                grid2 = patch2.grid
                if pi2 != pi:
                    q = patch2.map.inverse(xy)
                for sid2 in by_patch[pi2]:
                    sp2 = subs[sid2][1]
                    if pi2 == pi:
                        # same patch: shared parameter grid, window overlap
                        inside = ((gi >= sp2.i_lo) & (gi <= sp2.i_hi)
                                  & (gj >= sp2.j_lo) & (gj <= sp2.j_hi))
                        if not inside.any():
                            continue
                        li = gi[inside] - sp2.i_lo
                        lj = gj[inside] - sp2.j_lo
                    else:
                        a, b, c, d = sp2.param_rect(grid2)
                        inside = ((q[:, 0] >= a - tol) & (q[:, 0] <= b + tol)
                                  & (q[:, 1] >= c - tol) & (q[:, 1] <= d + tol))
                        if not inside.any():
                            continue
                        # round half up, per the closest-grid-point map
                        li = np.clip(np.floor(q[inside, 0] / grid2.h1 + 0.5).astype(int),
                                     sp2.i_lo, sp2.i_hi) - sp2.i_lo
                        lj = np.clip(np.floor(q[inside, 1] / grid2.h2 + 0.5).astype(int),
                                     sp2.j_lo, sp2.j_hi) - sp2.j_lo
                    recv_flat = np.nonzero(inside)[0]
                    donor_flat = li * sp2.n2 + lj
                    self.gathers.append((sid, sid2, recv_flat, donor_flat))

        # normalization denominator per receiver point
        self.total_den = [np.zeros((sp.n1, sp.n2)) for _, sp in subs]
        for sid, sid2, recv_flat, donor_flat in self.gathers:
            self.total_den[sid].ravel()[recv_flat] += \
                self.den[sid2].ravel()[donor_flat]
        for sid, td in enumerate(self.total_den):
            if (td <= 0.0).any():
                pi, sp = subs[sid]
                bad = int((td <= 0.0).sum())
                raise CoverageError(
                    f"{bad} grid points of patch {pi} subpatch "
                    f"({sp.r},{sp.s}) lie in no generation window")

    def partition_of_unity(self):
        """Blend of mu_hat ≡ 1: exactly 1 everywhere when windows cover."""
        ones = [np.ones_like(m, dtype=float) for m in self.gen_masks]
        return self.blend(ones)

    def blend(self, mu_hat_fields):
        num = [_correlate_sep(np.where(self.gen_masks[sid], f, 0.0), self.kernel)
               for sid, f in enumerate(mu_hat_fields)]
        out = [np.zeros_like(td) for td in self.total_den]
        for sid, sid2, recv_flat, donor_flat in self.gathers:
            out[sid].ravel()[recv_flat] += num[sid2].ravel()[donor_flat]
        for sid, td in enumerate(self.total_den):
            out[sid] /= td
        return out
