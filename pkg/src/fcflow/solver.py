"""Curvilinear Euler right-hand side, boundary conditions, time marching.

The state lives as one (n1, n2, 4) conserved-variable array per subpatch.
Each time step follows a fixed order: evaluate the artificial viscosity from
the current state, filter the solution spectrally, pick the adaptive step
size, then run the five SSPRK-4 stages with boundary conditions and
patch/subpatch exchange enforced after every stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import classifier as cl
from . import euler
from . import fc
from . import viscosity as vis
from .exchange import apply_exchange, build_comm_plan
from .geometry import Decomposition

__all__ = ["BoundaryCondition", "RunConfig", "FlowSolver", "ssprk4_step",
           "SSPRK4_COEFFS", "initialize_uniform", "initialize_shock",
           "initialize_primitive"]

# Five-stage fourth-order strong-stability-preserving scheme
# (Shu-Osher form; low-storage representation with five RHS evaluations).
SSPRK4_COEFFS = {
    "b10": 0.391752226571890,
    "a20": 0.444370493651235, "a21": 0.555629506348765,
    "b21": 0.368410593050371,
    "a30": 0.620101851488403, "a32": 0.379898148511597,
    "b32": 0.251891774271694,
    "a40": 0.178079954393132, "a43": 0.821920045606868,
    "b43": 0.544974750228521,
    "a52": 0.517231671970585, "a53": 0.096059710526147,
    "b53": 0.063692468666290,
    "a54": 0.386708617503269, "b54": 0.226007483236906,
}

BC_KINDS = ("inflow", "supersonic_outflow", "pressure_outflow", "slip_wall",
            "noslip_adiabatic", "zero_normal_derivative")

_SIDE_AXIS = {"left": (0, "start"), "right": (0, "stop"),
              "bottom": (1, "start"), "top": (1, "stop")}


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str
    state: tuple | None = None        # primitive (rho, u, v, p) for inflow
    pressure: float | None = None     # for pressure_outflow

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "inflow" and self.state is None:
            raise ValueError("inflow requires a primitive state")
        if self.kind == "pressure_outflow" and self.pressure is None:
            raise ValueError("pressure_outflow requires a pressure value")


@dataclass
class RunConfig:
    cfl: float = 0.5
    final_time: float = 1.0
    gamma: float = euler.GAMMA
    filter_alpha: float = 10.0
    filter_p: int = 14
    smear_alpha: float = 10.0
    smear_p: int = 2
    smear_c: int = 18
    smear_r: int = 9
    n_f: int = 5
    fc_d: int = 2
    fc_c: int = 25
    classifier: str = "ann"           # "ann" | "fallback"
    snapshot_times: tuple = ()
    max_steps: int = 10 ** 9

    def __post_init__(self):
        if self.cfl <= 0:
            raise ValueError("CFL must be positive")
        if self.final_time <= 0:
            raise ValueError("final time must be positive")
        if self.classifier not in ("ann", "fallback"):
            raise ValueError(f"unknown classifier choice {self.classifier!r}")


# ---------------------------------------------------------------------------
# initial states

def initialize_primitive(dec: Decomposition, fn, gamma=euler.GAMMA):
    """State from a primitive-variable function (x, y) -> (rho, u, v, p)."""
    fields = []
    for pi, sp in dec.subpatch_list():
        x, y = dec.patches[pi].sub_xy(sp)
        rho, u, v, p = fn(x, y)
        fields.append(euler.conserved(rho + 0 * x, u + 0 * x, v + 0 * x,
                                      p + 0 * x, gamma))
    return fields


def initialize_uniform(dec: Decomposition, mach, gamma=euler.GAMMA):
    rho, u, v, p = euler.mach_flow_state(mach)
    return initialize_primitive(dec, lambda x, y: (rho, u, v, p), gamma)


def initialize_shock(dec: Decomposition, mach, x_s, gamma=euler.GAMMA):
    left, right = euler.mach_shock_states(mach, gamma)

    def fn(x, y):
        masks = x < x_s
        out = [np.where(masks, l, r) for l, r in zip(left, right)]
        return tuple(out)

    return initialize_primitive(dec, fn, gamma)


# ---------------------------------------------------------------------------
# generic SSPRK-4 step

def ssprk4_step(state, dt, rhs_fn, post_stage=None, combine=None, scale=None):
    """One five-stage SSPRK-4 step for any state supporting the callbacks.

    ``combine(coeffs_and_terms)`` builds linear combinations; by default the
    state is a list of ndarrays.  ``post_stage`` (boundary conditions +
    exchange) runs after every stage update.
    """
    c = SSPRK4_COEFFS
    if combine is None:
        def combine(terms):
            out = None
            for coef, arrs in terms:
                if out is None:
                    out = [coef * a for a in arrs]
                else:
                    for o, a in zip(out, arrs):
                        o += coef * a
            return out

    def post(u):
        if post_stage is not None:
            post_stage(u)
        return u

    l0 = rhs_fn(state)
    u1 = post(combine([(1.0, state), (c["b10"] * dt, l0)]))
    l1 = rhs_fn(u1)
    u2 = post(combine([(c["a20"], state), (c["a21"], u1),
                       (c["b21"] * dt, l1)]))
    l2 = rhs_fn(u2)
    u3 = post(combine([(c["a30"], state), (c["a32"], u2),
                       (c["b32"] * dt, l2)]))
    l3 = rhs_fn(u3)
    u4 = post(combine([(c["a40"], state), (c["a43"], u3),
                       (c["b43"] * dt, l3)]))
    l4 = rhs_fn(u4)
    u5 = post(combine([(c["a52"], u2), (c["a53"], u3), (c["b53"] * dt, l3),
                       (c["a54"], u4), (c["b54"] * dt, l4)]))
    return u5


# ---------------------------------------------------------------------------
# the multi-patch solver

class FlowSolver:
    def __init__(self, dec: Decomposition, boundary: dict, config: RunConfig,
                 model=None, blend=None, plan=None):
        self.dec = dec
        self.config = config
        self.gamma = config.gamma
        self.op = fc.build_continuation_operator(config.fc_d, config.fc_c)
        self.plan = plan if plan is not None else build_comm_plan(dec, config.n_f)
        self._blend = blend
        if config.classifier == "ann":
            self.model = model if model is not None else cl.load_default_model()
        else:
            self.model = None

        self.subs = dec.subpatch_list()
        self.spacings = []
        self.jacs = []
        for pi, sp in self.subs:
            patch = dec.patches[pi]
            self.spacings.append((patch.grid.h1, patch.grid.h2))
            self.jacs.append(patch.sub_jac(sp))
        self.h_tilde = [dec.patches[pi].h_tilde for pi, _ in self.subs]
        self.h_hat = [dec.patches[pi].h_hat for pi, _ in self.subs]

        self.bcs = self._resolve_boundaries(boundary)
        self.t = 0.0
        self.steps = 0
        self.dt_history = []

    # -- boundary bookkeeping -------------------------------------------------

    def _resolve_boundaries(self, boundary):
        """Per-subpatch list of (side, BoundaryCondition, wall geometry)."""
        out = []
        for sid, (pi, sp) in enumerate(self.subs):
            patch = self.dec.patches[pi]
            entries = []
            for side, (axis, end) in _SIDE_AXIS.items():
                if not sp.external.get(side, False):
                    continue
                on_patch_side = {
                    "left": sp.i_lo == 0,
                    "right": sp.i_hi == patch.grid.npts1 - 1,
                    "bottom": sp.j_lo == 0,
                    "top": sp.j_hi == patch.grid.npts2 - 1,
                }[side]
                if not on_patch_side:
                    continue
                bc = boundary.get((pi, side))
                if bc is None:
                    raise ValueError(
                        f"external side {side!r} of patch {pi} has no "
                        "boundary condition")
                normal = self._side_normals(patch, sp, side)
                entries.append((side, bc, normal))
            out.append(entries)
        return out

    def _side_normals(self, patch, sp, side):
        axis, end = _SIDE_AXIS[side]
        if side == "left":
            ii = np.full(sp.n2, sp.i_lo)
            jj = np.arange(sp.j_lo, sp.j_hi + 1)
        elif side == "right":
            ii = np.full(sp.n2, sp.i_hi)
            jj = np.arange(sp.j_lo, sp.j_hi + 1)
        elif side == "bottom":
            ii = np.arange(sp.i_lo, sp.i_hi + 1)
            jj = np.full(sp.n1, sp.j_lo)
        else:
            ii = np.arange(sp.i_lo, sp.i_hi + 1)
            jj = np.full(sp.n1, sp.j_hi)
        q = np.stack([ii * patch.grid.h1, jj * patch.grid.h2], axis=-1)
        fj = patch.map.forward_jacobian(q)
        # wall tangent runs along the side; rotate to get the unit normal
        t_axis = 1 - axis
        tx = fj[..., 0, t_axis]
        ty = fj[..., 1, t_axis]
        norm = np.hypot(tx, ty)
        return np.stack([-ty / norm, tx / norm], axis=-1)

    # -- state utilities -------------------------------------------------------

    def check_state(self, fields, context):
        for sid, e in enumerate(fields):
            rho, _, _, p = euler.primitive(e, self.gamma)
            pi, sp = self.subs[sid]
            euler.check_positivity(
                rho, p, f"{context}; patch {pi} subpatch ({sp.r},{sp.s}) "
                f"t={self.t:.6g} step={self.steps}")

    def _diff0(self, a, sid):
        h1, _ = self.spacings[sid]
        moved = np.moveaxis(a, 0, -1)
        out = fc.fc_differentiate(moved, h1, self.op)
        return np.moveaxis(out, -1, 0)

    def _diff1(self, a, sid):
        _, h2 = self.spacings[sid]
        moved = np.moveaxis(a, 1, -1)
        out = fc.fc_differentiate(moved, h2, self.op)
        return np.moveaxis(out, -1, 1)

    # -- viscosity pipeline ----------------------------------------------------

    @property
    def blend(self):
        if self._blend is None:
            self._blend = vis.BlendOperator(self.dec)
        return self._blend

    def compute_viscosity(self, fields):
        mu_hat = []
        for sid, e in enumerate(fields):
            rho, u, v, p = euler.primitive(e, self.gamma)
            euler.check_positivity(rho, p, "viscosity evaluation")
            phi = vis.proxy_variable(rho, u, v, p, self.gamma)
            tau = vis.classify_field(phi, self.op, self.model)
            S = vis.mwsb(rho, u, v, p, self.gamma)
            mu_hat.append(vis.preliminary_viscosity(
                tau, S, self.h_hat[sid], self.blend.gen_masks[sid]))
        return self.blend.blend(mu_hat)

    # -- right-hand side --------------------------------------------------------

    def rhs(self, fields, mu_fields):
        out = []
        for sid, e in enumerate(fields):
            adiabatic = any(bc.kind == "noslip_adiabatic"
                            for _, bc, _ in self.bcs[sid])
            out.append(self._rhs_one(sid, e, mu_fields[sid], adiabatic))
        return out

    def _rhs_one(self, sid, e, mu, adiabatic):
        jac = self.jacs[sid]
        j11 = jac[..., 0, 0]
        j12 = jac[..., 0, 1]
        j21 = jac[..., 1, 0]
        j22 = jac[..., 1, 1]

        if adiabatic:
            d1fx, d2fx, d1fy, d2fy, d1e, d2e = self._flux_derivs_adiabatic(sid, e)
        else:
            fx, fy = euler.convective_flux(e, self.gamma)
            d1fx = self._diff0(fx, sid)
            d2fx = self._diff1(fx, sid)
            d1fy = self._diff0(fy, sid)
            d2fy = self._diff1(fy, sid)
            d1e = d2e = None

        rhs = -(j11[..., None] * d1fx + j21[..., None] * d2fx
                + j12[..., None] * d1fy + j22[..., None] * d2fy)

        if mu is not None and np.any(mu > 0.0):
            if d1e is None:
                d1e = self._diff0(e, sid)
                d2e = self._diff1(e, sid)
            ex = j11[..., None] * d1e + j21[..., None] * d2e
            ey = j12[..., None] * d1e + j22[..., None] * d2e
            g1 = mu[..., None] * ex
            g2 = mu[..., None] * ey
            rhs += (j11[..., None] * self._diff0(g1, sid)
                    + j21[..., None] * self._diff1(g1, sid)
                    + j12[..., None] * self._diff0(g2, sid)
                    + j22[..., None] * self._diff1(g2, sid))
        return rhs

    def _flux_derivs_adiabatic(self, sid, e):
        """Flux parameter-derivatives with the temperature-based energy path.

        rho, rho*u, rho*v are differentiated directly; theta is continued
        with a vanishing wall-normal derivative, and derivatives of p and E
        follow by the product rule, keeping the energy flux consistent with
        the adiabatic wall.
        """
        gamma = self.gamma
        rho, u, v, p = euler.primitive(e, gamma)
        euler.check_positivity(rho, p, "adiabatic derivative path")
        theta = p / rho
        m1 = e[..., 1]
        m2 = e[..., 2]
        E = e[..., 3]

        base = e[..., :3]
        d1b = self._diff0(base, sid)
        d2b = self._diff1(base, sid)
        d1theta, d2theta = self._theta_derivs(sid, theta)

        def assemble(drho, dm1, dm2, dtheta):
            dp = drho * theta + rho * dtheta
            ke = 0.5 * (m1 * m1 + m2 * m2) / rho
            dke = (m1 * dm1 + m2 * dm2) / rho - ke * drho / rho
            dE = (drho * theta + rho * dtheta) / (gamma - 1.0) + dke
            dfx = np.empty(e.shape)
            dfx[..., 0] = dm1
            dfx[..., 1] = 2 * u * dm1 - u * u * drho + dp
            dfx[..., 2] = v * dm1 + u * dm2 - u * v * drho
            dfx[..., 3] = (u * (dE + dp) + (E + p) * (dm1 - u * drho) / rho)
            dfy = np.empty(e.shape)
            dfy[..., 0] = dm2
            dfy[..., 1] = v * dm1 + u * dm2 - u * v * drho
            dfy[..., 2] = 2 * v * dm2 - v * v * drho + dp
            dfy[..., 3] = (v * (dE + dp) + (E + p) * (dm2 - v * drho) / rho)
            de = np.stack([drho, dm1, dm2, dE], axis=-1)
            return dfx, dfy, de

        d1fx, d1fy, d1e = assemble(d1b[..., 0], d1b[..., 1], d1b[..., 2], d1theta)
        d2fx, d2fy, d2e = assemble(d2b[..., 0], d2b[..., 1], d2b[..., 2], d2theta)
        return d1fx, d2fx, d1fy, d2fy, d1e, d2e

    def _theta_derivs(self, sid, theta):
        """Theta parameter-derivatives; adiabatic sides use the
        derivative-matching continuation with zero wall-normal slope."""
        h1, h2 = self.spacings[sid]
        sides = {side for side, bc, _ in self.bcs[sid]
                 if bc.kind == "noslip_adiabatic"}
        d1 = self._theta_diff_axis(theta, 0, h1, "left" in sides,
                                   "right" in sides)
        d2 = self._theta_diff_axis(theta, 1, h2, "bottom" in sides,
                                   "top" in sides)
        return d1, d2

    def _theta_diff_axis(self, theta, axis, h, neumann_start, neumann_stop):
        a = np.moveaxis(theta, axis, -1)
        n = a.shape[-1]
        if not (neumann_start or neumann_stop):
            out = fc.fc_differentiate(a, h, self.op)
        else:
            work = a.copy()
            if neumann_start:
                work = work[..., ::-1]
            lines = work.copy()
            lines[..., -1] = 0.0          # prescribed wall-normal slope
            ext = fc.fc_extend_neumann(lines, h, self.op)
            out = fc.differentiate_extension(ext, h, n)
            if neumann_start:
                out = -out[..., ::-1]
        return np.moveaxis(out, -1, axis)

    # -- boundary conditions -----------------------------------------------------

    def apply_bc(self, fields):
        order = {"zero_normal_derivative": 0, "supersonic_outflow": 1,
                 "pressure_outflow": 2, "slip_wall": 3,
                 "noslip_adiabatic": 4, "inflow": 5}
        for sid, entries in enumerate(self.bcs):
            e = fields[sid]
            for side, bc, normal in sorted(entries, key=lambda t: order[t[1].kind]):
                self._apply_one_bc(sid, e, side, bc, normal)
        return fields

    def _edge_index(self, side):
        axis, end = _SIDE_AXIS[side]
        idx = [slice(None), slice(None)]
        idx[axis] = 0 if end == "start" else -1
        return axis, end, tuple(idx)

    def _apply_one_bc(self, sid, e, side, bc, normal):
        gamma = self.gamma
        axis, end, edge = self._edge_index(side)
        if bc.kind == "supersonic_outflow":
            return
        if bc.kind == "inflow":
            rho, u, v, p = bc.state
            e[edge] = euler.conserved(rho, u, v, p, gamma)
            return
        if bc.kind == "pressure_outflow":
            rho = e[edge + (0,)]
            m1 = e[edge + (1,)]
            m2 = e[edge + (2,)]
            e[edge + (3,)] = (bc.pressure / (gamma - 1.0)
                              + 0.5 * (m1 * m1 + m2 * m2) / rho)
            return
        if bc.kind == "slip_wall":
            m1 = e[edge + (1,)]
            m2 = e[edge + (2,)]
            mn = m1 * normal[:, 0] + m2 * normal[:, 1]
            rho = e[edge + (0,)]
            p = (gamma - 1.0) * (e[edge + (3,)]
                                 - 0.5 * (m1 * m1 + m2 * m2) / rho)
            e[edge + (1,)] = m1 - mn * normal[:, 0]
            e[edge + (2,)] = m2 - mn * normal[:, 1]
            m1 = e[edge + (1,)]
            m2 = e[edge + (2,)]
            e[edge + (3,)] = (p / (gamma - 1.0)
                              + 0.5 * (m1 * m1 + m2 * m2) / rho)
            return
        if bc.kind == "noslip_adiabatic":
            self._apply_adiabatic(sid, e, side)
            return
        if bc.kind == "zero_normal_derivative":
            self._apply_zero_normal(sid, e, side)
            return

    def _wall_normal_lines(self, e, side):
        """All variables as lines ending at the wall (wall = last entry)."""
        axis, end, _ = self._edge_index(side)
        a = np.moveaxis(e, axis, -2)       # (..., line, 4)
        a = np.moveaxis(a, -1, 0)          # (4, ..., line)
        if end == "start":
            a = a[..., ::-1]
        return a, axis, end

    def _restore_wall_normal_lines(self, a, e, axis, end):
        if end == "start":
            a = a[..., ::-1]
        a = np.moveaxis(a, 0, -1)
        np.copyto(e, np.moveaxis(a, -2, axis))

    def _apply_adiabatic(self, sid, e, side):
        pi, sp = self.subs[sid]
        if not sp.external.get(side, False):
            raise ValueError(
                f"adiabatic condition on non-boundary side {side!r} of "
                f"patch {pi} subpatch ({sp.r},{sp.s})")
        gamma = self.gamma
        h = self.spacings[sid][_SIDE_AXIS[side][0]]
        axis, end, edge = self._edge_index(side)
        rho, u, v, p = euler.primitive(e, gamma)
        euler.check_positivity(rho, p, "adiabatic wall update")
        theta = p / rho
        lines = np.moveaxis(theta, axis, -1)
        if end == "start":
            lines = lines[..., ::-1]
        work = lines.copy()
        work[..., -1] = 0.0               # zero wall-normal theta gradient
        ext = fc.fc_extend_neumann(work, h, self.op)
        theta_wall = ext[..., lines.shape[-1] - 1]
        # no-slip: zero momenta; energy consistent with the reconstructed wall
        # temperature and zero velocity
        e[edge + (1,)] = 0.0
        e[edge + (2,)] = 0.0
        e[edge + (3,)] = e[edge + (0,)] * theta_wall / (gamma - 1.0)

    def _apply_zero_normal(self, sid, e, side):
        h = self.spacings[sid][_SIDE_AXIS[side][0]]
        a, axis, end = self._wall_normal_lines(e, side)
        work = a.copy()
        work[..., -1] = 0.0
        ext = fc.fc_extend_neumann(work, h, self.op)
        a[..., -1] = ext[..., a.shape[-1] - 1]
        self._restore_wall_normal_lines(a, e, axis, end)

    # -- filtering ------------------------------------------------------------

    def filter_state(self, fields):
        """Spectral filter of rho, momenta and theta; E rebuilt from them."""
        alpha, pf = self.config.filter_alpha, self.config.filter_p
        gamma = self.gamma
        for sid, e in enumerate(fields):
            h1, h2 = self.spacings[sid]
            rho, u, v, p = euler.primitive(e, gamma)
            theta = p / rho
            work = np.stack([e[..., 0], e[..., 1], e[..., 2], theta], axis=-1)
            moved = np.moveaxis(work, 0, -1)
            moved = fc.fc_filter(moved, self.op, alpha, pf)
            work = np.moveaxis(moved, -1, 0)
            moved = np.moveaxis(work, 1, -1)
            moved = fc.fc_filter(moved, self.op, alpha, pf)
            work = np.moveaxis(moved, -1, 1)
            rho_f = work[..., 0]
            m1_f = work[..., 1]
            m2_f = work[..., 2]
            th_f = work[..., 3]
            e[..., 0] = rho_f
            e[..., 1] = m1_f
            e[..., 2] = m2_f
            e[..., 3] = (rho_f * th_f / (gamma - 1.0)
                         + 0.5 * (m1_f ** 2 + m2_f ** 2) / rho_f)
        return fields

    def smear_initial_discontinuities(self, fields, threshold=0.05):
        """Localized strong filtering of discontinuous initial data."""
        cfg = self.config
        gamma = self.gamma
        for sid, e in enumerate(fields):
            h1, h2 = self.spacings[sid]
            rho, u, v, p = euler.primitive(e, gamma)
            work = np.stack([e[..., 0], e[..., 1], e[..., 2], p / rho], axis=-1)
            for axis, h in ((0, h1), (1, h2)):
                work = self._smear_axis(work, axis, h, threshold)
            e[..., 0] = work[..., 0]
            e[..., 1] = work[..., 1]
            e[..., 2] = work[..., 2]
            e[..., 3] = (work[..., 0] * work[..., 3] / (gamma - 1.0)
                         + 0.5 * (work[..., 1] ** 2 + work[..., 2] ** 2)
                         / work[..., 0])
        return fields

    def _smear_axis(self, work, axis, h, threshold):
        cfg = self.config
        out = work.copy()
        n = work.shape[axis]
        grid = np.arange(n) * h
        inner = 0.5 * cfg.smear_c * h
        outer = inner + cfg.smear_r * h
        for comp in range(4):
            f = np.moveaxis(work[..., comp], axis, -1)
            span = f.max() - f.min()
            if span <= 1e-13 * max(1.0, np.abs(f).max()):
                continue
            jumps = np.abs(np.diff(f, axis=-1)) > threshold * span
            if not jumps.any():
                continue
            filt = fc.fc_filter(f, self.op, cfg.smear_alpha, cfg.smear_p)
            res = f.copy()
            lines = np.nonzero(jumps.any(axis=-1))
            for idx in zip(*lines):
                cols = np.nonzero(jumps[idx])[0]
                z = 0.5 * (grid[cols] + grid[cols + 1])
                w = self._merged_windows(grid, z, inner, outer)
                res[idx] = w * filt[idx] + (1.0 - w) * f[idx]
            out_comp = np.moveaxis(res, -1, axis)
            out[..., comp] = out_comp
        return out

    def _merged_windows(self, grid, centers, inner, outer):
        """Union of cos^2 windows; overlapping supports merge into one."""
        centers = np.sort(centers)
        groups = []
        start = centers[0]
        prev = centers[0]
        for z in centers[1:]:
            if z - prev <= 2 * outer:
                prev = z
            else:
                groups.append((start, prev))
                start = prev = z
        groups.append((start, prev))
        w = np.zeros_like(grid)
        r_len = outer - inner
        for lo, hi in groups:
            plateau = (grid >= lo - inner) & (grid <= hi + inner)
            w[plateau] = 1.0
            left = (grid < lo - inner) & (grid > lo - outer)
            w[left] = np.maximum(
                w[left], np.cos(np.pi * ((lo - inner) - grid[left])
                                / (2.0 * r_len)) ** 2)
            right = (grid > hi + inner) & (grid < hi + outer)
            w[right] = np.maximum(
                w[right], np.cos(np.pi * (grid[right] - (hi + inner))
                                 / (2.0 * r_len)) ** 2)
        return w

    # -- time stepping ----------------------------------------------------------

    def compute_dt(self, fields, mu_fields):
        worst = np.inf
        for sid, e in enumerate(fields):
            rho, u, v, p = euler.primitive(e, self.gamma)
            euler.check_positivity(rho, p, "time-step evaluation")
            S = vis.mwsb(rho, u, v, p, self.gamma)
            ht = self.h_tilde[sid]
            denom = S.max() / ht
            if mu_fields is not None:
                denom = denom + mu_fields[sid].max() / ht ** 2
            worst = min(worst, self.config.cfl / denom)
        dt = worst / np.pi
        if not np.isfinite(dt) or dt <= 0:
            raise RuntimeError(f"invalid time step {dt}")
        return dt

    def post_stage(self, fields):
        self.apply_bc(fields)
        apply_exchange(self.plan, fields)
        return fields

    def advance(self, fields):
        """One full time step (Algorithm order: viscosity, filter, dt, stages)."""
        mu_fields = self.compute_viscosity(fields)
        self.filter_state(fields)
        dt = self.compute_dt(fields, mu_fields)
        remaining = self.config.final_time - self.t
        dt = min(dt, remaining)

        new = ssprk4_step(fields, dt,
                          rhs_fn=lambda u: self.rhs(u, mu_fields),
                          post_stage=self.post_stage)
        self.check_state(new, "end of step")
        self.t += dt
        self.steps += 1
        self.dt_history.append(dt)
        return new, mu_fields

    def run(self, fields, callback=None):
        self.apply_bc(fields)
        apply_exchange(self.plan, fields)
        while (self.t < self.config.final_time - 1e-14
               and self.steps < self.config.max_steps):
            fields, mu_fields = self.advance(fields)
            if callback is not None:
                callback(self, fields, mu_fields)
        return fields
