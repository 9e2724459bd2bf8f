"""Solution communication between overlapping subpatches.

Receivers are the n_f-fringe points of every subpatch.  Donors are either the
same grid point in a sibling subpatch of the same patch (plain copy) or a
3x3 stencil in an overlapping subpatch of another patch (iterated-quadratic
interpolation).  The plan is built once per decomposition and applied at
every time-stage; donor points are never receivers, so gather/scatter order
cannot change the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Decomposition, cell_depth, fringe_mask, patch_contains

__all__ = ["CommPlan", "PlanError", "build_comm_plan", "neville_interpolate",
           "apply_exchange"]

_KIND_RANK = {"C": 0, "I": 1, "S": 2}     # lexicographic on the kind letter


class PlanError(RuntimeError):
    pass


def neville_interpolate(values, s, t):
    """Iterated 1D quadratic (Neville) interpolation on a 3x3 stencil.

    ``values`` has shape (..., 3, 3) on unit-spaced nodes 0,1,2 in each
    direction; (s, t) are the evaluation coordinates in node units, matching
    the first and second stencil axes respectively.
    """
    values = np.asarray(values, dtype=float)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)

    def nev1d(v, x):
        # v: (..., 3) on nodes 0, 1, 2
        p01 = (x - 0.0) * v[..., 1] - (x - 1.0) * v[..., 0]
        p12 = (x - 1.0) * v[..., 2] - (x - 2.0) * v[..., 1]
        return ((x - 0.0) * p12 - (x - 2.0) * p01) / 2.0

    cols = nev1d(np.moveaxis(values, -2, -1), s[..., None])   # interpolate in s
    return nev1d(cols, t)


def _lagrange_weights(u):
    """Quadratic interpolation weights on nodes 0,1,2, via the Neville path."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    basis = np.eye(3)
    cols = []
    for k in range(3):
        v = np.zeros(u.shape + (3, 3))
        v[..., :, 0] = basis[k]
        cols.append(neville_interpolate(v, u, np.zeros_like(u)))
    return np.stack(cols, axis=-1)


@dataclass
class IntraGroup:
    recv_sid: int
    donor_sid: int
    recv_flat: np.ndarray
    donor_flat: np.ndarray


@dataclass
class InterGroup:
    recv_sid: int
    donor_sid: int
    recv_flat: np.ndarray
    donor_flat: np.ndarray       # (m, 9)
    weights: np.ndarray          # (m, 9)


@dataclass
class CommPlan:
    n_f: int
    shapes: list
    intra: list = field(default_factory=list)
    inter: list = field(default_factory=list)

    def receiver_point_set(self):
        out = set()
        for g in self.intra:
            out |= {(g.recv_sid, int(i)) for i in g.recv_flat}
        for g in self.inter:
            out |= {(g.recv_sid, int(i)) for i in g.recv_flat}
        return out

    def donor_point_set(self):
        out = set()
        for g in self.intra:
            out |= {(g.donor_sid, int(i)) for i in g.donor_flat}
        for g in self.inter:
            out |= {(g.donor_sid, int(i)) for i in g.donor_flat.ravel()}
        return out

    def counts(self):
        n_intra = sum(g.recv_flat.size for g in self.intra)
        n_inter = sum(g.recv_flat.size for g in self.inter)
        return {"intra": n_intra, "inter": n_inter}

    def summary(self):
        c = self.counts()
        lines = [f"comm plan: {c['intra']} intra records, {c['inter']} inter records"]
        for g in self.intra:
            lines.append(f"  intra {g.recv_sid} <- {g.donor_sid}: {g.recv_flat.size}")
        for g in self.inter:
            lines.append(f"  inter {g.recv_sid} <- {g.donor_sid}: {g.recv_flat.size}")
        return "\n".join(lines)


def apply_exchange(plan: CommPlan, fields: list) -> None:
    """Overwrite every receiver entry from its donor, in place.

    ``fields`` is one array per subpatch, shaped (n1, n2) or (n1, n2, k).
    """
    staged = []
    for g in plan.intra:
        src = fields[g.donor_sid].reshape(-1, *fields[g.donor_sid].shape[2:])
        staged.append((g.recv_sid, g.recv_flat, src[g.donor_flat]))
    for g in plan.inter:
        src = fields[g.donor_sid].reshape(-1, *fields[g.donor_sid].shape[2:])
        vals = src[g.donor_flat]                      # (m, 9[, k])
        w = g.weights if vals.ndim == 2 else g.weights[..., None]
        staged.append((g.recv_sid, g.recv_flat, (vals * w).sum(axis=1)))
    for sid, idx, vals in staged:
        dst = fields[sid].reshape(-1, *fields[sid].shape[2:])
        dst[idx] = vals


# ---------------------------------------------------------------------------
# plan construction

def build_comm_plan(dec: Decomposition, n_f: int = 5,
                    strict: bool = True) -> CommPlan:
    """Select a donor for every n_f-fringe point of every subpatch.

    With ``strict`` (production), donors whose stencil touches their own
    fringe are rejected and uncoverable fringe points raise PlanError.  With
    ``strict=False`` the deepest available donor is taken regardless, which
    lets the decomposition validator report donor/receiver conflicts instead
    of failing outright.
    """
    subs = dec.subpatch_list()
    shapes = [(sp.n1, sp.n2) for _, sp in subs]
    fmasks = [fringe_mask(sp, n_f) for _, sp in subs]
    plan = CommPlan(n_f=n_f, shapes=shapes)

    by_patch = {}
    for sid, (pi, sp) in enumerate(subs):
        by_patch.setdefault(pi, []).append(sid)

    orphans = []
    for sid, (pi, sp) in enumerate(subs):
        fm = fmasks[sid]
        if not fm.any():
            continue
        patch = dec.patches[pi]
        ii, jj = np.nonzero(fm)
        gi = ii + sp.i_lo
        gj = jj + sp.j_lo
        xy = np.stack([patch.X[gi, gj], patch.Y[gi, gj]], axis=-1)
        recv_flat = ii * sp.n2 + jj

        assigned = _assign_intra(plan, dec, subs, by_patch, fmasks, sid,
                                 gi, gj, recv_flat, strict)
        need = np.nonzero(~assigned)[0]
        if need.size:
            bad = _assign_inter(plan, dec, subs, by_patch, fmasks, pi, sid,
                                xy[need], recv_flat[need], strict)
            for k in bad:
                orphans.append((pi, (sp.r, sp.s),
                                int(gi[need[k]]), int(gj[need[k]])))

    if orphans and strict:
        raise PlanError(
            f"{len(orphans)} fringe points have no donor; first few: "
            f"{orphans[:10]}")

    _sort_groups(plan)
    if strict:
        _check_donor_receiver(plan)
    return plan


def _assign_intra(plan, dec, subs, by_patch, fmasks, sid, gi, gj, recv_flat,
                  strict=True):
    pi, sp = subs[sid]
    m = gi.size
    donor = np.full(m, -1, dtype=int)
    depth = np.full(m, -1, dtype=int)
    dflat = np.zeros(m, dtype=int)
    for sid2 in by_patch[pi]:
        if sid2 == sid:
            continue
        sp2 = subs[sid2][1]
        inwin = ((gi >= sp2.i_lo) & (gi <= sp2.i_hi)
                 & (gj >= sp2.j_lo) & (gj <= sp2.j_hi))
        if not inwin.any():
            continue
        li = gi - sp2.i_lo
        lj = gj - sp2.j_lo
        ok = inwin.copy()
        if strict:
            iw = np.nonzero(inwin)[0]
            ok[iw] &= ~fmasks[sid2][li[iw], lj[iw]]
        d2 = np.minimum.reduce([gi - sp2.i_lo, sp2.i_hi - gi,
                                gj - sp2.j_lo, sp2.j_hi - gj])
        better = ok & (d2 > depth)
        donor[better] = sid2
        depth[better] = d2[better]
        dflat[better] = li[better] * sp2.n2 + lj[better]
    has = donor >= 0
    for sid2 in sorted(set(donor[has].tolist())):
        sel = donor == sid2
        plan.intra.append(IntraGroup(
            recv_sid=sid, donor_sid=int(sid2),
            recv_flat=recv_flat[sel], donor_flat=dflat[sel]))
    return has


def _assign_inter(plan, dec, subs, by_patch, fmasks, pi, sid, xy, recv_flat,
                  strict=True):
    """Returns indices of points that found no donor."""
    m = xy.shape[0]
    cands = []
    for pi2, patch2 in enumerate(dec.patches):
        if pi2 == pi:
            continue
        inside, q = patch_contains(patch2, xy, tol=1e-9)
        if not inside.any():
            continue
        depth = np.where(inside, cell_depth(q, patch2.grid), -np.inf)
        cands.append((pi2, q, depth, (_KIND_RANK[patch2.kind], patch2.index)))
    if not cands:
        return list(range(m))

    # candidate order per point: deepest donor patch first, ties by kind/index
    order = np.empty((m, len(cands)), dtype=int)
    keys = [c[3] for c in cands]
    depths = np.stack([c[2] for c in cands], axis=1)
    for row in range(m):
        order[row] = sorted(range(len(cands)),
                            key=lambda c: (-depths[row, c], keys[c]))

    placed = np.zeros(m, dtype=bool)
    out_sid = np.full(m, -1, dtype=int)
    out_flat = np.zeros((m, 9), dtype=int)
    out_w = np.zeros((m, 9))
    for attempt in range(len(cands)):
        rows = np.nonzero(~placed)[0]
        if rows.size == 0:
            break
        pick = order[rows, attempt]
        for c in np.unique(pick):
            sel = rows[pick == c]
            pi2, q, depth, _ = cands[c]
            sel = sel[np.isfinite(depth[sel])]
            if sel.size == 0:
                continue
            ok, d_sid, d_flat, d_w = _inter_batch(
                dec, subs, by_patch, fmasks, pi2, q[sel], strict)
            good = sel[ok]
            out_sid[good] = d_sid[ok]
            out_flat[good] = d_flat[ok]
            out_w[good] = d_w[ok]
            placed[good] = True

    for sid2 in sorted(set(out_sid[placed].tolist())):
        selm = placed & (out_sid == sid2)
        plan.inter.append(InterGroup(
            recv_sid=sid, donor_sid=int(sid2),
            recv_flat=recv_flat[selm], donor_flat=out_flat[selm],
            weights=out_w[selm]))
    return np.nonzero(~placed)[0].tolist()


def _inter_batch(dec, subs, by_patch, fmasks, pi2, q, strict=True):
    """Vectorized donor-subpatch selection + stencils within one donor patch."""
    patch2 = dec.patches[pi2]
    grid = patch2.grid
    k = q.shape[0]
    tol = 1e-9
    best_sid = np.full(k, -1, dtype=int)
    best_depth = np.full(k, -np.inf)
    # ascending (r, s) with strict improvement keeps the lowest ordinal on ties
    for sid2 in by_patch[pi2]:
        sp2 = subs[sid2][1]
        a, b, c, d = sp2.param_rect(grid)
        inrect = ((q[:, 0] >= a - tol) & (q[:, 0] <= b + tol)
                  & (q[:, 1] >= c - tol) & (q[:, 1] <= d + tol))
        depth = np.minimum.reduce([
            (q[:, 0] - a) / grid.h1, (b - q[:, 0]) / grid.h1,
            (q[:, 1] - c) / grid.h2, (d - q[:, 1]) / grid.h2])
        better = inrect & (depth > best_depth + 1e-12)
        best_sid[better] = sid2
        best_depth[better] = depth[better]

    ok = best_sid >= 0
    d_flat = np.zeros((k, 9), dtype=int)
    d_w = np.zeros((k, 9))
    offs_i, offs_j = np.meshgrid([-1, 0, 1], [-1, 0, 1], indexing="ij")
    offs_i = offs_i.ravel()
    offs_j = offs_j.ravel()
    for sid2 in np.unique(best_sid[ok]):
        sp2 = subs[sid2][1]
        sel = np.nonzero(best_sid == sid2)[0]
        qi = q[sel, 0] / grid.h1
        qj = q[sel, 1] / grid.h2
        ci = np.clip(np.floor(qi + 0.5).astype(int), sp2.i_lo + 1, sp2.i_hi - 1)
        cj = np.clip(np.floor(qj + 0.5).astype(int), sp2.j_lo + 1, sp2.j_hi - 1)
        li = ci - sp2.i_lo
        lj = cj - sp2.j_lo
        sten_i = li[:, None] + offs_i[None, :]
        sten_j = lj[:, None] + offs_j[None, :]
        clean = ~fmasks[sid2][sten_i, sten_j].any(axis=1)
        if not strict:
            clean = np.ones_like(clean)
        ok[sel[~clean]] = False
        good = sel[clean]
        if good.size == 0:
            continue
        s = qi[clean] - (li[clean] - 1) - sp2.i_lo
        t = qj[clean] - (lj[clean] - 1) - sp2.j_lo
        w = (_lagrange_weights(s)[:, :, None]
             * _lagrange_weights(t)[:, None, :]).reshape(-1, 9)
        d_w[good] = w
        d_flat[good] = sten_i[clean] * sp2.n2 + sten_j[clean]
    return ok, best_sid, d_flat, d_w


def _sort_groups(plan: CommPlan):
    plan.intra.sort(key=lambda g: (g.recv_sid, g.donor_sid))
    plan.inter.sort(key=lambda g: (g.recv_sid, g.donor_sid))


def _check_donor_receiver(plan: CommPlan):
    donors = plan.donor_point_set()
    receivers = plan.receiver_point_set()
    clash = donors & receivers
    if clash:
        raise PlanError(
            f"{len(clash)} donor points are also receivers; first few: "
            f"{sorted(clash)[:10]}")
