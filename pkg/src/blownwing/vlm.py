"""Vortex lattice method over the flat-plate panel mesh.

Solver layout:
  * Vortex rings sit on the lifting surfaces (shifted a quarter panel-chord
    aft of the geometric panels).  ``assemble_aic`` covers the closed rings
    only; the steady wake -- semi-infinite filaments leaving the
    trailing-edge ring corners along the freestream direction, which also
    cancel those rings' aft legs -- is a separate, angle-of-attack dependent
    contribution so the ring AIC stays purely geometric.
  * The no-penetration right-hand side carries the full onset flow
    (freestream plus propeller wash), which is where blown-wing effects
    enter the linear solve.
  * Forces use Kutta-Joukowski on each bound segment with the full local
    velocity (onset flow plus all ring- and wake-induced velocities at the
    bound-segment midpoints); drag is therefore induced drag only.
  * Coefficients are normalized by q_ref = 0.5*rho*max(v, V_FLOOR)^2 so the
    v = 0 corner of the sampled envelope stays finite.

Every entry point accepts either plain arrays or autodiff nodes for the
flight-state quantities and induced velocities; the whole solve is
differentiable through the linear-solve adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import LinearSolveError  # re-exported for callers

DEG = math.pi / 180.0
FOURPI = 4.0 * math.pi

# reference-speed floor for the dynamic pressure (m/s); keeps coefficients
# finite at the v = 0 boundary of the sampled envelope
V_FLOOR = 1.0


@dataclass
class OnsetFlow:
    """Local velocity (freestream + propeller increment) at the control
    points and at the bound-segment midpoints.  Entries may be arrays or
    autodiff nodes; with all props off both fields equal the freestream."""

    cp: object
    bm: object


@dataclass
class CirculationSolution:
    gamma: object
    residual_norm: float


@dataclass
class AeroCoefficients:
    """Lift, drag, rolling- and pitching-moment coefficients.

    Sign conventions: lift positive up, drag positive downstream, rolling
    moment positive starboard-down, pitching moment positive nose-up.
    """

    CL: object
    CD: object
    Cl: object
    Cm: object

    def as_array(self):
        return np.stack(
            [ad.value_of(self.CL), ad.value_of(self.CD),
             ad.value_of(self.Cl), ad.value_of(self.Cm)],
            axis=-1,
        )


# ---------------------------------------------------------------------------
# Biot-Savart kernels (constant geometry: plain numpy)
# ---------------------------------------------------------------------------

def segment_velocity(a, b, pts, core):
    """Unit-circulation velocity of finite filaments A->B at ``pts``.

    ``a``/``b``: (..., 3) segment endpoints; ``pts``: (P, 3).  Broadcast
    to (P, ..., 3).  The denominator is regularized with (core * L)^2 so
    points on or near a filament stay finite (and a point exactly on the
    filament axis sees zero velocity).
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pts = np.asarray(pts, float)
    r1 = pts.reshape(pts.shape[0], *([1] * (a.ndim - 1)), 3) - a
    r2 = pts.reshape(pts.shape[0], *([1] * (a.ndim - 1)), 3) - b
    seg_len2 = np.sum((b - a) ** 2, axis=-1)
    n1 = np.linalg.norm(r1, axis=-1)
    n2 = np.linalg.norm(r2, axis=-1)
    cr = np.cross(r1, r2)
    denom = n1 * n2 * (n1 * n2 + np.sum(r1 * r2, axis=-1))
    denom = denom + core * core * seg_len2
    return cr * ((n1 + n2) / (FOURPI * denom))[..., None]


def ring_induced_velocity(ring_corners, circulation, eval_point, core=None):
    """Velocity induced by one closed vortex ring at one point.

    Four finite-segment Biot-Savart contributions, linear in the
    circulation.  ``core`` defaults to 1e-6 of the mean segment length.
    """
    rc = np.asarray(ring_corners, float).reshape(4, 3)
    if core is None:
        seg = np.linalg.norm(np.roll(rc, -1, axis=0) - rc, axis=1).mean()
        core = 1e-6 * seg if seg > 0 else 1e-6
    pts = np.asarray(eval_point, float).reshape(1, 3)
    v = segment_velocity(rc, np.roll(rc, -1, axis=0), pts, core)
    return float(circulation) * v.sum(axis=1)[0]


def ring_velocity_tensor(ring_corners, pts, core):
    """(P, N, 3) unit-circulation ring velocities at ``pts``."""
    rc = np.asarray(ring_corners, float)
    a = rc
    b = np.roll(rc, -1, axis=1)
    v = segment_velocity(a, b, pts, core)  # (P, N, 4, 3)
    return v.sum(axis=2)


# ---------------------------------------------------------------------------
# wake (semi-infinite legs along the freestream direction) -- dual mode
# ---------------------------------------------------------------------------

def _semi_infinite(u, r, rnorm, core2):
    """(u x r) / (4 pi |r| (|r| - u.r) + reg) for unit circulation flowing
    from the attach point to infinity along ``u``.

    ``r``/``rnorm`` are constant geometry; ``u`` may be a node of shape
    (..., 3) broadcast against r's leading axes.
    """
    cr = ad.cross(u, r)
    udr = ad.asum(ad.multiply(u, r), axis=-1)
    denom = ad.add(ad.multiply(rnorm, ad.subtract(rnorm, udr)), core2)
    scale = ad.divide(1.0 / FOURPI, denom)
    return ad.multiply(cr, _expand_last(scale))


def _expand_last(x):
    shp = tuple(ad.value_of(x).shape) + (1,)
    return ad.reshape(x, shp)


# ---------------------------------------------------------------------------
# cached geometric operator
# ---------------------------------------------------------------------------

class VlmOperator:
    """Constant influence tensors for one mesh, reused across solves.

    Influence evaluation points are the control points (rows 0:P) stacked
    with the bound-segment midpoints (rows P:2P).
    """

    def __init__(self, mesh, config):
        self.mesh = mesh
        self.config = config
        self.core = 1e-6 * config.ref_chord
        self.rho = config.air_density

        P = mesh.n_panels
        self.n_panels = P
        pts = np.vstack([mesh.control_points, mesh.bound_mid])
        self.points = pts

        rings_all = ring_velocity_tensor(mesh.ring_corners, pts, self.core)
        self.ring_cp = rings_all[:P]                     # (P, N, 3)
        w_bm = rings_all[P:]                             # (P, N, 3)
        # flattened for a single matmul: v_bm = gamma @ ring_bm_flat
        self.ring_bm_flat = np.ascontiguousarray(
            w_bm.transpose(1, 0, 2).reshape(P, P * 3)
        )

        left, right = mesh.wake_leg_points()             # (T, 3) each: D, C
        self.wake_c = right
        self.wake_d = left
        self.r_c = pts[:, None, :] - right[None, :, :]   # (2P, T, 3)
        self.r_d = pts[:, None, :] - left[None, :, :]
        self.r_c_norm = np.linalg.norm(self.r_c, axis=-1)
        self.r_d_norm = np.linalg.norm(self.r_d, axis=-1)
        # the wake ring cancels the trailing-edge rings' aft legs (C -> D)
        self.aft_seg = segment_velocity(right, left, pts, self.core)
        self.core2 = self.core**2

        self.te_matrix = mesh.te_column_matrix           # (T, N)
        self.net_matrix_t = mesh.net_circulation_matrix.T
        self.elevator_mask = (mesh.tags == "elevator").astype(float)
        self.base_normals = mesh.normals
        self.bound_vec = mesh.bound_vec
        self.arms = mesh.bound_mid - mesh.reference_point

    # -- dual-mode pieces ---------------------------------------------------

    def deflected_normals(self, theta_elev_deg, batch):
        """(S, P, 3) normals with elevator rows rotated by the per-sample
        deflection (positive = trailing edge down)."""
        th = ad.multiply(theta_elev_deg, DEG * self.elevator_mask.reshape(1, -1))
        c = ad.cos(th)
        s = ad.sin(th)
        nx, ny, nz = (self.base_normals[:, i] for i in range(3))
        rx = ad.subtract(ad.multiply(c, nx), ad.multiply(s, nz))
        rz = ad.add(ad.multiply(s, nx), ad.multiply(c, nz))
        ry = ad.add(ad.multiply(c, 0.0), ny)
        return ad.stack([rx, ry, rz], axis=-1)

    def wake_tensor(self, u):
        """(S, 2P, T, 3) unit-circulation wake velocities at all points for
        per-sample freestream directions ``u`` of shape (S, 3)."""
        s = ad.value_of(u).shape[0]
        u4 = ad.reshape(u, (s, 1, 1, 3))
        g_c = _semi_infinite(u4, self.r_c, self.r_c_norm, self.core2)
        g_d = _semi_infinite(u4, self.r_d, self.r_d_norm, self.core2)
        return ad.subtract(ad.subtract(g_c, g_d), self.aft_seg)


def _reshape_col(x, s):
    return ad.reshape(x, (s, 1))


def coefficients_batch(op: VlmOperator, v, alpha_deg, theta_elev_deg,
                       induced_all):
    """Full VLM solve for a batch of flight states.

    ``v``/``alpha_deg``/``theta_elev_deg``: shape (S,); ``induced_all``:
    (S, 2P, 3) propeller-induced velocity increments at the control points
    stacked with the bound-segment midpoints.  Any argument may be an
    autodiff node.  Returns an ``AeroCoefficients`` of (S,) entries.
    """
    P = op.n_panels
    s = ad.value_of(v).shape[0]

    alpha = ad.multiply(alpha_deg, DEG)
    ca = ad.cos(alpha)
    sa = ad.sin(alpha)
    # air moves aft and (for alpha > 0) upward in body axes
    u = ad.stack([ad.negative(ca), ad.multiply(ca, 0.0), sa], axis=-1)
    vinf = ad.stack(
        [ad.negative(ad.multiply(v, ca)), ad.multiply(v, 0.0),
         ad.multiply(v, sa)],
        axis=-1,
    )

    normals = op.deflected_normals(theta_elev_deg, s)     # (S, P, 3)

    # ring AIC rows: n . V_ring
    n4 = ad.reshape(normals, (s, P, 1, 3))
    a_rings = ad.asum(ad.multiply(n4, op.ring_cp), axis=-1)

    wake_all = op.wake_tensor(u)                          # (S, 2P, T, 3)
    wake_cp = wake_all[:, :P]
    wake_bm = wake_all[:, P:]
    a_wake_cols = ad.asum(ad.multiply(n4, wake_cp), axis=-1)   # (S, P, T)
    a_mat = ad.add(a_rings, ad.matmul(a_wake_cols, op.te_matrix))

    vinf_row = ad.reshape(vinf, (s, 1, 3))
    onset_cp = ad.add(vinf_row, induced_all[:, :P])
    onset_bm = ad.add(vinf_row, induced_all[:, P:])

    rhs = ad.negative(ad.asum(ad.multiply(onset_cp, normals), axis=-1))
    gamma = ad.linear_solve(a_mat, rhs)                   # (S, P)

    v_ring_bm = ad.reshape(ad.matmul(gamma, op.ring_bm_flat), (s, P, 3))
    gamma_te = ad.matmul(gamma, op.te_matrix.T)           # (S, T)
    gte = ad.reshape(gamma_te, (s, 1, gamma_te.shape[-1], 1))
    v_wake_bm = ad.asum(ad.multiply(wake_bm, gte), axis=2)

    v_local = ad.add(ad.add(onset_bm, v_ring_bm), v_wake_bm)
    gamma_net = ad.matmul(gamma, op.net_matrix_t)         # (S, P)
    df = ad.multiply(
        ad.reshape(ad.multiply(gamma_net, op.rho), (s, P, 1)),
        ad.cross(v_local, op.bound_vec),
    )
    force = ad.asum(df, axis=1)                           # (S, 3)
    moment = ad.asum(ad.cross(op.arms, df), axis=1)

    fx = force[:, 0]
    fz = force[:, 2]
    lift = ad.add(ad.multiply(fx, sa), ad.multiply(fz, ca))
    drag = ad.add(ad.negative(ad.multiply(fx, ca)), ad.multiply(fz, sa))

    cfg = op.config
    q = ad.multiply(0.5 * op.rho, ad.power(ad.maximum(v, V_FLOOR), 2.0))
    qs = ad.multiply(q, cfg.ref_area)
    cl = ad.divide(lift, qs)
    cd = ad.divide(drag, qs)
    c_roll = ad.divide(moment[:, 0], ad.multiply(qs, cfg.ref_span))
    c_pitch = ad.divide(ad.negative(moment[:, 1]),
                        ad.multiply(qs, cfg.ref_chord))
    return AeroCoefficients(CL=cl, CD=cd, Cl=c_roll, Cm=c_pitch)


# ---------------------------------------------------------------------------
# single-state operations (the spec-shaped API; thin layers over the above)
# ---------------------------------------------------------------------------

def assemble_aic(mesh, core=None):
    """Ring-only aerodynamic influence matrix A[i, j] = v_j(cp_i) . n_i.

    Depends only on geometry (the mesh normals, post-deflection); the
    alpha-dependent wake contribution is added separately inside the solve.
    """
    if core is None:
        core = 1e-6 * float(np.mean(np.linalg.norm(
            mesh.ring_corners[:, 1] - mesh.ring_corners[:, 0], axis=1)))
    tensor = ring_velocity_tensor(mesh.ring_corners, mesh.control_points, core)
    return np.einsum("ijc,ic->ij", tensor, mesh.normals)


def assemble_rhs(mesh, onset: OnsetFlow):
    """b[i] = -(onset velocity at control point i) . n_i."""
    return ad.negative(ad.asum(ad.multiply(onset.cp, mesh.normals), axis=-1))


def solve_circulations(a_mat, rhs):
    """Direct factorization solve with a relative-residual guarantee."""
    gamma = ad.linear_solve(a_mat, rhs)
    gval = ad.value_of(gamma)
    aval = ad.value_of(a_mat)
    bval = ad.value_of(rhs)
    resid = np.einsum("...ij,...j->...i", aval, gval) - bval
    bnorm = np.linalg.norm(bval)
    rel = float(np.linalg.norm(resid) / max(bnorm, 1e-300)) if bnorm else 0.0
    return CirculationSolution(gamma=gamma, residual_norm=rel)


def compute_forces(mesh, solution: CirculationSolution, onset: OnsetFlow,
                   rho, wake_dir=None, core=None):
    """Kutta-Joukowski force/moment about the mesh reference point.

    dF = rho * (local velocity incl. prop wash and all ring/wake induced
    velocities) x (net bound circulation * segment vector).  ``wake_dir``
    is the freestream unit direction used for the trailing wake legs; when
    omitted only the closed rings contribute induced velocity.
    """
    if core is None:
        core = 1e-6 * float(np.mean(np.linalg.norm(
            mesh.ring_corners[:, 1] - mesh.ring_corners[:, 0], axis=1)))
    gamma = solution.gamma
    tensor_bm = ring_velocity_tensor(mesh.ring_corners, mesh.bound_mid, core)
    p = mesh.n_panels
    flat = tensor_bm.transpose(0, 2, 1).reshape(p * 3, p)
    v_ind = ad.reshape(ad.matvec(flat, gamma), (p, 3))
    if wake_dir is not None:
        left, right = mesh.wake_leg_points()
        r_c = mesh.bound_mid[:, None, :] - right[None, :, :]
        r_d = mesh.bound_mid[:, None, :] - left[None, :, :]
        g_c = _semi_infinite(wake_dir, r_c, np.linalg.norm(r_c, axis=-1),
                             core**2)
        g_d = _semi_infinite(wake_dir, r_d, np.linalg.norm(r_d, axis=-1),
                             core**2)
        aft = segment_velocity(right, left, mesh.bound_mid, core)
        wake = ad.subtract(ad.subtract(g_c, g_d), aft)
        gamma_te = ad.matvec(mesh.te_column_matrix, gamma)
        gte = ad.reshape(gamma_te, (1, len(mesh.te_indices), 1))
        v_ind = ad.add(v_ind, ad.asum(ad.multiply(wake, gte), axis=1))
    v_local = ad.add(onset.bm, v_ind)
    gamma_net = ad.matvec(mesh.net_circulation_matrix, gamma)
    df = ad.multiply(ad.reshape(ad.multiply(gamma_net, rho), (p, 1)),
                     ad.cross(v_local, mesh.bound_vec))
    force = ad.asum(df, axis=0)
    moment = ad.asum(ad.cross(mesh.bound_mid - mesh.reference_point, df),
                     axis=0)
    return force, moment


def coefficients(force, moment, flight, config):
    """Wind-frame normalization of body-frame force/moment.

    q_ref floors the speed at V_FLOOR so hover-corner states stay finite.
    """
    alpha = ad.multiply(flight.alpha, DEG)
    ca = ad.cos(alpha)
    sa = ad.sin(alpha)
    lift = ad.add(ad.multiply(force[0], sa), ad.multiply(force[2], ca))
    drag = ad.add(ad.negative(ad.multiply(force[0], ca)),
                  ad.multiply(force[2], sa))
    q = ad.multiply(0.5 * config.air_density,
                    ad.power(ad.maximum(flight.v, V_FLOOR), 2.0))
    qs = ad.multiply(q, config.ref_area)
    return AeroCoefficients(
        CL=ad.divide(lift, qs),
        CD=ad.divide(drag, qs),
        Cl=ad.divide(moment[0], ad.multiply(qs, config.ref_span)),
        Cm=ad.divide(ad.negative(moment[1]), ad.multiply(qs, config.ref_chord)),
    )


def vlm_solve(mesh, flight, induced_all, config, operator=None):
    """assemble -> solve -> forces -> coefficients for one flight state.

    ``flight`` needs attributes ``v``, ``alpha`` and ``theta_elev`` (each a
    float or node); ``induced_all`` is the (2P, 3) propeller-induced
    increment at [control points; bound midpoints].
    """
    op = operator if operator is not None else VlmOperator(mesh, config)
    val = ad.value_of

    def col(x):
        return ad.reshape(x, (1,)) if ad.is_node(x) else np.atleast_1d(val(x))

    ind = ad.reshape(induced_all, (1,) + tuple(ad.value_of(induced_all).shape))
    coeffs = coefficients_batch(op, col(flight.v), col(flight.alpha),
                                col(flight.theta_elev), ind)
    return AeroCoefficients(CL=coeffs.CL[0], CD=coeffs.CD[0],
                            Cl=coeffs.Cl[0], Cm=coeffs.Cm[0])
