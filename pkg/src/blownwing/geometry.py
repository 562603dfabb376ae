"""Aircraft geometry: configuration, flat-plate panel mesh, control kinematics.

Body frame (right-handed): +x forward along the fuselage, +y to port,
+z up.  The wing quarter-chord at the symmetry plane is the origin and the
default moment reference point.  All lengths are meters, all angles in the
public API are degrees.

The airframe is a flat-plate wing plus a flat-plate horizontal tail whose
aft chord fraction acts as an elevator; six propeller discs (a hover quad
plus two tiltable wing-tip props) are carried in the configuration.  The
tiltable props point along +x at zero tilt (cruise) and along +z at 90
degrees (hover).
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

DEG = math.pi / 180.0


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# propeller discs
# ---------------------------------------------------------------------------

def _linear_twist(root_deg, tip_deg):
    def twist(r_frac):
        return (root_deg + (tip_deg - root_deg) * r_frac) * DEG

    return twist


def _constant_chord(chord_over_radius, radius):
    def chord(r_frac):
        return chord_over_radius * radius * np.ones_like(np.asarray(r_frac, float))

    return chord


@dataclass(frozen=True)
class PropellerDisc:
    """One propeller: placement, blade geometry, spin and tilt capability.

    ``axis`` is the thrust direction at zero tilt.  ``chord_distribution``
    and ``twist_distribution`` map radial fraction r/R to chord [m] and
    blade pitch angle [rad].  ``spin_direction`` is +1/-1 about the thrust
    axis (right-hand rule).
    """

    name: str
    hub_position: tuple
    axis: tuple
    radius: float
    blade_count: int
    spin_direction: int
    tiltable: bool
    group: str  # starboard | port | hover
    chord_distribution: object = None
    twist_distribution: object = None
    root_cutout: float = 0.2

    def __post_init__(self):
        ax = np.asarray(self.axis, float)
        if abs(np.linalg.norm(ax) - 1.0) > 1e-12:
            raise GeometryError(f"prop {self.name}: axis must be a unit vector")
        if self.radius <= 0:
            raise GeometryError(f"prop {self.name}: radius must be positive")
        if self.blade_count < 2:
            raise GeometryError(f"prop {self.name}: need at least 2 blades")
        if self.group not in ("starboard", "port", "hover"):
            raise GeometryError(f"prop {self.name}: unknown group {self.group!r}")
        if self.chord_distribution is None:
            object.__setattr__(
                self, "chord_distribution", _constant_chord(0.12, self.radius)
            )
        if self.twist_distribution is None:
            object.__setattr__(self, "twist_distribution", _linear_twist(30.0, 12.0))

    @property
    def hub(self):
        return np.asarray(self.hub_position, float)

    @property
    def axis_vec(self):
        return np.asarray(self.axis, float)

    @property
    def disc_area(self):
        return math.pi * self.radius**2


def tilt_propeller(disc: PropellerDisc, theta_tilt_deg: float) -> PropellerDisc:
    """Rotate a tiltable disc's axis about the body y-axis.

    0 deg keeps the axis along +x (cruise); 90 deg points it along +z
    (hover).  The hub position does not move.
    """
    if not disc.tiltable:
        raise GeometryError(f"prop {disc.name} is not tiltable")
    th = float(theta_tilt_deg) * DEG
    # tilting from +x toward +z: axis(theta) = (cos, 0, sin) for a base +x axis
    c, s = math.cos(th), math.sin(th)
    ax = disc.axis_vec
    new_axis = np.array(
        [c * ax[0] - s * ax[2], ax[1], s * ax[0] + c * ax[2]]
    )
    new_axis /= np.linalg.norm(new_axis)
    return replace(disc, axis=tuple(new_axis))


# ---------------------------------------------------------------------------
# aircraft configuration
# ---------------------------------------------------------------------------

def default_props(wing_span=4.0, tip_radius=0.3, hover_radius=0.25, blade_count=2):
    """Nominal six-rotor layout: two tiltable tip props, hover quad on booms.

    The hover discs sit slightly above the wing with footprints clipping the
    planform so their wash reaches the lifting surfaces; the tip props sit
    just ahead of the wing tips so their slipstreams blow the tip panels.
    """
    half = wing_span / 2.0
    mk = PropellerDisc
    return (
        mk("tip_starboard", (0.35, -half, 0.0), (1.0, 0.0, 0.0), tip_radius,
           blade_count, -1, True, "starboard"),
        mk("tip_port", (0.35, half, 0.0), (1.0, 0.0, 0.0), tip_radius,
           blade_count, +1, True, "port"),
        mk("hover_front_starboard", (0.15, -1.1, 0.20), (0.0, 0.0, 1.0),
           hover_radius, blade_count, +1, False, "hover"),
        mk("hover_front_port", (0.15, 1.1, 0.20), (0.0, 0.0, 1.0),
           hover_radius, blade_count, -1, False, "hover"),
        mk("hover_rear_starboard", (-0.40, -1.1, 0.20), (0.0, 0.0, 1.0),
           hover_radius, blade_count, -1, False, "hover"),
        mk("hover_rear_port", (-0.40, 1.1, 0.20), (0.0, 0.0, 1.0),
           hover_radius, blade_count, +1, False, "hover"),
    )


@dataclass(frozen=True)
class AircraftConfig:
    """Parameterized nominal configuration of the six-rotor airframe.

    The published airframe dimensions are proprietary; these nominal values
    are assumptions and every one of them can be overridden from a config
    file (see ``load_config``).
    """

    wing_span: float = 4.0
    wing_chord: float = 0.5
    tail_span: float = 1.6
    tail_chord: float = 0.35
    tail_arm: float = 2.0              # x-distance wing qc -> tail qc
    elevator_chord_fraction: float = 0.3
    wing_panels_spanwise: int = 10
    wing_panels_chordwise: int = 4
    tail_panels_spanwise: int = 6
    tail_panels_chordwise: int = 2
    props: tuple = field(default_factory=default_props)
    air_density: float = 1.225

    def __post_init__(self):
        for nm in ("wing_span", "wing_chord", "tail_span", "tail_chord",
                   "tail_arm", "air_density"):
            if getattr(self, nm) <= 0:
                raise GeometryError(f"{nm} must be positive")
        if not 0.0 < self.elevator_chord_fraction < 1.0:
            raise GeometryError("elevator_chord_fraction must lie in (0, 1)")
        for nm in ("wing_panels_spanwise", "wing_panels_chordwise",
                   "tail_panels_spanwise", "tail_panels_chordwise"):
            if getattr(self, nm) < 1:
                raise GeometryError(f"{nm} must be at least 1")
        if len(self.props) != 6:
            raise GeometryError("exactly 6 propeller discs required")
        tiltable = [p for p in self.props if p.tiltable]
        if len(tiltable) != 2:
            raise GeometryError("exactly 2 discs must be tiltable")
        for p in tiltable:
            if abs(abs(p.hub[1]) - self.wing_span / 2.0) > 1e-9:
                raise GeometryError(
                    f"tiltable prop {p.name} must sit at a wing tip (|y| = b/2)"
                )
        if sum(1 for p in self.props if p.group == "hover") != 4:
            raise GeometryError("hover group must have exactly 4 discs")

    # reference quantities: wing planform only, standard practice
    @property
    def ref_area(self):
        return self.wing_span * self.wing_chord

    @property
    def ref_span(self):
        return self.wing_span

    @property
    def ref_chord(self):
        return self.wing_chord

    @property
    def reference_point(self):
        return np.zeros(3)

    def prop_by_group(self, group):
        return [p for p in self.props if p.group == group]


# ---------------------------------------------------------------------------
# panel mesh
# ---------------------------------------------------------------------------

class PanelMesh:
    """Flat-plate lifting-surface discretization with vortex rings.

    Per panel: geometric corners, vortex-ring corners (shifted a quarter
    panel-chord aft), control point at the panel three-quarter chord,
    unit normal, bound-segment midpoint/direction/vector (the ring's leading
    spanwise leg), area and a surface tag.  ``ahead_index[i]`` is the panel
    directly upstream in the same column (-1 in the first row); the net
    bound circulation on panel i is gamma[i] - gamma[ahead_index[i]].
    """

    def __init__(self, corners, ring_corners, control_points, normals,
                 bound_mid, bound_vec, areas, tags, ahead_index,
                 te_indices, reference_point):
        self.corners = corners
        self.ring_corners = ring_corners
        self.control_points = control_points
        self.normals = normals
        self.bound_mid = bound_mid
        self.bound_vec = bound_vec
        self.areas = areas
        self.tags = tags
        self.ahead_index = ahead_index
        self.te_indices = te_indices
        self.reference_point = reference_point

    @property
    def n_panels(self):
        return self.control_points.shape[0]

    @property
    def bound_dir(self):
        L = np.linalg.norm(self.bound_vec, axis=1, keepdims=True)
        return self.bound_vec / L

    @cached_property
    def net_circulation_matrix(self):
        """D such that net bound circulation = D @ gamma."""
        n = self.n_panels
        d = np.eye(n)
        for i, ah in enumerate(self.ahead_index):
            if ah >= 0:
                d[i, ah] = -1.0
        return d

    @cached_property
    def te_column_matrix(self):
        """One-hot (n_te, n_panels): scatters trailing-edge ring columns."""
        t = np.zeros((len(self.te_indices), self.n_panels))
        for k, j in enumerate(self.te_indices):
            t[k, j] = 1.0
        return t

    def wake_leg_points(self):
        """Aft-corner attach points of the trailing-edge rings.

        Returns (left, right) arrays of shape (n_te, 3): the ring's aft
        segment runs right -> left in the ring circulation sense.
        """
        rc = self.ring_corners[self.te_indices]
        # ring corner order: front-lo-y, front-hi-y, aft-hi-y, aft-lo-y
        return rc[:, 3, :], rc[:, 2, :]

    def mirrored(self):
        """Mesh reflected about the x-z plane (y -> -y)."""
        flip = np.array([1.0, -1.0, 1.0])

        def m(pts):
            return pts * flip

        # reflection reverses panel corner ordering sense; re-derive the
        # reflected mesh fields directly
        return PanelMesh(
            corners=self.corners * flip,
            ring_corners=self.ring_corners * flip,
            control_points=m(self.control_points),
            normals=m(self.normals),
            bound_mid=m(self.bound_mid),
            bound_vec=m(self.bound_vec),
            areas=self.areas.copy(),
            tags=self.tags.copy(),
            ahead_index=self.ahead_index.copy(),
            te_indices=self.te_indices.copy(),
            reference_point=self.reference_point * flip,
        )

    def with_normals(self, normals):
        out = PanelMesh(
            corners=self.corners, ring_corners=self.ring_corners,
            control_points=self.control_points, normals=normals,
            bound_mid=self.bound_mid, bound_vec=self.bound_vec,
            areas=self.areas, tags=self.tags, ahead_index=self.ahead_index,
            te_indices=self.te_indices, reference_point=self.reference_point,
        )
        return out


def _build_surface(x_qc, chord, span, n_span, n_chord, tag,
                   elevator_fraction=None):
    """Panels for one rectangular flat plate lying in the z=0 plane.

    x decreases aft (+x is forward); spanwise stations ascend in y.
    Chordwise panel rows whose center falls in the aft ``elevator_fraction``
    of the chord are tagged "elevator".
    """
    x_le = x_qc + 0.25 * chord
    dy = span / n_span
    dc = chord / n_chord
    ys = -span / 2.0 + dy * np.arange(n_span + 1)
    xs = x_le - dc * np.arange(n_chord + 1)

    corners, ring_corners, cps, normals = [], [], [], []
    bmid, bvec, areas, tags, ahead = [], [], [], [], []
    te_local = []
    idx = 0
    index_of = {}
    for j in range(n_span):
        for i in range(n_chord):
            y0, y1 = ys[j], ys[j + 1]
            xf, xa = xs[i], xs[i + 1]
            corners.append([(xf, y0, 0.0), (xf, y1, 0.0),
                            (xa, y1, 0.0), (xa, y0, 0.0)])
            rf, ra = xf - 0.25 * dc, xa - 0.25 * dc
            ring_corners.append([(rf, y0, 0.0), (rf, y1, 0.0),
                                 (ra, y1, 0.0), (ra, y0, 0.0)])
            cps.append((xf - 0.75 * dc, 0.5 * (y0 + y1), 0.0))
            normals.append((0.0, 0.0, 1.0))
            bmid.append((rf, 0.5 * (y0 + y1), 0.0))
            bvec.append((0.0, dy, 0.0))
            areas.append(dy * dc)
            center_frac = (i + 0.5) / n_chord
            if elevator_fraction is not None and center_frac > 1.0 - elevator_fraction:
                tags.append("elevator")
            else:
                tags.append(tag)
            index_of[(j, i)] = idx
            ahead.append(index_of.get((j, i - 1), -1))
            if i == n_chord - 1:
                te_local.append(idx)
            idx += 1
    return (np.array(corners), np.array(ring_corners), np.array(cps),
            np.array(normals), np.array(bmid), np.array(bvec),
            np.array(areas), np.array(tags), np.array(ahead, dtype=int),
            np.array(te_local, dtype=int))


def build_mesh(config: AircraftConfig) -> PanelMesh:
    """Panel mesh for the wing plus tail (elevator = aft tail fraction).

    Deterministic for an equal configuration; panel count is
    wing_spanwise*wing_chordwise + tail_spanwise*tail_chordwise.
    """
    wing = _build_surface(0.0, config.wing_chord, config.wing_span,
                          config.wing_panels_spanwise,
                          config.wing_panels_chordwise, "wing")
    tail = _build_surface(-config.tail_arm, config.tail_chord,
                          config.tail_span, config.tail_panels_spanwise,
                          config.tail_panels_chordwise, "tail",
                          elevator_fraction=config.elevator_chord_fraction)
    off = wing[2].shape[0]
    ahead_tail = np.where(tail[8] >= 0, tail[8] + off, -1)
    return PanelMesh(
        corners=np.concatenate([wing[0], tail[0]]),
        ring_corners=np.concatenate([wing[1], tail[1]]),
        control_points=np.concatenate([wing[2], tail[2]]),
        normals=np.concatenate([wing[3], tail[3]]),
        bound_mid=np.concatenate([wing[4], tail[4]]),
        bound_vec=np.concatenate([wing[5], tail[5]]),
        areas=np.concatenate([wing[6], tail[6]]),
        tags=np.concatenate([wing[7], tail[7]]),
        ahead_index=np.concatenate([wing[8], ahead_tail]),
        te_indices=np.concatenate([wing[9], tail[9] + off]),
        reference_point=config.reference_point,
    )


def elevator_normal_rotation(theta_deg):
    """(cos, sin) pair for rotating elevator normals, positive = TE down."""
    th = float(theta_deg) * DEG
    return math.cos(th), math.sin(th)


def rotate_normals_about_y(normals, cos_th, sin_th, mask):
    """Rotate the masked normals about the spanwise (y) hinge axis.

    Positive angle corresponds to trailing-edge-down deflection: the rotated
    flat-plate normal is (-sin, 0, cos) starting from (0, 0, 1).
    """
    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    rx = cos_th * nx - sin_th * nz
    rz = sin_th * nx + cos_th * nz
    out = normals.copy()
    out[mask, 0] = rx[mask]
    out[mask, 2] = rz[mask]
    return out


def apply_elevator_deflection(mesh: PanelMesh, theta_elev_deg: float) -> PanelMesh:
    """Rotate elevator panel normals about the hinge line (spanwise axis at
    the elevator leading edge); other panels are untouched.

    The usual command range is [-15, 15] degrees; values outside warn but
    are not rejected.
    """
    import warnings

    if abs(theta_elev_deg) > 15.0 + 1e-12:
        warnings.warn(
            f"elevator deflection {theta_elev_deg:.2f} deg outside [-15, 15]",
            stacklevel=2,
        )
    if theta_elev_deg == 0.0:
        return mesh
    c, s = elevator_normal_rotation(theta_elev_deg)
    mask = mesh.tags == "elevator"
    return mesh.with_normals(rotate_normals_about_y(mesh.normals, c, s, mask))


def mirrored_config(config: AircraftConfig) -> AircraftConfig:
    """Configuration reflected about the x-z plane (used by symmetry tests)."""
    flipped = []
    for p in config.props:
        hub = p.hub * np.array([1.0, -1.0, 1.0])
        ax = p.axis_vec * np.array([1.0, -1.0, 1.0])
        flipped.append(replace(p, hub_position=tuple(hub), axis=tuple(ax),
                               spin_direction=-p.spin_direction))
    return replace(config, props=tuple(flipped))


# ---------------------------------------------------------------------------
# config file I/O (plain-text key/value with sections; see docs)
# ---------------------------------------------------------------------------

_PROP_GROUPS = ("starboard", "port", "hover")


def load_config(path) -> AircraftConfig:
    """Read an aircraft configuration file.

    INI-style sections: [airframe], [panels], [reference] and one
    [prop.<name>] section per disc; lengths in meters, angles in degrees.
    Missing keys fall back to the nominal defaults.  See
    docs/aircraft_config.md for the schema.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise GeometryError(f"cannot read aircraft config {path}")

    kw = {}
    if cp.has_section("airframe"):
        sec = cp["airframe"]
        for key, cast in [("wing_span", float), ("wing_chord", float),
                          ("tail_span", float), ("tail_chord", float),
                          ("tail_arm", float),
                          ("elevator_chord_fraction", float),
                          ("air_density", float)]:
            if key in sec:
                kw[key] = cast(sec[key])
    if cp.has_section("panels"):
        sec = cp["panels"]
        for key in ("wing_panels_spanwise", "wing_panels_chordwise",
                    "tail_panels_spanwise", "tail_panels_chordwise"):
            if key in sec:
                kw[key] = int(sec[key])

    prop_sections = [s for s in cp.sections() if s.startswith("prop.")]
    if prop_sections:
        props = []
        for s in prop_sections:
            sec = cp[s]
            name = s[len("prop."):]
            hub = tuple(float(v) for v in sec["hub"].split(","))
            axis = tuple(float(v) for v in sec["axis"].split(","))
            twist = _linear_twist(sec.getfloat("twist_root_deg", 30.0),
                                  sec.getfloat("twist_tip_deg", 12.0))
            radius = sec.getfloat("radius")
            chord = _constant_chord(sec.getfloat("chord_over_radius", 0.12),
                                    radius)
            props.append(PropellerDisc(
                name=name, hub_position=hub, axis=axis, radius=radius,
                blade_count=sec.getint("blade_count", 2),
                spin_direction=sec.getint("spin_direction", 1),
                tiltable=sec.getboolean("tiltable", False),
                group=sec.get("group"),
                chord_distribution=chord, twist_distribution=twist,
            ))
        kw["props"] = tuple(props)
    return AircraftConfig(**kw)
