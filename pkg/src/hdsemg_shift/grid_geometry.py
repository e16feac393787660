"""Electrode-grid geometry and ground-truth shift recovery from 3-D scans.

Frame conventions
-----------------
The array frame places channel ``(row, col)`` (row-major channel index
``row * cols + col``) at ``(col * pitch, row * pitch)`` cm. ``x`` runs along
the top/bottom edges, ``y`` along the vertical edges with row 0 on top. A
positive ``theta`` rotates ``+x`` toward ``+y``; that is counterclockwise
when viewed from the side the normal ``x_hat cross y_hat`` points to, which
the synthetic scans place outside the limb.

Shifts are applied as "rotate by theta about the array center, then
translate by (x, y)", with (x, y) expressed in the starting array's frame.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CornerLabelingError,
    DegenerateRegistrationError,
    FileFormatError,
    InvalidInputError,
    UnreliableScanError,
)

CORNER_LABELS = ("top_left", "top_right", "bottom_right", "bottom_left")
SCAN_KINDS = ("pre", "post", "no-array")


@dataclass(frozen=True)
class GridLayout:
    rows: int = 8
    cols: int = 8
    pitch_cm: float = 1.0

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise InvalidInputError(f"grid needs rows, cols >= 1, got {self.rows}x{self.cols}")
        if not self.pitch_cm > 0:
            raise InvalidInputError(f"pitch must be positive, got {self.pitch_cm}")
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))
        object.__setattr__(self, "pitch_cm", float(self.pitch_cm))

    @property
    def n_channels(self):
        return self.rows * self.cols

    @property
    def center(self):
        return np.array([(self.cols - 1) * self.pitch_cm / 2.0, (self.rows - 1) * self.pitch_cm / 2.0])

    def row_col(self, channel):
        if not 0 <= int(channel) < self.n_channels:
            raise InvalidInputError(f"channel {channel} outside a {self.rows}x{self.cols} grid")
        return divmod(int(channel), self.cols)

    def nominal_positions(self):
        rr, cc = np.divmod(np.arange(self.n_channels), self.cols)
        return np.column_stack([cc, rr]).astype(np.float64) * self.pitch_cm

    def corner_positions(self):
        """Outer electrode centres in CORNER_LABELS order."""
        r, c = self.rows - 1, self.cols - 1
        return self.nominal_positions()[[0, c, r * self.cols + c, r * self.cols]]


@dataclass(frozen=True)
class ShiftTransform:
    """Array displacement in the pre-shift array frame.

    x runs toward higher column index, y toward higher row index; theta is
    counter-clockwise about the array centre in degrees, wrapped to [-180, 180).
    """

    x_cm: float = 0.0
    y_cm: float = 0.0
    theta_deg: float = 0.0

    def __post_init__(self):
        theta = (float(self.theta_deg) + 180.0) % 360.0 - 180.0
        object.__setattr__(self, "x_cm", float(self.x_cm))
        object.__setattr__(self, "y_cm", float(self.y_cm))
        object.__setattr__(self, "theta_deg", theta)

    def as_dict(self):
        return {"x_cm": self.x_cm, "y_cm": self.y_cm, "theta_deg": self.theta_deg}


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    rms: float = 0.0

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class ScanData:
    """Labelled fiducials (and array corners, for array scans) in cm."""

    fiducials: dict
    corners: dict = None
    scan_kind: str = "pre"

    def __post_init__(self):
        if self.scan_kind not in SCAN_KINDS:
            raise InvalidInputError(f"scan_kind must be one of {SCAN_KINDS}, got {self.scan_kind!r}")
        if len(self.fiducials) < 3:
            raise InvalidInputError("a scan needs at least 3 fiducials")
        has_corners = self.corners is not None
        if has_corners != (self.scan_kind != "no-array"):
            raise InvalidInputError(f"{self.scan_kind} scan must {'not ' if has_corners else ''}carry corners")
        if has_corners and set(self.corners) != set(CORNER_LABELS):
            raise CornerLabelingError(f"corner labels must be {CORNER_LABELS}, got {sorted(self.corners)}")
        fid = {str(k): np.asarray(v, dtype=np.float64).reshape(3) for k, v in self.fiducials.items()}
        object.__setattr__(self, "fiducials", fid)
        if has_corners:
            object.__setattr__(
                self, "corners", {k: np.asarray(self.corners[k], dtype=np.float64).reshape(3) for k in CORNER_LABELS}
            )

    def corner_array(self):
        return np.array([self.corners[k] for k in CORNER_LABELS])


@dataclass(frozen=True)
class ChannelMap:
    """Nearest post-shift channel (and separation, cm) for each pre-shift channel."""

    nearest: np.ndarray
    separation: np.ndarray
    pre_positions: np.ndarray = field(default=None, repr=False)
    post_positions: np.ndarray = field(default=None, repr=False)


def _as_point_arrays(src, dst):
    if isinstance(src, dict) and isinstance(dst, dict):
        labels = sorted(set(src) & set(dst))
        if set(src) != set(dst):
            raise DegenerateRegistrationError(
                f"fiducial labels differ between scans: {sorted(set(src) ^ set(dst))}"
            )
        return np.array([src[k] for k in labels]), np.array([dst[k] for k in labels])
    src, dst = np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DegenerateRegistrationError(f"point sets must both be (n, 3), got {src.shape} and {dst.shape}")
    return src, dst


def rigid_register(src, dst):
    """Least-squares rigid transform mapping ``src`` onto ``dst``.

    Points are either (n, 3) arrays in correspondence or dicts keyed by
    label. Uses the SVD solution with a reflection guard, so the rotation
    always has determinant +1.
    """
    P, Q = _as_point_arrays(src, dst)
    if len(P) < 3:
        raise DegenerateRegistrationError(f"need >= 3 correspondences, got {len(P)}")
    cp, cq = P.mean(axis=0), Q.mean(axis=0)
    P0, Q0 = P - cp, Q - cq
    sv = np.linalg.svd(P0, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateRegistrationError("correspondences are collinear")
    U, _, Vt = np.linalg.svd(P0.T @ Q0)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cq - R @ cp
    resid = Q - (P @ R.T + t)
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return RigidTransform(rotation=R, translation=t, rms=rms)


def _check_rectangle(corners, layout, tol, which):
    w = (layout.cols - 1) * layout.pitch_cm
    h = (layout.rows - 1) * layout.pitch_cm
    tl, tr, br, bl = corners
    expected = [
        (np.linalg.norm(tr - tl), w),
        (np.linalg.norm(br - bl), w),
        (np.linalg.norm(bl - tl), h),
        (np.linalg.norm(br - tr), h),
        (np.linalg.norm(br - tl), math.hypot(w, h)),
        (np.linalg.norm(bl - tr), math.hypot(w, h)),
    ]
    for got, want in expected:
        if want > 0 and abs(got - want) > tol * want:
            raise CornerLabelingError(
                f"{which} corners deviate from the nominal {w:g}x{h:g} cm rectangle "
                f"(edge {got:.3f} cm vs {want:.3f} cm); check corner labels"
            )


def _unit(v):
    n = np.linalg.norm(v)
    if n == 0:
        raise CornerLabelingError("corner edges are degenerate")
    return v / n


def extract_shift(pre, post, bare, layout=None, rms_tol_cm=0.3, shape_tol=0.15):
    """Recover the (x, y, theta) displacement between two array placements.

    Both array scans are registered to the bare (no-array) scan through the
    fiducials. A least-squares plane through the registered corners stands
    in for the local skin surface; centres and corners are projected onto it
    and expressed in the pre-shift array's in-plane frame.

    On a curved limb the plane model underestimates displacement across
    the curvature. For an 8x8, 1 cm array on a cylinder of radius R, with
    shifts up to 4 cm and 30 degrees, the position error stays below about
    ``6.5 / R**2`` of the shift length (25 % at R = 5 cm, under 2 % at
    R = 20 cm). Shifts along the cylinder axis are unaffected.
    """
    layout = layout or GridLayout()
    if pre.corners is None or post.corners is None:
        raise InvalidInputError("pre and post scans must carry array corners")
    labels = set(bare.fiducials)
    if set(pre.fiducials) != labels or set(post.fiducials) != labels:
        raise InvalidInputError("all three scans must share the same fiducial labels")

    placed = []
    for which, scan in (("pre", pre), ("post", post)):
        reg = rigid_register(scan.fiducials, bare.fiducials)
        if reg.rms > rms_tol_cm:
            raise UnreliableScanError(
                f"{which} scan registers to the bare scan with RMS {reg.rms:.3f} cm > {rms_tol_cm} cm"
            )
        corners = reg.apply(scan.corner_array())
        _check_rectangle(corners, layout, shape_tol, which)
        placed.append(corners)
    pre_c, post_c = placed

    pts = np.vstack([pre_c, post_c])
    origin = pts.mean(axis=0)
    normal = np.linalg.svd(pts - origin)[2][2]

    def in_plane(v):
        return v - (v @ normal) * normal

    tl, tr, br, bl = pre_c
    ex = _unit(in_plane((tr - tl) + (br - bl)))
    ey = in_plane((bl - tl) + (br - tr))
    ey = _unit(ey - (ey @ ex) * ex)

    def to2d(p):
        rel = p - origin
        return np.column_stack([rel @ ex, rel @ ey])

    a, b = to2d(pre_c), to2d(post_c)
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    dx, dy = cb - ca
    a0, b0 = a - ca, b - cb
    cross = np.sum(a0[:, 0] * b0[:, 1] - a0[:, 1] * b0[:, 0])
    dot = np.sum(a0 * b0)
    theta = math.degrees(math.atan2(cross, dot))
    return ShiftTransform(x_cm=dx, y_cm=dy, theta_deg=theta)


def electrode_positions(layout, shift=None):
    """Planar electrode positions (cm, shape (n_channels, 2)) after ``shift``."""
    pos = layout.nominal_positions()
    if shift is None:
        return pos
    th = math.radians(shift.theta_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    c = layout.center
    return (pos - c) @ rot.T + c + np.array([shift.x_cm, shift.y_cm])


def closest_channel_map(pre_pos, post_pos):
    pre_pos = np.asarray(pre_pos, dtype=np.float64)
    post_pos = np.asarray(post_pos, dtype=np.float64)
    if pre_pos.shape != post_pos.shape:
        raise InvalidInputError("pre and post positions must come from the same layout")
    d = np.linalg.norm(pre_pos[:, None, :] - post_pos[None, :, :], axis=2)
    nearest = np.argmin(d, axis=1)
    return ChannelMap(
        nearest=nearest,
        separation=d[np.arange(len(d)), nearest],
        pre_positions=pre_pos,
        post_positions=post_pos,
    )


def intra_grid_distance(layout, ch_a, ch_b):
    ra, ca = layout.row_col(ch_a)
    rb, cb = layout.row_col(ch_b)
    return layout.pitch_cm * math.hypot(ra - rb, ca - cb)


def grid_distance_matrix(layout):
    pos = layout.nominal_positions()
    return np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)


def scan_to_json(scan):
    def pts(d):
        return [{"label": k, "x_cm": float(v[0]), "y_cm": float(v[1]), "z_cm": float(v[2])} for k, v in d.items()]

    doc = {"scan_kind": scan.scan_kind, "fiducials": pts(scan.fiducials)}
    if scan.corners is not None:
        doc["corners"] = pts(scan.corners)
    return doc


def scan_from_json(doc):
    def pts(items):
        out = {}
        for p in items:
            if p["label"] in out:
                raise FileFormatError(f"duplicate point label {p['label']!r}")
            out[p["label"]] = (float(p["x_cm"]), float(p["y_cm"]), float(p["z_cm"]))
        return out

    return ScanData(
        fiducials=pts(doc["fiducials"]),
        corners=pts(doc["corners"]) if doc.get("corners") is not None else None,
        scan_kind=doc["scan_kind"],
    )


def write_scan(path, scan):
    Path(path).write_text(json.dumps(scan_to_json(scan), indent=2, sort_keys=True) + "\n")


def read_scan(path):
    try:
        doc = json.loads(Path(path).read_text())
        return scan_from_json(doc)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError, FileFormatError) as exc:
        raise FileFormatError(f"{path}: cannot parse scan ({exc})") from exc
