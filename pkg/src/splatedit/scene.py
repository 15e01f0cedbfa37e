"""Gaussian-cloud and camera data model with binary PLY / manifest JSON I/O.

Conventions follow the common 3DGS point-cloud layout: positions ``x,y,z``,
DC color ``f_dc_0..2``, ``opacity`` stored as a logit, ``scale_0..2`` stored
as logs, and a ``rot_0..3`` quaternion in (w, x, y, z) order. Values held in
memory are always the activated ones; raw encodings exist only inside PLY
files. Higher spherical-harmonic bands are ignored on load and written as
zeros on save.

Clouds and cameras are value snapshots: their arrays are frozen after
construction and edits go through building new instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import DataError, FormatError, InputError

# DC band scale of the real spherical-harmonic basis; color = 0.5 + SH_C0 * f_dc.
SH_C0 = 0.28209479177387814

_QUAT_NORM_TOL = 1e-6

_REQUIRED_PLY_FIELDS = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


def quat_to_rotmat(quat: NDArray) -> NDArray:
    """Rotation matrix (or stack of them) from unit quaternions in (w,x,y,z) order."""
    q = np.asarray(quat, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def normalize_quats(quats: NDArray) -> NDArray:
    """Unit-normalize quaternions, leaving near-unit ones untouched.

    Quaternions already within 1e-6 of unit norm are returned bit-identical so
    that a save/load cycle through float32 raw fields is stable.
    """
    q = np.array(quats, dtype=np.float64, copy=True)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DataError("zero-norm quaternion cannot be normalized")
    off = np.abs(norms - 1.0) > _QUAT_NORM_TOL
    q = np.where(off, q / norms, q)
    return q


@dataclass(frozen=True)
class Gaussian:
    """A single anisotropic Gaussian primitive.

    mean: world-space center; rotation: unit quaternion (w,x,y,z); scale:
    per-axis positive lengths; opacity in (0,1]; color: DC RGB in [0,1].
    """

    mean: NDArray
    rotation: NDArray
    scale: NDArray
    opacity: float
    color: NDArray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))
        if self.mean.shape != (3,) or self.scale.shape != (3,) or self.color.shape != (3,):
            raise DataError("Gaussian fields must be 3-vectors")
        if self.rotation.shape != (4,):
            raise DataError("rotation must be a quaternion (w,x,y,z)")
        if abs(np.linalg.norm(self.rotation) - 1.0) > _QUAT_NORM_TOL:
            raise DataError("rotation quaternion is not unit length")
        if not np.all(self.scale > 0):
            raise DataError("scale components must be positive")
        if not (0.0 < self.opacity <= 1.0):
            raise DataError("opacity must lie in (0, 1]")
        if not (np.all(self.color >= 0.0) and np.all(self.color <= 1.0)):
            raise DataError("color components must lie in [0, 1]")


def covariance(g: Gaussian) -> NDArray:
    """3x3 world-space covariance R S S^T R^T of a single Gaussian."""
    R = quat_to_rotmat(g.rotation)
    M = R * g.scale[np.newaxis, :]
    return M @ M.T


class GaussianCloud:
    """An ordered collection of Gaussians stored as flat arrays.

    ``source_marker[i]`` is False for points that belong to the original scene
    and True for points added by initialization.
    """

    __slots__ = ("means", "quats", "scales", "opacities", "colors", "source_marker")

    def __init__(self, means, quats, scales, opacities, colors, source_marker=None):
        means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
        n = means.shape[0]
        quats = np.asarray(quats, dtype=np.float64).reshape(n, 4)
        scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)
        if source_marker is None:
            source_marker = np.zeros(n, dtype=bool)
        source_marker = np.asarray(source_marker, dtype=bool).reshape(-1)
        if source_marker.shape[0] != n:
            raise DataError("source_marker length must equal the Gaussian count")

        if n:
            for name, arr in (("mean", means), ("quat", quats), ("scale", scales),
                              ("opacity", opacities), ("color", colors)):
                finite = np.isfinite(arr).reshape(n, -1).all(axis=1)
                if not finite.all():
                    raise DataError(f"non-finite {name} at point {int(np.argmin(finite))}")
            norms = np.linalg.norm(quats, axis=1)
            if np.any(np.abs(norms - 1.0) > _QUAT_NORM_TOL):
                raise DataError("all rotation quaternions must be unit length")
            if not np.all(scales > 0):
                raise DataError("scale components must be positive")
            if not (np.all(opacities > 0) and np.all(opacities <= 1.0)):
                raise DataError("opacities must lie in (0, 1]")
            if not (np.all(colors >= 0.0) and np.all(colors <= 1.0)):
                raise DataError("colors must lie in [0, 1]")

        for arr in (means, quats, scales, opacities, colors, source_marker):
            arr.setflags(write=False)
        self.means = means
        self.quats = quats
        self.scales = scales
        self.opacities = opacities
        self.colors = colors
        self.source_marker = source_marker

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            mean=self.means[i],
            rotation=self.quats[i],
            scale=self.scales[i],
            opacity=float(self.opacities[i]),
            color=self.colors[i],
        )

    @classmethod
    def from_gaussians(cls, gaussians, source_marker=None) -> "GaussianCloud":
        gs = list(gaussians)
        if not gs:
            return cls.empty()
        return cls(
            means=np.stack([g.mean for g in gs]),
            quats=np.stack([g.rotation for g in gs]),
            scales=np.stack([g.scale for g in gs]),
            opacities=np.array([g.opacity for g in gs]),
            colors=np.stack([g.color for g in gs]),
            source_marker=source_marker,
        )

    @classmethod
    def empty(cls) -> "GaussianCloud":
        z = np.zeros((0, 3))
        return cls(z, np.zeros((0, 4)), z, np.zeros(0), z, np.zeros(0, dtype=bool))

    def covariances(self) -> NDArray:
        """(N,3,3) world-space covariances for all points."""
        R = quat_to_rotmat(self.quats) if len(self) else np.zeros((0, 3, 3))
        M = R * self.scales[:, np.newaxis, :]
        return M @ np.swapaxes(M, 1, 2)

    def replace(self, **arrays) -> "GaussianCloud":
        """New cloud with some arrays substituted (value-snapshot mutation)."""
        kw = dict(
            means=self.means, quats=self.quats, scales=self.scales,
            opacities=self.opacities, colors=self.colors,
            source_marker=self.source_marker,
        )
        kw.update(arrays)
        return GaussianCloud(**kw)


def merge(cloud: GaussianCloud, delta: GaussianCloud) -> GaussianCloud:
    """Concatenate ``delta`` onto ``cloud``, flagging the new points as added."""
    return GaussianCloud(
        means=np.concatenate([cloud.means, delta.means]),
        quats=np.concatenate([cloud.quats, delta.quats]),
        scales=np.concatenate([cloud.scales, delta.scales]),
        opacities=np.concatenate([cloud.opacities, delta.opacities]),
        colors=np.concatenate([cloud.colors, delta.colors]),
        source_marker=np.concatenate([cloud.source_marker, np.ones(len(delta), dtype=bool)]),
    )


# ---------------------------------------------------------------------------
# PLY I/O


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def load_ply(path) -> GaussianCloud:
    """Load a 3DGS binary PLY, applying the standard activations.

    Raises FormatError when a required field is missing or the header is not
    binary little-endian, and DataError (with the point index) on non-finite
    raw values.
    """
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise FormatError(f"{path}: not a PLY file")
        fields: list[str] = []
        count = None
        fmt_seen = False
        while True:
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: truncated header")
            tokens = line.decode("ascii", "replace").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                if tokens[1] != "binary_little_endian":
                    raise FormatError(f"{path}: unsupported format '{tokens[1]}'")
                fmt_seen = True
            elif tokens[0] == "element":
                if tokens[1] != "vertex":
                    raise FormatError(f"{path}: unexpected element '{tokens[1]}'")
                count = int(tokens[2])
            elif tokens[0] == "property":
                if tokens[1] != "float":
                    raise FormatError(f"{path}: unsupported property type '{tokens[1]}'")
                fields.append(tokens[2])
            elif tokens[0] == "end_header":
                break
        if not fmt_seen or count is None:
            raise FormatError(f"{path}: incomplete header")

        for name in _REQUIRED_PLY_FIELDS:
            if name not in fields:
                raise FormatError(f"{path}: missing required field '{name}'")

        raw = np.fromfile(f, dtype="<f4", count=count * len(fields))
    if raw.size != count * len(fields):
        raise FormatError(f"{path}: payload shorter than header promises")
    raw = raw.reshape(count, len(fields)).astype(np.float64)
    col = {name: raw[:, i] for i, name in enumerate(fields)}

    for name in _REQUIRED_PLY_FIELDS:
        bad = ~np.isfinite(col[name])
        if np.any(bad):
            raise DataError(f"{path}: non-finite '{name}' at point {int(np.argmax(bad))}")

    means = np.stack([col["x"], col["y"], col["z"]], axis=1)
    f_dc = np.stack([col["f_dc_0"], col["f_dc_1"], col["f_dc_2"]], axis=1)
    colors = np.clip(0.5 + SH_C0 * f_dc, 0.0, 1.0)
    opacities = _sigmoid(col["opacity"])
    scales = np.exp(np.stack([col["scale_0"], col["scale_1"], col["scale_2"]], axis=1))
    quats = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    quats = normalize_quats(quats) if count else quats
    return GaussianCloud(means, quats, scales, opacities, colors)


def save_ply(cloud: GaussianCloud, path) -> None:
    """Write a 3DGS binary PLY; inverse of :func:`load_ply` on valid clouds.

    Raw encodings: logit(opacity), log(scale), (color-0.5)/SH_C0, quaternion
    as stored. Zeroed normals and f_rest_0..44 keep the file loadable by
    stock 3DGS viewers.
    """
    n = len(cloud)
    n_rest = 45
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    data = np.zeros((n, len(names)), dtype=np.float64)
    if n:
        data[:, 0:3] = cloud.means
        data[:, 6:9] = (cloud.colors - 0.5) / SH_C0
        # Keep the logit finite for opacity exactly 1.
        data[:, 9 + n_rest] = _logit(np.minimum(cloud.opacities, 1.0 - 1e-12))
        data[:, 10 + n_rest:13 + n_rest] = np.log(cloud.scales)
        data[:, 13 + n_rest:17 + n_rest] = cloud.quats

    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(data.astype("<f4").tobytes())
    except OSError as e:
        raise InputError(f"cannot write PLY to {path}: {e}") from e


# ---------------------------------------------------------------------------
# Cameras


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a rigid world-to-camera pose.

    The camera looks down +z in its own frame. ``position`` is the camera
    center in world coordinates (the translation column of the camera-to-world
    transform).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R_w2c: NDArray
    t_w2c: NDArray
    name: str = ""

    def __post_init__(self):
        R = np.asarray(self.R_w2c, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t_w2c, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise DataError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise DataError("resolution must be at least 1x1")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise DataError("pose rotation must be orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R_w2c", R)
        object.__setattr__(self, "t_w2c", t)

    @property
    def position(self) -> NDArray:
        """Camera center p_v in world coordinates."""
        return -self.R_w2c.T @ self.t_w2c

    @property
    def c2w(self) -> NDArray:
        m = np.eye(4)
        m[:3, :3] = self.R_w2c.T
        m[:3, 3] = self.position
        return m

    def world_to_cam(self, points: NDArray) -> NDArray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R_w2c.T + self.t_w2c

    @classmethod
    def from_c2w(cls, fx, fy, cx, cy, width, height, c2w, name="") -> "Camera":
        c2w = np.asarray(c2w, dtype=np.float64).reshape(4, 4)
        R = c2w[:3, :3].T
        t = -R @ c2w[:3, 3]
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, width=int(width), height=int(height),
                   R_w2c=R, t_w2c=t, name=name)

    @classmethod
    def look_at(cls, position, target, up=(0.0, 1.0, 0.0), fx=100.0, fy=None,
                width=64, height=64, cx=None, cy=None, name="") -> "Camera":
        """Camera at ``position`` with +z pointing toward ``target``."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        fwd_norm = np.linalg.norm(forward)
        if fwd_norm == 0:
            raise InputError("look_at target coincides with camera position")
        forward = forward / fwd_norm
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-12:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        # y axis of the camera frame points image-down (OpenCV convention).
        down = np.cross(forward, right)
        c2w = np.eye(4)
        c2w[:3, 0] = right
        c2w[:3, 1] = down
        c2w[:3, 2] = forward
        c2w[:3, 3] = position
        if fy is None:
            fy = fx
        if cx is None:
            cx = width / 2.0
        if cy is None:
            cy = height / 2.0
        return cls.from_c2w(fx, fy, cx, cy, width, height, c2w, name=name)


def load_camera_manifest(path) -> list[Camera]:
    """Read the camera manifest JSON: {"views":[{name,fx,fy,cx,cy,width,height,c2w}]}."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read camera manifest {path}: {e}") from e
    views = doc.get("views")
    if not isinstance(views, list) or not views:
        raise FormatError(f"{path}: manifest has no 'views' list")
    cameras = []
    for i, v in enumerate(views):
        try:
            c2w = np.asarray(v["c2w"], dtype=np.float64)
            if c2w.size != 16:
                raise FormatError(f"{path}: view {i} c2w must have 16 floats")
            cameras.append(Camera.from_c2w(
                fx=float(v["fx"]), fy=float(v["fy"]),
                cx=float(v["cx"]), cy=float(v["cy"]),
                width=int(v["width"]), height=int(v["height"]),
                c2w=c2w.reshape(4, 4), name=str(v.get("name", f"view_{i}")),
            ))
        except KeyError as e:
            raise FormatError(f"{path}: view {i} missing key {e}") from e
    return cameras


def save_camera_manifest(cameras: list[Camera], path) -> None:
    views = []
    for i, cam in enumerate(cameras):
        views.append({
            "name": cam.name or f"view_{i}",
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "c2w": [float(x) for x in cam.c2w.reshape(-1)],
        })
    Path(path).write_text(json.dumps({"views": views}, indent=2))
