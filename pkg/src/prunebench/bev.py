"""Equidistant fisheye cameras and ground-plane top-view label stitching.

World frame: x right, y forward, z up, ground at z = 0. Camera frame: optical
axis +z, x to the image right, y to the image bottom. Pixel (row i, col j) has
its center at (u, v) = (j, i).
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IGNORE_LABEL = 255
DEFAULT_THETA_MAX = np.deg2rad(95.0)


class CalibrationError(ValueError):
    pass


@dataclass
class FisheyeCamera:
    f: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    theta_max: float = DEFAULT_THETA_MAX
    name: str = ""

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.f <= 0:
            raise CalibrationError(f"{self.name or 'camera'}: focal length must be positive")
        if self.width < 1 or self.height < 1:
            raise CalibrationError(f"{self.name or 'camera'}: image size must be positive")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise CalibrationError(f"{self.name or 'camera'}: rotation is not orthonormal")
        if self.center[2] <= 0:
            raise CalibrationError(f"{self.name or 'camera'}: camera must sit above the ground plane")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def project(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """World points (..., 3) -> (u, v, theta, in_view)."""
        p = np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        theta = np.arctan2(np.hypot(x, y), z)
        phi = np.arctan2(y, x)
        u = self.cx + self.f * theta * np.cos(phi)
        v = self.cy + self.f * theta * np.sin(phi)
        return u, v, theta, theta < self.theta_max

    def ray(self, u, v) -> np.ndarray:
        """Unit viewing directions in world coordinates for pixel positions."""
        du = np.asarray(u, dtype=np.float64) - self.cx
        dv = np.asarray(v, dtype=np.float64) - self.cy
        theta = np.hypot(du, dv) / self.f
        phi = np.arctan2(dv, du)
        d_cam = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
        return d_cam @ self.rotation

    def pixel_to_ground(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        """Intersect pixel rays with z = 0; returns (points, hits_ground)."""
        d = self.ray(u, v)
        c = self.center
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -c[2] / d[..., 2]
        hit = np.isfinite(s) & (s > 0)
        s = np.where(hit, s, 0.0)
        return c + s[..., None] * d, hit


def project_ground_to_pixel(cam: FisheyeCamera, ground_point) -> tuple[float, float] | None:
    """Pixel (u, v) of ground point (x, y[, 0]), or None if outside the lens field of view."""
    x, y = ground_point[0], ground_point[1]
    u, v, _, ok = cam.project(np.array([x, y, 0.0]))
    return (float(u), float(v)) if ok else None


def look_at_camera(position, yaw_deg: float, pitch_deg: float, f: float, width: int, height: int,
                   name: str = "", theta_max: float = DEFAULT_THETA_MAX) -> FisheyeCamera:
    """Camera at ``position`` facing compass ``yaw_deg`` (0 = +y, 90 = +x), tilted down by ``pitch_deg``."""
    yaw, pitch = np.deg2rad(yaw_deg), np.deg2rad(pitch_deg)
    heading = np.array([np.sin(yaw), np.cos(yaw), 0.0])
    forward = np.cos(pitch) * heading + np.array([0.0, 0.0, -np.sin(pitch)])
    right = np.array([np.cos(yaw), -np.sin(yaw), 0.0])
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    pos = np.asarray(position, dtype=np.float64)
    return FisheyeCamera(f, (width - 1) / 2, (height - 1) / 2, width, height, rot, -rot @ pos, theta_max, name)


@dataclass
class TopViewGrid:
    """Cells of ``resolution`` meters covering ``extent_x`` x ``extent_y`` meters centered on the vehicle."""

    extent_x: float
    extent_y: float
    resolution: float

    def __post_init__(self):
        if self.resolution <= 0 or self.extent_x <= 0 or self.extent_y <= 0:
            raise CalibrationError("grid extent and resolution must be positive")
        for extent in (self.extent_x, self.extent_y):
            cells = extent / self.resolution
            if abs(cells - round(cells)) > 1e-6 * max(1.0, cells):
                raise CalibrationError(f"extent {extent} m is not a whole number of {self.resolution} m cells")

    @property
    def shape(self) -> tuple[int, int]:
        return round(self.extent_y / self.resolution), round(self.extent_x / self.resolution)

    def cell_centers(self) -> np.ndarray:
        """(rows, cols, 3) ground points; row 0 is the far +y edge, col 0 the -x edge."""
        rows, cols = self.shape
        x = -self.extent_x / 2 + (np.arange(cols) + 0.5) * self.resolution
        y = self.extent_y / 2 - (np.arange(rows) + 0.5) * self.resolution
        xx, yy = np.meshgrid(x, y)
        return np.stack([xx, yy, np.zeros_like(xx)], axis=-1)


def parse_grid(text: str) -> TopViewGrid:
    """Parse ``"20x20m@0.05"`` (extent x by y in meters at cell size)."""
    m = re.fullmatch(r"\s*([\d.]+)x([\d.]+)m?@([\d.]+)\s*", text)
    if not m:
        raise CalibrationError(f"grid {text!r} is not of the form WxHm@RES")
    return TopViewGrid(float(m.group(1)), float(m.group(2)), float(m.group(3)))


def _label_plane(label) -> np.ndarray:
    arr = np.asarray(label)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    elif arr.ndim == 4 and arr.shape[:2] == (1, 1):
        arr = arr[0, 0]
    if arr.ndim != 2:
        raise CalibrationError(f"label map must be a single (h, w) plane, got shape {np.asarray(label).shape}")
    return arr


def stitch_topview(cams, labels, grid: TopViewGrid, ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """Nearest-neighbor gather of each camera's labels onto the ground grid.

    Where several cameras see a cell, the one with the smallest incidence angle
    wins (ties go to the earlier camera). Unseen cells get ``ignore_label``.
    Returns a (1, rows, cols) label map.
    """
    if len(cams) != len(labels):
        raise CalibrationError(f"{len(cams)} cameras but {len(labels)} label maps")
    centers = grid.cell_centers()
    best_theta = np.full(grid.shape, np.inf)
    out = np.full(grid.shape, ignore_label, dtype=np.uint32)
    for cam, label in zip(cams, labels):
        plane = _label_plane(label)
        if plane.shape != (cam.height, cam.width):
            raise CalibrationError(f"{cam.name or 'camera'}: label map {plane.shape} does not match "
                                   f"image size {(cam.height, cam.width)}")
        u, v, theta, ok = cam.project(centers)
        col = np.rint(u)
        row = np.rint(v)
        ok &= (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
        win = ok & (theta < best_theta)
        out[win] = plane[row[win].astype(np.intp), col[win].astype(np.intp)]
        best_theta[win] = theta[win]
    return out[None]


def render_ground_labels(cam: FisheyeCamera, label_fn, off_ground: int = IGNORE_LABEL) -> np.ndarray:
    """Analytic label image: each pixel takes ``label_fn(x, y)`` at its ray's ground hit."""
    v, u = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
    pts, hit = cam.pixel_to_ground(u, v)
    du, dv = u - cam.cx, v - cam.cy
    hit &= np.hypot(du, dv) / cam.f < cam.theta_max
    out = np.full((cam.height, cam.width), off_ground, dtype=np.uint32)
    out[hit] = np.asarray(label_fn(pts[..., 0][hit], pts[..., 1][hit]), dtype=np.uint32)
    return out


def checker_labels(x, y, square: float = 1.0) -> np.ndarray:
    """Four-class ground checkerboard."""
    return (np.floor(x / square).astype(np.int64) % 2) + 2 * (np.floor(y / square).astype(np.int64) % 2)


def default_rig(f: float = 320.0, size: int = 1280, height: float = 1.0) -> list[FisheyeCamera]:
    """Front/left/rear/right cameras on a 4 m x 2 m vehicle, tilted 30 degrees down."""
    mounts = [("front", (0.0, 2.0, height), 0.0), ("left", (-1.0, 0.0, height), 270.0),
              ("rear", (0.0, -2.0, height), 180.0), ("right", (1.0, 0.0, height), 90.0)]
    return [look_at_camera(pos, yaw, 30.0, f, size, size, name) for name, pos, yaw in mounts]


def _floats(section, key, count) -> list[float]:
    try:
        vals = [float(t) for t in section[key].replace(",", " ").split()]
    except KeyError as exc:
        raise CalibrationError(f"[{section.name}] missing key {key!r}") from exc
    except ValueError as exc:
        raise CalibrationError(f"[{section.name}] {key} is not numeric") from exc
    if len(vals) != count:
        raise CalibrationError(f"[{section.name}] {key} needs {count} values, got {len(vals)}")
    return vals


def load_rig(path) -> list[FisheyeCamera]:
    """Read an INI calibration file, one ``[camera]`` section per camera, in file order."""
    cp = configparser.ConfigParser()
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise CalibrationError(f"malformed calibration file: {exc}") from exc
    cams = []
    for name in cp.sections():
        s = cp[name]
        f, cx, cy, width, height = (_floats(s, k, 1)[0] for k in ("f", "cx", "cy", "width", "height"))
        theta_max = np.deg2rad(float(s.get("theta_max_deg", np.rad2deg(DEFAULT_THETA_MAX))))
        cams.append(FisheyeCamera(f, cx, cy, int(width), int(height), _floats(s, "rotation", 9),
                                  _floats(s, "translation", 3), theta_max, name))
    if not cams:
        raise CalibrationError("calibration file defines no cameras")
    return cams


def dump_rig(cams, path) -> None:
    cp = configparser.ConfigParser()
    for cam in cams:
        cp[cam.name] = {
            "f": repr(cam.f), "cx": repr(cam.cx), "cy": repr(cam.cy),
            "width": str(cam.width), "height": str(cam.height),
            "rotation": " ".join(repr(float(v)) for v in cam.rotation.ravel()),
            "translation": " ".join(repr(float(v)) for v in cam.translation),
            "theta_max_deg": repr(float(np.rad2deg(cam.theta_max))),
        }
    with open(path, "w") as fh:
        cp.write(fh)


def colorize(labels, ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """RGB uint8 visualisation of a label plane; ignored cells are black."""
    plane = _label_plane(labels)
    rng = np.random.default_rng(12345)
    palette = rng.integers(40, 256, size=(256, 3), dtype=np.uint8)
    palette[ignore_label % 256] = 0
    return palette[plane.astype(np.int64) % 256]
