"""Deterministic software rasterizer for box scenes.

Box faces are split into triangles, clipped against the near plane,
back-face culled and z-buffered with perspective-correct depth (1/z is
affine in screen space for planar primitives, so interpolated depth is exact
up to rounding). Shading is Lambertian under one fixed world-frame light plus
an ambient floor. Detail (floor bands, windows, parapets) is resolved per
pixel from face-local coordinates, so shoebox and detailed renders of a pair
share one depth map.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image as PILImage

from .camera import CameraPose, CameraRig, rig_poses
from .errors import ResolutionTooSmall
from .scene import Box, DetailedScene, RoofStyle, ShoeboxScene

Scene = Union[ShoeboxScene, DetailedScene]

BACKGROUND = np.array([1.0, 1.0, 1.0], dtype=np.float32)
AMBIENT = 0.3
LIGHT_DIR = np.array([0.5, 0.3, 0.8]) / np.linalg.norm([0.5, 0.3, 0.8])
SHOEBOX_GRAY = 0.8
NEAR = 1e-4
MIN_RESOLUTION = 8

# Face order per box: -x, +x, -y, +y, -z, +z.
FACE_NORMALS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=float
)


@dataclass(frozen=True, eq=False)
class Image:
    """Channel-last RGB image with values in [0, 1]."""

    data: np.ndarray  # (H, W, 3)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Camera-forward depth with a validity mask (False = background)."""

    data: np.ndarray  # (H, W) float64, 0 where invalid
    mask: np.ndarray  # (H, W) bool
    relative: bool = False

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ViewRecord:
    view_index: int
    pose: CameraPose
    rgb: Image
    depth: DepthMap


@dataclass(frozen=True, eq=False)
class ViewBundle:
    scene_id: str
    views: tuple[ViewRecord, ...]

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise ValueError("a view bundle needs at least one view")
        idx = [v.view_index for v in views]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("view indices must be strictly increasing")
        shapes = {v.rgb.data.shape for v in views}
        if len(shapes) != 1:
            raise ValueError("all views must share one resolution")
        object.__setattr__(self, "views", views)

    def __len__(self) -> int:
        return len(self.views)

    def rgb_array(self) -> np.ndarray:
        """(N, H, W, 3) stack of the view images."""
        return np.stack([v.rgb.data for v in self.views])

    def depth_array(self) -> np.ndarray:
        return np.stack([v.depth.data for v in self.views])

    def mask_array(self) -> np.ndarray:
        return np.stack([v.depth.mask for v in self.views])

    def azimuths(self) -> np.ndarray:
        return np.array([v.pose.azimuth for v in self.views])

    def window(self, start: int, length: int) -> "ViewBundle":
        """``length`` consecutive views starting at position ``start``."""
        if start < 0 or length < 1 or start + length > len(self.views):
            raise ValueError(f"window [{start}, {start + length}) outside a {len(self.views)}-view bundle")
        return ViewBundle(self.scene_id, self.views[start : start + length])


@dataclass(frozen=True, eq=False)
class Raster:
    depth: np.ndarray  # (H, W), inf where empty
    face_id: np.ndarray  # (H, W), box * 6 + face, -1 where empty


def _check_resolution(resolution):
    w, h = resolution
    if w < MIN_RESOLUTION or h < MIN_RESOLUTION:
        raise ResolutionTooSmall(f"resolution {w}x{h} is below {MIN_RESOLUTION}x{MIN_RESOLUTION}")


def box_face_quads(box: Box) -> np.ndarray:
    """(6, 4, 3) corner loops of the box faces in FACE_NORMALS order."""
    (x0, y0, z0), (x1, y1, z1) = box.min_corner, box.max_corner
    return np.array(
        [
            [[x0, y0, z0], [x0, y0, z1], [x0, y1, z1], [x0, y1, z0]],
            [[x1, y0, z0], [x1, y1, z0], [x1, y1, z1], [x1, y0, z1]],
            [[x0, y0, z0], [x1, y0, z0], [x1, y0, z1], [x0, y0, z1]],
            [[x0, y1, z0], [x0, y1, z1], [x1, y1, z1], [x1, y1, z0]],
            [[x0, y0, z0], [x0, y1, z0], [x1, y1, z0], [x1, y0, z0]],
            [[x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]],
        ]
    )


def _clip_near(poly: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a camera-space polygon against z >= NEAR."""
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        a_in, b_in = a[2] >= NEAR, b[2] >= NEAR
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (NEAR - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return np.array(out)


def _raster_triangle(tri_cam, k, depth, face_id, fid):
    h, w = depth.shape
    z = tri_cam[:, 2]
    u = k[0, 0] * tri_cam[:, 0] / z + k[0, 2]
    v = k[1, 1] * tri_cam[:, 1] / z + k[1, 2]
    area = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0])
    if area == 0.0:
        return
    i0 = max(int(np.floor(u.min() - 0.5)), 0)
    i1 = min(int(np.ceil(u.max() - 0.5)), w - 1)
    j0 = max(int(np.floor(v.min() - 0.5)), 0)
    j1 = min(int(np.ceil(v.max() - 0.5)), h - 1)
    if i0 > i1 or j0 > j1:
        return
    px, py = np.meshgrid(np.arange(i0, i1 + 1) + 0.5, np.arange(j0, j1 + 1) + 0.5)
    l0 = ((u[1] - px) * (v[2] - py) - (v[1] - py) * (u[2] - px)) / area
    l1 = ((u[2] - px) * (v[0] - py) - (v[2] - py) * (u[0] - px)) / area
    l2 = 1.0 - l0 - l1
    eps = -1e-9
    inside = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
    if not inside.any():
        return
    with np.errstate(divide="ignore", invalid="ignore"):
        zz = 1.0 / (l0 / z[0] + l1 / z[1] + l2 / z[2])
    sub_d = depth[j0 : j1 + 1, i0 : i1 + 1]
    sub_f = face_id[j0 : j1 + 1, i0 : i1 + 1]
    win = inside & (zz < sub_d)
    sub_d[win] = zz[win]
    sub_f[win] = fid


def rasterize(boxes: Sequence[Box], pose: CameraPose, resolution: tuple[int, int]) -> Raster:
    """Z-buffer the faces of ``boxes``; returns per-pixel depth and face id."""
    _check_resolution(resolution)
    w, h = resolution
    depth = np.full((h, w), np.inf)
    face_id = np.full((h, w), -1, dtype=np.int64)
    k = pose.intrinsic(resolution)
    eye = pose.center
    for b, box in enumerate(boxes):
        quads = box_face_quads(box)
        for f in range(6):
            quad = quads[f]
            if FACE_NORMALS[f] @ (eye - quad[0]) <= 0.0:
                continue
            poly = _clip_near(pose.world_to_camera(quad))
            for t in range(1, len(poly) - 1):
                _raster_triangle(poly[[0, t, t + 1]], k, depth, face_id, b * 6 + f)
    return Raster(depth, face_id)


def pixel_rays(pose: CameraPose, resolution: tuple[int, int]) -> np.ndarray:
    """(H, W, 3) world-frame ray directions scaled to unit camera-forward component."""
    w, h = resolution
    k = pose.intrinsic(resolution)
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    cam = np.stack([(px - k[0, 2]) / k[0, 0], (py - k[1, 2]) / k[1, 1], np.ones_like(px)], axis=-1)
    return cam @ pose.rotation


def _lambert(face_id: np.ndarray) -> np.ndarray:
    normals = FACE_NORMALS[face_id % 6]
    return np.minimum(1.0, AMBIENT + (1.0 - AMBIENT) * np.maximum(0.0, normals @ LIGHT_DIR))


def _detail_albedo(scene: DetailedScene, face_id, points) -> np.ndarray:
    palette = np.asarray(scene.facade_palette, dtype=float) / 255.0
    wall, window, roof = palette
    albedo = np.empty((len(face_id), 3))
    albedo[:] = wall
    boxes = scene.base.boxes
    for b, box in enumerate(boxes):
        sel_box = face_id // 6 == b
        if not sel_box.any():
            continue
        lo, hi = np.asarray(box.min_corner), np.asarray(box.max_corner)
        ext = hi - lo
        floors = scene.floor_count_per_box[b]
        _, cols = scene.window_grid[b]
        long_extent = float(max(ext[0], ext[1]))
        floor_h = ext[2] / floors
        for f in range(4):
            sel = sel_box & (face_id % 6 == f)
            if not sel.any():
                continue
            p = points[sel] - lo
            axis = 1 if f < 2 else 0
            width = ext[axis]
            cols_face = max(1, int(round(cols * width / long_extent)))
            fz = p[:, 2] / floor_h
            level = np.floor(fz)
            fz = fz - level
            fs = p[:, axis] / width * cols_face
            fs = fs - np.floor(fs)
            is_window = (fs > 0.25) & (fs < 0.75) & (fz > 0.3) & (fz < 0.8)
            is_band = (fz < 0.06) & (level >= 1)
            col = np.empty((int(sel.sum()), 3))
            col[:] = wall
            col[is_band] = wall * 0.75
            col[is_window] = window
            albedo[sel] = col
        top = sel_box & (face_id % 6 == 5)
        if top.any():
            col = np.empty((int(top.sum()), 3))
            col[:] = roof
            if scene.roof_style is RoofStyle.PARAPET:
                p = points[top]
                margin = 0.8
                edge = (
                    (p[:, 0] - lo[0] < margin)
                    | (hi[0] - p[:, 0] < margin)
                    | (p[:, 1] - lo[1] < margin)
                    | (hi[1] - p[:, 1] < margin)
                )
                col[edge] = wall
            albedo[top] = col
    return albedo


def shade(scene: Scene, raster: Raster, pose: CameraPose) -> Image:
    h, w = raster.depth.shape
    out = np.empty((h, w, 3), dtype=np.float32)
    out[:] = BACKGROUND
    hit = raster.face_id >= 0
    if not hit.any():
        return Image(out)
    fid = raster.face_id[hit]
    light = _lambert(fid)[:, None]
    if isinstance(scene, DetailedScene):
        rays = pixel_rays(pose, (w, h))[hit]
        points = pose.center + rays * raster.depth[hit][:, None]
        albedo = _detail_albedo(scene, fid, points)
    else:
        albedo = np.full((len(fid), 3), SHOEBOX_GRAY)
    out[hit] = (albedo * light).astype(np.float32)
    return Image(out)


def depth_from_raster(raster: Raster) -> DepthMap:
    mask = raster.face_id >= 0
    return DepthMap(np.where(mask, raster.depth, 0.0), mask)


def render_view(scene: Scene, pose: CameraPose, resolution: tuple[int, int]) -> tuple[Image, DepthMap]:
    """Render RGB and camera-forward depth of ``scene`` seen from ``pose``."""
    raster = rasterize(scene.boxes, pose, resolution)
    return shade(scene, raster, pose), depth_from_raster(raster)


def render_pair(
    shoebox: ShoeboxScene, detailed: DetailedScene, pose: CameraPose, resolution: tuple[int, int]
) -> tuple[Image, Image, DepthMap]:
    """Shoebox RGB, detailed RGB and their shared depth from one rasterization."""
    raster = rasterize(shoebox.boxes, pose, resolution)
    return shade(shoebox, raster, pose), shade(detailed, raster, pose), depth_from_raster(raster)


def render_bundle(scene: Scene, rig: CameraRig, resolution: tuple[int, int]) -> ViewBundle:
    _check_resolution(resolution)
    views = []
    for k, pose in enumerate(rig_poses(rig, scene.bounding_sphere())):
        rgb, depth = render_view(scene, pose, resolution)
        views.append(ViewRecord(k, pose, rgb, depth))
    return ViewBundle(scene.scene_id, tuple(views))


# -- PNG interchange ---------------------------------------------------------


def save_rgb_png(image: Image | np.ndarray, path: str | Path) -> Path:
    data = image.data if isinstance(image, Image) else np.asarray(image)
    arr = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path, optimize=False)
    return path


def load_rgb_png(path: str | Path) -> Image:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return Image(arr)


def encode_depth(depth: DepthMap) -> tuple[np.ndarray, float, float]:
    """16-bit codes: 0 = invalid, valid depths mapped linearly onto [1, 65535]."""
    codes = np.zeros(depth.data.shape, dtype=np.uint16)
    if not depth.mask.any():
        return codes, 0.0, 0.0
    valid = depth.data[depth.mask]
    dmin, dmax = float(valid.min()), float(valid.max())
    span = dmax - dmin
    scaled = (valid - dmin) / span if span > 0 else np.zeros_like(valid)
    codes[depth.mask] = (1 + np.rint(scaled * 65534.0)).astype(np.uint16)
    return codes, dmin, dmax


def decode_depth(codes: np.ndarray, depth_min: float, depth_max: float, relative: bool = False) -> DepthMap:
    codes = np.asarray(codes)
    mask = codes > 0
    data = np.zeros(codes.shape)
    data[mask] = depth_min + (codes[mask].astype(float) - 1.0) / 65534.0 * (depth_max - depth_min)
    return DepthMap(data, mask, relative=relative)


def save_depth_png(depth: DepthMap, path: str | Path) -> tuple[float, float]:
    codes, dmin, dmax = encode_depth(depth)
    PILImage.fromarray(codes).save(path, optimize=False)
    return dmin, dmax


def load_depth_png(path: str | Path, depth_min: float, depth_max: float, relative: bool = False) -> DepthMap:
    with PILImage.open(path) as im:
        codes = np.asarray(im, dtype=np.uint16)
    return decode_depth(codes, depth_min, depth_max, relative)
