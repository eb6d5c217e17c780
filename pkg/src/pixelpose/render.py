"""Flat-shaded triangle rasterizer with a z-buffer.

Renders colored world-space triangles through a pinhole CameraModel into an
RGB image and a camera-depth map. Depth is interpolated perspective-
correctly (1/z is affine in screen space for a planar triangle), so a pixel
deprojected at its stored depth lands exactly on the triangle surface and
reprojects onto itself. Pixels hit by no triangle carry the invalid-depth
sentinel 0.
"""

from __future__ import annotations

import numpy as np

from .geometry import CameraModel, Pose, quat_to_matrix

NEAR_PLANE = 0.02


def box_triangles(pose: Pose, half_extents: np.ndarray) -> np.ndarray:
    """12 world-space triangles (12, 3, 3) of an oriented box."""
    hx, hy, hz = half_extents
    corners = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    )
    corners = corners @ quat_to_matrix(pose.rotation).T + pose.translation
    faces = [
        (0, 1, 2), (0, 2, 3),  # bottom
        (4, 6, 5), (4, 7, 6),  # top
        (0, 4, 5), (0, 5, 1),  # -y
        (3, 2, 6), (3, 6, 7),  # +y
        (0, 3, 7), (0, 7, 4),  # -x
        (1, 5, 6), (1, 6, 2),  # +x
    ]
    return corners[np.array(faces)]


def quad_triangles(corners: np.ndarray) -> np.ndarray:
    """Two triangles (2, 3, 3) covering a planar quad given 4 corners."""
    c = np.asarray(corners, dtype=np.float64)
    return np.stack([c[[0, 1, 2]], c[[0, 2, 3]]])


def rasterize(
    triangles: np.ndarray,
    colors: np.ndarray,
    cam: CameraModel,
    background: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Render triangles to (rgb uint8 (H,W,3), depth float64 (H,W)).

    triangles: (T, 3, 3) world-space vertices; colors: (T, 3) in 0..255,
    constant per triangle. Triangles with any vertex closer than the near
    plane are culled (scenes here keep all geometry well in front).
    """
    h, w = cam.height, cam.width
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    rgb[:] = np.asarray(background, dtype=np.uint8)
    zbuf = np.full((h, w), np.inf)

    r = cam.extrinsics[:3, :3]
    t = cam.extrinsics[:3, 3]
    verts_cam = (triangles.reshape(-1, 3) - t) @ r  # camera frame
    verts_cam = verts_cam.reshape(-1, 3, 3)

    for tri, color in zip(verts_cam, colors):
        z = tri[:, 2]
        if np.any(z < NEAR_PLANE):
            continue
        inv_z = 1.0 / z
        u = cam.fx * tri[:, 0] * inv_z + cam.cx
        v = cam.fy * tri[:, 1] * inv_z + cam.cy
        x0 = max(0, int(np.ceil(u.min())))
        x1 = min(w - 1, int(np.floor(u.max())))
        y0 = max(0, int(np.ceil(v.min())))
        y1 = min(h - 1, int(np.floor(v.max())))
        if x0 > x1 or y0 > y1:
            continue
        denom = (v[1] - v[2]) * (u[0] - u[2]) + (u[2] - u[1]) * (v[0] - v[2])
        if abs(denom) < 1e-12:
            continue
        gx = np.arange(x0, x1 + 1, dtype=np.float64)[None, :]
        gy = np.arange(y0, y1 + 1, dtype=np.float64)[:, None]
        l0 = ((v[1] - v[2]) * (gx - u[2]) + (u[2] - u[1]) * (gy - v[2])) / denom
        l1 = ((v[2] - v[0]) * (gx - u[2]) + (u[0] - u[2]) * (gy - v[2])) / denom
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        if not inside.any():
            continue
        depth = 1.0 / (l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2])
        window = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        closer = inside & (depth < window)
        window[closer] = depth[closer]
        rgb[y0 : y1 + 1, x0 : x1 + 1][closer] = np.asarray(color, dtype=np.uint8)

    depth_map = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return rgb, depth_map
