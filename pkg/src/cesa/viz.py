"""File exports for inspecting scenes and motions: SVG, CSV and JSON."""

from __future__ import annotations

import io
import json

import numpy as np

from .synthworld.motion import MotionSample
from .synthworld.scene import SceneSpec
from .synthworld.skeleton import forward_kinematics, skeleton_for

PX_PER_M = 100.0
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if abs(x) >= 0.005 else "0"


def render_svg(scene: SceneSpec, motions: list[MotionSample]) -> str:
    """Top-down view: room outline, object footprints, one path polyline per motion."""
    w, d = scene.extents[0], scene.extents[1]
    W, H = w * PX_PER_M, d * PX_PER_M

    def pt(x, y):
        return f"{_fmt(x * PX_PER_M)},{_fmt(H - y * PX_PER_M)}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(W)}" height="{_fmt(H)}" '
           f'viewBox="0 0 {_fmt(W)} {_fmt(H)}">',
           f'<rect x="0" y="0" width="{_fmt(W)}" height="{_fmt(H)}" fill="#fafafa" stroke="#333"/>']
    for obj in scene.objects:
        c, s = np.cos(obj.yaw), np.sin(obj.yaw)
        hx, hy = obj.half_extents[0], obj.half_extents[1]
        corners = [(obj.center[0] + c * a - s * b, obj.center[1] + s * a + c * b)
                   for a, b in ((-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy))]
        out.append(f'<polygon points="{" ".join(pt(x, y) for x, y in corners)}" fill="#ddd" '
                   f'stroke="#666"><title>{obj.id}: {obj.category}</title></polygon>')
    for i, m in enumerate(motions):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(pt(x, y) for x, y in np.asarray(m.path)[:, :2])
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        gx, gy = pt(m.goal[0], m.goal[1]).split(",")
        out.append(f'<circle cx="{gx}" cy="{gy}" r="4" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def joints_csv(motions: list[MotionSample]) -> str:
    """One row per (motion, frame, joint) with FK world positions."""
    buf = io.StringIO()
    buf.write("motion,frame,joint,name,x,y,z\n")
    for m in motions:
        sk = skeleton_for((m.frames.shape[1] - 9) // 3)
        pos = forward_kinematics(m.frames.astype(np.float64), sk)
        for n in range(pos.shape[0]):
            for j in range(pos.shape[1]):
                x, y, z = pos[n, j]
                buf.write(f"{m.sample_id},{n},{j},{sk.names[j]},{x:.5f},{y:.5f},{z:.5f}\n")
    return buf.getvalue()


def goals_json(motions: list[MotionSample]) -> str:
    rows = [{"sample_id": m.sample_id, "text": m.text,
             "goal": [round(float(v), 5) for v in m.goal]} for m in motions]
    return json.dumps({"goals": rows}, sort_keys=True, indent=1) + "\n"
