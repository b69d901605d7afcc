#!/usr/bin/env python3
"""Regenerates data/anchor_poses.csv from the hand-authored joint layouts below.

Poses are authored in meters (x right, y up, z toward the viewer negative) for a
nominal pedestrian, then normalized to a unit-height, origin-centered frame with
y pointing down. The 2D columns (u, v) place the pose in the unit box of the
0.8 m x 1.8 m anchor template, feet on the bottom edge.
"""
import sys

TEMPLATE_W, TEMPLATE_H = 0.8, 1.8

JOINTS = ["head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
          "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle"]


def mirror(pose):
    swap = {1: 2, 2: 1, 3: 4, 4: 3, 5: 6, 6: 5, 7: 8, 8: 7, 9: 10, 10: 9, 11: 12, 12: 11}
    out = [None] * 13
    for j, (x, y, z) in enumerate(pose):
        out[swap.get(j, j)] = (-x, y, z)
    return out


STAND = [(0.00, 1.68, 0.00), (0.19, 1.44, 0.00), (-0.19, 1.44, 0.00),
         (0.22, 1.15, 0.02), (-0.22, 1.15, 0.02), (0.23, 0.88, 0.03),
         (-0.23, 0.88, 0.03), (0.11, 0.94, 0.00), (-0.11, 0.94, 0.00),
         (0.11, 0.50, 0.02), (-0.11, 0.50, 0.02), (0.11, 0.08, 0.00),
         (-0.11, 0.08, 0.00)]

WALK_LEFT = [(-0.04, 1.66, 0.00), (0.17, 1.42, 0.00), (-0.19, 1.42, 0.00),
             (0.04, 1.14, 0.03), (-0.30, 1.16, 0.00), (-0.08, 0.90, 0.05),
             (-0.34, 0.92, -0.02), (0.09, 0.93, 0.00), (-0.11, 0.93, 0.00),
             (-0.12, 0.51, 0.04), (0.20, 0.50, 0.02), (-0.30, 0.10, 0.00),
             (0.29, 0.09, 0.03)]

WIDE = [(0.00, 1.62, 0.00), (0.19, 1.39, 0.00), (-0.19, 1.39, 0.00),
        (0.26, 1.11, 0.02), (-0.26, 1.11, 0.02), (0.29, 0.85, 0.03),
        (-0.29, 0.85, 0.03), (0.13, 0.90, 0.00), (-0.13, 0.90, 0.00),
        (0.24, 0.48, 0.02), (-0.24, 0.48, 0.02), (0.34, 0.08, 0.00),
        (-0.34, 0.08, 0.00)]

ARMS_RAISED = [(0.00, 1.68, 0.00), (0.19, 1.44, 0.00), (-0.19, 1.44, 0.00),
               (0.29, 1.71, 0.02), (-0.29, 1.71, 0.02), (0.27, 1.98, 0.02),
               (-0.27, 1.98, 0.02), (0.11, 0.94, 0.00), (-0.11, 0.94, 0.00),
               (0.11, 0.50, 0.02), (-0.11, 0.50, 0.02), (0.11, 0.08, 0.00),
               (-0.11, 0.08, 0.00)]

SIT = [(0.00, 1.25, 0.04), (0.19, 1.02, 0.04), (-0.19, 1.02, 0.04),
       (0.24, 0.76, 0.00), (-0.24, 0.76, 0.00), (0.20, 0.56, -0.06),
       (-0.20, 0.56, -0.06), (0.12, 0.55, 0.05), (-0.12, 0.55, 0.05),
       (0.14, 0.50, -0.10), (-0.14, 0.50, -0.10), (0.13, 0.08, -0.08),
       (-0.13, 0.08, -0.08)]

LEAN_FORWARD = [(0.00, 1.56, -0.12), (0.19, 1.35, -0.08), (-0.19, 1.35, -0.08),
                (0.21, 1.07, -0.09), (-0.21, 1.07, -0.09), (0.20, 0.82, -0.08),
                (-0.20, 0.82, -0.08), (0.11, 0.93, 0.02), (-0.11, 0.93, 0.02),
                (0.11, 0.50, 0.01), (-0.11, 0.50, 0.01), (0.11, 0.08, 0.03),
                (-0.11, 0.08, 0.03)]

WAVE = [(0.00, 1.68, 0.00), (0.19, 1.44, 0.00), (-0.19, 1.44, 0.00),
        (0.22, 1.15, 0.02), (-0.33, 1.52, 0.00), (0.23, 0.88, 0.03),
        (-0.31, 1.83, 0.00), (0.11, 0.94, 0.00), (-0.11, 0.94, 0.00),
        (0.11, 0.50, 0.02), (-0.11, 0.50, 0.02), (0.11, 0.08, 0.00),
        (-0.11, 0.08, 0.00)]

POSES = [("stand", STAND), ("walk_left", WALK_LEFT),
         ("walk_right", mirror(WALK_LEFT)), ("wide_stance", WIDE),
         ("arms_raised", ARMS_RAISED), ("sit", SIT),
         ("lean_forward", LEAN_FORWARD), ("wave", WAVE)]


def normalize(pose):
    xs = [p[0] for p in pose]
    ys = [-p[1] for p in pose]
    zs = [p[2] for p in pose]
    span = max(ys) - min(ys)
    cx, cy, cz = (max(xs) + min(xs)) / 2, (max(ys) + min(ys)) / 2, (max(zs) + min(zs)) / 2
    return [((x - cx) / span, (y - cy) / span, (z - cz) / span) for x, y, z in zip(xs, ys, zs)]


def main():
    out = sys.stdout if len(sys.argv) < 2 else open(sys.argv[1], "w")
    out.write("# canonical anchor poses: unit-height origin-centered 3D (y down) and unit-box 2D\n")
    out.write("# " + " ".join(f"{i + 1}={n}" for i, (n, _) in enumerate(POSES)) + "\n")
    out.write("pose_id,joint_id,x,y,z,u,v\n")
    aspect = TEMPLATE_H / TEMPLATE_W
    for pid, (name, pose) in enumerate(POSES, start=1):
        for jid, (x, y, z) in enumerate(normalize(pose)):
            u, v = 0.5 + x * aspect, y + 0.5
            assert 0.0 <= u <= 1.0 and 0.0 <= v <= 1.0, (name, jid, u, v)
            assert abs(z) <= 0.08, (name, jid, z)
            out.write(f"{pid},{jid},{x:.6f},{y:.6f},{z:.6f},{u:.6f},{v:.6f}\n")


if __name__ == "__main__":
    main()
