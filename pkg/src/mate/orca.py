"""Optimal reciprocal collision avoidance for disc agents (no static obstacles).

Half-plane construction from the truncated velocity obstacle and the
incremental 2-D linear programs follow the usual RVO2 formulation. A line is
``(point, direction)``; admissible velocities lie to its left.
"""
from __future__ import annotations

import math

import numpy as np

EPS = 1e-5


def _det(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _dot(a, b) -> float:
    return a[0] * b[0] + a[1] * b[1]


def orca_lines(pos, vel, others_pos, others_vel, radius_sum: float, tau: float,
               dt: float, share: float = 0.5) -> list:
    """ORCA half-planes for one agent against each listed neighbour."""
    lines = []
    inv_tau = 1.0 / tau
    rsq = radius_sum * radius_sum
    for p_j, v_j in zip(others_pos, others_vel):
        rel_pos = (p_j[0] - pos[0], p_j[1] - pos[1])
        rel_vel = (vel[0] - v_j[0], vel[1] - v_j[1])
        dist_sq = _dot(rel_pos, rel_pos)
        if dist_sq > rsq:
            w = (rel_vel[0] - inv_tau * rel_pos[0], rel_vel[1] - inv_tau * rel_pos[1])
            w_len_sq = _dot(w, w)
            dot1 = _dot(w, rel_pos)
            if dot1 < 0.0 and dot1 * dot1 > rsq * w_len_sq:
                # closest boundary point is on the cut-off circle
                w_len = math.sqrt(w_len_sq)
                unit = (w[0] / w_len, w[1] / w_len)
                direction = (unit[1], -unit[0])
                k = radius_sum * inv_tau - w_len
                u = (k * unit[0], k * unit[1])
            else:
                leg = math.sqrt(dist_sq - rsq)
                if _det(rel_pos, w) > 0.0:
                    direction = ((rel_pos[0] * leg - rel_pos[1] * radius_sum) / dist_sq,
                                 (rel_pos[0] * radius_sum + rel_pos[1] * leg) / dist_sq)
                else:
                    direction = (-(rel_pos[0] * leg + rel_pos[1] * radius_sum) / dist_sq,
                                 -(-rel_pos[0] * radius_sum + rel_pos[1] * leg) / dist_sq)
                d2 = _dot(rel_vel, direction)
                u = (d2 * direction[0] - rel_vel[0], d2 * direction[1] - rel_vel[1])
        else:
            # already overlapping: resolve within one time step
            inv_dt = 1.0 / dt
            w = (rel_vel[0] - inv_dt * rel_pos[0], rel_vel[1] - inv_dt * rel_pos[1])
            w_len = math.sqrt(_dot(w, w))
            if w_len == 0.0:
                unit = (1.0, 0.0)
            else:
                unit = (w[0] / w_len, w[1] / w_len)
            direction = (unit[1], -unit[0])
            k = radius_sum * inv_dt - w_len
            u = (k * unit[0], k * unit[1])
        point = (vel[0] + share * u[0], vel[1] + share * u[1])
        lines.append((point, direction))
    return lines


def _lp1(lines, no, radius, opt, direction_opt):
    point, direction = lines[no]
    dot = _dot(point, direction)
    disc = dot * dot + radius * radius - _dot(point, point)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for i in range(no):
        p_i, d_i = lines[i]
        denom = _det(direction, d_i)
        numer = _det(d_i, (point[0] - p_i[0], point[1] - p_i[1]))
        if abs(denom) <= EPS:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if _dot(opt, direction) > 0.0 else t_left
    else:
        t = _dot(direction, (opt[0] - point[0], opt[1] - point[1]))
        t = min(max(t, t_left), t_right)
    return (point[0] + t * direction[0], point[1] + t * direction[1])


def _lp2(lines, radius, opt, direction_opt):
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    elif _dot(opt, opt) > radius * radius:
        n = math.sqrt(_dot(opt, opt))
        result = (opt[0] / n * radius, opt[1] / n * radius)
    else:
        result = (opt[0], opt[1])
    for i, (p, d) in enumerate(lines):
        if _det(d, (p[0] - result[0], p[1] - result[1])) > 0.0:
            new = _lp1(lines, i, radius, opt, direction_opt)
            if new is None:
                return i, result
            result = new
    return len(lines), result


def _lp3(lines, begin, radius, result):
    """Minimise the largest violation once the constraints are infeasible."""
    distance = 0.0
    for i in range(begin, len(lines)):
        p_i, d_i = lines[i]
        if _det(d_i, (p_i[0] - result[0], p_i[1] - result[1])) > distance:
            proj = []
            for j in range(i):
                p_j, d_j = lines[j]
                det = _det(d_i, d_j)
                if abs(det) <= EPS:
                    if _dot(d_i, d_j) > 0.0:
                        continue
                    point = (0.5 * (p_i[0] + p_j[0]), 0.5 * (p_i[1] + p_j[1]))
                else:
                    s = _det(d_j, (p_i[0] - p_j[0], p_i[1] - p_j[1])) / det
                    point = (p_i[0] + s * d_i[0], p_i[1] + s * d_i[1])
                dd = (d_j[0] - d_i[0], d_j[1] - d_i[1])
                n = math.sqrt(_dot(dd, dd))
                proj.append((point, (dd[0] / n, dd[1] / n)))
            saved = result
            fail, cand = _lp2(proj, radius, (-d_i[1], d_i[0]), True)
            result = saved if fail < len(proj) else cand
            distance = _det(d_i, (p_i[0] - result[0], p_i[1] - result[1]))
    return result


def solve_velocity(lines, max_speed: float, preferred) -> np.ndarray:
    """Velocity closest to ``preferred`` inside all half-planes and the speed disc."""
    fail, result = _lp2(lines, max_speed, (float(preferred[0]), float(preferred[1])), False)
    if fail < len(lines):
        result = _lp3(lines, fail, max_speed, result)
    return np.array(result, dtype=np.float64)
