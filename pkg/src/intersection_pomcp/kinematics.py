"""Compiled numerical kernels shared by the simulator, the filter and the planner.

Heading convention: a vehicle with heading ``theta`` and speed ``v`` moves with
velocity ``(v * sin(theta), v * cos(theta))``, so ``theta = 0`` points along +y
and ``theta = pi / 2`` along +x.

Every kernel takes plain floats/arrays so it can be called both from Python
wrappers and from inside the jitted tree search.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# CA-layout state vector: [x, vx, ax, y, vy, ay]
IX, IVX, IAX, IY, IVY, IAY = 0, 1, 2, 3, 4, 5

IDM_MIN_ACCEL = -9.0


@njit(cache=True)
def wrap_angle(theta):
    """Map an angle to (-pi, pi]."""
    if -math.pi < theta <= math.pi:
        return theta
    t = theta - 2.0 * math.pi * math.floor((theta + math.pi) / (2.0 * math.pi))
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


@njit(cache=True)
def heading_of(dx, dy):
    return math.atan2(dx, dy)


@njit(cache=True)
def path_pose(s, xs, ys, ss, hs):
    """Pose on a polyline at arclength ``s``.

    ``hs[i]`` is the heading of segment ``i`` (from waypoint i to i+1). Arclengths
    outside ``[0, ss[-1]]`` extrapolate along the first/last segment.
    """
    n = xs.shape[0]
    if s <= 0.0:
        i = 0
    elif s >= ss[n - 1]:
        i = n - 2
    else:
        i = np.searchsorted(ss, s, side="right") - 1
        if i > n - 2:
            i = n - 2
    u = s - ss[i]
    th = hs[i]
    return xs[i] + u * math.sin(th), ys[i] + u * math.cos(th), th


@njit(cache=True)
def advance_along(v, a, dt, vmax):
    """Exact constant-acceleration travel over ``dt`` with speed kept in [0, vmax].

    Returns ``(distance, new_speed)``. Without clamping this is
    ``v*dt + a*dt**2/2`` and ``v + a*dt``.
    """
    v_new = v + a * dt
    if v_new < 0.0:
        # stops part-way through the step and stays stopped
        if a < 0.0:
            return v * v / (-2.0 * a), 0.0
        return 0.0, 0.0
    if v_new > vmax:
        if a > 0.0 and v < vmax:
            t_cap = (vmax - v) / a
            return v * t_cap + 0.5 * a * t_cap * t_cap + vmax * (dt - t_cap), vmax
        return vmax * dt, vmax
    return v * dt + 0.5 * a * dt * dt, v_new


@njit(cache=True)
def to_model_vector(x, y, theta, v, a):
    out = np.empty(6)
    st = math.sin(theta)
    ct = math.cos(theta)
    out[IX] = x
    out[IVX] = v * st
    out[IAX] = a * st
    out[IY] = y
    out[IVY] = v * ct
    out[IAY] = a * ct
    return out


@njit(cache=True)
def from_components(px, vx, ax, py, vy, ay, theta_prev):
    """Map CA-layout components back to (x, y, theta, v, a).

    Heading follows the velocity direction. A velocity pointing backwards
    relative to ``theta_prev`` means the vehicle stopped during the step: speed
    is clamped to 0 and the heading kept.
    """
    st = math.sin(theta_prev)
    ct = math.cos(theta_prev)
    along = vx * st + vy * ct
    if along <= 0.0:
        return px, py, theta_prev, 0.0, ax * st + ay * ct
    v = math.sqrt(vx * vx + vy * vy)
    if v <= 0.0:
        return px, py, theta_prev, 0.0, ax * st + ay * ct
    # unit velocity direction gives sin/cos of the new heading without trig calls
    sn = vx / v
    cn = vy / v
    return px, py, math.atan2(vx, vy), v, ax * sn + ay * cn


@njit(cache=True)
def from_model_vector(vec, theta_prev):
    return from_components(vec[IX], vec[IVX], vec[IAX], vec[IY], vec[IVY], vec[IAY], theta_prev)


@njit(cache=True)
def linear_gaussian_step_draw(x, y, theta, v, a, f3, l3, rng):
    """As :func:`linear_gaussian_step`, drawing the six normals from ``rng``."""
    return linear_gaussian_step_n(
        x, y, theta, v, a, f3, l3,
        rng.standard_normal(), rng.standard_normal(), rng.standard_normal(),
        rng.standard_normal(), rng.standard_normal(), rng.standard_normal(),
    )


@njit(cache=True)
def linear_gaussian_step_n(x, y, theta, v, a, f3, l3, n0, n1, n2, n3, n4, n5):
    st = math.sin(theta)
    ct = math.cos(theta)
    vx, ax = v * st, a * st
    vy, ay = v * ct, a * ct
    px1 = f3[0, 0] * x + f3[0, 1] * vx + f3[0, 2] * ax + l3[0, 0] * n0 + l3[0, 1] * n1 + l3[0, 2] * n2
    vx1 = f3[1, 0] * x + f3[1, 1] * vx + f3[1, 2] * ax + l3[1, 0] * n0 + l3[1, 1] * n1 + l3[1, 2] * n2
    ax1 = f3[2, 0] * x + f3[2, 1] * vx + f3[2, 2] * ax + l3[2, 0] * n0 + l3[2, 1] * n1 + l3[2, 2] * n2
    py1 = f3[0, 0] * y + f3[0, 1] * vy + f3[0, 2] * ay + l3[0, 0] * n3 + l3[0, 1] * n4 + l3[0, 2] * n5
    vy1 = f3[1, 0] * y + f3[1, 1] * vy + f3[1, 2] * ay + l3[1, 0] * n3 + l3[1, 1] * n4 + l3[1, 2] * n5
    ay1 = f3[2, 0] * y + f3[2, 1] * vy + f3[2, 2] * ay + l3[2, 0] * n3 + l3[2, 1] * n4 + l3[2, 2] * n5
    return from_components(px1, vx1, ax1, py1, vy1, ay1, theta)


@njit(cache=True)
def linear_gaussian_step(x, y, theta, v, a, f3, l3, noise):
    """One draw of N(T s, Q) for a vehicle with T = kron(I2, f3), Q = kron(I2, l3 l3^T).

    The per-axis blocks act on (position, velocity, acceleration); a
    constant-velocity model is embedded with a zero acceleration row.
    ``noise`` holds six standard normals (x axis first, then y axis).
    """
    return linear_gaussian_step_n(x, y, theta, v, a, f3, l3,
                                  noise[0], noise[1], noise[2], noise[3], noise[4], noise[5])


@njit(cache=True)
def rect_overlap(x1, y1, th1, l1, w1, x2, y2, th2, l2, w2):
    """Closed-set intersection test for two oriented rectangles (separating axes).

    Rectangles are centred at (x, y), length ``l`` along the heading and width ``w``.
    Touching boundaries count as overlap.
    """
    dx = x2 - x1
    dy = y2 - y1
    # cheap reject on circumscribed circles
    r1 = 0.5 * math.sqrt(l1 * l1 + w1 * w1)
    r2 = 0.5 * math.sqrt(l2 * l2 + w2 * w2)
    if dx * dx + dy * dy > (r1 + r2) * (r1 + r2):
        return False
    s1 = math.sin(th1)
    c1 = math.cos(th1)
    s2 = math.sin(th2)
    c2 = math.cos(th2)
    # unit axes: along heading (s, c), across (c, -s)
    axes = ((s1, c1), (c1, -s1), (s2, c2), (c2, -s2))
    for k in range(4):
        ax, ay = axes[k]
        dist = abs(dx * ax + dy * ay)
        p1 = 0.5 * l1 * abs(s1 * ax + c1 * ay) + 0.5 * w1 * abs(c1 * ax - s1 * ay)
        p2 = 0.5 * l2 * abs(s2 * ax + c2 * ay) + 0.5 * w2 * abs(c2 * ax - s2 * ay)
        if dist > p1 + p2:
            return False
    return True


@njit(cache=True)
def idm_accel_kernel(v, gap, dv, v0, headway, s0, a_max, b_comf, delta):
    """IDM acceleration clamped to [IDM_MIN_ACCEL, a_max]; ``gap = inf`` is free road."""
    free = a_max * (1.0 - (v / v0) ** delta)
    if math.isinf(gap):
        acc = free
    else:
        s_star = s0 + v * headway + v * dv / (2.0 * math.sqrt(a_max * b_comf))
        acc = free - a_max * (s_star / gap) ** 2
    if acc < IDM_MIN_ACCEL:
        return IDM_MIN_ACCEL
    if acc > a_max:
        return a_max
    return acc


@njit(cache=True)
def ttc_kernel(ego_x, ego_vx, x, vx):
    """Time for a main-road vehicle to reach the line x = ego_x.

    Distance is measured along the lane (main-road lanes run parallel to x);
    the approach speed is the vehicle's x-velocity relative to the ego's, taken
    towards the line. Receding or passed vehicles give +inf.
    """
    d = ego_x - x
    rel = vx - ego_vx
    if d == 0.0:
        return 0.0
    if d < 0.0:
        d = -d
        rel = -rel
    if rel <= 0.0:
        return math.inf
    return d / rel


@njit(cache=True)
def snap_to_actions(acc, actions):
    """Nearest action value; ties go to the smaller magnitude."""
    best = actions[0]
    best_d = abs(acc - best)
    for i in range(1, actions.shape[0]):
        d = abs(acc - actions[i])
        if d < best_d - 1e-12 or (abs(d - best_d) <= 1e-12 and abs(actions[i]) < abs(best)):
            best = actions[i]
            best_d = d
    return best
