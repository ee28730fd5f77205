"""Constructed cube sets (at most 10^4 cubes each) for the grains suites.

Points are sampled at unit scale and snapped to cubes of side ``DELTA``.
"""
from __future__ import annotations

import numpy as np

from tubelab.partition_grains import CubeSet

DELTA = 2.0**-10
COUNT = 8000


def _cubes(p):
    return CubeSet.from_points(p, DELTA)


def _rng(k):
    return np.random.default_rng([7, k])


def _sphere(rng, m, n=3):
    x = rng.standard_normal((m, n))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def plane_slab():
    r = _rng(0)
    u = r.uniform(-0.8, 0.8, (COUNT, 2))
    return _cubes(np.column_stack([u, r.uniform(0, DELTA, COUNT)]))


def tilted_plane():
    r = _rng(1)
    n = np.array([1.0, 2.0, 2.0]) / 3
    e1 = np.array([2.0, -1.0, 0.0]) / np.sqrt(5)
    e2 = np.cross(n, e1)
    u = r.uniform(-0.6, 0.6, (COUNT, 2))
    return _cubes(np.outer(u[:, 0], e1) + np.outer(u[:, 1], e2) + 0.1 * n)


def two_slabs():
    r = _rng(2)
    u = r.uniform(-0.7, 0.7, (COUNT, 2))
    z = np.where(np.arange(COUNT) % 2 == 0, 0.25, -0.25)
    return _cubes(np.column_stack([u, z]))


def sphere_shell():
    return _cubes(0.8 * _sphere(_rng(3), COUNT))


def cylinder_shell():
    r = _rng(4)
    t = r.uniform(0, 2 * np.pi, COUNT)
    return _cubes(np.column_stack([0.5 * np.cos(t), 0.5 * np.sin(t), r.uniform(-0.7, 0.7, COUNT)]))


def uniform_ball():
    r = _rng(5)
    x = _sphere(r, 10_000) * (r.random(10_000) ** (1 / 3))[:, None]
    return _cubes(x)


def uniform_cube():
    return _cubes(_rng(6).uniform(-0.6, 0.6, (6000, 3)))


def slab_and_sphere():
    a, b = plane_slab(), sphere_shell()
    return CubeSet(DELTA, np.vstack([a.coords[::2], b.coords[::2]]))


def orthogonal_planes():
    r = _rng(8)
    k = COUNT // 3
    u = r.uniform(-0.6, 0.6, (3, k, 2))
    z = np.full(k, 0.05)
    return _cubes(np.vstack([np.column_stack([u[0], z]), np.column_stack([u[1, :, 0], z + 0.1, u[1, :, 1]]),
                             np.column_stack([z - 0.2, u[2]])]))


def paraboloid():
    u = _rng(9).uniform(-0.6, 0.6, (COUNT, 2))
    return _cubes(np.column_stack([u, (u * u).sum(axis=1) - 0.3]))


CUBE_SETS = {
    "plane_slab": plane_slab,
    "tilted_plane": tilted_plane,
    "two_slabs": two_slabs,
    "sphere_shell": sphere_shell,
    "cylinder_shell": cylinder_shell,
    "uniform_ball": uniform_ball,
    "uniform_cube": uniform_cube,
    "slab_and_sphere": slab_and_sphere,
    "orthogonal_planes": orthogonal_planes,
    "paraboloid": paraboloid,
}
