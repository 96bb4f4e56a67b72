"""Compressible Euler physics and the patch/halo/face data model.

A state is a numpy array whose last axis holds (rho, mx, my, E). All kernel
arithmetic is written so that a scalar re-evaluation of the same formulas is
bit-identical: plain elementwise ops, no fused rearrangements.
"""

import hashlib
import math

import numpy as np

RHO, MX, MY, EN = 0, 1, 2, 3

LEFT, RIGHT, BOTTOM, TOP = "left", "right", "bottom", "top"
DIRECTIONS = (LEFT, RIGHT, BOTTOM, TOP)
OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, BOTTOM: TOP, TOP: BOTTOM}
_OFFSET = {LEFT: (-1, 0), RIGHT: (1, 0), BOTTOM: (0, -1), TOP: (0, 1)}


class InadmissibleStateError(ValueError):
    """Density or pressure dropped to <= 0; carries the violating volume index."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class StaleHaloError(RuntimeError):
    """A halo strip was read at the wrong generation: a scheduling bug."""


def pressure(u, gamma, validate=True):
    """Ideal-gas pressure of conserved state(s) with last axis (rho, mx, my, E)."""
    u = np.asarray(u)
    rho = u[..., RHO]
    mx = u[..., MX]
    my = u[..., MY]
    e = u[..., EN]
    if validate and np.min(rho) <= 0.0:
        raise InadmissibleStateError("non-positive density", index=_first_bad(rho))
    p = (gamma - 1.0) * (e - (mx * mx + my * my) / (2.0 * rho))
    if validate and np.min(p) <= 0.0:
        raise InadmissibleStateError("non-positive pressure", index=_first_bad(p))
    return p


def _first_bad(field):
    bad = np.argwhere(np.asarray(field) <= 0.0)
    return tuple(bad[0]) if len(bad) else None


def physical_flux(u, axis, gamma, validate=True):
    """Euler flux along axis 'x' or 'y'; returns array shaped like u."""
    u = np.asarray(u)
    p = pressure(u, gamma, validate=validate)
    rho = u[..., RHO]
    mx = u[..., MX]
    my = u[..., MY]
    e = u[..., EN]
    if axis == "x":
        f = np.stack([mx, mx * mx / rho + p, mx * my / rho, (e + p) * mx / rho], axis=-1)
    elif axis == "y":
        f = np.stack([my, mx * my / rho, my * my / rho + p, (e + p) * my / rho], axis=-1)
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    return f


def max_eigenvalue(u, axis, gamma, validate=True):
    """|u_axis| + c, the largest characteristic speed along the axis."""
    u = np.asarray(u)
    p = pressure(u, gamma, validate=validate)
    rho = u[..., RHO]
    m = u[..., MX] if axis == "x" else u[..., MY]
    return np.abs(m / rho) + np.sqrt(gamma * p / rho)


def rusanov_flux(ul, ur, axis, gamma, validate=True):
    """Rusanov (local Lax-Friedrichs) numerical flux between two states."""
    ul = np.asarray(ul)
    ur = np.asarray(ur)
    fl = physical_flux(ul, axis, gamma, validate=validate)
    fr = physical_flux(ur, axis, gamma, validate=validate)
    lam = np.maximum(max_eigenvalue(ul, axis, gamma, validate=False),
                     max_eigenvalue(ur, axis, gamma, validate=False))
    return 0.5 * (fl + fr) - 0.5 * lam[..., None] * (ur - ul)


def admissible_dt(lambda_global, h, cfl):
    """Largest stable time step for the next update."""
    if lambda_global <= 0.0:
        raise ValueError(f"global eigenvalue must be positive, got {lambda_global}")
    return cfl * h / lambda_global


def update_patch(interior, halo, dt, h, gamma):
    """Advance one patch by one first-order finite-volume step.

    interior: (n, n, 4) with axes (iy, ix, component); halo: dict of four
    (n, 4) strips keyed by direction. Pure function: returns the new interior
    and the maximal eigenvalue of the new state over both axes.
    """
    n = interior.shape[0]
    ext_x = np.empty((n, n + 2, 4))
    ext_x[:, 0, :] = halo[LEFT]
    ext_x[:, 1:-1, :] = interior
    ext_x[:, -1, :] = halo[RIGHT]
    fx = rusanov_flux(ext_x[:, :-1, :], ext_x[:, 1:, :], "x", gamma, validate=False)

    ext_y = np.empty((n + 2, n, 4))
    ext_y[0, :, :] = halo[BOTTOM]
    ext_y[1:-1, :, :] = interior
    ext_y[-1, :, :] = halo[TOP]
    fy = rusanov_flux(ext_y[:-1, :, :], ext_y[1:, :, :], "y", gamma, validate=False)

    new = interior - (dt / h) * (fx[:, 1:, :] - fx[:, :-1, :] + fy[1:, :, :] - fy[:-1, :, :])

    rho = new[..., RHO]
    if np.min(rho) <= 0.0:
        raise InadmissibleStateError("non-positive density after update",
                                     index=_first_bad(rho))
    p = pressure(new, gamma, validate=False)
    if np.min(p) <= 0.0:
        raise InadmissibleStateError("non-positive pressure after update",
                                     index=_first_bad(p))
    eig_x = np.abs(new[..., MX] / rho) + np.sqrt(gamma * p / rho)
    eig_y = np.abs(new[..., MY] / rho) + np.sqrt(gamma * p / rho)
    lam = max(float(np.max(eig_x)), float(np.max(eig_y)))
    return new, lam


def neighbor(grid_pos, direction, m):
    """Torus neighbor of (ix, iy) on the periodic M x M patch grid."""
    ix, iy = grid_pos
    dx, dy = _OFFSET[direction]
    return ((ix + dx) % m, (iy + dy) % m)


class MeshConfig:
    """Geometry and gas constants of the M x M patch grid on the unit square."""

    def __init__(self, m, n, gamma=1.4, cfl=0.4):
        k = round(math.log(m, 3)) if m > 1 else 0
        if 3 ** k != m:
            raise ValueError(f"patches per axis must be a power of 3, got {m}")
        if n < 1:
            raise ValueError("volumes per patch axis must be >= 1")
        if not 0.0 < cfl < 1.0:
            raise ValueError("cfl must lie in (0, 1)")
        self.m = m
        self.n = n
        self.d = 2
        self.gamma = gamma
        self.cfl = cfl
        self.patch_width = 1.0 / m
        self.h = self.patch_width / n

    @property
    def patch_count(self):
        return self.m * self.m


class Patch:
    """One n x n block of conserved states plus a one-cell halo ring."""

    __slots__ = ("n", "grid_pos", "interior", "halo", "generation", "owner")

    def __init__(self, n, grid_pos, interior):
        if interior.shape != (n, n, 4):
            raise ValueError(f"interior must be ({n}, {n}, 4), got {interior.shape}")
        self.n = n
        self.grid_pos = grid_pos
        self.interior = interior
        self.halo = {d: None for d in DIRECTIONS}
        self.generation = 0
        self.owner = 0


class FaceBuffer:
    """Outgoing boundary strips of one patch, double-buffered by generation.

    Generation g lives in slot g % 2, so readers of generation g stay valid
    while the owner publishes g + 1. Published arrays are frozen; a publish
    replaces the slot reference, never mutates in place.
    """

    __slots__ = ("n", "_slots")

    def __init__(self, n):
        self.n = n
        self._slots = {d: [None, None] for d in DIRECTIONS}

    def publish(self, interior, generation):
        strips = {
            LEFT: interior[:, 0, :].copy(),
            RIGHT: interior[:, -1, :].copy(),
            BOTTOM: interior[0, :, :].copy(),
            TOP: interior[-1, :, :].copy(),
        }
        slot = generation % 2
        for d, strip in strips.items():
            strip.flags.writeable = False
            self._slots[d][slot] = (generation, strip)

    def read(self, direction, expected_generation):
        entry = self._slots[direction][expected_generation % 2]
        if entry is None or entry[0] != expected_generation:
            have = None if entry is None else entry[0]
            raise StaleHaloError(
                f"halo strip {direction} at generation {have}, expected "
                f"{expected_generation}")
        return entry[1]

    def generation_of(self, direction):
        gens = [e[0] for e in self._slots[direction] if e is not None]
        return max(gens) if gens else None


class Mesh:
    """All patches of the periodic grid plus their face buffers."""

    def __init__(self, config: MeshConfig, interiors=None):
        self.config = config
        m, n = config.m, config.n
        self.patches = []
        self.face_buffers = []
        for iy in range(m):
            for ix in range(m):
                if interiors is None:
                    interior = np.zeros((n, n, 4))
                else:
                    interior = interiors[self.flat_index((ix, iy))]
                self.patches.append(Patch(n, (ix, iy), interior))
                self.face_buffers.append(FaceBuffer(n))
        for idx in range(len(self.patches)):
            self.face_buffers[idx].publish(self.patches[idx].interior, 0)

    def flat_index(self, grid_pos):
        ix, iy = grid_pos
        return iy * self.config.m + ix

    def patch_at(self, grid_pos):
        return self.patches[self.flat_index(grid_pos)]

    def assemble_halo(self, index, expected_generation):
        """Pull the four facing neighbor strips for the given generation.

        The patch's halo references the published (frozen) strip arrays; a
        generation mismatch raises StaleHaloError naming the stale side.
        """
        patch = self.patches[index]
        m = self.config.m
        for d in DIRECTIONS:
            npos = neighbor(patch.grid_pos, d, m)
            buf = self.face_buffers[self.flat_index(npos)]
            patch.halo[d] = buf.read(OPPOSITE[d], expected_generation)
        return patch.halo

    def project_to_faces(self, index):
        """Publish the patch's boundary rows/columns at the next generation."""
        patch = self.patches[index]
        patch.generation += 1
        self.face_buffers[index].publish(patch.interior, patch.generation)

    def gather(self):
        """Assemble the full (M*n, M*n, 4) solution array in grid order."""
        m, n = self.config.m, self.config.n
        out = np.empty((m * n, m * n, 4))
        for patch in self.patches:
            ix, iy = patch.grid_pos
            out[iy * n:(iy + 1) * n, ix * n:(ix + 1) * n, :] = patch.interior
        return out

    def domain_sums(self):
        """Domain totals of (rho, mx, my, E)."""
        total = np.zeros(4)
        for patch in self.patches:
            total += patch.interior.sum(axis=(0, 1))
        return total

    def checksum(self):
        """SHA-256 over all interiors in grid row-major order (bitwise)."""
        digest = hashlib.sha256()
        for patch in self.patches:
            digest.update(patch.interior.tobytes())
        return digest.hexdigest()

    def _corrupt_strip_generation(self, index, direction, delta=1):
        """Test hook: shift a published strip's generation stamp."""
        for slot in (0, 1):
            entry = self.face_buffers[index]._slots[direction][slot]
            if entry is not None:
                self.face_buffers[index]._slots[direction][slot] = (entry[0] + delta, entry[1])


def initial_density(x, y, amplitude, width):
    return 1.0 + amplitude * math.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / width)


def build_initial_mesh(config: MeshConfig, amplitude=0.5, width=0.01):
    """Gaussian density peak at rest on the unit square; pressure 1 everywhere."""
    m, n = config.m, config.n
    h = config.h
    interiors = []
    for iy in range(m):
        for ix in range(m):
            interior = np.empty((n, n, 4))
            for j in range(n):
                y = (iy * n + j + 0.5) * h
                for i in range(n):
                    x = (ix * n + i + 0.5) * h
                    rho = initial_density(x, y, amplitude, width)
                    p = 1.0
                    interior[j, i, RHO] = rho
                    interior[j, i, MX] = 0.0
                    interior[j, i, MY] = 0.0
                    interior[j, i, EN] = p / (config.gamma - 1.0)
            interiors.append(interior)
    return Mesh(config, interiors)


def global_max_eigenvalue(mesh: Mesh):
    """Max over all volumes and both axes; bootstraps the first time step."""
    gamma = mesh.config.gamma
    lam = 0.0
    for patch in mesh.patches:
        ex = max_eigenvalue(patch.interior, "x", gamma)
        ey = max_eigenvalue(patch.interior, "y", gamma)
        lam = max(lam, float(np.max(ex)), float(np.max(ey)))
    return lam
