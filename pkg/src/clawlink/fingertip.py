"""Spring-lattice fingertip physics plus the in-finger pinhole camera.

The fingertip is a grounded linear spring network: assembling per-edge
blocks k * d d^T (d the unit rest direction) gives a global stiffness K that
is positive definite on the free DOFs whenever every free node is connected
through the lattice to a fixed one.  An applied 6D wrench becomes nodal
forces on the contact layer (force split equally, torque realized as the
minimum-norm force set about the contact centroid) and K u = f is solved for
the small-strain displacement field.

The embedded camera projects displaced marker nodes through an exact pinhole
model; marker pixels are what the wrench estimator calibrates against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Pose6D, Wrench6D, quat_conj, quat_rotate
from .errors import ConfigError, ModelError, ProjectionError, RangeError

DEFAULT_SPACING = 0.005
DEFAULT_STIFFNESS = 800.0
DEFAULT_FORCE_BOUND = 50.0
DEFAULT_TORQUE_BOUND = 2.0


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Rest geometry, springs and node roles of one fingertip lattice."""

    node_positions: np.ndarray           # (N, 3) rest positions, meters
    edges: tuple[tuple[int, int, float], ...]  # (i, j, stiffness N/m)
    fixed_nodes: tuple[int, ...]
    contact_nodes: tuple[int, ...]
    marker_nodes: tuple[int, ...]
    force_bound: float = DEFAULT_FORCE_BOUND
    torque_bound: float = DEFAULT_TORQUE_BOUND

    def __post_init__(self):
        pos = np.asarray(self.node_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ConfigError("node_positions must be (N, 3)")
        object.__setattr__(self, "node_positions", pos)
        n = pos.shape[0]
        for i, j, k in self.edges:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ConfigError(f"edge ({i},{j}) references bad nodes")
            if k <= 0.0:
                raise ConfigError(f"edge ({i},{j}) stiffness {k} must be > 0")
        for name in ("fixed_nodes", "contact_nodes", "marker_nodes"):
            idx = tuple(sorted(set(getattr(self, name))))
            if any(not 0 <= i < n for i in idx):
                raise ConfigError(f"{name} out of range")
            object.__setattr__(self, name, idx)
        if not self.fixed_nodes:
            raise ConfigError("lattice needs at least one fixed node")
        if set(self.fixed_nodes) & set(self.contact_nodes):
            raise ConfigError("contact nodes must be free")

    @property
    def n_nodes(self) -> int:
        return self.node_positions.shape[0]

    @property
    def free_nodes(self) -> tuple[int, ...]:
        fixed = set(self.fixed_nodes)
        return tuple(i for i in range(self.n_nodes) if i not in fixed)


@dataclass(frozen=True, eq=False)
class Deformation:
    """Per-node displacements, exactly zero at fixed nodes."""

    displacements: np.ndarray  # (N, 3) meters

    def __post_init__(self):
        u = np.asarray(self.displacements, dtype=float)
        if u.ndim != 2 or u.shape[1] != 3:
            raise ConfigError("displacements must be (N, 3)")
        object.__setattr__(self, "displacements", u)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole intrinsics plus the camera pose in the fingertip frame."""

    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    pose: Pose6D = field(default_factory=Pose6D.identity)
    resolution: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be > 0")

    def to_camera_frame(self, points: np.ndarray) -> np.ndarray:
        qc = quat_conj(self.pose.orientation)
        rel = np.asarray(points, dtype=float) - self.pose.position
        return np.stack([quat_rotate(qc, p) for p in rel])


@dataclass(frozen=True, eq=False)
class MarkerSet:
    """Ordered 2D pixel coordinates, one per marker node (ascending index)."""

    pixels: np.ndarray  # (M, 2)
    timestamp: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "pixels", px)

    def __len__(self) -> int:
        return self.pixels.shape[0]


# ---------------------------------------------------------------------------
# construction

def build_grid_lattice(nx: int, ny: int, nz: int, spacing: float = DEFAULT_SPACING,
                       k: float = DEFAULT_STIFFNESS, *,
                       force_bound: float = DEFAULT_FORCE_BOUND,
                       torque_bound: float = DEFAULT_TORQUE_BOUND) -> LatticeModel:
    """Regular grid with axis-aligned plus face-diagonal springs.

    Bottom layer (z index 0) is clamped, top layer takes the external
    wrench.  Markers sit on the middle layer when one exists (nz >= 3);
    for two-layer lattices the contact layer doubles as the marker layer.
    """
    if nx < 2 or ny < 2 or nz < 2:
        raise ConfigError("grid needs at least 2 nodes per axis")
    if spacing <= 0 or k <= 0:
        raise ConfigError("spacing and stiffness must be > 0")

    def nid(ix, iy, iz):
        return ix + nx * (iy + ny * iz)

    pos = np.zeros((nx * ny * nz, 3))
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                pos[nid(ix, iy, iz)] = (ix * spacing, iy * spacing, iz * spacing)

    edges: set[tuple[int, int]] = set()

    def add(a, b):
        edges.add((a, b) if a < b else (b, a))

    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                if ix + 1 < nx:
                    add(nid(ix, iy, iz), nid(ix + 1, iy, iz))
                if iy + 1 < ny:
                    add(nid(ix, iy, iz), nid(ix, iy + 1, iz))
                if iz + 1 < nz:
                    add(nid(ix, iy, iz), nid(ix, iy, iz + 1))
                # face diagonals, both directions per face
                if ix + 1 < nx and iy + 1 < ny:
                    add(nid(ix, iy, iz), nid(ix + 1, iy + 1, iz))
                    add(nid(ix + 1, iy, iz), nid(ix, iy + 1, iz))
                if ix + 1 < nx and iz + 1 < nz:
                    add(nid(ix, iy, iz), nid(ix + 1, iy, iz + 1))
                    add(nid(ix + 1, iy, iz), nid(ix, iy, iz + 1))
                if iy + 1 < ny and iz + 1 < nz:
                    add(nid(ix, iy, iz), nid(ix, iy + 1, iz + 1))
                    add(nid(ix, iy + 1, iz), nid(ix, iy, iz + 1))

    fixed = [nid(ix, iy, 0) for iy in range(ny) for ix in range(nx)]
    contact = [nid(ix, iy, nz - 1) for iy in range(ny) for ix in range(nx)]
    marker_layer = nz // 2 if nz >= 3 else nz - 1
    markers = [nid(ix, iy, marker_layer) for iy in range(ny) for ix in range(nx)]

    return LatticeModel(
        node_positions=pos,
        edges=tuple((i, j, k) for i, j in sorted(edges)),
        fixed_nodes=tuple(fixed),
        contact_nodes=tuple(contact),
        marker_nodes=tuple(markers),
        force_bound=force_bound,
        torque_bound=torque_bound,
    )


def default_lattice() -> LatticeModel:
    return build_grid_lattice(5, 5, 2)


def default_camera() -> CameraModel:
    # centered under the 5x5x2 default lattice, optical axis +z
    return CameraModel(pose=Pose6D(np.array([0.01, 0.01, -0.025]),
                                   np.array([1.0, 0.0, 0.0, 0.0])))


# ---------------------------------------------------------------------------
# statics

def stiffness_matrix(m: LatticeModel) -> np.ndarray:
    """Global (3N, 3N) stiffness from per-edge k * d d^T blocks."""
    n = m.n_nodes
    K = np.zeros((3 * n, 3 * n))
    for i, j, k in m.edges:
        d = m.node_positions[j] - m.node_positions[i]
        length = np.linalg.norm(d)
        if length == 0.0:
            raise ModelError(f"edge ({i},{j}) has zero rest length")
        d = d / length
        block = k * np.outer(d, d)
        si, sj = 3 * i, 3 * j
        K[si:si + 3, si:si + 3] += block
        K[sj:sj + 3, sj:sj + 3] += block
        K[si:si + 3, sj:sj + 3] -= block
        K[sj:sj + 3, si:si + 3] -= block
    return K


def is_grounded(m: LatticeModel) -> bool:
    """Every free node must reach a fixed node through the edge graph."""
    adj: dict[int, list[int]] = {i: [] for i in range(m.n_nodes)}
    for i, j, _ in m.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = set(m.fixed_nodes)
    stack = list(m.fixed_nodes)
    while stack:
        cur = stack.pop()
        for nb in adj[cur]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == m.n_nodes


def free_dof_indices(m: LatticeModel) -> np.ndarray:
    free = np.array(m.free_nodes, dtype=int)
    return (3 * free[:, None] + np.arange(3)[None, :]).ravel()


def wrench_to_nodal_forces(m: LatticeModel, w: Wrench6D) -> np.ndarray:
    """(N, 3) nodal force field realizing the wrench on the contact layer.

    Net force is split equally across contact nodes; the torque about the
    contact centroid becomes the minimum-norm nodal force set, which (about
    the centroid) carries exactly zero net force.
    """
    contact = np.array(m.contact_nodes, dtype=int)
    if contact.size == 0:
        raise ModelError("lattice has no contact nodes")
    f = np.zeros((m.n_nodes, 3))
    f[contact] += w.force / contact.size

    if np.any(w.torque != 0.0):
        r = m.node_positions[contact] - m.node_positions[contact].mean(axis=0)
        # rows of A: torque = sum_i r_i x f_i, unknowns stacked (3C,)
        A = np.zeros((3, 3 * contact.size))
        for c, ri in enumerate(r):
            A[:, 3 * c:3 * c + 3] = _skew(ri)
        sol, *_ = np.linalg.lstsq(A, w.torque, rcond=None)
        if not np.allclose(A @ sol, w.torque, atol=1e-9 * max(1.0, float(np.linalg.norm(w.torque)))):
            raise ModelError("torque not realizable on contact geometry")
        f[contact] += sol.reshape(-1, 3)
    return f


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def solve_equilibrium(m: LatticeModel, w: Wrench6D) -> Deformation:
    """Static displacement field under a small-strain wrench."""
    if float(np.linalg.norm(w.force)) > m.force_bound:
        raise RangeError(f"force exceeds small-strain bound {m.force_bound} N")
    if float(np.linalg.norm(w.torque)) > m.torque_bound:
        raise RangeError(f"torque exceeds small-strain bound {m.torque_bound} N*m")
    if not is_grounded(m):
        raise ModelError("lattice is not grounded (free nodes detached from base)")

    K = stiffness_matrix(m)
    f = wrench_to_nodal_forces(m, w).ravel()
    free = free_dof_indices(m)
    Kff = K[np.ix_(free, free)]
    ff = f[free]
    try:
        uf = np.linalg.solve(Kff, ff)
    except np.linalg.LinAlgError:
        # Sparse lattices (e.g. a single spring) have floppy modes: K is
        # only positive semidefinite.  A load inside range(K) still has a
        # well-defined minimum-norm equilibrium; anything else would spin
        # up a mechanism and is a model error.
        uf, *_ = np.linalg.lstsq(Kff, ff, rcond=None)
        resid = float(np.linalg.norm(Kff @ uf - ff))
        if resid > 1e-9 * max(1.0, float(np.linalg.norm(ff))):
            raise ModelError(
                "load excites an unconstrained mechanism mode") from None
    u = np.zeros(3 * m.n_nodes)
    u[free] = uf
    return Deformation(u.reshape(-1, 3))


def strain_energy(m: LatticeModel, d: Deformation) -> float:
    u = d.displacements.ravel()
    return 0.5 * float(u @ stiffness_matrix(m) @ u)


def condition_number(m: LatticeModel) -> float:
    K = stiffness_matrix(m)
    free = free_dof_indices(m)
    return float(np.linalg.cond(K[np.ix_(free, free)]))


# ---------------------------------------------------------------------------
# observation

def project_markers(m: LatticeModel, d: Deformation, c: CameraModel,
                    timestamp: int = 0) -> MarkerSet:
    """Exact pinhole projection of the displaced marker nodes."""
    idx = np.array(m.marker_nodes, dtype=int)
    pts = m.node_positions[idx] + d.displacements[idx]
    cam = c.to_camera_frame(pts)
    px = np.zeros((idx.size, 2))
    for row, (X, Y, Z) in enumerate(cam):
        if Z <= 0.0:
            raise ProjectionError(
                f"marker {row} (node {idx[row]}) has non-positive depth {Z}",
                marker_index=row)
        px[row, 0] = c.fx * X / Z + c.cx
        px[row, 1] = c.fy * Y / Z + c.cy
    return MarkerSet(pixels=px, timestamp=timestamp)


def render_observation(m: LatticeModel, w: Wrench6D, c: CameraModel,
                       noise_sigma: float = 0.0, seed: int = 0,
                       timestamp: int = 0) -> MarkerSet:
    """Full sensing pipeline: equilibrium, projection, Gaussian pixel noise.

    Deterministic for a given seed; sigma = 0 reproduces the noiseless
    pipeline exactly.
    """
    ms = project_markers(m, solve_equilibrium(m, w), c, timestamp=timestamp)
    if noise_sigma < 0.0:
        raise RangeError("noise_sigma must be >= 0")
    if noise_sigma == 0.0:
        return ms
    rng = np.random.default_rng(seed)
    noisy = ms.pixels + rng.normal(0.0, noise_sigma, size=ms.pixels.shape)
    return MarkerSet(pixels=noisy, timestamp=timestamp)


class LatticeResponse:
    """Precomputed linear response of a grounded lattice.

    The small-strain model is exactly linear in the wrench, so the
    displacement field is a fixed (3N, 6) matrix applied to the wrench
    vector.  Real-time fingertip nodes use this instead of re-assembling
    and solving the stiffness system every tick; results agree with
    solve_equilibrium to floating-point roundoff.
    """

    def __init__(self, m: LatticeModel, c: CameraModel):
        self.model = m
        self.camera = c
        basis = np.eye(6)
        cols = [solve_equilibrium(m, Wrench6D.from_vector(basis[i]))
                .displacements.ravel() for i in range(6)]
        self._response = np.stack(cols, axis=1)  # (3N, 6)
        idx = np.array(m.marker_nodes, dtype=int)
        self._marker_idx = idx
        self._rest = m.node_positions[idx]
        # camera rotation for row-vector application: points @ rot == R^T p
        from .core import quat_rotate
        q = c.pose.orientation
        qc = np.array([q[0], -q[1], -q[2], -q[3]])
        self._rot = np.stack([quat_rotate(qc, e) for e in np.eye(3)], axis=0)
        self._origin = c.pose.position

    def observe(self, w: Wrench6D, noise_sigma: float = 0.0, seed: int = 0,
                timestamp: int = 0) -> MarkerSet:
        if float(np.linalg.norm(w.force)) > self.model.force_bound:
            raise RangeError("force exceeds small-strain bound")
        if float(np.linalg.norm(w.torque)) > self.model.torque_bound:
            raise RangeError("torque exceeds small-strain bound")
        u = (self._response @ w.as_vector()).reshape(-1, 3)
        pts = self._rest + u[self._marker_idx]
        cam = (pts - self._origin) @ self._rot
        Z = cam[:, 2]
        bad = np.nonzero(Z <= 0.0)[0]
        if bad.size:
            raise ProjectionError(
                f"marker {int(bad[0])} has non-positive depth",
                marker_index=int(bad[0]))
        c = self.camera
        px = np.stack([c.fx * cam[:, 0] / Z + c.cx,
                       c.fy * cam[:, 1] / Z + c.cy], axis=1)
        if noise_sigma > 0.0:
            rng = np.random.default_rng(seed)
            px = px + rng.normal(0.0, noise_sigma, size=px.shape)
        return MarkerSet(pixels=px, timestamp=timestamp)
