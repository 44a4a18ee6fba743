import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clawlink.core import Pose6D, Wrench6D
from clawlink.errors import ConfigError, ModelError, ProjectionError, RangeError
from clawlink.fingertip import (CameraModel, Deformation, LatticeModel,
                                MarkerSet, build_grid_lattice, default_camera,
                                default_lattice, free_dof_indices, is_grounded,
                                project_markers, render_observation,
                                solve_equilibrium, stiffness_matrix,
                                strain_energy, wrench_to_nodal_forces)


def minimize_energy(K, f, tol=1e-10, max_iter=20000):
    """Independent oracle: minimize 1/2 u^T K u - f^T u by conjugate
    gradient descent on the energy, iterated until the gradient norm drops
    below tol."""
    u = np.zeros_like(f)
    r = f - K @ u  # negative gradient
    p = r.copy()
    rs = r @ r
    for _ in range(max_iter):
        if math.sqrt(rs) < tol:
            break
        Kp = K @ p
        alpha = rs / (p @ Kp)
        u = u + alpha * p
        r = r - alpha * Kp
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    return u


def small_random_lattice(rng):
    nx, ny, nz = rng.integers(2, 4, size=3)
    spacing = float(rng.uniform(0.003, 0.01))
    k = float(rng.uniform(200.0, 2000.0))
    return build_grid_lattice(int(nx), int(ny), int(nz), spacing, k)


# ---------------------------------------------------------------------------
# construction


def test_2x2x2_counts():
    m = build_grid_lattice(2, 2, 2, 0.005, 800.0)
    assert m.n_nodes == 8
    assert len(m.fixed_nodes) == 4
    assert len(m.contact_nodes) == 4
    assert all(m.node_positions[i][2] == 0.0 for i in m.fixed_nodes)


def test_rest_lengths_axis_or_diagonal():
    m = build_grid_lattice(3, 3, 3, 0.005, 800.0)
    for i, j, _ in m.edges:
        length = np.linalg.norm(m.node_positions[i] - m.node_positions[j])
        assert (length == pytest.approx(0.005)
                or length == pytest.approx(0.005 * math.sqrt(2)))


def test_generated_grid_is_grounded():
    assert is_grounded(build_grid_lattice(2, 2, 2))
    assert is_grounded(default_lattice())


def test_markers_middle_layer_when_exists():
    m3 = build_grid_lattice(3, 3, 3, 0.005, 800.0)
    assert all(m3.node_positions[i][2] == pytest.approx(0.005) for i in m3.marker_nodes)
    m2 = build_grid_lattice(3, 3, 2, 0.005, 800.0)
    assert set(m2.marker_nodes) == set(m2.contact_nodes)


def test_degenerate_counts_rejected():
    with pytest.raises(ConfigError):
        build_grid_lattice(1, 2, 2)
    with pytest.raises(ConfigError):
        build_grid_lattice(2, 2, 2, spacing=0.0)
    with pytest.raises(ConfigError):
        build_grid_lattice(2, 2, 2, k=-1.0)


# ---------------------------------------------------------------------------
# equilibrium


def test_zero_wrench_zero_displacement():
    m = default_lattice()
    d = solve_equilibrium(m, Wrench6D.zero())
    assert np.all(d.displacements == 0.0)


def test_single_spring_hand_value():
    # one vertical spring, base fixed, k=100, axial force 10 -> u = f/k = 0.1
    m = LatticeModel(
        node_positions=np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
        edges=((0, 1, 100.0),),
        fixed_nodes=(0,),
        contact_nodes=(1,),
        marker_nodes=(1,),
        force_bound=100.0,
    )
    d = solve_equilibrium(m, Wrench6D(np.array([0.0, 0.0, 10.0]), np.zeros(3)))
    assert d.displacements[1] == pytest.approx([0.0, 0.0, 0.1])
    assert np.all(d.displacements[0] == 0.0)


def test_matches_energy_minimization_oracle():
    rng = np.random.default_rng(7)
    m = build_grid_lattice(2, 2, 2, 0.005, 800.0)
    w = Wrench6D.from_vector(rng.uniform(-1, 1, 6) * np.array([0.01] * 3 + [1e-4] * 3))
    d = solve_equilibrium(m, w)
    K = stiffness_matrix(m)
    f = wrench_to_nodal_forces(m, w).ravel()
    free = free_dof_indices(m)
    u_oracle = minimize_energy(K[np.ix_(free, free)], f[free])
    assert np.allclose(d.displacements.ravel()[free], u_oracle, atol=1e-8)


def test_linearity():
    rng = np.random.default_rng(8)
    m = default_lattice()
    s = np.array([0.01] * 3 + [1e-4] * 3)
    w1 = Wrench6D.from_vector(rng.uniform(-1, 1, 6) * s)
    w2 = Wrench6D.from_vector(rng.uniform(-1, 1, 6) * s)
    a, b = 0.3, -1.2
    u1 = solve_equilibrium(m, w1).displacements
    u2 = solve_equilibrium(m, w2).displacements
    u = solve_equilibrium(m, Wrench6D.from_vector(
        a * w1.as_vector() + b * w2.as_vector())).displacements
    assert np.allclose(u, a * u1 + b * u2, atol=1e-9)


def test_reciprocity():
    # u1^T f2 == u2^T f1 because K is symmetric
    rng = np.random.default_rng(9)
    m = build_grid_lattice(3, 2, 2)
    s = np.array([0.01] * 3 + [1e-4] * 3)
    w1 = Wrench6D.from_vector(rng.uniform(-1, 1, 6) * s)
    w2 = Wrench6D.from_vector(rng.uniform(-1, 1, 6) * s)
    f1 = wrench_to_nodal_forces(m, w1).ravel()
    f2 = wrench_to_nodal_forces(m, w2).ravel()
    u1 = solve_equilibrium(m, w1).displacements.ravel()
    u2 = solve_equilibrium(m, w2).displacements.ravel()
    assert u1 @ f2 == pytest.approx(u2 @ f1, abs=1e-9)


def test_energy_consistency():
    rng = np.random.default_rng(10)
    m = default_lattice()
    w = Wrench6D.from_vector(rng.uniform(-1, 1, 6) * np.array([0.01] * 3 + [1e-4] * 3))
    d = solve_equilibrium(m, w)
    f = wrench_to_nodal_forces(m, w).ravel()
    internal = strain_energy(m, d)
    external = 0.5 * f @ d.displacements.ravel()
    assert internal == pytest.approx(external, abs=1e-9)


def test_stiffness_positive_definite_on_free_dofs():
    m = default_lattice()
    K = stiffness_matrix(m)
    free = free_dof_indices(m)
    np.linalg.cholesky(K[np.ix_(free, free)])  # raises if not PD


def test_ungrounded_lattice_rejected():
    m = LatticeModel(
        node_positions=np.array([[0, 0, 0], [0, 0, 1.0], [5, 5, 5.0]]),
        edges=((0, 1, 100.0),),  # node 2 floats free
        fixed_nodes=(0,),
        contact_nodes=(1,),
        marker_nodes=(1,),
    )
    with pytest.raises(ModelError):
        solve_equilibrium(m, Wrench6D.zero())


def test_wrench_beyond_small_strain_bound_rejected():
    m = default_lattice()
    with pytest.raises(RangeError):
        solve_equilibrium(m, Wrench6D(np.array([1e4, 0, 0]), np.zeros(3)))


def test_nodal_forces_reproduce_wrench():
    rng = np.random.default_rng(11)
    m = default_lattice()
    w = Wrench6D.from_vector(rng.uniform(-1, 1, 6) * np.array([0.01] * 3 + [1e-4] * 3))
    f = wrench_to_nodal_forces(m, w)
    contact = np.array(m.contact_nodes)
    assert np.allclose(f[contact].sum(axis=0), w.force, atol=1e-12)
    centroid = m.node_positions[contact].mean(axis=0)
    tau = np.zeros(3)
    for i in contact:
        tau += np.cross(m.node_positions[i] - centroid, f[i])
    assert np.allclose(tau, w.torque, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_solver_matches_oracle_property(seed):
    rng = np.random.default_rng(seed)
    m = small_random_lattice(rng)
    w = Wrench6D.from_vector(
        rng.uniform(-1, 1, 6) * np.array([0.01] * 3 + [1e-4] * 3))
    d = solve_equilibrium(m, w)
    K = stiffness_matrix(m)
    free = free_dof_indices(m)
    f = wrench_to_nodal_forces(m, w).ravel()
    u_oracle = minimize_energy(K[np.ix_(free, free)], f[free])
    assert np.allclose(d.displacements.ravel()[free], u_oracle, atol=1e-8)


# ---------------------------------------------------------------------------
# camera


def test_marker_on_optical_axis_projects_to_principal_point():
    m = LatticeModel(
        node_positions=np.array([[0, 0, 0], [0, 0, 0.05]]),
        edges=((0, 1, 100.0),),
        fixed_nodes=(0,),
        contact_nodes=(1,),
        marker_nodes=(1,),
    )
    c = CameraModel()  # camera at origin looking +z
    ms = project_markers(m, Deformation(np.zeros((2, 3))), c)
    assert ms.pixels[0] == pytest.approx([320.0, 240.0])


def test_pinhole_hand_value():
    # marker at (0.01, 0, 0.05) in camera frame -> u = 500*0.01/0.05 + 320 = 420
    m = LatticeModel(
        node_positions=np.array([[0, 0, 0], [0.01, 0.0, 0.05]]),
        edges=((0, 1, 100.0),),
        fixed_nodes=(0,),
        contact_nodes=(1,),
        marker_nodes=(1,),
    )
    c = CameraModel(fx=500, fy=500, cx=320, cy=320)
    ms = project_markers(m, Deformation(np.zeros((2, 3))), c)
    assert ms.pixels[0] == pytest.approx([420.0, 320.0])


def test_projection_deterministic():
    m, c = default_lattice(), default_camera()
    d = Deformation(np.zeros((m.n_nodes, 3)))
    a = project_markers(m, d, c)
    b = project_markers(m, d, c)
    assert np.array_equal(a.pixels, b.pixels)


def test_non_positive_depth_names_marker():
    m = LatticeModel(
        node_positions=np.array([[0, 0, 0], [0.0, 0.0, -0.05]]),
        edges=((0, 1, 100.0),),
        fixed_nodes=(0,),
        contact_nodes=(1,),
        marker_nodes=(1,),
    )
    with pytest.raises(ProjectionError) as ei:
        project_markers(m, Deformation(np.zeros((2, 3))), CameraModel())
    assert ei.value.marker_index == 0


def test_render_sigma_zero_equals_noiseless_pipeline():
    m, c = default_lattice(), default_camera()
    w = Wrench6D(np.array([0.005, 0, 0]), np.zeros(3))
    a = render_observation(m, w, c, 0.0, seed=1)
    b = project_markers(m, solve_equilibrium(m, w), c)
    assert np.array_equal(a.pixels, b.pixels)


def test_render_same_seed_identical():
    m, c = default_lattice(), default_camera()
    w = Wrench6D(np.array([0.005, 0, 0]), np.zeros(3))
    a = render_observation(m, w, c, 0.5, seed=42)
    b = render_observation(m, w, c, 0.5, seed=42)
    assert np.array_equal(a.pixels, b.pixels)
    c2 = render_observation(m, w, c, 0.5, seed=43)
    assert not np.array_equal(a.pixels, c2.pixels)


def test_lattice_response_matches_reference_pipeline():
    # precomputed linear response must agree with assemble-and-solve,
    # including through a rotated, offset camera
    from clawlink.core import quat_about_axis
    from clawlink.fingertip import LatticeResponse
    m = build_grid_lattice(4, 3, 3, 0.005, 900.0)
    c = CameraModel(fx=480, fy=510, cx=300, cy=260,
                    pose=Pose6D(np.array([0.012, -0.004, -0.03]),
                                quat_about_axis([0.2, 1.0, 0.1], 0.3)))
    resp = LatticeResponse(m, c)
    rng = np.random.default_rng(12)
    for _ in range(10):
        w = Wrench6D.from_vector(
            rng.uniform(-1, 1, 6) * np.array([0.01] * 3 + [1e-4] * 3))
        fast = resp.observe(w)
        slow = render_observation(m, w, c, 0.0)
        assert np.allclose(fast.pixels, slow.pixels, atol=1e-9)
    # same seeded noise stream as the reference path
    w = Wrench6D(np.array([0.005, 0, 0]), np.zeros(3))
    a = resp.observe(w, noise_sigma=0.5, seed=77)
    b = render_observation(m, w, c, 0.5, seed=77)
    assert np.allclose(a.pixels, b.pixels, atol=1e-9)
    with pytest.raises(RangeError):
        resp.observe(Wrench6D(np.array([1e4, 0, 0]), np.zeros(3)))


def test_render_noise_std_within_5_percent():
    m, c = default_lattice(), default_camera()
    clean = render_observation(m, Wrench6D.zero(), c, 0.0)
    diffs = []
    for seed in range(400):  # 400 x 25 markers x 2 coords = 20k samples
        noisy = render_observation(m, Wrench6D.zero(), c, 0.5, seed=seed)
        diffs.append(noisy.pixels - clean.pixels)
    sigma = np.std(np.concatenate(diffs).ravel())
    assert abs(sigma - 0.5) / 0.5 < 0.05
