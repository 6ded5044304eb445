import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from ups.pdegen import (
    ContainerError,
    TrajectorySet,
    generate_family,
    periodic_grid,
    read_header,
    read_trajectories,
    retardation,
    sample_ic_grf,
    sample_ic_sinusoid,
    sinusoid,
    solve_advection,
    solve_burgers,
    solve_diffusion_sorption,
    solve_reaction_diffusion_1d,
    solve_reaction_diffusion_2d,
    solve_shallow_water,
    write_trajectories,
)
from ups.pdegen.solvers import SolverError, diffusion_sorption_grid, diffusion_sorption_step, logistic_flow


# ---------------------------------------------------------------- initial conditions


def test_single_mode_sinusoid_is_exact():
    x = periodic_grid(64)
    np.testing.assert_array_equal(sinusoid(x, [1.0], [1], [0.0]), np.sin(2 * np.pi * x))


def test_sinusoid_sampler_deterministic():
    a = sample_ic_sinusoid(123, 64, num_modes=3)
    b = sample_ic_sinusoid(123, 64, num_modes=3)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample_ic_sinusoid(124, 64, num_modes=3))


def test_sinusoid_sampler_respects_amplitude_bound():
    for s in range(50):
        u = sample_ic_sinusoid(s, 64, num_modes=3, amplitude_range=(0.1, 1.0))
        assert np.abs(u).max() <= 1.0 + 1e-12


def test_sinusoid_sampler_rejects_zero_modes():
    with pytest.raises(ValueError):
        sample_ic_sinusoid(0, 16, num_modes=0)


def test_sinusoid_spatial_mean_monte_carlo():
    means = np.array([sample_ic_sinusoid(s, 64).mean() for s in range(1000)])
    stderr = means.std(ddof=1) / np.sqrt(len(means)) + 1e-15
    assert abs(means.mean()) <= 3 * stderr + 1e-14


def test_sinusoid_2d_shape_and_period():
    u = sample_ic_sinusoid(5, 32, dim=2)
    assert u.shape == (32, 32)
    # integer wavenumbers: the field on a 2x grid subsampled equals the 1x field
    np.testing.assert_allclose(sample_ic_sinusoid(5, 64, dim=2)[::2, ::2], u, atol=1e-13)


def test_grf_infinite_length_scale_is_constant():
    f = sample_ic_grf(3, 16, length_scale=np.inf, standardize=False)
    assert np.var(f) < 1e-30
    assert np.all(sample_ic_grf(3, 16, length_scale=np.inf) == 0.0)


def test_grf_standardised_and_reproducible():
    a = sample_ic_grf(11, 32, length_scale=0.1)
    assert abs(a.mean()) < 1e-12 and abs(a.std() - 1.0) < 1e-12
    assert a.tobytes() == sample_ic_grf(11, 32, length_scale=0.1).tobytes()


def test_grf_covariance_decays_with_lag():
    n = 32
    fields = np.stack([sample_ic_grf(s, n, length_scale=0.15) for s in range(200)])
    lags = range(0, 6)
    cov = [np.mean(fields * np.roll(fields, -lag, axis=-1)) for lag in lags]
    assert all(c1 > c2 for c1, c2 in zip(cov, cov[1:]))


def test_grf_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        sample_ic_grf(0, 24)


# ---------------------------------------------------------------- advection


def test_advection_zero_speed_is_stationary():
    u0 = sample_ic_sinusoid(1, 32)
    out = solve_advection(u0, 0.0, 5, 0.1)
    for j in range(5):
        np.testing.assert_allclose(out[j, 0], u0, atol=1e-14)


def test_advection_commensurate_shift_is_roll():
    n = 32
    u0 = sample_ic_sinusoid(2, n, num_modes=3, max_wavenumber=6)
    beta, dt = 0.5, 2.0 / n  # beta * dt * n = 1 cell per snapshot
    out = solve_advection(u0, beta, 6, dt)
    for j in range(6):
        np.testing.assert_allclose(out[j, 0], np.roll(u0, j), atol=1e-12)


def test_advection_single_mode_matches_analytic():
    n = 64
    x = periodic_grid(n)
    out = solve_advection(np.sin(2 * np.pi * x), 0.4, 41, 2.0 / 40)
    for j in range(41):
        t = j * 2.0 / 40
        np.testing.assert_allclose(out[j, 0], np.sin(2 * np.pi * (x - 0.4 * t)), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_advection_band_limited_exact(seed, t):
    n = 32
    x = periodic_grid(n)
    rng = np.random.default_rng(seed)
    amps, ks, ph = rng.uniform(0, 1, 3), rng.integers(1, 8, 3), rng.uniform(0, 6, 3)
    out = solve_advection(sinusoid(x, amps, ks, ph), 0.4, 2, t)
    np.testing.assert_allclose(out[1, 0], sinusoid(x - 0.4 * t, amps, ks, ph), atol=1e-10)


# ---------------------------------------------------------------- Burgers


def test_burgers_constant_is_fixed_point():
    out = solve_burgers(np.full(32, 0.7), 0.01, 6, 0.2)
    np.testing.assert_allclose(out[:, 0], 0.7, rtol=0, atol=1e-14)


def test_burgers_large_viscosity_decays_monotonically():
    x = periodic_grid(32)
    out = solve_burgers(0.1 * np.sin(2 * np.pi * x), 1.0, 11, 0.01)
    amp = np.abs(out[:, 0]).max(axis=-1)
    assert np.all(np.diff(amp) < 0)


def test_burgers_rk4_self_convergence():
    x = periodic_grid(64)
    u0 = 0.5 * np.sin(2 * np.pi * x) + 0.2 * np.cos(4 * np.pi * x)
    coarse = solve_burgers(u0, 0.01, 2, 0.2, substeps=4)[1, 0]
    finer = solve_burgers(u0, 0.01, 2, 0.2, substeps=16)[1, 0]
    ref = solve_burgers(u0, 0.01, 2, 0.2, substeps=64)[1, 0]
    e_coarse = np.abs(coarse - ref).max()
    e_fine = np.abs(finer - ref).max()
    assert e_coarse > 1e-12
    assert e_coarse / e_fine >= 8.0


def test_burgers_conserves_mean():
    x = periodic_grid(64)
    u0 = 0.3 + 0.5 * np.sin(2 * np.pi * x)
    out = solve_burgers(u0, 0.001, 21, 0.05)
    means = out[:, 0].mean(axis=-1)
    assert np.max(np.abs(means - means[0])) / abs(means[0]) < 1e-8


def test_burgers_rejects_nonpositive_viscosity():
    with pytest.raises(ValueError):
        solve_burgers(np.zeros(8), 0.0, 2, 0.1)


def test_burgers_blow_up_is_reported():
    x = periodic_grid(32)
    with pytest.raises(SolverError, match="CFL"):
        solve_burgers(50.0 * np.sin(2 * np.pi * x), 1e-4, 3, 1.0, substeps=1)


# ---------------------------------------------------------------- diffusion-sorption


def test_diffusion_sorption_without_retardation_is_heat_kernel():
    n, D = 64, 5e-4
    x = diffusion_sorption_grid(n)
    out = solve_diffusion_sorption(np.sin(np.pi * x), D, False, 21, 25.0, boundary=(0.0, 0.0))
    for j in (5, 10, 20):
        t = 25.0 * j
        expected = np.exp(-D * np.pi**2 * t) * np.sin(np.pi * x)
        rel = np.abs(out[j, 0] - expected).max() / np.abs(expected).max()
        assert rel < 0.01


def test_diffusion_sorption_steady_state_is_linear():
    n = 32
    x = diffusion_sorption_grid(n)
    out = solve_diffusion_sorption(np.zeros(n), 0.05, {}, 2, 500.0)
    assert np.abs(out[-1, 0] - (1.0 - x)).max() < 1e-3


def test_diffusion_sorption_discrete_flux_balance():
    n, D, h = 48, 5e-4, 1.0
    dx = 1.0 / (n + 1)
    u = 0.2 * (1 + np.sin(3 * np.pi * diffusion_sorption_grid(n)))
    for _ in range(20):
        new, r = diffusion_sorption_step(u, D, h, (1.0, 0.0), {})
        storage = np.sum(r * (new - u)) * dx
        flux = h * D * ((0.0 - new[-1]) / dx - (new[0] - 1.0) / dx)
        assert abs(storage - flux) <= 1e-4 * max(abs(flux), 1e-300)
        u = new


def test_retardation_matches_freundlich_form():
    u = np.array([0.25, 0.5, 1.0])
    expected = 1 + (0.71 / 0.29) * 2880 * 3.5e-4 * 0.874 * u ** (0.874 - 1)
    np.testing.assert_allclose(retardation(u), expected, rtol=1e-14)
    assert np.isfinite(retardation(np.zeros(3))).all()


def test_diffusion_sorption_stays_in_unit_interval():
    x = diffusion_sorption_grid(64)
    out = solve_diffusion_sorption(0.1 * (1 + np.sin(2 * np.pi * x)), 5e-4, {}, 21, 25.0)
    assert out.min() >= -1e-6 and out.max() <= 1 + 1e-6


# ---------------------------------------------------------------- reaction-diffusion 1D


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_fisher_fixed_points(c):
    out = solve_reaction_diffusion_1d(np.full(32, c), 0.5, 1.0, 6, 0.05)
    assert np.all(out == c)


def test_fisher_without_diffusion_is_logistic():
    u0 = np.linspace(0.01, 0.99, 32)
    out = solve_reaction_diffusion_1d(u0, 0.0, 1.0, 21, 0.05)
    for j in range(21):
        t = 0.05 * j
        exact = u0 * np.exp(t) / (1 + u0 * (np.exp(t) - 1))
        np.testing.assert_allclose(out[j, 0], exact, rtol=0, atol=1e-10)


def test_logistic_flow_composes():
    u = np.linspace(0, 1, 11)
    np.testing.assert_allclose(logistic_flow(logistic_flow(u, 1.0, 0.3), 1.0, 0.4), logistic_flow(u, 1.0, 0.7), atol=1e-14)


def test_fisher_bounded_and_monotone_mean():
    u0 = np.clip(0.5 + 0.45 * np.sin(2 * np.pi * periodic_grid(64)), 0, 1)
    out = solve_reaction_diffusion_1d(u0, 0.5, 1.0, 21, 0.05)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.all(np.diff(out[:, 0].mean(axis=-1)) > 0)


def test_fisher_matches_fine_reference():
    u0 = np.clip(0.5 + 0.45 * np.sin(2 * np.pi * periodic_grid(64)), 0, 1)
    out = solve_reaction_diffusion_1d(u0, 0.5, 1.0, 21, 0.05)
    ref = solve_reaction_diffusion_1d(u0, 0.5, 1.0, 21, 0.05, max_dt=1e-4)
    assert np.abs(out - ref).max() < 1e-3


def test_fisher_self_convergence_second_order():
    u0 = sample_ic_sinusoid(4, 64)
    u0 = (u0 - u0.min()) / (u0.max() - u0.min())
    run = lambda m: solve_reaction_diffusion_1d(u0, 0.01, 5.0, 2, 0.5, max_dt=m)[1, 0]
    ref = run(0.5 / 256)
    e1, e2 = np.abs(run(0.5 / 8) - ref).max(), np.abs(run(0.5 / 16) - ref).max()
    assert e1 / e2 >= 2 ** 1.5


# ---------------------------------------------------------------- reaction-diffusion 2D


def test_rd2d_uniform_equilibrium_is_steady():
    k = 5e-3
    star = -(k ** (1.0 / 3.0))
    u0 = np.full((2, 16, 16), star)
    out = solve_reaction_diffusion_2d(u0, 1e-3, 5e-3, k, 11, 0.5)
    assert np.abs(out - star).max() < 1e-8


def test_rd2d_without_diffusion_matches_ode():
    k = 5e-3
    rng = np.random.default_rng(0)
    u0 = rng.uniform(-1, 1, (2, 4, 4))
    out = solve_reaction_diffusion_2d(u0, 0.0, 0.0, k, 11, 0.1, max_dt=2e-4)
    times = np.arange(11) * 0.1

    def rhs(_, y):
        a, b = y
        return [a - a**3 - k - b, a - b]

    for i in range(4):
        for j in range(4):
            sol = solve_ivp(rhs, (0, 1.0), u0[:, i, j], t_eval=times, rtol=1e-12, atol=1e-12, method="DOP853")
            np.testing.assert_allclose(out[:, :, i, j], sol.y.T, atol=1e-6)


def _rd2d_smooth_ic(n):
    c = -1 + (np.arange(n) + 0.5) * 2 / n
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return np.stack([0.5 * np.cos(np.pi * (xx + 1) / 2) * np.cos(np.pi * (yy + 1) / 2), 0.3 * np.cos(np.pi * (xx + 1))])


def test_rd2d_resolution_convergence():
    coarse = solve_reaction_diffusion_2d(_rd2d_smooth_ic(32), 1e-3, 5e-3, 5e-3, 2, 0.1)[1]
    fine = solve_reaction_diffusion_2d(_rd2d_smooth_ic(64), 1e-3, 5e-3, 5e-3, 2, 0.1)[1]
    fine_avg = fine.reshape(2, 32, 2, 32, 2).mean(axis=(2, 4))
    assert np.abs(coarse - fine_avg).max() < 1e-2


def test_rd2d_self_convergence_second_order():
    u0 = _rd2d_smooth_ic(16)
    run = lambda m: solve_reaction_diffusion_2d(u0, 1e-3, 5e-3, 5e-3, 2, 1.0, max_dt=m)[1]
    ref = run(1.0 / 512)
    e1, e2 = np.abs(run(1.0 / 16) - ref).max(), np.abs(run(1.0 / 32) - ref).max()
    assert e1 / e2 >= 2 ** 1.5


# ---------------------------------------------------------------- shallow water


def _sw_grid(n, length=5.0):
    c = -length / 2 + (np.arange(n) + 0.5) * length / n
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return xx, yy


def test_shallow_water_lake_at_rest():
    n = 16
    h0 = np.full((n, n), 1.3)
    z = np.zeros((n, n))
    for boundary in ("periodic", "reflective"):
        out = solve_shallow_water(h0, z, z, z, 1.0, 6, 0.1, boundary=boundary)
        np.testing.assert_allclose(out[:, 0], 1.3, rtol=0, atol=1e-12)
        assert np.abs(out[:, 1:]).max() < 1e-12


def test_shallow_water_conserves_mass_periodic():
    n = 32
    xx, yy = _sw_grid(n)
    h0 = np.where(xx**2 + yy**2 < 0.5**2, 2.0, 1.0)
    b = 0.1 * np.exp(-((xx - 1) ** 2 + yy**2))
    z = np.zeros((n, n))
    out = solve_shallow_water(h0, z, z, b, 1.0, 11, 0.1)
    mass = out[:, 0].sum(axis=(-1, -2))
    assert np.max(np.abs(mass - mass[0])) / mass[0] < 1e-10


def test_shallow_water_radial_dam_break_symmetric():
    n = 32
    xx, yy = _sw_grid(n)
    h0 = np.where(xx**2 + yy**2 < 0.6**2, 2.0, 1.0)
    z = np.zeros((n, n))
    out = solve_shallow_water(h0, z, z, z, 1.0, 11, 0.1)
    h, u, v = out[-1]
    assert np.abs(h - np.rot90(h)).max() < 1e-8
    # reflection across the diagonal swaps the velocity components
    assert np.abs(h - h.T).max() < 1e-8
    assert np.abs(u - v.T).max() < 1e-8


def test_shallow_water_rejects_dry_state():
    z = np.zeros((8, 8))
    with pytest.raises(SolverError):
        solve_shallow_water(z, z, z, z, 1.0, 2, 0.1)


def test_shallow_water_reflective_walls_conserve_mass():
    n = 32
    xx, yy = _sw_grid(n)
    h0 = np.where((xx - 0.4) ** 2 + yy**2 < 0.5**2, 2.0, 1.0)
    z = np.zeros((n, n))
    out = solve_shallow_water(h0, z, z, z, 1.0, 11, 0.2, boundary="reflective")
    mass = out[:, 0].sum(axis=(-1, -2))
    # the mirrored ghost layer makes the wall flux vanish up to roundoff
    assert np.max(np.abs(mass - mass[0])) / mass[0] < 1e-10


# ---------------------------------------------------------------- generation and container


@pytest.mark.parametrize(
    "family",
    ["advection", "burgers", "diffusion_sorption", "reaction_diffusion_1d", "reaction_diffusion_2d", "shallow_water"],
)
def test_generate_family_finite_and_reproducible(family):
    a = generate_family(family, 16, 2, seed=3, timesteps=3)
    b = generate_family(family, 16, 2, seed=3, timesteps=3)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.dtype == np.float32 and np.isfinite(a.data).all()
    assert a.data.shape[:2] == (2, 3)
    # trajectory i only depends on (seed, first_index + i)
    c = generate_family(family, 16, 1, seed=3, first_index=1, timesteps=3)
    assert c.data[0].tobytes() == a.data[1].tobytes()


def test_generate_family_default_timesteps():
    ts = generate_family("advection", 16, 1, seed=0)
    assert ts.T == 41 and ts.times[-1] == pytest.approx(2.0)
    assert ts.coefficients["beta"] == 0.4


def test_generate_family_rejects_external():
    with pytest.raises(KeyError):
        generate_family("external", 16, 1, seed=0)


def _small_set():
    rng = np.random.default_rng(0)
    return TrajectorySet(
        family="burgers",
        dim=1,
        coefficients={"nu": 0.001},
        channels=["u"],
        data=rng.standard_normal((3, 4, 1, 8)),
        domain=[(0.0, 1.0)],
        times=[0.0, 0.1, 0.2, 0.3],
        seed=9,
    )


def test_container_round_trip(tmp_path):
    ts = _small_set()
    path = tmp_path / "a.upst"
    write_trajectories(ts, path)
    back = read_trajectories(path)
    assert back.data.tobytes() == ts.data.tobytes()
    assert back.header() == ts.header()


def test_container_truncated_payload(tmp_path):
    path = tmp_path / "a.upst"
    write_trajectories(_small_set(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(ContainerError, match="truncated"):
        read_trajectories(path)
    path.write_bytes(raw[:10])
    with pytest.raises(ContainerError, match="truncated"):
        read_trajectories(path)


def test_container_header_only(tmp_path):
    path = tmp_path / "a.upst"
    write_trajectories(_small_set(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 3 * 4 * 8 * 4])  # drop the whole payload
    hdr = read_header(path)
    assert hdr["family"] == "burgers" and hdr["n"] == 8 and hdr["num_traj"] == 3


def test_container_bad_magic(tmp_path):
    path = tmp_path / "a.upst"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ContainerError, match="magic"):
        read_header(path)


def test_trajectory_set_rejects_nan():
    with pytest.raises(ValueError, match="NaN"):
        TrajectorySet("burgers", 1, {}, ["u"], np.full((1, 1, 1, 4), np.nan), [(0, 1)], [0.0])
