import numpy as np
import pytest

import vslice.channel as channel
from vslice.channel import (
    SPEED_OF_LIGHT,
    ChannelMatrix,
    LinkField,
    PathSet,
    advance_fading,
    channel_matrix,
    fading_ar_coefficient,
    init_fading,
    link_paths,
    los_gain,
    noise_power_w,
    path_loss_db,
    rb_frequency_offset,
    realize_channel,
    steering_from_cosine,
    steering_vector,
)
from vslice.errors import DomainError
from vslice.phy import beam_gain, beam_gain_profile, dft_codebook
from vslice.scenario import ScenarioConfig, build_scenario, substream


# -- single-ray amplitude ----------------------------------------------------

def test_ray_at_one_wavelength():
    g = los_gain(1.0, 1.0, 1.0)
    assert g == pytest.approx(1.0 / (2.0 * np.pi))  # phase factor exp(-j2pi)=1


def test_ray_magnitude_halves_when_distance_doubles():
    a = abs(los_gain(37.0, 1.0, 0.05))
    b = abs(los_gain(74.0, 1.0, 0.05))
    assert b == pytest.approx(a / 2.0, rel=1e-12)


def test_ray_at_carrier_against_direct_evaluation():
    lam = SPEED_OF_LIGHT / 5.9e9
    d = 100.0
    expect = lam / (2.0 * np.pi * d) * np.exp(-2j * np.pi * d / lam)
    assert los_gain(d, 1.0, lam) == pytest.approx(expect, rel=1e-12)


def test_inverse_distance_scaling_over_a_decade():
    lam = 0.0508
    d = np.linspace(10.0, 100.0, 50)
    mags = np.array([abs(los_gain(x, 1.0, lam)) for x in d])
    assert np.allclose(mags * d, lam / (2.0 * np.pi), rtol=1e-12)


def test_nonpositive_distance_rejected():
    with pytest.raises(DomainError):
        los_gain(0.0)
    with pytest.raises(DomainError):
        los_gain(-1.0)


def test_large_scale_amplitude_matches_street_loss():
    assert channel.large_scale_amplitude(1000.0) == pytest.approx(
        10.0 ** (-100.7 / 20.0), rel=1e-12
    )
    # power slope: x10 distance costs 23.5 dB
    ratio = channel.large_scale_amplitude(100.0) / channel.large_scale_amplitude(1000.0)
    assert 20.0 * np.log10(ratio) == pytest.approx(23.5, rel=1e-12)
    got = channel.large_scale_amplitude(np.array([50.0, 500.0]))
    assert got.shape == (2,)
    assert got[0] > got[1]
    with pytest.raises(DomainError):
        channel.large_scale_amplitude(0.0)


# -- steering ----------------------------------------------------------------

def test_broadside_steering_is_all_ones():
    assert np.allclose(steering_vector(8, 0.0), np.ones(8))


def test_two_element_endfire():
    v = steering_vector(2, np.pi / 2.0)
    assert v[0] == pytest.approx(1.0)
    assert v[1] == pytest.approx(-1.0)


def test_steering_entries_unit_modulus():
    v = steering_vector(64, 0.7)
    assert np.allclose(np.abs(v), 1.0)


def test_steering_orthogonal_at_distinct_grid_cosines():
    # Direction cosines 2k/n form an orthogonal family; check by direct sum.
    n = 64
    for k1, k2 in [(0, 1), (3, 7), (10, 63)]:
        a = steering_from_cosine(n, 2.0 * k1 / n)
        b = steering_from_cosine(n, 2.0 * k2 / n)
        direct = sum(a[m].conjugate() * b[m] for m in range(n))
        assert abs(direct) < 1e-9


# -- path loss and noise -----------------------------------------------------

def test_path_loss_anchor_points():
    assert path_loss_db(1.0) == pytest.approx(100.7)
    assert path_loss_db(10.0) == pytest.approx(124.2)
    assert path_loss_db(0.1) == pytest.approx(77.2)


def test_path_loss_monotone():
    d = np.linspace(0.05, 20.0, 200)
    pl = np.array([path_loss_db(x) for x in d])
    assert np.all(np.diff(pl) > 0)


def test_path_loss_rejects_nonpositive():
    with pytest.raises(DomainError):
        path_loss_db(0.0)


def test_noise_power_linear_in_bandwidth():
    assert noise_power_w(400e3) == pytest.approx(2.0 * noise_power_w(200e3), rel=1e-12)


def test_noise_power_direct_evaluation():
    expect = 10.0 ** ((-174.0 + 9.0) / 10.0) * 1e-3 * 200e3
    assert noise_power_w(200e3) == pytest.approx(expect, rel=1e-12)


def test_noise_power_unit_bandwidth_no_figure():
    assert noise_power_w(1.0, noise_figure_db=0.0) == pytest.approx(10.0 ** -17.4 * 1e-3)


# -- scattered-component fading ----------------------------------------------

def test_fading_ar_coefficient_values():
    lam = SPEED_OF_LIGHT / 5.9e9
    assert fading_ar_coefficient(0.0, 1e-3, lam) == 1.0
    v = 40.0 / 3.6
    assert fading_ar_coefficient(v, 1e-3, lam) == pytest.approx(np.exp(-2 * v * 1e-3 / lam))
    with pytest.raises(DomainError):
        fading_ar_coefficient(-1.0, 1e-3, lam)
    with pytest.raises(DomainError):
        fading_ar_coefficient(1.0, 0.0, lam)


def test_fading_stationary_unit_power():
    rng = np.random.default_rng(0)
    g = init_fading(20000, rng)
    assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, rel=0.05)
    assert abs(np.mean(g)) < 0.02


def test_fading_advance_limits():
    rng = np.random.default_rng(1)
    g = init_fading(16, rng)
    frozen = advance_fading(g, 1.0, rng)
    assert np.array_equal(frozen, g)
    redrawn = advance_fading(g, 0.0, np.random.default_rng(2))
    assert not np.allclose(redrawn, g)
    with pytest.raises(DomainError):
        advance_fading(g, 1.5, rng)


def test_fading_preserves_power_over_time():
    rng = np.random.default_rng(3)
    g = init_fading(5000, rng)
    a = 0.65
    for _ in range(50):
        g = advance_fading(g, a, rng)
    assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, rel=0.1)


def test_fading_lag_correlation_follows_ar():
    rng = np.random.default_rng(4)
    n = 20000
    g0 = init_fading(n, rng)
    a = 0.7
    g = g0
    for lag in range(1, 4):
        g = advance_fading(g, a, rng)
        corr = np.mean(g * g0.conj())
        assert corr.real == pytest.approx(a ** lag, abs=0.03)


def test_fading_factor_unit_mean_power():
    from vslice.channel import fading_factor, SCATTER_RICE_K
    rng = np.random.default_rng(5)
    f = fading_factor(init_fading(50000, rng))
    assert np.mean(np.abs(f) ** 2) == pytest.approx(1.0, rel=0.05)
    # A zeroed diffuse state leaves just the specular core.
    core = fading_factor(np.zeros(3, dtype=complex))
    assert np.allclose(core, np.sqrt(SCATTER_RICE_K / (SCATTER_RICE_K + 1.0)))


# -- per-block frequency offsets ---------------------------------------------

def test_rb_offsets_straddle_carrier():
    offs = rb_frequency_offset(np.arange(50), 50, 200e3)
    assert np.sum(offs) == pytest.approx(0.0, abs=1e-6)
    assert offs[0] == pytest.approx(-(49 / 2.0) * 200e3)
    assert np.all(np.diff(offs) == pytest.approx(200e3))


# -- full channel assembly ---------------------------------------------------

def small_scene(n_scat, seed=5):
    cfg = ScenarioConfig(num_rsu=2, num_urllc=2, num_embb=2,
                         inter_vehicle_distance_m=50.0,
                         num_scatterers=n_scat, n_tx=8, n_rx=4, num_rb=5,
                         bandwidth_hz=1e6, seed=seed)
    vehicles, geometry = build_scenario(cfg)
    return cfg, vehicles, geometry


def test_los_only_channel_is_rank_one():
    cfg, vehicles, geometry = small_scene(0)
    h = realize_channel(0, vehicles[1], geometry, 2, cfg)
    assert np.linalg.matrix_rank(h.entries, tol=1e-12) == 1


def test_rank_bounded_by_ray_count():
    cfg, vehicles, geometry = small_scene(2)
    h = realize_channel(0, vehicles[1], geometry, 2, cfg)
    assert np.linalg.matrix_rank(h.entries, tol=1e-12) <= 3


def test_channel_deterministic():
    cfg, vehicles, geometry = small_scene(3)
    fading = init_fading(3, substream(cfg.seed, "channel"))
    a = realize_channel(1, vehicles[0], geometry, 4, cfg, fading, tti=17)
    cfg2, vehicles2, geometry2 = small_scene(3)
    b = realize_channel(1, vehicles2[0], geometry2, 4, cfg2, fading, tti=17)
    assert np.array_equal(a.entries, b.entries)
    assert isinstance(a, ChannelMatrix) and a.tti == 17 and a.rb == 4


def test_single_scatterer_matches_hand_assembled_sum():
    cfg, vehicles, geometry = small_scene(1)
    v = vehicles[2]
    rb = 3
    fade = np.array([0.4 - 0.9j])
    got = realize_channel(0, v, geometry, rb, cfg, fade).entries

    # Independent reassembly of the two-ray sum from raw geometry.
    lam = cfg.wavelength_m
    rsu = geometry.rsu_positions_m[0]
    sc = geometry.scatterer_positions_m[0]
    L = geometry.road_length_m

    def wrap(dx):
        return (dx + L / 2.0) % L - L / 2.0

    def ray(src, dst):
        dx, dy = wrap(dst[0] - src[0]), dst[1] - src[1]
        d = np.hypot(dx, dy)
        return d, dy / d

    off = rb_frequency_offset(rb, cfg.num_rb, cfg.rb_width_hz)
    d_los, u_los = ray(rsu, v.position_m)
    scale = 10.0 ** (-(100.7 + 23.5 * np.log10(d_los / 1000.0)) / 20.0)
    a_r = steering_from_cosine(cfg.n_rx, u_los)
    a_t = steering_from_cosine(cfg.n_tx, u_los)
    amp = (scale * los_gain(d_los, 1.0, lam)
           * np.exp(-2j * np.pi * off * d_los / SPEED_OF_LIGHT))
    expect = amp * np.outer(a_r, a_t.conj())

    d1, u1 = ray(rsu, sc)
    d2, u2 = ray(sc, v.position_m)
    k = channel.SCATTER_RICE_K
    rho = geometry.reflection_coefficients[0] * (
        np.sqrt(k / (k + 1.0)) + np.sqrt(1.0 / (k + 1.0)) * fade[0])
    beta = channel.SCATTER_HOP_BETA
    amp_s = (scale * los_gain(d1, beta, lam) * los_gain(d2, beta, lam) * rho
             * np.exp(-2j * np.pi * off * (d1 + d2) / SPEED_OF_LIGHT))
    expect += amp_s * np.outer(steering_from_cosine(cfg.n_rx, u2),
                               steering_from_cosine(cfg.n_tx, u1).conj())

    assert np.allclose(got, expect, rtol=1e-12, atol=0)


def test_rb_index_bounds_checked():
    cfg, vehicles, geometry = small_scene(1)
    with pytest.raises(DomainError):
        realize_channel(0, vehicles[0], geometry, cfg.num_rb, cfg)


def test_coincident_positions_rejected():
    cfg, vehicles, geometry = small_scene(0)
    vehicles[0].position_m = geometry.rsu_positions_m[0].copy()
    with pytest.raises(DomainError):
        realize_channel(0, vehicles[0], geometry, 0, cfg)


def test_channel_matrix_direct_construction():
    paths = PathSet(
        amplitude=np.array([0.5 + 0.1j]),
        delay_s=np.array([1e-7]),
        u_tx=np.array([0.25]),
        u_rx=np.array([0.25]),
    )
    h = channel_matrix(paths, 2, 4, freq_offset_hz=1e5)
    rot = np.exp(-2j * np.pi * 1e5 * 1e-7)
    outer = np.outer(steering_from_cosine(2, 0.25), steering_from_cosine(4, 0.25).conj())
    assert np.allclose(h, (0.5 + 0.1j) * rot * outer, rtol=1e-12)


# -- vectorized field vs explicit matrices -----------------------------------

def field_for(cfg, geometry, vehicles, phases):
    cb = dft_codebook(cfg.n_tx)
    field = LinkField(cfg, geometry, cb.columns)
    positions = np.stack([v.position_m for v in vehicles])
    field.update(positions, phases)
    return field, cb


def test_field_profile_matches_matrix_route():
    cfg, vehicles, geometry = small_scene(3)
    phases = init_fading(3, substream(1, "x"))
    field, cb = field_for(cfg, geometry, vehicles, phases)
    for s in range(cfg.num_rsu):
        for v in vehicles:
            h = realize_channel(s, v, geometry, field.reference_rb, cfg, phases)
            expect = beam_gain_profile(h.entries, cb)
            assert np.allclose(field.profile(s, v.id), expect, rtol=1e-9)


def test_field_rb_gains_match_matrix_route():
    cfg, vehicles, geometry = small_scene(3)
    phases = init_fading(3, substream(2, "x"))
    field, cb = field_for(cfg, geometry, vehicles, phases)
    beam = 5
    for v in vehicles[:2]:
        got = field.rb_gains(0, v.id, beam)
        for rb in range(cfg.num_rb):
            h = realize_channel(0, v, geometry, rb, cfg, phases)
            assert got[rb] == pytest.approx(
                beam_gain(h.entries, cb.columns[:, beam]), rel=1e-9)


def test_field_cross_gains_match_matrix_route():
    cfg, vehicles, geometry = small_scene(3)
    phases = init_fading(3, substream(3, "x"))
    field, cb = field_for(cfg, geometry, vehicles, phases)
    rbs = np.array([0, 2, 4])
    beams = np.array([1, 6, 3])
    got = field.cross_gains(1, vehicles[0].id, rbs, beams)
    for i, (rb, beam) in enumerate(zip(rbs, beams)):
        h = realize_channel(1, vehicles[0], geometry, rb, cfg, phases)
        assert got[i] == pytest.approx(beam_gain(h.entries, cb.columns[:, beam]), rel=1e-9)


def test_field_paths_match_link_paths():
    cfg, vehicles, geometry = small_scene(2)
    phases = np.array([0.3 + 0.2j, -1.1 - 0.5j])
    field, _ = field_for(cfg, geometry, vehicles, phases)
    for s in range(cfg.num_rsu):
        for v in vehicles:
            lone = link_paths(geometry.rsu_positions_m[s], v.position_m,
                              geometry, cfg.wavelength_m, phases)
            batch = field.paths(s, v.id)
            assert np.allclose(batch.amplitude, lone.amplitude, rtol=1e-12)
            assert np.allclose(batch.delay_s, lone.delay_s, rtol=1e-12)
            assert np.allclose(batch.u_tx, lone.u_tx, rtol=1e-12)
            assert np.allclose(batch.u_rx, lone.u_rx, rtol=1e-12)


def test_field_no_scatterers():
    cfg, vehicles, geometry = small_scene(0)
    field, cb = field_for(cfg, geometry, vehicles, np.zeros(0, dtype=complex))
    h = realize_channel(0, vehicles[1], geometry, field.reference_rb, cfg)
    assert np.allclose(field.profile(0, 1), beam_gain_profile(h.entries, cb), rtol=1e-9)
