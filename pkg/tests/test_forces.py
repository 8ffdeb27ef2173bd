import csv
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from needleplan.forces import (
    DEFAULT_TISSUE,
    FIT_CSV_HEADER,
    PROFILE_CSV_HEADER,
    ForceProfile,
    SaturationError,
    TissueParams,
    fit_straight_insertion,
    internal_force_numeric,
    internal_force_profile,
    max_tissue_force,
    read_insertion_csv,
    rk4_segment_grid,
    segment_backstep,
    segment_states,
    write_profile_csv,
)
from needleplan.kinematics import ArcSegment, NeedlePath, Pose

# frozen fixture values, cross-checked against the RK4 route at step 1e-5
BACKSTEP_N_PROX = 5.010509175135509
BACKSTEP_FT = 50.10509175135509

ARC = ArcSegment(0.0, 10.0, 0.05)
STRAIGHT = ArcSegment(0.0, 0.0, 0.05)


def constant_coeffs(params):
    def c_of_s(s):
        return np.full_like(np.asarray(s, dtype=float), params.c_friction) if np.ndim(s) else params.c_friction

    def mu_of_s(s):
        return np.full_like(np.asarray(s, dtype=float), params.mu) if np.ndim(s) else params.mu

    return c_of_s, mu_of_s


# ---------------------------------------------------------------------------
# parameters and single-segment backstep


def test_tissue_params_validation():
    with pytest.raises(ValueError):
        TissueParams(-1.0, 0.32, 0.4)
    with pytest.raises(ValueError):
        TissueParams(83.75, -0.1, 0.4)
    with pytest.raises(ValueError):
        TissueParams(83.75, 0.32, 0.0)
    assert DEFAULT_TISSUE.c_friction == 83.75
    assert DEFAULT_TISSUE.mu == 0.32
    assert DEFAULT_TISSUE.piercing_force == 0.4


def test_backstep_straight_is_linear():
    st = segment_backstep(0.4, ArcSegment(0.0, 0.0, 0.1), DEFAULT_TISSUE)
    assert st.n_proximal == pytest.approx(8.775, abs=1e-12)
    assert st.f_t_max == 0.0


def test_backstep_curved_fixture_value():
    st = segment_backstep(0.4, ARC, DEFAULT_TISSUE)
    assert st.n_proximal == pytest.approx(BACKSTEP_N_PROX, rel=1e-15)
    assert st.f_t_max == pytest.approx(BACKSTEP_FT, rel=1e-15)
    assert st.n_distal == 0.4


def test_backstep_frictionless_arc():
    st = segment_backstep(0.4, ArcSegment(0.0, 10.0, 0.05), TissueParams(0.0, 0.0, 0.4))
    assert st.n_proximal == 0.4
    assert st.f_t_max == 4.0


def test_backstep_grows_toward_base(rng):
    for _ in range(50):
        seg = ArcSegment(0.0, float(rng.uniform(0.0, 20.0)), float(rng.uniform(0.01, 0.1)))
        nd = float(rng.uniform(0.1, 5.0))
        st = segment_backstep(nd, seg, DEFAULT_TISSUE)
        assert st.n_proximal >= nd


def test_backstep_rejects_bad_distal_force():
    with pytest.raises(ValueError):
        segment_backstep(0.0, ARC, DEFAULT_TISSUE)
    with pytest.raises(ValueError):
        segment_backstep(math.inf, ARC, DEFAULT_TISSUE)


def test_backstep_saturation():
    hot = TissueParams(83.75, 1000.0, 0.4)
    with pytest.raises(SaturationError):
        segment_backstep(0.4, ArcSegment(0.0, 20.0, 0.05), hot)


def test_max_tissue_force_saturation_sentinel():
    hot = TissueParams(83.75, 1000.0, 0.4)
    path = NeedlePath(Pose.identity(), [ArcSegment(0.0, 20.0, 0.05)])
    assert max_tissue_force(path, hot) == math.inf


def test_segment_states_chain_tip_params():
    # the tip boundary force comes from the distal segment's parameters
    p_base = TissueParams(83.75, 0.32, 0.4)
    p_tip = TissueParams(83.75, 0.32, 0.9)
    path = NeedlePath(Pose.identity(), [STRAIGHT, ARC])
    states = segment_states(path, [p_base, p_tip])
    assert states[1].n_distal == 0.9
    assert states[0].n_distal == states[1].n_proximal


# ---------------------------------------------------------------------------
# profiles


def test_profile_straight_path():
    path = NeedlePath(Pose.identity(), [ArcSegment(0.0, 0.0, 0.1)])
    prof = internal_force_profile(path, DEFAULT_TISSUE, 0.001)
    assert prof.insertion_force == pytest.approx(8.775, abs=1e-12)
    assert prof.max_tissue_force == 0.0
    assert np.all(prof.samples[:, 2] == 0.0)


def test_profile_tip_arc_fixture():
    path = NeedlePath(Pose.identity(), [STRAIGHT, ARC])
    prof = internal_force_profile(path, DEFAULT_TISSUE, 0.001)
    assert prof.max_tissue_force == pytest.approx(BACKSTEP_FT, rel=1e-15)
    assert prof.argmax_s == pytest.approx(0.05, abs=1e-15)
    assert prof.insertion_force == pytest.approx(9.198009175135509, rel=1e-15)


def test_profile_base_arc_fixture():
    path = NeedlePath(Pose.identity(), [ARC, STRAIGHT])
    prof = internal_force_profile(path, DEFAULT_TISSUE, 0.001)
    assert prof.max_tissue_force == pytest.approx(99.24585947413715, rel=1e-15)
    assert prof.argmax_s == 0.0


def test_profile_boundary_rows_duplicated_on_kappa_jump():
    path = NeedlePath(Pose.identity(), [STRAIGHT, ARC])
    prof = internal_force_profile(path, DEFAULT_TISSUE, 0.001)
    s = prof.samples[:, 0]
    at_boundary = np.flatnonzero(s == 0.05)
    assert at_boundary.size == 2
    lo, hi = at_boundary
    # n continuous, one-sided f_t with the proximal side first
    assert prof.samples[lo, 1] == prof.samples[hi, 1]
    assert prof.samples[lo, 2] == 0.0
    assert prof.samples[hi, 2] == pytest.approx(10.0 * prof.samples[hi, 1], rel=1e-15)


def test_profile_boundary_row_single_when_kappa_continuous():
    path = NeedlePath(Pose.identity(), [ArcSegment(0.0, 10.0, 0.05), ArcSegment(1.0, 10.0, 0.05)])
    prof = internal_force_profile(path, DEFAULT_TISSUE, 0.001)
    s = prof.samples[:, 0]
    assert np.flatnonzero(s == 0.05).size == 1


def test_profile_n_positive_and_non_increasing(rng):
    for _ in range(20):
        segs = [
            ArcSegment(float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(0.0, 20.0)), float(rng.uniform(0.01, 0.1)))
            for _ in range(int(rng.integers(1, 8)))
        ]
        prof = internal_force_profile(NeedlePath(Pose.identity(), segs), DEFAULT_TISSUE, 0.002)
        n = prof.samples[:, 1]
        assert np.all(n > 0.0)
        assert np.all(np.diff(n) <= 1e-9 * n.max())
        assert prof.insertion_force == n[0]


def test_profile_rejects_bad_samples():
    with pytest.raises(ValueError):
        ForceProfile.from_samples(np.empty((0, 3)))
    with pytest.raises(ValueError):
        ForceProfile.from_samples(np.array([[0.0, 1.0, np.nan]]))
    with pytest.raises(ValueError):
        ForceProfile.from_samples(np.array([[0.1, 1.0, 0.0], [0.0, 2.0, 0.0]]))
    with pytest.raises(ValueError):
        ForceProfile.from_samples(np.array([[0.0, 1.0, 0.0], [0.1, -1.0, 0.0]]))
    with pytest.raises(ValueError):
        ForceProfile.from_samples(np.array([[0.0, 1.0, 0.0], [0.1, 2.0, 0.0]]))


# ---------------------------------------------------------------------------
# numeric route


def test_rk4_segment_grid():
    assert rk4_segment_grid(0.1, 1e-4) == (1000, pytest.approx(1e-4))
    nsteps, h = rk4_segment_grid(0.05, 0.03)
    assert nsteps == 2 and h == 0.025
    assert rk4_segment_grid(0.01, 0.1) == (1, 0.01)
    with pytest.raises(ValueError):
        rk4_segment_grid(0.1, 0.0)


def test_numeric_zero_coefficients_keep_tip_force():
    path = NeedlePath(Pose.identity(), [ARC, STRAIGHT])
    zero = lambda s: np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0
    prof = internal_force_numeric(path, zero, zero, 0.4, 1e-3)
    assert np.all(prof.samples[:, 1] == 0.4)


def test_numeric_straight_frictionless_is_exact():
    path = NeedlePath(Pose.identity(), [ArcSegment(0.0, 0.0, 0.1)])
    c_of_s, mu_of_s = constant_coeffs(TissueParams(83.75, 0.0, 0.4))
    prof = internal_force_numeric(path, c_of_s, mu_of_s, 0.4, 1e-3)
    assert prof.insertion_force == pytest.approx(8.775, rel=1e-14)


def test_numeric_matches_closed_form(rng):
    c_of_s, mu_of_s = constant_coeffs(DEFAULT_TISSUE)
    for _ in range(5):
        segs = [
            ArcSegment(0.0, float(rng.uniform(0.0, 20.0)), float(rng.uniform(0.01, 0.1)))
            for _ in range(int(rng.integers(2, 6)))
        ]
        path = NeedlePath(Pose.identity(), segs)
        numeric = internal_force_numeric(path, c_of_s, mu_of_s, 0.4, 1e-4)
        closed = internal_force_profile(path, DEFAULT_TISSUE, 0.02)
        assert numeric.insertion_force == pytest.approx(closed.insertion_force, rel=1e-8)
        assert numeric.max_tissue_force == pytest.approx(closed.max_tissue_force, rel=1e-8)


def test_numeric_variable_coefficients_against_ivp():
    """Smoothly varying C(s), mu(s) checked against an adaptive integrator."""
    segs = [ArcSegment(0.0, 8.0, 0.06), ArcSegment(0.5, 15.0, 0.04)]
    path = NeedlePath(Pose.identity(), segs)
    c_of_s = lambda s: 83.75 * (1.0 + 4.0 * np.asarray(s, dtype=float))
    mu_of_s = lambda s: 0.32 * (1.0 - 2.0 * np.asarray(s, dtype=float))
    prof = internal_force_numeric(path, c_of_s, mu_of_s, 0.4, 1e-4)

    def kappa(s):
        return 8.0 if s < 0.06 else 15.0

    sol = solve_ivp(
        lambda s, n: [-float(c_of_s(s)) - float(mu_of_s(s)) * kappa(s) * n[0]],
        (0.1, 0.0),
        [0.4],
        rtol=1e-11,
        atol=1e-13,
    )
    assert prof.insertion_force == pytest.approx(float(sol.y[0, -1]), rel=1e-7)


def test_numeric_boundary_rows_match_closed_form_layout():
    path = NeedlePath(Pose.identity(), [STRAIGHT, ARC])
    c_of_s, mu_of_s = constant_coeffs(DEFAULT_TISSUE)
    numeric = internal_force_numeric(path, c_of_s, mu_of_s, 0.4, 1e-3)
    s = numeric.samples[:, 0]
    assert np.flatnonzero(s == 0.05).size == 2


# ---------------------------------------------------------------------------
# fitting


def test_fit_exact_synthetic():
    depths = [0.02, 0.04, 0.06, 0.08, 0.10]
    data = [(L, 0.4 + 83.75 * L) for L in depths]
    fit = fit_straight_insertion(data)
    assert fit.piercing_force == pytest.approx(0.4, abs=1e-12)
    assert fit.c_friction == pytest.approx(83.75, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert not fit.piercing_force_negative


def test_fit_two_point_line():
    fit = fit_straight_insertion([(0.0, 0.4), (0.1, 8.775)])
    assert fit.c_friction == pytest.approx(83.75, rel=1e-12)
    assert fit.piercing_force == pytest.approx(0.4, abs=1e-12)


def test_fit_noisy_recovery_smoke(rng):
    depths = np.linspace(0.01, 0.12, 24)
    noise = rng.normal(0.0, 0.05, depths.size)
    data = list(zip(depths, 0.4 + 83.75 * depths + noise))
    fit = fit_straight_insertion(data)
    assert abs(fit.c_friction - 83.75) / 83.75 < 0.05
    assert fit.r_squared > 0.99


def test_fit_rejects_constant_depth():
    with pytest.raises(ValueError):
        fit_straight_insertion([(0.05, 1.0), (0.05, 2.0), (0.05, 3.0)])
    with pytest.raises(ValueError):
        fit_straight_insertion([(0.05, 1.0)])


def test_fit_flags_negative_intercept():
    fit = fit_straight_insertion([(0.1, 1.0), (0.2, 3.0), (0.3, 5.0)])
    assert fit.piercing_force == pytest.approx(-1.0, abs=1e-12)
    assert fit.piercing_force_negative


# ---------------------------------------------------------------------------
# CSV formats


def test_profile_csv_round_trip(tmp_path):
    path = NeedlePath(Pose.identity(), [STRAIGHT, ARC])
    prof = internal_force_profile(path, DEFAULT_TISSUE, 0.01)
    out = tmp_path / "profile.csv"
    write_profile_csv(prof, out)
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(PROFILE_CSV_HEADER)
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    assert np.array_equal(data, prof.samples)


def test_read_insertion_csv(tmp_path):
    f = tmp_path / "data.csv"
    f.write_text("depth_m,force_N\n0.02,2.075\n0.04,3.75\n")
    assert read_insertion_csv(f) == [(0.02, 2.075), (0.04, 3.75)]
    assert list(FIT_CSV_HEADER) == ["depth_m", "force_N"]


def test_read_insertion_csv_errors(tmp_path):
    f = tmp_path / "bad_header.csv"
    f.write_text("depth,force\n0.02,2.0\n")
    with pytest.raises(ValueError, match="header"):
        read_insertion_csv(f)
    f2 = tmp_path / "bad_row.csv"
    f2.write_text("depth_m,force_N\n0.02,2.0\nnope,3.0\n")
    with pytest.raises(ValueError, match="line 3"):
        read_insertion_csv(f2)
