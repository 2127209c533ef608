import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import falling_moment_exact, sqv_pmf_recursive
from pulsebranch.analytic import single_photon_exact
from pulsebranch.blochsim import BranchAmplitude, SystemConfig, solve_branch
from pulsebranch.errors import (
    InputError,
    NumericalIntegrityError,
    OracleUnreliableError,
    TruncationError,
    UndefinedCoherenceError,
)
from pulsebranch.photonstats import (
    PhotonStatistics,
    coherence_orders,
    coherent_average,
    factorial_moment,
    fock_average,
    fock_averages,
    mixture_average,
    taylor_oracle,
)
from pulsebranch.series import build_table, coeff_c1, coeff_ck


def test_fock_statistics():
    s = PhotonStatistics.fock(3)
    assert s.probabilities.tolist() == [0, 0, 0, 1]
    assert s.mean_photons == 3 and s.tail_mass == 0
    with pytest.raises(InputError):
        PhotonStatistics.fock(-1)
    with pytest.raises(InputError):
        PhotonStatistics.fock(2.5)


@pytest.mark.parametrize("nbar", [0.5, 2.0, 10.0, 50.0])
def test_thermal_statistics(nbar):
    s = PhotonStatistics.thermal(nbar)
    ref = [1 / (1 + nbar)]
    for _ in range(s.n_max):
        ref.append(ref[-1] * nbar / (1 + nbar))
    np.testing.assert_allclose(s.probabilities, ref, rtol=1e-11)
    assert s.tail_mass <= 1e-10
    assert math.fsum(s.probabilities) + s.tail_mass == pytest.approx(1.0, abs=1e-12)
    # the cap is the smallest one meeting the mass target
    q = nbar / (1 + nbar)
    assert q**s.n_max > 1e-10


@pytest.mark.parametrize("nbar", [0.5, 2.0, 10.0])
@pytest.mark.parametrize("k", range(1, 7))
def test_thermal_moment_identity(nbar, k):
    s = PhotonStatistics.thermal(nbar, mass_tol=1e-30)
    assert factorial_moment(s, k) == pytest.approx(math.factorial(k) * nbar**k, rel=1e-9)


def test_factorial_moment_against_exact_rationals():
    p = [0.1, 0.2, 0.3, 0.15, 0.25]
    s = PhotonStatistics.custom(p)
    for k in range(0, 6):
        assert factorial_moment(s, k) == pytest.approx(falling_moment_exact(p, k), rel=1e-13, abs=1e-300)


def test_squeezed_vacuum_ten_photons():
    s = PhotonStatistics.squeezed_vacuum(1.87)
    assert s.mean_photons == pytest.approx(math.sinh(1.87) ** 2, rel=1e-15)
    assert round(s.mean_photons, 1) == 10.0
    p = s.probabilities
    c, t = math.cosh(1.87), math.tanh(1.87)
    assert p[0] == pytest.approx(1 / c, rel=1e-14)
    assert p[2] == pytest.approx(0.5 * t * t / c, rel=1e-14)
    assert np.all(p[1::2] == 0.0)
    np.testing.assert_allclose(p[::2], sqv_pmf_recursive(1.87, len(p[::2])), rtol=1e-11)
    assert s.tail_mass <= 1e-10
    assert math.fsum(p) == pytest.approx(1.0, abs=1e-10)


def test_coherent_statistics():
    s = PhotonStatistics.coherent(4.0)
    assert s.tail_mass <= 1e-10
    assert math.fsum(s.probabilities) + s.tail_mass == pytest.approx(1.0, abs=1e-12)
    assert s.probabilities[4] == pytest.approx(math.exp(-4) * 4**4 / 24, rel=1e-13)


def test_caps_enforced():
    with pytest.raises(TruncationError):
        PhotonStatistics.thermal(1e6)
    with pytest.raises(TruncationError):
        PhotonStatistics.squeezed_vacuum(5.0)


@pytest.mark.parametrize("bad", [[0.5, 0.4], [1.2, -0.2], [], [[0.5, 0.5]], [math.nan, 1.0]])
def test_custom_validation(bad):
    with pytest.raises(InputError):
        PhotonStatistics.custom(bad)


def test_custom_normalize_and_file(tmp_path):
    s = PhotonStatistics.custom([1, 1, 2], normalize=True)
    assert s.probabilities.tolist() == [0.25, 0.25, 0.5]
    assert s.mean_photons == pytest.approx(1.25)
    path = tmp_path / "p.txt"
    path.write_text("# N p_N\n0 0.25\n2 0.5  # two photons\n1 0.25\n")
    f = PhotonStatistics.from_file(path)
    assert f.probabilities.tolist() == [0.25, 0.25, 0.5]
    path.write_text("0 0.5\n0 0.5\n")
    with pytest.raises(InputError):
        PhotonStatistics.from_file(path)
    path.write_text("0.5 1.0\n")
    with pytest.raises(InputError):
        PhotonStatistics.from_file(path)


def test_coherence_orders_closed_forms():
    assert np.all(coherence_orders(PhotonStatistics.coherent(3.0), 8).g == 1.0)
    th = coherence_orders(PhotonStatistics.thermal(2.0), 5)
    assert th[2] == 2.0 and th[3] == 6.0
    fk = coherence_orders(PhotonStatistics.fock(100), 101)
    assert fk[2] == pytest.approx(0.99, rel=1e-14)
    assert fk[101] == 0.0
    small = coherence_orders(PhotonStatistics.fock(3), 4)
    np.testing.assert_allclose(small.g, [1, 2 / 3, 6 / 27, 0], rtol=1e-14)


def test_coherence_orders_from_distribution():
    # thermal g^(K) recovered from the truncated geometric distribution
    s = PhotonStatistics.thermal(2.0, mass_tol=1e-30)
    custom = PhotonStatistics.custom(s.probabilities, normalize=True)
    np.testing.assert_allclose(coherence_orders(custom, 5).g, [1, 2, 6, 24, 120], rtol=1e-9)
    sqv = coherence_orders(PhotonStatistics.squeezed_vacuum(0.8, mass_tol=1e-16), 2)
    # squeezed vacuum bunching: g2 = 3 + 1/<n>
    assert sqv[2] == pytest.approx(3 + 1 / math.sinh(0.8) ** 2, rel=1e-9)


def test_coherence_orders_errors():
    with pytest.raises(UndefinedCoherenceError):
        coherence_orders(PhotonStatistics.fock(0), 3)
    with pytest.raises(InputError):
        coherence_orders(PhotonStatistics.fock(2), 0)


def test_fock_zero_and_one(table_for, times):
    cfg = SystemConfig(1.0)
    tab = table_for(1.0)
    assert np.all(fock_average(cfg, tab, 0) == 0.0)
    f1 = fock_average(cfg, tab, 1)
    np.testing.assert_allclose(f1, single_photon_exact(cfg, times), atol=1e-12)
    i = np.argmax(f1)
    assert abs(times[i] - 2.0) <= times[1] - times[0]


@pytest.mark.parametrize("gt", [0.5, 1.0, 2.0])
def test_single_photon_benchmark(gt, table_for, times):
    cfg = SystemConfig.from_ratio(gt)
    f1 = fock_average(cfg, table_for(gt), 1)
    np.testing.assert_allclose(f1, single_photon_exact(cfg, times), atol=1e-9)


def test_fock_average_at_odd_ratio_matches_exact():
    cfg = SystemConfig.from_ratio(2.0)
    t = np.array([1.0])
    tab = build_table(cfg, np.exp(-t / 2), 3)
    assert fock_average(cfg, tab, 1)[0] == pytest.approx(single_photon_exact(cfg, 1.0), abs=1e-9)


def test_fock_table_mismatch(table_for):
    with pytest.raises(InputError):
        fock_average(SystemConfig(2.0), table_for(1.0), 2)


def test_fock_average_extends_table(zetas):
    cfg = SystemConfig(1.0)
    tab = build_table(cfg, zetas[:50], 2)
    rows = fock_averages(cfg, tab, [1, 5, 3])
    assert rows.shape == (3, 50)
    np.testing.assert_allclose(rows[1], fock_average(cfg, build_table(cfg, zetas[:50], 5), 5), atol=1e-15)


def test_fock_two_against_oracle():
    cfg = SystemConfig(1.0)
    z = np.array([math.exp(-1)])
    fit = taylor_oracle(cfg, 6, z)
    val, err = fit.fock_population(2)
    ours = fock_average(cfg, build_table(cfg, z, 2), 2)
    assert ours[0] == pytest.approx(val[0], abs=1e-4)
    assert abs(ours[0] - val[0]) <= err[0]


def test_mixture_of_one_fock_is_fock(table_for):
    cfg = SystemConfig(1.0)
    tab = table_for(1.0)
    for n in (1, 4):
        np.testing.assert_allclose(
            mixture_average(cfg, tab, PhotonStatistics.fock(n)), fock_average(cfg, tab, n), atol=1e-14
        )
        np.testing.assert_allclose(
            mixture_average(cfg, tab, PhotonStatistics.fock(n), method="coherence"),
            fock_average(cfg, tab, n),
            atol=1e-14,
        )


def test_mixture_is_weighted_fock_sum(zetas):
    cfg = SystemConfig(0.7)
    z = zetas[::20]
    tab = build_table(cfg, z, 6)
    p = [0.1, 0.3, 0.0, 0.2, 0.25, 0.0, 0.15]
    rows = fock_averages(cfg, tab, range(len(p)))
    direct = np.asarray(p) @ rows
    mix = mixture_average(cfg, tab, PhotonStatistics.custom(p))
    np.testing.assert_allclose(mix, direct, atol=1e-14)


@pytest.mark.parametrize("nbar", [1.0, 10.0])
def test_thermal_two_paths(nbar, table_for):
    cfg = SystemConfig(1.0)
    tab = table_for(1.0)
    s = PhotonStatistics.thermal(nbar)
    a = mixture_average(cfg, tab, s)
    b = mixture_average(cfg, tab, s, method="coherence")
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_coherent_series_matches_poisson_mixture(table_for):
    cfg = SystemConfig(1.0)
    tab = table_for(1.0)
    s = PhotonStatistics.coherent(3.0)
    np.testing.assert_allclose(
        mixture_average(cfg, tab, s), mixture_average(cfg, tab, s, method="coherence"), atol=1e-9
    )


def test_mixture_method_checks(table_for):
    cfg = SystemConfig(1.0)
    tab = table_for(1.0)
    with pytest.raises(InputError):
        mixture_average(cfg, tab, PhotonStatistics.squeezed_vacuum(0.5), method="coherence")
    with pytest.raises(InputError):
        mixture_average(cfg, tab, PhotonStatistics.fock(1), method="bogus")


def test_coherent_average(table_for, times):
    cfg = SystemConfig(1.0)
    tab = table_for(1.0)
    assert np.all(coherent_average(cfg, 0.0, table=tab) == 0.0)
    ode = solve_branch(cfg, BranchAmplitude(1.0), times)
    np.testing.assert_allclose(coherent_average(cfg, 1.0, table=tab), ode.excited_population, atol=1e-6)
    for mean in (1.0, 4.0, 25.0):
        q = coherent_average(cfg, mean, table=tab)
        s = coherent_average(cfg, mean, table=tab, method="series")
        np.testing.assert_allclose(q, s, atol=1e-6)
    with pytest.raises(InputError):
        coherent_average(cfg, 1.0)
    with pytest.raises(InputError):
        coherent_average(cfg, -1.0, zetas=[0.5])


def test_integrity_check_reports_location(table_for, monkeypatch):
    cfg = SystemConfig(1.0)
    tab = table_for(1.0)
    import pulsebranch.photonstats as ps

    monkeypatch.setattr(tab, "weighted_sums", lambda make, atol=1e-15: np.full((1, len(tab.zetas)), 4.0))
    with pytest.raises(NumericalIntegrityError) as info:
        ps.fock_average(cfg, tab, 3)
    assert info.value.value == 2.0
    assert info.value.zeta == tab.zetas[0]


# sup-norm gap between Fock-N and coherent |alpha|^2 = N at gamma_tilde = 1 on
# the default grid; the gap does not shrink between N = 10 and N = 100
FOCK_COHERENT_GAP = {10: 0.05001551448654179, 100: 0.053973910062239616}


def test_fock_coherent_gap_regression(zetas):
    cfg = SystemConfig(1.0)
    tab = build_table(cfg, zetas, 100)
    for n, gap in FOCK_COHERENT_GAP.items():
        fock = fock_average(cfg, tab, n)
        coh = coherent_average(cfg, n, table=tab)
        assert np.all((fock >= 0) & (fock <= 1))
        assert np.max(np.abs(fock - coh)) == pytest.approx(gap, rel=1e-6)


def test_poisson_mixture_of_fock_is_coherent(zetas):
    # coherent light is the Poisson mixture of Fock states, order by order up to N = 220
    cfg = SystemConfig(1.0)
    z = zetas[::40]
    ns = np.arange(221)
    rows = fock_averages(cfg, build_table(cfg, z, 220), ns)
    p = np.exp(ns * math.log(100.0) - 100.0 - np.array([math.lgamma(n + 1) for n in ns]))
    np.testing.assert_allclose(p @ rows, coherent_average(cfg, 100.0, zetas=z), atol=1e-10)


def test_oracle_first_order():
    cfg = SystemConfig(1.0)
    z = math.exp(-1)
    fit = taylor_oracle(cfg, 6, [z])
    # first fitted coefficient is C_1 (2 gamma_tilde)
    assert fit.coeffs[0, 0] == pytest.approx(2 * coeff_c1(1.0, z), abs=2e-6)


def test_oracle_error_bounds_cover_series():
    cfg = SystemConfig(1.0)
    z = np.exp(-0.5 * np.linspace(0.2, 12, 20))
    fit = taylor_oracle(cfg, 6, z)
    for k in range(1, 4):
        exact = coeff_ck(1.0, k, z) * 2.0**k
        assert np.all(np.abs(fit.coeffs[k - 1] - exact) <= fit.errors[k - 1])
        assert np.all(np.sign(fit.coeffs[k - 1]) == np.sign(exact))


def test_linear_response():
    cfg = SystemConfig(1.0)
    t = np.array([0.0, 1.0, 2.0, 4.0])
    w1 = solve_branch(cfg, BranchAmplitude(math.sqrt(5e-4)), t, rtol=1e-12, atol=1e-15).w + 1
    w2 = solve_branch(cfg, BranchAmplitude(math.sqrt(1e-3)), t, rtol=1e-12, atol=1e-15).w + 1
    assert np.all(np.abs(w2[1:] / w1[1:] - 2) / 2 < 1e-2)


def test_oracle_guards():
    cfg = SystemConfig(1.0)
    with pytest.raises(InputError):
        taylor_oracle(cfg, 7, [0.5])
    with pytest.raises(InputError):
        taylor_oracle(cfg, 2, [1.5])
    with pytest.raises(OracleUnreliableError):
        # a tiny sampling radius leaves the scaled fit fine, so force the cap
        import pulsebranch.photonstats as ps

        saved = ps.ORACLE_MAX_COND
        ps.ORACLE_MAX_COND = 1.0
        try:
            taylor_oracle(cfg, 3, [0.5])
        finally:
            ps.ORACLE_MAX_COND = saved


@settings(max_examples=20, deadline=None)
@given(
    p=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12).filter(lambda xs: sum(xs) > 0.1),
    gt=st.sampled_from([0.5, 1.0, 2.0]),
)
def test_custom_mixtures_are_populations(p, gt):
    cfg = SystemConfig.from_ratio(gt)
    z = np.exp(-0.5 * np.linspace(0, 12, 30))
    s = PhotonStatistics.custom(p, normalize=True)
    y = mixture_average(cfg, build_table(cfg, z, 12), s)
    assert np.all((y >= 0) & (y <= 1))
    assert abs(math.fsum(s.probabilities) - 1) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(r=st.floats(0.01, 2.5))
def test_squeezed_vacuum_invariants(r):
    s = PhotonStatistics.squeezed_vacuum(r)
    assert np.all(s.probabilities[1::2] == 0.0)
    assert np.all(s.probabilities >= 0)
    assert math.fsum(s.probabilities) + s.tail_mass == pytest.approx(1.0, abs=1e-12)
    assert s.tail_mass <= 1e-10
