import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from satjscc.fading import (ENVIRONMENTS, ChannelState, ConvergenceError, LooInternal, LooParams,
                            TableError, amplitude_upper_bound, bessel_i0_log,
                            default_environment_tables, internal_to_loo, is_primitive,
                            load_environment_table, loo_cdf_grid, loo_pdf, loo_to_internal,
                            mixture_pdf, sample_loo, sample_state_sequence, states_from,
                            stationary_distribution)
from satjscc.fading import MarkovChain

# 40-digit reference values (mpmath).
MU_REF = -0.92103403719761827
D0_REF = 0.11929270748576395
LN_I0 = {1.0: 0.23591435850717864869, 50.0: 47.127575501871804584,
         700.0: 695.80569999844344908, 1e5: 99993.324599984316463}
# Loo density for (alpha, psi, MP) = (-8, 3, -20) dB by direct quadrature of
# the textbook form with exp(-(r^2 + s^2) / 2 b0) I0(r s / b0).
PDF_REF = {0.05: 0.028481048847013753928, 0.2: 0.95325629415429558053,
           0.4: 2.6650636245128555163, 1.0: 0.040911264118425469882}

KS_SETS = [LooParams(-0.5, 0.5, -15.0), LooParams(-3.0, 2.0, -18.0), LooParams(-8.0, 3.0, -20.0)]


def test_conversion_reference_values():
    internal = loo_to_internal(LooParams(-8.0, 3.0, -20.0))
    assert internal.mu == pytest.approx(MU_REF, abs=1e-12)
    assert internal.d0 == pytest.approx(D0_REF, abs=1e-12)
    assert internal.b0 == pytest.approx(0.005, abs=1e-15)


@given(st.floats(-30.0, 5.0), st.floats(0.0, 10.0), st.floats(-40.0, 0.0))
def test_conversion_round_trip(alpha, psi, mp):
    back = internal_to_loo(loo_to_internal(LooParams(alpha, psi, mp)))
    assert back.alpha_db == pytest.approx(alpha, abs=1e-10)
    assert back.psi_db == pytest.approx(psi, abs=1e-10)
    assert back.mp_db == pytest.approx(mp, abs=1e-10)


def test_no_multipath_maps_to_zero_b0():
    internal = loo_to_internal(LooParams(-1.0, 1.0, -math.inf))
    assert internal.b0 == 0.0
    assert internal_to_loo(internal).mp_db == -math.inf


@pytest.mark.parametrize("kwargs", [dict(alpha_db=math.nan, psi_db=1, mp_db=-10),
                                    dict(alpha_db=0, psi_db=-1, mp_db=-10),
                                    dict(alpha_db=0, psi_db=1, mp_db=math.inf)])
def test_loo_params_validation(kwargs):
    with pytest.raises(ValueError):
        LooParams(**kwargs)


def test_internal_rejects_negative_variances():
    with pytest.raises(ValueError):
        LooInternal(0.0, -1.0, 0.1)


@pytest.mark.parametrize("x,expected", sorted(LN_I0.items()))
def test_log_bessel_reference(x, expected):
    assert bessel_i0_log(x) == pytest.approx(expected, rel=1e-14, abs=1e-14)


def test_log_bessel_at_zero_and_negative():
    assert bessel_i0_log(0.0) == 0.0
    with pytest.raises(ValueError):
        bessel_i0_log(-1.0)


@pytest.mark.parametrize("r,expected", sorted(PDF_REF.items()))
def test_pdf_reference_values(r, expected):
    assert loo_pdf(r, LooParams(-8.0, 3.0, -20.0)) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("params", KS_SETS + [LooParams(0.0, 0.1, -30.0), LooParams(-15, 5, -12)])
def test_pdf_integrates_to_one(params):
    total, _ = integrate.quad(lambda r: loo_pdf(r, params), 0.0, amplitude_upper_bound(params),
                              limit=400, points=[math.exp(loo_to_internal(params).mu)])
    assert total == pytest.approx(1.0, abs=1e-6)


def test_pdf_zero_shadowing_reduces_to_rice():
    params = LooParams(-2.0, 0.0, -15.0)
    i = loo_to_internal(params)
    r = np.linspace(0.01, 1.5, 9)
    rice = stats.rice.pdf(r, math.exp(i.mu) / math.sqrt(i.b0), scale=math.sqrt(i.b0))
    np.testing.assert_allclose(loo_pdf(r, params), rice, rtol=1e-9)


def test_pdf_small_shadowing_approaches_rice():
    i = loo_to_internal(LooParams(-2.0, 0.0, -15.0))
    r = np.array([0.3, 0.8, 1.0])
    rice = stats.rice.pdf(r, math.exp(i.mu) / math.sqrt(i.b0), scale=math.sqrt(i.b0))
    np.testing.assert_allclose(loo_pdf(r, LooParams(-2.0, 1e-3, -15.0)), rice, rtol=1e-3)


def test_pdf_edge_cases():
    params = LooParams(-3.0, 2.0, -18.0)
    assert loo_pdf(0.0, params) == 0.0
    with pytest.raises(ValueError):
        loo_pdf(-0.1, params)
    with pytest.raises(ValueError):
        loo_pdf(0.5, LooParams(-3.0, 2.0, -math.inf))
    assert loo_pdf(np.zeros((2, 2)), params).shape == (2, 2)


def test_pdf_stays_finite_where_naive_bessel_overflows():
    # r * s / b0 is ~ 2e4 here; I0 of that overflows a double
    value = loo_pdf(1.0, LooParams(0.0, 0.2, -50.0))
    assert math.isfinite(value) and value > 0


def _ks_distance(samples, grid_r, grid_cdf):
    samples = np.sort(samples)
    model = np.interp(samples, grid_r, grid_cdf)
    n = samples.size
    upper = np.arange(1, n + 1) / n - model
    lower = model - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


@pytest.mark.parametrize("params", KS_SETS)
def test_sampler_matches_quadrature_cdf(params):
    amplitude = np.abs(sample_loo(params, 100_000, np.random.default_rng(7)))
    r, cdf = loo_cdf_grid(params)
    assert cdf[-1] == pytest.approx(1.0, abs=1e-6)
    assert _ks_distance(amplitude, r, cdf) < 0.01


def test_sampler_component_statistics():
    params = LooParams(-8.0, 3.0, -20.0)
    n = 1_000_000
    full = sample_loo(params, n, np.random.default_rng(3))
    direct = sample_loo(LooParams(-8.0, 3.0, -math.inf), n, np.random.default_rng(3))
    # same stream: the direct part is drawn first, so the difference is the multipath term
    multipath = full - direct
    assert np.mean(20 * np.log10(np.abs(direct))) == pytest.approx(-8.0, abs=0.05)
    assert np.mean(np.abs(multipath) ** 2) == pytest.approx(2 * 0.005, rel=0.01)
    assert np.all(direct.imag == 0)


def test_random_phase_option_spreads_phase():
    h = sample_loo(LooParams(0.0, 0.5, -math.inf), 50_000, np.random.default_rng(1), random_phase=True)
    assert abs(np.mean(h)) < 0.02
    with pytest.raises(ValueError):
        sample_loo(LooParams(0.0, 0.5, -20), 0, np.random.default_rng(1))


def test_sampler_deterministic_per_seed():
    a = sample_loo(KS_SETS[1], 100, np.random.default_rng(5))
    b = sample_loo(KS_SETS[1], 100, np.random.default_rng(5))
    assert np.array_equal(a, b)


# -- Markov chain ----------------------------------------------------------------

def _random_chain(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 1.0, size=(3, 3))
    p /= p.sum(axis=1, keepdims=True)
    p[:, -1] = 1.0 - p[:, :-1].sum(axis=1)
    return MarkovChain(np.array([1.0, 0.0, 0.0]), p)


def test_stationary_matches_matrix_power_oracle():
    chain = _random_chain(11)
    oracle = np.linalg.matrix_power(chain.transition, 4096)
    pi = stationary_distribution(chain)
    for row in oracle:
        np.testing.assert_allclose(pi, row, atol=1e-8)
    np.testing.assert_allclose(pi @ chain.transition, pi, atol=1e-12)


def test_empirical_occupancy_matches_stationary():
    chain = _random_chain(21)
    seq = sample_state_sequence(chain, 1_000_000, np.random.default_rng(2))
    occupancy = np.bincount(seq, minlength=3) / seq.size
    np.testing.assert_allclose(occupancy, stationary_distribution(chain), atol=0.005)


def test_state_sequence_follows_transition_support():
    p = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    seq = sample_state_sequence(MarkovChain(np.array([0.0, 0.0, 1.0]), p), 5000,
                                np.random.default_rng(0))
    assert seq[0] == 2
    for a, b in zip(seq[:-1], seq[1:]):
        assert p[a, b] > 0


@pytest.mark.parametrize("p,expected", [
    ([[0.9, 0.1], [0.2, 0.8]], True),
    ([[0.0, 1.0], [1.0, 0.0]], False),          # periodic
    ([[1.0, 0.0], [0.3, 0.7]], False),          # reducible
    ([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.0, 0.5]], True),
])
def test_primitivity(p, expected):
    assert is_primitive(np.array(p)) is expected


def test_non_primitive_chain_raises():
    chain = MarkovChain(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ConvergenceError):
        stationary_distribution(chain)


@pytest.mark.parametrize("probs,trans", [
    ([0.5, 0.6], [[1, 0], [0, 1]]),
    ([0.5, 0.5], [[0.7, 0.4], [0, 1]]),
    ([0.5, 0.5], [[1.2, -0.2], [0, 1]]),
    ([1.0], [[0.5, 0.5], [0.5, 0.5]]),
])
def test_chain_validation(probs, trans):
    with pytest.raises(ValueError):
        MarkovChain(np.array(probs, float), np.array(trans, float))


@given(st.lists(st.floats(0.05, 1.0), min_size=9, max_size=9))
def test_stationary_is_a_fixed_point(values):
    p = np.array(values).reshape(3, 3)
    p /= p.sum(axis=1, keepdims=True)
    pi = stationary_distribution(MarkovChain(np.array([1.0, 0.0, 0.0]), p))
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(pi @ p, pi, atol=1e-10)


# -- states and tables -------------------------------------------------------------

@pytest.mark.parametrize("text,state", [("LOS", ChannelState.LOS), ("shadow", ChannelState.SHADOW),
                                        ("DeepShadow", ChannelState.DEEP_SHADOW),
                                        ("deep_shadow", ChannelState.DEEP_SHADOW),
                                        ("Deep Shadow", ChannelState.DEEP_SHADOW), (1, ChannelState.SHADOW)])
def test_state_parsing(text, state):
    assert ChannelState.parse(text) is state


def test_state_labels_and_bad_input():
    assert [s.label for s in ChannelState] == ["LOS", "Shadow", "DeepShadow"]
    assert states_from(["los", 2]) == [ChannelState.LOS, ChannelState.DEEP_SHADOW]
    with pytest.raises(ValueError):
        ChannelState.parse("fog")


def test_default_tables_cover_all_environments():
    tables = default_environment_tables()
    assert set(tables) == set(ENVIRONMENTS)
    for table in tables.values():
        for elev in table.elevations:
            assert len(table.per_state(elev)) == 3
            stationary_distribution(table.chain_at(elev))


def test_default_table_states_are_ordered_by_severity():
    for table in default_environment_tables().values():
        for elev in table.elevations:
            alphas = [p.alpha_db for p in table.per_state(elev)]
            assert alphas == sorted(alphas, reverse=True)


TABLE = """
environments:
  test:
    entries:
      - {elevation: 40, state: LOS, alpha_db: -1, psi_db: 1, mp_db: -20}
      - {elevation: 40, state: Shadow, alpha_db: -4, psi_db: 2, mp_db: -18}
      - {elevation: 40, state: DeepShadow, alpha_db: -9, psi_db: 3, mp_db: -20}
      - {elevation: 60, state: LOS, alpha_db: -0.5, psi_db: 1, mp_db: -20}
      - {elevation: 60, state: Shadow, alpha_db: -3, psi_db: 2, mp_db: -18}
      - {elevation: 60, state: DeepShadow, alpha_db: -8, psi_db: 3, mp_db: -20}
    chains:
      - {elevation: 40, state_probs: [0.6, 0.3, 0.1], transition: [[0.9, 0.1, 0], [0.1, 0.8, 0.1], [0, 0.2, 0.8]]}
      - {elevation: 60, state_probs: [0.6, 0.3, 0.1], transition: [[0.9, 0.1, 0], [0.1, 0.8, 0.1], [0, 0.2, 0.8]]}
"""


def test_table_lookup_uses_nearest_elevation_with_lower_tie():
    table = load_environment_table(TABLE)["test"]
    assert table.lookup(44, "LOS").alpha_db == -1
    assert table.lookup(56, "LOS").alpha_db == -0.5
    assert table.nearest_elevation(50) == 40
    with pytest.raises(TableError):
        table.lookup(30, "LOS")
    with pytest.raises(TableError):
        table.lookup(61, "LOS")


def test_table_missing_cells_are_all_reported():
    lines = [ln for ln in TABLE.splitlines() if "60, state: Shadow" not in ln and "60, state: LOS" not in ln]
    with pytest.raises(TableError) as err:
        load_environment_table("\n".join(lines))
    assert "(60, LOS)" in str(err.value) and "(60, Shadow)" in str(err.value)


@pytest.mark.parametrize("text", ["", "environments: {}", "environments: [1, 2]", ": : :"])
def test_table_rejects_empty_or_malformed(text):
    with pytest.raises(TableError):
        load_environment_table(text)


def test_table_rejects_bad_numbers_and_duplicates():
    with pytest.raises(TableError, match="expected a number"):
        load_environment_table(TABLE.replace("alpha_db: -4,", "alpha_db: abc,"))
    dup = TABLE.replace("{elevation: 60, state: LOS", "{elevation: 40, state: LOS")
    with pytest.raises(TableError, match="duplicate"):
        load_environment_table(dup)


def test_table_rejects_elevation_outside_model_range():
    with pytest.raises(TableError, match="outside"):
        load_environment_table(TABLE.replace("elevation: 60", "elevation: 85"))


def test_mixture_pdf_integrates_to_one():
    table = default_environment_tables()["urban"]
    chain, per_state = table.chain_at(40), table.per_state(40)
    total, _ = integrate.quad(lambda r: mixture_pdf(r, chain, per_state), 0, 3.0, limit=400)
    assert total == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        mixture_pdf(0.5, chain, per_state[:2])
