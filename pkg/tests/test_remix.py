import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcremix.audio import AudioBuffer
from qcremix.exceptions import AlignmentError, DegenerateDataError
from qcremix.remix import (
    G_MAX_DB,
    G_MIN_DB,
    K_PRESETS,
    GainMapper,
    GainMapping,
    RemixPlan,
    apply_remix,
    fit_mapping,
    map_gain,
)


class TestMapping:
    @pytest.mark.parametrize(
        "preset,q,expected",
        [("refined", 60, 14.33), ("refined", 0, 4.0), ("refined", 100, 26.0), ("initial", 60, 20.32)],
    )
    def test_presets(self, preset, q, expected):
        plan = map_gain(q, GainMapping.from_preset(preset))
        assert abs(plan.g_db - expected) <= 1e-9
        assert plan.gamma == pytest.approx(10 ** (-expected / 20), rel=1e-12)

    def test_raw_values_before_clamp(self):
        m = GainMapping.from_preset("refined")
        assert m.raw_gain(0.0) == pytest.approx(-12.67, abs=1e-12)
        assert m.raw_gain(100.0) == pytest.approx(32.33, abs=1e-12)

    @pytest.mark.parametrize("name,k", sorted(K_PRESETS.items()))
    def test_k_offset(self, name, k):
        m = GainMapping.from_preset("refined", k)
        assert m.gain(60.0) == pytest.approx(min(G_MAX_DB, max(G_MIN_DB, 14.33 + k)), abs=1e-9)

    @given(st.floats(0, 100), st.sampled_from(["initial", "refined"]), st.floats(-12, 12))
    @settings(max_examples=100, deadline=None)
    def test_always_within_bounds(self, q, preset, k):
        g = map_gain(q, GainMapping.from_preset(preset, k)).g_db
        assert G_MIN_DB <= g <= G_MAX_DB

    @given(st.floats(0, 100), st.floats(0, 100))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_quality(self, a, b):
        lo, hi = sorted((a, b))
        assert map_gain(lo).g_db <= map_gain(hi).g_db

    @pytest.mark.parametrize("q", [-0.1, 100.5, float("nan")])
    def test_out_of_range(self, q):
        with pytest.raises(ValueError):
            map_gain(q)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            GainMapping.from_preset("steep")

    def test_plan_record(self):
        rec = map_gain(60, GainMapping.from_preset("refined", 6.0)).as_record()
        assert rec["preset"] == "refined" and rec["k"] == 6.0 and rec["q_hat"] == 60.0


@pytest.fixture
def components():
    rng = np.random.default_rng(8)
    s = AudioBuffer(rng.standard_normal((2, 48000)) * 0.3)
    b = AudioBuffer(rng.standard_normal((2, 48000)) * 0.1)
    x = AudioBuffer(s.samples + b.samples)
    return x, s, b


class TestApplyRemix:
    def test_unit_gamma_identity(self, components):
        x, s, _ = components
        mapping = GainMapping(0.0, 0.0, clamp=False)
        plan = map_gain(50.0, mapping)
        assert plan.gamma == 1.0
        y = apply_remix(x, s, plan)
        np.testing.assert_array_equal(y.samples, x.samples)

    @pytest.mark.parametrize("g", [4.0, 14.33, 20.0, 26.0])
    def test_attenuation_exact_components(self, components, g):
        x, s, b = components
        y = apply_remix(x, s, RemixPlan.from_gain(g))
        residual = y.samples - s.samples
        drop = 10 * np.log10(np.sum(residual**2) / np.sum(b.samples**2))
        assert drop == pytest.approx(-g, abs=0.01)

    @given(st.floats(0, 40))
    @settings(max_examples=25, deadline=None)
    def test_background_free_invariance(self, g):
        x = AudioBuffer(np.random.default_rng(1).standard_normal((1, 500)))
        y = apply_remix(x, x, RemixPlan.from_gain(g))
        np.testing.assert_array_equal(y.samples, x.samples)

    def test_misaligned(self, components):
        x, s, _ = components
        with pytest.raises(AlignmentError):
            apply_remix(x, AudioBuffer(s.samples[:, :-1]), RemixPlan.from_gain(10.0))


class TestFitMapping:
    def test_exact_line(self):
        q = np.linspace(10, 90, 9)
        m = fit_mapping(q, 0.5 * q - 10)
        assert m.slope == pytest.approx(0.5, abs=1e-9)
        assert m.intercept == pytest.approx(-10.0, abs=1e-9)

    def test_normal_equation_oracle(self):
        rng = np.random.default_rng(4)
        q = rng.uniform(0, 100, 200)
        g = 0.3 * q + 2 + rng.normal(0, 1.5, 200)
        A = np.column_stack([q, np.ones_like(q)])
        slope, intercept = np.linalg.solve(A.T @ A, A.T @ g)
        m = fit_mapping(q, g)
        assert m.slope == pytest.approx(slope, abs=1e-9)
        assert m.intercept == pytest.approx(intercept, abs=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateDataError):
            fit_mapping([50.0, 50.0, 50.0], [1.0, 2.0, 3.0])


class TestGainMapper:
    def test_fit_predict(self):
        q = np.linspace(20, 80, 13)
        mapper = GainMapper().fit(q.reshape(-1, 1), 0.4 * q - 8)
        np.testing.assert_allclose(mapper.coef_, [0.4], atol=1e-12)
        np.testing.assert_allclose(mapper.predict(np.array([[50.0], [0.0]])), [12.0, G_MIN_DB], atol=1e-9)

    def test_preset(self):
        mapper = GainMapper.from_preset("refined")
        np.testing.assert_allclose(mapper.predict([[60.0]]), [14.33], atol=1e-9)

    def test_params_round_trip(self):
        assert GainMapper(k=6.0).get_params() == {"k": 6.0, "g_min": G_MIN_DB, "g_max": G_MAX_DB}
