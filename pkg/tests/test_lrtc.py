import numpy as np
import pytest

from lrtc_csc.csc import ConvDictionary, CscParams
from lrtc_csc.harness import generate_mask
from lrtc_csc.lrtc import (
    ConfigError, LrtcConfig, Observation, PassThrough, complete, f_update_snn,
    f_update_tnn, init_estimate, multiplier_update, with_method, x_update_i, x_update_ii,
)
from lrtc_csc.prox import tnn_value
from lrtc_csc.tensor import fft_mode3, t_product, unfold


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def tucker_rank1(shape, seed):
    r = np.random.default_rng(seed)
    a, b, c = (r.standard_normal(n) for n in shape)
    return np.einsum("i,j,k->ijk", a, b, c)


def tubal_rank1(n1, n2, n3, seed):
    r = np.random.default_rng(seed)
    return t_product(r.standard_normal((n1, 1, n3)), r.standard_normal((1, n2, n3)))


def small_dictionary():
    return ConvDictionary.random(4, 4, seed=0)


class TestInitEstimate:
    def test_single_observed_entry(self):
        data = np.zeros((2, 2, 2))
        mask = np.zeros_like(data, dtype=bool)
        data[1, 0, 1] = 5.0
        mask[1, 0, 1] = True
        np.testing.assert_array_equal(init_estimate(Observation(data, mask)), 5.0)

    def test_unobserved_get_observed_mean(self, rng):
        t = rng.standard_normal((4, 5, 3))
        mask = generate_mask(t.shape, 0.5, 1)
        x = init_estimate(Observation(t, mask))
        np.testing.assert_array_equal(x[mask], t[mask])
        np.testing.assert_allclose(x[~mask], t[mask].sum() / mask.sum(), rtol=1e-14)

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            Observation(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), bool))


class TestSubproblems:
    def test_snn_zero(self):
        cfg = LrtcConfig()
        x = np.zeros((3, 4, 5))
        om = [np.zeros_like(unfold(x, k)) for k in (1, 2, 3)]
        assert all(np.all(f == 0) for f in f_update_snn(x, om, cfg))

    def test_snn_rank1_singular_value(self):
        x = tucker_rank1((5, 4, 3), 0)
        cfg = LrtcConfig(beta1=(0.5, 1.0, 2.0))
        om = [np.zeros_like(unfold(x, k)) for k in (1, 2, 3)]
        for k, f in zip((1, 2, 3), f_update_snn(x, om, cfg)):
            sigma = np.linalg.svd(unfold(x, k), compute_uv=False)[0]
            tau = (1 / 3) / cfg.mode_betas()[k - 1]
            s = np.linalg.svd(f, compute_uv=False)
            assert s[0] == pytest.approx(max(sigma - tau, 0.0), rel=1e-10)
            np.testing.assert_allclose(s[1:], 0, atol=1e-10)

    def test_tnn_oracle(self, rng):
        x = rng.standard_normal((6, 6, 4))
        f = f_update_tnn(x, np.zeros_like(x), 2.0)
        xh = fft_mode3(x)
        ref = sum(np.maximum(np.linalg.svd(xh[:, :, k], compute_uv=False) - 0.5, 0).sum()
                  for k in range(4))
        assert tnn_value(f) == pytest.approx(ref, rel=1e-10)

    def test_tnn_large_beta(self, rng):
        x, om = rng.standard_normal((2, 3, 3, 4))
        np.testing.assert_allclose(f_update_tnn(x, om, 1e9), x - om / 1e9, atol=1e-6)

    def test_x_update_i_hand_arithmetic(self):
        shape = (2, 2, 2)
        mask = np.ones(shape, bool)
        mask[1, 1, 0] = False
        obs = Observation(np.zeros(shape), mask)
        cfg = LrtcConfig(method="csc1", beta1=(1.0, 2.0, 3.0), beta2=4.0,
                         dictionary=small_dictionary())
        fk = [np.full_like(unfold(np.zeros(shape), k), 2.0) for k in (1, 2, 3)]
        om = [np.zeros_like(f) for f in fk]
        x = x_update_i(fk, om, np.full(shape, 6.0), np.zeros(shape), obs, cfg)
        assert x[1, 1, 0] == pytest.approx(3.6, abs=1e-14)
        assert np.all(x[mask] == 0)

    def test_x_update_i_constant(self, rng):
        shape = (3, 3, 2)
        obs = Observation(rng.standard_normal(shape), generate_mask(shape, 0.5, 0))
        cfg = LrtcConfig()
        fk = [unfold(np.full(shape, 0.7), k) for k in (1, 2, 3)]
        om = [np.zeros_like(f) for f in fk]
        x = x_update_i(fk, om, None, None, obs, cfg)
        np.testing.assert_allclose(x[~obs.mask], 0.7, atol=1e-15)
        np.testing.assert_array_equal(x[obs.mask], obs.data[obs.mask])

    def test_x_update_ii_hand_arithmetic(self):
        shape = (1, 1, 2)
        mask = np.array([True, False]).reshape(shape)
        obs = Observation(np.full(shape, 9.0), mask)
        x = x_update_ii(np.full(shape, 4.0), np.zeros(shape), np.full(shape, 0.5),
                        np.full(shape, -0.5), obs, 1.0, 3.0)
        assert x[0, 0, 1] == pytest.approx(1.0, abs=1e-15)
        assert x[0, 0, 0] == 9.0

    def test_fully_observed_x_updates(self, rng):
        t = rng.standard_normal((2, 3, 2))
        obs = Observation(t, np.ones(t.shape, bool))
        junk = rng.standard_normal(t.shape)
        np.testing.assert_array_equal(x_update_ii(junk, junk, junk, junk, obs, 1, 1), t)

    def test_multiplier_update(self):
        w = np.zeros(3)
        np.testing.assert_array_equal(multiplier_update(w, 2.0, np.full(3, 0.5), np.zeros(3)), 1.0)
        a = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(multiplier_update(a, 5.0, a, a), a)
        r1, r2 = np.array([0.1, 0.2]), np.array([0.3, -0.4])
        w = multiplier_update(multiplier_update(np.zeros(2), 2.0, r1, 0), 2.0, r2, 0)
        np.testing.assert_allclose(w, 2.0 * (r1 + r2), atol=1e-15)


class TestConfig:
    def test_dictionary_required_for_csc(self):
        with pytest.raises(ConfigError):
            LrtcConfig(method="csc2")
        with pytest.raises(ConfigError):
            LrtcConfig(method="halrtc", dictionary=small_dictionary())

    def test_tnn_scalar_beta(self):
        with pytest.raises(ConfigError):
            LrtcConfig(method="lrtc_tnn", beta1=(0.1, 0.2, 0.3))

    def test_aliases_and_unknown(self):
        assert LrtcConfig(method="tnn").method == "lrtc_tnn"
        with pytest.raises(ConfigError):
            LrtcConfig(method="nope")

    def test_leading_modes(self):
        assert LrtcConfig(snn_modes="leading").active_modes() == [1, 2]


ALL_METHODS = ["halrtc", "lrtc_tnn", "csc1", "csc2"]


def make_cfg(method, **kw):
    d = small_dictionary() if method.startswith("csc") else None
    csc = CscParams(Lambda=1.0, inner_iters=5)
    return LrtcConfig(method=method, dictionary=d, csc=csc, csc_scale=1.0, **kw)


class TestComplete:
    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_barrier_every_iteration(self, method, rng):
        t = rng.random((32, 32, 3))
        obs = Observation(t, generate_mask(t.shape, 0.5, 3))
        bad = []

        def check(i, x):
            if not np.array_equal(x[obs.mask], t[obs.mask]):
                bad.append(i)

        complete(obs, make_cfg(method, max_outer_iters=10), callback=check)
        assert bad == []

    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_fully_observed(self, method, rng):
        t = rng.random((16, 16, 2))
        seen = []
        cfg = make_cfg(method, max_outer_iters=3, outer_tol=0.0)
        complete(Observation(t, np.ones(t.shape, bool)), cfg,
                 callback=lambda i, x: seen.append(np.array_equal(x, t)))
        assert seen == [True] * 3

    @pytest.mark.parametrize("pair", [("csc1", "halrtc"), ("csc2", "lrtc_tnn")])
    def test_degeneration(self, pair, rng):
        t = rng.random((12, 10, 4))
        obs = Observation(t, generate_mask(t.shape, 0.5, 8))
        deg, base = [], []
        cfg = make_cfg(pair[0], max_outer_iters=20, outer_tol=0.0)
        complete(obs, cfg, denoiser=PassThrough(), callback=lambda i, x: deg.append(x.copy()))
        complete(obs, with_method(cfg, pair[1]), callback=lambda i, x: base.append(x.copy()))
        assert len(deg) == len(base) == 20
        assert max(np.max(np.abs(a - b)) for a, b in zip(deg, base)) < 1e-10

    def test_mode_symmetry(self, rng):
        t = tucker_rank1((8, 6, 3), 2)
        mask = generate_mask(t.shape, 0.5, 4)
        cfg = LrtcConfig(alpha=(0.2, 0.5, 0.3), beta1=(0.1, 0.3, 0.2), max_outer_iters=30)
        cfg_p = LrtcConfig(alpha=(0.5, 0.2, 0.3), beta1=(0.3, 0.1, 0.2), max_outer_iters=30)
        x = complete(Observation(t, mask), cfg).recovered
        xp = complete(Observation(t.transpose(1, 0, 2), mask.transpose(1, 0, 2)), cfg_p).recovered
        np.testing.assert_allclose(xp, x.transpose(1, 0, 2), rtol=0, atol=1e-10)

    def test_halrtc_exact_recovery(self):
        t = tucker_rank1((30, 30, 3), 42)
        obs = Observation(t, generate_mask(t.shape, 0.5, 42))
        res = complete(obs, LrtcConfig(method="halrtc"), ground_truth=t)
        assert res.iterations <= 200 and res.trace[-1].re < 1e-2

    def test_tnn_exact_recovery(self):
        t = tubal_rank1(30, 30, 5, 42)
        obs = Observation(t, generate_mask(t.shape, 0.5, 42))
        res = complete(obs, LrtcConfig(method="lrtc_tnn"), ground_truth=t)
        assert res.trace[-1].re < 1e-2

    def test_trace_records(self, rng):
        t = tucker_rank1((10, 10, 3), 1)
        res = complete(Observation(t, generate_mask(t.shape, 0.5, 1)),
                       LrtcConfig(max_outer_iters=5, outer_tol=0.0), ground_truth=t)
        assert [r.iter for r in res.trace] == [1, 2, 3, 4, 5]
        assert all(np.isfinite(r.re) and r.seconds >= 0 for r in res.trace)

    def test_passthrough_needs_csc_method(self, rng):
        t = rng.random((4, 4, 2))
        with pytest.raises(ConfigError):
            complete(Observation(t, np.ones(t.shape, bool)), LrtcConfig(), denoiser=PassThrough())
