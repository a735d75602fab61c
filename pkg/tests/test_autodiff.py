import json
import math

import numpy as np
import pytest

from routerec import autodiff as ad


def expect_grad(build, store, name):
    store.zero_grads()
    loss = build()
    ad.backward(loss)
    return store[name].grad.copy()


class TestBasicOps:
    def test_dense_zero_matrix(self):
        w = np.zeros((3, 4))
        assert np.array_equal(ad.dense(w, np.ones(4)), np.zeros(3))

    def test_relu_values(self):
        out = ad.relu(np.array([-1.0, 2.0]))
        assert out.tolist() == [0.0, 2.0]

    def test_concat_dims_add(self):
        out = ad.concat([np.zeros(3), np.zeros(4)])
        assert out.shape == (7,)

    def test_shape_mismatch_raises(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (3, 4))
        with pytest.raises(ValueError):
            ad.matmul(w, np.ones(5))

    def test_nograd_mode_returns_arrays(self):
        out = ad.tanh(np.array([0.5]))
        assert isinstance(out, np.ndarray)
        out = ad.gru_step(np.zeros((2, 5)), np.zeros(2), np.zeros((2, 5)), np.zeros(2),
                          np.zeros((2, 5)), np.zeros(2), np.ones(3), np.ones(2))
        assert isinstance(out, np.ndarray)


class TestSoftmax:
    def test_symmetric_pair(self):
        assert ad.softmax(np.array([1.0, 1.0])).tolist() == [0.5, 0.5]

    def test_analytic_case(self):
        out = ad.softmax(np.array([0.0, math.log(3.0)]))
        assert out == pytest.approx([0.25, 0.75], abs=1e-12)

    def test_large_scores_no_overflow(self):
        out = ad.softmax(np.array([1000.0, 0.0]))
        assert out[0] == pytest.approx(1.0, abs=1e-12)
        assert np.isfinite(out).all()

    def test_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            out = ad.softmax(rng.normal(size=rng.integers(1, 9)))
            assert abs(out.sum() - 1.0) <= 1e-12

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=6)
        perm = rng.permutation(6)
        assert ad.softmax(x)[perm] == pytest.approx(ad.softmax(x[perm]), abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ad.softmax(np.array([]))


class TestGruStep:
    def _zeros(self, k_in=3, k_state=2):
        z = lambda *s: np.zeros(s)
        return (z(k_state, k_in + k_state), z(k_state), z(k_state, k_in + k_state),
                z(k_state), z(k_state, k_in + k_state), z(k_state))

    def test_zero_weights_halve_state(self):
        params = self._zeros()
        h = np.array([0.8, -0.4])
        out = ad.gru_step(*params, np.zeros(3), h)
        assert out == pytest.approx(0.5 * h, abs=0)

    def test_zero_weights_zero_state(self):
        params = self._zeros()
        out = ad.gru_step(*params, np.zeros(3), np.zeros(2))
        assert out.tolist() == [0.0, 0.0]

    def test_one_dim_hand_case(self):
        # all weights 1, biases 0, x = 0, h = 1
        ones = np.ones((1, 2))
        zero = np.zeros(1)
        out = ad.gru_step(ones, zero, ones, zero, ones, zero,
                          np.zeros(1), np.ones(1))
        sig = 1.0 / (1.0 + math.exp(-1.0))
        cand = math.tanh(sig)
        expected = (1.0 - sig) * 1.0 + sig * cand
        assert out[0] == pytest.approx(expected, abs=1e-12)
        assert out[0] == pytest.approx(0.7247, abs=5e-4)


class TestBackward:
    def test_square_gradient(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (), init="zeros")
        w.data[...] = 3.0
        loss = ad.mul(w, w)
        ad.backward(loss)
        assert w.grad == pytest.approx(6.0)

    def test_unreached_parameter_zero_grad(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (2,))
        other = store.add("other", (2,))
        loss = ad.vsum(ad.mul(w, w))
        ad.backward(loss)
        assert np.array_equal(other.grad, np.zeros(2))

    def test_non_scalar_rejected(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (3,))
        with pytest.raises(ValueError):
            ad.backward(ad.mul(w, w))

    def test_mlp_matches_finite_differences(self):
        store = ad.ParamStore(seed=5)
        w1 = store.add("w1", (4, 3))
        b1 = store.add("b1", (4,), init="zeros")
        w2 = store.add("w2", (1, 4))
        x = np.random.default_rng(2).normal(size=3)

        def loss():
            h = ad.tanh(ad.add(ad.matmul(w1, x), b1))
            return ad.vsum(ad.matmul(w2, h))

        assert ad.finite_diff_check(store, loss) <= 1e-5

    def test_grad_accumulates_across_backward_calls(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (), init="zeros")
        w.data[...] = 2.0
        for _ in range(2):
            ad.backward(ad.mul(w, w))
        assert w.grad == pytest.approx(8.0)

    def test_fanout_reuse(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (), init="zeros")
        w.data[...] = 1.5
        y = ad.mul(w, w)
        loss = ad.add(y, y)
        ad.backward(loss)
        assert w.grad == pytest.approx(6.0)


class TestOptimizer:
    def test_zero_gradient_keeps_parameters(self):
        store = ad.ParamStore(seed=1)
        w = store.add("w", (3,))
        before = w.data.copy()
        store.adam_step(lr=0.1)
        assert np.array_equal(w.data, before)

    def test_same_seed_identical_runs(self):
        def run():
            store = ad.ParamStore(seed=9)
            w = store.add("w", (4,))
            for _ in range(5):
                ad.backward(ad.vsum(ad.mul(w, w)))
                store.adam_step(lr=0.05)
            return w.data.copy()

        assert np.array_equal(run(), run())

    def test_converges_on_quadratic(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (), init="zeros")
        for _ in range(100):
            diff = ad.sub(w, 3.0)
            ad.backward(ad.mul(diff, diff))
            store.adam_step(lr=0.1)
        assert abs(float(w.data) - 3.0) < 0.05

    def test_nan_gradient_names_parameter(self):
        store = ad.ParamStore(seed=0)
        store.add("w", (2,))
        store.add("bad_param", (2,))
        store["bad_param"].grad[0] = math.nan
        with pytest.raises(ad.NumericError, match="bad_param"):
            store.adam_step(lr=0.1)

    def test_clipping_bounds_update_norm(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (4,), init="zeros")
        w.grad[...] = 1e6
        store.adam_step(lr=1.0, clip_norm=5.0)
        # after clipping, the first Adam step magnitude is at most lr per coord
        assert np.all(np.abs(w.data) <= 1.0 + 1e-12)

    def test_duplicate_name_rejected(self):
        store = ad.ParamStore(seed=0)
        store.add("w", (2,))
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", (3,))


class TestNumericGuards:
    def test_overflow_raises(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (), init="zeros")
        w.data[...] = 1000.0
        with pytest.raises(ad.NumericError):
            ad.exp(ad.mul(w, w))

    def test_log_nonpositive_raises(self):
        with pytest.raises(ad.NumericError):
            ad.log(np.array([0.0]))

    def test_float64_everywhere(self):
        out = ad.tanh(np.array([1], dtype=np.int64))
        assert out.dtype == np.float64


class TestFiniteDiffCheck:
    def test_linear_function_near_exact(self):
        store = ad.ParamStore(seed=3)
        w = store.add("w", (5,))
        c = np.random.default_rng(0).normal(size=5)
        err = ad.finite_diff_check(store, lambda: ad.dot(w, c))
        assert err <= 1e-10

    def test_corrupted_backward_detected(self):
        store = ad.ParamStore(seed=3)
        w = store.add("w", (4,))
        c = np.random.default_rng(1).normal(size=4)

        def bad_tanh(x):
            out = ad.Value(np.tanh(x.data), (x,))

            def _bw(g, out=out, x=x):
                x.grad += g * 0.9 * (1.0 - out.data * out.data)  # wrong rule
            out._bw = _bw
            return out

        err = ad.finite_diff_check(store, lambda: ad.vsum(ad.mul(bad_tanh(w), c)))
        assert err > 1e-2

    def test_coordinate_sampling_cap(self):
        store = ad.ParamStore(seed=0)
        w = store.add("w", (100, 100))
        err = ad.finite_diff_check(store, lambda: ad.vsum(ad.mul(w, w)),
                                   max_coords=50)
        assert err <= 1e-6


class TestCheckpointIO:
    def test_bit_exact_round_trip(self, tmp_path):
        store = ad.ParamStore(seed=13)
        store.add("a", (3, 2))
        store.add("b", (4,), init="zeros")
        store["b"].data[:] = [math.pi, -1e-12, 2**-30, 1e17]
        p1, p2 = tmp_path / "c1.json", tmp_path / "c2.json"
        ad.save_store(store, str(p1), config={"k": 1})
        loaded, config, extras = ad.load_store(str(p1))
        assert config == {"k": 1}
        for name in store.names():
            assert np.array_equal(loaded[name].data, store[name].data)
        ad.save_store(loaded, str(p2), config=config)
        assert p1.read_bytes() == p2.read_bytes()

    def test_checkpoint_is_json(self, tmp_path):
        store = ad.ParamStore(seed=0)
        store.add("w", (2, 2))
        path = tmp_path / "c.json"
        ad.save_store(store, str(path))
        doc = json.loads(path.read_text())
        assert doc["params"]["w"]["shape"] == [2, 2]
        assert len(doc["params"]["w"]["data"]) == 4
