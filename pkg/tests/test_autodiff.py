import numpy as np
import pytest

from nariqa import autodiff as ad
from nariqa.autodiff import Tensor
from nariqa.errors import DistillationError, GraphError, ShapeError

from conftest import gradcheck, shadow


class TestTensor:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Tensor([1.0, np.nan])
        with pytest.raises(ValueError):
            Tensor([np.inf])

    def test_default_dtype_is_float32(self):
        assert Tensor([1.0, 2.0]).data.dtype == np.float32

    def test_grad_matches_shape_after_backward(self):
        x = Tensor(np.ones((3, 2)), requires_grad=True)
        ad.backward(ad.mean_all(x))
        assert x.grad.shape == (3, 2)

    def test_untracked_tensors_keep_grad_absent(self):
        x = Tensor(np.ones(4), requires_grad=True)
        c = Tensor(np.ones(4))
        ad.backward(ad.mean_all(ad.mul(x, c)))
        assert c.grad is None
        assert x.grad is not None


class TestMatmul:
    def test_identity(self, rng):
        mat = rng.random((3, 3)).astype(np.float32)
        out = ad.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(mat))
        np.testing.assert_array_equal(out.data, mat)

    def test_hand_checked_2x2(self):
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_allclose(out.data, [[3.0], [7.0]])

    def test_shape_error_mentions_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batch_dims_must_agree(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((3, 4, 5))))

    def test_gradcheck_random(self, rng):
        a = shadow(rng.standard_normal((4, 5)))
        b = shadow(rng.standard_normal((5, 6)))
        gradcheck(lambda a, b: ad.mean_all(ad.matmul(a, b)), [a, b])

    def test_gradcheck_batched_with_shared_weight(self, rng):
        a = shadow(rng.standard_normal((3, 4, 5)))
        w = shadow(rng.standard_normal((5, 2)))
        gradcheck(lambda a, w: ad.mean_all(ad.matmul(a, w)), [a, w])


class TestConv2d:
    def test_identity_1x1_kernel(self, rng):
        x = rng.random((2, 1, 5, 5)).astype(np.float32)
        k = np.ones((1, 1, 1, 1), dtype=np.float32)
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1, dtype=np.float32)))
        np.testing.assert_allclose(out.data, x, rtol=1e-6)

    def test_all_ones_3x3(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        k = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        b = Tensor(np.array([0.5], dtype=np.float32))
        out = ad.conv2d(x, k, b)
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data.item() == pytest.approx(9.5)

    def test_stride_and_padding_output_shape(self, rng):
        x = Tensor(rng.random((2, 3, 9, 11)).astype(np.float32))
        k = Tensor(rng.random((4, 3, 3, 3)).astype(np.float32))
        out = ad.conv2d(x, k, stride=2, padding=1)
        assert out.data.shape == (2, 4, 5, 6)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ShapeError):
            ad.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))),
                      padding=1)

    def test_gradcheck_random(self, rng):
        x = shadow(rng.standard_normal((2, 3, 6, 6)))
        k = shadow(rng.standard_normal((4, 3, 3, 3)) * 0.3)
        b = shadow(rng.standard_normal(4) * 0.1)
        gradcheck(lambda x, k, b: ad.mean_all(ad.conv2d(x, k, b, stride=2, padding=1)),
                  [x, k, b])


class TestAdaptiveAvgPool:
    def test_identity_when_already_target_size(self, rng):
        x = rng.random((1, 2, 4, 4)).astype(np.float32)
        out = ad.adaptive_avg_pool2d(Tensor(x), (4, 4))
        np.testing.assert_array_equal(out.data, x)

    def test_constant_preserved(self):
        x = Tensor(np.full((1, 1, 4, 4), 0.7, dtype=np.float32))
        out = ad.adaptive_avg_pool2d(x, (2, 2))
        np.testing.assert_allclose(out.data, 0.7, rtol=1e-6)

    def test_ramp_window_means(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
        out = ad.adaptive_avg_pool2d(x, (2, 2))
        np.testing.assert_allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_global_pooling(self, rng):
        x = rng.random((2, 3, 5, 7)).astype(np.float32)
        out = ad.adaptive_avg_pool2d(Tensor(x), (1, 1))
        np.testing.assert_allclose(out.data[:, :, 0, 0], x.mean(axis=(2, 3)), rtol=1e-5)

    def test_upsampling_is_rejected(self):
        with pytest.raises(ShapeError):
            ad.adaptive_avg_pool2d(Tensor(np.ones((1, 1, 2, 2))), (4, 4))

    def test_gradcheck_uneven_windows(self, rng):
        x = shadow(rng.standard_normal((2, 2, 5, 7)))
        gradcheck(lambda x: ad.mean_all(ad.adaptive_avg_pool2d(x, (3, 3))), [x])


class TestUpsampleNearest:
    def test_values(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        out = ad.upsample_nearest2d(x, 2)
        np.testing.assert_array_equal(
            out.data[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_gradcheck(self, rng):
        x = shadow(rng.standard_normal((1, 2, 3, 3)))
        gradcheck(lambda x: ad.mean_all(ad.upsample_nearest2d(x, 3)), [x])


class TestLayerNorm:
    def test_constant_input_gives_zeros(self):
        x = Tensor(np.full((3, 8), 2.5, dtype=np.float32))
        out = ad.layer_norm(x, Tensor(np.ones(8, dtype=np.float32)),
                            Tensor(np.zeros(8, dtype=np.float32)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-4)

    def test_normalizes_mean_and_variance(self, rng):
        x = Tensor(rng.random((4, 16)).astype(np.float32) * 5)
        out = ad.layer_norm(x, Tensor(np.ones(16, dtype=np.float32)),
                            Tensor(np.zeros(16, dtype=np.float32)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-3)

    def test_gradcheck(self, rng):
        x = shadow(rng.standard_normal((3, 7)))
        g = shadow(rng.standard_normal(7))
        b = shadow(rng.standard_normal(7))
        gradcheck(lambda x, g, b: ad.mean_all(ad.layer_norm(x, g, b)), [x, g, b])


class TestActivationsAndGlue:
    def test_relu_values(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_transpose_last2_is_involution(self, rng):
        x = rng.random((2, 3, 4)).astype(np.float32)
        out = ad.transpose_last2(ad.transpose_last2(Tensor(x)))
        np.testing.assert_array_equal(out.data, x)

    def test_concat_last_axis(self, rng):
        a = Tensor(rng.random((2, 3)).astype(np.float32))
        b = Tensor(rng.random((2, 5)).astype(np.float32))
        assert ad.concat([a, b], axis=-1).data.shape == (2, 8)

    def test_concat_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 5)))], axis=1)

    def test_gelu_gradcheck(self, rng):
        x = shadow(rng.standard_normal(20))
        gradcheck(lambda x: ad.mean_all(ad.gelu(x)), [x])

    def test_gelu_known_values(self):
        out = ad.gelu(Tensor([0.0, 1.0, -1.0]))
        np.testing.assert_allclose(out.data, [0.0, 0.841192, -0.158808], atol=1e-5)

    def test_concat_gradcheck(self, rng):
        a = shadow(rng.standard_normal((2, 3)))
        b = shadow(rng.standard_normal((2, 5)))
        gradcheck(lambda a, b: ad.mean_all(ad.concat([a, b], axis=1)), [a, b])

    def test_mean_axes_gradcheck(self, rng):
        x = shadow(rng.standard_normal((2, 3, 4, 5)))
        gradcheck(lambda x: ad.mean_all(ad.mean_axes(x, (1, 3))), [x])


class TestL1Loss:
    def test_zero_when_equal(self, rng):
        v = rng.random(5).astype(np.float32)
        assert ad.l1_loss(Tensor(v), Tensor(v.copy())).data == 0.0

    def test_hand_value(self):
        out = ad.l1_loss(Tensor([1.0, 2.0]), Tensor([2.0, 4.0]))
        assert out.data == pytest.approx(1.5)

    def test_empty_batch_raises(self):
        with pytest.raises(ShapeError):
            ad.l1_loss(Tensor(np.zeros(0)), Tensor(np.zeros(0)))

    def test_gradcheck_away_from_kinks(self, rng):
        pred = shadow(rng.standard_normal(6) + 5.0)  # well away from targets
        target = Tensor(np.zeros(6), dtype=np.float64)
        gradcheck(lambda p: ad.l1_loss(p, target), [pred])


class TestFeatureL2Loss:
    def test_zero_when_identical(self, rng):
        fa = [Tensor(rng.random((2, 3)).astype(np.float32))]
        assert ad.feature_l2_loss(fa, [Tensor(fa[0].data.copy())]).data == 0.0

    def test_three_four_five(self):
        fa = [Tensor([[3.0, 4.0]])]
        fb = [Tensor([[0.0, 0.0]])]
        assert ad.feature_l2_loss(fa, fb).data == pytest.approx(5.0)

    def test_matches_flat_float64_recomputation(self, rng):
        fa = [Tensor(rng.random((3, 4, 2)).astype(np.float32)),
              Tensor(rng.random((3, 6)).astype(np.float32))]
        fb = [Tensor(rng.random((3, 4, 2)).astype(np.float32)),
              Tensor(rng.random((3, 6)).astype(np.float32))]
        # independent scalar-loop oracle in float64
        expected = 0.0
        for i in range(3):
            for a, b in zip(fa, fb):
                d = a.data[i].astype(np.float64).ravel() - b.data[i].astype(np.float64).ravel()
                expected += np.sqrt(float(sum(x * x for x in d)))
        expected /= 3
        assert ad.feature_l2_loss(fa, fb).data == pytest.approx(expected, abs=1e-5)

    def test_symmetry(self, rng):
        fa = [Tensor(rng.random((2, 5)).astype(np.float32))]
        fb = [Tensor(rng.random((2, 5)).astype(np.float32))]
        assert ad.feature_l2_loss(fa, fb).data == ad.feature_l2_loss(fb, fa).data

    def test_length_mismatch_names_problem(self):
        fa = [Tensor(np.ones((1, 2)))]
        with pytest.raises(DistillationError, match="lengths"):
            ad.feature_l2_loss(fa, [])

    def test_shape_mismatch_names_layer_index(self):
        fa = [Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3)))]
        fb = [Tensor(np.ones((1, 2))), Tensor(np.ones((1, 4)))]
        with pytest.raises(DistillationError, match="layer 1"):
            ad.feature_l2_loss(fa, fb)

    def test_gradcheck(self, rng):
        fa = [shadow(rng.standard_normal((2, 3))), shadow(rng.standard_normal((2, 4)))]
        fb = [shadow(rng.standard_normal((2, 3))), shadow(rng.standard_normal((2, 4)))]
        gradcheck(lambda a0, a1, b0, b1: ad.feature_l2_loss([a0, a1], [b0, b1]),
                  fa + fb)

    def test_squared_variant(self, rng):
        fa = [Tensor([[3.0, 4.0]])]
        fb = [Tensor([[0.0, 0.0]])]
        assert ad.feature_l2_loss(fa, fb, squared=True).data == pytest.approx(25.0)


class TestBackward:
    def test_mean_all_uniform_gradient(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        ad.backward(ad.mean_all(x))
        np.testing.assert_allclose(x.grad, [0.25] * 4)

    def test_two_layer_mlp_gradcheck(self, rng):
        w1 = shadow(rng.standard_normal((5, 4)) * 0.5)
        b1 = shadow(rng.standard_normal(4) * 0.1)
        w2 = shadow(rng.standard_normal((4, 1)) * 0.5)
        b2 = shadow(rng.standard_normal(1) * 0.1)
        x = Tensor(rng.standard_normal((3, 5)), dtype=np.float64)
        y = Tensor(rng.standard_normal(3) + 10.0, dtype=np.float64)

        def loss(w1, b1, w2, b2):
            h = ad.gelu(ad.add(ad.matmul(x, w1), b1))
            out = ad.reshape(ad.add(ad.matmul(h, w2), b2), (3,))
            return ad.l1_loss(out, y)

        gradcheck(loss, [w1, b1, w2, b2])

    def test_gradients_accumulate_across_backwards(self):
        x = Tensor(np.ones(4), requires_grad=True)
        ad.backward(ad.mean_all(x))
        first = x.grad.copy()
        ad.backward(ad.mean_all(x))
        np.testing.assert_allclose(x.grad, 2 * first)

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ad.add(x, x)
        ad.backward(ad.mean_all(y))
        np.testing.assert_allclose(x.grad, [2.0 / 3] * 3)

    def test_non_scalar_loss_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError):
            ad.backward(ad.relu(x))

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = ad.mean_all(x)
        assert not y.requires_grad


class TestDeterminism:
    def test_ops_bitwise_reproducible(self, rng):
        a = rng.standard_normal((8, 16)).astype(np.float32)
        w = rng.standard_normal((16, 16)).astype(np.float32)

        def run():
            out = ad.gelu(ad.matmul(Tensor(a), Tensor(w)))
            return ad.mean_all(out).data.copy()

        assert run().tobytes() == run().tobytes()
