"""Autodiff engine: every primitive against central differences, plus
structural backward-pass guarantees (accumulation, idempotence, zeros for
unreachable leaves) and the LSTM cell's hand-checkable values."""
import numpy as np
import pytest

from slotfill import autodiff as ad
from slotfill.errors import ConfigError, ContractError, ShapeError

from conftest import assert_grads_close, finite_diff

# frozen independent-oracle values (40-digit arithmetic, rounded)
SIGMOID_1 = 0.7310585786300049
LSTM_C = 0.7310585786300049
LSTM_H = 0.3118562749129378


def _check(build, arrays, rel=1e-4, step=1e-6, what=""):
    """FD-check d(build)/d(array) for every array."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    tape = ad.Tape()
    loss = build(tape, tensors)
    tape.backward(loss)
    # a tensor the graph never touched keeps grad None; that reads as zero
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(a)
        for t, a in zip(tensors, arrays)
    ]

    def f():
        fresh = [ad.Tensor(a) for a in arrays]
        return float(build(ad.Tape(), fresh).data)

    numeric = finite_diff(f, arrays, step=step)
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        assert_grads_close(a, n, rel=rel, what=f"{what or build.__name__} input {i}")


def _wsum(tape, x, rng):
    """Random-weighted scalar readout so every output entry matters."""
    w = ad.Tensor(rng.normal(size=x.shape))
    return tape.sum(tape.mul(x, w))


class TestPrimitivesAgainstFiniteDifferences:
    def test_matmul(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 5))
        w = rng.normal(size=(3, 5))
        _check(
            lambda t, xs: t.sum(t.mul(t.matmul(xs[0], xs[1]), ad.Tensor(w))),
            [a, b], what="matmul",
        )

    def test_add_broadcast(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3,))
        w = rng.normal(size=(4, 3))
        _check(
            lambda t, xs: t.sum(t.mul(t.add(xs[0], xs[1]), ad.Tensor(w))),
            [a, b], what="add",
        )

    def test_mul_broadcast(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(2, 5))
        b = rng.normal(size=(1, 5))
        w = rng.normal(size=(2, 5))
        _check(
            lambda t, xs: t.sum(t.mul(t.mul(xs[0], xs[1]), ad.Tensor(w))),
            [a, b], what="mul",
        )

    def test_scale(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(3, 3))
        _check(lambda t, xs: t.sum(t.scale(xs[0], -2.5)), [a], what="scale")

    def test_concat_and_narrow(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 2))
        w = rng.normal(size=(2, 4))

        def build(t, xs):
            cat = t.concat([xs[0], xs[1]])  # [2,5]
            part = t.narrow(cat, 1, 4)
            return t.sum(t.mul(part, ad.Tensor(w)))

        _check(build, [a, b], what="concat/narrow")

    def test_time_step(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 4, 3))
        w = rng.normal(size=(2, 3))
        _check(
            lambda t, xs: t.sum(t.mul(t.time_step(xs[0], 2), ad.Tensor(w))),
            [x], what="time_step",
        )

    def test_reshape(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 6))
        w = rng.normal(size=(3, 4))
        _check(
            lambda t, xs: t.sum(t.mul(t.reshape(xs[0], (3, 4)), ad.Tensor(w))),
            [x], what="reshape",
        )

    def test_sigmoid(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 4)) * 3
        w = rng.normal(size=(3, 4))
        _check(
            lambda t, xs: t.sum(t.mul(t.sigmoid(xs[0]), ad.Tensor(w))),
            [x], what="sigmoid",
        )

    def test_tanh(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))
        _check(
            lambda t, xs: t.sum(t.mul(t.tanh(xs[0]), ad.Tensor(w))),
            [x], what="tanh",
        )

    def test_softmax(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 5))
        w = rng.normal(size=(4, 5))
        _check(
            lambda t, xs: t.sum(t.mul(t.softmax(xs[0]), ad.Tensor(w))),
            [x], what="softmax",
        )

    def test_softmax_masked(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(3, 6))
        mask = rng.random((3, 6)) > 0.3
        mask[:, 0] = True
        w = rng.normal(size=(3, 6))
        _check(
            lambda t, xs: t.sum(t.mul(t.softmax(xs[0], mask=mask), ad.Tensor(w))),
            [x], what="softmax-mask",
        )

    def test_log(self):
        rng = np.random.default_rng(11)
        x = rng.random((3, 4)) + 0.5
        w = rng.normal(size=(3, 4))
        _check(
            lambda t, xs: t.sum(t.mul(t.log(xs[0]), ad.Tensor(w))),
            [x], what="log",
        )

    def test_sum_axis(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(3, 4, 2))
        w = rng.normal(size=(3, 2))
        _check(
            lambda t, xs: t.sum(t.mul(t.sum(xs[0], axis=1), ad.Tensor(w))),
            [x], what="sum-axis",
        )

    def test_pick(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(4, 6))
        ids = rng.integers(0, 6, size=4)
        w = rng.normal(size=(4,))
        _check(
            lambda t, xs: t.sum(t.mul(t.pick(xs[0], ids), ad.Tensor(w))),
            [x], what="pick",
        )

    def test_embed(self):
        rng = np.random.default_rng(14)
        table = rng.normal(size=(7, 3))
        ids = rng.integers(0, 7, size=(2, 5))  # repeats exercise accumulation
        w = rng.normal(size=(2, 5, 3))
        _check(
            lambda t, xs: t.sum(t.mul(t.embed(xs[0], ids), ad.Tensor(w))),
            [table], what="embed",
        )

    def test_dropout_with_fixed_mask(self):
        arr = np.random.default_rng(15).normal(size=(4, 6))
        w = np.random.default_rng(16).normal(size=(4, 6))

        def build(t, xs):
            rng = np.random.Generator(np.random.PCG64(99))
            return t.sum(t.mul(t.dropout(xs[0], 0.5, rng, train=True), ad.Tensor(w)))

        _check(build, [arr], what="dropout")

    def test_lstm_cell(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(3, 4))
        h0 = rng.normal(size=(3, 2))
        c0 = rng.normal(size=(3, 2))
        wx = rng.normal(size=(4, 8)) * 0.5
        wh = rng.normal(size=(2, 8)) * 0.5
        b = rng.normal(size=(8,)) * 0.5
        wout = rng.normal(size=(3, 2))

        def build(t, xs):
            params = ad.LstmParams(xs[3], xs[4], xs[5])
            h, c = ad.lstm_cell(t, xs[0], xs[1], xs[2], params)
            return t.add(
                t.sum(t.mul(h, ad.Tensor(wout))), t.sum(t.mul(c, ad.Tensor(wout)))
            )

        _check(build, [x, h0, c0, wx, wh, b], what="lstm_cell")

    def test_random_composite_graphs(self):
        # many small random graphs over the smooth primitive set
        safe_unary = ["tanh", "sigmoid", "softmax"]
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            arrays = [rng.normal(size=(2, 3)) * 0.5 for _ in range(4)]

            def build(t, xs, seed=2000 + trial):
                rng = np.random.default_rng(seed)  # same graph every call
                live = list(xs)
                for _ in range(5):
                    op = rng.integers(0, 5)
                    if op == 0:
                        a, b = rng.integers(0, len(live), 2)
                        live.append(t.add(live[a], live[b]))
                    elif op == 1:
                        # squash products so chained muls cannot blow up
                        a, b = rng.integers(0, len(live), 2)
                        live.append(t.tanh(t.mul(live[a], live[b])))
                    elif op == 2:
                        a = rng.integers(0, len(live))
                        live.append(t.scale(live[a], float(rng.uniform(-2, 2))))
                    else:
                        a = rng.integers(0, len(live))
                        name = safe_unary[rng.integers(0, len(safe_unary))]
                        live.append(getattr(t, name)(live[a]))
                total = live[-1]
                for v in live[len(xs):-1]:
                    total = t.add(total, v)
                return t.sum(t.tanh(total))

            _check(build, arrays, step=1e-6, what=f"composite-{trial}")


class TestForwardValues:
    def test_matmul_identity(self):
        x = np.arange(6, dtype=float).reshape(2, 3)
        out = ad.Tape().matmul(ad.Tensor(x), ad.Tensor(np.eye(3)))
        assert np.array_equal(out.data, x)

    def test_add_row_broadcast(self):
        out = ad.Tape().add(ad.Tensor([[1.0, 2.0]]), ad.Tensor([10.0, 20.0]))
        assert np.array_equal(out.data, [[11.0, 22.0]])

    def test_concat_1d(self):
        out = ad.Tape().concat([ad.Tensor([1.0, 2.0]), ad.Tensor([3.0])])
        assert np.array_equal(out.data, [1.0, 2.0, 3.0])

    def test_sigmoid_value_and_extremes(self):
        t = ad.Tape()
        out = t.sigmoid(ad.Tensor([1.0, 1000.0, -1000.0]))
        assert out.data[0] == pytest.approx(SIGMOID_1, abs=1e-12)
        assert out.data[1] == 1.0 and out.data[2] == 0.0  # no overflow

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, 7)) * 10
        out = ad.Tape().softmax(ad.Tensor(x))
        assert np.all(np.abs(out.data.sum(axis=-1) - 1.0) <= 1e-9)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 6))
        a = ad.Tape().softmax(ad.Tensor(x)).data
        b = ad.Tape().softmax(ad.Tensor(x + 5.0)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_softmax_two_thirds(self):
        out = ad.Tape().softmax(ad.Tensor([[np.log(2.0), 0.0]]))
        assert out.data[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_masked_softmax_exact_zeros(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 6)) * 50
        mask = np.ones((4, 6), dtype=bool)
        mask[:, 3:] = False
        out = ad.Tape().softmax(ad.Tensor(x), mask=mask)
        assert np.all(out.data[:, 3:] == 0.0)
        assert np.all(np.abs(out.data.sum(axis=-1) - 1.0) <= 1e-9)

    def test_lstm_cell_hand_values(self):
        # zero weights, bias [i,f,o,g] = [0,1,0,0], c_prev = 1:
        # c = sigmoid(1)*1 + 0.5*tanh(0) ; h = 0.5*tanh(c)
        t = ad.Tape()
        params = ad.LstmParams(
            ad.Tensor(np.zeros((1, 4))), ad.Tensor(np.zeros((1, 4))),
            ad.Tensor([0.0, 1.0, 0.0, 0.0]),
        )
        h, c = ad.lstm_cell(
            t, ad.Tensor([[0.0]]), ad.Tensor([[0.0]]), ad.Tensor([[1.0]]), params
        )
        assert c.data[0, 0] == pytest.approx(LSTM_C, abs=1e-9)
        assert h.data[0, 0] == pytest.approx(LSTM_H, abs=1e-9)

    def test_grad_reverse_forward_bit_identical(self):
        rng = np.random.default_rng(3)
        x = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        out = ad.Tape().grad_reverse(x)
        assert out.data is x.data  # same buffer, so bit-identical

    def test_dropout_eval_identity(self):
        x = ad.Tensor(np.random.default_rng(4).normal(size=(5, 5)), requires_grad=True)
        t = ad.Tape()
        assert t.dropout(x, 0.5, train=False) is x
        rng = np.random.default_rng(0)
        assert t.dropout(x, 0.0, rng, train=True) is x

    def test_dropout_mean_preserving(self):
        rng = np.random.default_rng(5)
        x = ad.Tensor(np.ones((1000, 1000)))
        out = ad.Tape().dropout(x, 0.3, rng, train=True)
        kept = out.data != 0.0
        assert abs(kept.mean() - 0.7) < 2e-3
        assert abs(out.data.mean() - 1.0) < 2e-3
        assert np.allclose(out.data[kept], 1.0 / 0.7)


class TestBackwardStructure:
    def test_sum_gradient_ones(self):
        x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        t = ad.Tape()
        t.backward(t.sum(x))
        assert np.array_equal(x.grad, np.ones(3))

    def test_elementwise_square(self):
        x = ad.Tensor([2.0, -3.0], requires_grad=True)
        t = ad.Tape()
        t.backward(t.sum(t.mul(x, x)))
        assert np.allclose(x.grad, [4.0, -6.0], atol=1e-12)

    def test_second_backward_doubles(self):
        rng = np.random.default_rng(6)
        x = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        t = ad.Tape()
        loss = t.sum(t.tanh(t.mul(x, x)))
        t.backward(loss)
        once = x.grad.copy()
        t.backward(loss)
        assert np.array_equal(x.grad, 2.0 * once)

    def test_unreachable_leaf_zero_grad(self):
        x = ad.Tensor([1.0], requires_grad=True)
        y = ad.Tensor([2.0], requires_grad=True)
        t = ad.Tape()
        lx = t.sum(t.mul(x, x))
        t.sum(t.mul(y, y))  # on the tape but not part of lx
        t.backward(lx)
        assert np.array_equal(y.grad, np.zeros(1))
        assert np.allclose(x.grad, [2.0])

    def test_fanout_accumulates(self):
        x = ad.Tensor([3.0], requires_grad=True)
        t = ad.Tape()
        y = t.add(t.mul(x, x), t.scale(x, 4.0))  # x^2 + 4x -> dy/dx = 2x+4
        t.backward(t.sum(y))
        assert np.allclose(x.grad, [10.0], atol=1e-12)

    def test_grad_reverse_negates(self):
        x = ad.Tensor([1.0, -2.0], requires_grad=True)
        t = ad.Tape()
        t.backward(t.sum(t.grad_reverse(x)))
        assert np.array_equal(x.grad, [-1.0, -1.0])

    def test_grad_reverse_inside_graph(self):
        rng = np.random.default_rng(7)
        arr = rng.normal(size=(2, 3))
        x = ad.Tensor(arr, requires_grad=True)
        x2 = ad.Tensor(arr.copy(), requires_grad=True)
        t = ad.Tape()
        t.backward(t.sum(t.tanh(t.grad_reverse(x))))
        t2 = ad.Tape()
        t2.backward(t2.sum(t2.tanh(x2)))
        assert np.allclose(x.grad, -x2.grad, atol=0)

    def test_non_scalar_loss_rejected(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        t = ad.Tape()
        y = t.mul(x, x)
        with pytest.raises(ContractError):
            t.backward(y)

    def test_backward_determinism(self):
        def run():
            rng = np.random.default_rng(8)
            x = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            w = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            t = ad.Tape()
            loss = t.sum(t.softmax(t.matmul(t.tanh(x), w)))
            t.backward(loss)
            return x.grad.copy(), w.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


class TestShapeErrors:
    def test_matmul_mismatch(self):
        a, b = ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeError) as err:
            ad.Tape().matmul(a, b)
        assert "matmul" in str(err.value) and "(2, 3)" in str(err.value)

    def test_add_mismatch(self):
        with pytest.raises(ShapeError):
            ad.Tape().add(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 5))))

    def test_narrow_out_of_bounds(self):
        with pytest.raises(ShapeError):
            ad.Tape().narrow(ad.Tensor(np.zeros((2, 3))), 2, 2)

    def test_dropout_bad_rate(self):
        with pytest.raises(ConfigError):
            ad.Tape().dropout(ad.Tensor(np.zeros(3)), 1.0, train=True)


class TestRngState:
    def test_same_seed_same_stream(self):
        a = ad.RngState(123).generator().random(10)
        b = ad.RngState(123).generator().random(10)
        assert np.array_equal(a, b)

    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError):
            ad.RngState(1, algorithm="mt19937").generator()
