import numpy as np
import pytest

from tagrec import autodiff as ad


def probe_loss(out, weights):
    """Deterministic scalar readout of an op output for gradient checks."""
    w = out.tape.constant(weights)
    if out.value.ndim == 0:
        return out
    if out.value.ndim == 1:
        return ad.dot(out, w)
    return ad.total_sum(ad.row_dot(out, w))


def finite_diff_check(build, inputs, tol=1e-6):
    """build(params) -> (tape, loss, leaves); checks all coords per family."""
    report = ad.grad_check(build, inputs, samples_per_family=10_000, step=1e-5, tolerance=tol)
    assert report.passed, {n: f.max_rel_error for n, f in report.families.items()}


def make_builder(op, shapes, probe_shape, rng):
    weights = rng.standard_normal(probe_shape)

    def build(params):
        tape = ad.Tape()
        leaves = {name: tape.leaf(params[name]) for name in shapes}
        out = op(tape, leaves)
        return tape, probe_loss(out, weights), leaves

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestPrimitiveGradients:
    def test_add_sub_scale(self, rng):
        shapes = {"a": (3, 4), "b": (3, 4)}
        inputs = {k: rng.standard_normal(v) for k, v in shapes.items()}

        def op(tape, lv):
            return ad.sub(ad.scale(ad.add(lv["a"], lv["b"]), 2.5), lv["b"])

        finite_diff_check(make_builder(op, shapes, (3, 4), rng), inputs)

    @pytest.mark.parametrize("ta,tb", [(False, False), (False, True), (True, False), (True, True)])
    def test_matmul(self, rng, ta, tb):
        a_shape = (4, 3) if ta else (3, 4)
        b_shape = (5, 4) if tb else (4, 5)
        inputs = {"a": rng.standard_normal(a_shape), "b": rng.standard_normal(b_shape)}

        def op(tape, lv):
            return ad.matmul(lv["a"], lv["b"], transpose_a=ta, transpose_b=tb)

        finite_diff_check(make_builder(op, inputs, (3, 5), rng), inputs)

    @pytest.mark.parametrize("ta", [False, True])
    def test_matvec(self, rng, ta):
        inputs = {"a": rng.standard_normal((4, 3)), "x": rng.standard_normal(4 if ta else 3)}

        def op(tape, lv):
            return ad.matvec(lv["a"], lv["x"], transpose_a=ta)

        finite_diff_check(make_builder(op, inputs, (3,) if ta else (4,), rng), inputs)

    def test_dot_row_dot(self, rng):
        inputs = {"a": rng.standard_normal((5, 3)), "b": rng.standard_normal((5, 3))}

        def op(tape, lv):
            return ad.row_dot(lv["a"], lv["b"])

        finite_diff_check(make_builder(op, inputs, (5,), rng), inputs)

    def test_tanh_log_sigmoid(self, rng):
        inputs = {"a": rng.standard_normal((4, 4))}

        def op(tape, lv):
            return ad.log_sigmoid(ad.tanh(lv["a"]))

        finite_diff_check(make_builder(op, inputs, (4, 4), rng), inputs)

    def test_softmax_rows(self, rng):
        inputs = {"a": rng.standard_normal((6, 4))}

        def op(tape, lv):
            return ad.softmax_rows(lv["a"])

        finite_diff_check(make_builder(op, inputs, (6, 4), rng), inputs)

    def test_masked_softmax(self, rng):
        mask = np.array([True, False, True, True, False, True])
        inputs = {"a": rng.standard_normal(6)}

        def op(tape, lv):
            return ad.masked_softmax(lv["a"], mask)

        finite_diff_check(make_builder(op, inputs, (6,), rng), inputs)

    def test_squash_rows(self, rng):
        inputs = {"a": rng.standard_normal((5, 4))}

        def op(tape, lv):
            return ad.squash_rows(lv["a"])

        finite_diff_check(make_builder(op, inputs, (5, 4), rng), inputs)

    @pytest.mark.parametrize("exponent", [0.0, 1.0, 2.0, 6.0])
    def test_power(self, rng, exponent):
        inputs = {"a": rng.standard_normal(8) + 0.1}

        def op(tape, lv):
            return ad.power(lv["a"], exponent)

        finite_diff_check(make_builder(op, inputs, (8,), rng), inputs)

    def test_gather_rows(self, rng):
        idx = np.array([0, 2, 2, 1])
        inputs = {"a": rng.standard_normal((4, 3))}

        def op(tape, lv):
            return ad.gather_rows(lv["a"], idx)

        finite_diff_check(make_builder(op, inputs, (4, 3), rng), inputs)

    def test_segment_mean_with_empty_segment(self, rng):
        offsets = np.array([0, 2, 2, 5])
        indices = np.array([0, 3, 1, 1, 2])
        inputs = {"src": rng.standard_normal((4, 3)), "fb": rng.standard_normal((3, 3))}

        def op(tape, lv):
            return ad.segment_mean(lv["src"], offsets, indices, lv["fb"])

        finite_diff_check(make_builder(op, inputs, (3, 3), rng), inputs)

    def test_concat_reshape_stack(self, rng):
        inputs = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((1, 3))}

        def op(tape, lv):
            cat = ad.concat_rows([lv["a"], lv["b"]])
            flat = ad.reshape(cat, (9,))
            s0 = ad.dot(flat, tape.constant(np.arange(9.0)))
            s1 = ad.total_sum(cat)
            return ad.stack_scalars([s0, s1])

        finite_diff_check(make_builder(op, inputs, (2,), rng), inputs)

    def test_reductions(self, rng):
        inputs = {"a": rng.standard_normal((3, 4))}

        def op(tape, lv):
            parts = [ad.total_sum(lv["a"]), ad.mean_all(lv["a"]), ad.sum_squares(lv["a"])]
            return ad.stack_scalars(parts)

        finite_diff_check(make_builder(op, inputs, (3,), rng), inputs)

    def test_rows_mean(self, rng):
        inputs = {"a": rng.standard_normal((5, 3))}

        def op(tape, lv):
            return ad.rows_mean(lv["a"])

        finite_diff_check(make_builder(op, inputs, (3,), rng), inputs)


class TestBackwardContract:
    def test_bilinear_form(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([1.0, 2.0]))
        y = tape.leaf(np.array([3.0, 4.0]))
        loss = ad.dot(x, y)
        grads = ad.backward(tape, loss)
        np.testing.assert_allclose(grads[x], [3.0, 4.0])
        np.testing.assert_allclose(grads[y], [1.0, 2.0])

    def test_tanh_gradient_at_zero(self):
        tape = ad.Tape()
        x = tape.leaf(np.asarray(0.0))
        loss = ad.tanh(x)
        grads = ad.backward(tape, loss)
        assert grads[x] == pytest.approx(1.0)

    def test_non_scalar_loss_rejected(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([1.0, 2.0]))
        with pytest.raises(ad.ContractError):
            ad.backward(tape, ad.scale(x, 2.0))

    def test_unreachable_leaf_gets_zero(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([1.0, 2.0]))
        other = tape.leaf(np.array([[5.0, 6.0]]))
        loss = ad.dot(x, x)
        grads = ad.backward(tape, loss)
        np.testing.assert_array_equal(grads[other], np.zeros((1, 2)))

    def test_backward_is_linear_in_the_loss(self):
        rng = np.random.default_rng(3)
        a_val = rng.standard_normal((3, 3))
        b_val = rng.standard_normal((3, 3))

        def run(coeffs):
            tape = ad.Tape()
            a = tape.leaf(a_val)
            b = tape.leaf(b_val)
            l1 = ad.sum_squares(ad.matmul(a, b))
            l2 = ad.total_sum(ad.tanh(a))
            loss = ad.add(ad.scale(l1, coeffs[0]), ad.scale(l2, coeffs[1]))
            grads = ad.backward(tape, loss)
            return grads[a]

        combined = run((1.0, 1.0))
        np.testing.assert_allclose(combined, run((1.0, 0.0)) + run((0.0, 1.0)), atol=1e-12)

    def test_tape_is_topologically_ordered(self):
        tape = ad.Tape()
        a = tape.leaf(np.ones((2, 2)))
        b = ad.tanh(a)
        c = ad.matmul(a, b)
        ad.total_sum(ad.add(c, b))
        position = {id(node): i for i, node in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node.parents:
                assert position[id(parent)] < position[id(node)]

    def test_mixed_tapes_rejected(self):
        t1, t2 = ad.Tape(), ad.Tape()
        a = t1.leaf(np.ones(2))
        b = t2.leaf(np.ones(2))
        with pytest.raises(ad.ContractError):
            ad.add(a, b)


class TestNormalizationInvariants:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        tape = ad.Tape()
        a = tape.leaf(rng.standard_normal((20, 7)) * 30)
        w = ad.softmax_rows(a).value
        assert (w > 0).all()
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_masked_softmax_zeroes_masked_entries(self):
        tape = ad.Tape()
        a = tape.leaf(np.array([1.0, 99.0, -2.0, 0.5]))
        mask = np.array([True, False, True, True])
        w = ad.masked_softmax(a, mask).value
        assert w[1] == 0.0
        assert w[mask].sum() == pytest.approx(1.0, abs=1e-12)

    def test_squash_norms_strictly_below_one(self):
        rng = np.random.default_rng(5)
        tape = ad.Tape()
        a = tape.leaf(rng.standard_normal((50, 6)) * 100)
        out = ad.squash_rows(a).value
        norms = np.linalg.norm(out, axis=1)
        assert (norms < 1.0).all()
        assert (norms > 0.0).all()

    def test_squash_unit_vector_halves(self):
        tape = ad.Tape()
        v = np.zeros(4)
        v[2] = 1.0
        out = ad.squash_rows(tape.leaf(v[None, :])).value[0]
        np.testing.assert_allclose(out, v * 0.5, atol=1e-15)

    def test_squash_zero_guard(self):
        tape = ad.Tape()
        a = tape.leaf(np.zeros((1, 3)))
        out = ad.squash_rows(a)
        np.testing.assert_array_equal(out.value, np.zeros((1, 3)))
        grads = ad.backward(tape, ad.total_sum(out))
        np.testing.assert_array_equal(grads[a], np.zeros((1, 3)))


class TestAdam:
    def test_first_step_magnitude(self):
        state = ad.AdamState(learning_rate=0.01)
        params = {"w": np.array([1.0])}
        ad.adam_step(state, params, {"w": np.array([0.5])})
        # First step collapses to ~ -lr * sign(g).
        assert params["w"][0] == pytest.approx(1.0 - 0.01, abs=1e-6)
        assert state.step == 1

    def test_zero_gradient_keeps_parameter(self):
        state = ad.AdamState(learning_rate=0.1)
        params = {"w": np.array([2.0, -3.0])}
        before = params["w"].copy()
        for _ in range(3):
            ad.adam_step(state, params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], before)

    def test_independent_parameters(self):
        state = ad.AdamState(learning_rate=0.01)
        params = {"a": np.array([1.0]), "b": np.array([1.0])}
        ad.adam_step(state, params, {"a": np.array([1.0]), "b": np.array([0.0])})
        assert params["a"][0] != 1.0
        assert params["b"][0] == 1.0

    def test_shape_mismatch_rejected(self):
        state = ad.AdamState()
        with pytest.raises(ad.ContractError):
            ad.adam_step(state, {"w": np.zeros(3)}, {"w": np.zeros(4)})


class TestGradCheckHarness:
    @staticmethod
    def _quadratic_builder(params):
        tape = ad.Tape()
        a = tape.leaf(params["a"])
        b = tape.leaf(params["b"])
        loss = ad.add(ad.sum_squares(a), ad.sum_squares(ad.tanh(b)))
        return tape, loss, {"a": a, "b": b}

    def test_passing_report(self):
        rng = np.random.default_rng(2)
        params = {"a": rng.standard_normal(5), "b": rng.standard_normal((2, 2))}
        report = ad.grad_check(self._quadratic_builder, params, tolerance=1e-6)
        assert report.passed
        assert set(report.families) == {"a", "b"}

    def test_corrupted_family_is_flagged_alone(self):
        rng = np.random.default_rng(2)
        params = {"a": rng.standard_normal(5), "b": rng.standard_normal((2, 2))}
        tape, loss, leaves = self._quadratic_builder(params)
        grads = ad.backward(tape, loss)
        analytic = {name: grads[leaf].copy() for name, leaf in leaves.items()}
        analytic["b"] += 1.0  # fault injection

        def loss_value(p):
            _, out, _ = self._quadratic_builder(p)
            return float(out.value)

        report = ad.compare_to_finite_differences(
            loss_value, params, analytic, tolerance=1e-4, samples_per_family=100
        )
        assert not report.passed
        assert report.failing_families() == ["b"]

    def test_zero_gradient_path_passes(self):
        params = {"a": np.zeros(3), "unused": np.ones(4)}

        def build(p):
            tape = ad.Tape()
            a = tape.leaf(p["a"])
            unused = tape.leaf(p["unused"])
            return tape, ad.sum_squares(a), {"a": a, "unused": unused}

        report = ad.grad_check(build, params, tolerance=1e-6)
        assert report.passed
