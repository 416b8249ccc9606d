"""Array-engine tests: primitive semantics, tape backward pass, and the
finite-difference gradient oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajdiff import engine as E

RNG = np.random.default_rng(1234)


def finite_diff(f, x, step=1e-6):
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x))
        flat[i] = orig - step
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


class TestPrimitiveForward:
    def test_matmul_identity(self):
        a = RNG.standard_normal((3, 3))
        assert np.array_equal(E.matmul(np.eye(3), a), a)

    def test_softmax_symmetry(self):
        out = E.softmax_last(np.array([0.0, 0.0]))
        assert np.array_equal(out, [0.5, 0.5])

    def test_layer_norm_hand_example(self):
        # mean 2, population variance 1; eps shrinks the output slightly
        out = E.layer_norm_last(np.array([1.0, 3.0]))
        expected = np.array([-1.0, 1.0]) / np.sqrt(1.0 + E.LAYER_NORM_EPS)
        assert np.allclose(out, expected, atol=1e-15)
        assert np.allclose(out, [-1.0, 1.0], atol=1e-5)

    def test_matmul_shape_error_names_operands(self):
        with pytest.raises(E.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            E.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_mse_shape_error(self):
        with pytest.raises(E.ShapeError, match="mse"):
            E.mse(np.ones(3), np.ones(4))

    def test_concat_shape_error(self):
        with pytest.raises(E.ShapeError, match="concat"):
            E.concat_last([np.ones((2, 3)), np.ones((3, 3))])

    def test_non_finite_output_rejected(self):
        with np.errstate(over="ignore"), pytest.raises(E.NumericError, match="matmul"):
            E.matmul(np.array([[1e308]]), np.array([[1e308]]))

    def test_dispatcher_covers_spec_kinds(self):
        expected = {
            "matmul", "add", "elementwise-mul", "concat-last-axis", "softmax-last-axis",
            "layer-normalize-last-axis", "gelu", "scale", "sum", "mean", "mse",
            "cross-entropy-with-soft-targets", "dropout-mask-apply",
        }
        assert set(E.PRIMITIVE_KINDS) == expected
        out = E.primitive("add", [np.ones(2), np.ones(2)])
        assert np.array_equal(out, [2.0, 2.0])

    def test_dispatcher_unknown_kind(self):
        with pytest.raises(E.ShapeError, match="unknown primitive"):
            E.primitive("transpose", [np.ones((2, 2))])

    def test_determinism(self):
        x = RNG.standard_normal((4, 5))
        w = RNG.standard_normal((5, 3))
        a = E.gelu(E.matmul(x, w))
        b = E.gelu(E.matmul(x, w))
        assert np.array_equal(a, b)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_softmax_rows_normalized(self, seed):
        x = np.random.default_rng(seed).standard_normal((3, 7)) * 10
        out = E.softmax_last(x)
        assert np.all(out >= 0)
        assert np.all(np.abs(out.sum(axis=-1) - 1.0) <= 1e-12)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_layer_norm_moments(self, seed):
        x = np.random.default_rng(seed).standard_normal((4, 16)) * 3 + 1
        out = E.layer_norm_last(x)
        assert np.all(np.abs(out.mean(axis=-1)) < 1e-9)
        # the eps-stabilized convention targets var / (var + eps)
        target = x.var(axis=-1) / (x.var(axis=-1) + E.LAYER_NORM_EPS)
        assert np.all(np.abs(out.var(axis=-1) - target) < 1e-6)

    def test_dropout_mask_apply(self):
        x = np.ones((4, 4))
        mask = np.zeros((4, 4))
        mask[::2] = 2.0  # keep half, inverted scaling by 1/0.5
        out = E.dropout_apply(x, mask)
        assert np.array_equal(out[::2], np.full((2, 4), 2.0))
        assert np.array_equal(out[1::2], np.zeros((2, 4)))


class TestBackward:
    def test_mse_quadratic(self):
        x = np.array([3.0])
        with E.Tape() as tape:
            loss = E.mse(x, np.zeros(1))
        grads = tape.gradients(loss, {"x": x})
        assert np.allclose(grads["x"], [6.0])

    def test_sum_scale_linearity(self):
        x = RNG.standard_normal((3, 4))
        with E.Tape() as tape:
            loss = E.reduce_sum(E.scale(x, 2.5))
        grads = tape.gradients(loss, {"x": x})
        assert np.allclose(grads["x"], np.full((3, 4), 2.5))

    def test_non_scalar_loss_rejected(self):
        x = RNG.standard_normal(3)
        with E.Tape() as tape:
            y = E.scale(x, 2.0)
        with pytest.raises(E.ShapeError, match="scalar"):
            tape.gradients(y, {"x": x})

    def test_loss_off_tape_rejected(self):
        x = RNG.standard_normal(3)
        with E.Tape() as tape:
            E.scale(x, 2.0)
        with pytest.raises(E.EngineError, match="not produced"):
            tape.gradients(np.asarray(1.0), {"x": x})

    def test_tape_consumed_once(self):
        x = RNG.standard_normal(3)
        with E.Tape() as tape:
            loss = E.reduce_sum(x)
        tape.gradients(loss, {"x": x})
        with pytest.raises(E.EngineError, match="consumed"):
            tape.gradients(loss, {"x": x})

    def test_unused_source_gets_zero(self):
        x = RNG.standard_normal(3)
        unused = RNG.standard_normal((2, 2))
        with E.Tape() as tape:
            loss = E.reduce_sum(x)
        grads = tape.gradients(loss, {"x": x, "unused": unused})
        assert np.array_equal(grads["unused"], np.zeros((2, 2)))

    def test_shared_input_accumulates(self):
        x = RNG.standard_normal((2, 2))
        with E.Tape() as tape:
            loss = E.reduce_sum(E.add(E.scale(x, 1.0), E.scale(x, 2.0)))
        grads = tape.gradients(loss, {"x": x})
        assert np.allclose(grads["x"], np.full((2, 2), 3.0))

    def test_composite_matches_finite_differences(self):
        w = RNG.standard_normal((5, 4))
        x = RNG.standard_normal((3, 5))
        target = RNG.standard_normal((3, 4))

        def loss_of(wv):
            return E.mse(E.gelu(E.matmul(x, wv)), target)

        with E.Tape() as tape:
            loss = loss_of(w)
        analytic = tape.gradients(loss, {"w": w})["w"]
        numeric = finite_diff(loss_of, w, step=1e-5)
        rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        assert rel.max() < 1e-4


PRIMITIVE_CASES = {
    "matmul": lambda r: (r.standard_normal((3, 4)), r.standard_normal((4, 2))),
    "matmul-batched": lambda r: (r.standard_normal((2, 3, 4)), r.standard_normal((2, 5, 4))),
    "add": lambda r: (r.standard_normal((3, 4)), r.standard_normal((4,))),
    "elementwise-mul": lambda r: (r.standard_normal((3, 4)), r.standard_normal((3, 4))),
    "softmax-last-axis": lambda r: (r.standard_normal((3, 5)),),
    "layer-normalize-last-axis": lambda r: (r.standard_normal((3, 6)),),
    "gelu": lambda r: (r.standard_normal((3, 4)),),
    "scale": lambda r: (r.standard_normal((3, 4)),),
    "mean": lambda r: (r.standard_normal((3, 4)),),
    "sum": lambda r: (r.standard_normal((3, 4)),),
    "mse": lambda r: (r.standard_normal((3, 4)), r.standard_normal((3, 4))),
    "cross-entropy-with-soft-targets": lambda r: (
        r.standard_normal((3, 5)),
        np.abs(r.standard_normal((3, 5))) + 0.1,
    ),
    "concat-last-axis": lambda r: (r.standard_normal((3, 2)), r.standard_normal((3, 4))),
}


@pytest.mark.parametrize("case", sorted(PRIMITIVE_CASES))
def test_every_primitive_gradient(case):
    """Analytic VJP of each primitive matches central finite differences."""
    import zlib

    rng = np.random.default_rng(zlib.crc32(case.encode()))
    inputs = PRIMITIVE_CASES[case](rng)
    weight = rng.standard_normal(1)  # arbitrary linear functional via scale+sum

    def apply(arrs):
        if case == "matmul":
            out = E.matmul(arrs[0], arrs[1])
        elif case == "matmul-batched":
            out = E.matmul(arrs[0], arrs[1], transpose_b=True)
        elif case == "concat-last-axis":
            out = E.concat_last(list(arrs))
        elif case == "scale":
            out = E.scale(arrs[0], 1.7)
        else:
            out = E.PRIMITIVE_KINDS[case](*arrs)
        return E.reduce_sum(E.scale(out, float(weight[0])))

    params = {f"p{i}": np.asarray(a, dtype=np.float64) for i, a in enumerate(inputs)}

    def closure(p):
        return apply([p[f"p{i}"] for i in range(len(inputs))])

    report = E.gradient_check(closure, params, tolerance=1e-6, max_entries=6)
    assert report.passed, report


class TestGradientCheck:
    def test_linear_mse_exact(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((4, 3))
        target = rng.standard_normal((4, 2))
        params = {"w": rng.standard_normal((3, 2))}

        def closure(p):
            return E.mse(E.matmul(x, p["w"]), target)

        report = E.gradient_check(closure, params, tolerance=1e-8, max_entries=6)
        assert report.passed, report

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4, 3))
        targets = E.softmax_last(rng.standard_normal((4, 5)))
        params = {"w": rng.standard_normal((3, 5))}

        def closure(p):
            return E.cross_entropy_soft(E.matmul(x, p["w"]), targets)

        report = E.gradient_check(closure, params, tolerance=1e-6, max_entries=8)
        assert report.passed, report

    def test_non_deterministic_closure_rejected(self):
        state = {"n": 0}

        def closure(p):
            state["n"] += 1
            return E.reduce_sum(E.scale(p["x"], float(state["n"])))

        with pytest.raises(E.EngineError, match="non-deterministic"):
            E.gradient_check(closure, {"x": np.ones(3)})
