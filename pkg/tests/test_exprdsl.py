import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from immse_lab import exprdsl as dsl
from immse_lab.exprdsl import (
    Add, Binding, Const, ExprSyntaxError, Func, Mul, UnboundVariableError, W, Y,
    diff_expr, eval_expr, parse_expr, to_text,
)


class TestParse:
    def test_single_variable(self):
        assert parse_expr("w") == W()

    def test_tree_shape(self):
        assert parse_expr("w + 0.5*tanh(y[1])") == Add(W(), Mul(Const(0.5), Func("tanh", Y(1))))

    def test_precedence_and_associativity(self):
        assert eval_expr(parse_expr("1 - 2 - 3"), Binding()) == -4.0
        assert eval_expr(parse_expr("1 + 2*3"), Binding()) == 7.0
        assert eval_expr(parse_expr("-2*3"), Binding()) == -6.0
        assert eval_expr(parse_expr("2.5e-1 * 4"), Binding()) == 1.0

    @pytest.mark.parametrize("text", ["y[0]", "y[1.5]", "y[-1]"])
    def test_bad_y_index(self, text):
        with pytest.raises(ExprSyntaxError):
            parse_expr(text)

    def test_unknown_identifier(self):
        with pytest.raises(ExprSyntaxError, match="unknown identifier"):
            parse_expr("w + cos(w)")

    def test_error_offset_is_in_bytes(self):
        with pytest.raises(ExprSyntaxError) as err:
            parse_expr("w + é")
        assert err.value.offset == 4
        with pytest.raises(ExprSyntaxError) as err:
            parse_expr("(w + 1")
        assert err.value.offset == 6

    @pytest.mark.parametrize("text", ["w w", "w +", "*w", "tanh w", "w / 2", "abs(w)", ""])
    def test_rejects_malformed(self, text):
        with pytest.raises(ExprSyntaxError):
            parse_expr(text)


class TestEvaluate:
    def test_examples(self):
        assert eval_expr(parse_expr("w"), Binding(w=2.0)) == 2.0
        assert eval_expr(parse_expr("w + 0.5*tanh(y[1])"), Binding(w=1, y=[0])) == 1.0
        assert eval_expr(parse_expr("w*y[1]"), Binding(w=3, y=[-2])) == -6.0

    def test_unbound(self):
        with pytest.raises(UnboundVariableError):
            eval_expr(parse_expr("y[2]"), Binding(y=[1.0]))
        with pytest.raises(UnboundVariableError):
            eval_expr(parse_expr("t"), Binding())

    def test_vectorized_matches_scalar(self):
        e = parse_expr("sin(w*y[1]) + exp(-y[2])*t")
        rng = np.random.default_rng(0)
        w = rng.normal(size=7)
        y = rng.normal(size=(7, 2))
        vec = dsl.evaluate(e, w, y, 0.3)
        for k in range(7):
            assert vec[k] == eval_expr(e, Binding(w[k], y[k], 0.3))


class TestDiff:
    def test_examples(self):
        d = diff_expr(parse_expr("tanh(y[1])"), "y[1]")
        for v in (-2.0, 0.0, 0.7):
            assert eval_expr(d, Binding(y=[v])) == pytest.approx(1 - math.tanh(v) ** 2, abs=1e-15)
        assert dsl.is_zero(diff_expr(parse_expr("w + y[1]"), "y[2]"))
        assert eval_expr(diff_expr(parse_expr("w*w"), "w"), Binding(w=3)) == 6.0

    def test_variable_id_forms(self):
        e = parse_expr("y[3]*y[3]")
        assert diff_expr(e, "y[3]") == diff_expr(e, ("y", 3))
        with pytest.raises(ValueError):
            diff_expr(e, "y[0]")

    def test_deep_sum_does_not_recurse(self):
        e = parse_expr(" + ".join(f"{k}*y[{k}]" for k in range(1, 3001)))
        assert eval_expr(diff_expr(e, "y[2000]"), Binding()) == 2000.0
        assert len(dsl.y_indices(e)) == 3000


# random expressions over w, y[1], y[2], t; exp is kept off nested exp to
# keep values in a range where a 1e-5 central difference is accurate
_leaf = st.one_of(
    st.floats(-2, 2, allow_nan=False).map(lambda x: Const(round(abs(x), 3))),
    st.just(W()), st.just(Y(1)), st.just(Y(2)), st.just(dsl.T()),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda p: dsl.Add(*p)),
        st.tuples(children, children).map(lambda p: dsl.Sub(*p)),
        st.tuples(children, children).map(lambda p: dsl.Mul(*p)),
        children.map(dsl.Neg),
        children.map(lambda c: Func("tanh", c)),
        children.map(lambda c: Func("sin", c)),
        children.map(lambda c: Func("exp", Func("tanh", c))),
    )


exprs = st.recursive(_leaf, _extend, max_leaves=12)
points = st.tuples(*[st.floats(-1.5, 1.5, allow_nan=False)] * 4)


def _depth(e):
    kids = [getattr(e, k) for k in ("left", "right", "arg") if hasattr(e, k)]
    return 1 + max((_depth(k) for k in kids), default=0)


class TestProperties:
    @settings(max_examples=1000, deadline=None)
    @given(exprs, points, st.sampled_from(["w", "y[1]", "y[2]", "t"]))
    def test_symbolic_matches_central_difference(self, e, pt, var):
        if _depth(e) > 6:
            return
        w, y1, y2, t = pt
        h = 1e-5

        def at(dv):
            b = {"w": w, "y[1]": y1, "y[2]": y2, "t": t}
            b[var] += dv
            return eval_expr(e, Binding(b["w"], [b["y[1]"], b["y[2]"]], b["t"]))

        fd = (at(h) - at(-h)) / (2 * h)
        sym = eval_expr(diff_expr(e, var), Binding(w, [y1, y2], t))
        assert abs(sym - fd) <= 1e-6 * (1 + abs(at(0.0)))

    @settings(max_examples=300, deadline=None)
    @given(exprs)
    def test_print_round_trip(self, e):
        text = to_text(e)
        assert parse_expr(to_text(parse_expr(text))) == parse_expr(text)

    @pytest.mark.parametrize("text", [
        "w + 0.5*tanh(y[1])", "-(w - y[1])*2", "1 - (2 - 3)", "w*(y[1]*y[2])",
        "-w*-y[1]", "exp(-t)*sin(w)", "1e-05*w",
    ])
    def test_round_trip_examples(self, text):
        e = parse_expr(text)
        assert parse_expr(to_text(e)) == e

    def test_substitute(self):
        e = parse_expr("w + y[1]*t")
        s = dsl.substitute(e, {("y", 1): Const(2.0), "t": Const(3.0)})
        assert eval_expr(s, Binding(w=1.0)) == 7.0
        assert dsl.variables(s) == {"w"}
