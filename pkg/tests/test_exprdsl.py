import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchvi.exprdsl import (
    ArityError,
    BinOp,
    Call,
    ExprSyntaxError,
    Neg,
    Num,
    NumericDomainError,
    UnknownVariableError,
    Var,
    evaluate,
    expr_depth,
    format_expr,
    free_variables,
    parse,
    substitute,
)


class TestParseEvaluate:
    def test_min_call(self):
        e = parse("min(x, 2) + 1", ("x",))
        assert evaluate(e, {"x": 3.0}) == 3.0

    def test_unbalanced_paren_offset(self):
        with pytest.raises(ExprSyntaxError) as err:
            parse("x * (", ("x",))
        assert err.value.offset == 5

    def test_power(self):
        e = parse("0.5*x^2", ("x",))
        assert evaluate(e, {"x": 2.0}) == 2.0

    def test_exp_identity(self):
        assert evaluate(parse("exp(0)", ()), {}) == 1.0

    def test_division_by_zero_raises(self):
        e = parse("1/x", ("x",))
        with pytest.raises(NumericDomainError):
            evaluate(e, {"x": 0.0})

    def test_abs_via_max(self):
        e = parse("max(t, -t)", ("t",))
        assert evaluate(e, {"t": -2.0}) == 2.0

    def test_power_right_assoc(self):
        e = parse("2^3^2", ())
        assert evaluate(e, {}) == 512.0

    def test_unary_minus_exponent(self):
        e = parse("2^-1", ())
        assert evaluate(e, {}) == 0.5

    def test_pow_function(self):
        assert evaluate(parse("pow(x, 2)", ("x",)), {"x": 3.0}) == 9.0

    def test_unknown_variable(self):
        with pytest.raises(UnknownVariableError):
            parse("x + y", ("x",))

    def test_arity(self):
        with pytest.raises(ArityError):
            parse("min(x)", ("x",))
        with pytest.raises(ArityError):
            parse("abs(x, 1)", ("x",))

    def test_unknown_function(self):
        with pytest.raises(ExprSyntaxError):
            parse("sin(x)", ("x",))

    def test_empty(self):
        with pytest.raises(ExprSyntaxError):
            parse("   ", ("x",))

    def test_trailing_tokens(self):
        with pytest.raises(ExprSyntaxError):
            parse("1 + 2 3", ())

    def test_log_of_negative(self):
        with pytest.raises(NumericDomainError) as err:
            evaluate(parse("log(x)", ("x",)), {"x": -1.0})
        assert "log" in str(err.value)

    def test_sqrt_exp(self):
        assert evaluate(parse("sqrt(x)", ("x",)), {"x": 4.0}) == 2.0
        with pytest.raises(NumericDomainError):
            evaluate(parse("exp(x)", ("x",)), {"x": 1e9})

    def test_unbound_variable_at_eval(self):
        e = parse("x + 1", ("x",))
        with pytest.raises(NumericDomainError):
            evaluate(e, {})

    def test_nonfinite_binding(self):
        e = parse("x", ("x",))
        with pytest.raises(NumericDomainError):
            evaluate(e, {"x": float("nan")})

    def test_array_evaluation(self):
        e = parse("max(x, 0) * 2", ("x",))
        out = evaluate(e, {"x": np.array([-1.0, 0.5, 2.0])})
        np.testing.assert_array_equal(out, [0.0, 1.0, 4.0])

    def test_depth_guard(self):
        deep = "x" + " + x" * 100
        with pytest.raises(ExprSyntaxError):
            parse(deep, ("x",), max_depth=64)

    def test_purity_bitwise(self):
        e = parse("exp(x) * 0.3 - sqrt(abs(x))", ("x",))
        a = evaluate(e, {"x": 0.7310585786300049})
        b = evaluate(e, {"x": 0.7310585786300049})
        assert a == b


class TestAstUtilities:
    def test_substitute(self):
        e = parse("y_0_1 + z", ("y_0_1", "z"))
        out = substitute(e, {"y_0_1": Neg(Var("y_1_0")), "z": Num(0.0)})
        assert evaluate(out, {"y_1_0": 2.0}) == -2.0

    def test_free_variables(self):
        e = parse("x*t + min(q, z)", ("x", "t", "q", "z"))
        assert free_variables(e) == frozenset({"x", "t", "q", "z"})

    def test_depth(self):
        assert expr_depth(Num(1.0)) == 1
        assert expr_depth(BinOp("+", Num(1.0), Neg(Var("x")))) == 3


# strategy for random small ASTs over variables x, t
_vars = st.sampled_from(["x", "t"])


def _exprs(depth: int):
    # literals are non-negative: the parser only builds Neg(Num(+v)) forms
    if depth == 0:
        return st.one_of(
            st.floats(min_value=0, max_value=5, allow_nan=False).map(lambda v: Num(round(v, 3))),
            _vars.map(Var),
        )
    sub = _exprs(depth - 1)
    return st.one_of(
        sub,
        st.tuples(st.sampled_from("+-*"), sub, sub).map(lambda t: BinOp(t[0], t[1], t[2])),
        sub.map(Neg),
        st.tuples(st.sampled_from(["min", "max"]), sub, sub).map(lambda t: Call(t[0], (t[1], t[2]))),
        sub.map(lambda a: Call("abs", (a,))),
    )


@settings(max_examples=200, deadline=None)
@given(_exprs(4))
def test_format_parse_round_trip(expr):
    text = format_expr(expr)
    reparsed = parse(text, ("x", "t"))
    assert reparsed == expr


@settings(max_examples=100, deadline=None)
@given(_exprs(3), st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False))
def test_eval_matches_reparse(expr, x, t):
    ctx = {"x": x, "t": t}
    a = evaluate(expr, ctx)
    b = evaluate(parse(format_expr(expr), ("x", "t")), ctx)
    assert a == b
