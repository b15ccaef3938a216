"""
Test Suite: Symbolic Expressions

PURPOSE: Validate parsing, evaluation, enclosure and differentiation
COVERAGE: zubov_clf/expr.py

Tests cover:
- Parser accepts the grammar and reports offsets on errors
- Point evaluation and vectorized evaluation agree
- Interval enclosures contain every point value (fuzzed)
- Symbolic derivatives match finite differences
- Polynomial expansion and printing round-trips
"""

import math

import numpy as np
import pytest

from zubov_clf.errors import (
    ArityError,
    EnclosureError,
    ExpressionEvaluationError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
)
from zubov_clf.expr import (
    Var,
    compile_expression,
    compile_vector,
    const,
    contains_function,
    cos,
    differentiate,
    enclose,
    eval_interval,
    evaluate,
    exp,
    gradient,
    jacobian,
    parse_expression,
    polynomial_degree,
    quadratic_form,
    sin,
    tanh,
    to_infix,
    to_polynomial,
    var,
)
from zubov_clf.interval import Box

VDP_SECOND = "-x1 + x2*(1 - x1^2)"


# ============================================================================
# Parsing
# ============================================================================

class TestParser:
    """Grammar and error reporting."""

    def test_single_variable(self):
        """'x2' with arity 2 is the variable with index 1."""
        assert parse_expression("x2", 2) == Var(1)

    def test_vdp_component(self):
        """The VdP second component evaluates to -1 at (1, 1)."""
        e = parse_expression(VDP_SECOND, 2)
        assert evaluate(e, [1.0, 1.0]) == -1.0

    def test_trailing_operator_offset(self):
        """'x1 + ' fails at offset 5."""
        with pytest.raises(ExpressionSyntaxError) as exc_info:
            parse_expression("x1 + ", 1)
        assert exc_info.value.position == 5

    def test_unknown_identifier(self):
        """Identifiers other than variables, functions and pi are rejected."""
        with pytest.raises(UnknownIdentifierError):
            parse_expression("y1 + 1", 1)

    def test_arity_error_carries_offset(self):
        """x3 is out of range for arity 2."""
        with pytest.raises(ArityError) as exc_info:
            parse_expression("x1 + x3", 2)
        assert exc_info.value.position == 5

    def test_arity_error_is_syntax_error(self):
        """ArityError derives from ExpressionSyntaxError."""
        assert issubclass(ArityError, ExpressionSyntaxError)

    def test_non_integer_exponent(self):
        """Exponents must be non-negative integers."""
        with pytest.raises(ExpressionSyntaxError):
            parse_expression("x1^2.5", 1)

    def test_unbalanced_parenthesis(self):
        """Missing ')' is reported."""
        with pytest.raises(ExpressionSyntaxError):
            parse_expression("sin(x1", 1)

    def test_inputs_map_after_states(self):
        """u1 maps to index arity when inputs are permitted."""
        e = parse_expression("u1*x1", 2, inputs=1)
        assert evaluate(e, [3.0, 0.0, 2.0]) == 6.0

    def test_inputs_rejected_by_default(self):
        """u1 is unknown unless inputs are declared."""
        with pytest.raises(UnknownIdentifierError):
            parse_expression("u1", 1)

    def test_pi_and_double_star(self):
        """'pi' and '**' are accepted."""
        e = parse_expression("pi*x1**2", 1)
        assert evaluate(e, [2.0]) == pytest.approx(4.0 * math.pi)

    def test_unary_minus_binds_looser_than_power(self):
        """-x1^2 is -(x1^2)."""
        assert evaluate(parse_expression("-x1^2", 1), [3.0]) == -9.0


# ============================================================================
# Evaluation
# ============================================================================

class TestEvaluation:
    """Point and vectorized evaluation."""

    def test_sin_at_zero(self):
        """sin(x1) at 0 is 0."""
        assert evaluate(parse_expression("sin(x1)", 1), [0.0]) == 0.0

    def test_reversed_vdp_drift(self):
        """(-x2, x1 + (x1^2 - 1)*x2) at (1, 2) is (-2, 1)."""
        program = compile_vector([parse_expression(t, 2) for t in ("-x2", "x1 + (x1^2 - 1)*x2")])
        assert program.evaluate(np.array([1.0, 2.0])).tolist() == [-2.0, 1.0]

    def test_pendulum_gravity_term(self):
        """g_c/l * sin(x1) at pi/2 with g_c = 9.81, l = 0.5 is 19.62."""
        e = parse_expression("9.81/0.5*sin(x1)", 1)
        assert evaluate(e, [math.pi / 2]) == pytest.approx(19.62, rel=1e-12)

    def test_division_by_zero_raises(self):
        """1/x1 at 0 raises instead of returning inf."""
        with pytest.raises(ExpressionEvaluationError):
            evaluate(parse_expression("1/x1", 1), [0.0])

    def test_sqrt_of_negative_raises(self):
        """sqrt(x1) at -1 raises."""
        with pytest.raises(ExpressionEvaluationError):
            evaluate(parse_expression("sqrt(x1)", 1), [-1.0])

    def test_vectorized_matches_pointwise(self):
        """compile_expression on many points equals evaluate per point."""
        e = parse_expression("exp(x1)*cos(x2) - tanh(x1*x2)", 2)
        f = compile_expression(e)
        X = np.random.default_rng(0).uniform(-2.0, 2.0, (50, 2))
        values = f(X)
        assert values.shape == (50,)
        assert np.allclose(values, [evaluate(e, x) for x in X], rtol=1e-14, atol=1e-14)

    def test_short_point_rejected(self):
        """A point with fewer coordinates than the arity is rejected."""
        with pytest.raises(ExpressionEvaluationError):
            compile_vector([parse_expression("x1 + x2", 2)]).evaluate(np.array([1.0]))

    def test_quadratic_form(self):
        """quadratic_form(P) evaluates to xᵀPx."""
        P = np.array([[2.0, 0.5], [0.5, 1.0]])
        x = np.array([0.3, -1.2])
        assert evaluate(quadratic_form(P), x) == pytest.approx(x @ P @ x)


# ============================================================================
# Enclosures
# ============================================================================

def _random_expression(rng, n, depth):
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return var(int(rng.integers(n)))
        return parse_expression(repr(float(np.round(rng.uniform(-2.0, 2.0), 3))), n)
    op = rng.integers(9)
    a = _random_expression(rng, n, depth - 1)
    if op == 0:
        return a + _random_expression(rng, n, depth - 1)
    if op == 1:
        return a - _random_expression(rng, n, depth - 1)
    if op == 2:
        return a * _random_expression(rng, n, depth - 1)
    if op == 3:
        return a ** 2
    if op == 4:
        return sin(a)
    if op == 5:
        return cos(a)
    if op == 6:
        return tanh(a)
    if op == 7:
        return exp(tanh(a))
    return a / (1 + _random_expression(rng, n, depth - 1) ** 2)


class TestEnclosure:
    """Sound interval evaluation."""

    def test_even_power_tight(self):
        """x1^2 over [-1, 2] is [0, 4]."""
        r = eval_interval(parse_expression("x1^2", 1), Box((-1.0,), (2.0,)))
        assert r.lo == 0.0
        assert r.hi == pytest.approx(4.0)

    def test_sin_extremum(self):
        """sin(x1) over [0, pi] reaches 1."""
        r = eval_interval(parse_expression("sin(x1)", 1), Box((0.0,), (math.pi,)))
        assert r.hi == 1.0 and r.lo <= 0.0

    def test_logistic_range(self):
        """x1*(1 - x1) over [0, 1] contains [0, 0.25]."""
        r = eval_interval(parse_expression("x1*(1 - x1)", 1), Box((0.0,), (1.0,)))
        assert r.lo <= 0.0 and r.hi >= 0.25

    def test_strict_division_raises(self):
        """1/x1 over [-1, 1] is undefined."""
        with pytest.raises(EnclosureError):
            eval_interval(parse_expression("1/x1", 1), Box((-1.0,), (1.0,)))

    def test_non_strict_division_is_unbounded(self):
        """Non-strict enclosure of 1/x1 over [-1, 1] is unbounded."""
        r = enclose(parse_expression("1/x1", 1), np.array([[-1.0]]), np.array([[1.0]]))
        assert not np.isfinite(r.hi[0])

    def test_fuzzed_soundness(self):
        """Random expressions and boxes: interior point values lie inside the enclosure."""
        rng = np.random.default_rng(2024)
        n = 2
        for _ in range(200):
            e = _random_expression(rng, n, 3)
            lo = rng.uniform(-2.0, 1.5, (1, n))
            hi = lo + rng.uniform(0.0, 0.5, (1, n))
            r = enclose(e, lo, hi)
            X = lo + rng.random((100, n)) * (hi - lo)
            values = compile_expression(e)(X)
            assert np.all(values >= r.lo[0]), to_infix(e)
            assert np.all(values <= r.hi[0]), to_infix(e)


# ============================================================================
# Differentiation
# ============================================================================

class TestDifferentiation:
    """Symbolic derivatives."""

    def test_square(self):
        """d/dx1 x1^2 = 2*x1."""
        assert differentiate(parse_expression("x1^2", 1), 0) == parse_expression("2*x1", 1)

    def test_sin(self):
        """d/dx1 sin(x1) = cos(x1)."""
        assert differentiate(parse_expression("sin(x1)", 1), 0) == parse_expression("cos(x1)", 1)

    def test_vdp_partial(self):
        """d/dx2 of the VdP component is 1 - x1^2; -3 at (2, 0)."""
        d = differentiate(parse_expression(VDP_SECOND, 2), 1)
        assert evaluate(d, [2.0, 0.0]) == -3.0

    def test_gradient_matches_central_differences(self):
        """Gradient of a mixed expression against central differences."""
        e = parse_expression("exp(-x1^2)*sin(x2) + tanh(x1*x2)/(1 + x2^2) + sqrt(1 + x1^2)", 2)
        grad = gradient(e, 2)
        x = np.array([0.4, -0.7])
        h = 1e-6
        for i in range(2):
            step = np.zeros(2)
            step[i] = h
            fd = (evaluate(e, x + step) - evaluate(e, x - step)) / (2 * h)
            assert evaluate(grad[i], x) == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_jacobian_shape(self):
        """Jacobian of 2 expressions in 2 variables is 2x2."""
        J = jacobian([parse_expression("-x2", 2), parse_expression(VDP_SECOND, 2)], 2)
        assert len(J) == 2 and all(len(row) == 2 for row in J)
        assert evaluate(J[0][1], [0.0, 0.0]) == -1.0


# ============================================================================
# Structure and printing
# ============================================================================

class TestStructure:
    """Polynomial expansion and printing."""

    def test_binomial_expansion(self):
        """(x1 + x2)^2 expands to x1^2 + 2 x1 x2 + x2^2."""
        poly = to_polynomial(parse_expression("(x1 + x2)^2", 2), 2)
        assert poly == {(2, 0): 1.0, (1, 1): 2.0, (0, 2): 1.0}
        assert polynomial_degree(poly) == 2

    def test_functions_are_not_polynomials(self):
        """sin(x1) has no polynomial expansion."""
        e = parse_expression("sin(x1)", 1)
        assert to_polynomial(e, 1) is None
        assert contains_function(e)

    def test_division_by_constant_is_polynomial(self):
        """x1/2 is the polynomial 0.5 x1."""
        assert to_polynomial(parse_expression("x1/2", 1), 1) == {(1,): 0.5}

    def test_builders(self):
        """var/const trees behave like parsed ones."""
        built = const(3.0) * var(0) * var(0) - var(1)
        parsed = parse_expression("3*x1^2 - x2", 2)
        assert evaluate(built, [2.0, 1.0]) == pytest.approx(11.0)
        assert to_polynomial(built, 2) == to_polynomial(parsed, 2)

    @pytest.mark.parametrize("text", [
        VDP_SECOND,
        "x1 - (x2 - x1)",
        "x1/(x2*x1 + 1)",
        "-2*x1^3 + exp(-x2)*cos(x1)",
        "(x1 + 1)^2*tanh(x2)",
    ])
    def test_infix_round_trip(self, text):
        """parse(to_infix(e)) rebuilds e."""
        e = parse_expression(text, 2)
        assert parse_expression(to_infix(e), 2) == e
