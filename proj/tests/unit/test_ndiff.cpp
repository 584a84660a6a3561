#include <doctest.h>

#include <cmath>

#include "grad_programs.hpp"
#include "srgi/ndiff.hpp"
#include "support.hpp"

using namespace srgi;
using nd::Matrix;
using nd::Tape;
using nd::Var;

TEST_CASE("matmul forward against a hand product") {
    Tape t;
    Var a = t.constant(Matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Var b = t.constant(Matrix(3, 2, {7, 8, 9, 10, 11, 12}));
    CHECK(nd::matmul(a, b).value() == Matrix(2, 2, {58, 64, 139, 154}));
    CHECK(nd::matmul(a, a, false, true).value() == Matrix(2, 2, {14, 32, 32, 77}));
    CHECK(nd::matmul(a, a, true, false).value() == Matrix(3, 3, {17, 22, 27, 22, 29, 36, 27, 36, 45}));
}

TEST_CASE("shape mismatches throw") {
    Tape t;
    Var a = t.constant(Matrix(2, 3));
    Var b = t.constant(Matrix(2, 2));
    CHECK_THROWS_AS(nd::matmul(a, b), ShapeError);
    CHECK_THROWS_AS(nd::add(a, b), ShapeError);
    CHECK_THROWS_AS(nd::mul(a, t.constant(Matrix(1, 2))), ShapeError);
    CHECK_THROWS_AS(t.backward(a), ShapeError);
    CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0}), ShapeError);
}

TEST_CASE("broadcast add over rows") {
    Tape t;
    Var a = t.constant(Matrix(2, 2, {1, 2, 3, 4}));
    Var b = t.constant(Matrix::row({10, 20}));
    CHECK(nd::add(a, b).value() == Matrix(2, 2, {11, 22, 13, 24}));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    std::mt19937_64 rng(1);
    Tape t;
    const Matrix x = testing::random_matrix(4, 7, rng, -50, 50);
    Matrix shifted = x;
    for (double& v : shifted.data) v += 1000.0;
    const Matrix p = nd::softmax_rows(t.constant(x)).value();
    const Matrix q = nd::softmax_rows(t.constant(shifted)).value();
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (double v : p.row_span(r)) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(testing::max_abs_diff(p, q) < 1e-12);
}

TEST_CASE("l2 normalisation of a zero row is zero with zero gradient") {
    Tape t;
    Var x = t.leaf(Matrix(2, 3, {0, 0, 0, 3, 4, 0}));
    Var y = nd::l2_normalize_rows(x);
    CHECK(y.value() == Matrix(2, 3, {0, 0, 0, 0.6, 0.8, 0}));
    t.backward(nd::sum_all(y));
    const Matrix& g = t.grad(x);
    CHECK(g(0, 0) == 0.0);
    CHECK(g(0, 1) == 0.0);
    CHECK(g(0, 2) == 0.0);
}

TEST_CASE("log clamps at the floor and blocks the gradient below it") {
    Tape t;
    Var x = t.leaf(Matrix::row({0.0, 1e-20, 2.0}));
    Var y = nd::log(x, 1e-10);
    CHECK(y.value()(0, 0) == doctest::Approx(std::log(1e-10)));
    CHECK(y.value()(0, 1) == doctest::Approx(std::log(1e-10)));
    t.backward(nd::sum_all(y));
    CHECK(t.grad(x)(0, 0) == 0.0);
    CHECK(t.grad(x)(0, 1) == 0.0);
    CHECK(t.grad(x)(0, 2) == doctest::Approx(0.5));
}

TEST_CASE("segment ops") {
    Tape t;
    Var x = t.constant(Matrix(3, 2, {1, 2, 3, 4, 5, 6}));
    nd::Segments seg;
    seg.add(2);
    seg.add(0);
    seg.end_row();
    seg.end_row();
    CHECK(nd::segment_sum(x, seg).value() == Matrix(2, 2, {6, 8, 0, 0}));

    nd::Segments s2;
    s2.add(0);
    s2.add(1);
    s2.end_row();
    s2.add(2);
    s2.end_row();
    const Matrix sm = nd::segment_softmax(t.constant(Matrix::column({0.0, 0.0, 5.0})), s2).value();
    CHECK(sm(0, 0) == doctest::Approx(0.5));
    CHECK(sm(1, 0) == doctest::Approx(0.5));
    CHECK(sm(2, 0) == doctest::Approx(1.0));
}

TEST_CASE("gradients accumulate over reuse and across parameters") {
    nd::Parameter p("p", Matrix::row({1.5, -2.0}));
    Tape t;
    Var a = t.param(p);
    Var b = t.param(p);
    CHECK(a.id() == b.id());
    t.backward(nd::sum_all(nd::mul(a, b)));
    CHECK(p.grad == Matrix::row({3.0, -4.0}));
}

TEST_CASE("disabled gradients leave parameters untouched") {
    nd::Parameter p("p", Matrix::row({1.0, 2.0}));
    Tape t;
    t.set_grad_enabled(false);
    Var a = t.param(p);
    CHECK_FALSE(t.requires_grad(a));
    t.backward(nd::sum_all(nd::mul(a, a)));
    CHECK(p.grad == Matrix::row({0.0, 0.0}));
}

TEST_CASE("check_finite reports the offending op") {
    Tape t;
    t.set_check_finite(true);
    Var x = t.constant(Matrix::row({1000.0}));
    CHECK_THROWS_AS(nd::exp(x), NumericError);
}

TEST_CASE("dropout") {
    std::mt19937_64 rng(3);
    Tape t;
    Var x = t.leaf(Matrix(50, 40, 1.0));
    SUBCASE("identity in eval mode") {
        CHECK(nd::dropout(x, 0.5, false, rng).id() == x.id());
        CHECK_FALSE(t.nondeterministic());
    }
    SUBCASE("inverted scaling keeps the mean") {
        Var y = nd::dropout(x, 0.5, true, rng);
        CHECK(t.nondeterministic());
        double s = 0;
        for (double v : y.value().data) {
            CHECK((v == 0.0 || v == 2.0));
            s += v;
        }
        CHECK(s / 2000.0 == doctest::Approx(1.0).epsilon(0.1));
        t.backward(nd::sum_all(y));
        CHECK(t.grad(x) == y.value());
    }
    SUBCASE("grad_check refuses stochastic programs") {
        auto f = [](Tape&, Var v) {
            std::mt19937_64 r(1);
            return nd::sum_all(nd::dropout(v, 0.5, true, r));
        };
        CHECK_THROWS_AS(nd::grad_check(f, Matrix(2, 2, 1.0), 1e-5, 1e-4), std::invalid_argument);
    }
}

TEST_CASE("every op passes a central-difference gradient check") {
    for (const auto& prog : testing::ndiff_programs()) {
        CAPTURE(prog.name);
        const auto rep = nd::grad_check(prog.f, prog.point, 1e-5, 1e-4);
        CHECK(rep.pass);
        CHECK(rep.max_rel_error < 1e-6);
    }
}

TEST_CASE("grad_check catches a wrong gradient") {
    // x * stop(x) has true derivative 2x but this program reports x.
    auto f = [](Tape& t, Var x) { return nd::sum_all(nd::mul(x, t.constant(x.value()))); };
    const auto rep = nd::grad_check(f, Matrix::row({1.0, 2.0}), 1e-5, 1e-4);
    CHECK_FALSE(rep.pass);
}
