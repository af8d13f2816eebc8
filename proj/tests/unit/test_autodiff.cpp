#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "rglight/autodiff.hpp"
#include "test_util.hpp"

using namespace rglight::ad;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

using UnaryOp = std::function<Tensor(Tape&, Tensor)>;

// Loss = sum(op(x) .* w) with a fixed random weighting w so every output entry matters.
double fd_error(Matrix x, const UnaryOp& op, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    Matrix w;
    {
        Tape probe;
        w = random_matrix(static_cast<int>(op(probe, probe.constant(x)).rows()),
                          static_cast<int>(op(probe, probe.constant(x)).cols()), rng);
    }
    auto eval = [&](bool grad, Matrix* g) {
        Tape t;
        Tensor v = grad ? t.variable(x) : t.constant(x);
        Tensor loss = sum(mul(op(t, v), t.constant(w)));
        if (grad) {
            t.backward(loss);
            *g = v.grad();
        }
        return static_cast<double>(loss.item());
    };
    Matrix analytic;
    eval(true, &analytic);
    return testutil::gradient_error(x, [&] { return eval(false, nullptr); }, analytic);
}

}  // namespace

TEST_CASE("forward values of simple ops") {
    Tape t;
    Matrix z = Matrix::Zero(1, 1);
    CHECK(sigmoid(t.constant(z)).item() == doctest::Approx(0.5));
    Matrix one = Matrix::Ones(1, 1);
    CHECK(huber(t.constant(one), 1.0).item() == doctest::Approx(0.5));
    Matrix three = Matrix::Ones(1, 3);
    const Matrix sm = softmax_rows(t.constant(three), 5.0).value();
    for (int k = 0; k < 3; ++k) CHECK(sm(0, k) == doctest::Approx(1.0 / 3.0));
    Matrix big(1, 1);
    big(0, 0) = 3.0;
    CHECK(huber(t.constant(big), 1.0).item() == doctest::Approx(2.5));
    big(0, 0) = -0.4;
    CHECK(huber(t.constant(big), 1.0).item() == doctest::Approx(0.08));
    CHECK(relu(t.constant(big)).item() == 0.0);
    CHECK(cos(t.constant(z)).item() == doctest::Approx(1.0));
}

TEST_CASE("softmax with temperature matches the closed form") {
    Tape t;
    Matrix x(2, 3);
    x << 1, 2, 3, -1, 0, 10;
    const Matrix s = softmax_rows(t.constant(x), 5.0).value();
    for (int r = 0; r < 2; ++r) {
        double z = 0;
        for (int c = 0; c < 3; ++c) z += std::exp(x(r, c) / 5.0);
        for (int c = 0; c < 3; ++c) CHECK(s(r, c) == doctest::Approx(std::exp(x(r, c) / 5.0) / z));
    }
}

TEST_CASE("shape mismatches are rejected") {
    Tape t;
    auto a = t.constant(Matrix::Ones(2, 3));
    auto b = t.constant(Matrix::Ones(2, 3));
    CHECK_THROWS(matmul(a, b));
    CHECK_THROWS(add(a, t.constant(Matrix::Ones(3, 2))));
    CHECK_THROWS(add_row(a, t.constant(Matrix::Ones(1, 2))));
}

TEST_CASE("gradient of a linear map is the broadcast input") {
    ParamStore ps;
    Matrix w0(2, 3);
    w0 << 1, 2, 3, 4, 5, 6;
    auto& w = ps.add("W", w0);
    Matrix x(3, 1);
    x << 0.5, -1.0, 2.0;
    Tape t;
    const Tensor loss = sum(matmul(t.param(w), t.constant(x)));
    backward(t, loss, ps);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 3; ++c) CHECK(w.grad(r, c) == doctest::Approx(x(c, 0)));
    }
}

TEST_CASE("constant loss and unreachable parameters give zero gradients") {
    ParamStore ps;
    ps.add("a", Matrix::Constant(2, 2, 3.0));
    ps.add("b", Matrix::Constant(1, 1, 5.0));
    auto& a = ps.get("a");
    auto& b = ps.get("b");
    Tape t;
    t.param(a);
    const Tensor loss = sum(t.constant(Matrix::Ones(2, 2)));
    backward(t, loss, ps);
    CHECK(a.grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("second backward on the same tape throws") {
    Tape t;
    auto x = t.variable(Matrix::Ones(2, 2));
    auto loss = sum(x);
    t.backward(loss);
    CHECK_THROWS(t.backward(loss));
    t.reset();
    auto y = t.variable(Matrix::Ones(1, 1));
    CHECK_NOTHROW(t.backward(sum(y)));
}

TEST_CASE("every op matches central finite differences") {
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix other = random_matrix(3, 4, rng);
    const Matrix right = random_matrix(4, 2, rng);
    const Matrix row = random_matrix(1, 4, rng);

    struct Case {
        const char* name;
        UnaryOp op;
    };
    const std::vector<Case> cases{
        {"matmul-left", [&](Tape& t, Tensor v) { return matmul(v, t.constant(right)); }},
        {"matmul-right", [&](Tape& t, Tensor v) { return matmul(t.constant(right.transpose().leftCols(3)), v); }},
        {"add", [&](Tape& t, Tensor v) { return add(v, t.constant(other)); }},
        {"sub", [&](Tape& t, Tensor v) { return sub(t.constant(other), v); }},
        {"mul", [&](Tape& t, Tensor v) { return mul(v, t.constant(other)); }},
        {"mul-self", [&](Tape&, Tensor v) { return mul(v, v); }},
        {"scale", [&](Tape&, Tensor v) { return scale(v, -2.5); }},
        {"add_row", [&](Tape& t, Tensor v) { return add_row(v, t.constant(row)); }},
        {"sigmoid", [&](Tape&, Tensor v) { return sigmoid(v); }},
        {"relu", [&](Tape&, Tensor v) { return relu(v); }},
        {"cos", [&](Tape&, Tensor v) { return cos(scale(v, 3.0)); }},
        {"huber", [&](Tape&, Tensor v) { return huber(scale(v, 2.0), 1.0); }},
        {"huber-small", [&](Tape&, Tensor v) { return huber(v, 0.3); }},
        {"sum", [&](Tape&, Tensor v) { return sum(v); }},
        {"mean", [&](Tape&, Tensor v) { return mean(v); }},
        {"softmax", [&](Tape&, Tensor v) { return softmax_rows(v, 0.7); }},
        {"gather", [&](Tape&, Tensor v) { return gather_rows(v, {2, 0, 2, 1}); }},
        {"pick", [&](Tape&, Tensor v) { return pick(v, {3, 0, 1}); }},
        {"concat", [&](Tape& t, Tensor v) {
             std::vector<Tensor> parts{v, t.constant(other), sigmoid(v)};
             return concat_rows(parts);
         }},
        {"spmm", [&](Tape&, Tensor v) {
             auto m = std::make_shared<Csr>();
             m->rows = 2;
             m->cols = 3;
             m->row_ptr = {0, 2, 3};
             m->col = {0, 2, 1};
             m->val = {0.5, -1.5, 2.0};
             return spmm(m, v);
         }},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        CHECK(fd_error(x, c.op) < 1e-4);
    }
}

TEST_CASE("parameter gradients accumulate across two uses") {
    ParamStore ps;
    std::mt19937_64 rng(9);
    auto& w = ps.add("w", random_matrix(3, 3, rng));
    const Matrix x = random_matrix(2, 3, rng);
    auto f = [&] {
        Tape t;
        auto p = t.param(w);
        auto h = sigmoid(matmul(t.constant(x), p));
        return static_cast<double>(mean(huber(matmul(h, p), 1.0)).item());
    };
    Tape t;
    auto p = t.param(w);
    auto h = sigmoid(matmul(t.constant(x), p));
    backward(t, mean(huber(matmul(h, p), 1.0)), ps);
    const Matrix analytic = w.grad;
    CHECK(testutil::gradient_error(w.value, f, analytic) < 1e-4);
}

TEST_CASE("sgd step") {
    ParamStore ps;
    auto& p = ps.add("p", Matrix::Zero(1, 1));
    p.grad = Matrix::Ones(1, 1);
    sgd_step(ps, 0.1);
    CHECK(p.value(0, 0) == doctest::Approx(-0.1));
}

TEST_CASE("adam first step moves each parameter by about lr") {
    ParamStore ps;
    Matrix init(1, 3);
    init << 1.0, -2.0, 0.5;
    auto& p = ps.add("p", init);
    p.grad.resize(1, 3);
    p.grad << 0.3, -7.0, 1e-3;
    AdamConfig cfg;
    cfg.lr = 0.01;
    adam_step(ps, cfg);
    for (int k = 0; k < 3; ++k) {
        // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        const double g = p.grad(0, k);
        const double expected = init(0, k) - cfg.lr * g / (std::abs(g) + cfg.eps);
        CHECK(p.value(0, k) == doctest::Approx(expected).epsilon(1e-6));
        CHECK(std::abs(p.value(0, k) - init(0, k)) == doctest::Approx(0.01).epsilon(1e-3));
    }
    CHECK(ps.step == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    ParamStore ps;
    auto& p = ps.add("p", Matrix::Constant(2, 2, 4.0));
    p.grad = Matrix::Zero(2, 2);
    sgd_step(ps, 0.5);
    CHECK(p.value == Matrix::Constant(2, 2, 4.0));
    adam_step(ps);
    CHECK(p.value == Matrix::Constant(2, 2, 4.0));
}

TEST_CASE("non-finite gradients abort the step") {
    ParamStore ps;
    ps.add("a", Matrix::Constant(1, 2, 1.0));
    ps.add("b", Matrix::Constant(1, 1, 1.0));
    auto& a = ps.get("a");
    auto& b = ps.get("b");
    a.grad = Matrix::Ones(1, 2);
    b.grad(0, 0) = std::numeric_limits<Real>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(ps), NonFiniteGradient);
    CHECK(a.value == Matrix::Constant(1, 2, 1.0));
    CHECK(ps.step == 0);
    b.grad(0, 0) = std::numeric_limits<Real>::infinity();
    CHECK_THROWS_AS(sgd_step(ps, 0.1), NonFiniteGradient);
    CHECK(a.value == Matrix::Constant(1, 2, 1.0));
}

TEST_CASE("forward values are bit-identical across runs") {
    std::mt19937_64 r1(5), r2(5);
    const Matrix a = random_matrix(8, 8, r1), b = random_matrix(8, 8, r2);
    Tape t1, t2;
    const Matrix v1 = softmax_rows(sigmoid(matmul(t1.constant(a), t1.constant(a))), 2.0).value();
    const Matrix v2 = softmax_rows(sigmoid(matmul(t2.constant(b), t2.constant(b))), 2.0).value();
    CHECK(v1 == v2);
}

TEST_CASE("parameter store bookkeeping") {
    ParamStore ps;
    ps.add("a", Matrix::Zero(2, 3));
    ps.add("b", Matrix::Zero(1, 4));
    CHECK(ps.scalar_count() == 10);
    CHECK(ps.has("a"));
    CHECK_FALSE(ps.has("c"));
    CHECK_THROWS(ps.add("a", Matrix::Zero(1, 1)));
    CHECK_THROWS(ps.get("c"));
    ParamStore other;
    other.add("a", Matrix::Ones(2, 3));
    other.add("b", Matrix::Ones(1, 4));
    ps.copy_values_from(other);
    CHECK(ps.get("a").value == Matrix::Ones(2, 3));
}
