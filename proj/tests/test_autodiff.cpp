#include <doctest.h>

#include <cmath>

#include "crg/autodiff.hpp"
#include "crg/nn.hpp"
#include "test_support.hpp"

using namespace crg;
using ad::Mat;
using ad::Value;
using test::grad_check;
using test::random_mat;

TEST_CASE("scalar chain rule through elementwise ops") {
    Rng rng(1);
    auto x = ad::leaf(random_mat(3, 4, rng));
    auto y = ad::leaf(random_mat(3, 4, rng));
    auto build = [&] {
        return ad::sum(ad::mul(ad::tanh(x), ad::sigmoid(ad::add(x, y))));
    };
    CHECK(grad_check(build, {x, y}) < 1e-7);
}

TEST_CASE("matmul, transpose, stacking, slicing") {
    Rng rng(2);
    auto a = ad::leaf(random_mat(3, 5, rng));
    auto b = ad::leaf(random_mat(5, 4, rng));
    auto c = ad::leaf(random_mat(3, 4, rng));
    auto build = [&] {
        auto prod = ad::matmul(a, b);
        auto stacked = ad::vstack({prod, c});
        auto piece = ad::slice_rows(stacked, 1, 4);
        auto cols = ad::hstack({ad::slice_cols(piece, 0, 2), ad::slice_cols(piece, 2, 2)});
        return ad::mean(ad::mul(cols, cols));
    };
    CHECK(grad_check(build, {a, b, c}) < 1e-7);
}

TEST_CASE("softmax rows sum to one and gradient checks") {
    Rng rng(3);
    auto x = ad::leaf(random_mat(4, 6, rng, -3.0, 3.0));
    auto w = ad::leaf(random_mat(6, 1, rng));
    auto sm = ad::softmax_rows(x);
    for (int i = 0; i < 4; ++i) {
        CHECK(sm->value.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(sm->value.row(i).minCoeff() >= 0.0);
    }
    auto build = [&] { return ad::sum(ad::matmul(ad::softmax_rows(x), w)); };
    CHECK(grad_check(build, {x, w}) < 1e-7);
}

TEST_CASE("layernorm matches direct computation and gradient checks") {
    Rng rng(4);
    auto x = ad::leaf(random_mat(3, 8, rng));
    auto gamma = ad::leaf(random_mat(1, 8, rng, 0.5, 1.5));
    auto beta = ad::leaf(random_mat(1, 8, rng));
    auto y = ad::layernorm_rows(x, gamma, beta);
    // row mean ~0, row var ~1 before affine
    Mat xhat = (y->value.rowwise() - beta->value.row(0)).array().rowwise() /
               gamma->value.row(0).array();
    CHECK(std::abs(xhat.row(0).mean()) < 1e-12);
    auto build = [&] { return ad::mean(ad::gelu(ad::layernorm_rows(x, gamma, beta))); };
    CHECK(grad_check(build, {x, gamma, beta}) < 1e-6);
}

TEST_CASE("cross entropy equals -log softmax and gradient checks") {
    Rng rng(5);
    auto logits = ad::leaf(random_mat(3, 5, rng, -2.0, 2.0));
    std::vector<int> targets = {1, 4, 0};
    auto ce = ad::cross_entropy_rows(logits, targets);
    for (int i = 0; i < 3; ++i) {
        Eigen::VectorXd row = logits->value.row(i);
        double m = row.maxCoeff();
        double lse = m + std::log((row.array() - m).exp().sum());
        CHECK(ce->value(i, 0) ==
              doctest::Approx(lse - row(targets[size_t(i)])).epsilon(1e-12));
    }
    auto build = [&] { return ad::mean(ad::cross_entropy_rows(logits, targets)); };
    CHECK(grad_check(build, {logits}) < 1e-7);
}

TEST_CASE("l2 row normalization: unit rows, zero-row error, gradient") {
    Rng rng(6);
    auto x = ad::leaf(random_mat(4, 3, rng));
    auto y = ad::l2normalize_rows(x);
    for (int i = 0; i < 4; ++i)
        CHECK(y->value.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));

    auto z = ad::leaf(Mat::Zero(2, 3));
    CHECK_THROWS_AS(ad::l2normalize_rows(z), NumericalError);

    auto w = ad::leaf(random_mat(3, 4, rng));
    auto build = [&] {
        auto n = ad::l2normalize_rows(x);
        auto m = ad::l2normalize_rows(ad::matmul(n, w));
        return ad::sum(ad::mul(m, ad::exp(m)));
    };
    CHECK(grad_check(build, {x, w}) < 1e-7);
}

TEST_CASE("xlogx handles exact zeros") {
    Mat m(1, 3);
    m << 0.0, 0.5, 1.0;
    auto v = ad::xlogx(ad::constant(m));
    CHECK(v->value(0, 0) == 0.0);
    CHECK(v->value(0, 1) == doctest::Approx(0.5 * std::log(0.5)).epsilon(1e-15));
    CHECK(v->value(0, 2) == 0.0);
}

TEST_CASE("abs and clamp_min0 subgradients away from kinks") {
    Rng rng(7);
    Mat init = random_mat(3, 3, rng);
    init = init.unaryExpr([](double v) { return v >= 0 ? v + 0.05 : v - 0.05; });
    auto x = ad::leaf(init);
    auto build = [&] { return ad::sum(ad::abs(ad::clamp_min0(x))); };
    CHECK(grad_check(build, {x}) < 1e-7);
}

TEST_CASE("gather_rows scatter-add gradient") {
    Rng rng(8);
    auto table = ad::leaf(random_mat(6, 4, rng));
    std::vector<int> idx = {0, 3, 3, 5};
    auto build = [&] {
        auto rows = ad::gather_rows(table, idx);
        return ad::mean(ad::mul(rows, rows));
    };
    CHECK(grad_check(build, {table}) < 1e-7);
}

TEST_CASE("scale_rows and add_rowvec gradients") {
    Rng rng(9);
    auto x = ad::leaf(random_mat(4, 5, rng));
    auto s = ad::leaf(random_mat(4, 1, rng));
    auto b = ad::leaf(random_mat(1, 5, rng));
    auto build = [&] { return ad::mean(ad::tanh(ad::add_rowvec(ad::scale_rows(x, s), b))); };
    CHECK(grad_check(build, {x, s, b}) < 1e-7);
}

TEST_CASE("detach blocks gradient flow") {
    Rng rng(10);
    auto x = ad::leaf(random_mat(2, 2, rng));
    auto loss = ad::sum(ad::mul(ad::detach(x), x));
    auto gs = ad::backward(loss);
    const Mat* g = gs.find(x);
    REQUIRE(g != nullptr);
    // gradient is detach(x) only, not 2x
    CHECK((*g - x->value).norm() < 1e-15);
}

TEST_CASE("node reused twice accumulates gradient") {
    auto x = ad::leaf(Mat::Constant(1, 1, 3.0));
    auto y = ad::add(x, x);  // 2x
    auto gs = ad::backward(ad::sum(y));
    CHECK((*gs.find(x))(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("multihead attention: rows normalized, gradient checks") {
    Rng rng(11);
    nn::ParamStore ps;
    nn::AttentionParams attn(ps, "attn", 8, 2, rng);
    auto q = ad::leaf(random_mat(3, 8, rng));
    auto kv = ad::leaf(random_mat(5, 8, rng));

    auto res = nn::multihead_attention(attn, q, kv);
    REQUIRE(res.head_attn.size() == 2);
    for (const auto& a : res.head_attn) {
        CHECK(a->value.rows() == 3);
        CHECK(a->value.cols() == 5);
        for (int i = 0; i < 3; ++i)
            CHECK(a->value.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }

    std::vector<Value> leaves = {q, kv, attn.wq, attn.wk, attn.wv, attn.wo, attn.bo};
    auto build = [&] {
        auto r = nn::multihead_attention(attn, q, kv);
        return ad::mean(ad::mul(r.out, r.out));
    };
    CHECK(grad_check(build, leaves) < 1e-6);
}

TEST_CASE("causal prefix mask blocks future text but keeps prefix visible") {
    Mat m = nn::causal_prefix_mask(2, 3);
    // prefix rows see prefix only
    CHECK(m(0, 0) == 0.0);
    CHECK(m(0, 1) == 0.0);
    CHECK(m(0, 2) < -1e29);
    // text row 0 (index 2) sees prefix and itself
    CHECK(m(2, 0) == 0.0);
    CHECK(m(2, 2) == 0.0);
    CHECK(m(2, 3) < -1e29);
    // last text row sees everything
    CHECK(m(4, 4) == 0.0);
}

TEST_CASE("adam determinism: same gradients, same trajectory") {
    auto run = [] {
        Rng rng(12);
        nn::ParamStore ps;
        auto w = ps.add("w", test::random_mat(2, 2, rng));
        nn::Adam opt(ps, {});
        for (int i = 0; i < 5; ++i) {
            auto loss = ad::sum(ad::mul(w, w));
            opt.step(ad::backward(loss));
        }
        return w->value;
    };
    Mat a = run(), b = run();
    CHECK((a - b).norm() == 0.0);
}
