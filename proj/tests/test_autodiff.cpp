#include <cmath>

#include "doctest.h"
#include "refattn/autodiff.hpp"

using namespace refattn;

namespace {

AttnConfig diff_cfg(std::size_t ls, std::size_t lr, std::size_t d, std::size_t heads,
                    std::size_t m, GatingMode mode = GatingMode::Aicg) {
    AttnConfig cfg;
    cfg.l_src = ls;
    cfg.l_ref = lr;
    cfg.d = d;
    cfg.heads = heads;
    cfg.summary_tokens = m;
    cfg.gating = mode;
    return cfg;
}

}  // namespace

TEST_CASE("finite differences: constant loss has zero gradient") {
    Matrix p(2, 3);
    Matrix g = finite_difference([](const Matrix&) { return 4.2; }, p, 1e-5);
    CHECK(max_abs(g) == 0.0);
}

TEST_CASE("finite differences: sum of squares at the identity") {
    Matrix p = Matrix::identity(3);
    auto loss = [](const Matrix& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i] * x.data()[i];
        return s;
    };
    Matrix g = finite_difference(loss, p, 1e-5);
    CHECK(max_abs_diff(g, scale(Matrix::identity(3), 2.0)) < 1e-9);
}

TEST_CASE("finite differences: softmax Jacobian composition") {
    // loss(x) = sum_j softmax(x)_j^2 on a single row; analytic gradient is
    // J^T (2 s) with J = diag(s) - s s^T.
    Matrix x(1, 3, {0.3, -1.1, 0.7});
    auto loss = [](const Matrix& p) {
        Matrix s = row_softmax(p);
        double acc = 0.0;
        for (std::size_t j = 0; j < 3; ++j) acc += s(0, j) * s(0, j);
        return acc;
    };
    Matrix fd = finite_difference(loss, x, 1e-5);

    Matrix s = row_softmax(x);
    Matrix analytic(1, 3);
    double dot = 0.0;
    for (std::size_t j = 0; j < 3; ++j) dot += 2.0 * s(0, j) * s(0, j);
    for (std::size_t j = 0; j < 3; ++j) {
        analytic(0, j) = s(0, j) * (2.0 * s(0, j) - dot);
    }
    for (std::size_t j = 0; j < 3; ++j) {
        const double denom = std::max({std::fabs(fd(0, j)), std::fabs(analytic(0, j)), 1e-8});
        CHECK(std::fabs(fd(0, j) - analytic(0, j)) / denom < 1e-6);
    }
}

TEST_CASE("finite differences surfaces non-finite losses with the entry") {
    Matrix p(1, 2, {1.0, 1e-6});
    // goes NaN only when the second entry is probed downward past zero
    auto loss = [](const Matrix& x) { return std::sqrt(x(0, 1)); };
    CHECK_THROWS_WITH_AS(finite_difference(loss, p, 1e-5), doctest::Contains("(0, 1)"),
                         NumericalError);
}

TEST_CASE("quadratic form gradient: d/dx ||A x||^2 = 2 A^T A x") {
    Rng rng(60);
    Matrix a = rand_matrix(4, 3, rng, 1.0);
    Matrix x = rand_matrix(3, 1, rng, 1.0);
    auto loss = [&](const Matrix& p) {
        Matrix y = matmul(a, p);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * y.data()[i];
        return s;
    };
    Matrix fd = finite_difference(loss, x, 1e-5);
    Matrix analytic = scale(matmul(matmul(transpose(a), a), x), 2.0);
    CHECK(max_abs_diff(fd, analytic) < 1e-8);
}

TEST_CASE("zero zero_linear blocks every upstream gradient") {
    AttnConfig cfg = diff_cfg(3, 4, 4, 1, 2);
    Rng rng(61);
    Matrix hs = rand_matrix(3, 4, rng, 1.0);
    Matrix hr = rand_matrix(4, 4, rng, 1.0);
    RAWeights w = make_weights(cfg, rng);  // zero_linear stays zero
    Matrix target = rand_matrix(3, 4, rng, 1.0);

    DiffTrace trace = record_forward(hs, hr, w, cfg, &target);
    Gradients g = backward_scalar_loss(trace);
    CHECK(max_abs(g.w_q) == 0.0);
    CHECK(max_abs(g.w_v) == 0.0);
    CHECK(max_abs(g.to_out) == 0.0);
    // zero_linear itself still learns: its gradient sees the gated branch
    CHECK(max_abs(g.zero_linear) > 0.0);
}

TEST_CASE("backward requires a cached trace") {
    DiffTrace empty;
    CHECK_THROWS_AS(backward_scalar_loss(empty), UsageError);
}

TEST_CASE("explicit mode is rejected by the differentiable path") {
    AttnConfig cfg = diff_cfg(3, 4, 4, 1, 2, GatingMode::Explicit);
    Rng rng(62);
    Matrix hs = rand_matrix(3, 4, rng, 1.0);
    Matrix hr = rand_matrix(4, 4, rng, 1.0);
    RAWeights w = make_weights(cfg, rng, true);
    CHECK_THROWS_AS(record_forward(hs, hr, w, cfg), UsageError);
}

TEST_CASE("analytic matches central differences on a seeded tiny config") {
    AttnConfig cfg = diff_cfg(3, 4, 4, 1, 2);
    Rng rng(63);
    Matrix hs = rand_matrix(3, 4, rng, 1.0);
    Matrix hr = rand_matrix(4, 4, rng, 1.0);
    RAWeights w = make_weights(cfg, rng, true);
    GradCheckResult res = gradient_check(hs, hr, w, cfg, 1e-5);
    CHECK(res.worst_rel_err() < 1e-5);
    CHECK(res.passed());
}

TEST_CASE("gradient check covers every mode and placement") {
    Rng rng(64);
    int idx = 0;
    for (GatingMode mode : {GatingMode::Vanilla, GatingMode::Global, GatingMode::Aicg}) {
        for (GatePlacement placement :
             {GatePlacement::BeforeZeroLinear, GatePlacement::BeforeToOut}) {
            AttnConfig cfg = diff_cfg(3, 4, 8, 2, 2, mode);
            cfg.placement = placement;
            Matrix hs = rand_matrix(3, 8, rng, 1.0);
            Matrix hr = rand_matrix(4, 8, rng, 1.0);
            RAWeights w = make_weights(cfg, rng, true);
            w.global_gate_logit = 0.2 + 0.1 * idx++;
            GradCheckResult res = gradient_check(hs, hr, w, cfg, 1e-5);
            INFO("mode ", to_string(mode), " placement ", to_string(placement));
            CHECK(res.worst_rel_err() < 1e-4);
        }
    }
}

TEST_CASE("summary tokens learn in logits mode, die in softmax-output mode") {
    AttnConfig cfg = diff_cfg(4, 5, 8, 2, 3);
    Rng rng(65);
    Matrix hs = rand_matrix(4, 8, rng, 1.0);
    Matrix hr = rand_matrix(5, 8, rng, 1.0);
    RAWeights w = make_weights(cfg, rng, true);

    Gradients alive = backward_scalar_loss(record_forward(hs, hr, w, cfg));
    CHECK(fro_norm(alive.summary_tokens) > 1e-8);

    cfg.aggregation = AggregationMode::SoftmaxOutput;
    Gradients dead = backward_scalar_loss(record_forward(hs, hr, w, cfg));
    CHECK(fro_norm(dead.summary_tokens) < 1e-10);
}

TEST_CASE("global gate logit carries gradient only in global mode") {
    Rng rng(66);
    AttnConfig cfg = diff_cfg(3, 4, 4, 1, 2, GatingMode::Global);
    Matrix hs = rand_matrix(3, 4, rng, 1.0);
    Matrix hr = rand_matrix(4, 4, rng, 1.0);
    RAWeights w = make_weights(cfg, rng, true);
    w.global_gate_logit = -0.4;
    Gradients g = backward_scalar_loss(record_forward(hs, hr, w, cfg));
    CHECK(std::fabs(g.global_gate_logit) > 1e-10);

    cfg.gating = GatingMode::Aicg;
    Gradients g2 = backward_scalar_loss(record_forward(hs, hr, w, cfg));
    CHECK(g2.global_gate_logit == 0.0);
}

TEST_CASE("sign-flip corruption is detected through recompute_errors") {
    AttnConfig cfg = diff_cfg(3, 4, 4, 1, 2);
    Rng rng(67);
    Matrix hs = rand_matrix(3, 4, rng, 1.0);
    Matrix hr = rand_matrix(4, 4, rng, 1.0);
    RAWeights w = make_weights(cfg, rng, true);
    GradCheckResult res = gradient_check(hs, hr, w, cfg, 1e-5);
    REQUIRE(res.passed());
    GradReport& first = res.reports.front();
    first.analytic(0, 0) = -first.analytic(0, 0) - 1.0;  // planted bug
    recompute_errors(first);
    CHECK_FALSE(res.passed());
}
