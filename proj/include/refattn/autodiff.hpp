#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "refattn/attention.hpp"
#include "refattn/matrix.hpp"

namespace refattn {

struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Forward recording for the differentiable gating modes (Vanilla, Global,
// Aicg). Explicit mode is excluded: its max-over-references gate is not
// smooth. Every intermediate the backward pass consumes is cached here by
// the forward that produced it.
struct DiffTrace {
    AttnConfig cfg;
    Matrix h_src, h_ref;
    RAWeights weights;
    std::optional<Matrix> target;  // loss target; zero when absent

    Matrix q, k, v;
    std::vector<Matrix> attn;      // per-head softmax outputs
    Matrix raw;
    Matrix s, k_sum;
    std::vector<Matrix> summary_weights;  // per-head M x l_ref softmax outputs
    std::vector<Matrix> gate_logits;      // per-head l_src x M
    std::vector<Matrix> gate_smaps;       // per-head row-stochastic
    Matrix gate_pre;   // l_src x 1, pooled pre-sigmoid values
    Matrix gate;       // l_src x 1 (Aicg); scalar modes leave it empty
    double global_gate = 1.0;  // sigmoid(global_gate_logit) in Global mode

    Matrix gated_raw;   // BeforeToOut placement only
    Matrix projected;
    Matrix gated_proj;  // BeforeZeroLinear placement only
    Matrix final_out;
    double loss = 0.0;

    bool cached = false;
};

// Gradients for the full learnable set. Unused parameters for a mode come
// back zero (e.g. global_gate_logit outside Global mode).
struct Gradients {
    Matrix w_q, w_k, w_v, to_out, zero_linear, summary_tokens;
    double global_gate_logit = 0.0;
};

// Runs the mode's forward with caching and the sum-of-squares loss
// ||final_out - target||^2 (target zero when omitted).
DiffTrace record_forward(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                         const AttnConfig& cfg, const Matrix* target = nullptr);

// Loss alone, no caching; this is the function the finite-difference
// oracle probes.
double forward_loss(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                    const AttnConfig& cfg, const Matrix* target = nullptr);

// Reverse pass over the hand-enumerated graph (matmul, row-softmax,
// sigmoid, broadcast scale, mean pooling, residual). Throws UsageError if
// the trace was recorded without caching.
Gradients backward_scalar_loss(const DiffTrace& trace);

// Central finite differences, entry by entry:
//   (loss(p + h e_ij) - loss(p - h e_ij)) / (2h)
// Throws NumericalError naming the entry if the loss goes non-finite.
Matrix finite_difference(const std::function<double(const Matrix&)>& loss_fn,
                         const Matrix& param, double h);

struct GradReport {
    std::string param;
    Matrix analytic;
    Matrix fd;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    double fd_step = 0.0;
};

// Recomputes the error fields from the two gradient matrices, with the
// relative error denominator floored at 1e-8.
void recompute_errors(GradReport& report);

struct GradCheckResult {
    std::vector<GradReport> reports;
    double summary_token_grad_norm = 0.0;  // Frobenius norm of the T_S gradient
    double worst_rel_err() const;
    bool passed(double threshold = 1e-4) const;
};

// Analytic vs central-FD comparison for every parameter of the block:
// W_Q, W_K, W_V, to_out, zero_linear, T_S, global_gate_logit.
GradCheckResult gradient_check(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                               const AttnConfig& cfg, double fd_step = 1e-5,
                               const Matrix* target = nullptr);

}  // namespace refattn
