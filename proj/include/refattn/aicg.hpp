#pragma once

#include <utility>

#include "refattn/attention.hpp"
#include "refattn/matrix.hpp"

namespace refattn {

// Compresses the reference keys into M representative keys.
//   S = T_S . W_K          (key-space projection, reusing the RA key weights)
//   per head  K_sum = row_softmax(S K^T / sqrt(d_h)) . K
// Returns (S, K_sum). Billed at M*d^2 + 2*l_ref*M*d.
std::pair<Matrix, Matrix> summarize_reference(const Matrix& t_s, const Matrix& k,
                                              const RAWeights& w, const AttnConfig& cfg,
                                              MacCounter* counter = nullptr);

// Per-token gates from attention between source queries and the summarized
// keys. In Logits aggregation (the default) the pre-softmax scores are
// averaged over heads and summary tokens before the sigmoid; in
// SoftmaxOutput aggregation the row-stochastic maps are averaged instead,
// which collapses every gate to sigmoid(1/M) — kept as a diagnostic mode.
// Billed at 2*l_src*M*d.
GateMap compute_gate(const Matrix& q, const Matrix& k_sum, const AttnConfig& cfg,
                     MacCounter* counter = nullptr);

// Full gated reference attention:
//   final = ZeroLinear(G (x) RA(H_src, H_ref)) + H_src
// with G broadcast across the feature dimension at cfg.placement.
std::pair<AttnTrace, GateMap> aicg_forward(const Matrix& h_src, const Matrix& h_ref,
                                           const RAWeights& w, const AttnConfig& cfg,
                                           MacCounter* counter = nullptr,
                                           bool keep_attention_maps = true);

// As aicg_forward but fuses with caller-supplied gate values (l_src x 1)
// instead of the computed ones. The returned GateMap still holds the
// computed gates for inspection.
std::pair<AttnTrace, GateMap> aicg_forward_with_gate(const Matrix& h_src, const Matrix& h_ref,
                                                     const RAWeights& w, const AttnConfig& cfg,
                                                     const Matrix& gate_override,
                                                     MacCounter* counter = nullptr,
                                                     bool keep_attention_maps = true);

}  // namespace refattn
