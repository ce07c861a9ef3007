#pragma once

#include <string>
#include <vector>

#include "refattn/matrix.hpp"

namespace refattn {

enum class GatingMode { Vanilla, Global, Explicit, Aicg };
enum class GatePlacement { BeforeZeroLinear, BeforeToOut };
enum class AggregationMode { Logits, SoftmaxOutput };

const char* to_string(GatingMode m);
const char* to_string(GatePlacement p);
const char* to_string(AggregationMode a);
GatingMode parse_gating_mode(const std::string& s);
GatePlacement parse_gate_placement(const std::string& s);
AggregationMode parse_aggregation_mode(const std::string& s);

// Every shape symbol of the attention block in one place.
struct AttnConfig {
    std::size_t l_src = 4096;       // source (query-side) token count
    std::size_t l_ref = 4096;       // reference token count
    std::size_t d = 1024;           // model width
    std::size_t heads = 1;          // head count; d must be divisible by it
    std::size_t summary_tokens = 16;  // M

    GatingMode gating = GatingMode::Aicg;
    GatePlacement placement = GatePlacement::BeforeZeroLinear;
    AggregationMode aggregation = AggregationMode::Logits;

    std::size_t head_dim() const { return d / heads; }
    void validate() const;  // throws DimensionError naming the offending field
};

// Learnable state of one reference-attention block. zero_linear starts as
// the exact zero matrix so the fused branch contributes nothing until it
// is perturbed; make_weights leaves it zero unless asked otherwise.
struct RAWeights {
    Matrix w_q, w_k, w_v;     // d x d projections
    Matrix to_out;            // d x d output projection
    Matrix zero_linear;       // d x d, zero-initialized
    Matrix summary_tokens;    // M x d learnable summary tokens
    double global_gate_logit = 0.0;  // Global mode scalar
    double explicit_weight = 0.5;    // fixed weight for Explicit mode
};

RAWeights make_weights(const AttnConfig& cfg, Rng& rng, bool randomize_zero_linear = false);

// Full record of one forward pass. attn_weights holds one row-stochastic
// l_src x l_ref map per head and is left empty when keep_attention_maps is
// false (the maps dominate memory at benchmark sizes).
struct AttnTrace {
    Matrix q, k, v;
    std::vector<Matrix> attn_weights;
    Matrix raw_out;        // concatenated per-head attention output
    Matrix projected_out;  // after to_out
    Matrix final_out;      // after gating / zero_linear / residual
    unsigned long long mac_count = 0;
};

// Gate state produced by the gated modes. The summary-token fields (s,
// k_sum, logit_maps, s_maps) are populated only in Aicg mode; Explicit mode
// fills g alone. Aicg gates are sigmoid outputs and therefore strictly
// inside (0, 1).
struct GateMap {
    Matrix s;                        // M x d summary projection
    Matrix k_sum;                    // M x d summarized reference keys
    std::vector<Matrix> logit_maps;  // per head, l_src x M pre-softmax scores
    std::vector<Matrix> s_maps;      // per head, row-stochastic
    Matrix g;                        // l_src x 1 gate values
    AggregationMode aggregation = AggregationMode::Logits;
};

struct QKV {
    Matrix q, k, v;
};

// Q = H_src W_Q, K = H_ref W_K, V = H_ref W_V. Charges the three
// projection costs to the counter.
QKV project_qkv(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                MacCounter* counter = nullptr);

// Vanilla reference attention:
//   per head  A = row_softmax(Q K^T / sqrt(d_h)),  raw = concat(A V)
//   final = (raw . to_out) . zero_linear + H_src
AttnTrace ra_forward(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                     const AttnConfig& cfg, MacCounter* counter = nullptr,
                     bool keep_attention_maps = true);

// As ra_forward but the fused branch is scaled by the single learned
// scalar sigmoid(global_gate_logit) before zero_linear.
AttnTrace global_gate_forward(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                              const AttnConfig& cfg, MacCounter* counter = nullptr,
                              bool keep_attention_maps = true);

// Explicit-correlation baseline: builds the full l_src x l_ref cosine
// similarity matrix between the raw inputs and gates each source token by
// explicit_weight * max_j cos(src_i, ref_j), clamped to [0, 1]. Zero-norm
// token rows contribute similarity 0.
std::pair<AttnTrace, GateMap> explicit_gate_forward(const Matrix& h_src, const Matrix& h_ref,
                                                    const RAWeights& w, const AttnConfig& cfg,
                                                    MacCounter* counter = nullptr,
                                                    bool keep_attention_maps = true);

}  // namespace refattn
