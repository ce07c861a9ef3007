#pragma once

// Internals shared by the forward-pass translation units. Not part of the
// public surface.

#include "refattn/attention.hpp"
#include "refattn/matrix.hpp"

namespace refattn::detail {

struct AttnCore {
    Matrix q, k, v;
    std::vector<Matrix> maps;  // per-head attention, kept on request
    Matrix raw;
};

struct GateSpec {
    enum class Kind { None, Scalar, PerToken };
    Kind kind = Kind::None;
    double scalar = 1.0;
    Matrix vector;  // l_src x 1 when kind == PerToken
    Matrix apply(const Matrix& x) const;
};

// The closed-form cost convention bills token-to-token interaction
// products (attention scores, their value application, similarity and
// gate-score maps) at two units per multiply-accumulate, while linear
// projections and the summary-side products are billed at one. matmul
// already charged m*k*n; this adds the second unit.
inline void charge_interaction(MacCounter* counter, std::size_t m, std::size_t k,
                               std::size_t n) {
    if (counter) counter->add(static_cast<unsigned long long>(m) * k * n);
}

void check_forward_shapes(const Matrix& h_src, const Matrix& h_ref, const AttnConfig& cfg);

AttnCore attention_core(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                        const AttnConfig& cfg, MacCounter* counter, bool keep_maps);

AttnTrace finish_output(AttnCore&& core, const GateSpec& gate, const Matrix& h_src,
                        const RAWeights& w, const AttnConfig& cfg, MacCounter* counter);

}  // namespace refattn::detail
