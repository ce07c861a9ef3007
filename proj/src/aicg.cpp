#include "refattn/aicg.hpp"

#include <cmath>

#include "refattn/internal.hpp"

namespace refattn {

std::pair<Matrix, Matrix> summarize_reference(const Matrix& t_s, const Matrix& k,
                                              const RAWeights& w, const AttnConfig& cfg,
                                              MacCounter* counter) {
    cfg.validate();
    if (t_s.rows() != cfg.summary_tokens || t_s.cols() != cfg.d) {
        throw DimensionError("summarize_reference: T_S " + t_s.shape_str() +
                             " does not match config " + std::to_string(cfg.summary_tokens) +
                             "x" + std::to_string(cfg.d));
    }
    if (k.rows() != cfg.l_ref || k.cols() != cfg.d) {
        throw DimensionError("summarize_reference: K " + k.shape_str() +
                             " does not match config " + std::to_string(cfg.l_ref) + "x" +
                             std::to_string(cfg.d));
    }

    Matrix s = matmul(t_s, w.w_k, counter);

    const std::size_t dh = cfg.head_dim();
    const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix k_sum(cfg.summary_tokens, cfg.d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Matrix sh = col_block(s, h * dh, dh);
        const Matrix kh = col_block(k, h * dh, dh);
        Matrix weights = row_softmax(scale(matmul_bt(sh, kh, counter), scale_f));
        set_col_block(k_sum, h * dh, matmul(weights, kh, counter));
    }
    return {std::move(s), std::move(k_sum)};
}

GateMap compute_gate(const Matrix& q, const Matrix& k_sum, const AttnConfig& cfg,
                     MacCounter* counter) {
    cfg.validate();
    if (q.rows() != cfg.l_src || q.cols() != cfg.d) {
        throw DimensionError("compute_gate: Q " + q.shape_str() + " does not match config " +
                             std::to_string(cfg.l_src) + "x" + std::to_string(cfg.d));
    }
    if (k_sum.rows() != cfg.summary_tokens || k_sum.cols() != cfg.d) {
        throw DimensionError("compute_gate: K_sum " + k_sum.shape_str() +
                             " does not match config " + std::to_string(cfg.summary_tokens) +
                             "x" + std::to_string(cfg.d));
    }

    GateMap out;
    out.aggregation = cfg.aggregation;

    const std::size_t dh = cfg.head_dim();
    const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> mean(cfg.l_src, 0.0);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Matrix qh = col_block(q, h * dh, dh);
        const Matrix kh = col_block(k_sum, h * dh, dh);
        Matrix logits = scale(matmul_bt(qh, kh, counter), scale_f);
        detail::charge_interaction(counter, cfg.l_src, dh, cfg.summary_tokens);
        Matrix smap = row_softmax(logits);

        const Matrix& pooled = cfg.aggregation == AggregationMode::Logits ? logits : smap;
        for (std::size_t i = 0; i < cfg.l_src; ++i) {
            for (std::size_t j = 0; j < cfg.summary_tokens; ++j) mean[i] += pooled(i, j);
        }
        out.logit_maps.push_back(std::move(logits));
        out.s_maps.push_back(std::move(smap));
    }

    const double denom = static_cast<double>(cfg.heads) * static_cast<double>(cfg.summary_tokens);
    out.g = Matrix(cfg.l_src, 1);
    for (std::size_t i = 0; i < cfg.l_src; ++i) out.g(i, 0) = sigmoid(mean[i] / denom);
    return out;
}

namespace {

std::pair<AttnTrace, GateMap> aicg_run(const Matrix& h_src, const Matrix& h_ref,
                                       const RAWeights& w, const AttnConfig& cfg,
                                       const Matrix* gate_override, MacCounter* counter,
                                       bool keep_maps) {
    if (cfg.gating != GatingMode::Aicg) {
        throw std::invalid_argument("aicg_forward: config gating mode must be aicg");
    }
    MacCounter local;
    detail::AttnCore core = detail::attention_core(h_src, h_ref, w, cfg, &local, keep_maps);

    auto [s, k_sum] = summarize_reference(w.summary_tokens, core.k, w, cfg, &local);
    GateMap gates = compute_gate(core.q, k_sum, cfg, &local);
    gates.s = std::move(s);
    gates.k_sum = std::move(k_sum);

    detail::GateSpec gate;
    gate.kind = detail::GateSpec::Kind::PerToken;
    gate.vector = gate_override ? *gate_override : gates.g;

    AttnTrace trace = detail::finish_output(std::move(core), gate, h_src, w, cfg, &local);
    trace.mac_count = local.macs;
    if (counter) counter->add(local.macs);
    return {std::move(trace), std::move(gates)};
}

}  // namespace

std::pair<AttnTrace, GateMap> aicg_forward(const Matrix& h_src, const Matrix& h_ref,
                                           const RAWeights& w, const AttnConfig& cfg,
                                           MacCounter* counter, bool keep_attention_maps) {
    return aicg_run(h_src, h_ref, w, cfg, nullptr, counter, keep_attention_maps);
}

std::pair<AttnTrace, GateMap> aicg_forward_with_gate(const Matrix& h_src, const Matrix& h_ref,
                                                     const RAWeights& w, const AttnConfig& cfg,
                                                     const Matrix& gate_override,
                                                     MacCounter* counter,
                                                     bool keep_attention_maps) {
    if (gate_override.rows() != cfg.l_src || gate_override.cols() != 1) {
        throw DimensionError("aicg_forward_with_gate: gate override " +
                             gate_override.shape_str() + " must be " +
                             std::to_string(cfg.l_src) + "x1");
    }
    return aicg_run(h_src, h_ref, w, cfg, &gate_override, counter, keep_attention_maps);
}

}  // namespace refattn
