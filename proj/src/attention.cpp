#include "refattn/attention.hpp"

#include <cmath>
#include <utility>

#include "refattn/internal.hpp"

namespace refattn {

const char* to_string(GatingMode m) {
    switch (m) {
        case GatingMode::Vanilla: return "vanilla";
        case GatingMode::Global: return "global";
        case GatingMode::Explicit: return "explicit";
        case GatingMode::Aicg: return "aicg";
    }
    return "?";
}

const char* to_string(GatePlacement p) {
    return p == GatePlacement::BeforeZeroLinear ? "before-zero-linear" : "before-to-out";
}

const char* to_string(AggregationMode a) {
    return a == AggregationMode::Logits ? "logits" : "softmax-output";
}

GatingMode parse_gating_mode(const std::string& s) {
    if (s == "vanilla") return GatingMode::Vanilla;
    if (s == "global") return GatingMode::Global;
    if (s == "explicit") return GatingMode::Explicit;
    if (s == "aicg") return GatingMode::Aicg;
    throw std::invalid_argument("unknown gating mode: " + s);
}

GatePlacement parse_gate_placement(const std::string& s) {
    if (s == "before-zero-linear") return GatePlacement::BeforeZeroLinear;
    if (s == "before-to-out") return GatePlacement::BeforeToOut;
    throw std::invalid_argument("unknown gate placement: " + s);
}

AggregationMode parse_aggregation_mode(const std::string& s) {
    if (s == "logits") return AggregationMode::Logits;
    if (s == "softmax-output") return AggregationMode::SoftmaxOutput;
    throw std::invalid_argument("unknown aggregation mode: " + s);
}

void AttnConfig::validate() const {
    if (l_src < 1) throw DimensionError("AttnConfig: l_src must be >= 1");
    if (l_ref < 1) throw DimensionError("AttnConfig: l_ref must be >= 1");
    if (summary_tokens < 1) throw DimensionError("AttnConfig: summary_tokens must be >= 1");
    if (d < 1) throw DimensionError("AttnConfig: d must be >= 1");
    if (heads < 1) throw DimensionError("AttnConfig: heads must be >= 1");
    if (d % heads != 0) {
        throw DimensionError("AttnConfig: d (" + std::to_string(d) +
                             ") not divisible by heads (" + std::to_string(heads) + ")");
    }
}

RAWeights make_weights(const AttnConfig& cfg, Rng& rng, bool randomize_zero_linear) {
    cfg.validate();
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    RAWeights w;
    w.w_q = rand_matrix(cfg.d, cfg.d, rng, s);
    w.w_k = rand_matrix(cfg.d, cfg.d, rng, s);
    w.w_v = rand_matrix(cfg.d, cfg.d, rng, s);
    w.to_out = rand_matrix(cfg.d, cfg.d, rng, s);
    w.zero_linear = randomize_zero_linear ? rand_matrix(cfg.d, cfg.d, rng, s)
                                          : Matrix(cfg.d, cfg.d);
    w.summary_tokens = rand_matrix(cfg.summary_tokens, cfg.d, rng, s);
    return w;
}

QKV project_qkv(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                MacCounter* counter) {
    if (h_src.cols() != w.w_q.rows()) {
        throw DimensionError("project_qkv: H_src " + h_src.shape_str() + " vs W_Q " +
                             w.w_q.shape_str());
    }
    if (h_ref.cols() != w.w_k.rows()) {
        throw DimensionError("project_qkv: H_ref " + h_ref.shape_str() + " vs W_K " +
                             w.w_k.shape_str());
    }
    QKV out;
    out.q = matmul(h_src, w.w_q, counter);
    out.k = matmul(h_ref, w.w_k, counter);
    out.v = matmul(h_ref, w.w_v, counter);
    return out;
}

namespace detail {

void check_forward_shapes(const Matrix& h_src, const Matrix& h_ref, const AttnConfig& cfg) {
    cfg.validate();
    if (h_src.rows() != cfg.l_src || h_src.cols() != cfg.d) {
        throw DimensionError("forward: H_src " + h_src.shape_str() + " does not match config " +
                             std::to_string(cfg.l_src) + "x" + std::to_string(cfg.d));
    }
    if (h_ref.rows() != cfg.l_ref || h_ref.cols() != cfg.d) {
        throw DimensionError("forward: H_ref " + h_ref.shape_str() + " does not match config " +
                             std::to_string(cfg.l_ref) + "x" + std::to_string(cfg.d));
    }
}

AttnCore attention_core(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                        const AttnConfig& cfg, MacCounter* counter, bool keep_maps) {
    check_forward_shapes(h_src, h_ref, cfg);

    AttnCore core;
    QKV qkv = project_qkv(h_src, h_ref, w, counter);
    core.q = std::move(qkv.q);
    core.k = std::move(qkv.k);
    core.v = std::move(qkv.v);

    const std::size_t dh = cfg.head_dim();
    const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
    core.raw = Matrix(cfg.l_src, cfg.d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Matrix qh = col_block(core.q, h * dh, dh);
        const Matrix kh = col_block(core.k, h * dh, dh);
        const Matrix vh = col_block(core.v, h * dh, dh);

        Matrix scores = matmul_bt(qh, kh, counter);
        charge_interaction(counter, cfg.l_src, dh, cfg.l_ref);
        scores = scale(scores, scale_f);
        Matrix attn = row_softmax(scores);

        Matrix headed = matmul(attn, vh, counter);
        charge_interaction(counter, cfg.l_src, cfg.l_ref, dh);
        set_col_block(core.raw, h * dh, headed);

        if (keep_maps) core.maps.push_back(std::move(attn));
    }
    return core;
}

AttnTrace finish_output(AttnCore&& core, const GateSpec& gate, const Matrix& h_src,
                        const RAWeights& w, const AttnConfig& cfg, MacCounter* counter) {
    AttnTrace trace;
    trace.q = std::move(core.q);
    trace.k = std::move(core.k);
    trace.v = std::move(core.v);
    trace.attn_weights = std::move(core.maps);
    trace.raw_out = std::move(core.raw);

    Matrix x = trace.raw_out;
    if (cfg.placement == GatePlacement::BeforeToOut) x = gate.apply(x);
    trace.projected_out = matmul(x, w.to_out, counter);

    Matrix y = trace.projected_out;
    if (cfg.placement == GatePlacement::BeforeZeroLinear) y = gate.apply(y);
    Matrix z = matmul(y, w.zero_linear, counter);
    trace.final_out = add(z, h_src);
    return trace;
}

Matrix GateSpec::apply(const Matrix& x) const {
    switch (kind) {
        case Kind::None: return x;
        case Kind::Scalar: return scale(x, scalar);
        case Kind::PerToken: return row_scale(x, vector);
    }
    return x;
}

}  // namespace detail

namespace {

AttnTrace run_ungated_like(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                           const AttnConfig& cfg, MacCounter* counter, bool keep_maps,
                           const detail::GateSpec& gate) {
    MacCounter local;
    detail::AttnCore core = detail::attention_core(h_src, h_ref, w, cfg, &local, keep_maps);
    AttnTrace trace = detail::finish_output(std::move(core), gate, h_src, w, cfg, &local);
    trace.mac_count = local.macs;
    if (counter) counter->add(local.macs);
    return trace;
}

}  // namespace

AttnTrace ra_forward(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                     const AttnConfig& cfg, MacCounter* counter, bool keep_attention_maps) {
    if (cfg.gating != GatingMode::Vanilla) {
        throw std::invalid_argument("ra_forward: config gating mode must be vanilla");
    }
    return run_ungated_like(h_src, h_ref, w, cfg, counter, keep_attention_maps,
                            detail::GateSpec{});
}

AttnTrace global_gate_forward(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                              const AttnConfig& cfg, MacCounter* counter,
                              bool keep_attention_maps) {
    if (cfg.gating != GatingMode::Global) {
        throw std::invalid_argument("global_gate_forward: config gating mode must be global");
    }
    detail::GateSpec gate;
    gate.kind = detail::GateSpec::Kind::Scalar;
    gate.scalar = sigmoid(w.global_gate_logit);
    return run_ungated_like(h_src, h_ref, w, cfg, counter, keep_attention_maps, gate);
}

std::pair<AttnTrace, GateMap> explicit_gate_forward(const Matrix& h_src, const Matrix& h_ref,
                                                    const RAWeights& w, const AttnConfig& cfg,
                                                    MacCounter* counter,
                                                    bool keep_attention_maps) {
    if (cfg.gating != GatingMode::Explicit) {
        throw std::invalid_argument("explicit_gate_forward: config gating mode must be explicit");
    }
    detail::check_forward_shapes(h_src, h_ref, cfg);

    MacCounter local;

    // Row-normalize both inputs; zero-norm rows stay zero so their
    // similarities are 0 everywhere.
    auto normalized_rows = [](const Matrix& x) {
        Matrix out(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < x.cols(); ++j) sq += x(i, j) * x(i, j);
            if (sq > 0.0) {
                const double inv = 1.0 / std::sqrt(sq);
                for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * inv;
            }
        }
        return out;
    };
    const Matrix u = normalized_rows(h_src);
    const Matrix r = normalized_rows(h_ref);
    Matrix cosine = matmul_bt(u, r, &local);
    detail::charge_interaction(&local, cfg.l_src, cfg.d, cfg.l_ref);

    GateMap gates;
    gates.g = Matrix(cfg.l_src, 1);
    for (std::size_t i = 0; i < cfg.l_src; ++i) {
        double best = cosine(i, 0);
        for (std::size_t j = 1; j < cfg.l_ref; ++j) best = std::max(best, cosine(i, j));
        double g = w.explicit_weight * best;
        gates.g(i, 0) = std::min(1.0, std::max(0.0, g));
    }

    detail::GateSpec gate;
    gate.kind = detail::GateSpec::Kind::PerToken;
    gate.vector = gates.g;

    detail::AttnCore core =
        detail::attention_core(h_src, h_ref, w, cfg, &local, keep_attention_maps);
    AttnTrace trace = detail::finish_output(std::move(core), gate, h_src, w, cfg, &local);
    trace.mac_count = local.macs;
    if (counter) counter->add(local.macs);
    return {std::move(trace), std::move(gates)};
}

}  // namespace refattn
