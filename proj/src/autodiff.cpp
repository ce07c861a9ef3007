#include "refattn/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace refattn {

namespace {

double sq_loss(const Matrix& out, const Matrix* target) {
    double loss = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double r = out.data()[i] - (target ? target->data()[i] : 0.0);
        loss += r * r;
    }
    return loss;
}

Matrix loss_grad(const Matrix& out, const Matrix* target) {
    Matrix g(out.rows(), out.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        g.data()[i] = 2.0 * (out.data()[i] - (target ? target->data()[i] : 0.0));
    }
    return g;
}

// dx = y (.) (dy - rowdot(dy, y)), the Jacobian action of a row softmax.
Matrix softmax_backward(const Matrix& y, const Matrix& dy) {
    Matrix dx(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += dy(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (dy(i, j) - dot);
    }
    return dx;
}

void accumulate(Matrix& dst, const Matrix& inc) {
    if (dst.empty()) {
        dst = inc;
        return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += inc.data()[i];
}

void require_mode(const AttnConfig& cfg) {
    if (cfg.gating == GatingMode::Explicit) {
        throw UsageError("autodiff: explicit gating is not differentiable (max reduction)");
    }
}

}  // namespace

DiffTrace record_forward(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                         const AttnConfig& cfg, const Matrix* target) {
    cfg.validate();
    require_mode(cfg);
    if (target && (target->rows() != h_src.rows() || target->cols() != h_src.cols())) {
        throw DimensionError("record_forward: target " + target->shape_str() +
                             " does not match output " + h_src.shape_str());
    }

    DiffTrace t;
    t.cfg = cfg;
    t.h_src = h_src;
    t.h_ref = h_ref;
    t.weights = w;
    if (target) t.target = *target;

    t.q = matmul(h_src, w.w_q);
    t.k = matmul(h_ref, w.w_k);
    t.v = matmul(h_ref, w.w_v);

    const std::size_t dh = cfg.head_dim();
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    t.raw = Matrix(cfg.l_src, cfg.d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Matrix qh = col_block(t.q, h * dh, dh);
        const Matrix kh = col_block(t.k, h * dh, dh);
        const Matrix vh = col_block(t.v, h * dh, dh);
        Matrix attn = row_softmax(scale(matmul_bt(qh, kh), sc));
        set_col_block(t.raw, h * dh, matmul(attn, vh));
        t.attn.push_back(std::move(attn));
    }

    if (cfg.gating == GatingMode::Aicg) {
        t.s = matmul(w.summary_tokens, w.w_k);
        t.k_sum = Matrix(cfg.summary_tokens, cfg.d);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const Matrix sh = col_block(t.s, h * dh, dh);
            const Matrix kh = col_block(t.k, h * dh, dh);
            Matrix b = row_softmax(scale(matmul_bt(sh, kh), sc));
            set_col_block(t.k_sum, h * dh, matmul(b, kh));
            t.summary_weights.push_back(std::move(b));
        }

        const double denom =
            static_cast<double>(cfg.heads) * static_cast<double>(cfg.summary_tokens);
        t.gate_pre = Matrix(cfg.l_src, 1);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const Matrix qh = col_block(t.q, h * dh, dh);
            const Matrix ksh = col_block(t.k_sum, h * dh, dh);
            Matrix lmap = scale(matmul_bt(qh, ksh), sc);
            Matrix smap = row_softmax(lmap);
            const Matrix& pooled = cfg.aggregation == AggregationMode::Logits ? lmap : smap;
            for (std::size_t i = 0; i < cfg.l_src; ++i) {
                for (std::size_t j = 0; j < cfg.summary_tokens; ++j) {
                    t.gate_pre(i, 0) += pooled(i, j) / denom;
                }
            }
            t.gate_logits.push_back(std::move(lmap));
            t.gate_smaps.push_back(std::move(smap));
        }
        t.gate = sigmoid(t.gate_pre);
    } else if (cfg.gating == GatingMode::Global) {
        t.global_gate = sigmoid(w.global_gate_logit);
    }

    auto apply_gate = [&](const Matrix& x) {
        if (cfg.gating == GatingMode::Aicg) return row_scale(x, t.gate);
        if (cfg.gating == GatingMode::Global) return scale(x, t.global_gate);
        return x;
    };

    if (cfg.placement == GatePlacement::BeforeToOut) {
        t.gated_raw = apply_gate(t.raw);
        t.projected = matmul(t.gated_raw, w.to_out);
        t.final_out = add(matmul(t.projected, w.zero_linear), h_src);
    } else {
        t.projected = matmul(t.raw, w.to_out);
        t.gated_proj = apply_gate(t.projected);
        t.final_out = add(matmul(t.gated_proj, w.zero_linear), h_src);
    }
    t.loss = sq_loss(t.final_out, target);
    t.cached = true;
    return t;
}

double forward_loss(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                    const AttnConfig& cfg, const Matrix* target) {
    return record_forward(h_src, h_ref, w, cfg, target).loss;
}

Gradients backward_scalar_loss(const DiffTrace& t) {
    if (!t.cached) {
        throw UsageError("backward_scalar_loss: trace was recorded without caching");
    }
    const AttnConfig& cfg = t.cfg;
    const RAWeights& w = t.weights;
    const std::size_t dh = cfg.head_dim();
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    Gradients g;
    g.w_q = Matrix(cfg.d, cfg.d);
    g.w_k = Matrix(cfg.d, cfg.d);
    g.w_v = Matrix(cfg.d, cfg.d);
    g.to_out = Matrix(cfg.d, cfg.d);
    g.zero_linear = Matrix(cfg.d, cfg.d);
    g.summary_tokens = Matrix(cfg.summary_tokens, cfg.d);

    const Matrix dfinal = loss_grad(t.final_out, t.target ? &*t.target : nullptr);

    // Down through zero_linear / gate / to_out back to the raw attention
    // output, gathering the gate gradient along the way.
    Matrix draw;
    Matrix dgate;  // l_src x 1 (Aicg)
    double dscalar = 0.0;

    auto gate_backward = [&](const Matrix& dgated, const Matrix& pre_gate) {
        // returns d(pre_gate); fills dgate / dscalar
        if (cfg.gating == GatingMode::Aicg) {
            dgate = Matrix(cfg.l_src, 1);
            Matrix dpre(dgated.rows(), dgated.cols());
            for (std::size_t i = 0; i < dgated.rows(); ++i) {
                double acc = 0.0;
                const double gi = t.gate(i, 0);
                for (std::size_t j = 0; j < dgated.cols(); ++j) {
                    acc += dgated(i, j) * pre_gate(i, j);
                    dpre(i, j) = dgated(i, j) * gi;
                }
                dgate(i, 0) = acc;
            }
            return dpre;
        }
        if (cfg.gating == GatingMode::Global) {
            for (std::size_t i = 0; i < dgated.size(); ++i) {
                dscalar += dgated.data()[i] * pre_gate.data()[i];
            }
            return scale(dgated, t.global_gate);
        }
        return dgated;
    };

    if (cfg.placement == GatePlacement::BeforeToOut) {
        // final = (gated_raw . to_out) . zero_linear + h_src
        accumulate(g.zero_linear, matmul(transpose(t.projected), dfinal));
        const Matrix dprojected = matmul_bt(dfinal, w.zero_linear);
        accumulate(g.to_out, matmul(transpose(t.gated_raw), dprojected));
        const Matrix dgated_raw = matmul_bt(dprojected, w.to_out);
        draw = gate_backward(dgated_raw, t.raw);
    } else {
        // final = (gate (.) (raw . to_out)) . zero_linear + h_src
        accumulate(g.zero_linear, matmul(transpose(t.gated_proj), dfinal));
        const Matrix dgated_proj = matmul_bt(dfinal, w.zero_linear);
        const Matrix dprojected = gate_backward(dgated_proj, t.projected);
        accumulate(g.to_out, matmul(transpose(t.raw), dprojected));
        draw = matmul_bt(dprojected, w.to_out);
    }

    Matrix dq(cfg.l_src, cfg.d);
    Matrix dk(cfg.l_ref, cfg.d);
    Matrix dv(cfg.l_ref, cfg.d);

    // Gate path (only Aicg reaches the summary tokens).
    if (cfg.gating == GatingMode::Aicg) {
        const double denom =
            static_cast<double>(cfg.heads) * static_cast<double>(cfg.summary_tokens);
        Matrix dpre(cfg.l_src, 1);
        for (std::size_t i = 0; i < cfg.l_src; ++i) {
            const double gi = t.gate(i, 0);
            dpre(i, 0) = dgate(i, 0) * gi * (1.0 - gi);
        }

        Matrix ds_full(cfg.summary_tokens, cfg.d);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const Matrix qh = col_block(t.q, h * dh, dh);
            const Matrix kh = col_block(t.k, h * dh, dh);
            const Matrix sh = col_block(t.s, h * dh, dh);
            const Matrix ksh = col_block(t.k_sum, h * dh, dh);

            Matrix dlmap(cfg.l_src, cfg.summary_tokens);
            if (cfg.aggregation == AggregationMode::Logits) {
                for (std::size_t i = 0; i < cfg.l_src; ++i) {
                    for (std::size_t j = 0; j < cfg.summary_tokens; ++j) {
                        dlmap(i, j) = dpre(i, 0) / denom;
                    }
                }
            } else {
                Matrix dsmap(cfg.l_src, cfg.summary_tokens);
                for (std::size_t i = 0; i < cfg.l_src; ++i) {
                    for (std::size_t j = 0; j < cfg.summary_tokens; ++j) {
                        dsmap(i, j) = dpre(i, 0) / denom;
                    }
                }
                dlmap = softmax_backward(t.gate_smaps[h], dsmap);
            }

            // lmap = sc * qh ksh^T
            Matrix dqh = scale(matmul(dlmap, ksh), sc);
            Matrix dksh = scale(matmul(transpose(dlmap), qh), sc);

            // k_sum head block = b . kh
            const Matrix& b = t.summary_weights[h];
            Matrix db = matmul_bt(dksh, kh);
            Matrix dkh = matmul(transpose(b), dksh);

            // b = softmax(sc * sh kh^T)
            Matrix dc = softmax_backward(b, db);
            Matrix dsh = scale(matmul(dc, kh), sc);
            accumulate(dkh, scale(matmul(transpose(dc), sh), sc));

            // scatter into full-width gradients
            Matrix dq_h(cfg.l_src, cfg.d);
            set_col_block(dq_h, h * dh, dqh);
            accumulate(dq, dq_h);
            Matrix dk_h(cfg.l_ref, cfg.d);
            set_col_block(dk_h, h * dh, dkh);
            accumulate(dk, dk_h);
            set_col_block(ds_full, h * dh, dsh);
        }

        // s = summary_tokens . w_k
        accumulate(g.summary_tokens, matmul_bt(ds_full, w.w_k));
        accumulate(g.w_k, matmul(transpose(w.summary_tokens), ds_full));
    } else if (cfg.gating == GatingMode::Global) {
        g.global_gate_logit = dscalar * t.global_gate * (1.0 - t.global_gate);
    }

    // Main attention path.
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Matrix qh = col_block(t.q, h * dh, dh);
        const Matrix kh = col_block(t.k, h * dh, dh);
        const Matrix vh = col_block(t.v, h * dh, dh);
        const Matrix draw_h = col_block(draw, h * dh, dh);
        const Matrix& attn = t.attn[h];

        Matrix dattn = matmul_bt(draw_h, vh);
        Matrix dvh = matmul(transpose(attn), draw_h);
        Matrix de = softmax_backward(attn, dattn);
        Matrix dqh = scale(matmul(de, kh), sc);
        Matrix dkh = scale(matmul(transpose(de), qh), sc);

        Matrix dq_h(cfg.l_src, cfg.d);
        set_col_block(dq_h, h * dh, dqh);
        accumulate(dq, dq_h);
        Matrix dk_h(cfg.l_ref, cfg.d);
        set_col_block(dk_h, h * dh, dkh);
        accumulate(dk, dk_h);
        Matrix dv_h(cfg.l_ref, cfg.d);
        set_col_block(dv_h, h * dh, dvh);
        accumulate(dv, dv_h);
    }

    accumulate(g.w_q, matmul(transpose(t.h_src), dq));
    accumulate(g.w_k, matmul(transpose(t.h_ref), dk));
    accumulate(g.w_v, matmul(transpose(t.h_ref), dv));
    return g;
}

Matrix finite_difference(const std::function<double(const Matrix&)>& loss_fn,
                         const Matrix& param, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference: step must be positive");
    Matrix grad(param.rows(), param.cols());
    Matrix probe = param;
    for (std::size_t i = 0; i < param.rows(); ++i) {
        for (std::size_t j = 0; j < param.cols(); ++j) {
            const double saved = probe(i, j);
            probe(i, j) = saved + h;
            const double up = loss_fn(probe);
            probe(i, j) = saved - h;
            const double down = loss_fn(probe);
            probe(i, j) = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericalError("finite_difference: non-finite loss at entry (" +
                                     std::to_string(i) + ", " + std::to_string(j) + ")");
            }
            grad(i, j) = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

void recompute_errors(GradReport& r) {
    r.max_rel_err = 0.0;
    r.max_abs_err = 0.0;
    for (std::size_t i = 0; i < r.analytic.size(); ++i) {
        const double a = r.analytic.data()[i];
        const double f = r.fd.data()[i];
        const double abs_err = std::fabs(a - f);
        const double denom = std::max({std::fabs(a), std::fabs(f), 1e-8});
        r.max_abs_err = std::max(r.max_abs_err, abs_err);
        r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
    }
}

double GradCheckResult::worst_rel_err() const {
    double worst = 0.0;
    for (const auto& r : reports) worst = std::max(worst, r.max_rel_err);
    return worst;
}

bool GradCheckResult::passed(double threshold) const { return worst_rel_err() < threshold; }

GradCheckResult gradient_check(const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
                               const AttnConfig& cfg, double fd_step, const Matrix* target) {
    DiffTrace trace = record_forward(h_src, h_ref, w, cfg, target);
    Gradients analytic = backward_scalar_loss(trace);

    GradCheckResult result;
    result.summary_token_grad_norm = fro_norm(analytic.summary_tokens);

    auto check_matrix = [&](const std::string& name, const Matrix& value,
                            const Matrix& agrad, Matrix RAWeights::* field) {
        GradReport rep;
        rep.param = name;
        rep.analytic = agrad;
        rep.fd_step = fd_step;
        rep.fd = finite_difference(
            [&](const Matrix& p) {
                RAWeights probe = w;
                probe.*field = p;
                return forward_loss(h_src, h_ref, probe, cfg, target);
            },
            value, fd_step);
        recompute_errors(rep);
        result.reports.push_back(std::move(rep));
    };

    check_matrix("W_Q", w.w_q, analytic.w_q, &RAWeights::w_q);
    check_matrix("W_K", w.w_k, analytic.w_k, &RAWeights::w_k);
    check_matrix("W_V", w.w_v, analytic.w_v, &RAWeights::w_v);
    check_matrix("to_out", w.to_out, analytic.to_out, &RAWeights::to_out);
    check_matrix("zero_linear", w.zero_linear, analytic.zero_linear, &RAWeights::zero_linear);
    check_matrix("T_S", w.summary_tokens, analytic.summary_tokens, &RAWeights::summary_tokens);

    {
        GradReport rep;
        rep.param = "global_gate_logit";
        rep.analytic = Matrix(1, 1, {analytic.global_gate_logit});
        rep.fd_step = fd_step;
        rep.fd = finite_difference(
            [&](const Matrix& p) {
                RAWeights probe = w;
                probe.global_gate_logit = p(0, 0);
                return forward_loss(h_src, h_ref, probe, cfg, target);
            },
            Matrix(1, 1, {w.global_gate_logit}), fd_step);
        recompute_errors(rep);
        result.reports.push_back(std::move(rep));
    }
    return result;
}

}  // namespace refattn
