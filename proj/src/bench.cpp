#include "refattn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "refattn/aicg.hpp"

namespace refattn {

std::vector<AttnConfig> default_bench_ladder() {
    std::vector<AttnConfig> configs;
    for (std::size_t l : {256, 1024, 4096}) {
        AttnConfig cfg;
        cfg.l_src = l;
        cfg.l_ref = l;
        cfg.d = 256;
        cfg.heads = 4;
        cfg.summary_tokens = 16;
        configs.push_back(cfg);
    }
    return configs;
}

void BenchSpec::validate() const {
    if (repetitions < 5) throw std::invalid_argument("BenchSpec: repetitions must be >= 5");
    if (warmup < 1) throw std::invalid_argument("BenchSpec: warmup must be >= 1");
    if (configs.empty()) throw std::invalid_argument("BenchSpec: no configs");
    if (modes.empty()) throw std::invalid_argument("BenchSpec: no modes");
    for (const auto& c : configs) c.validate();
}

namespace {

using Clock = std::chrono::steady_clock;

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mad_of(const std::vector<double>& v, double med) {
    std::vector<double> dev;
    dev.reserve(v.size());
    for (double x : v) dev.push_back(std::fabs(x - med));
    return median_of(std::move(dev));
}

// One forward in the given mode; counter optional, maps never kept.
void run_mode(GatingMode mode, const Matrix& h_src, const Matrix& h_ref, const RAWeights& w,
              AttnConfig cfg, MacCounter* counter, Matrix* final_out = nullptr) {
    cfg.gating = mode;
    switch (mode) {
        case GatingMode::Vanilla: {
            auto t = ra_forward(h_src, h_ref, w, cfg, counter, false);
            if (final_out) *final_out = std::move(t.final_out);
            break;
        }
        case GatingMode::Global: {
            auto t = global_gate_forward(h_src, h_ref, w, cfg, counter, false);
            if (final_out) *final_out = std::move(t.final_out);
            break;
        }
        case GatingMode::Explicit: {
            auto t = explicit_gate_forward(h_src, h_ref, w, cfg, counter, false);
            if (final_out) *final_out = std::move(t.first.final_out);
            break;
        }
        case GatingMode::Aicg: {
            auto t = aicg_forward(h_src, h_ref, w, cfg, counter, false);
            if (final_out) *final_out = std::move(t.first.final_out);
            break;
        }
    }
}

double timed_run_ns(GatingMode mode, const Matrix& h_src, const Matrix& h_ref,
                    const RAWeights& w, const AttnConfig& cfg) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto t0 = Clock::now();
        run_mode(mode, h_src, h_ref, w, cfg, nullptr);
        const auto t1 = Clock::now();
        if (t1 >= t0) {
            return std::chrono::duration<double, std::nano>(t1 - t0).count();
        }
        // non-monotonic reading; retry once
    }
    throw std::runtime_error("bench: clock went backwards twice");
}

}  // namespace

std::vector<BenchResult> run_bench(const BenchSpec& spec) {
    spec.validate();
    std::vector<BenchResult> results;

    for (const AttnConfig& cfg : spec.configs) {
        const unsigned long long map_bytes =
            static_cast<unsigned long long>(cfg.l_src) * cfg.l_ref * sizeof(double);
        std::string skip_reason;
        if (map_bytes > spec.attn_map_bytes_cap) {
            skip_reason = "attention map of " + std::to_string(map_bytes) +
                          " bytes exceeds cap " + std::to_string(spec.attn_map_bytes_cap);
        }

        Rng rng(spec.seed);
        Matrix h_src, h_ref;
        RAWeights weights;
        std::vector<unsigned long long> mode_macs(spec.modes.size(), 0);
        if (skip_reason.empty()) {
            h_src = rand_matrix(cfg.l_src, cfg.d, rng, 1.0);
            h_ref = rand_matrix(cfg.l_ref, cfg.d, rng, 1.0);
            weights = make_weights(cfg, rng, true);

            // Residual-identity sanity check before any timing: with
            // zero_linear zeroed every mode must hand back H_src untouched.
            // The pass is shape-identical to the timed forwards, so it also
            // serves as the first warmup iteration and the counted run.
            RAWeights probe = weights;
            probe.zero_linear = Matrix(cfg.d, cfg.d);
            for (std::size_t mi = 0; mi < spec.modes.size(); ++mi) {
                Matrix out;
                MacCounter counter;
                run_mode(spec.modes[mi], h_src, h_ref, probe, cfg, &counter, &out);
                mode_macs[mi] = counter.macs;
                if (max_abs_diff(out, h_src) != 0.0) {
                    skip_reason = std::string("residual identity failed in mode ") +
                                  to_string(spec.modes[mi]);
                    break;
                }
            }
        }

        for (std::size_t mi = 0; mi < spec.modes.size(); ++mi) {
            const GatingMode mode = spec.modes[mi];
            BenchResult r;
            r.config = cfg;
            r.mode = mode;
            if (!skip_reason.empty()) {
                r.skipped = true;
                r.skip_reason = skip_reason;
                results.push_back(std::move(r));
                continue;
            }

            for (int i = 1; i < spec.warmup; ++i) {
                run_mode(mode, h_src, h_ref, weights, cfg, nullptr);
            }
            std::vector<double> times;
            times.reserve(spec.repetitions);
            for (int i = 0; i < spec.repetitions; ++i) {
                times.push_back(timed_run_ns(mode, h_src, h_ref, weights, cfg));
            }
            r.macs = mode_macs[mi];
            r.median_ns = median_of(times);
            r.mad_ns = mad_of(times, r.median_ns);
            r.macs_per_sec = r.median_ns > 0.0 ? r.macs / (r.median_ns * 1e-9) : 0.0;
            results.push_back(std::move(r));
        }
    }
    return results;
}

bool overhead_ordering_holds(const std::vector<BenchResult>& results, std::size_t min_l,
                             std::size_t* violator) {
    for (std::size_t i = 0; i < results.size(); ++i) {
        const BenchResult& aicg = results[i];
        if (aicg.mode != GatingMode::Aicg || aicg.skipped || aicg.config.l_src < min_l) continue;
        double vanilla = -1.0, expl = -1.0;
        for (const BenchResult& other : results) {
            if (other.skipped || other.config.l_src != aicg.config.l_src ||
                other.config.l_ref != aicg.config.l_ref || other.config.d != aicg.config.d) {
                continue;
            }
            if (other.mode == GatingMode::Vanilla) vanilla = other.median_ns;
            if (other.mode == GatingMode::Explicit) expl = other.median_ns;
        }
        if (vanilla < 0.0 || expl < 0.0) continue;  // ordering needs all three modes
        if (!(aicg.median_ns - vanilla < expl - vanilla)) {
            if (violator) *violator = i;
            return false;
        }
    }
    return true;
}

}  // namespace refattn
