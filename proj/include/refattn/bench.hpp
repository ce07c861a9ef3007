#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refattn/attention.hpp"

namespace refattn {

// Default ladder: L in {256, 1024, 4096} with l_src == l_ref, d = 256,
// M = 16, heads = 4 -- large enough to rank gating overheads, small enough
// for seconds-scale runs.
std::vector<AttnConfig> default_bench_ladder();

struct BenchSpec {
    std::vector<AttnConfig> configs = default_bench_ladder();
    std::vector<GatingMode> modes = {GatingMode::Vanilla, GatingMode::Global,
                                     GatingMode::Explicit, GatingMode::Aicg};
    int repetitions = 5;   // >= 5
    int warmup = 1;        // >= 1
    std::uint64_t seed = 42;
    // Skip guard: a config is skipped when one per-head attention map,
    // l_src * l_ref * 8 bytes, would exceed this cap.
    std::uint64_t attn_map_bytes_cap = 4ull << 30;

    void validate() const;
};

struct BenchResult {
    AttnConfig config;
    GatingMode mode = GatingMode::Vanilla;
    double median_ns = 0.0;
    double mad_ns = 0.0;  // median absolute deviation
    unsigned long long macs = 0;
    double macs_per_sec = 0.0;
    bool skipped = false;
    std::string skip_reason;
};

// Times every (config, mode) pair sequentially on one thread. Inputs are
// generated once per config from the seed. Before any timing, each mode is
// run once with zero_linear zeroed and must reproduce H_src exactly (the
// residual identity); a config failing that sanity check is reported as
// skipped, never timed.
std::vector<BenchResult> run_bench(const BenchSpec& spec);

// True when, among results at l_src >= min_l, every AICG median overhead
// over Vanilla is below the Explicit one for the same config. The
// violating row index is written to *violator when provided.
bool overhead_ordering_holds(const std::vector<BenchResult>& results, std::size_t min_l = 1024,
                             std::size_t* violator = nullptr);

}  // namespace refattn
