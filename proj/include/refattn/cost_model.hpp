#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "refattn/attention.hpp"
#include "refattn/matrix.hpp"

namespace refattn::cost {

// Two readings of the gating cost formulas. PaperLiteral keeps the M*d
// charge for the summary projection exactly as the reference table prints
// it; Instrumented replaces it with the M*d^2 a d x d projection of M
// tokens actually performs, which is what the live counter measures. The
// two differ only in that one term.
enum class Convention { PaperLiteral, Instrumented };

const char* to_string(Convention c);

struct CostInputs {
    std::uint64_t l_src = 4096;
    std::uint64_t l_ref = 4096;
    std::uint64_t d = 1024;
    std::uint64_t m = 16;  // 0 is accepted as the degenerate gate-free point
    Convention convention = Convention::PaperLiteral;
    void validate() const;
};

// 128-bit MAC tally with an overflow flag; arithmetic saturates once the
// flag is set so a report can never print a silently wrapped number.
struct MacCount {
    unsigned __int128 value = 0;
    bool overflow = false;

    bool fits_u64() const;
    std::uint64_t as_u64() const;  // valid only when fits_u64()
    double as_double() const;
};

std::string to_string(const MacCount& c);

MacCount mac_of(std::uint64_t v);
MacCount mac_add(MacCount a, MacCount b);
MacCount mac_sub(MacCount a, MacCount b);  // requires a >= b
MacCount mac_mul(MacCount a, MacCount b);

// Baseline reference attention:  (3 l_src + 2 l_ref) d^2 + 4 l_src l_ref d
MacCount cost_base(const CostInputs& in);

// Explicit gating total: base + 2 l_src l_ref d  (the full similarity map)
MacCount cost_explicit(const CostInputs& in);

// Implicit gating total: base + [M d | M d^2] + (2 l_ref + 2 l_src) M d,
// summary-projection term per in.convention.
MacCount cost_implicit(const CostInputs& in);

// Full-formula ratio cost_implicit / cost_explicit; requires l_src ==
// l_ref. Converges to 2/3 from above as L grows with d and M fixed.
double dominant_ratio(const CostInputs& in);

// The printed significand convention of the overhead table: added costs
// are displayed with a 3-significant-digit significand rounded up, and the
// relative overhead percentages are computed from those displayed values.
// display_3sig(34359738368) == 3.44e10; display_3sig(268451840) == 2.69e8.
double display_3sig(const MacCount& c);
std::string sci_3sig(const MacCount& c);

// Percentage with two decimals, half-up.
double percent_2dp(double added_display, double base);

struct CostReport {
    CostInputs inputs;
    MacCount c_base;
    MacCount c_m1, added_m1;
    MacCount c_m2, added_m2;            // implicit totals under inputs.convention
    MacCount c_m2_other, added_m2_other;  // the other convention, side by side
    // Base used for the percentages: the stated base when one was passed,
    // the closed-form base otherwise.
    double percent_base = 0.0;
    bool stated_base_used = false;
    double overhead_m1_pct = 0.0;
    double overhead_m2_pct = 0.0;
    double dominant_ratio = 0.0;    // only meaningful when l_src == l_ref
    double efficiency_factor = 0.0; // exact added_m1 / added_m2

    // Instrumented counter totals, populated by reconcile().
    bool reconciled = false;
    unsigned long long measured_vanilla = 0;
    unsigned long long measured_global = 0;
    unsigned long long measured_explicit = 0;
    unsigned long long measured_aicg = 0;
};

// Closed-form report. stated_base, when given, replaces the formula base
// in the percentage computation (the added costs themselves are always
// formula-exact).
CostReport make_report(const CostInputs& in, std::optional<double> stated_base = std::nullopt);

struct ReconcileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Runs instrumented forwards in every gating mode on seeded inputs and
// asserts the measured totals equal the Instrumented-convention closed
// forms with exact integer equality. Throws ReconcileError naming the
// differing mode and both values otherwise.
CostReport reconcile(const CostInputs& in, const AttnConfig& cfg, const RAWeights& w,
                     const Matrix& h_src, const Matrix& h_ref,
                     std::optional<double> stated_base = std::nullopt);

// Convenience overload generating inputs and weights from a seed.
CostReport reconcile(const CostInputs& in, const AttnConfig& cfg, std::uint64_t seed,
                     std::optional<double> stated_base = std::nullopt);

// Aligned-text table with Module / Total / Added Cost / Relative Overhead
// columns, plus the base-discrepancy note when a stated base was used.
std::string format_table(const CostReport& r);

}  // namespace refattn::cost
