#include "refattn/cost_model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "refattn/aicg.hpp"

namespace refattn::cost {

const char* to_string(Convention c) {
    return c == Convention::PaperLiteral ? "paper-literal" : "instrumented";
}

void CostInputs::validate() const {
    // m == 0 is allowed as the degenerate gate-free point; the added
    // implicit terms all carry a factor of m and vanish.
    if (l_src < 1 || l_ref < 1 || d < 1) {
        throw DimensionError("CostInputs: l_src, l_ref and d must be >= 1");
    }
}

bool MacCount::fits_u64() const {
    return !overflow && value <= static_cast<unsigned __int128>(UINT64_MAX);
}

std::uint64_t MacCount::as_u64() const { return static_cast<std::uint64_t>(value); }

double MacCount::as_double() const { return static_cast<double>(value); }

std::string to_string(const MacCount& c) {
    if (c.overflow) return "overflow";
    unsigned __int128 v = c.value;
    if (v == 0) return "0";
    std::string s;
    while (v > 0) {
        s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(v % 10)));
        v /= 10;
    }
    return s;
}

MacCount mac_of(std::uint64_t v) { return MacCount{static_cast<unsigned __int128>(v), false}; }

MacCount mac_add(MacCount a, MacCount b) {
    MacCount out;
    out.overflow = a.overflow || b.overflow;
    out.value = a.value + b.value;
    if (out.value < a.value) out.overflow = true;
    return out;
}

MacCount mac_sub(MacCount a, MacCount b) {
    MacCount out;
    out.overflow = a.overflow || b.overflow || b.value > a.value;
    out.value = out.overflow ? 0 : a.value - b.value;
    return out;
}

MacCount mac_mul(MacCount a, MacCount b) {
    MacCount out;
    out.overflow = a.overflow || b.overflow;
    if (a.value != 0 && b.value != 0) {
        out.value = a.value * b.value;
        if (out.value / a.value != b.value) out.overflow = true;
    }
    return out;
}

MacCount cost_base(const CostInputs& in) {
    in.validate();
    const MacCount d = mac_of(in.d);
    const MacCount proj = mac_mul(mac_add(mac_mul(mac_of(3), mac_of(in.l_src)),
                                          mac_mul(mac_of(2), mac_of(in.l_ref))),
                                  mac_mul(d, d));
    const MacCount attn =
        mac_mul(mac_mul(mac_mul(mac_of(4), mac_of(in.l_src)), mac_of(in.l_ref)), d);
    return mac_add(proj, attn);
}

MacCount cost_explicit(const CostInputs& in) {
    in.validate();
    const MacCount sim =
        mac_mul(mac_mul(mac_mul(mac_of(2), mac_of(in.l_src)), mac_of(in.l_ref)), mac_of(in.d));
    return mac_add(cost_base(in), sim);
}

MacCount cost_implicit(const CostInputs& in) {
    in.validate();
    const MacCount d = mac_of(in.d);
    const MacCount m = mac_of(in.m);
    MacCount proj = mac_mul(m, d);  // the printed M*d charge
    if (in.convention == Convention::Instrumented) proj = mac_mul(proj, d);
    const MacCount interact = mac_mul(
        mac_add(mac_mul(mac_of(2), mac_of(in.l_ref)), mac_mul(mac_of(2), mac_of(in.l_src))),
        mac_mul(m, d));
    return mac_add(cost_base(in), mac_add(proj, interact));
}

double dominant_ratio(const CostInputs& in) {
    if (in.l_src != in.l_ref) {
        throw DimensionError("dominant_ratio: requires l_src == l_ref, got " +
                             std::to_string(in.l_src) + " and " + std::to_string(in.l_ref));
    }
    return cost_implicit(in).as_double() / cost_explicit(in).as_double();
}

double display_3sig(const MacCount& c) {
    if (c.overflow || c.value == 0) return c.as_double();
    // Integer-exact: significand of the top three decimal digits, rounded
    // up whenever any lower digit is nonzero.
    unsigned __int128 v = c.value;
    int digits = 0;
    for (unsigned __int128 t = v; t > 0; t /= 10) ++digits;
    if (digits <= 3) return c.as_double();
    unsigned __int128 divisor = 1;
    for (int i = 0; i < digits - 3; ++i) divisor *= 10;
    unsigned __int128 sig = v / divisor;
    if (v % divisor != 0) ++sig;
    int exp10 = digits - 3;
    if (sig == 1000) {
        sig = 100;
        ++exp10;
    }
    return static_cast<double>(sig) * std::pow(10.0, exp10);
}

std::string sci_3sig(const MacCount& c) {
    if (c.overflow) return "overflow";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2e", display_3sig(c));
    return buf;
}

double percent_2dp(double added_display, double base) {
    const double pct = 100.0 * added_display / base;
    return std::floor(pct * 100.0 + 0.5) / 100.0;
}

CostReport make_report(const CostInputs& in, std::optional<double> stated_base) {
    CostReport r;
    r.inputs = in;
    r.c_base = cost_base(in);
    r.c_m1 = cost_explicit(in);
    r.c_m2 = cost_implicit(in);
    r.added_m1 = mac_sub(r.c_m1, r.c_base);
    r.added_m2 = mac_sub(r.c_m2, r.c_base);

    CostInputs other = in;
    other.convention = in.convention == Convention::PaperLiteral ? Convention::Instrumented
                                                                 : Convention::PaperLiteral;
    r.c_m2_other = cost_implicit(other);
    r.added_m2_other = mac_sub(r.c_m2_other, r.c_base);

    r.stated_base_used = stated_base.has_value();
    r.percent_base = stated_base.value_or(r.c_base.as_double());
    r.overhead_m1_pct = percent_2dp(display_3sig(r.added_m1), r.percent_base);
    r.overhead_m2_pct = percent_2dp(display_3sig(r.added_m2), r.percent_base);
    if (in.l_src == in.l_ref) r.dominant_ratio = dominant_ratio(in);
    r.efficiency_factor = r.added_m1.as_double() / r.added_m2.as_double();
    return r;
}

CostReport reconcile(const CostInputs& in, const AttnConfig& cfg, const RAWeights& w,
                     const Matrix& h_src, const Matrix& h_ref,
                     std::optional<double> stated_base) {
    if (in.l_src != cfg.l_src || in.l_ref != cfg.l_ref || in.d != cfg.d ||
        in.m != cfg.summary_tokens) {
        throw DimensionError("reconcile: cost inputs do not match the attention config");
    }
    CostInputs instr = in;
    instr.convention = Convention::Instrumented;
    CostReport r = make_report(in, stated_base);

    auto expect = [](const char* mode, unsigned long long measured, const MacCount& formula) {
        if (formula.overflow || formula.value != measured) {
            throw ReconcileError(std::string("reconcile: ") + mode + " counter " +
                                 std::to_string(measured) + " != closed form " +
                                 to_string(formula));
        }
    };

    AttnConfig c = cfg;

    c.gating = GatingMode::Vanilla;
    r.measured_vanilla = ra_forward(h_src, h_ref, w, c, nullptr, false).mac_count;
    expect("vanilla", r.measured_vanilla, cost_base(instr));

    c.gating = GatingMode::Global;
    r.measured_global = global_gate_forward(h_src, h_ref, w, c, nullptr, false).mac_count;
    expect("global", r.measured_global, cost_base(instr));

    c.gating = GatingMode::Explicit;
    r.measured_explicit =
        explicit_gate_forward(h_src, h_ref, w, c, nullptr, false).first.mac_count;
    expect("explicit", r.measured_explicit, cost_explicit(instr));

    c.gating = GatingMode::Aicg;
    r.measured_aicg = aicg_forward(h_src, h_ref, w, c, nullptr, false).first.mac_count;
    expect("aicg", r.measured_aicg, cost_implicit(instr));

    r.reconciled = true;
    return r;
}

CostReport reconcile(const CostInputs& in, const AttnConfig& cfg, std::uint64_t seed,
                     std::optional<double> stated_base) {
    Rng rng(seed);
    const Matrix h_src = rand_matrix(cfg.l_src, cfg.d, rng, 1.0);
    const Matrix h_ref = rand_matrix(cfg.l_ref, cfg.d, rng, 1.0);
    const RAWeights w = make_weights(cfg, rng, true);
    return reconcile(in, cfg, w, h_src, h_ref, stated_base);
}

std::string format_table(const CostReport& r) {
    char line[160];
    std::ostringstream out;
    std::snprintf(line, sizeof(line), "%-26s %-14s %-14s %s\n", "Module", "Total", "Added Cost",
                  "Relative Overhead");
    out << line;
    char base_buf[32];
    std::snprintf(base_buf, sizeof(base_buf), "%.2e", r.percent_base);
    std::snprintf(line, sizeof(line), "%-26s %-14s %-14s %s\n", "Baseline RA",
                  r.stated_base_used ? base_buf : sci_3sig(r.c_base).c_str(), "--", "--");
    out << line;
    // Totals follow the base the percentages use.
    char total1[32], total2[32];
    if (r.stated_base_used) {
        std::snprintf(total1, sizeof(total1), "%.2e", r.percent_base + r.added_m1.as_double());
        std::snprintf(total2, sizeof(total2), "%.2e", r.percent_base + r.added_m2.as_double());
    } else {
        std::snprintf(total1, sizeof(total1), "%s", sci_3sig(r.c_m1).c_str());
        std::snprintf(total2, sizeof(total2), "%s", sci_3sig(r.c_m2).c_str());
    }
    char pct1[32], pct2[32];
    std::snprintf(pct1, sizeof(pct1), "+%.2f%%", r.overhead_m1_pct);
    std::snprintf(pct2, sizeof(pct2), "+%.2f%%", r.overhead_m2_pct);
    std::snprintf(line, sizeof(line), "%-26s %-14s %-14s %s\n", "Explicit Gating (m1)", total1,
                  sci_3sig(r.added_m1).c_str(), pct1);
    out << line;
    std::snprintf(line, sizeof(line), "%-26s %-14s %-14s %s\n", "Implicit Gating (m2)", total2,
                  sci_3sig(r.added_m2).c_str(), pct2);
    out << line;
    if (r.stated_base_used) {
        std::snprintf(line, sizeof(line),
                      "note: stated base %.4e differs from the formula base %.4e; "
                      "percentages use the stated base.\n",
                      r.percent_base, r.c_base.as_double());
        out << line;
    }
    return out.str();
}

}  // namespace refattn::cost
