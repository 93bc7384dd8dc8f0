#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bias.hpp"
#include "distribution.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "parallel.hpp"
#include "solver.hpp"

namespace biased_erm {

enum class FailingExtreme { AllNegative, AllPositive, Both };

inline const char* failing_name(FailingExtreme f) noexcept {
    switch (f) {
        case FailingExtreme::AllNegative: return "all_negative";
        case FailingExtreme::AllPositive: return "all_positive";
        case FailingExtreme::Both: return "both";
    }
    return "?";
}

/// The two linear forms deciding whether equal-opportunity-constrained ERM
/// returns the Bayes-optimal pair. `cond_neg` is the error advantage of the
/// optimum over the all-negative pair divided by p; `cond_pos` the advantage
/// over the all-positive pair divided by 1 - p.
struct ConditionReport {
    double cond_neg = 0.0;
    double cond_pos = 0.0;
    bool recovers = false;
    std::optional<FailingExtreme> failing_extreme;
};

inline ConditionReport check_conditions(const TrueModel& m, const BiasParams& b) noexcept {
    const double r = m.r, eta = m.eta;
    const double bp = b.beta_pos, bn = b.beta_neg, nu = b.nu;
    const double group_a = (1.0 - r) * (1.0 - 2.0 * eta);
#ifdef BIASED_ERM_INJECT_CONDITION_FAULT
    // Deliberately wrong sign, compiled only into the falsifiability build.
    const double flip_term = 1.0 + 2.0 * nu;
#else
    const double flip_term = 1.0 - 2.0 * nu;
#endif
    ConditionReport rep;
    rep.cond_neg = group_a + r * ((1.0 - eta) * bp * flip_term - eta * bn);
    rep.cond_pos = group_a + r * ((1.0 - eta) * bn - flip_term * bp * eta);
    rep.recovers = rep.cond_neg > 0.0 && rep.cond_pos > 0.0;
    if (!rep.recovers) {
        const bool neg_fails = !(rep.cond_neg > 0.0);
        const bool pos_fails = !(rep.cond_pos > 0.0);
        rep.failing_extreme = neg_fails && pos_fails ? FailingExtreme::Both
                              : neg_fails            ? FailingExtreme::AllNegative
                                                     : FailingExtreme::AllPositive;
    }
    return rep;
}

enum class Verdict { Recovers, FailsToH0, FailsToH1, Tie };

inline const char* verdict_name(Verdict v) noexcept {
    switch (v) {
        case Verdict::Recovers: return "recovers";
        case Verdict::FailsToH0: return "fails_to_h0";
        case Verdict::FailsToH1: return "fails_to_h1";
        case Verdict::Tie: return "tie";
    }
    return "?";
}

inline std::optional<Verdict> parse_verdict(std::string_view s) noexcept {
    for (auto v : {Verdict::Recovers, Verdict::FailsToH0, Verdict::FailsToH1, Verdict::Tie})
        if (s == verdict_name(v)) return v;
    return std::nullopt;
}

/// Conditions within this distance of zero are treated as exact zeros.
inline constexpr double kConditionZero = 1e-12;

/// Verdict read off the two conditions alone. When both fail, the extreme
/// with the larger error advantage over the optimum wins. At p = 1 the
/// all-positive pair is the optimum itself, so `cond_pos` is vacuous.
inline Verdict condition_verdict(const ConditionReport& c, double p) noexcept {
    const bool pos_vacuous = !(p < 1.0);
    const double neg = c.cond_neg;
    const double pos = pos_vacuous ? 1.0 : c.cond_pos;
    const bool neg_fails = neg < -kConditionZero;
    const bool pos_fails = pos < -kConditionZero;
    if (neg_fails && pos_fails) return p * neg <= (1.0 - p) * pos ? Verdict::FailsToH0 : Verdict::FailsToH1;
    if (neg_fails) return Verdict::FailsToH0;
    if (pos_fails) return Verdict::FailsToH1;
    if (neg <= kConditionZero || pos <= kConditionZero) return Verdict::Tie;
    return Verdict::Recovers;
}

/// Verdict implied by an exact solve.
inline Verdict solver_verdict(const SolveReport& rep) noexcept {
    if (rep.tie) return Verdict::Tie;
    switch (rep.chosen_class) {
        case CandidateClass::BayesOptimal: return Verdict::Recovers;
        case CandidateClass::AllNegative: return Verdict::FailsToH0;
        case CandidateClass::AllPositive: return Verdict::FailsToH1;
        case CandidateClass::Other: break;
    }
    return Verdict::Tie;
}

// ---------------------------------------------------------------------------
// Parameter sweeps

enum class SweepParam { Eta, BetaPos, BetaNeg, Nu, R };

inline const char* sweep_param_name(SweepParam p) noexcept {
    switch (p) {
        case SweepParam::Eta: return "eta";
        case SweepParam::BetaPos: return "beta_pos";
        case SweepParam::BetaNeg: return "beta_neg";
        case SweepParam::Nu: return "nu";
        case SweepParam::R: return "r";
    }
    return "?";
}

inline SweepParam parse_sweep_param(std::string_view s) {
    if (s == "eta") return SweepParam::Eta;
    if (s == "beta" || s == "beta_pos" || s == "beta-pos") return SweepParam::BetaPos;
    if (s == "beta_neg" || s == "beta-neg") return SweepParam::BetaNeg;
    if (s == "nu") return SweepParam::Nu;
    if (s == "r") return SweepParam::R;
    throw RangeError("axis", "unknown parameter '" + std::string(s) + "' (eta, beta, beta-neg, nu, r)");
}

inline void set_param(SweepParam which, double v, TrueModel& m, BiasParams& b) noexcept {
    switch (which) {
        case SweepParam::Eta: m.eta = v; break;
        case SweepParam::BetaPos: b.beta_pos = v; break;
        case SweepParam::BetaNeg: b.beta_neg = v; break;
        case SweepParam::Nu: b.nu = v; break;
        case SweepParam::R: m.r = v; break;
    }
}

struct SweepAxis {
    SweepParam param = SweepParam::Eta;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t steps = 1;

    /// Grid value i; a single step sits at `lo`.
    [[nodiscard]] double value(std::size_t i) const noexcept {
        if (steps <= 1) return lo;
        if (i + 1 == steps) return hi;
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
    }
};

inline void validate_axis(const SweepAxis& a) {
    const std::string name = sweep_param_name(a.param);
    if (a.steps < 1) throw RangeError(name, "steps must be at least 1");
    if (!(a.lo <= a.hi)) throw RangeError(name, "range is empty");
    const auto inside = [&](double v) {
        switch (a.param) {
            case SweepParam::Eta: return v >= 0.0 && v < 0.5;
            case SweepParam::BetaPos:
            case SweepParam::BetaNeg: return v > 0.0 && v <= 1.0;
            case SweepParam::Nu: return v >= 0.0 && v < 1.0;
            case SweepParam::R: return v > 0.0 && v < 1.0;
        }
        return false;
    };
    if (!inside(a.lo) || !inside(a.hi))
        throw RangeError(name, "range [" + shortest(a.lo) + ", " + shortest(a.hi) + "] leaves the parameter domain");
}

struct SweepCell {
    double x = 0.0;
    double y = 0.0;
    Verdict verdict = Verdict::Recovers;
    double cond_neg = 0.0;
    double cond_pos = 0.0;
    bool solver_agrees = true;
};

struct BoundaryPolyline {
    std::string condition;  ///< "cond_neg" or "cond_pos"
    std::vector<std::array<double, 2>> points;
};

struct RegionSweep {
    TrueModel base_model;
    BiasParams base_bias;
    SweepAxis axis1;
    SweepAxis axis2;
    std::vector<SweepCell> cells;  ///< row-major: index j * axis1.steps + i
    std::vector<BoundaryPolyline> boundary;
    std::size_t solver_mismatches = 0;

    [[nodiscard]] const SweepCell& cell(std::size_t i, std::size_t j) const {
        return cells[j * axis1.steps + i];
    }
};

namespace detail {

inline double condition_value(bool neg, const TrueModel& m, const BiasParams& b) noexcept {
    const auto c = check_conditions(m, b);
    return neg ? c.cond_neg : c.cond_pos;
}

/// Zero-level set of one condition along axis 2, for each axis-1 grid value.
/// Each condition is affine in any single parameter, so two evaluations fix
/// the line. Points are kept only where the other condition is non-negative,
/// i.e. where the zero set actually bounds the recovery region.
inline void trace_boundary(RegionSweep& sweep) {
    if (sweep.axis1.steps < 2) return;
    for (bool neg : {true, false}) {
        if (!neg && !(sweep.base_model.p < 1.0)) continue;
        BoundaryPolyline current{neg ? "cond_neg" : "cond_pos", {}};
        const auto flush = [&] {
            if (current.points.size() >= 2) sweep.boundary.push_back(current);
            current.points.clear();
        };
        for (std::size_t i = 0; i < sweep.axis1.steps; ++i) {
            TrueModel m = sweep.base_model;
            BiasParams b = sweep.base_bias;
            const double x = sweep.axis1.value(i);
            set_param(sweep.axis1.param, x, m, b);
            set_param(sweep.axis2.param, 0.0, m, b);
            const double c0 = condition_value(neg, m, b);
            set_param(sweep.axis2.param, 1.0, m, b);
            const double c1 = condition_value(neg, m, b);
            const double slope = c1 - c0;
            bool keep = false;
            double y = 0.0;
            if (slope != 0.0) {
                y = -c0 / slope;
                if (y >= sweep.axis2.lo && y <= sweep.axis2.hi) {
                    set_param(sweep.axis2.param, y, m, b);
                    keep = condition_value(!neg, m, b) >= -kConditionZero;
                }
            }
            if (keep)
                current.points.push_back({x, y});
            else
                flush();
        }
        flush();
    }
}

}  // namespace detail

/// Classifies every cell of a two-parameter grid from the conditions and
/// cross-checks each verdict against the exact three-candidate solver.
inline RegionSweep recovery_region(const TrueModel& base_model, const BiasParams& base_bias, const SweepAxis& axis1,
                                   const SweepAxis& axis2) {
    validate_axis(axis1);
    validate_axis(axis2);
    if (axis1.param == axis2.param) throw RangeError("axis", "the two axes must differ");
    RegionSweep sweep{base_model, base_bias, axis1, axis2, {}, {}, 0};
    sweep.cells.resize(axis1.steps * axis2.steps);
    parallel_for(sweep.cells.size(), [&](std::size_t idx) {
        const std::size_t i = idx % axis1.steps, j = idx / axis1.steps;
        TrueModel m = base_model;
        BiasParams b = base_bias;
        SweepCell c;
        c.x = axis1.value(i);
        c.y = axis2.value(j);
        set_param(axis1.param, c.x, m, b);
        set_param(axis2.param, c.y, m, b);
        const auto cond = check_conditions(m, b);
        c.cond_neg = cond.cond_neg;
        c.cond_pos = cond.cond_pos;
        c.verdict = condition_verdict(cond, m.p);
        c.solver_agrees = solver_verdict(exact_constrained_erm(m, b)) == c.verdict;
        sweep.cells[idx] = c;
    });
    for (const auto& c : sweep.cells)
        if (!c.solver_agrees) ++sweep.solver_mismatches;
    detail::trace_boundary(sweep);
    return sweep;
}

inline void write_region_csv(std::ostream& os, const RegionSweep& sweep) {
    os << "axis1,axis2,verdict,cond_neg,cond_pos\n";
    for (const auto& c : sweep.cells)
        os << shortest(c.x) << ',' << shortest(c.y) << ',' << verdict_name(c.verdict) << ','
           << shortest(c.cond_neg) << ',' << shortest(c.cond_pos) << '\n';
}

struct RegionCsvCheck {
    std::size_t rows = 0;
    std::size_t mismatches = 0;
    std::optional<std::string> first_mismatch;
};

/// Re-derives the verdict of every row of a region CSV from the base
/// parameters and the two named axes.
inline RegionCsvCheck check_region_csv(std::istream& is, const TrueModel& base_model, const BiasParams& base_bias,
                                       SweepParam axis1, SweepParam axis2) {
    RegionCsvCheck out;
    std::string line;
    if (!std::getline(is, line)) throw InsufficientData("region csv: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "axis1,axis2,verdict,cond_neg,cond_pos")
        throw RangeError("header", "unexpected region csv header '" + line + "'");
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        ++out.rows;
        const std::string where = "row " + std::to_string(out.rows + 1);
        if (cells.size() != 5) throw RangeError(where, "expected 5 columns");
        TrueModel m = base_model;
        BiasParams b = base_bias;
        set_param(axis1, parse_double(cells[0], where), m, b);
        set_param(axis2, parse_double(cells[1], where), m, b);
        const auto stored = parse_verdict(cells[2]);
        if (!stored) throw RangeError(where, "unknown verdict '" + cells[2] + "'");
        const Verdict fresh = condition_verdict(check_conditions(m, b), m.p);
        if (fresh != *stored) {
            ++out.mismatches;
            if (!out.first_mismatch) out.first_mismatch = where + ": stored " + cells[2] + ", recomputed " + verdict_name(fresh);
        }
    }
    return out;
}

/// Self-contained SVG: blue cells recover, red cells do not; the dashed black
/// polyline is the analytic boundary.
inline void write_region_svg(std::ostream& os, const RegionSweep& sweep) {
    constexpr double left = 70, top = 40, width = 480, height = 480, right = 30, bottom = 60;
    const std::size_t nx = sweep.axis1.steps, ny = sweep.axis2.steps;
    const double cw = width / static_cast<double>(nx), ch = height / static_cast<double>(ny);
    const auto fmt = [](double v) {
        std::ostringstream s;
        s.precision(6);
        s << v;
        return s.str();
    };
    const auto map_axis = [](const SweepAxis& a, double v, double extent) {
        if (a.steps <= 1 || a.hi == a.lo) return extent / 2;
        const double pos = (v - a.lo) / (a.hi - a.lo) * static_cast<double>(a.steps - 1) + 0.5;
        return pos / static_cast<double>(a.steps) * extent;
    };
    os << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << fmt(left + width + right) << R"(" height=")"
       << fmt(top + height + bottom) << "\">\n";
    os << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
    os << "<g shape-rendering=\"crispEdges\">\n";
    for (std::size_t j = 0; j < ny; ++j) {
        const double y = top + height - static_cast<double>(j + 1) * ch;
        std::size_t i = 0;
        while (i < nx) {
            const bool blue = sweep.cell(i, j).verdict == Verdict::Recovers;
            std::size_t run = i + 1;
            while (run < nx && (sweep.cell(run, j).verdict == Verdict::Recovers) == blue) ++run;
            os << "<rect x=\"" << fmt(left + static_cast<double>(i) * cw) << "\" y=\"" << fmt(y) << "\" width=\""
               << fmt(static_cast<double>(run - i) * cw) << "\" height=\"" << fmt(ch) << "\" fill=\""
               << (blue ? "#1f77b4" : "#d62728") << "\"/>\n";
            i = run;
        }
    }
    os << "</g>\n";
    for (const auto& line : sweep.boundary) {
        os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"8 5\" points=\"";
        for (const auto& pt : line.points)
            os << fmt(left + map_axis(sweep.axis1, pt[0], width)) << ','
               << fmt(top + height - map_axis(sweep.axis2, pt[1], height)) << ' ';
        os << "\"/>\n";
    }
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width << "\" height=\"" << height
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double f = t / 4.0;
        const double xv = sweep.axis1.lo + f * (sweep.axis1.hi - sweep.axis1.lo);
        const double yv = sweep.axis2.lo + f * (sweep.axis2.hi - sweep.axis2.lo);
        const double px = left + map_axis(sweep.axis1, xv, width);
        const double py = top + height - map_axis(sweep.axis2, yv, height);
        os << "<text x=\"" << fmt(px) << "\" y=\"" << fmt(top + height + 18)
           << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
        os << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py + 4)
           << "\" font-size=\"12\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    }
    os << "<text x=\"" << fmt(left + width / 2) << "\" y=\"" << fmt(top + height + 45)
       << "\" font-size=\"14\" text-anchor=\"middle\">" << sweep_param_name(sweep.axis1.param) << "</text>\n";
    os << "<text transform=\"translate(20," << fmt(top + height / 2)
       << ") rotate(-90)\" font-size=\"14\" text-anchor=\"middle\">" << sweep_param_name(sweep.axis2.param)
       << "</text>\n";
    os << "<text x=\"" << fmt(left + width / 2) << "\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">"
       << "EO-constrained ERM recovery (blue) vs failure (red), r=" << fmt(sweep.base_model.r)
       << " p=" << fmt(sweep.base_model.p) << "</text>\n";
    os << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Strong-recovery certificates

enum class BiasFamily { UnderRepresentation, Labeling, Combined };

inline const char* bias_family_name(BiasFamily f) noexcept {
    switch (f) {
        case BiasFamily::UnderRepresentation: return "under_representation";
        case BiasFamily::Labeling: return "labeling";
        case BiasFamily::Combined: return "combined";
    }
    return "?";
}

struct ParameterTuple {
    TrueModel model;
    BiasParams bias;
};

struct RecoveryCertificate {
    bool passed = true;
    std::size_t trials = 0;
    double corner_min = 0.0;  ///< smallest condition value over the box vertices
    std::optional<ParameterTuple> counterexample;
};

namespace detail {

/// Closed box of one parameter plus which ends the open parameter range excludes.
struct BoxSide {
    double lo, hi;
    bool lo_open, hi_open;
};

}  // namespace detail

/// Randomized plus vertex check that the conditions hold for every r < r0,
/// eta < eta0, p in (0, 1] and every bias parameter the family allows.
///
/// Both conditions are multilinear, so their infimum over the box is attained
/// at a vertex. A vertex at or below zero fails the certificate unless it sits
/// on an excluded face of the box.
inline RecoveryCertificate strong_recovery_certificate(double r0, double eta0, std::size_t trials, std::uint64_t seed,
                                                       BiasFamily family) {
    if (!(r0 > 0.0 && r0 < 1.0)) throw RangeError("r0", "must lie in (0, 1)");
    if (!(eta0 > 0.0 && eta0 <= 0.5)) throw RangeError("eta0", "must lie in (0, 1/2]");
    if (trials < 1) throw RangeError("trials", "must be at least 1");

    RecoveryCertificate cert;
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // (0, hi] and (0, hi) draws: reflect the half-open [0, 1) draw.
    const auto open_lo = [&](double hi) { return hi * (1.0 - unit(gen)); };
    for (std::size_t t = 0; t < trials; ++t) {
        ParameterTuple tup;
        do tup.model.r = open_lo(r0);
        while (!(tup.model.r < r0));
        tup.model.eta = eta0 * unit(gen);
        tup.model.p = open_lo(1.0);
        if (family != BiasFamily::Labeling) tup.bias.beta_pos = open_lo(1.0);
        if (family == BiasFamily::Combined) tup.bias.beta_neg = open_lo(1.0);
        if (family != BiasFamily::UnderRepresentation) tup.bias.nu = unit(gen);
        ++cert.trials;
        if (!check_conditions(tup.model, tup.bias).recovers) {
            cert.passed = false;
            cert.counterexample = tup;
            break;
        }
    }

    using detail::BoxSide;
    const BoxSide r_side{0.0, r0, true, true};
    const BoxSide eta_side{0.0, eta0, false, true};
    const BoxSide bp_side = family == BiasFamily::Labeling ? BoxSide{1.0, 1.0, false, false} : BoxSide{0.0, 1.0, true, false};
    const BoxSide bn_side = family == BiasFamily::Combined ? BoxSide{0.0, 1.0, true, false} : BoxSide{1.0, 1.0, false, false};
    const BoxSide nu_side = family == BiasFamily::UnderRepresentation ? BoxSide{0.0, 0.0, false, false}
                                                                      : BoxSide{0.0, 1.0, false, true};
    const std::array<BoxSide, 5> sides{r_side, eta_side, bp_side, bn_side, nu_side};
    cert.corner_min = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < 32; ++mask) {
        std::array<double, 5> v{};
        bool excluded = false;
        for (std::size_t k = 0; k < 5; ++k) {
            const bool high = (mask >> k) & 1u;
            v[k] = high ? sides[k].hi : sides[k].lo;
            excluded = excluded || (high ? sides[k].hi_open : sides[k].lo_open);
        }
        const TrueModel m{v[0], 0.5, v[1]};
        const BiasParams b{v[2], v[3], v[4]};
        const auto c = check_conditions(m, b);
        const double low = std::min(c.cond_neg, c.cond_pos);
        cert.corner_min = std::min(cert.corner_min, low);
        const bool violates = low < -kConditionZero || (low <= kConditionZero && !excluded);
        if (violates && cert.passed) {
            // Step off excluded faces so the counterexample is a valid tuple.
            std::array<double, 5> in = v;
            for (std::size_t k = 0; k < 5; ++k) {
                const double span = sides[k].hi - sides[k].lo;
                const bool high = (mask >> k) & 1u;
                if (high && sides[k].hi_open) in[k] -= 1e-9 * span;
                if (!high && sides[k].lo_open) in[k] += 1e-9 * span;
            }
            cert.passed = false;
            cert.counterexample = ParameterTuple{{in[0], 0.5, in[1]}, {in[2], in[3], in[4]}};
        }
    }
    return cert;
}

}  // namespace biased_erm
