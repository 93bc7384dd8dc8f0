#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "bias.hpp"
#include "distribution.hpp"
#include "errors.hpp"

namespace biased_erm {

enum class Fairness { EqualOpportunity, EqualizedOdds, DemographicParity };

inline const char* fairness_name(Fairness f) noexcept {
    switch (f) {
        case Fairness::EqualOpportunity: return "equal_opportunity";
        case Fairness::EqualizedOdds: return "equalized_odds";
        case Fairness::DemographicParity: return "demographic_parity";
    }
    return "?";
}

/// Analytic checks use an (essentially) exact tolerance.
inline constexpr double kAnalyticTolerance = 1e-12;

/// Default tolerance for constraints checked on a sample of size `n`:
/// 0.01 from 10^5 examples up, growing as n^{-1/2} below that.
inline double default_empirical_tolerance(std::size_t n) noexcept {
    constexpr double reference = 1e5;
    if (n == 0) return 1.0;
    const double nn = static_cast<double>(n);
    return nn >= reference ? 0.01 : 0.01 * std::sqrt(reference / nn);
}

struct ConstraintKind {
    Fairness kind = Fairness::EqualOpportunity;
    double tolerance = kAnalyticTolerance;

    [[nodiscard]] bool satisfied(double gap) const noexcept { return std::abs(gap) <= tolerance; }
};

/// The per-group quantity p2 * eta - p1 * (1 - eta); equal opportunity on the
/// biased data holds exactly when both groups share it.
struct ConstraintLevel {
    double c = 0.0;
};

inline ConstraintLevel constraint_level(const GroupDeviation& d, double eta) noexcept {
    return {d.p2 * eta - d.p1 * (1.0 - eta)};
}

namespace detail {

/// Fraction of the optimal-positive region a deviating hypothesis labels positive.
inline double kept_positive_fraction(const GroupDeviation& d, double p) noexcept {
    return (p - d.p1) / p;
}

/// Fraction of the optimal-negative region it labels positive (empty region -> 0).
inline double added_positive_fraction(const GroupDeviation& d, double p) noexcept {
    return p < 1.0 ? d.p2 / (1.0 - p) : 0.0;
}

/// P(h = 1 | group, biased label = label), computed from the region masses.
inline double rate_given_label(const GroupDeviation& d, Group g, int label, double p,
                               const RegionMasses& masses, const char* what) {
    const double in_pos = masses.at(g, true, label);
    const double in_neg = masses.at(g, false, label);
    const double denom = in_pos + in_neg;
    if (!(denom > 0.0))
        throw DegenerateDenominator(std::string(what) + ": group " + group_name(g) +
                                    " has no mass with that label");
    return (in_pos * kept_positive_fraction(d, p) + in_neg * added_positive_fraction(d, p)) / denom;
}

}  // namespace detail

/// True positive rate on the biased distribution.
inline double biased_tpr(const DeviationParams& params, Group g, const TrueModel& m, const BiasParams& b) {
    return detail::rate_given_label(params.group(g), g, 1, m.p, region_masses(m, b), "biased_tpr");
}

/// False positive rate on the biased distribution.
inline double biased_fpr(const DeviationParams& params, Group g, const TrueModel& m, const BiasParams& b) {
    return detail::rate_given_label(params.group(g), g, 0, m.p, region_masses(m, b), "biased_fpr");
}

/// Fraction of a group's biased feature mass classified positive. Labels do
/// not enter, so the flip rate has no effect; only retention reshapes B.
inline double biased_positive_rate(const DeviationParams& params, Group g, const TrueModel& m,
                                   const BiasParams& b) {
    const auto masses = region_masses(m, b);
    const auto d = params.group(g);
    const double in_pos = masses.at(g, true, 1) + masses.at(g, true, 0);
    const double in_neg = masses.at(g, false, 1) + masses.at(g, false, 0);
    return (in_pos * detail::kept_positive_fraction(d, m.p) +
            in_neg * detail::added_positive_fraction(d, m.p)) /
           (in_pos + in_neg);
}

/// Signed A-minus-B differences behind the equalized-odds gap.
struct OddsGap {
    double tpr = 0.0;
    double fpr = 0.0;
};

inline OddsGap equalized_odds_gap(const DeviationParams& params, const TrueModel& m, const BiasParams& b) {
    return {biased_tpr(params, Group::A, m, b) - biased_tpr(params, Group::B, m, b),
            biased_fpr(params, Group::A, m, b) - biased_fpr(params, Group::B, m, b)};
}

/// Whichever component is larger in magnitude, sign kept (TPR wins ties).
inline double combine_odds_gap(const OddsGap& g) noexcept {
    return std::abs(g.fpr) > std::abs(g.tpr) ? g.fpr : g.tpr;
}

/// Signed A-minus-B rate difference for the chosen criterion.
inline double constraint_gap(Fairness kind, const DeviationParams& params, const TrueModel& m,
                             const BiasParams& b) {
    switch (kind) {
        case Fairness::EqualOpportunity:
            return biased_tpr(params, Group::A, m, b) - biased_tpr(params, Group::B, m, b);
        case Fairness::EqualizedOdds:
            return combine_odds_gap(equalized_odds_gap(params, m, b));
        case Fairness::DemographicParity:
            return biased_positive_rate(params, Group::A, m, b) - biased_positive_rate(params, Group::B, m, b);
    }
    return 0.0;
}

inline bool satisfies(const ConstraintKind& kind, const DeviationParams& params, const TrueModel& m,
                      const BiasParams& b) {
    return kind.satisfied(constraint_gap(kind.kind, params, m, b));
}

// ---------------------------------------------------------------------------
// Empirical rates of threshold rules

/// A group-dependent threshold rule: predict 1 iff x >= t_group.
struct ThresholdPair {
    double t_a = 0.0;
    double t_b = 0.0;

    [[nodiscard]] double threshold(Group g) const noexcept { return g == Group::A ? t_a : t_b; }
    [[nodiscard]] bool predicts(Group g, double x) const noexcept { return x >= threshold(g); }
};

/// Weighted plug-in rates of one group. TPR/FPR are absent when the group has
/// no apparent positives/negatives; the accessors throw in that case.
struct GroupRates {
    std::optional<double> tpr_value;
    std::optional<double> fpr_value;
    double positive_rate = 0.0;

    [[nodiscard]] double tpr() const {
        if (!tpr_value) throw InsufficientData("true positive rate undefined: no positive examples");
        return *tpr_value;
    }
    [[nodiscard]] double fpr() const {
        if (!fpr_value) throw InsufficientData("false positive rate undefined: no negative examples");
        return *fpr_value;
    }
};

struct EmpiricalRates {
    GroupRates a;
    GroupRates b;

    [[nodiscard]] const GroupRates& group(Group g) const noexcept { return g == Group::A ? a : b; }
};

/// Builds rates from weighted cell totals: positives/negatives overall and
/// those classified positive.
inline GroupRates rates_from_totals(double pos, double neg, double pos_hit, double neg_hit) noexcept {
    GroupRates out;
    if (pos > 0.0) out.tpr_value = pos_hit / pos;
    if (neg > 0.0) out.fpr_value = neg_hit / neg;
    out.positive_rate = (pos_hit + neg_hit) / (pos + neg);
    return out;
}

inline EmpiricalRates empirical_rates(const ThresholdPair& h, const Dataset& data) {
    double pos[2]{}, neg[2]{}, pos_hit[2]{}, neg_hit[2]{};
    for (const auto& e : data.examples) {
        const int g = e.group == Group::A ? 0 : 1;
        const bool hit = h.predicts(e.group, e.x);
        if (e.label == 1) {
            pos[g] += e.weight;
            if (hit) pos_hit[g] += e.weight;
        } else {
            neg[g] += e.weight;
            if (hit) neg_hit[g] += e.weight;
        }
    }
    for (int g = 0; g < 2; ++g)
        if (!(pos[g] + neg[g] > 0.0))
            throw InsufficientData(std::string("empirical_rates: group ") + (g == 0 ? 'A' : 'B') +
                                   " is empty");
    return {rates_from_totals(pos[0], neg[0], pos_hit[0], neg_hit[0]),
            rates_from_totals(pos[1], neg[1], pos_hit[1], neg_hit[1])};
}

/// Signed A-minus-B gap between empirical rates for the chosen criterion.
inline double empirical_gap(Fairness kind, const GroupRates& a, const GroupRates& b) {
    switch (kind) {
        case Fairness::EqualOpportunity: return a.tpr() - b.tpr();
        case Fairness::EqualizedOdds: return combine_odds_gap({a.tpr() - b.tpr(), a.fpr() - b.fpr()});
        case Fairness::DemographicParity: return a.positive_rate - b.positive_rate;
    }
    return 0.0;
}

}  // namespace biased_erm
