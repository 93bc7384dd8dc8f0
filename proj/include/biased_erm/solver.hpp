#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bias.hpp"
#include "distribution.hpp"
#include "errors.hpp"
#include "fairness.hpp"
#include "parallel.hpp"

namespace biased_erm {

// ---------------------------------------------------------------------------
// Biased error

namespace detail {

/// Biased-error contribution of one group. Each region mass is split by the
/// fraction of that region the hypothesis gets wrong; zero-width regions
/// (p = 1) contribute nothing.
inline double group_biased_error(const GroupDeviation& d, Group g, const RegionMasses& masses,
                                 double p) noexcept {
    const double pos_pos = masses.at(g, true, 1), pos_neg = masses.at(g, true, 0);
    const double neg_pos = masses.at(g, false, 1), neg_neg = masses.at(g, false, 0);
    double err = pos_pos * d.p1 / p + pos_neg * (p - d.p1) / p;
    if (p < 1.0) {
        const double q = 1.0 - p;
        err += neg_pos * (q - d.p2) / q + neg_neg * d.p2 / q;
    }
    return err;
}

}  // namespace detail

/// Recovers p from the Group-A masses, (R1 + R2) / (R1 + R2 + R3 + R4).
inline double masses_p(const RegionMasses& masses) noexcept {
    const double a = masses.group_total(Group::A);
    return (masses.R(1) + masses.R(2)) / a;
}

/// Un-normalized error on the biased distribution. Bilinear in the deviation
/// parameters and the region masses.
inline double biased_error(const DeviationParams& d, const RegionMasses& masses, double p) noexcept {
    return detail::group_biased_error(d.group(Group::A), Group::A, masses, p) +
           detail::group_biased_error(d.group(Group::B), Group::B, masses, p);
}

inline double biased_error(const DeviationParams& d, const RegionMasses& masses) noexcept {
    return biased_error(d, masses, masses_p(masses));
}

// ---------------------------------------------------------------------------
// Shrinking to a single nonzero parameter per group

/// Per group, trades p2 against p1 along the line of constant constraint
/// level until one of them reaches zero. The surviving parameter is solved
/// from the level directly so the level is preserved to rounding.
inline GroupDeviation shrink_group(const GroupDeviation& d, double eta) noexcept {
    if (d.p1 == 0.0 || d.p2 == 0.0) return d;
    if (eta == 0.0) return {d.p1, 0.0};  // level is -p1 alone; p2 is free
    const double c = constraint_level(d, eta).c;
    if (c <= 0.0) return {std::clamp(-c / (1.0 - eta), 0.0, d.p1), 0.0};
    return {0.0, std::clamp(c / eta, 0.0, d.p2)};
}

inline DeviationParams shrink(const DeviationParams& d, const TrueModel& m) noexcept {
    return DeviationParams::from_groups(shrink_group(d.group(Group::A), m.eta),
                                        shrink_group(d.group(Group::B), m.eta));
}

struct ShrinkReport {
    DeviationParams params;
    double eo_gap = 0.0;            ///< unchanged by shrinking
    bool input_satisfied_eo = true; ///< false flags an equal-opportunity-violating input
};

/// Shrinks and reports the equal-opportunity gap, which depends only on the
/// two constraint levels and so survives the shrink untouched.
inline ShrinkReport shrink_report(const DeviationParams& d, const TrueModel& m) noexcept {
    const double norm = base_rate(m);
    const double gap = (constraint_level(d.group(Group::A), m.eta).c -
                        constraint_level(d.group(Group::B), m.eta).c) /
                       norm;
    return {shrink(d, m), gap, std::abs(gap) <= kAnalyticTolerance};
}

// ---------------------------------------------------------------------------
// Constrained ERM

enum class CandidateClass { BayesOptimal, AllNegative, AllPositive, Other };

inline const char* candidate_name(CandidateClass c) noexcept {
    switch (c) {
        case CandidateClass::BayesOptimal: return "h_star";
        case CandidateClass::AllNegative: return "all_negative";
        case CandidateClass::AllPositive: return "all_positive";
        case CandidateClass::Other: return "other";
    }
    return "?";
}

/// Names a hypothesis when it coincides with one of the three extremes. At
/// p = 1 the all-positive pair is the Bayes-optimal pair and reports as such.
inline CandidateClass classify(const DeviationParams& d, double p, double tol = 1e-9) noexcept {
    const auto near = [tol](const DeviationParams& x, const DeviationParams& y) {
        return std::abs(x.p1A - y.p1A) <= tol && std::abs(x.p2A - y.p2A) <= tol &&
               std::abs(x.p1B - y.p1B) <= tol && std::abs(x.p2B - y.p2B) <= tol;
    };
    if (near(d, DeviationParams::bayes_optimal())) return CandidateClass::BayesOptimal;
    if (near(d, DeviationParams::all_negative(p))) return CandidateClass::AllNegative;
    if (near(d, DeviationParams::all_positive(p))) return CandidateClass::AllPositive;
    return CandidateClass::Other;
}

struct Candidate {
    std::string name;
    DeviationParams params;
    double biased_error = 0.0;
    bool feasible = true;
};

struct SolveReport {
    Fairness kind = Fairness::EqualOpportunity;
    double tolerance = kAnalyticTolerance;
    DeviationParams chosen;
    CandidateClass chosen_class = CandidateClass::BayesOptimal;
    double biased_error = 0.0;             ///< un-normalized
    double normalized_biased_error = 0.0;  ///< divided by the surviving mass
    double true_error = 0.0;
    double constraint_gap = 0.0;
    bool tie = false;
    std::optional<double> runner_up_error;  ///< best feasible error of any other hypothesis
    std::vector<Candidate> candidates;
};

/// Relative tolerance under which two biased errors count as tied.
inline constexpr double kTieTolerance = 1e-12;

inline bool errors_tied(double a, double b) noexcept {
    return std::abs(a - b) <= kTieTolerance * std::max({1.0, std::abs(a), std::abs(b)});
}

namespace detail {

inline std::vector<Candidate> extreme_candidates(const TrueModel& m, const RegionMasses& masses) {
    std::vector<Candidate> out{
        {"h_star", DeviationParams::bayes_optimal(), 0.0, true},
        {"all_negative", DeviationParams::all_negative(m.p), 0.0, true},
        {"all_positive", DeviationParams::all_positive(m.p), 0.0, true},
    };
    for (auto& c : out) c.biased_error = biased_error(c.params, masses, m.p);
    return out;
}

inline void finish_report(SolveReport& rep, const TrueModel& m, const BiasParams& b,
                          const RegionMasses& masses) {
    rep.chosen_class = classify(rep.chosen, m.p);
    rep.biased_error = biased_error(rep.chosen, masses, m.p);
    rep.normalized_biased_error = rep.biased_error / masses.total();
    rep.true_error = analytic_true_error(rep.chosen, m);
    rep.constraint_gap = constraint_gap(rep.kind, rep.chosen, m, b);
}

}  // namespace detail

/// Equal-opportunity-constrained ERM on the biased distribution, solved by
/// comparing the Bayes-optimal, all-negative and all-positive pairs. Exact
/// ties go to the Bayes-optimal pair (then all-negative) and set `tie`.
inline SolveReport exact_constrained_erm(const TrueModel& m, const BiasParams& b) {
    validate_model(m);
    validate_bias(b);
    const auto masses = region_masses(m, b);
    SolveReport rep;
    rep.candidates = detail::extreme_candidates(m, masses);
    std::size_t best = 0;
    for (std::size_t i = 1; i < rep.candidates.size(); ++i)
        if (rep.candidates[i].biased_error < rep.candidates[best].biased_error &&
            !errors_tied(rep.candidates[i].biased_error, rep.candidates[best].biased_error))
            best = i;
    for (std::size_t i = 0; i < rep.candidates.size(); ++i)
        if (i != best && errors_tied(rep.candidates[i].biased_error, rep.candidates[best].biased_error) &&
            rep.candidates[i].params != rep.candidates[best].params)
            rep.tie = true;
    rep.chosen = rep.candidates[best].params;
    double runner = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rep.candidates.size(); ++i)
        if (i != best && rep.candidates[i].params != rep.chosen)
            runner = std::min(runner, rep.candidates[i].biased_error);
    if (std::isfinite(runner)) rep.runner_up_error = runner;
    detail::finish_report(rep, m, b, masses);
    return rep;
}

// ---------------------------------------------------------------------------
// Brute-force lattice oracle

namespace detail {

struct LatticePoint {
    GroupDeviation d;
    double error = 0.0;  ///< this group's biased-error contribution
    double key = 0.0;    ///< primary constraint statistic
    double aux = 0.0;    ///< secondary statistic (FPR for equalized odds)
};

/// Values {0, hi/k, ..., hi}, with the endpoint exact; a zero-width range
/// yields the single value 0.
inline std::vector<double> lattice_axis(double hi, std::size_t k) {
    if (hi <= 0.0) return {0.0};
    std::vector<double> v(k + 1);
    for (std::size_t i = 0; i <= k; ++i) v[i] = i == k ? hi : hi * static_cast<double>(i) / static_cast<double>(k);
    return v;
}

inline std::vector<LatticePoint> group_lattice(Group g, Fairness kind, const TrueModel& m,
                                               const RegionMasses& masses, std::size_t k) {
    const auto p1s = lattice_axis(m.p, k);
    const auto p2s = lattice_axis(1.0 - m.p, k);
    std::vector<LatticePoint> pts;
    pts.reserve(p1s.size() * p2s.size());
    for (double p1 : p1s)
        for (double p2 : p2s) {
            LatticePoint pt;
            pt.d = {p1, p2};
            pt.error = group_biased_error(pt.d, g, masses, m.p);
            switch (kind) {
                case Fairness::EqualOpportunity:
                    pt.key = constraint_level(pt.d, m.eta).c;
                    break;
                case Fairness::EqualizedOdds:
                    pt.key = rate_given_label(pt.d, g, 1, m.p, masses, "grid tpr");
                    pt.aux = rate_given_label(pt.d, g, 0, m.p, masses, "grid fpr");
                    break;
                case Fairness::DemographicParity: {
                    const double in_pos = masses.at(g, true, 1) + masses.at(g, true, 0);
                    const double in_neg = masses.at(g, false, 1) + masses.at(g, false, 0);
                    pt.key = (in_pos * kept_positive_fraction(pt.d, m.p) +
                              in_neg * added_positive_fraction(pt.d, m.p)) /
                             (in_pos + in_neg);
                    break;
                }
            }
            pts.push_back(pt);
        }
    return pts;
}

/// Best and second-best feasible pairs under the total order
/// (error, p1A, p2A, p1B, p2B); the order makes any merge sequence agree.
struct TopTwo {
    struct Entry {
        double error = std::numeric_limits<double>::infinity();
        DeviationParams params;
        bool set = false;
    };
    Entry best, second;

    static bool less(double e1, const DeviationParams& d1, double e2, const DeviationParams& d2) {
        if (e1 != e2) return e1 < e2;
        return d1 < d2;
    }

    void offer(double err, const DeviationParams& d) {
        if (!best.set || less(err, d, best.error, best.params)) {
            if (best.set && best.params != d) second = best;
            best = {err, d, true};
        } else if (d != best.params && (!second.set || less(err, d, second.error, second.params))) {
            second = {err, d, true};
        }
    }

    void merge(const TopTwo& o) {
        if (o.best.set) offer(o.best.error, o.best.params);
        if (o.second.set) offer(o.second.error, o.second.params);
    }
};

inline double feasibility_band(Fairness kind, double tolerance, const TrueModel& m) {
    // Equal opportunity: |C_A - C_B| / base_rate <= tol.
    return kind == Fairness::EqualOpportunity ? tolerance * base_rate(m) : tolerance;
}

inline SolveReport report_from_top(const TopTwo& top, const ConstraintKind& kind, const TrueModel& m,
                                   const BiasParams& b, const RegionMasses& masses) {
    if (!top.best.set)
        throw NoFeasiblePoint(std::string("no lattice point satisfies ") + fairness_name(kind.kind) +
                              " within tolerance " + shortest(kind.tolerance));
    SolveReport rep;
    rep.kind = kind.kind;
    rep.tolerance = kind.tolerance;
    rep.chosen = top.best.params;
    if (top.second.set) {
        rep.runner_up_error = top.second.error;
        rep.tie = errors_tied(top.best.error, top.second.error);
    }
    rep.candidates = extreme_candidates(m, masses);
    for (auto& c : rep.candidates) {
        try {
            c.feasible = kind.satisfied(constraint_gap(kind.kind, c.params, m, b));
        } catch (const DegenerateDenominator&) {
            c.feasible = false;
        }
    }
    finish_report(rep, m, b, masses);
    return rep;
}

}  // namespace detail

/// Brute-force constrained ERM over the lattice
/// {0, p/k, ..., p} x {0, (1-p)/k, ..., 1-p} in each group (k = resolution).
///
/// The objective separates into per-group terms, and every criterion compares
/// one statistic of A against one of B. B's lattice is sorted by that
/// statistic so each A point scans only the B points inside its tolerance
/// band; every feasible pair is still visited.
inline SolveReport grid_constrained_erm(const ConstraintKind& kind, const TrueModel& m, const BiasParams& b,
                                        std::size_t resolution) {
    if (resolution < 2) throw RangeError("resolution", "must be at least 2");
    validate_model(m);
    validate_bias(b);
    const auto masses = region_masses(m, b);
    const auto lat_a = detail::group_lattice(Group::A, kind.kind, m, masses, resolution);
    auto lat_b = detail::group_lattice(Group::B, kind.kind, m, masses, resolution);
    std::sort(lat_b.begin(), lat_b.end(),
              [](const auto& x, const auto& y) { return x.key < y.key; });
    const double band = detail::feasibility_band(kind.kind, kind.tolerance, m);

    std::vector<detail::TopTwo> partial(thread_count());
    parallel_chunks(lat_a.size(), [&](std::size_t begin, std::size_t end, std::size_t chunk) {
        detail::TopTwo local;
        for (std::size_t i = begin; i < end; ++i) {
            const auto& a = lat_a[i];
            auto it = std::lower_bound(lat_b.begin(), lat_b.end(), a.key - band,
                                       [](const auto& pt, double v) { return pt.key < v; });
            for (; it != lat_b.end() && it->key <= a.key + band; ++it) {
                if (kind.kind == Fairness::EqualizedOdds && std::abs(a.aux - it->aux) > kind.tolerance)
                    continue;
                local.offer(a.error + it->error, DeviationParams::from_groups(a.d, it->d));
            }
        }
        partial[chunk] = local;
    });
    detail::TopTwo top;
    for (const auto& t : partial) top.merge(t);
    return detail::report_from_top(top, kind, m, b, masses);
}

/// The same search as a plain four-fold loop over every lattice pair. Cost is
/// (k+1)^4; meant for cross-checking `grid_constrained_erm` at small k.
inline SolveReport grid_constrained_erm_exhaustive(const ConstraintKind& kind, const TrueModel& m,
                                                   const BiasParams& b, std::size_t resolution) {
    if (resolution < 2) throw RangeError("resolution", "must be at least 2");
    validate_model(m);
    validate_bias(b);
    const auto masses = region_masses(m, b);
    const auto p1s = detail::lattice_axis(m.p, resolution);
    const auto p2s = detail::lattice_axis(1.0 - m.p, resolution);
    detail::TopTwo top;
    for (double p1a : p1s)
        for (double p2a : p2s)
            for (double p1b : p1s)
                for (double p2b : p2s) {
                    const DeviationParams d{p1a, p2a, p1b, p2b};
                    if (!kind.satisfied(constraint_gap(kind.kind, d, m, b))) continue;
                    top.offer(biased_error(d, masses, m.p), d);
                }
    return detail::report_from_top(top, kind, m, b, masses);
}

// ---------------------------------------------------------------------------
// Unconstrained optimum on (possibly reweighted) masses

struct UnconstrainedOptimum {
    DeviationParams params;
    bool tie = false;  ///< some region has equal positive and negative mass
};

/// Region-by-region majority vote: the lowest-error hypothesis with no
/// constraint. Ties keep the Bayes-optimal labeling of the region.
inline UnconstrainedOptimum unconstrained_optimum(const RegionMasses& masses, double p) noexcept {
    UnconstrainedOptimum out;
    GroupDeviation dev[2];
    for (int gi = 0; gi < 2; ++gi) {
        const Group g = gi == 0 ? Group::A : Group::B;
        const double pp = masses.at(g, true, 1), pn = masses.at(g, true, 0);
        const double np = masses.at(g, false, 1), nn = masses.at(g, false, 0);
        if (errors_tied(pp, pn) && pp + pn > 0.0) out.tie = true;
        if (p < 1.0 && errors_tied(np, nn) && np + nn > 0.0) out.tie = true;
        dev[gi].p1 = (pn > pp && !errors_tied(pp, pn)) ? p : 0.0;
        dev[gi].p2 = (p < 1.0 && np > nn && !errors_tied(np, nn)) ? 1.0 - p : 0.0;
    }
    out.params = DeviationParams::from_groups(dev[0], dev[1]);
    return out;
}

// ---------------------------------------------------------------------------
// Reweighting

/// Upweights every apparent Group-B positive by 1 / beta.
inline Dataset reweight_underrep(const Dataset& data, double beta) {
    if (!(beta > 0.0 && beta <= 1.0)) throw RangeError("beta", "must lie in (0, 1], got " + shortest(beta));
    Dataset out = data;
    for (auto& e : out.examples) e.weight = (e.group == Group::B && e.label == 1) ? 1.0 / beta : 1.0;
    return out;
}

/// Weight on apparent Group-B positives that restores Group A's positive odds
/// under labeling bias, given A's positive fraction and the flip rate.
inline double labelbias_Z(double p_a1, double nu) {
    if (!(p_a1 > 0.0 && p_a1 < 1.0)) throw RangeError("p_A1", "must lie in (0, 1), got " + shortest(p_a1));
    if (!(nu >= 0.0 && nu < 1.0)) throw RangeError("nu", "must lie in [0, 1), got " + shortest(nu));
    return (1.0 - p_a1 * (1.0 - nu)) / ((1.0 - nu) * (1.0 - p_a1));
}

/// Population-level reweighting factor: the weight on apparent B positives
/// that equalizes the positive odds of the two groups.
inline double population_reweight_factor(const TrueModel& m, const BiasParams& b) {
    const auto masses = region_masses(m, b);
    const double q_a = base_rate(m);
    const double q_b = (masses.R(5) + masses.R(7)) / masses.group_total(Group::B);
    const double nu_hat = std::clamp(1.0 - q_b / q_a, 0.0, std::nextafter(1.0, 0.0));
    return labelbias_Z(q_a, nu_hat);
}

/// Open interval of weights for which the weighted positive/negative ratio is
/// above 1 in the optimal-positive region of B and below 1 in its negative
/// region (needs 0 < eta < 1/2).
struct ZInterval {
    double lower = 0.0;
    double upper = 0.0;

    [[nodiscard]] bool contains(double z) const noexcept { return z > lower && z < upper; }
};

inline ZInterval labelbias_Z_interval(double eta, double nu) noexcept {
    return {(eta + (1.0 - eta) * nu) / ((1.0 - eta) * (1.0 - nu)),
            (1.0 - eta + eta * nu) / (eta * (1.0 - nu))};
}

/// Sets the weight of every apparent Group-B positive to `z`, others to 1.
inline Dataset reweight_labelbias(const Dataset& data, double z) {
    if (!(z > 0.0)) throw RangeError("z", "must be positive, got " + shortest(z));
    Dataset out = data;
    for (auto& e : out.examples) e.weight = (e.group == Group::B && e.label == 1) ? z : 1.0;
    return out;
}

/// Weighted misclassification rate sum(w * [h != y]) / sum(w) with a
/// delta-method standard error for the ratio.
struct RiskEstimate {
    double risk = 0.0;
    double standard_error = 0.0;
};

inline RiskEstimate weighted_risk(const Dataset& data, const ThresholdPair& h) {
    double total = 0.0, wrong = 0.0;
    for (const auto& e : data.examples) {
        total += e.weight;
        if ((h.predicts(e.group, e.x) ? 1 : 0) != e.label) wrong += e.weight;
    }
    if (!(total > 0.0)) throw InsufficientData("weighted_risk: empty dataset");
    const double risk = wrong / total;
    double ss = 0.0;
    for (const auto& e : data.examples) {
        const double loss = (h.predicts(e.group, e.x) ? 1 : 0) != e.label ? 1.0 : 0.0;
        const double dev = e.weight * (loss - risk);
        ss += dev * dev;
    }
    return {risk, std::sqrt(ss) / total};
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const DeviationParams& d) {
    return {{"p1A", d.p1A}, {"p2A", d.p2A}, {"p1B", d.p1B}, {"p2B", d.p2B}};
}

inline nlohmann::json to_json(const SolveReport& r) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : r.candidates)
        cands.push_back({{"name", c.name},
                         {"params", to_json(c.params)},
                         {"biased_error", c.biased_error},
                         {"feasible", c.feasible}});
    nlohmann::json j{{"kind", fairness_name(r.kind)},
                     {"tolerance", r.tolerance},
                     {"chosen", to_json(r.chosen)},
                     {"chosen_class", candidate_name(r.chosen_class)},
                     {"biased_error", r.biased_error},
                     {"normalized_biased_error", r.normalized_biased_error},
                     {"true_error", r.true_error},
                     {"constraint_gap", r.constraint_gap},
                     {"tie", r.tie},
                     {"candidates", cands}};
    j["runner_up_error"] = r.runner_up_error ? nlohmann::json(*r.runner_up_error) : nlohmann::json(nullptr);
    return j;
}

}  // namespace biased_erm
