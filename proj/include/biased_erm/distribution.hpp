#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "format.hpp"
#include "rng.hpp"

namespace biased_erm {

enum class Group : std::uint8_t { A, B };

inline constexpr char group_name(Group g) noexcept { return g == Group::A ? 'A' : 'B'; }

/// Population and label-noise parameters of the uncorrupted distribution.
///
/// Group B has mass `r`. Within each group the feature is uniform on [0, 1)
/// and the Bayes-optimal rule is `x >= 1 - p`, so it labels a mass `p`
/// positive. Each true label disagrees with that rule independently with
/// probability `eta`.
struct TrueModel {
    double r = 1.0 / 3.0;
    double p = 0.5;
    double eta = 0.0;

    /// Decision threshold of the Bayes-optimal rule (identical in both groups).
    [[nodiscard]] double theta() const noexcept { return 1.0 - p; }
    [[nodiscard]] double theta(Group) const noexcept { return theta(); }
};

/// Checks 0 < r < 1, 0 < p <= 1 and 0 <= eta < 1/2.
inline const TrueModel& validate_model(const TrueModel& m) {
    if (!(m.r > 0.0 && m.r < 1.0)) throw RangeError("r", "must lie in (0, 1), got " + shortest(m.r));
    if (!(m.p > 0.0 && m.p <= 1.0)) throw RangeError("p", "must lie in (0, 1], got " + shortest(m.p));
    if (!(m.eta >= 0.0 && m.eta < 0.5))
        throw RangeError("eta", "must lie in [0, 1/2), got " + shortest(m.eta));
    return m;
}

/// Fraction of positive true labels, equal in both groups.
inline double base_rate(const TrueModel& m) noexcept {
    return m.p * (1.0 - m.eta) + (1.0 - m.p) * m.eta;
}

// ---------------------------------------------------------------------------
// Hypotheses as deviations from the Bayes-optimal pair

/// Disagreement masses of one group's hypothesis with the Bayes-optimal rule:
/// `p1` is the mass it labels negative inside the optimal positive region,
/// `p2` the mass it labels positive inside the optimal negative region.
struct GroupDeviation {
    double p1 = 0.0;
    double p2 = 0.0;

    friend bool operator==(const GroupDeviation&, const GroupDeviation&) = default;
};

/// A group-dependent hypothesis pair, encoded by its disagreement masses.
struct DeviationParams {
    double p1A = 0.0;
    double p2A = 0.0;
    double p1B = 0.0;
    double p2B = 0.0;

    [[nodiscard]] GroupDeviation group(Group g) const noexcept {
        return g == Group::A ? GroupDeviation{p1A, p2A} : GroupDeviation{p1B, p2B};
    }

    static DeviationParams from_groups(GroupDeviation a, GroupDeviation b) noexcept {
        return {a.p1, a.p2, b.p1, b.p2};
    }

    static DeviationParams bayes_optimal() noexcept { return {}; }
    static DeviationParams all_negative(double p) noexcept { return {p, 0.0, p, 0.0}; }
    static DeviationParams all_positive(double p) noexcept { return {0.0, 1.0 - p, 0.0, 1.0 - p}; }

    friend bool operator==(const DeviationParams&, const DeviationParams&) = default;
    friend auto operator<=>(const DeviationParams&, const DeviationParams&) = default;
};

inline void validate_deviation(const DeviationParams& d, double p) {
    constexpr double slack = 1e-12;
    const auto check = [&](double v, double hi, const char* name) {
        if (!(v >= 0.0 && v <= hi + slack))
            throw RangeError(name, "must lie in [0, " + shortest(hi) + "], got " + shortest(v));
    };
    check(d.p1A, p, "p1A");
    check(d.p2A, 1.0 - p, "p2A");
    check(d.p1B, p, "p1B");
    check(d.p2B, 1.0 - p, "p2B");
}

/// The hypothesis realized by a threshold rule `x >= t` in the canonical
/// feature model: thresholds above the optimum give p1 > 0, below give p2 > 0.
inline GroupDeviation threshold_deviation(double t, double theta) noexcept {
    if (t >= theta) return {t - theta, 0.0};
    return {0.0, theta - t};
}

inline DeviationParams threshold_pair_deviation(double t_a, double t_b, const TrueModel& m) noexcept {
    return DeviationParams::from_groups(threshold_deviation(t_a, m.theta()),
                                        threshold_deviation(t_b, m.theta()));
}

/// Realizes a group deviation as a concrete classifier on [0, 1): positive on
/// [theta - p2, theta) and on [theta + p1, 1).
inline bool deviation_predicts(const GroupDeviation& d, double theta, double x) noexcept {
    if (x >= theta) return x >= theta + d.p1;
    return x >= theta - d.p2;
}

/// Error on the uncorrupted distribution. Deviating mass errs with
/// probability 1 - eta instead of eta.
inline double analytic_true_error(const DeviationParams& d, const TrueModel& m) noexcept {
    const double slope = 1.0 - 2.0 * m.eta;
    const double err_a = m.eta + (d.p1A + d.p2A) * slope;
    const double err_b = m.eta + (d.p1B + d.p2B) * slope;
    return (1.0 - m.r) * err_a + m.r * err_b;
}

inline double analytic_group_true_error(const GroupDeviation& d, const TrueModel& m) noexcept {
    return m.eta + (d.p1 + d.p2) * (1.0 - 2.0 * m.eta);
}

// ---------------------------------------------------------------------------
// Finite samples

struct LabeledExample {
    double x = 0.0;
    Group group = Group::A;
    int label = 0;
    double weight = 1.0;

    friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct Dataset {
    std::vector<LabeledExample> examples;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t size() const noexcept { return examples.size(); }
    [[nodiscard]] bool empty() const noexcept { return examples.empty(); }
};

/// Draws `n` examples from the uncorrupted distribution. Example `i` reads
/// its group, feature and noise coins from counter `i`, so the first k
/// examples of a larger draw equal a draw of size k with the same seed.
inline Dataset sample_true(const TrueModel& m, std::size_t n, std::uint64_t seed) {
    Dataset out;
    out.seed = seed;
    out.examples.reserve(n);
    const double theta = m.theta();
    for (std::size_t i = 0; i < n; ++i) {
        LabeledExample e;
        e.group = rng::uniform(seed, rng::kGroup, i) < m.r ? Group::B : Group::A;
        e.x = rng::uniform(seed, rng::kFeature, i);
        const int rule = e.x >= theta ? 1 : 0;
        const bool flip = rng::uniform(seed, rng::kLabelNoise, i) < m.eta;
        e.label = flip ? 1 - rule : rule;
        out.examples.push_back(e);
    }
    return out;
}

// CSV: header `x,group,label,weight`; features printed with 17 significant digits.

inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
    os << "x,group,label,weight\n";
    for (const auto& e : data.examples)
        os << sig17(e.x) << ',' << group_name(e.group) << ',' << e.label << ',' << shortest(e.weight)
           << '\n';
}

inline Dataset read_dataset_csv(std::istream& is) {
    Dataset out;
    std::string line;
    if (!std::getline(is, line)) throw InsufficientData("dataset csv: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x,group,label,weight") throw RangeError("header", "unexpected csv header '" + line + "'");
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        const std::string where = "row " + std::to_string(row);
        if (cells.size() != 4) throw RangeError(where, "expected 4 columns");
        LabeledExample e;
        e.x = parse_double(cells[0], where + " x");
        if (cells[1] == "A")
            e.group = Group::A;
        else if (cells[1] == "B")
            e.group = Group::B;
        else
            throw RangeError(where + " group", "must be A or B");
        if (cells[2] == "0" || cells[2] == "1")
            e.label = cells[2][0] - '0';
        else
            throw RangeError(where + " label", "must be 0 or 1");
        e.weight = parse_double(cells[3], where + " weight");
        if (!(e.x >= 0.0 && e.x <= 1.0)) throw RangeError(where + " x", "must lie in [0, 1]");
        if (!(e.weight > 0.0)) throw RangeError(where + " weight", "must be positive");
        out.examples.push_back(e);
    }
    return out;
}

}  // namespace biased_erm
