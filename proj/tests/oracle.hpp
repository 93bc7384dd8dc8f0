#pragma once

// Independent reference computations for the unit and acceptance tests.
// They integrate the generative story directly over the feature line rather
// than going through the region-mass table.

#include <algorithm>
#include <array>
#include <functional>
#include <vector>

#include "biased_erm/biased_erm.hpp"

namespace oracle {

using biased_erm::BiasParams;
using biased_erm::DeviationParams;
using biased_erm::Group;
using biased_erm::GroupDeviation;
using biased_erm::TrueModel;

struct Density {
    double pos = 0.0;  ///< apparent positives per unit of x, including the group weight
    double neg = 0.0;
};

inline Density density(const TrueModel& m, const BiasParams& b, Group g, double x) {
    const double theta = 1.0 - m.p;
    const double true_pos = x >= theta ? 1.0 - m.eta : m.eta;
    const double true_neg = 1.0 - true_pos;
    if (g == Group::A) return {(1.0 - m.r) * true_pos, (1.0 - m.r) * true_neg};
    return {m.r * true_pos * b.beta_pos * (1.0 - b.nu),
            m.r * (true_pos * b.beta_pos * b.nu + true_neg * b.beta_neg)};
}

struct Tally {
    double pos = 0.0, neg = 0.0;          ///< apparent label mass
    double pos_hit = 0.0, neg_hit = 0.0;  ///< of which classified positive
    [[nodiscard]] double error() const { return (pos - pos_hit) + neg_hit; }
};

/// Exact integral over [0, 1): the classifier and densities are piecewise
/// constant between the breakpoints, so midpoints suffice.
inline Tally integrate(const TrueModel& m, const BiasParams& b, Group g, const GroupDeviation& d) {
    const double theta = 1.0 - m.p;
    std::vector<double> cuts{0.0, theta - d.p2, theta, theta + d.p1, 1.0};
    std::sort(cuts.begin(), cuts.end());
    Tally t;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double len = cuts[i + 1] - cuts[i];
        if (len <= 0.0) continue;
        const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
        const bool positive = mid >= theta ? mid >= theta + d.p1 : mid >= theta - d.p2;
        const auto dens = density(m, b, g, mid);
        t.pos += dens.pos * len;
        t.neg += dens.neg * len;
        if (positive) {
            t.pos_hit += dens.pos * len;
            t.neg_hit += dens.neg * len;
        }
    }
    return t;
}

inline double biased_error(const DeviationParams& d, const TrueModel& m, const BiasParams& b) {
    return integrate(m, b, Group::A, d.group(Group::A)).error() + integrate(m, b, Group::B, d.group(Group::B)).error();
}

inline double tpr(const DeviationParams& d, Group g, const TrueModel& m, const BiasParams& b) {
    const auto t = integrate(m, b, g, d.group(g));
    return t.pos_hit / t.pos;
}

inline double fpr(const DeviationParams& d, Group g, const TrueModel& m, const BiasParams& b) {
    const auto t = integrate(m, b, g, d.group(g));
    return t.neg_hit / t.neg;
}

inline double positive_rate(const DeviationParams& d, Group g, const TrueModel& m, const BiasParams& b) {
    const auto t = integrate(m, b, g, d.group(g));
    return (t.pos_hit + t.neg_hit) / (t.pos + t.neg);
}

inline double true_error(const DeviationParams& d, const TrueModel& m) {
    return biased_error(d, m, BiasParams::none());
}

/// R1..R8 by enumerating (group, region, true label, retained, flipped).
inline std::array<double, 8> masses(const TrueModel& m, const BiasParams& b) {
    std::array<double, 8> out{};
    for (int g = 0; g < 2; ++g)
        for (int region = 0; region < 2; ++region)  // 0: optimal positive
            for (int y = 0; y < 2; ++y) {
                const double pg = g == 0 ? 1.0 - m.r : m.r;
                const double preg = region == 0 ? m.p : 1.0 - m.p;
                const bool noisy = (region == 0) != (y == 1);
                const double py = noisy ? m.eta : 1.0 - m.eta;
                double mass = pg * preg * py;
                const auto slot = [&](int label) { return g * 4 + region * 2 + (label == 1 ? 0 : 1); };
                if (g == 0) {
                    out[static_cast<std::size_t>(slot(y))] += mass;
                    continue;
                }
                if (y == 1) {
                    mass *= b.beta_pos;
                    out[static_cast<std::size_t>(slot(1))] += mass * (1.0 - b.nu);
                    out[static_cast<std::size_t>(slot(0))] += mass * b.nu;
                } else {
                    out[static_cast<std::size_t>(slot(0))] += mass * b.beta_neg;
                }
            }
    return out;
}

}  // namespace oracle
