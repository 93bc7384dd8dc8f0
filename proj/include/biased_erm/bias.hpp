#pragma once

#include <algorithm>
#include <array>
#include <cstdint>

#include "distribution.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "rng.hpp"

namespace biased_erm {

/// Corruption of Group B: a true positive survives with probability
/// `beta_pos`, a true negative with `beta_neg`; each survivor labeled positive
/// is then flipped to negative with probability `nu`.
struct BiasParams {
    double beta_pos = 1.0;
    double beta_neg = 1.0;
    double nu = 0.0;

    static BiasParams none() noexcept { return {}; }
    static BiasParams under_representation(double beta) noexcept { return {beta, 1.0, 0.0}; }
    static BiasParams labeling(double nu) noexcept { return {1.0, 1.0, nu}; }
};

inline const BiasParams& validate_bias(const BiasParams& b) {
    if (!(b.beta_pos > 0.0 && b.beta_pos <= 1.0))
        throw RangeError("beta_pos", "must lie in (0, 1], got " + shortest(b.beta_pos));
    if (!(b.beta_neg > 0.0 && b.beta_neg <= 1.0))
        throw RangeError("beta_neg", "must lie in (0, 1], got " + shortest(b.beta_neg));
    if (!(b.nu >= 0.0 && b.nu < 1.0)) throw RangeError("nu", "must lie in [0, 1), got " + shortest(b.nu));
    return b;
}

/// Un-normalized probabilities of the eight (group, optimal-rule sign,
/// biased label) events. `mass[0..7]` hold R1..R8:
///
///   R1 A + +   R2 A + -   R3 A - +   R4 A - -
///   R5 B + +   R6 B + -   R7 B - +   R8 B - -
struct RegionMasses {
    std::array<double, 8> mass{};

    static constexpr std::size_t index(Group g, bool optimal_positive, int label) noexcept {
        return (g == Group::B ? 4u : 0u) + (optimal_positive ? 0u : 2u) + (label == 1 ? 0u : 1u);
    }

    [[nodiscard]] double at(Group g, bool optimal_positive, int label) const noexcept {
        return mass[index(g, optimal_positive, label)];
    }

    /// 1-based access matching the R1..R8 naming.
    [[nodiscard]] double R(int k) const noexcept { return mass[static_cast<std::size_t>(k - 1)]; }

    [[nodiscard]] double total() const noexcept {
        double s = 0.0;
        for (double v : mass) s += v;
        return s;
    }

    [[nodiscard]] double group_total(Group g) const noexcept {
        const std::size_t o = g == Group::B ? 4 : 0;
        return mass[o] + mass[o + 1] + mass[o + 2] + mass[o + 3];
    }
};

inline RegionMasses region_masses(const TrueModel& m, const BiasParams& b) noexcept {
    const double r = m.r, p = m.p, eta = m.eta;
    const double bp = b.beta_pos, bn = b.beta_neg, nu = b.nu;
    RegionMasses out;
    out.mass = {
        (1 - r) * p * (1 - eta),
        (1 - r) * p * eta,
        (1 - r) * (1 - p) * eta,
        (1 - r) * (1 - p) * (1 - eta),
        r * p * (1 - eta) * bp * (1 - nu),
        r * p * ((1 - eta) * bp * nu + eta * bn),
        r * (1 - p) * eta * bp * (1 - nu),
        r * (1 - p) * ((1 - eta) * bn + eta * bp * nu),
    };
    return out;
}

/// Masses after multiplying the loss weight of every apparent Group-B
/// positive by `z` (the effect of reweighting on the population).
inline RegionMasses scale_b_positives(RegionMasses masses, double z) noexcept {
    masses.mass[4] *= z;
    masses.mass[6] *= z;
    return masses;
}

/// Corrupts a sample with true labels. Group A passes through; each Group-B
/// example is retained first and, if retained and positive, possibly flipped.
/// Coins are drawn per input index so the fate of one example is independent
/// of every other.
inline Dataset apply_bias(const Dataset& data, const BiasParams& b, std::uint64_t seed) {
    Dataset out;
    out.seed = data.seed;
    out.examples.reserve(data.examples.size());
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        LabeledExample e = data.examples[i];
        if (e.group == Group::B) {
            const double keep = e.label == 1 ? b.beta_pos : b.beta_neg;
            if (!(rng::uniform(seed, rng::kRetention, i) < keep)) continue;
            if (e.label == 1 && rng::uniform(seed, rng::kLabelFlip, i) < b.nu) e.label = 0;
        }
        out.examples.push_back(e);
    }
    return out;
}

/// Weighted positive/negative totals per group.
struct GroupLabelCounts {
    double pos_a = 0.0, neg_a = 0.0, pos_b = 0.0, neg_b = 0.0;

    [[nodiscard]] double positive_fraction(Group g) const noexcept {
        return g == Group::A ? pos_a / (pos_a + neg_a) : pos_b / (pos_b + neg_b);
    }
};

inline GroupLabelCounts count_labels(const Dataset& data) noexcept {
    GroupLabelCounts c;
    for (const auto& e : data.examples) {
        double& cell = e.group == Group::A ? (e.label == 1 ? c.pos_a : c.neg_a)
                                           : (e.label == 1 ? c.pos_b : c.neg_b);
        cell += e.weight;
    }
    return c;
}

/// Retention of B positives under pure under-representation, estimated as the
/// odds ratio of B's positive fraction to A's.
inline double estimate_beta(const Dataset& data) {
    const auto c = count_labels(data);
    if (c.pos_a <= 0.0 || c.neg_a <= 0.0 || c.pos_b <= 0.0 || c.neg_b <= 0.0)
        throw InsufficientData("estimate_beta needs positives and negatives in both groups");
    return (c.pos_b / c.neg_b) / (c.pos_a / c.neg_a);
}

/// Flip rate under pure labeling bias, 1 - q_B / q_A, clamped to [0, 1).
inline double estimate_nu(const Dataset& data) {
    const auto c = count_labels(data);
    if (c.pos_a + c.neg_a <= 0.0 || c.pos_b + c.neg_b <= 0.0)
        throw InsufficientData("estimate_nu needs examples from both groups");
    const double q_a = c.positive_fraction(Group::A);
    if (q_a <= 0.0) throw InsufficientData("estimate_nu: group A has no positives");
    const double q_b = c.positive_fraction(Group::B);
    return std::clamp(1.0 - q_b / q_a, 0.0, std::nextafter(1.0, 0.0));
}

}  // namespace biased_erm
