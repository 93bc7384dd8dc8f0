#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"

using namespace biased_erm;

namespace {

const TrueModel kFigureOne{1.0 / 3.0, 0.5, 1.0 / 3.0};
const BiasParams kFigureOneBias{1.0 / 3.0, 1.0, 0.0};

}  // namespace

TEST(BiasedError, FigureOneCandidates) {
    const auto masses = region_masses(kFigureOne, kFigureOneBias);
    EXPECT_NEAR(biased_error(DeviationParams::bayes_optimal(), masses), 16.0 / 54, 1e-15);
    EXPECT_NEAR(biased_error(DeviationParams::all_negative(0.5), masses), 21.0 / 54, 1e-15);
    EXPECT_NEAR(biased_error(DeviationParams::all_positive(0.5), masses), 27.0 / 54, 1e-15);
}

TEST(BiasedError, LinearInterpolationAlongP1) {
    const auto masses = region_masses(kFigureOne, kFigureOneBias);
    const double p = 0.5, delta = 0.2;
    const double want = (delta / p) * (21.0 / 54) + ((p - delta) / p) * (16.0 / 54);
    EXPECT_NEAR(biased_error({delta, 0.0, delta, 0.0}, masses), want, 1e-15);
}

TEST(BiasedError, MatchesIntegrationOracle) {
    std::mt19937_64 gen(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const TrueModel m{0.05 + 0.9 * u(gen), 0.05 + 0.9 * u(gen), 0.45 * u(gen)};
        const BiasParams b{0.05 + 0.95 * u(gen), 0.05 + 0.95 * u(gen), 0.95 * u(gen)};
        const DeviationParams d{m.p * u(gen), (1 - m.p) * u(gen), m.p * u(gen), (1 - m.p) * u(gen)};
        EXPECT_NEAR(biased_error(d, region_masses(m, b), m.p), oracle::biased_error(d, m, b), 1e-12);
    }
}

TEST(BiasedError, PEqualsOneHasNoNegativeRegion) {
    const TrueModel m{0.3, 1.0, 0.1};
    const auto masses = region_masses(m, BiasParams::none());
    EXPECT_NEAR(biased_error({}, masses, 1.0), 0.1, 1e-15);
    EXPECT_NEAR(biased_error(DeviationParams::all_negative(1.0), masses, 1.0), 0.9, 1e-15);
}

TEST(Shrink, WorkedExample) {
    const auto out = shrink_group({0.1, 0.05}, 1.0 / 3.0);
    EXPECT_NEAR(out.p1, 0.075, 1e-15);
    EXPECT_EQ(out.p2, 0.0);
}

TEST(Shrink, FixedPointOnSingleParameter) {
    EXPECT_EQ(shrink_group({0.1, 0.0}, 0.2), (GroupDeviation{0.1, 0.0}));
    EXPECT_EQ(shrink_group({0.0, 0.3}, 0.2), (GroupDeviation{0.0, 0.3}));
}

TEST(Shrink, PositiveLevelKeepsP2) {
    const auto out = shrink_group({0.01, 0.3}, 0.4);  // C = 0.12 - 0.006 > 0
    EXPECT_EQ(out.p1, 0.0);
    EXPECT_NEAR(out.p2, (0.3 * 0.4 - 0.01 * 0.6) / 0.4, 1e-15);
}

TEST(Shrink, PropertiesOnRandomInputs) {
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        const TrueModel m{0.5, 0.02 + 0.96 * u(gen), 0.49 * u(gen)};
        const DeviationParams d{m.p * u(gen), (1 - m.p) * u(gen), m.p * u(gen), (1 - m.p) * u(gen)};
        const auto rep = shrink_report(d, m);
        for (Group g : {Group::A, Group::B}) {
            const auto s = rep.params.group(g);
            EXPECT_TRUE(s.p1 == 0.0 || s.p2 == 0.0);
            EXPECT_NEAR(constraint_level(s, m.eta).c, constraint_level(d.group(g), m.eta).c, 1e-12);
        }
        EXPECT_NO_THROW(validate_deviation(rep.params, m.p));
        for (int k = 0; k < 10; ++k) {
            const TrueModel mm{0.01 + 0.98 * u(gen), m.p, m.eta};
            const BiasParams b{0.01 + 0.99 * u(gen), 0.01 + 0.99 * u(gen), 0.99 * u(gen)};
            const auto masses = region_masses(mm, b);
            EXPECT_LE(biased_error(rep.params, masses, m.p), biased_error(d, masses, m.p) + 1e-12);
        }
    }
}

TEST(Shrink, ReportFlagsUnfairInput) {
    const TrueModel m{0.3, 0.5, 0.2};
    const auto rep = shrink_report({0.1, 0.0, 0.0, 0.0}, m);
    EXPECT_FALSE(rep.input_satisfied_eo);
    EXPECT_NEAR(rep.eo_gap, -0.1 * 0.8 / base_rate(m), 1e-15);
    EXPECT_TRUE(shrink_report({0.1, 0.0, 0.1, 0.0}, m).input_satisfied_eo);
}

TEST(ExactSolver, FigureOneChoosesOptimum) {
    const auto rep = exact_constrained_erm(kFigureOne, kFigureOneBias);
    EXPECT_EQ(rep.chosen_class, CandidateClass::BayesOptimal);
    EXPECT_FALSE(rep.tie);
    ASSERT_TRUE(rep.runner_up_error);
    EXPECT_NEAR(*rep.runner_up_error, 21.0 / 54, 1e-15);
}

TEST(ExactSolver, StrongRecoveryRegimeExample) {
    const auto rep = exact_constrained_erm({1.0 / 3.0, 0.5, 0.24}, {0.01, 0.01, 0.99});
    EXPECT_EQ(rep.chosen_class, CandidateClass::BayesOptimal);
}

TEST(ExactSolver, AllNegativeWhenNegativeConditionFails) {
    // r large, eta near 1/2 and tiny beta_pos: cond_neg < 0 < cond_pos.
    const TrueModel m{0.9, 0.5, 0.45};
    const BiasParams b{0.01, 1.0, 0.0};
    const auto c = check_conditions(m, b);
    ASSERT_LT(c.cond_neg, 0.0);
    ASSERT_GT(c.cond_pos, 0.0);
    EXPECT_EQ(exact_constrained_erm(m, b).chosen_class, CandidateClass::AllNegative);
}

TEST(ExactSolver, TieGoesToOptimum) {
    // cond_neg = 0.05 + 0.5 (0.55 beta - 0.45) vanishes at beta = 0.35 / 0.55.
    const TrueModel m{0.5, 0.5, 0.45};
    const BiasParams b{0.35 / 0.55, 1.0, 0.0};
    const auto rep = exact_constrained_erm(m, b);
    EXPECT_TRUE(rep.tie);
    EXPECT_EQ(rep.chosen_class, CandidateClass::BayesOptimal);
}

TEST(GridSolver, AgreesWithExactOnFigureOne) {
    const auto rep = grid_constrained_erm({Fairness::EqualOpportunity, kAnalyticTolerance}, kFigureOne, kFigureOneBias, 60);
    EXPECT_EQ(rep.chosen_class, CandidateClass::BayesOptimal);
}

TEST(GridSolver, BandScanMatchesExhaustiveLoop) {
    std::mt19937_64 gen(43);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 30; ++i) {
        const TrueModel m{0.05 + 0.9 * u(gen), 0.1 + 0.8 * u(gen), 0.45 * u(gen)};
        const BiasParams b{0.05 + 0.95 * u(gen), 0.05 + 0.95 * u(gen), 0.9 * u(gen)};
        for (Fairness f : {Fairness::EqualOpportunity, Fairness::EqualizedOdds, Fairness::DemographicParity}) {
            const ConstraintKind k{f, 0.05};
            const auto fast = grid_constrained_erm(k, m, b, 8);
            const auto slow = grid_constrained_erm_exhaustive(k, m, b, 8);
            EXPECT_EQ(fast.chosen, slow.chosen) << fairness_name(f);
            EXPECT_DOUBLE_EQ(fast.biased_error, slow.biased_error);
        }
    }
}

TEST(GridSolver, DeterministicAcrossThreadCounts) {
    const TrueModel m{0.3, 0.4, 0.1};
    const BiasParams b{0.4, 0.8, 0.2};
    const ConstraintKind k{Fairness::EqualizedOdds, 0.02};
    setenv("BIASED_ERM_LAB_THREADS", "1", 1);
    const auto one = grid_constrained_erm(k, m, b, 40);
    setenv("BIASED_ERM_LAB_THREADS", "4", 1);
    const auto four = grid_constrained_erm(k, m, b, 40);
    unsetenv("BIASED_ERM_LAB_THREADS");
    EXPECT_EQ(one.chosen, four.chosen);
    EXPECT_EQ(one.runner_up_error, four.runner_up_error);
}

TEST(GridSolver, EqualizedOddsRulesOutOptimum) {
    const TrueModel m{0.3, 0.5, 0.0};
    const auto rep = grid_constrained_erm({Fairness::EqualizedOdds, 1e-3}, m, BiasParams::labeling(0.5), 50);
    EXPECT_NE(rep.chosen_class, CandidateClass::BayesOptimal);
    EXPECT_FALSE(rep.candidates[0].feasible);
    EXPECT_GT(rep.biased_error, biased_error({}, region_masses(m, BiasParams::labeling(0.5)), m.p));
}

TEST(GridSolver, ParityExpandsGroupBPositives) {
    const TrueModel m{0.3, 0.5, 0.2};
    const auto rep =
        grid_constrained_erm({Fairness::DemographicParity, 1e-3}, m, BiasParams::under_representation(0.5), 100);
    EXPECT_GT(rep.chosen.p2B, 0.0);
}

TEST(UnconstrainedOptimum, MajorityVote) {
    // Figure-1 masses: R6 > R5, so B's positive region flips to negative.
    const auto opt = unconstrained_optimum(region_masses(kFigureOne, kFigureOneBias), 0.5);
    EXPECT_EQ(opt.params, (DeviationParams{0.0, 0.0, 0.5, 0.0}));
    EXPECT_FALSE(opt.tie);
}

TEST(Reweighting, UnderrepIdentityAtOne) {
    const auto data = sample_true({0.3, 0.5, 0.2}, 1000, 1);
    for (const auto& e : reweight_underrep(data, 1.0).examples) EXPECT_EQ(e.weight, 1.0);
    EXPECT_THROW(reweight_underrep(data, 0.0), RangeError);
}

TEST(Reweighting, UnderrepIsUnbiased) {
    const TrueModel m{0.3, 0.5, 0.2};
    const auto biased = apply_bias(sample_true(m, 1000000, 51), BiasParams::under_representation(0.5), 52);
    // B labeled all negative: true risk 0.7 * 0.2 + 0.3 * 0.5 = 0.29.
    const ThresholdPair h{m.theta(), 1.0};
    EXPECT_NEAR(weighted_risk(reweight_underrep(biased, 0.5), h).risk, 0.29, 0.003);
    EXPECT_GT(std::abs(weighted_risk(biased, h).risk - 0.29), 0.03);
}

TEST(Reweighting, ZFormula) {
    EXPECT_DOUBLE_EQ(labelbias_Z(0.5, 0.5), 3.0);
    EXPECT_DOUBLE_EQ(labelbias_Z(0.37, 0.0), 1.0);
    EXPECT_THROW(labelbias_Z(0.0, 0.5), RangeError);
    EXPECT_THROW(labelbias_Z(0.5, 1.0), RangeError);
}

TEST(Reweighting, ZEqualsOddsRatio) {
    std::mt19937_64 gen(53);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double q_a = 0.01 + 0.98 * u(gen), nu = 0.99 * u(gen);
        const double q_b = q_a * (1 - nu);
        const double odds_ratio = (q_a / (1 - q_a)) / (q_b / (1 - q_b));
        EXPECT_NEAR(labelbias_Z(q_a, nu), odds_ratio, 1e-9 * odds_ratio);
    }
}

TEST(Reweighting, ZSandwich) {
    std::mt19937_64 gen(54);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        const double eta = 0.001 + 0.498 * u(gen), nu = 0.001 + 0.998 * u(gen), p = 0.001 + 0.998 * u(gen);
        const double q_a = p * (1 - eta) + (1 - p) * eta;
        EXPECT_TRUE(labelbias_Z_interval(eta, nu).contains(labelbias_Z(q_a, nu)))
            << "eta=" << eta << " nu=" << nu << " p=" << p;
    }
}

TEST(Reweighting, LabelbiasRecoversThreshold) {
    const TrueModel m{0.3, 0.5, 0.2};
    const auto biased = apply_bias(sample_true(m, 1000000, 55), BiasParams::labeling(0.5), 56);
    const double z = labelbias_Z(count_labels(biased).positive_fraction(Group::A), estimate_nu(biased));
    const auto data = reweight_labelbias(biased, z);
    const auto st = threshold_stats(data, 101);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 101; ++k)
        if (st[1].error(k) < st[1].error(best)) best = k;
    EXPECT_LT(std::abs(threshold_value(best, 101) - m.theta()), 0.02);
}

TEST(Reweighting, KnifeEdgeIndifference) {
    const TrueModel m{1.0 / 3.0, 0.25, 0.0};
    const BiasParams b{1.0, 1.0 / 3.0, 0.5};
    const auto masses = scale_b_positives(region_masses(m, b), population_reweight_factor(m, b));
    EXPECT_NEAR(biased_error({}, masses, m.p), biased_error({0, 0, m.p, 0}, masses, m.p), 1e-12);
}

TEST(Serialization, SolveReportJson) {
    const auto j = to_json(exact_constrained_erm(kFigureOne, kFigureOneBias));
    EXPECT_EQ(j["chosen_class"], "h_star");
    EXPECT_EQ(j["candidates"].size(), 3u);
}
