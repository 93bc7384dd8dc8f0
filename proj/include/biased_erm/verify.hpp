#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bias.hpp"
#include "distribution.hpp"
#include "fairness.hpp"
#include "recovery.hpp"
#include "rng.hpp"
#include "solver.hpp"

namespace biased_erm::verify {

struct SuiteResult {
    std::string name;
    bool passed = true;
    std::size_t checks = 0;
    std::size_t failures = 0;
    std::string counterexample;  ///< first failure, human readable
    double seconds = 0.0;

    void check(bool ok, const std::function<std::string()>& describe) {
        ++checks;
        if (ok) return;
        ++failures;
        passed = false;
        if (counterexample.empty()) counterexample = describe();
    }
};

struct Options {
    std::size_t trials = 10000;
    std::size_t oracle_draws = 1000;
    std::size_t oracle_resolution = 200;
    std::size_t monte_carlo_n = 1000000;
    std::uint64_t seed = 20240601;
};

inline std::string describe(const TrueModel& m, const BiasParams& b) {
    std::ostringstream os;
    os << "r=" << shortest(m.r) << " p=" << shortest(m.p) << " eta=" << shortest(m.eta)
       << " beta_pos=" << shortest(b.beta_pos) << " beta_neg=" << shortest(b.beta_neg) << " nu=" << shortest(b.nu);
    return os.str();
}

inline std::string describe(const DeviationParams& d) {
    std::ostringstream os;
    os << "(p1A=" << shortest(d.p1A) << ", p2A=" << shortest(d.p2A) << ", p1B=" << shortest(d.p1B)
       << ", p2B=" << shortest(d.p2B) << ")";
    return os.str();
}

/// Random draws over the full parameter domain.
class TupleSampler {
public:
    explicit TupleSampler(std::uint64_t seed) : gen_(seed) {}

    double unit() { return unit_(gen_); }
    double open_unit() { return 1.0 - unit_(gen_); }  ///< (0, 1]

    ParameterTuple draw() {
        ParameterTuple t;
        do t.model.r = unit();
        while (!(t.model.r > 0.0));
        t.model.p = open_unit();
        t.model.eta = 0.5 * unit();
        t.bias.beta_pos = open_unit();
        t.bias.beta_neg = open_unit();
        t.bias.nu = unit();
        return t;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

namespace detail {

template <class Body>
SuiteResult timed(const std::string& name, Body&& body) {
    SuiteResult res;
    res.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    body(res);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace detail

/// 200 x 200 sweep over (eta, beta) at r = 1/3, p = 1/2: every cell's
/// verdict follows the sign of the under-representation condition, and the
/// exact solver agrees wherever the condition clears 1e-9.
inline SuiteResult figure2(const Options&) {
    return detail::timed("figure2", [](SuiteResult& res) {
        const TrueModel base{1.0 / 3.0, 0.5, 0.0};
        const auto sweep = recovery_region(base, BiasParams::none(), {SweepParam::Eta, 0.0, 0.499, 200},
                                           {SweepParam::BetaPos, 0.005, 1.0, 200});
        for (const auto& c : sweep.cells) {
            const double r = base.r, eta = c.x, beta = c.y;
            const double cond = (1 - r) * (1 - 2 * eta) + r * ((1 - eta) * beta - eta);
            if (std::abs(cond) <= 1e-9) continue;
            const Verdict want = cond > 0 ? Verdict::Recovers : Verdict::FailsToH0;
            res.check(c.verdict == want && c.solver_agrees, [&] {
                return "eta=" + shortest(eta) + " beta=" + shortest(beta) + " verdict=" + verdict_name(c.verdict) +
                       " expected=" + verdict_name(want) + (c.solver_agrees ? "" : " (solver disagrees)");
            });
        }
    });
}

/// The exact solver returns h* iff both conditions are positive.
inline SuiteResult consistency(const Options& o) {
    return detail::timed("consistency", [&](SuiteResult& res) {
        TupleSampler s(o.seed ^ 0x01);
        std::size_t drawn = 0;
        while (res.checks < o.trials && drawn < 100 * o.trials) {
            ++drawn;
            const auto t = s.draw();
            const auto c = check_conditions(t.model, t.bias);
            if (std::abs(c.cond_neg) <= 1e-6 || std::abs(c.cond_pos) <= 1e-6) continue;
            try {
                const auto rep = exact_constrained_erm(t.model, t.bias);
                const bool got = rep.chosen_class == CandidateClass::BayesOptimal && !rep.tie;
                res.check(got == c.recovers, [&] {
                    return describe(t.model, t.bias) + ": solver chose " + candidate_name(rep.chosen_class) +
                           " but conditions say " + (c.recovers ? "recover" : "fail");
                });
            } catch (const std::exception& e) {
                res.check(false, [&] { return describe(t.model, t.bias) + ": exception " + e.what(); });
            }
        }
    });
}

/// When exactly one condition fails, the solver lands on the extreme it names.
inline SuiteResult tightness(const Options& o) {
    return detail::timed("tightness", [&](SuiteResult& res) {
        TupleSampler s(o.seed ^ 0x02);
        std::size_t drawn = 0;
        while (res.checks < o.trials && drawn < 1000 * o.trials) {
            ++drawn;
            const auto t = s.draw();
            if (!(t.model.p < 1.0)) continue;
            const auto c = check_conditions(t.model, t.bias);
            const bool neg_fails = c.cond_neg < -1e-6, pos_fails = c.cond_pos < -1e-6;
            if (neg_fails == pos_fails || std::min(std::abs(c.cond_neg), std::abs(c.cond_pos)) <= 1e-6) continue;
            const auto rep = exact_constrained_erm(t.model, t.bias);
            const auto want = neg_fails ? CandidateClass::AllNegative : CandidateClass::AllPositive;
            res.check(rep.chosen_class == want, [&] {
                return describe(t.model, t.bias) + ": expected " + candidate_name(want) + ", solver chose " +
                       candidate_name(rep.chosen_class);
            });
        }
    });
}

/// Lattice search agrees with the three-candidate solver.
inline SuiteResult oracle(const Options& o) {
    return detail::timed("oracle", [&](SuiteResult& res) {
        TupleSampler s(o.seed ^ 0x03);
        std::size_t drawn = 0;
        while (res.checks < o.oracle_draws && drawn < 100 * o.oracle_draws) {
            ++drawn;
            const auto t = s.draw();
            const auto exact = exact_constrained_erm(t.model, t.bias);
            const auto masses = region_masses(t.model, t.bias);
            if (!exact.runner_up_error || (*exact.runner_up_error - exact.biased_error) / masses.total() <= 1e-6)
                continue;
            const auto grid = grid_constrained_erm({Fairness::EqualOpportunity, kAnalyticTolerance}, t.model, t.bias,
                                                   o.oracle_resolution);
            res.check(grid.chosen_class == exact.chosen_class, [&] {
                return describe(t.model, t.bias) + ": exact " + candidate_name(exact.chosen_class) + ", grid " +
                       describe(grid.chosen);
            });
        }
    });
}

/// The Bayes-optimal pair has zero equal-opportunity gap under every bias.
inline SuiteResult lemma1(const Options& o) {
    return detail::timed("lemma1", [&](SuiteResult& res) {
        TupleSampler s(o.seed ^ 0x04);
        for (std::size_t i = 0; i < o.trials; ++i) {
            const auto t = s.draw();
            const double gap =
                constraint_gap(Fairness::EqualOpportunity, DeviationParams::bayes_optimal(), t.model, t.bias);
            res.check(std::abs(gap) < 1e-12,
                      [&] { return describe(t.model, t.bias) + ": gap " + shortest(gap); });
        }
    });
}

/// Shrinking leaves one nonzero parameter per group, keeps each constraint
/// level, and never raises the biased error.
inline SuiteResult shrink(const Options& o) {
    return detail::timed("shrink", [&](SuiteResult& res) {
        TupleSampler s(o.seed ^ 0x05);
        for (std::size_t i = 0; i < o.trials; ++i) {
            TrueModel m;
            do m.r = s.unit();
            while (!(m.r > 0.0));
            m.p = s.open_unit();
            m.eta = 0.5 * s.unit();
            const double q = 1.0 - m.p;
            const DeviationParams d{m.p * s.unit(), q * s.unit(), m.p * s.unit(), q * s.unit()};
            const auto out = biased_erm::shrink(d, m);
            bool ok = true;
            std::string why;
            for (Group g : {Group::A, Group::B}) {
                const auto before = d.group(g), after = out.group(g);
                if (after.p1 != 0.0 && after.p2 != 0.0) ok = false, why = "two nonzero parameters";
                if (std::abs(constraint_level(before, m.eta).c - constraint_level(after, m.eta).c) > 1e-12 &&
                    m.eta > 0.0)
                    ok = false, why = "constraint level moved";
            }
            for (int k = 0; k < 10 && ok; ++k) {
                TrueModel mm = m;
                do mm.r = s.unit();
                while (!(mm.r > 0.0));
                const BiasParams b{s.open_unit(), s.open_unit(), s.unit()};
                const auto masses = region_masses(mm, b);
                const double e0 = biased_error(d, masses, m.p), e1 = biased_error(out, masses, m.p);
                if (e1 > e0 + 1e-12 * std::max(1.0, e0)) {
                    ok = false;
                    why = "biased error rose from " + shortest(e0) + " to " + shortest(e1) + " under " +
                          describe(mm, b);
                }
            }
            res.check(ok, [&] { return "p=" + shortest(m.p) + " eta=" + shortest(m.eta) + " " + describe(d) + ": " + why; });
        }
    });
}

/// Under positive under-representation alone, h* gives B a biased positive
/// rate of 1/3 against A's 1/2, so demographic parity rules it out.
inline SuiteResult dp_failure(const Options&) {
    return detail::timed("dp-failure", [](SuiteResult& res) {
        const TrueModel m{1.0 / 3.0, 0.5, 0.0};
        const BiasParams b = BiasParams::under_representation(0.5);
        const auto h = DeviationParams::bayes_optimal();
        const double rate_b = biased_positive_rate(h, Group::B, m, b);
        res.check(std::abs(rate_b - 1.0 / 3.0) <= 1e-15, [&] { return "B positive rate " + shortest(rate_b); });
        const double gap = constraint_gap(Fairness::DemographicParity, h, m, b);
        res.check(std::abs(gap - 1.0 / 6.0) <= 1e-15, [&] { return "gap " + shortest(gap); });
        for (double tol : {1e-3, 0.05, 0.1, 1.0 / 6.0 - 1e-9})
            res.check(!satisfies({Fairness::DemographicParity, tol}, h, m, b),
                      [&] { return "h* satisfies parity at tolerance " + shortest(tol); });
        const auto grid = grid_constrained_erm({Fairness::DemographicParity, 0.01}, m, b, 50);
        res.check(grid.chosen_class != CandidateClass::BayesOptimal,
                  [] { return "parity-constrained grid search returned h*"; });
    });
}

/// Labeling bias with eta = 0 gives h* a nonzero false-positive-rate gap of
/// -R6 / (R6 + R8), so equalized odds cannot select it.
inline SuiteResult eodds_failure(const Options& o) {
    return detail::timed("eodds-failure", [&](SuiteResult& res) {
        TupleSampler s(o.seed ^ 0x07);
        const std::size_t n = std::min<std::size_t>(o.trials, 1000);
        for (std::size_t i = 0; i < n; ++i) {
            auto t = s.draw();
            t.model.eta = 0.0;
            if (!(t.model.p < 1.0)) continue;
            do t.bias.nu = s.unit();
            while (!(t.bias.nu > 0.0));
            const auto masses = region_masses(t.model, t.bias);
            const double want = -masses.R(6) / (masses.R(6) + masses.R(8));
            const double got = equalized_odds_gap(DeviationParams::bayes_optimal(), t.model, t.bias).fpr;
            res.check(std::abs(got - want) <= 1e-12 && got != 0.0, [&] {
                return describe(t.model, t.bias) + ": fpr gap " + shortest(got) + " expected " + shortest(want);
            });
        }
        const TrueModel m{1.0 / 3.0, 0.5, 0.0};
        const BiasParams b = BiasParams::labeling(0.5);
        const ConstraintKind kind{Fairness::EqualizedOdds, 1e-3};
        res.check(!satisfies(kind, DeviationParams::bayes_optimal(), m, b),
                  [] { return "h* satisfies equalized odds at nu=0.5"; });
        const auto grid = grid_constrained_erm(kind, m, b, 100);
        res.check(grid.chosen_class != CandidateClass::BayesOptimal,
                  [&] { return "grid search returned h* " + describe(grid.chosen); });
    });
}

/// Paired weighted-risk difference between two threshold rules, with its
/// standard error.
inline RiskEstimate weighted_risk_difference(const Dataset& data, const ThresholdPair& h1, const ThresholdPair& h2) {
    double total = 0.0, diff = 0.0;
    for (const auto& e : data.examples) {
        total += e.weight;
        const double l1 = (h1.predicts(e.group, e.x) ? 1 : 0) != e.label ? 1.0 : 0.0;
        const double l2 = (h2.predicts(e.group, e.x) ? 1 : 0) != e.label ? 1.0 : 0.0;
        diff += e.weight * (l1 - l2);
    }
    const double mean = diff / total;
    double ss = 0.0;
    for (const auto& e : data.examples) {
        const double l1 = (h1.predicts(e.group, e.x) ? 1 : 0) != e.label ? 1.0 : 0.0;
        const double l2 = (h2.predicts(e.group, e.x) ? 1 : 0) != e.label ? 1.0 : 0.0;
        const double dev = e.weight * (l1 - l2 - mean);
        ss += dev * dev;
    }
    return {mean, std::sqrt(ss) / total};
}

/// Reweighting factor, its sandwich, unbiased under-representation weights,
/// and the knife-edge of the combined model.
inline SuiteResult reweighting(const Options& o) {
    return detail::timed("reweighting", [&](SuiteResult& res) {
        res.check(labelbias_Z(0.5, 0.5) == 3.0, [] { return "Z(0.5, 0.5) = " + shortest(labelbias_Z(0.5, 0.5)); });

        TupleSampler s(o.seed ^ 0x08);
        for (std::size_t i = 0; i < o.trials; ++i) {
            double eta, nu, p;
            do eta = 0.5 * s.unit();
            while (!(eta > 0.0));
            do nu = s.unit();
            while (!(nu > 0.0));
            p = s.open_unit();
            if (!(p < 1.0)) continue;
            const double q_a = p * (1 - eta) + (1 - p) * eta;
            const double z = labelbias_Z(q_a, nu);
            const auto iv = labelbias_Z_interval(eta, nu);
            res.check(iv.contains(z), [&] {
                return "eta=" + shortest(eta) + " nu=" + shortest(nu) + " p=" + shortest(p) + ": Z=" + shortest(z) +
                       " outside (" + shortest(iv.lower) + ", " + shortest(iv.upper) + ")";
            });
        }

        {
            const TrueModel m{1.0 / 3.0, 0.5, 0.2};
            const BiasParams b = BiasParams::under_representation(0.3);
            const auto clean = sample_true(m, o.monte_carlo_n, rng::derive_seed(o.seed, 8, 0));
            const auto data = reweight_underrep(apply_bias(clean, b, rng::derive_seed(o.seed, 8, 1)), b.beta_pos);
            for (int i = 0; i < 50; ++i) {
                const double t = i / 49.0;
                const auto est = weighted_risk(data, {t, t});
                const double truth = analytic_true_error(threshold_pair_deviation(t, t, m), m);
                res.check(std::abs(est.risk - truth) <= 3.0 * est.standard_error, [&] {
                    return "t=" + shortest(t) + ": weighted risk " + shortest(est.risk) + " vs true error " +
                           shortest(truth) + " (se " + shortest(est.standard_error) + ")";
                });
            }
        }

        {
            const TrueModel m{1.0 / 3.0, 0.25, 0.0};
            const BiasParams b{1.0, 1.0 / 3.0, 0.5};
            const double z = population_reweight_factor(m, b);
            const auto masses = scale_b_positives(region_masses(m, b), z);
            const DeviationParams b_negative{0.0, 0.0, m.p, 0.0};
            const double e_star = biased_error(DeviationParams::bayes_optimal(), masses, m.p);
            const double e_neg = biased_error(b_negative, masses, m.p);
            res.check(std::abs(e_star - e_neg) <= 1e-12,
                      [&] { return "knife edge: h* " + shortest(e_star) + " vs B all-negative " + shortest(e_neg); });

            const auto clean = sample_true(m, o.monte_carlo_n, rng::derive_seed(o.seed, 8, 2));
            const auto biased = apply_bias(clean, b, rng::derive_seed(o.seed, 8, 3));
            const double nu_hat = estimate_nu(biased);
            const double z_hat = labelbias_Z(count_labels(biased).positive_fraction(Group::A), nu_hat);
            const auto data = reweight_labelbias(biased, z_hat);
            const double theta = m.theta();
            const auto d = weighted_risk_difference(data, {theta, theta}, {theta, 1.0});
            res.check(std::abs(d.risk) <= 3.0 * d.standard_error, [&] {
                return "knife edge Monte Carlo: risk difference " + shortest(d.risk) + " (se " +
                       shortest(d.standard_error) + ")";
            });
        }
    });
}

inline SuiteResult strong_recovery(const Options& o) {
    return detail::timed("strong-recovery", [&](SuiteResult& res) {
        struct Case {
            double r0, eta0;
            BiasFamily family;
        };
        const Case cases[] = {{0.5, 1.0 / 3.0, BiasFamily::UnderRepresentation},
                              {1.0 / 3.0, 0.25, BiasFamily::Combined},
                              {0.25, 1.0 / 3.0, BiasFamily::Combined},
                              {0.25, 3.0 / 7.0, BiasFamily::UnderRepresentation}};
        for (std::size_t i = 0; i < std::size(cases); ++i) {
            const auto& c = cases[i];
            const auto cert = strong_recovery_certificate(c.r0, c.eta0, o.trials, rng::derive_seed(o.seed, 9, i), c.family);
            res.check(cert.passed, [&] {
                std::string msg = "(" + shortest(c.r0) + ", " + shortest(c.eta0) + ") " + bias_family_name(c.family);
                if (cert.counterexample) msg += ": " + describe(cert.counterexample->model, cert.counterexample->bias);
                return msg;
            });
        }
    });
}

struct SuiteEntry {
    const char* name;
    SuiteResult (*run)(const Options&);
};

inline const std::vector<SuiteEntry>& suites() {
    static const std::vector<SuiteEntry> all{
        {"figure2", figure2},   {"consistency", consistency}, {"tightness", tightness},
        {"oracle", oracle},     {"lemma1", lemma1},           {"shrink", shrink},
        {"dp-failure", dp_failure}, {"eodds-failure", eodds_failure}, {"reweighting", reweighting},
        {"strong-recovery", strong_recovery},
    };
    return all;
}

}  // namespace biased_erm::verify
