// Acceptance criteria, one line per criterion. Run without arguments for all
// of them or with `--criterion N` for one; the exit code is nonzero if any
// selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracle.hpp"

using namespace biased_erm;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) { return shortest(v); }

// Condition lines written out directly from the theorem statement.
double line3(const TrueModel& m, const BiasParams& b) {
    return (1 - m.r) * (1 - 2 * m.eta) +
           m.r * ((1 - m.eta) * b.beta_pos * (1 - 2 * b.nu) - m.eta * b.beta_neg);
}

double line4(const TrueModel& m, const BiasParams& b) {
    return (1 - m.r) * (1 - 2 * m.eta) +
           m.r * ((1 - m.eta) * b.beta_neg - (1 - 2 * b.nu) * b.beta_pos * m.eta);
}

struct Draw {
    TrueModel m;
    BiasParams b;
};

Draw draw(std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto open = [&] { return 1.0 - u(gen); };
    Draw d;
    do d.m.r = u(gen);
    while (d.m.r == 0.0);
    d.m.p = open();
    d.m.eta = 0.5 * u(gen);
    d.b = {open(), open(), u(gen)};
    return d;
}

Outcome criterion1() {
    const auto t0 = Clock::now();
    const double r = 1.0 / 3.0;
    std::size_t checked = 0, bad = 0;
    std::string first;
    for (std::size_t j = 0; j < 200; ++j)
        for (std::size_t i = 0; i < 200; ++i) {
            const double eta = i == 199 ? 0.499 : 0.499 * i / 199.0;
            const double beta = j == 199 ? 1.0 : 0.005 + 0.995 * j / 199.0;
            const double cond = (1 - r) * (1 - 2 * eta) + r * ((1 - eta) * beta - eta);
            if (std::abs(cond) <= 1e-9) continue;
            ++checked;
            const auto rep = exact_constrained_erm({r, 0.5, eta}, BiasParams::under_representation(beta));
            const bool recovers = rep.chosen_class == CandidateClass::BayesOptimal && !rep.tie;
            if (recovers != (cond > 0)) {
                if (bad++ == 0) first = "eta=" + num(eta) + " beta=" + num(beta);
            }
        }
    // The library sweep must classify the same grid identically.
    const auto sweep = recovery_region({r, 0.5, 0.0}, BiasParams::none(), {SweepParam::Eta, 0.0, 0.499, 200},
                                       {SweepParam::BetaPos, 0.005, 1.0, 200});
    std::size_t sweep_bad = 0;
    for (const auto& c : sweep.cells) {
        const double cond = (1 - r) * (1 - 2 * c.x) + r * ((1 - c.x) * c.y - c.x);
        if (std::abs(cond) > 1e-9 && (c.verdict == Verdict::Recovers) != (cond > 0)) ++sweep_bad;
    }
    const double secs = since(t0);
    Outcome o{bad == 0 && sweep_bad == 0 && secs < 10.0, ""};
    o.detail = std::to_string(checked) + " cells, " + std::to_string(bad) + " solver mismatches, " +
               std::to_string(sweep_bad) + " sweep mismatches, " + num(secs) + " s" +
               (first.empty() ? "" : ", first " + first);
    return o;
}

Outcome criterion2() {
    const auto t0 = Clock::now();
    std::mt19937_64 gen(2002);
    std::size_t n = 0, bad = 0, exceptions = 0, h0 = 0, h1 = 0;
    std::string first;
    while (n < 10000) {
        const auto d = draw(gen);
        const double c3 = line3(d.m, d.b), c4 = line4(d.m, d.b);
        if (std::abs(c3) <= 1e-6 || std::abs(c4) <= 1e-6) continue;
        if (!(d.m.p < 1.0)) continue;
        ++n;
        try {
            const auto rep = exact_constrained_erm(d.m, d.b);
            bool ok;
            if (c3 > 0 && c4 > 0) ok = rep.chosen_class == CandidateClass::BayesOptimal;
            else if (c3 < 0 && c4 > 0) ok = rep.chosen_class == CandidateClass::AllNegative, ++h0;
            else if (c4 < 0 && c3 > 0) ok = rep.chosen_class == CandidateClass::AllPositive, ++h1;
            else ok = rep.chosen_class == CandidateClass::AllNegative || rep.chosen_class == CandidateClass::AllPositive;
            if (!ok && bad++ == 0) first = verify::describe(d.m, d.b);
        } catch (const std::exception&) {
            ++exceptions;
        }
    }
    const double secs = since(t0);
    return {bad == 0 && exceptions == 0 && secs < 5.0,
            std::to_string(n) + " tuples (" + std::to_string(h0) + " line-3 failures, " + std::to_string(h1) +
                " line-4 failures), " + std::to_string(bad) + " mismatches, " + std::to_string(exceptions) +
                " exceptions, " + num(secs) + " s" + (first.empty() ? "" : ", first " + first)};
}

Outcome criterion3() {
    const auto t0 = Clock::now();
    std::mt19937_64 gen(3003);
    std::size_t n = 0, bad = 0;
    std::string first;
    while (n < 1000) {
        const auto d = draw(gen);
        const auto exact = exact_constrained_erm(d.m, d.b);
        const double total = region_masses(d.m, d.b).total();
        if (!exact.runner_up_error || (*exact.runner_up_error - exact.biased_error) / total <= 1e-6) continue;
        ++n;
        const auto grid = grid_constrained_erm({Fairness::EqualOpportunity, kAnalyticTolerance}, d.m, d.b, 200);
        if (grid.chosen_class != exact.chosen_class && bad++ == 0) first = verify::describe(d.m, d.b);
    }
    const double secs = since(t0);
    return {bad == 0 && secs < 120.0, std::to_string(n) + " draws, " + std::to_string(bad) + " disagreements, " +
                                          num(secs) + " s" + (first.empty() ? "" : ", first " + first)};
}

Outcome criterion4() {
    std::mt19937_64 gen(4004);
    double worst = 0.0, worst_oracle = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const auto d = draw(gen);
        worst = std::max(worst, std::abs(constraint_gap(Fairness::EqualOpportunity, {}, d.m, d.b)));
        worst_oracle = std::max(worst_oracle, std::abs(oracle::tpr({}, Group::A, d.m, d.b) -
                                                       oracle::tpr({}, Group::B, d.m, d.b)));
    }
    return {worst < 1e-12 && worst_oracle < 1e-12,
            "max |gap| " + num(worst) + " (integration oracle " + num(worst_oracle) + ") over 10000 tuples"};
}

Outcome criterion5() {
    std::mt19937_64 gen(5005);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t bad_support = 0, bad_level = 0, bad_error = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto base = draw(gen);
        const TrueModel m = base.m;
        const DeviationParams d{m.p * u(gen), (1 - m.p) * u(gen), m.p * u(gen), (1 - m.p) * u(gen)};
        const auto s = shrink(d, m);
        for (Group g : {Group::A, Group::B}) {
            const auto before = d.group(g), after = s.group(g);
            if (after.p1 != 0.0 && after.p2 != 0.0) ++bad_support;
            const double c0 = before.p2 * m.eta - before.p1 * (1 - m.eta);
            const double c1 = after.p2 * m.eta - after.p1 * (1 - m.eta);
            if (m.eta > 0.0 && std::abs(c0 - c1) > 1e-12) ++bad_level;
        }
        for (int k = 0; k < 10; ++k) {
            auto other = draw(gen);
            other.m.p = m.p;
            other.m.eta = m.eta;
            if (oracle::biased_error(s, other.m, other.b) > oracle::biased_error(d, other.m, other.b) + 1e-12)
                ++bad_error;
        }
    }
    return {bad_support == 0 && bad_level == 0 && bad_error == 0,
            "10000 tuples: " + std::to_string(bad_support) + " with two nonzero parameters, " +
                std::to_string(bad_level) + " level changes, " + std::to_string(bad_error) + " error increases"};
}

Outcome criterion6() {
    const TrueModel m{1.0 / 3.0, 0.5, 0.0};
    const BiasParams b = BiasParams::under_representation(0.5);
    const double rate_b = biased_positive_rate({}, Group::B, m, b);
    const double rate_b_oracle = oracle::positive_rate({}, Group::B, m, b);
    const double rate_a = biased_positive_rate({}, Group::A, m, b);
    bool infeasible = true;
    for (double tol : {0.0, 1e-6, 0.01, 0.1, 0.16, 1.0 / 6.0 - 1e-12})
        infeasible = infeasible && !satisfies({Fairness::DemographicParity, tol}, {}, m, b);
    const bool feasible_at_sixth = satisfies({Fairness::DemographicParity, 1.0 / 6.0 + 1e-12}, {}, m, b);
    return {std::abs(rate_b - 1.0 / 3.0) < 1e-15 && std::abs(rate_b_oracle - 1.0 / 3.0) < 1e-15 &&
                std::abs(rate_a - 0.5) < 1e-15 && infeasible && feasible_at_sixth,
            "B rate " + num(rate_b) + ", A rate " + num(rate_a) + ", infeasible below 1/6: " +
                (infeasible ? "yes" : "no")};
}

Outcome criterion7() {
    std::mt19937_64 gen(7007);
    std::size_t bad = 0;
    for (int i = 0; i < 1000; ++i) {
        auto d = draw(gen);
        d.m.eta = 0.0;
        if (!(d.m.p < 1.0) || d.b.nu == 0.0) continue;
        const auto mass = oracle::masses(d.m, d.b);
        const double want = -mass[5] / (mass[5] + mass[7]);
        const double got = equalized_odds_gap({}, d.m, d.b).fpr;
        if (!(std::abs(got - want) <= 1e-12 && got != 0.0)) ++bad;
    }
    const TrueModel m{1.0 / 3.0, 0.5, 0.0};
    const BiasParams b = BiasParams::labeling(0.5);
    const ConstraintKind kind{Fairness::EqualizedOdds, 1e-3};
    const auto grid = grid_constrained_erm(kind, m, b, 200);
    const bool star_infeasible = !satisfies(kind, {}, m, b);
    const bool grid_avoids = grid.chosen_class != CandidateClass::BayesOptimal && !grid.candidates[0].feasible;
    return {bad == 0 && star_infeasible && grid_avoids,
            std::to_string(bad) + " fpr-gap mismatches; grid optimum " + verify::describe(grid.chosen) +
                ", h* feasible: " + (star_infeasible ? "no" : "yes")};
}

Outcome criterion8() {
    std::ostringstream detail;
    bool pass = true;
    // (a)
    const double z = labelbias_Z(0.5, 0.5);
    std::mt19937_64 gen(8008);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t outside = 0;
    for (int i = 0; i < 10000; ++i) {
        const double eta = 0.5 * (1.0 - u(gen)) * 0.999999, nu = 1.0 - u(gen), p = 1.0 - u(gen);
        if (!(nu < 1.0) || !(p < 1.0) || !(eta > 0.0)) continue;
        const double q = p * (1 - eta) + (1 - p) * eta;
        const double zz = (1 - q * (1 - nu)) / ((1 - nu) * (1 - q));
        const double lo = (eta + (1 - eta) * nu) / ((1 - eta) * (1 - nu));
        const double hi = (1 - eta + eta * nu) / (eta * (1 - nu));
        if (!(lo < zz && zz < hi) || std::abs(zz - labelbias_Z(q, nu)) > 1e-9 * zz) ++outside;
    }
    pass = pass && z == 3.0 && outside == 0;
    detail << "(a) Z(0.5,0.5)=" << num(z) << ", " << outside << " sandwich violations; ";

    // (b)
    {
        const TrueModel m{1.0 / 3.0, 0.5, 0.2};
        const double beta = 0.3;
        const auto data = reweight_underrep(
            apply_bias(sample_true(m, 1000000, 81), BiasParams::under_representation(beta), 82), beta);
        double worst = 0.0;
        for (int i = 0; i < 50; ++i) {
            const double t = i / 49.0;
            const auto est = weighted_risk(data, {t, t});
            const double truth = oracle::true_error(threshold_pair_deviation(t, t, m), m);
            worst = std::max(worst, std::abs(est.risk - truth) / est.standard_error);
        }
        pass = pass && worst <= 3.0;
        detail << "(b) max |risk - true| / se = " << num(std::round(worst * 1000) / 1000) << "; ";
    }

    // (c)
    {
        const TrueModel m{1.0 / 3.0, 0.25, 0.0};
        const BiasParams b{1.0, 1.0 / 3.0, 0.5};
        const auto mass = oracle::masses(m, b);
        const double q_a = (mass[0] + mass[2]) / (mass[0] + mass[1] + mass[2] + mass[3]);
        const double q_b = (mass[4] + mass[6]) / (mass[4] + mass[5] + mass[6] + mass[7]);
        const double zc = labelbias_Z(q_a, std::max(0.0, 1.0 - q_b / q_a));
        // Weighted B error of h* (negatives in B's positive region) against
        // labeling all of B negative (its weighted positives).
        const double e_star = mass[5] + zc * mass[6];
        const double e_neg = zc * (mass[4] + mass[6]);
        const bool analytic = std::abs(e_star - e_neg) <= 1e-12;

        const auto biased = apply_bias(sample_true(m, 1000000, 83), b, 84);
        const double z_hat = labelbias_Z(count_labels(biased).positive_fraction(Group::A), estimate_nu(biased));
        const auto diff = verify::weighted_risk_difference(reweight_labelbias(biased, z_hat), {m.theta(), m.theta()},
                                                           {m.theta(), 1.0});
        const double zscore = std::abs(diff.risk) / diff.standard_error;
        pass = pass && analytic && zscore <= 3.0;
        detail << "(c) analytic gap " << num(e_star - e_neg) << ", Monte Carlo |diff| / se = "
               << num(std::round(zscore * 1000) / 1000);
    }
    return {pass, detail.str()};
}

Outcome criterion9() {
    struct Case {
        double r0, eta0;
        BiasFamily family;
    };
    const Case cases[] = {{0.5, 1.0 / 3.0, BiasFamily::UnderRepresentation},
                          {1.0 / 3.0, 0.25, BiasFamily::Combined},
                          {0.25, 1.0 / 3.0, BiasFamily::Combined},
                          {0.25, 3.0 / 7.0, BiasFamily::UnderRepresentation}};
    bool pass = true;
    std::ostringstream detail;
    std::uint64_t seed = 9009;
    for (const auto& c : cases) {
        const auto t0 = Clock::now();
        const auto cert = strong_recovery_certificate(c.r0, c.eta0, 10000, seed++, c.family);
        const double secs = since(t0);
        pass = pass && cert.passed && secs < 5.0;
        detail << "(" << num(c.r0) << ", " << num(c.eta0) << ") " << bias_family_name(c.family) << ": "
               << (cert.passed ? "pass" : "fail") << " corner min " << num(cert.corner_min) << "; ";
    }
    // Sanity: the beta -> 0 corner of (1/4, 3/7) sits exactly on zero.
    const double corner = line3({0.25, 0.5, 3.0 / 7.0}, {0.0, 1.0, 0.0});
    pass = pass && std::abs(corner) < 1e-15;
    detail << "beta->0 corner value " << num(corner);
    return {pass, detail.str()};
}

Outcome criterion10() {
    const auto t0 = Clock::now();
    ExperimentConfig c;
    c.model = {1.0 / 3.0, 0.5, 0.2};
    c.bias = {0.3, 1.0, 0.0};
    c.n_train = 100000;
    c.n_reps = 50;
    c.seed = 10010;
    const auto plain = run_experiment(c);
    c.intervention = Intervention::constrained(Fairness::EqualOpportunity, 0.01);
    const auto eo = run_experiment(c);
    std::size_t close_b = 0;
    for (const auto& rep : eo.reps)
        if (rep.status == RepStatus::Ok && std::abs(rep.t_b - c.model.theta()) < 0.02) ++close_b;
    const double secs = since(t0);
    const bool plain_ok = plain.recovery_rate < 0.1;
    const bool eo_ok = eo.recovery_rate >= 0.95 && static_cast<double>(close_b) >= 0.95 * 50;
    std::ostringstream detail;
    detail << "unconstrained recovery " << num(plain.recovery_rate) << " (needs < 0.1: "
           << (plain_ok ? "ok" : "FAILED") << "), mean B true error " << num(plain.mean_true_error_b)
           << "; EO recovery " << num(eo.recovery_rate) << " with " << close_b << "/50 |t_B - theta| < 0.02 ("
           << (eo_ok ? "ok" : "FAILED") << "); " << num(secs) << " s";
    return {plain_ok && eo_ok && secs < 120.0, detail.str()};
}

Outcome criterion11() {
    const auto t0 = Clock::now();
    std::filesystem::create_directories(WORK_DIR);
    const std::string log = std::string(WORK_DIR) + "/verify.log";
    const std::string cmd = std::string("'") + LAB_PATH + "' verify --out '" + WORK_DIR + "/verify' > '" + log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    const int code = WEXITSTATUS(status);
    const double secs = since(t0);
    return {code == 0 && secs < 600.0, "verify exit code " + std::to_string(code) + ", " + num(secs) + " s (log " + log + ")"};
}

const std::vector<std::pair<const char*, std::function<Outcome()>>>& criteria() {
    static const std::vector<std::pair<const char*, std::function<Outcome()>>> all{
        {"Figure-2 reproduction", criterion1},
        {"Theorem-1 consistency and tightness", criterion2},
        {"Oracle equivalence", criterion3},
        {"Lemma-1 invariance", criterion4},
        {"Shrink lemma", criterion5},
        {"Demographic-Parity failure", criterion6},
        {"Equalized-Odds failure under labeling bias", criterion7},
        {"Reweighting", criterion8},
        {"Strong-Recovery certificates", criterion9},
        {"End-to-end empirical", criterion10},
        {"verify command", criterion11},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::size_t> selected;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--criterion" && i + 1 < argc) {
            const int n = std::atoi(argv[++i]);
            if (n < 1 || n > static_cast<int>(criteria().size())) {
                std::cerr << "no criterion " << n << '\n';
                return 2;
            }
            selected.push_back(static_cast<std::size_t>(n));
        } else {
            std::cerr << "usage: acceptance [--criterion N]...\n";
            return 2;
        }
    }
    if (selected.empty())
        for (std::size_t i = 1; i <= criteria().size(); ++i) selected.push_back(i);

    bool all = true;
    for (std::size_t n : selected) {
        const auto& [name, run] = criteria()[n - 1];
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << name << "  [" << o.detail
                  << "]" << std::endl;
    }
    return all ? 0 : 1;
}
