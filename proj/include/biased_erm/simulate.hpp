#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bias.hpp"
#include "distribution.hpp"
#include "errors.hpp"
#include "fairness.hpp"
#include "parallel.hpp"
#include "recovery.hpp"
#include "rng.hpp"
#include "solver.hpp"

namespace biased_erm {

enum class InterventionKind { None, Constraint, ReweightUnderrep, ReweightLabelbias };

inline const char* intervention_name(InterventionKind k) noexcept {
    switch (k) {
        case InterventionKind::None: return "none";
        case InterventionKind::Constraint: return "constraint";
        case InterventionKind::ReweightUnderrep: return "reweight-ur";
        case InterventionKind::ReweightLabelbias: return "reweight-lb";
    }
    return "?";
}

struct Intervention {
    InterventionKind kind = InterventionKind::None;
    ConstraintKind constraint{Fairness::EqualOpportunity, 0.01};  ///< used by Constraint only

    static Intervention none() { return {}; }
    static Intervention constrained(Fairness f, double tolerance) {
        return {InterventionKind::Constraint, {f, tolerance}};
    }
};

struct ExperimentConfig {
    TrueModel model;
    BiasParams bias;
    Intervention intervention;
    std::size_t n_train = 100000;
    std::size_t n_reps = 20;
    std::size_t threshold_grid = 101;
    std::uint64_t seed = 1;
    double recovery_tolerance = 0.02;  ///< |t - theta| must stay below this in both groups
    std::size_t holdout_n = 0;         ///< >0 adds a sampled true-error estimate per rep
};

inline void validate_config(const ExperimentConfig& c) {
    validate_model(c.model);
    validate_bias(c.bias);
    if (c.n_train < 1) throw RangeError("n_train", "must be at least 1");
    if (c.n_reps < 1) throw RangeError("n_reps", "must be at least 1");
    if (c.threshold_grid < 2) throw RangeError("threshold_grid", "must be at least 2");
    if (!(c.recovery_tolerance > 0.0)) throw RangeError("recovery_tolerance", "must be positive");
    if (c.intervention.kind == InterventionKind::Constraint && !(c.intervention.constraint.tolerance > 0.0))
        throw RangeError("tolerance", "empirical constraints need a positive tolerance");
}

enum class RepStatus { Ok, NoFeasiblePoint, EstimationFailed };

inline const char* rep_status_name(RepStatus s) noexcept {
    switch (s) {
        case RepStatus::Ok: return "ok";
        case RepStatus::NoFeasiblePoint: return "no_feasible_point";
        case RepStatus::EstimationFailed: return "estimation_failed";
    }
    return "?";
}

struct RepResult {
    RepStatus status = RepStatus::Ok;
    double t_a = 0.0;
    double t_b = 0.0;
    double true_error = 0.0;
    double true_error_a = 0.0;
    double true_error_b = 0.0;
    bool recovered = false;
    CandidateClass candidate = CandidateClass::Other;
    std::optional<double> weight;         ///< reweighting factor applied to B positives
    std::optional<double> holdout_error;  ///< sampled true error, when requested
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<RepResult> reps;
    double mean_true_error = 0.0;
    double sd_true_error = 0.0;
    double mean_true_error_b = 0.0;
    double recovery_rate = 0.0;
    std::size_t no_feasible = 0;
    std::size_t estimation_failed = 0;
};

inline double threshold_value(std::size_t k, std::size_t grid) noexcept {
    return k + 1 == grid ? 1.0 : static_cast<double>(k) / static_cast<double>(grid - 1);
}

/// Per-group weighted totals for every threshold of the grid: `pos_hit[k]`
/// and `neg_hit[k]` sum the weights of apparent positives/negatives with
/// x >= t_k.
struct ThresholdStats {
    double pos = 0.0, neg = 0.0;
    std::vector<double> pos_hit, neg_hit;

    [[nodiscard]] double error(std::size_t k) const noexcept { return (pos - pos_hit[k]) + neg_hit[k]; }
    [[nodiscard]] GroupRates rates(std::size_t k) const noexcept {
        return rates_from_totals(pos, neg, pos_hit[k], neg_hit[k]);
    }
};

inline std::array<ThresholdStats, 2> threshold_stats(const Dataset& data, std::size_t grid) {
    std::array<ThresholdStats, 2> st;
    std::vector<double> bins_pos[2], bins_neg[2];
    for (int g = 0; g < 2; ++g) {
        bins_pos[g].assign(grid, 0.0);
        bins_neg[g].assign(grid, 0.0);
    }
    const double scale = static_cast<double>(grid - 1);
    for (const auto& e : data.examples) {
        // Largest k with t_k <= x, using the exact grid values.
        auto k = static_cast<std::size_t>(std::clamp(std::floor(e.x * scale), 0.0, scale));
        while (k + 1 < grid && e.x >= threshold_value(k + 1, grid)) ++k;
        while (k > 0 && e.x < threshold_value(k, grid)) --k;
        const int g = e.group == Group::A ? 0 : 1;
        (e.label == 1 ? bins_pos[g] : bins_neg[g])[k] += e.weight;
    }
    for (int g = 0; g < 2; ++g) {
        auto& s = st[static_cast<std::size_t>(g)];
        s.pos_hit.assign(grid, 0.0);
        s.neg_hit.assign(grid, 0.0);
        double acc_p = 0.0, acc_n = 0.0;
        for (std::size_t k = grid; k-- > 0;) {
            acc_p += bins_pos[g][k];
            acc_n += bins_neg[g][k];
            s.pos_hit[k] = acc_p;
            s.neg_hit[k] = acc_n;
        }
        s.pos = acc_p;
        s.neg = acc_n;
    }
    return st;
}

struct ThresholdChoice {
    std::size_t k_a = 0;
    std::size_t k_b = 0;
};

/// Weighted ERM over threshold pairs, optionally restricted to pairs whose
/// empirical constraint gap is within tolerance. Ties keep the first pair in
/// (k_a, k_b) order.
inline std::optional<ThresholdChoice> threshold_erm(const std::array<ThresholdStats, 2>& st, std::size_t grid,
                                                    const std::optional<ConstraintKind>& constraint) {
    if (!constraint) {
        ThresholdChoice c;
        for (std::size_t k = 1; k < grid; ++k) {
            if (st[0].error(k) < st[0].error(c.k_a)) c.k_a = k;
            if (st[1].error(k) < st[1].error(c.k_b)) c.k_b = k;
        }
        return c;
    }
    std::optional<ThresholdChoice> best;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t ka = 0; ka < grid; ++ka) {
        const GroupRates ra = st[0].rates(ka);
        for (std::size_t kb = 0; kb < grid; ++kb) {
            const double err = st[0].error(ka) + st[1].error(kb);
            if (!(err < best_err)) continue;
            double gap = 0.0;
            try {
                gap = empirical_gap(constraint->kind, ra, st[1].rates(kb));
            } catch (const InsufficientData&) {
                return std::nullopt;
            }
            if (!constraint->satisfied(gap)) continue;
            best_err = err;
            best = ThresholdChoice{ka, kb};
        }
    }
    return best;
}

inline RepResult run_rep(const ExperimentConfig& cfg, std::size_t rep) {
    const auto& m = cfg.model;
    RepResult out;
    const Dataset clean = sample_true(m, cfg.n_train, rng::derive_seed(cfg.seed, 0, rep));
    Dataset data = apply_bias(clean, cfg.bias, rng::derive_seed(cfg.seed, 1, rep));
    std::optional<ConstraintKind> constraint;
    try {
        switch (cfg.intervention.kind) {
            case InterventionKind::None: break;
            case InterventionKind::Constraint: constraint = cfg.intervention.constraint; break;
            case InterventionKind::ReweightUnderrep: {
                const double beta = std::min(estimate_beta(data), 1.0);
                data = reweight_underrep(data, beta);
                out.weight = 1.0 / beta;
                break;
            }
            case InterventionKind::ReweightLabelbias: {
                const double nu = estimate_nu(data);
                const double q_a = count_labels(data).positive_fraction(Group::A);
                const double z = labelbias_Z(q_a, nu);
                data = reweight_labelbias(data, z);
                out.weight = z;
                break;
            }
        }
    } catch (const Error&) {
        out.status = RepStatus::EstimationFailed;
        return out;
    }
    const auto st = threshold_stats(data, cfg.threshold_grid);
    const auto choice = threshold_erm(st, cfg.threshold_grid, constraint);
    if (!choice) {
        out.status = RepStatus::NoFeasiblePoint;
        return out;
    }
    out.t_a = threshold_value(choice->k_a, cfg.threshold_grid);
    out.t_b = threshold_value(choice->k_b, cfg.threshold_grid);
    const auto dev = threshold_pair_deviation(out.t_a, out.t_b, m);
    out.true_error = analytic_true_error(dev, m);
    out.true_error_a = analytic_group_true_error(dev.group(Group::A), m);
    out.true_error_b = analytic_group_true_error(dev.group(Group::B), m);
    const double theta = m.theta();
    const double tol = cfg.recovery_tolerance;
    out.recovered = std::abs(out.t_a - theta) < tol && std::abs(out.t_b - theta) < tol;
    if (out.recovered)
        out.candidate = CandidateClass::BayesOptimal;
    else if (out.t_a >= 1.0 - tol && out.t_b >= 1.0 - tol)
        out.candidate = CandidateClass::AllNegative;
    else if (out.t_a <= tol && out.t_b <= tol)
        out.candidate = CandidateClass::AllPositive;
    if (cfg.holdout_n > 0) {
        const Dataset holdout = sample_true(m, cfg.holdout_n, rng::derive_seed(cfg.seed, 2, rep));
        out.holdout_error = weighted_risk(holdout, {out.t_a, out.t_b}).risk;
    }
    return out;
}

/// Repeated draw-corrupt-intervene-fit cycles. Each repetition has its own
/// seeds derived from the master seed, and aggregation runs in repetition
/// order, so results do not depend on the worker count.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    ExperimentResult res;
    res.config = cfg;
    res.reps.resize(cfg.n_reps);
    parallel_for(cfg.n_reps, [&](std::size_t rep) { res.reps[rep] = run_rep(cfg, rep); });

    std::size_t ok = 0, recovered = 0;
    double sum = 0.0, sum_b = 0.0;
    for (const auto& r : res.reps) {
        if (r.status == RepStatus::NoFeasiblePoint) ++res.no_feasible;
        if (r.status == RepStatus::EstimationFailed) ++res.estimation_failed;
        if (r.status != RepStatus::Ok) continue;
        ++ok;
        sum += r.true_error;
        sum_b += r.true_error_b;
        if (r.recovered) ++recovered;
    }
    res.recovery_rate = static_cast<double>(recovered) / static_cast<double>(cfg.n_reps);
    if (ok > 0) {
        res.mean_true_error = sum / static_cast<double>(ok);
        res.mean_true_error_b = sum_b / static_cast<double>(ok);
        double ss = 0.0;
        for (const auto& r : res.reps)
            if (r.status == RepStatus::Ok) ss += (r.true_error - res.mean_true_error) * (r.true_error - res.mean_true_error);
        res.sd_true_error = ok > 1 ? std::sqrt(ss / static_cast<double>(ok - 1)) : 0.0;
    }
    return res;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j{{"model", {{"r", c.model.r}, {"p", c.model.p}, {"eta", c.model.eta}}},
                     {"bias", {{"beta_pos", c.bias.beta_pos}, {"beta_neg", c.bias.beta_neg}, {"nu", c.bias.nu}}},
                     {"intervention", intervention_name(c.intervention.kind)},
                     {"n_train", c.n_train},
                     {"n_reps", c.n_reps},
                     {"threshold_grid", c.threshold_grid},
                     {"seed", c.seed},
                     {"recovery_tolerance", c.recovery_tolerance},
                     {"holdout_n", c.holdout_n}};
    if (c.intervention.kind == InterventionKind::Constraint) {
        j["constraint"] = fairness_name(c.intervention.constraint.kind);
        j["tolerance"] = c.intervention.constraint.tolerance;
    }
    return j;
}

inline nlohmann::json to_json(const ExperimentResult& r) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& x : r.reps) {
        nlohmann::json e{{"status", rep_status_name(x.status)}};
        if (x.status == RepStatus::Ok) {
            e["t_a"] = x.t_a;
            e["t_b"] = x.t_b;
            e["true_error"] = x.true_error;
            e["true_error_a"] = x.true_error_a;
            e["true_error_b"] = x.true_error_b;
            e["recovered"] = x.recovered;
            e["candidate"] = candidate_name(x.candidate);
        }
        if (x.weight) e["weight"] = *x.weight;
        if (x.holdout_error) e["holdout_error"] = *x.holdout_error;
        reps.push_back(e);
    }
    return {{"config", to_json(r.config)},
            {"mean_true_error", r.mean_true_error},
            {"sd_true_error", r.sd_true_error},
            {"mean_true_error_b", r.mean_true_error_b},
            {"recovery_rate", r.recovery_rate},
            {"no_feasible_point", r.no_feasible},
            {"estimation_failed", r.estimation_failed},
            {"reps", reps}};
}

inline void write_experiment_csv(std::ostream& os, const ExperimentResult& r) {
    os << "rep,status,t_a,t_b,true_error,true_error_a,true_error_b,recovered,candidate\n";
    for (std::size_t i = 0; i < r.reps.size(); ++i) {
        const auto& x = r.reps[i];
        os << i << ',' << rep_status_name(x.status);
        if (x.status == RepStatus::Ok)
            os << ',' << shortest(x.t_a) << ',' << shortest(x.t_b) << ',' << shortest(x.true_error) << ','
               << shortest(x.true_error_a) << ',' << shortest(x.true_error_b) << ',' << (x.recovered ? 1 : 0) << ','
               << candidate_name(x.candidate);
        else
            os << ",,,,,,0,";
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Intervention x bias-model summary

enum class TableRow { Unconstrained, EqualOpportunity, EqualizedOdds, Reweighting };

inline const char* table_row_name(TableRow r) noexcept {
    switch (r) {
        case TableRow::Unconstrained: return "Unconstrained ERM";
        case TableRow::EqualOpportunity: return "Equal Opportunity-ERM";
        case TableRow::EqualizedOdds: return "Equalized Odds-ERM";
        case TableRow::Reweighting: return "Re-weighting Class B";
    }
    return "?";
}

inline const char* bias_family_title(BiasFamily f) noexcept {
    switch (f) {
        case BiasFamily::UnderRepresentation: return "Under-Representation";
        case BiasFamily::Labeling: return "Labeling Bias";
        case BiasFamily::Combined: return "Both";
    }
    return "?";
}

struct TableConfig {
    TableRow row = TableRow::EqualOpportunity;
    BiasFamily column = BiasFamily::UnderRepresentation;
    ExperimentConfig experiment;  ///< its intervention is derived from `row`
};

struct AnalyticCell {
    bool recovers = false;
    double margin = 0.0;  ///< distance from the decision boundary, in normalized biased error
    std::string note;
};

struct TableCell {
    TableConfig config;
    AnalyticCell analytic;
    std::optional<double> empirical_rate;
    [[nodiscard]] std::optional<bool> empirical_recovers() const {
        if (!empirical_rate) return std::nullopt;
        return *empirical_rate >= 0.9;
    }
    /// Disagreement only counts where the analytic margin clears 1e-3.
    [[nodiscard]] bool consistent() const {
        const auto e = empirical_recovers();
        return !e || *e == analytic.recovers || analytic.margin <= 1e-3;
    }
};

namespace detail {

/// Smallest |positive - negative| over the regions, normalized: how far the
/// region-wise majority vote is from flipping.
inline double vote_margin(const RegionMasses& masses, double p) {
    double margin = std::numeric_limits<double>::infinity();
    for (Group g : {Group::A, Group::B}) {
        margin = std::min(margin, std::abs(masses.at(g, true, 1) - masses.at(g, true, 0)));
        if (p < 1.0) margin = std::min(margin, std::abs(masses.at(g, false, 1) - masses.at(g, false, 0)));
    }
    return margin / masses.total();
}

inline AnalyticCell analytic_equal_opportunity(const TrueModel& m, const BiasParams& b) {
    const auto rep = exact_constrained_erm(m, b);
    const auto masses = region_masses(m, b);
    AnalyticCell cell;
    cell.recovers = rep.chosen_class == CandidateClass::BayesOptimal && !rep.tie;
    cell.margin = rep.runner_up_error ? (*rep.runner_up_error - rep.biased_error) / masses.total() : 0.0;
    const auto cond = check_conditions(m, b);
    if (!cell.recovers)
        cell.note = cond.failing_extreme ? std::string("fails to ") + failing_name(*cond.failing_extreme) : "tie";
    return cell;
}

}  // namespace detail

/// Infinite-sample verdict for one cell.
inline AnalyticCell analytic_cell(TableRow row, const TrueModel& m, const BiasParams& b) {
    const auto masses = region_masses(m, b);
    switch (row) {
        case TableRow::Unconstrained: {
            const auto opt = unconstrained_optimum(masses, m.p);
            AnalyticCell cell{opt.params == DeviationParams::bayes_optimal() && !opt.tie,
                              detail::vote_margin(masses, m.p), ""};
            if (!cell.recovers) cell.note = std::string("optimum is ") + candidate_name(classify(opt.params, m.p));
            return cell;
        }
        case TableRow::EqualOpportunity: return detail::analytic_equal_opportunity(m, b);
        case TableRow::EqualizedOdds: {
            // The equalized-odds feasible set sits inside the equal-opportunity
            // one and contains all three extremes, so the optimum agrees with
            // the equal-opportunity optimum whenever h* is feasible.
            const double fpr_gap = equalized_odds_gap(DeviationParams::bayes_optimal(), m, b).fpr;
            if (std::abs(fpr_gap) > 1e-9) return {false, std::abs(fpr_gap), "h* violates equalized odds"};
            return detail::analytic_equal_opportunity(m, b);
        }
        case TableRow::Reweighting: {
            const double z = population_reweight_factor(m, b);
            const auto weighted = scale_b_positives(masses, z);
            const auto opt = unconstrained_optimum(weighted, m.p);
            AnalyticCell cell{opt.params == DeviationParams::bayes_optimal() && !opt.tie,
                              detail::vote_margin(weighted, m.p), ""};
            if (!cell.recovers)
                cell.note = opt.tie ? "indifferent after reweighting"
                                    : std::string("optimum is ") + candidate_name(classify(opt.params, m.p));
            return cell;
        }
    }
    return {};
}

inline Intervention row_intervention(TableRow row, BiasFamily column, std::size_t n_train) {
    const double tol = default_empirical_tolerance(n_train);
    switch (row) {
        case TableRow::Unconstrained: return Intervention::none();
        case TableRow::EqualOpportunity: return Intervention::constrained(Fairness::EqualOpportunity, tol);
        case TableRow::EqualizedOdds: return Intervention::constrained(Fairness::EqualizedOdds, tol);
        case TableRow::Reweighting:
            return {column == BiasFamily::UnderRepresentation ? InterventionKind::ReweightUnderrep
                                                              : InterventionKind::ReweightLabelbias,
                    {}};
    }
    return {};
}

/// Parameters of one bias-model column.
struct ColumnParams {
    TrueModel model;
    BiasParams bias;
};

/// Default columns: every one satisfies both recovery conditions, and each
/// is corrupted enough that plain ERM fails.
inline std::array<ColumnParams, 3> default_table_columns() {
    return {{
        {{0.25, 0.5, 0.2}, {0.2, 1.0, 0.0}},
        {{0.25, 0.5, 0.1}, {1.0, 1.0, 0.5}},
        {{0.25, 0.25, 0.0}, {1.0, 1.0 / 3.0, 0.6}},
    }};
}

inline std::vector<TableConfig> table_configs(const std::array<ColumnParams, 3>& columns, std::size_t n_train,
                                              std::size_t n_reps, std::uint64_t seed) {
    std::vector<TableConfig> out;
    const BiasFamily families[3] = {BiasFamily::UnderRepresentation, BiasFamily::Labeling, BiasFamily::Combined};
    for (TableRow row : {TableRow::Unconstrained, TableRow::EqualOpportunity, TableRow::EqualizedOdds,
                         TableRow::Reweighting})
        for (std::size_t c = 0; c < 3; ++c) {
            TableConfig tc;
            tc.row = row;
            tc.column = families[c];
            tc.experiment.model = columns[c].model;
            tc.experiment.bias = columns[c].bias;
            tc.experiment.n_train = n_train;
            tc.experiment.n_reps = n_reps;
            tc.experiment.seed = rng::derive_seed(seed, static_cast<std::uint64_t>(row), c);
            tc.experiment.intervention = row_intervention(row, families[c], n_train);
            out.push_back(tc);
        }
    return out;
}

/// Analytic and (unless `analytic_only`) empirical verdict for every config.
inline std::vector<TableCell> intervention_table(const std::vector<TableConfig>& configs, bool analytic_only) {
    std::vector<TableCell> cells;
    for (const auto& tc : configs) {
        TableCell cell{tc, analytic_cell(tc.row, tc.experiment.model, tc.experiment.bias), std::nullopt};
        if (!analytic_only) cell.empirical_rate = run_experiment(tc.experiment).recovery_rate;
        cells.push_back(cell);
    }
    return cells;
}

inline void write_table_csv(std::ostream& os, const std::vector<TableCell>& cells) {
    os << "intervention,bias_model,analytic,analytic_margin,empirical_rate,empirical,consistent,note\n";
    for (const auto& c : cells) {
        os << table_row_name(c.config.row) << ',' << bias_family_title(c.config.column) << ','
           << (c.analytic.recovers ? "Yes" : "No") << ',' << shortest(c.analytic.margin) << ',';
        if (c.empirical_rate)
            os << shortest(*c.empirical_rate) << ',' << (*c.empirical_recovers() ? "Yes" : "No");
        else
            os << ',';
        os << ',' << (c.consistent() ? "yes" : "no") << ',' << c.analytic.note << '\n';
    }
}

inline void write_table_markdown(std::ostream& os, const std::vector<TableCell>& cells) {
    os << "| Intervention | Under-Representation | Labeling Bias | Both |\n";
    os << "|---|---|---|---|\n";
    for (TableRow row : {TableRow::Unconstrained, TableRow::EqualOpportunity, TableRow::EqualizedOdds,
                         TableRow::Reweighting}) {
        bool any = false;
        std::string line = std::string("| ") + table_row_name(row) + " |";
        for (BiasFamily col : {BiasFamily::UnderRepresentation, BiasFamily::Labeling, BiasFamily::Combined}) {
            const auto it = std::find_if(cells.begin(), cells.end(), [&](const TableCell& c) {
                return c.config.row == row && c.config.column == col;
            });
            if (it == cells.end()) {
                line += " |";
                continue;
            }
            any = true;
            line += std::string(" ") + (it->analytic.recovers ? "Yes" : "No");
            if (it->empirical_rate)
                line += " / " + std::string(*it->empirical_recovers() ? "Yes" : "No") + " (" +
                        shortest(std::round(*it->empirical_rate * 1000.0) / 1000.0) + ")";
            line += " |";
        }
        if (any) os << line << '\n';
    }
    os << "\nCells read `analytic / empirical (recovery rate)`.\n";
}

}  // namespace biased_erm
