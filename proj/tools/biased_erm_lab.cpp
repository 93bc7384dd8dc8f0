// biased_erm_lab: sweeps, experiments, verification suites and the
// intervention table from the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "biased_erm/biased_erm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace biased_erm;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonFlags {
    std::optional<double> r, p, eta, beta_pos, beta_neg, nu, tolerance;
    std::optional<std::string> constraint, intervention, format;
    std::optional<std::size_t> n, reps, steps, holdout;
    std::optional<std::uint64_t> seed;
    std::string out = "results";
};

void add_model_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--r", f.r, "Group B fraction");
    cmd->add_option("--p", f.p, "Positive-region mass per group");
    cmd->add_option("--eta", f.eta, "Label noise rate");
    cmd->add_option("--beta-pos", f.beta_pos, "Retention of Group B positives");
    cmd->add_option("--beta-neg", f.beta_neg, "Retention of Group B negatives");
    cmd->add_option("--nu", f.nu, "Flip rate of retained Group B positives");
}

void add_run_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--seed", f.seed, "Master seed");
    cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
}

TrueModel resolve_model(const CommonFlags& f, TrueModel m) {
    if (f.r) m.r = *f.r;
    if (f.p) m.p = *f.p;
    if (f.eta) m.eta = *f.eta;
    return validate_model(m);
}

BiasParams resolve_bias(const CommonFlags& f, BiasParams b) {
    if (f.beta_pos) b.beta_pos = *f.beta_pos;
    if (f.beta_neg) b.beta_neg = *f.beta_neg;
    if (f.nu) b.nu = *f.nu;
    return validate_bias(b);
}

json model_json(const TrueModel& m) { return {{"r", m.r}, {"p", m.p}, {"eta", m.eta}}; }
json bias_json(const BiasParams& b) { return {{"beta_pos", b.beta_pos}, {"beta_neg", b.beta_neg}, {"nu", b.nu}}; }

class Manifest {
public:
    Manifest(std::string command, int argc, char** argv)
        : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
        for (int i = 0; i < argc; ++i) argv_.emplace_back(argv[i]);
    }

    void set_parameters(json p) { params_ = std::move(p); }
    void set_seed(std::uint64_t s) { seed_ = s; }

    /// Opens `dir/name` for writing and records it.
    std::ofstream open(const fs::path& dir, const std::string& name) {
        const fs::path path = dir / name;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write " + path.string());
        outputs_.push_back(path.string());
        return os;
    }

    void write(const fs::path& dir) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        const fs::path path = dir / "manifest.json";
        json j{{"command", command_},   {"argv", argv_},      {"parameters", params_},
               {"tool_version", kVersion}, {"outputs", outputs_}, {"wall_clock_seconds", secs}};
        j["outputs"].push_back(path.string());
        j["seed"] = seed_ ? json(*seed_) : json(nullptr);
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write " + path.string());
        os << j.dump(2) << '\n';
    }

private:
    std::string command_;
    std::vector<std::string> argv_;
    json params_ = json::object();
    std::optional<std::uint64_t> seed_;
    std::vector<std::string> outputs_;
    std::chrono::steady_clock::time_point start_;
};

fs::path prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
    return dir;
}

bool wants(const std::optional<std::string>& format, const char* f) { return !format || *format == f; }

void check_format(const std::optional<std::string>& format, std::initializer_list<const char*> allowed,
                  const char* command) {
    if (!format) return;
    for (const char* a : allowed)
        if (*format == a) return;
    throw UsageError(std::string("--format ") + *format + " is not available for " + command);
}

// ---------------------------------------------------------------------------
// region

SweepAxis parse_axis(const std::string& text, std::size_t steps, const char* flag) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
    if (parts.size() != 3) throw UsageError(std::string(flag) + " expects PARAM:LO:HI, got '" + text + "'");
    SweepAxis a;
    a.param = parse_sweep_param(parts[0]);
    a.lo = parse_double(parts[1], flag);
    a.hi = parse_double(parts[2], flag);
    a.steps = steps;
    validate_axis(a);
    return a;
}

struct RegionArgs {
    std::string x = "eta:0:0.499";
    std::string y = "beta:0.005:1";
    std::optional<std::string> check;
};

int cmd_region(const CommonFlags& f, const RegionArgs& a, Manifest& man) {
    check_format(f.format, {"csv", "svg"}, "region");
    const TrueModel m = resolve_model(f, {1.0 / 3.0, 0.5, 0.0});
    const BiasParams b = resolve_bias(f, BiasParams::none());
    const std::size_t steps = f.steps.value_or(200);
    const auto x = parse_axis(a.x, steps, "--x");
    const auto y = parse_axis(a.y, steps, "--y");
    man.set_parameters({{"model", model_json(m)},
                        {"bias", bias_json(b)},
                        {"x", a.x},
                        {"y", a.y},
                        {"steps", steps}});

    if (a.check) {
        std::ifstream is(*a.check);
        if (!is) throw IoError("cannot read " + *a.check);
        const auto res = check_region_csv(is, m, b, x.param, y.param);
        std::cout << "checked " << res.rows << " rows, " << res.mismatches << " verdict mismatches\n";
        if (res.mismatches > 0 || res.rows == 0) {
            if (res.first_mismatch) std::cout << "first mismatch: " << *res.first_mismatch << '\n';
            return kFailure;
        }
        return kOk;
    }

    const auto sweep = recovery_region(m, b, x, y);
    const auto dir = prepare_out(f.out);
    if (wants(f.format, "csv")) {
        auto os = man.open(dir, "region.csv");
        write_region_csv(os, sweep);
    }
    if (wants(f.format, "svg")) {
        auto os = man.open(dir, "region.svg");
        write_region_svg(os, sweep);
    }
    man.write(dir);
    std::size_t recovers = 0;
    for (const auto& c : sweep.cells)
        if (c.verdict == Verdict::Recovers) ++recovers;
    std::cout << sweep.cells.size() << " cells, " << recovers << " recover, " << sweep.solver_mismatches
              << " solver disagreements\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// experiment

Fairness parse_fairness(const std::string& s) {
    if (s == "eo") return Fairness::EqualOpportunity;
    if (s == "eodds") return Fairness::EqualizedOdds;
    if (s == "dp") return Fairness::DemographicParity;
    throw UsageError("unknown constraint '" + s + "' (expected eo, eodds, dp or none)");
}

InterventionKind parse_intervention(const std::string& s) {
    if (s == "none") return InterventionKind::None;
    if (s == "constraint") return InterventionKind::Constraint;
    if (s == "reweight-ur") return InterventionKind::ReweightUnderrep;
    if (s == "reweight-lb") return InterventionKind::ReweightLabelbias;
    throw UsageError("unknown intervention '" + s + "'");
}

/// Line and column of a byte offset, for parse diagnostics.
std::string position(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') ++line, col = 1;
        else ++col;
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot read config file " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError(path + ": " + position(text, e.byte == 0 ? 0 : e.byte - 1) + ": invalid JSON");
    }
}

template <class T>
std::optional<T> field(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) return std::nullopt;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw UsageError("field '" + path + "' has the wrong type");
    }
}

template <class T>
T required(const json& obj, const char* key, const std::string& path) {
    auto v = field<T>(obj, key, path);
    if (!v) throw UsageError("config is missing required field '" + path + "'");
    return *v;
}

ExperimentConfig resolve_experiment(const CommonFlags& f, const std::optional<std::string>& config_path) {
    ExperimentConfig c;
    c.model = {1.0 / 3.0, 0.5, 0.0};
    std::optional<std::string> intervention, constraint;
    std::optional<double> tolerance;
    if (config_path) {
        const json j = read_json_file(*config_path);
        if (!j.is_object()) throw UsageError(*config_path + ": top level must be an object");
        if (!j.contains("model")) throw UsageError("config is missing required field 'model'");
        const json& m = j["model"];
        c.model.r = required<double>(m, "r", "model.r");
        c.model.p = required<double>(m, "p", "model.p");
        c.model.eta = required<double>(m, "eta", "model.eta");
        if (j.contains("bias")) {
            const json& b = j["bias"];
            c.bias.beta_pos = field<double>(b, "beta_pos", "bias.beta_pos").value_or(1.0);
            c.bias.beta_neg = field<double>(b, "beta_neg", "bias.beta_neg").value_or(1.0);
            c.bias.nu = field<double>(b, "nu", "bias.nu").value_or(0.0);
        }
        intervention = field<std::string>(j, "intervention", "intervention");
        constraint = field<std::string>(j, "constraint", "constraint");
        tolerance = field<double>(j, "tolerance", "tolerance");
        c.n_train = field<std::size_t>(j, "n_train", "n_train").value_or(c.n_train);
        c.n_reps = field<std::size_t>(j, "n_reps", "n_reps").value_or(c.n_reps);
        c.threshold_grid = field<std::size_t>(j, "threshold_grid", "threshold_grid").value_or(c.threshold_grid);
        c.seed = field<std::uint64_t>(j, "seed", "seed").value_or(c.seed);
        c.recovery_tolerance = field<double>(j, "recovery_tolerance", "recovery_tolerance").value_or(c.recovery_tolerance);
        c.holdout_n = field<std::size_t>(j, "holdout_n", "holdout_n").value_or(0);
    }
    c.model = resolve_model(f, c.model);
    c.bias = resolve_bias(f, c.bias);
    if (f.n) c.n_train = *f.n;
    if (f.reps) c.n_reps = *f.reps;
    if (f.seed) c.seed = *f.seed;
    if (f.holdout) c.holdout_n = *f.holdout;
    if (f.steps) c.threshold_grid = *f.steps;
    if (f.intervention) intervention = f.intervention;
    if (f.constraint) constraint = f.constraint;
    if (f.tolerance) tolerance = f.tolerance;

    if (constraint && *constraint == "none") {
        if (intervention && *intervention == "constraint")
            throw UsageError("--intervention constraint needs --constraint eo, eodds or dp");
        constraint.reset();
    }
    const InterventionKind kind = intervention ? parse_intervention(*intervention)
                                  : constraint ? InterventionKind::Constraint
                                               : InterventionKind::None;
    c.intervention.kind = kind;
    if (kind == InterventionKind::Constraint) {
        c.intervention.constraint.kind = parse_fairness(constraint.value_or("eo"));
        c.intervention.constraint.tolerance = tolerance.value_or(default_empirical_tolerance(c.n_train));
    } else if (constraint) {
        throw UsageError("--constraint only applies to --intervention constraint");
    }
    validate_config(c);
    return c;
}

int cmd_experiment(const CommonFlags& f, const std::optional<std::string>& config_path, Manifest& man) {
    check_format(f.format, {"csv", "json"}, "experiment");
    const auto cfg = resolve_experiment(f, config_path);
    man.set_parameters(to_json(cfg));
    man.set_seed(cfg.seed);
    const auto res = run_experiment(cfg);
    const auto dir = prepare_out(f.out);
    if (wants(f.format, "json")) {
        auto os = man.open(dir, "experiment.json");
        os << to_json(res).dump(2) << '\n';
    }
    if (wants(f.format, "csv")) {
        auto os = man.open(dir, "experiment.csv");
        write_experiment_csv(os, res);
    }
    man.write(dir);
    std::cout << "recovery_rate " << shortest(res.recovery_rate) << ", mean true error "
              << shortest(res.mean_true_error) << " (sd " << shortest(res.sd_true_error) << "), "
              << res.no_feasible << " reps without a feasible threshold pair\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// verify

int cmd_verify(const CommonFlags& f, const std::vector<std::string>& wanted, std::optional<std::size_t> trials,
               Manifest& man) {
    if (f.format) throw UsageError("verify takes no --format");
    verify::Options opt;
    if (trials) {
        if (*trials < 1) throw UsageError("--trials must be at least 1");
        opt.trials = *trials;
    }
    if (f.seed) opt.seed = *f.seed;
    std::vector<verify::SuiteEntry> chosen;
    for (const auto& name : wanted) {
        const auto& all = verify::suites();
        const auto it = std::find_if(all.begin(), all.end(), [&](const auto& s) { return name == s.name; });
        if (it == all.end()) throw UsageError("unknown suite '" + name + "'");
        chosen.push_back(*it);
    }
    if (chosen.empty()) chosen = verify::suites();
    std::vector<std::string> names;
    for (const auto& s : chosen) names.emplace_back(s.name);
    man.set_parameters({{"suites", names}, {"trials", opt.trials}});
    man.set_seed(opt.seed);

    bool ok = true;
    for (const auto& s : chosen) {
        const auto r = s.run(opt);
        ok = ok && r.passed;
        std::cout << r.name << ": " << (r.passed ? "PASS" : "FAIL") << " (" << r.checks << " checks, " << r.failures
                  << " failures, " << shortest(std::round(r.seconds * 1000.0) / 1000.0) << " s)\n";
        if (!r.passed) std::cout << "  counterexample: " << r.counterexample << '\n';
    }
    man.write(prepare_out(f.out));
    return ok ? kOk : kFailure;
}

// ---------------------------------------------------------------------------
// table

std::array<ColumnParams, 3> read_table_params(const std::string& path) {
    auto cols = default_table_columns();
    const json j = read_json_file(path);
    const char* keys[3] = {"under_representation", "labeling", "combined"};
    for (std::size_t c = 0; c < 3; ++c) {
        if (!j.contains(keys[c])) continue;
        const json& col = j[keys[c]];
        const std::string base = keys[c];
        if (col.contains("model")) {
            const json& m = col["model"];
            cols[c].model.r = field<double>(m, "r", base + ".model.r").value_or(cols[c].model.r);
            cols[c].model.p = field<double>(m, "p", base + ".model.p").value_or(cols[c].model.p);
            cols[c].model.eta = field<double>(m, "eta", base + ".model.eta").value_or(cols[c].model.eta);
        }
        if (col.contains("bias")) {
            const json& b = col["bias"];
            cols[c].bias.beta_pos = field<double>(b, "beta_pos", base + ".bias.beta_pos").value_or(cols[c].bias.beta_pos);
            cols[c].bias.beta_neg = field<double>(b, "beta_neg", base + ".bias.beta_neg").value_or(cols[c].bias.beta_neg);
            cols[c].bias.nu = field<double>(b, "nu", base + ".bias.nu").value_or(cols[c].bias.nu);
        }
        validate_model(cols[c].model);
        validate_bias(cols[c].bias);
    }
    return cols;
}

int cmd_table(const CommonFlags& f, bool analytic_only, const std::optional<std::string>& params_path, Manifest& man) {
    check_format(f.format, {"csv", "md"}, "table");
    const auto cols = params_path ? read_table_params(*params_path) : default_table_columns();
    const std::size_t n = f.n.value_or(100000);
    const std::size_t reps = f.reps.value_or(20);
    const std::uint64_t seed = f.seed.value_or(1);
    json cols_json = json::array();
    for (const auto& c : cols) cols_json.push_back({{"model", model_json(c.model)}, {"bias", bias_json(c.bias)}});
    man.set_parameters({{"columns", cols_json}, {"n", n}, {"reps", reps}, {"analytic_only", analytic_only}});
    man.set_seed(seed);

    const auto cells = intervention_table(table_configs(cols, n, reps, seed), analytic_only);
    const auto dir = prepare_out(f.out);
    if (wants(f.format, "csv")) {
        auto os = man.open(dir, "table.csv");
        write_table_csv(os, cells);
    }
    if (!analytic_only && wants(f.format, "md")) {
        auto os = man.open(dir, "table.md");
        write_table_markdown(os, cells);
    }
    man.write(dir);
    if (analytic_only)
        write_table_csv(std::cout, cells);
    else
        write_table_markdown(std::cout, cells);
    bool ok = true;
    for (const auto& c : cells)
        if (!c.consistent()) {
            ok = false;
            std::cerr << "disagreement: " << table_row_name(c.config.row) << " / " << bias_family_title(c.config.column)
                      << '\n';
        }
    return ok ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recovery of the Bayes-optimal classifier under biased training data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    CommonFlags flags;
    const auto format_check = CLI::IsMember({"csv", "json", "svg", "md"});

    auto* region = app.add_subcommand("region", "Sweep two parameters and classify recovery");
    RegionArgs region_args;
    add_model_flags(region, flags);
    add_run_flags(region, flags);
    region->add_option("--x", region_args.x, "Horizontal axis PARAM:LO:HI")->capture_default_str();
    region->add_option("--y", region_args.y, "Vertical axis PARAM:LO:HI")->capture_default_str();
    region->add_option("--steps", flags.steps, "Grid points per axis (default 200)");
    region->add_option("--check", region_args.check, "Re-check verdicts of an existing region CSV");
    region->add_option("--format", flags.format, "Output format")->check(format_check);

    auto* experiment = app.add_subcommand("experiment", "Monte Carlo threshold-ERM experiment");
    std::optional<std::string> config_path;
    add_model_flags(experiment, flags);
    add_run_flags(experiment, flags);
    experiment->add_option("--config", config_path, "JSON config file");
    experiment->add_option("--constraint", flags.constraint, "Fairness constraint")
        ->check(CLI::IsMember({"eo", "eodds", "dp", "none"}));
    experiment->add_option("--intervention", flags.intervention, "Intervention")
        ->check(CLI::IsMember({"none", "constraint", "reweight-ur", "reweight-lb"}));
    experiment->add_option("--tolerance", flags.tolerance, "Empirical constraint tolerance");
    experiment->add_option("--n", flags.n, "Training sample size");
    experiment->add_option("--reps", flags.reps, "Repetitions");
    experiment->add_option("--steps", flags.steps, "Threshold grid size");
    experiment->add_option("--holdout", flags.holdout, "Held-out sample size for a sampled true error");
    experiment->add_option("--format", flags.format, "Output format")->check(format_check);

    auto* verify_cmd = app.add_subcommand("verify", "Run the invariant suites");
    std::vector<std::string> suites;
    std::optional<std::size_t> trials;
    add_run_flags(verify_cmd, flags);
    verify_cmd->add_option("--suite", suites, "Suite name (repeatable; default all)")->delimiter(',');
    verify_cmd->add_option("--trials", trials, "Random trials per suite");
    verify_cmd->add_option("--format", flags.format, "Output format")->check(format_check);

    auto* table = app.add_subcommand("table", "Intervention x bias-model recovery matrix");
    bool analytic_only = false;
    std::optional<std::string> params_path;
    add_run_flags(table, flags);
    table->add_flag("--analytic-only", analytic_only, "Skip the Monte Carlo column");
    table->add_option("--params", params_path, "JSON file overriding column parameters");
    table->add_option("--n", flags.n, "Training sample size per rep (default 100000)");
    table->add_option("--reps", flags.reps, "Repetitions per cell (default 20)");
    table->add_option("--format", flags.format, "Output format")->check(format_check);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (region->parsed()) {
            Manifest man("region", argc, argv);
            return cmd_region(flags, region_args, man);
        }
        if (experiment->parsed()) {
            Manifest man("experiment", argc, argv);
            return cmd_experiment(flags, config_path, man);
        }
        if (verify_cmd->parsed()) {
            Manifest man("verify", argc, argv);
            return cmd_verify(flags, suites, trials, man);
        }
        if (table->parsed()) {
            Manifest man("table", argc, argv);
            return cmd_table(flags, analytic_only, params_path, man);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const RangeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}
