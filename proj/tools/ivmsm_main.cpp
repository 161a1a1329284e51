// Batch front door for the library: simulate panels, estimate treatment
// effects, run coverage experiments, analyze weight growth, and run model
// diagnostics. Every command is deterministic given its options and seed, and
// the seed is echoed into every output row. Each subcommand also accepts
// --config pointing at a flat key=value file whose keys are the long option
// names; explicit command-line flags win over config values.
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivmsm/diagnostics.hpp"
#include "ivmsm/errors.hpp"
#include "ivmsm/estimators.hpp"
#include "ivmsm/inference.hpp"
#include "ivmsm/markov_analysis.hpp"
#include "ivmsm/panel.hpp"
#include "ivmsm/rng.hpp"
#include "ivmsm/simulate.hpp"

namespace {

using namespace ivmsm;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// ------------------------------------------------------------- config files
// Flat key=value option files. Keys are the long option names without the
// leading dashes; values use the same syntax as the flag (lists stay comma
// separated). Explicitly given command-line flags always win.

double config_double(const std::string& key, const std::string& val) {
    char* end = nullptr;
    const double x = std::strtod(val.c_str(), &end);
    if (end == val.c_str() || *end != '\0')
        throw InvalidParams("config: bad number for " + key + ": '" + val + "'");
    return x;
}

unsigned long long config_count(const std::string& key, const std::string& val) {
    char* end = nullptr;
    const unsigned long long x = std::strtoull(val.c_str(), &end, 10);
    if (end == val.c_str() || *end != '\0' || val.find('-') != std::string::npos)
        throw InvalidParams("config: bad count for " + key + ": '" + val + "'");
    return x;
}

bool config_bool(const std::string& key, const std::string& val) {
    if (val == "1" || val == "true" || val == "yes" || val == "on") return true;
    if (val == "0" || val == "false" || val == "no" || val == "off") return false;
    throw InvalidParams("config: bad boolean for " + key + ": '" + val + "'");
}

std::vector<std::string> split_list(const std::string& val) {
    std::vector<std::string> out;
    std::istringstream in(val);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(trim(tok));
    return out;
}

struct ConfigBinding {
    std::map<std::string, std::function<void(const std::string&)>> set;
};

void bind_value(ConfigBinding& cfg, const std::string& key, double& target) {
    cfg.set[key] = [key, &target](const std::string& v) {
        target = config_double(key, v);
    };
}
void bind_value(ConfigBinding& cfg, const std::string& key, std::size_t& target) {
    cfg.set[key] = [key, &target](const std::string& v) {
        target = static_cast<std::size_t>(config_count(key, v));
    };
}
void bind_value(ConfigBinding& cfg, const std::string& key, std::uint64_t& target) {
    cfg.set[key] = [key, &target](const std::string& v) {
        target = config_count(key, v);
    };
}
void bind_value(ConfigBinding& cfg, const std::string& key, std::string& target) {
    cfg.set[key] = [&target](const std::string& v) { target = v; };
}
void bind_value(ConfigBinding& cfg, const std::string& key, bool& target) {
    cfg.set[key] = [key, &target](const std::string& v) {
        target = config_bool(key, v);
    };
}
void bind_value(ConfigBinding& cfg, const std::string& key,
                std::vector<double>& target) {
    cfg.set[key] = [key, &target](const std::string& v) {
        target.clear();
        for (const std::string& tok : split_list(v))
            target.push_back(config_double(key, tok));
    };
}
void bind_value(ConfigBinding& cfg, const std::string& key,
                std::vector<std::size_t>& target) {
    cfg.set[key] = [key, &target](const std::string& v) {
        target.clear();
        for (const std::string& tok : split_list(v))
            target.push_back(static_cast<std::size_t>(config_count(key, tok)));
    };
}
void bind_value(ConfigBinding& cfg, const std::string& key,
                std::vector<std::string>& target) {
    cfg.set[key] = [&target](const std::string& v) { target = split_list(v); };
}

// add_option + config-key registration in one step
template <class T>
CLI::Option* opt(CLI::App* cmd, ConfigBinding& cfg, const std::string& name, T& var,
                 const std::string& help) {
    bind_value(cfg, name.substr(2), var);
    return cmd->add_option(name, var, help)->capture_default_str();
}

CLI::Option* flag(CLI::App* cmd, ConfigBinding& cfg, const std::string& name, bool& var,
                  const std::string& help) {
    bind_value(cfg, name.substr(2), var);
    return cmd->add_flag(name, var, help);
}

void apply_config(CLI::App* cmd, const ConfigBinding& cfg, const std::string& path) {
    if (path.empty()) return;
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidParams("config line " + std::to_string(line_no) +
                                ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const auto it = cfg.set.find(key);
        if (it == cfg.set.end())
            throw InvalidParams("config line " + std::to_string(line_no) +
                                ": unknown key '" + key + "'");
        if (cmd->count("--" + key) > 0) continue;  // explicit flag wins
        it->second(val);
    }
}

void require_string(const std::string& value, const char* name) {
    if (value.empty()) throw InvalidParams(std::string(name) + " is required");
}

// ---------------------------------------------------------------- processes

// Process flags shared by simulate, experiment, and diagnose --identity.
struct DgpFlags {
    std::string dgp = "linear";
    std::size_t T = 0;  // 0 keeps the model default
    LinearDgpParams linear;
    MarkovDgpParams markov;
    double beta = 1.0;       // markov outcome effect
    double dose_beta = 2.0;  // continuous dose effect
};

void add_dgp_flags(CLI::App* cmd, ConfigBinding& cfg, DgpFlags& f) {
    opt(cmd, cfg, "--dgp", f.dgp, "process: linear | markov | continuous");
    opt(cmd, cfg, "--t", f.T, "periods (0 keeps the model default; continuous is 1)");
    opt(cmd, cfg, "--lambda0", f.linear.lambda0, "linear: covariate intercept");
    opt(cmd, cfg, "--lambda1", f.linear.lambda1, "linear: covariate carryover");
    opt(cmd, cfg, "--alpha0", f.linear.alpha0, "linear: instrument-effect intercept");
    opt(cmd, cfg, "--alpha1", f.linear.alpha1, "linear: instrument-effect slope");
    opt(cmd, cfg, "--nu0", f.linear.nu0, "linear: base treatment intercept");
    opt(cmd, cfg, "--nu1", f.linear.nu1, "linear: base treatment covariate slope");
    opt(cmd, cfg, "--nu2", f.linear.nu2, "linear: base treatment latent slope");
    opt(cmd, cfg, "--tau", f.linear.tau,
        "linear: per-period covariate outcome loadings (default all 1)")
        ->delimiter(',');
    opt(cmd, cfg, "--rho", f.linear.rho,
        "linear: per-period latent outcome loadings (default all 1)")
        ->delimiter(',');
    opt(cmd, cfg, "--beta0", f.linear.beta0, "linear: outcome intercept");
    opt(cmd, cfg, "--beta1", f.linear.beta1, "linear: per-dose treatment effect");
    opt(cmd, cfg, "--q", f.markov.q, "markov: latent mixing weight");
    opt(cmd, cfg, "--p-l", f.markov.p_L, "markov: covariate persistence");
    opt(cmd, cfg, "--p-u", f.markov.p_U, "markov: latent persistence");
    opt(cmd, cfg, "--delta0", f.markov.delta0, "markov: instrument effect at L=0");
    opt(cmd, cfg, "--delta1", f.markov.delta1, "markov: instrument effect at L=1");
    opt(cmd, cfg, "--beta", f.beta, "markov: per-dose treatment effect");
    opt(cmd, cfg, "--dose-beta", f.dose_beta, "continuous: dose effect");
}

DgpKind dgp_kind_from_name(const std::string& name) {
    if (name == "linear") return DgpKind::LINEAR;
    if (name == "markov") return DgpKind::MARKOV;
    if (name == "continuous") return DgpKind::CONTINUOUS;
    throw InvalidParams("unknown process '" + name +
                        "' (valid: linear, markov, continuous)");
}

DgpSpec make_dgp_spec(const DgpFlags& f) {
    DgpSpec spec;
    spec.kind = dgp_kind_from_name(f.dgp);
    spec.linear = f.linear;
    spec.markov = f.markov;
    spec.markov.beta = f.beta;
    spec.continuous_beta = f.dose_beta;
    if (f.T > 0) {
        spec.linear.T = f.T;
        spec.markov.T = f.T;
        if (spec.kind == DgpKind::CONTINUOUS && f.T != 1)
            throw InvalidParams("continuous process has a single period");
    }
    return spec;
}

// key=value sidecar written next to simulated panels; read back for the
// oracle and continuous estimators.
DgpTruth read_truth_sidecar(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::map<std::string, double> num;
    std::string dgp, line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidParams("truth sidecar: expected key=value, got '" + line + "'");
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "dgp") {
            dgp = val;
        } else {
            char* end = nullptr;
            const double x = std::strtod(val.c_str(), &end);
            if (end == val.c_str())
                throw InvalidParams("truth sidecar: bad number for " + key);
            num[key] = x;
        }
    }
    if (dgp.empty()) throw InvalidParams("truth sidecar: missing dgp key");
    auto get = [&num](const char* key, double dflt) {
        const auto it = num.find(key);
        return it == num.end() ? dflt : it->second;
    };
    DgpTruth truth;
    truth.kind = dgp_kind_from_name(dgp);
    switch (truth.kind) {
        case DgpKind::LINEAR: {
            LinearDgpParams& q = truth.linear;
            q.beta0 = get("beta0", q.beta0);
            q.beta1 = get("beta1", q.beta1);
            q.lambda0 = get("lambda0", q.lambda0);
            q.lambda1 = get("lambda1", q.lambda1);
            q.alpha0 = get("alpha0", q.alpha0);
            q.alpha1 = get("alpha1", q.alpha1);
            q.nu0 = get("nu0", q.nu0);
            q.nu1 = get("nu1", q.nu1);
            q.nu2 = get("nu2", q.nu2);
            q.T = static_cast<std::size_t>(get("T", static_cast<double>(q.T)));
            truth.beta = {q.beta0, q.beta1};
            break;
        }
        case DgpKind::MARKOV: {
            MarkovDgpParams& q = truth.markov;
            q.beta = get("beta1", q.beta);
            q.q = get("q", q.q);
            q.p_L = get("p_L", q.p_L);
            q.p_U = get("p_U", q.p_U);
            q.delta0 = get("delta0", q.delta0);
            q.delta1 = get("delta1", q.delta1);
            q.T = static_cast<std::size_t>(get("T", static_cast<double>(q.T)));
            truth.beta = {0.0, q.beta};
            break;
        }
        case DgpKind::CONTINUOUS:
            truth.continuous_beta = get("beta1", truth.continuous_beta);
            truth.beta = {0.0, truth.continuous_beta};
            break;
    }
    return truth;
}

// ----------------------------------------------------------------- simulate

struct SimulateOpts {
    DgpFlags dgp;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::string out;
    std::string truth_out;  // default: <out>.truth
};

void run_simulate(const SimulateOpts& o) {
    const DgpSpec spec = make_dgp_spec(o.dgp);
    SimOutput sim;
    switch (spec.kind) {
        case DgpKind::LINEAR: sim = simulate_linear(spec.linear, o.n, o.seed); break;
        case DgpKind::MARKOV: sim = simulate_markov(spec.markov, o.n, o.seed); break;
        case DgpKind::CONTINUOUS:
            sim = simulate_continuous(o.n, o.seed, spec.continuous_beta);
            break;
    }
    const std::string truth_path = o.truth_out.empty() ? o.out + ".truth" : o.truth_out;
    write_panel_csv(sim.panel, o.out);
    write_truth_sidecar(sim.truth, truth_path);
    std::cout << "command,dgp,n,T,seed,panel,truth\n"
              << "simulate," << dgp_kind_name(spec.kind) << ',' << sim.panel.n << ','
              << sim.panel.T << ',' << o.seed << ',' << o.out << ',' << truth_path
              << "\n";
}

// ----------------------------------------------------------------- estimate

struct EstimateOpts {
    std::string panel;
    std::string kind = "iv";
    std::string truth;  // sidecar path for oracle / continuous kinds
    std::string out;
    std::size_t bootstrap = 0;
    double level = 0.95;
    std::uint64_t seed = 0;
    bool markov_treatment = false;
    double q = 0.5;
    bool fit_iv_density = false;
    bool nuisances_known = false;
};

std::string interval_text(const std::pair<double, double>& ci) {
    return "[" + fmt_short(ci.first) + ", " + fmt_short(ci.second) + "]";
}

void run_estimate(const EstimateOpts& o) {
    const LongitudinalPanel panel = read_panel_csv(o.panel);
    const EstimatorKind kind = estimator_kind_from_name(o.kind);
    DgpTruth truth;
    InferOptions io;
    if (!o.truth.empty()) {
        truth = read_truth_sidecar(o.truth);
        io.est.truth = &truth;
    }
    io.est.markov_treatment = o.markov_treatment;
    io.est.q_known = o.q;
    io.est.seed = o.seed;
    io.fit_iv_density = o.fit_iv_density;
    io.nuisances_known = o.nuisances_known;
    io.B = o.bootstrap;
    io.level = o.level;
    io.seed = o.seed;
    const InferenceReport rep = infer(panel, kind, io);

    std::ostringstream text;
    text << "kind: " << estimator_kind_name(kind) << "  (n=" << rep.est.n
         << ", T=" << rep.est.T << ", seed=" << o.seed << ")\n";
    text << "beta:";
    for (double b : rep.est.beta) text << ' ' << fmt_short(b);
    text << "\n";
    if (rep.has_sandwich) {
        text << "sandwich se:";
        for (double s : rep.sandwich_se) text << ' ' << fmt_short(s);
        text << "   " << fmt_short(100.0 * rep.level) << "% ci:";
        for (const auto& ci : rep.ci_sandwich) text << ' ' << interval_text(ci);
        text << "\n";
    }
    if (rep.has_bootstrap) {
        text << "bootstrap se (B=" << rep.B << ", failures=" << rep.bootstrap_failures
             << "):";
        for (double s : rep.bootstrap_se) text << ' ' << fmt_short(s);
        text << "   " << fmt_short(100.0 * rep.level) << "% ci:";
        for (const auto& ci : rep.ci_bootstrap) text << ' ' << interval_text(ci);
        text << "\n";
    }
    std::cout << text.str();

    EstimateReport row = rep.est;
    if (row.se.empty() && rep.has_bootstrap) row.se = rep.bootstrap_se;
    const std::string csv = report_csv_header() + "\n" + report_csv_row(row) + "\n";
    if (o.out.empty()) {
        std::cout << csv;
    } else {
        std::ofstream f(o.out);
        if (!f) throw IoError("cannot open " + o.out);
        f << csv;
        if (!f) throw IoError("write failed: " + o.out);
    }
}

// --------------------------------------------------------------- experiment

struct ExperimentOpts {
    DgpFlags dgp;
    std::vector<std::string> kinds = {"iv"};
    std::vector<std::size_t> n_grid = {1000};
    std::vector<std::size_t> t_grid = {2};
    std::size_t replications = 100;
    std::size_t bootstrap = 0;
    double level = 0.95;
    std::size_t target = 1;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string out;
};

void run_experiment(const ExperimentOpts& o) {
    const DgpSpec spec = make_dgp_spec(o.dgp);
    CoverageConfig cfg;
    cfg.dgp = spec.kind;
    cfg.linear = spec.linear;
    cfg.markov = spec.markov;
    cfg.continuous_beta = spec.continuous_beta;
    cfg.kinds.clear();
    for (const std::string& name : o.kinds)
        cfg.kinds.push_back(estimator_kind_from_name(name));
    cfg.n_grid = o.n_grid;
    cfg.T_grid = o.t_grid;
    cfg.R = o.replications;
    cfg.B = o.bootstrap;
    cfg.level = o.level;
    cfg.target = o.target;
    cfg.seed = o.seed;
    cfg.jobs = o.jobs;
    const std::vector<CoverageRow> rows = coverage_experiment(cfg);
    write_coverage_csv(o.out, rows);
    std::cout << coverage_csv_header() << "\n";
    for (const CoverageRow& row : rows) std::cout << coverage_csv_row(row) << "\n";
}

// ----------------------------------------------------------- analyze-weights

struct AnalyzeOpts {
    std::string model = "sra_unstab";
    double p_la = 0.6;
    double p_al = 0.6;
    double delta0 = 0.2;
    double delta1 = 0.3;
    double gamma0 = 1.0;
    double gamma1 = 1.0;
    std::size_t T = 7;
    std::size_t mc_paths = 200000;
    std::string sweep = "none";
    double from = 0.1;
    double to = 0.9;
    std::size_t steps = 9;
    std::uint64_t seed = 0;
    std::string out;
};

GrowthModel growth_model_from_name(const std::string& name) {
    if (name == "sra_unstab") return GrowthModel::SRA_UNSTAB;
    if (name == "sra_stab") return GrowthModel::SRA_STAB;
    if (name == "iv_unstab") return GrowthModel::IV_UNSTAB;
    if (name == "iv_stab") return GrowthModel::IV_STAB;
    throw InvalidParams("unknown model '" + name +
                        "' (valid: sra_unstab, sra_stab, iv_unstab, iv_stab)");
}

void run_analyze_weights(const AnalyzeOpts& o) {
    const GrowthModel model = growth_model_from_name(o.model);
    if (o.steps == 0) throw InvalidParams("sweep needs at least one step");
    double* swept = nullptr;
    AnalyzeOpts cur = o;
    if (o.sweep != "none") {
        if (o.sweep == "p_la")
            swept = &cur.p_la;
        else if (o.sweep == "p_al")
            swept = &cur.p_al;
        else if (o.sweep == "delta0")
            swept = &cur.delta0;
        else if (o.sweep == "delta1")
            swept = &cur.delta1;
        else if (o.sweep == "gamma0")
            swept = &cur.gamma0;
        else if (o.sweep == "gamma1")
            swept = &cur.gamma1;
        else
            throw InvalidParams(
                "unknown sweep parameter '" + o.sweep +
                "' (valid: none, p_la, p_al, delta0, delta1, gamma0, gamma1)");
    }
    const std::size_t rows = swept ? o.steps : 1;

    std::ostringstream csv;
    csv << "model,p_la,p_al,delta0,delta1,gamma0,gamma1,T,analytic,mc,mc_se,lambda1,"
           "seed\n";
    for (std::size_t i = 0; i < rows; ++i) {
        if (swept)
            *swept = rows == 1 ? o.from
                               : o.from + (o.to - o.from) * static_cast<double>(i) /
                                              static_cast<double>(rows - 1);
        double analytic = 0.0, lambda1 = 0.0;
        switch (model) {
            case GrowthModel::SRA_UNSTAB:
                analytic = sra_unstab_second_moment(cur.p_la, cur.T);
                lambda1 = sra_unstab_growth(cur.p_la).lambda1;
                break;
            case GrowthModel::SRA_STAB:
                analytic = sra_stab_second_moment(cur.p_la, cur.p_al, cur.T);
                lambda1 = sra_stab_growth(cur.p_la, cur.p_al).lambda1;
                break;
            case GrowthModel::IV_UNSTAB:
                analytic = iv_exact_second_moment(cur.p_la, cur.delta0, cur.delta1, cur.T);
                lambda1 = iv_unstab_growth(cur.p_la, cur.delta0, cur.delta1).lambda1;
                break;
            case GrowthModel::IV_STAB:
                analytic = iv_stab_second_moment(cur.p_la, cur.p_al, cur.delta0,
                                                 cur.delta1, cur.gamma0, cur.gamma1,
                                                 cur.T);
                lambda1 = iv_stab_growth(cur.p_la, cur.p_al, cur.delta0, cur.delta1,
                                         cur.gamma0, cur.gamma1)
                              .lambda1;
                break;
        }
        const MomentMc mc =
            chain_second_moment_mc(model, cur.p_la, cur.p_al, cur.delta0, cur.delta1,
                                   cur.gamma0, cur.gamma1, cur.T, o.mc_paths,
                                   derive_seed(o.seed, i));
        csv << growth_model_name(model) << ',' << fmt(cur.p_la) << ',' << fmt(cur.p_al)
            << ',' << fmt(cur.delta0) << ',' << fmt(cur.delta1) << ',' << fmt(cur.gamma0)
            << ',' << fmt(cur.gamma1) << ',' << cur.T << ',' << fmt(analytic) << ','
            << fmt(mc.value) << ',' << fmt(mc.se) << ',' << fmt(lambda1) << ','
            << o.seed << "\n";
    }
    if (o.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream f(o.out);
        if (!f) throw IoError("cannot open " + o.out);
        f << csv.str();
        if (!f) throw IoError("write failed: " + o.out);
        std::cout << csv.str();
    }
}

// ----------------------------------------------------------------- diagnose

struct DiagnoseOpts {
    std::string model;     // table file: p.<t>.<a>.<cell>.<u>.<z> and w.<a>.<z>.<l>
    std::string identity;  // process name for the sampled identity battery
    DgpFlags dgp;
    std::size_t n = 20000;
    std::uint64_t seed = 0;
    std::string out;
};

struct ModelFile {
    std::vector<ConditionalTable> tables;
    OmegaTable omega;
    bool has_omega = false;
};

std::vector<std::size_t> parse_indices(const std::string& key, std::size_t want) {
    std::vector<std::size_t> idx;
    std::istringstream in(key);
    std::string tok;
    std::getline(in, tok, '.');  // leading p / w
    while (std::getline(in, tok, '.')) {
        char* end = nullptr;
        const long v = std::strtol(tok.c_str(), &end, 10);
        if (end == tok.c_str() || *end != '\0' || v < 0)
            throw InvalidParams("model file: bad index '" + tok + "' in " + key);
        idx.push_back(static_cast<std::size_t>(v));
    }
    if (idx.size() != want)
        throw InvalidParams("model file: key " + key + " needs " + std::to_string(want) +
                            " indices");
    return idx;
}

ModelFile read_model_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    struct Entry {
        std::vector<std::size_t> idx;
        double value;
    };
    std::vector<Entry> p_entries, w_entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidParams("model file line " + std::to_string(line_no) +
                                ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        char* end = nullptr;
        const double x = std::strtod(val.c_str(), &end);
        if (end == val.c_str() || *end != '\0')
            throw InvalidParams("model file line " + std::to_string(line_no) +
                                ": bad value '" + val + "'");
        if (key.rfind("p.", 0) == 0)
            p_entries.push_back({parse_indices(key, 5), x});
        else if (key.rfind("w.", 0) == 0)
            w_entries.push_back({parse_indices(key, 3), x});
        else
            throw InvalidParams("model file line " + std::to_string(line_no) +
                                ": keys start with p. or w.");
    }
    if (p_entries.empty()) throw InvalidParams("model file: no p.* entries");

    std::size_t n_t = 0;
    for (const Entry& e : p_entries) n_t = std::max(n_t, e.idx[0] + 1);
    ModelFile model;
    for (std::size_t t = 0; t < n_t; ++t) {
        std::size_t n_a = 0, n_cell = 0, n_u = 0;
        for (const Entry& e : p_entries)
            if (e.idx[0] == t) {
                n_a = std::max(n_a, e.idx[1] + 1);
                n_cell = std::max(n_cell, e.idx[2] + 1);
                n_u = std::max(n_u, e.idx[3] + 1);
                if (e.idx[4] > 1)
                    throw InvalidParams("model file: z index must be 0 or 1");
            }
        if (n_a == 0)
            throw InvalidParams("model file: period " + std::to_string(t) +
                                " has no entries");
        model.tables.push_back(ConditionalTable::zeros(n_a, n_cell, n_u));
    }
    std::vector<std::vector<bool>> seen(n_t);
    for (std::size_t t = 0; t < n_t; ++t)
        seen[t].assign(model.tables[t].p.size(), false);
    for (const Entry& e : p_entries) {
        ConditionalTable& tab = model.tables[e.idx[0]];
        if (e.idx[1] >= tab.n_a || e.idx[2] >= tab.n_cell || e.idx[3] >= tab.n_u)
            throw InvalidParams("model file: inconsistent indices");
        tab.at(e.idx[1], e.idx[2], e.idx[3], static_cast<int>(e.idx[4])) = e.value;
        const std::size_t flat =
            ((e.idx[1] * tab.n_cell + e.idx[2]) * tab.n_u + e.idx[3]) * 2 + e.idx[4];
        seen[e.idx[0]][flat] = true;
    }
    for (std::size_t t = 0; t < n_t; ++t)
        for (std::size_t k = 0; k < seen[t].size(); ++k)
            if (!seen[t][k])
                throw InvalidParams("model file: period " + std::to_string(t) +
                                    " is missing entries");

    if (!w_entries.empty()) {
        std::size_t n_l = 0;
        for (const Entry& e : w_entries) {
            if (e.idx[0] > 1 || e.idx[1] > 1)
                throw InvalidParams("model file: w indices a and z must be 0 or 1");
            n_l = std::max(n_l, e.idx[2] + 1);
        }
        model.omega = OmegaTable::zeros(n_l);
        std::vector<bool> wseen(model.omega.w.size(), false);
        for (const Entry& e : w_entries) {
            model.omega.at(e.idx[0], e.idx[1], e.idx[2]) = e.value;
            wseen[(e.idx[0] * 2 + e.idx[1]) * n_l + e.idx[2]] = true;
        }
        for (bool s : wseen)
            if (!s) throw InvalidParams("model file: weight table is missing entries");
        model.has_omega = true;
    }
    return model;
}

void run_diagnose(const DiagnoseOpts& o) {
    if (o.model.empty() && o.identity.empty())
        throw InvalidParams("diagnose needs --model FILE or --identity PROCESS");
    std::ostringstream text, csv;
    if (!o.model.empty()) {
        const ModelFile model = read_model_file(o.model);
        const IctReport ict = check_ict(model.tables);
        text << ict_text(ict);
        csv << ict_csv_header() << ",seed\n" << ict_csv_row(ict) << ',' << o.seed << "\n";
        if (model.has_omega) {
            if (model.tables.size() != 1)
                throw InvalidParams(
                    "the weight admissibility check needs a single-period model");
            const ConverseReport conv =
                check_point_exposure_converse(model.omega, model.tables[0]);
            text << converse_text(conv);
            csv << converse_csv_header() << ",seed\n"
                << converse_csv_row(conv) << ',' << o.seed << "\n";
        }
    }
    if (!o.identity.empty()) {
        DgpFlags flags = o.dgp;
        flags.dgp = o.identity;
        const DgpSpec spec = make_dgp_spec(flags);
        const std::vector<Theorem1Report> battery = theorem1_battery(spec, o.n, o.seed);
        csv << theorem1_csv_header() << "\n";
        for (const Theorem1Report& rep : battery) {
            text << theorem1_text(rep);
            csv << theorem1_csv_row(rep) << "\n";
        }
    }
    std::cout << text.str();
    if (o.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream f(o.out);
        if (!f) throw IoError("cannot open " + o.out);
        f << csv.str();
        if (!f) throw IoError("write failed: " + o.out);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "instrumental-variable estimation of marginal structural mean models for "
        "time-varying treatments"};
    app.require_subcommand(1);
    const char* config_help = "flat key=value option file (explicit flags win)";

    SimulateOpts sim;
    ConfigBinding b_sim;
    std::string cfg_sim;
    CLI::App* c_sim = app.add_subcommand("simulate", "draw a panel and write it as CSV");
    c_sim->add_option("--config", cfg_sim, config_help);
    add_dgp_flags(c_sim, b_sim, sim.dgp);
    opt(c_sim, b_sim, "--n", sim.n, "subjects");
    opt(c_sim, b_sim, "--seed", sim.seed, "random seed");
    opt(c_sim, b_sim, "--out", sim.out, "panel CSV path (required)");
    opt(c_sim, b_sim, "--truth-out", sim.truth_out,
        "truth sidecar path (default: <out>.truth)");

    EstimateOpts est;
    ConfigBinding b_est;
    std::string cfg_est;
    CLI::App* c_est =
        app.add_subcommand("estimate", "estimate treatment effects from a panel CSV");
    c_est->add_option("--config", cfg_est, config_help);
    opt(c_est, b_est, "--panel", est.panel, "panel CSV path (required)");
    opt(c_est, b_est, "--kind", est.kind,
        "estimator: associational | sra | sra_stabilized | oracle | iv | "
        "iv_stabilized | wald | repeated_measures_iv");
    opt(c_est, b_est, "--truth", est.truth,
        "truth sidecar (oracle weights and continuous doses)");
    opt(c_est, b_est, "--out", est.out, "report CSV path (stdout when omitted)");
    opt(c_est, b_est, "--bootstrap", est.bootstrap, "bootstrap replicates (0 disables)");
    opt(c_est, b_est, "--level", est.level, "confidence level");
    opt(c_est, b_est, "--seed", est.seed, "random seed");
    flag(c_est, b_est, "--markov-treatment", est.markov_treatment,
         "two-state observed treatment model instead of the probit");
    opt(c_est, b_est, "--q", est.q, "known instrument density f_Z(1)");
    flag(c_est, b_est, "--fit-iv-density", est.fit_iv_density,
         "fit f_Z by logistic regression instead of assuming 1/2");
    flag(c_est, b_est, "--nuisances-known", est.nuisances_known,
         "sandwich treats nuisance fits as fixed");

    ExperimentOpts exp;
    ConfigBinding b_exp;
    std::string cfg_exp;
    CLI::App* c_exp = app.add_subcommand(
        "experiment", "repeated simulate/estimate sweep with bias and coverage");
    c_exp->add_option("--config", cfg_exp, config_help);
    add_dgp_flags(c_exp, b_exp, exp.dgp);
    opt(c_exp, b_exp, "--kinds", exp.kinds, "estimators to sweep (comma separated)")
        ->delimiter(',');
    opt(c_exp, b_exp, "--n-grid", exp.n_grid, "sample sizes (comma separated)")
        ->delimiter(',');
    opt(c_exp, b_exp, "--t-grid", exp.t_grid, "period counts (comma separated)")
        ->delimiter(',');
    opt(c_exp, b_exp, "--replications", exp.replications, "replications per cell");
    opt(c_exp, b_exp, "--bootstrap", exp.bootstrap,
        "bootstrap replicates per replication (0 disables)");
    opt(c_exp, b_exp, "--level", exp.level, "confidence level");
    opt(c_exp, b_exp, "--target", exp.target, "coefficient tabulated");
    opt(c_exp, b_exp, "--seed", exp.seed, "random seed");
    opt(c_exp, b_exp, "--jobs", exp.jobs, "worker threads over replications")
        ->envname("IVMSM_JOBS");
    opt(c_exp, b_exp, "--out", exp.out, "coverage CSV path (required)");

    AnalyzeOpts ana;
    ConfigBinding b_ana;
    std::string cfg_ana;
    CLI::App* c_ana = app.add_subcommand(
        "analyze-weights", "weight second-moment growth: closed forms vs sampled chains");
    c_ana->add_option("--config", cfg_ana, config_help);
    opt(c_ana, b_ana, "--model", ana.model,
        "growth model: sra_unstab | sra_stab | iv_unstab | iv_stab");
    opt(c_ana, b_ana, "--p-la", ana.p_la, "treatment given covariate match probability");
    opt(c_ana, b_ana, "--p-al", ana.p_al, "covariate given treatment match probability");
    opt(c_ana, b_ana, "--delta0", ana.delta0, "instrument effect at L=0");
    opt(c_ana, b_ana, "--delta1", ana.delta1, "instrument effect at L=1");
    opt(c_ana, b_ana, "--gamma0", ana.gamma0, "stabilizer numerator at A_prev=0");
    opt(c_ana, b_ana, "--gamma1", ana.gamma1, "stabilizer numerator at A_prev=1");
    opt(c_ana, b_ana, "--t", ana.T, "periods");
    opt(c_ana, b_ana, "--mc-paths", ana.mc_paths, "sampled paths per row");
    opt(c_ana, b_ana, "--sweep", ana.sweep,
        "parameter swept across rows: none | p_la | p_al | delta0 | delta1 | gamma0 | "
        "gamma1");
    opt(c_ana, b_ana, "--from", ana.from, "sweep start");
    opt(c_ana, b_ana, "--to", ana.to, "sweep end");
    opt(c_ana, b_ana, "--steps", ana.steps, "sweep rows");
    opt(c_ana, b_ana, "--seed", ana.seed, "random seed");
    opt(c_ana, b_ana, "--out", ana.out, "growth CSV path (stdout when omitted)");

    DiagnoseOpts dia;
    ConfigBinding b_dia;
    std::string cfg_dia;
    CLI::App* c_dia = app.add_subcommand(
        "diagnose", "model admissibility checks and the sampled weighting identity");
    c_dia->add_option("--config", cfg_dia, config_help);
    opt(c_dia, b_dia, "--model", dia.model,
        "treatment model file: p.<t>.<a>.<cell>.<u>.<z>=prob lines, optional "
        "w.<a>.<z>.<l>=weight lines");
    opt(c_dia, b_dia, "--identity", dia.identity,
        "run the sampled weighting-identity battery on this process");
    add_dgp_flags(c_dia, b_dia, dia.dgp);
    opt(c_dia, b_dia, "--n", dia.n, "draws for the identity battery");
    opt(c_dia, b_dia, "--seed", dia.seed, "random seed");
    opt(c_dia, b_dia, "--out", dia.out, "CSV path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (c_sim->parsed()) {
            apply_config(c_sim, b_sim, cfg_sim);
            require_string(sim.out, "--out");
            run_simulate(sim);
        }
        if (c_est->parsed()) {
            apply_config(c_est, b_est, cfg_est);
            require_string(est.panel, "--panel");
            run_estimate(est);
        }
        if (c_exp->parsed()) {
            apply_config(c_exp, b_exp, cfg_exp);
            require_string(exp.out, "--out");
            run_experiment(exp);
        }
        if (c_ana->parsed()) {
            apply_config(c_ana, b_ana, cfg_ana);
            run_analyze_weights(ana);
        }
        if (c_dia->parsed()) {
            apply_config(c_dia, b_dia, cfg_dia);
            run_diagnose(dia);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
