// featrec: treatment recommendation from Feature Scores.
//
// Exit codes: 0 success, 1 usage or data error, 3 global-test alert.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "featrec/featrec.hpp"

namespace {

using namespace featrec;

constexpr int exit_ok = 0;
constexpr int exit_error = 1;
constexpr int exit_alert = 3;

struct DataOptions {
    std::string input;
    std::string y_col = "y";
    std::string a_col = "a";
    std::vector<std::string> x_cols;
    std::string id_col;

    void add_to(CLI::App* app, bool need_roles = true) {
        app->add_option("--input,-i", input, "Input CSV with a header row")->required()->check(CLI::ExistingFile);
        if (need_roles) {
            app->add_option("--y-col", y_col, "Response column")->capture_default_str();
            app->add_option("--a-col", a_col, "Treatment column")->capture_default_str();
        }
        app->add_option("--x-cols", x_cols, "Covariate columns: comma list or globs such as x* (default: all others)")
            ->delimiter(',');
        app->add_option("--id-col", id_col, "Optional patient id column (default: 1-based row number)");
    }

    Schema schema() const { return Schema{y_col, a_col, x_cols, id_col}; }
    Dataset load() const { return load_csv(input, schema()); }
};

struct ModelOptions {
    int k = 1;
    int slices = 10;
    std::string slice_mode = "auto";
    double span = 0.75;
    int degree = 1;
    bool bandwidth_schedule = false;
    std::string screen = "none";
    double q = 0.05;
    double fraction = 0.05;

    void add_to(CLI::App* app) {
        app->add_option("--k", k, "Number of Feature Scores per arm")->check(CLI::Range(1, 2))->capture_default_str();
        app->add_option("--slices", slices, "SIR slice count H")->check(CLI::Range(2, 1000))->capture_default_str();
        app->add_option("--slice-mode", slice_mode, "auto | equal_count | by_level")
            ->check(CLI::IsMember({"auto", "equal_count", "by_level"}))
            ->capture_default_str();
        app->add_option("--span", span, "LOESS nearest-neighbor fraction")
            ->check(CLI::Range(1e-6, 1.0))
            ->capture_default_str();
        app->add_option("--degree", degree, "LOESS local polynomial degree")->check(CLI::Range(0, 2))->capture_default_str();
        app->add_flag("--bandwidth-schedule", bandwidth_schedule,
                      "Use a fixed LOESS radius h = n^(-1/(k+3)) (in score standard deviations) instead of --span");
        app->add_option("--screen", screen, "Variable screening before SIR: none | fdr | loess")
            ->check(CLI::IsMember({"none", "fdr", "loess"}))
            ->capture_default_str();
        app->add_option("--q", q, "FDR level for --screen fdr")->check(CLI::Range(1e-12, 1.0 - 1e-12))->capture_default_str();
        app->add_option("--fraction", fraction, "Fraction kept by --screen loess")
            ->check(CLI::Range(1e-12, 1.0 - 1e-12))
            ->capture_default_str();
    }

    RecommenderConfig config(std::uint64_t seed) const {
        RecommenderConfig c;
        c.k = k;
        c.slices = SliceSpec{slice_mode_from_string(slice_mode), slices};
        c.span = span;
        c.degree = degree;
        c.bandwidth_schedule = bandwidth_schedule;
        if (screen != "none") c.screen = screen_method_from_string(screen);
        c.fdr_q = q;
        c.loess_fraction = fraction;
        c.seed = seed;
        return c;
    }
};

/// Writes to `path`, or stdout when empty.
template <class Fn>
void emit(const std::string& path, Fn&& fn) {
    if (path.empty()) {
        fn(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write '" + path + "'");
    fn(out);
}

Recommender load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open model '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw error("model '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        return recommender_from_json(j);
    } catch (const json::exception& e) {
        throw error("model '" + path + "' is malformed: " + e.what());
    }
}

void print_alert(const GateResult& g) {
    std::cerr << "ALERT: overall p-value " << g.pvalue << " exceeds " << g.alpha
              << "; the covariates carry little evidence for data-guided recommendation\n";
}

json gate_json(const GateResult& g) { return json{{"pvalue", g.pvalue}, {"pass", g.pass}, {"alpha", g.alpha}}; }

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
    std::vector<Method> out;
    for (const auto& n : names) out.push_back(method_from_string(n));
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"featrec: treatment recommendation with Sliced Inverse Regression Feature Scores"};
    app.require_subcommand(1);
    unsigned threads = default_threads();
    app.add_option("--threads", threads, "Worker threads (default: FEATREC_THREADS or hardware concurrency)");

    // global-test
    auto* gt = app.add_subcommand("global-test", "Cauchy combination test of all marginal covariate p-values");
    DataOptions gt_data;
    gt_data.add_to(gt);
    double gt_alpha = 0.05;
    gt->add_option("--alpha", gt_alpha, "Significance level")->check(CLI::Range(1e-12, 1.0 - 1e-12))->capture_default_str();

    // screen
    auto* sc = app.add_subcommand("screen", "Select covariates by FDR or LOESS residual screening");
    DataOptions sc_data;
    sc_data.add_to(sc);
    std::string sc_method = "fdr";
    double sc_alpha = 0.05, sc_fraction = 0.05;
    std::string sc_output;
    sc->add_option("--method", sc_method, "fdr | loess")->check(CLI::IsMember({"fdr", "loess"}))->capture_default_str();
    sc->add_option("--alpha", sc_alpha, "FDR level")->check(CLI::Range(1e-12, 1.0 - 1e-12))->capture_default_str();
    sc->add_option("--fraction", sc_fraction, "Fraction kept by loess screening")
        ->check(CLI::Range(1e-12, 1.0 - 1e-12))
        ->capture_default_str();
    sc->add_option("--output,-o", sc_output, "Output JSON (default: stdout)");

    // fit
    auto* ft = app.add_subcommand("fit", "Fit per-arm SIR directions and LOESS response curves");
    DataOptions ft_data;
    ft_data.add_to(ft);
    ModelOptions ft_model;
    ft_model.add_to(ft);
    double ft_gate_alpha = 0.05;
    bool ft_force = false, ft_test_dim = false;
    double ft_test_level = 0.05;
    std::uint64_t ft_seed = 0;
    std::string ft_output;
    ft->add_option("--gate-alpha", ft_gate_alpha, "Level of the global information test")
        ->check(CLI::Range(1e-12, 1.0 - 1e-12))
        ->capture_default_str();
    ft->add_flag("--force", ft_force, "Fit even when the global test raises an alert");
    ft->add_flag("--test-dim", ft_test_dim, "Print the sequential chi-square test for the number of Feature Scores");
    ft->add_option("--test-level", ft_test_level, "Level of the dimension test")->capture_default_str();
    ft->add_option("--seed", ft_seed, "Seed recorded in the model provenance")->capture_default_str();
    ft->add_option("--output,-o", ft_output, "Model JSON path")->required();

    // recommend
    auto* rc = app.add_subcommand("recommend", "Recommend a treatment for each patient row");
    std::string rc_model, rc_input, rc_id_col, rc_output;
    rc->add_option("--model,-m", rc_model, "Model JSON")->required()->check(CLI::ExistingFile);
    rc->add_option("--input,-i", rc_input, "Patient CSV with the model's covariate columns")
        ->required()
        ->check(CLI::ExistingFile);
    rc->add_option("--id-col", rc_id_col, "Optional patient id column");
    rc->add_option("--output,-o", rc_output, "Output JSON (default: stdout)");

    // plotdata
    auto* pl = app.add_subcommand("plotdata", "Scatter, fitted curve and marker rows for Feature Score plots");
    std::string pl_model, pl_output;
    DataOptions pl_data;
    pl_data.add_to(pl);
    std::vector<std::string> pl_markers;
    int pl_grid = 100;
    pl->add_option("--model,-m", pl_model, "Model JSON")->required()->check(CLI::ExistingFile);
    pl->add_option("--markers", pl_markers, "Patient ids to mark")->delimiter(',');
    pl->add_option("--grid", pl_grid, "Curve grid size")->check(CLI::Range(2, 100000))->capture_default_str();
    pl->add_option("--output,-o", pl_output, "Output CSV (default: stdout)");

    // value
    auto* va = app.add_subcommand("value", "Inverse-propensity value of a fitted rule on labelled data");
    std::string va_model;
    DataOptions va_data;
    va_data.add_to(va);
    std::string va_propensity = "model";
    bool va_unnormalized = false;
    va->add_option("--model,-m", va_model, "Model JSON")->required()->check(CLI::ExistingFile);
    va->add_option("--propensity", va_propensity, "model | empirical (arm fractions of --input)")
        ->check(CLI::IsMember({"model", "empirical"}))
        ->capture_default_str();
    va->add_flag("--unnormalized", va_unnormalized, "Divide by n instead of the sum of weights");

    // simulate
    auto* sm = app.add_subcommand("simulate", "Replicated simulation benchmark");
    RunConfig sm_cfg;
    ModelOptions sm_model;
    sm_model.add_to(sm);
    std::vector<std::string> sm_methods{"sir", "ols", "oracle"};
    std::vector<std::string> sm_external;
    std::string sm_output, sm_dump;
    bool sm_no_gap = false, sm_summary = false;
    sm->add_option("--scenario", sm_cfg.scenario, "Scenario 1-4")->check(CLI::Range(1, 4))->capture_default_str();
    sm->add_option("--n", sm_cfg.n, "Sample size")->check(CLI::Range(10, 10000000))->capture_default_str();
    sm->add_option("--p", sm_cfg.p, "Covariate count")->check(CLI::Range(4, 100000))->capture_default_str();
    sm->add_option("--reps", sm_cfg.reps, "Replicates")->check(CLI::Range(1, 10000000))->capture_default_str();
    sm->add_option("--seed", sm_cfg.seed, "Base seed")->required();
    sm->add_option("--methods", sm_methods, "sir,ols,oracle,anti")->delimiter(',')->capture_default_str();
    sm->add_flag("--loo", sm_cfg.leave_one_out, "Exact leave-one-out recommendations for sir and ols");
    sm->add_option("--n-test", sm_cfg.n_test, "Fresh draws for the value gap")->capture_default_str();
    sm->add_flag("--no-value-gap", sm_no_gap, "Skip the Monte Carlo value gap");
    sm->add_flag("--summary", sm_summary, "Print per-method mean and std to stderr");
    sm->add_option("--dump-data", sm_dump, "Write each replicate dataset to DIR/rep_<r>.csv");
    sm->add_option("--external", sm_external, "Score external labels NAME=DIR, reading DIR/rep_<r>.csv (column label)");
    sm->add_option("--output,-o", sm_output, "Report CSV (default: stdout)");

    // split-eval
    auto* se = app.add_subcommand("split-eval", "Repeated k-fold held-out value comparison");
    DataOptions se_data;
    se_data.add_to(se);
    ModelOptions se_model;
    se_model.add_to(se);
    int se_folds = 5, se_reps = 1000;
    std::uint64_t se_seed = 0;
    std::vector<std::string> se_methods{"sir", "ols"};
    std::string se_output;
    se->add_option("--folds", se_folds, "Number of folds")->check(CLI::Range(2, 1000))->capture_default_str();
    se->add_option("--reps", se_reps, "Random splits")->check(CLI::Range(1, 10000000))->capture_default_str();
    se->add_option("--seed", se_seed, "Seed")->capture_default_str();
    se->add_option("--methods", se_methods, "sir,ols")->delimiter(',')->capture_default_str();
    se->add_option("--output,-o", se_output, "Output CSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_error;
    }

    try {
        if (*gt) {
            const Dataset d = gt_data.load();
            auto g = global_gate(d, gt_alpha);
            std::cout << gate_json(g).dump() << '\n';
            if (!g.pass) {
                print_alert(g);
                return exit_alert;
            }
            return exit_ok;
        }

        if (*sc) {
            const Dataset d = sc_data.load();
            ScreenResult r;
            if (sc_method == "fdr") {
                auto mp = marginal_pvalues(d);
                for (auto j : mp.rank_deficient)
                    std::cerr << "warning: column '" << d.column_names()[static_cast<std::size_t>(j)]
                              << "' is collinear with the arm indicators; p-value set to 1\n";
                r = bh_select(mp.pvalues, sc_alpha);
            } else {
                r = loess_screen(d, sc_fraction, 0.75, 1, threads);
            }
            emit(sc_output, [&](std::ostream& os) { os << to_json(r, d.column_names()).dump(2) << '\n'; });
            return exit_ok;
        }

        if (*ft) {
            const Dataset d = ft_data.load();
            auto g = global_gate(d, ft_gate_alpha);
            if (!g.pass) {
                print_alert(g);
                if (!ft_force) {
                    std::cerr << "refusing to fit; pass --force to continue\n";
                    return exit_alert;
                }
            }
            auto r = fit_recommender(d, ft_model.config(ft_seed));
            r.provenance["gate"] = gate_json(g);
            r.provenance["gate"]["forced"] = !g.pass;
            emit(ft_output, [&](std::ostream& os) { os << to_json(r).dump(2) << '\n'; });

            std::cout << "global test p-value " << g.pvalue << (g.pass ? "" : " (alert overridden)") << '\n';
            std::cout << "covariates used: " << r.selected_columns.size() << '\n';
            for (const auto& arm : r.arms) {
                std::cout << "arm " << arm.label << ": n=" << arm.sir.n_used << " slices=" << arm.sir.n_slices
                          << " eigenvalues";
                for (Eigen::Index j = 0; j < std::min<Eigen::Index>(3, arm.sir.eigenvalues.size()); ++j)
                    std::cout << ' ' << arm.sir.eigenvalues[j];
                std::cout << '\n';
                if (ft_test_dim) {
                    auto t = chi2_dimension_test(arm.sir, ft_test_level);
                    for (const auto& s : t.steps)
                        std::cout << "  m=" << s.m << " T=" << s.statistic << " df=" << s.df << " p=" << s.pvalue << '\n';
                    std::cout << "  k_hat=" << t.k_hat << (t.exhausted ? " (slices exhausted)" : "") << '\n';
                }
            }
            return exit_ok;
        }

        if (*rc) {
            const Recommender r = load_model(rc_model);
            auto table = read_csv_file(rc_input);
            auto cov = covariates_from_table(table, r.selected_columns, rc_id_col);
            auto recs = recommend_batch(r, cov.x, threads);
            json out = json::array();
            for (std::size_t i = 0; i < recs.size(); ++i) {
                json j = to_json(recs[i]);
                j["patient_id"] = cov.ids[i];
                out.push_back(std::move(j));
            }
            emit(rc_output, [&](std::ostream& os) { os << out.dump(2) << '\n'; });
            return exit_ok;
        }

        if (*pl) {
            const Recommender r = load_model(pl_model);
            const Dataset d = pl_data.load();
            auto pd = plot_data(r, d, pl_grid, pl_markers);
            emit(pl_output, [&](std::ostream& os) { write_plot_csv(os, pd); });
            return exit_ok;
        }

        if (*va) {
            const Recommender r = load_model(va_model);
            const Dataset d = va_data.load();
            auto labels = recommended_labels(r, covariates_for(r, d), threads);
            auto prop = va_propensity == "model" ? r.propensity : empirical_propensity(d);
            auto v = empirical_value(d, labels, prop, !va_unnormalized);
            std::cout << json{{"value", v.value}, {"n_matched", v.n_matched}, {"weights_sum", v.weights_sum}}.dump()
                      << '\n';
            return exit_ok;
        }

        if (*sm) {
            sm_cfg.methods = parse_methods(sm_methods);
            sm_cfg.model = sm_model.config(sm_cfg.seed);
            sm_cfg.compute_value_gap = !sm_no_gap;
            sm_cfg.threads = threads;
            auto report = run_benchmark(sm_cfg);

            if (!sm_dump.empty() || !sm_external.empty()) {
                const auto scenario = Scenario::make(sm_cfg.scenario);
                if (!sm_dump.empty()) std::filesystem::create_directories(sm_dump);
                for (int rep = 0; rep < sm_cfg.reps; ++rep) {
                    auto sim = generate(scenario, sm_cfg.n, sm_cfg.p, derive_seed(sm_cfg.seed, rep, 0));
                    const std::string file = "rep_" + std::to_string(rep) + ".csv";
                    if (!sm_dump.empty()) write_csv(sm_dump + "/" + file, sim.data);
                    for (const auto& spec : sm_external) {
                        auto eq = spec.find('=');
                        if (eq == std::string::npos) throw invalid_argument("--external expects NAME=DIR");
                        auto t = read_csv_file(spec.substr(eq + 1) + "/" + file);
                        auto col = t.find("label");
                        if (!col) throw schema_error("external rule file '" + file + "' lacks a 'label' column");
                        if (static_cast<Index>(t.rows.size()) != sim.data.n())
                            throw schema_error("external rule file '" + file + "' has the wrong row count");
                        std::vector<Label> labels;
                        for (const auto& row : t.rows) labels.emplace_back(row[*col]);
                        report.rows.push_back(score_external(sim, labels, spec.substr(0, eq), rep));
                    }
                }
            }
            emit(sm_output, [&](std::ostream& os) { write_bench_csv(os, report.rows); });
            if (sm_summary) {
                for (const auto& s : report.summary)
                    std::cerr << s.method << ": misclass " << format_mean_sd(s.mean_misclass, s.std_misclass)
                              << ", value gap " << s.mean_gap << " (se " << s.se_gap << "), ok " << s.ok
                              << ", failed " << s.failed << '\n';
            }
            return exit_ok;
        }

        if (*se) {
            const Dataset d = se_data.load();
            auto rows = split_evaluate(d, se_folds, se_reps, parse_methods(se_methods), se_model.config(se_seed),
                                       se_seed, threads);
            emit(se_output, [&](std::ostream& os) { write_split_csv(os, rows); });
            return exit_ok;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_error;
    }
    return exit_error;
}
