#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <tuple>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "featrec/dataset.hpp"
#include "featrec/error.hpp"
#include "featrec/evaluate.hpp"
#include "featrec/parallel.hpp"
#include "featrec/recommend.hpp"

namespace featrec {

// ---------------------------------------------------------------------------
// Scenarios

/// Simulation models with two arms {1, -1}, covariates U[-1, 1]^p and unit
/// Gaussian noise around Q0(x, a).
struct Scenario {
    int id = 1;

    static Scenario make(int id) {
        if (id < 1 || id > 4) throw invalid_argument("scenario id must be 1..4");
        return Scenario{id};
    }

    static constexpr Index min_covariates = 4;

    double mu(const Eigen::VectorXd& x) const {
        switch (id) {
        case 1: return 2.0 + 4.0 * x[0] + 4.0 * x[1] + 4.0 * x[2];
        case 2: return 2.0 + 2.0 * x[0] + 2.0 * x[1] + 4.0 * x[2] + 4.0 * x[3];
        default: return 10.0 * x[0] / (0.5 + (x[1] + 1.5) * (x[1] + 1.5));
        }
    }

    double t0(const Eigen::VectorXd& x) const {
        switch (id) {
        case 1: return 0.0;
        case 2:
        case 3: return 1.3 * (x[1] - 2.0 * x[0] * x[0] + 0.3);
        default: return 3.8 * (0.8 - x[0] * x[0] - x[1] * x[1]);
        }
    }

    /// Q0(x, a) for a in {1, -1}. Scenario 1 uses its arm-specific means.
    double q0(const Eigen::VectorXd& x, int a) const {
        if (id == 1) {
            double l = mu(x);
            return a == 1 ? l : l * l;
        }
        return mu(x) + t0(x) * a;
    }

    MeanFunction mean_function() const {
        return [s = *this](const Eigen::VectorXd& x, const Label& a) {
            auto v = a.numeric();
            if (!v) throw invalid_argument("scenario arms are numeric");
            return s.q0(x, static_cast<int>(*v));
        };
    }

    static std::vector<Label> labels() { return {Label(-1), Label(1)}; }
};

/// Deterministic stream seed for (base seed, replicate, stream) triples.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t replicate, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline Eigen::MatrixXd draw_covariates(Index n, Index p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Eigen::MatrixXd x(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) x(i, j) = unif(rng);
    return x;
}

struct SimData {
    Scenario scenario;
    Dataset data;
};

/// n rows, first ceil(n/2) assigned a = 1 before a seeded shuffle.
inline SimData generate(const Scenario& s, Index n, Index p, std::uint64_t seed) {
    if (p < Scenario::min_covariates) throw invalid_argument("scenarios need at least 4 covariates");
    std::mt19937_64 rng(seed);
    Eigen::MatrixXd x = draw_covariates(n, p, rng);
    std::vector<int> arm(static_cast<std::size_t>(n));
    const Index treated = (n + 1) / 2;
    for (Index i = 0; i < n; ++i) arm[static_cast<std::size_t>(i)] = i < treated ? 1 : -1;
    std::shuffle(arm.begin(), arm.end(), rng);
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::VectorXd y(n);
    std::vector<Label> a;
    a.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        y[i] = s.q0(x.row(i).transpose(), arm[static_cast<std::size_t>(i)]) + noise(rng);
        a.emplace_back(arm[static_cast<std::size_t>(i)]);
    }
    std::vector<std::string> names;
    for (Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
    return {s, Dataset(std::move(y), std::move(a), std::move(x), std::move(names))};
}

// ---------------------------------------------------------------------------
// OLS baseline

/// Least squares of Y on (1, x, arm indicators, x * arm indicators).
struct OlsRule {
    std::vector<Label> labels; // first is the reference arm
    Eigen::VectorXd coef;
    Index p = 0;
    bool ridge_used = false;

    double predict_mean(const Eigen::VectorXd& x, std::size_t arm) const {
        double v = coef[0] + x.dot(coef.segment(1, p));
        if (arm > 0) {
            const Index base = 1 + p + static_cast<Index>(arm - 1) * (p + 1);
            v += coef[base] + x.dot(coef.segment(base + 1, p));
        }
        return v;
    }

    Label operator()(const Eigen::VectorXd& x) const {
        std::size_t best = 0;
        double top = predict_mean(x, 0);
        for (std::size_t a = 1; a < labels.size(); ++a) {
            double v = predict_mean(x, a);
            if (v > top) {
                top = v;
                best = a;
            }
        }
        return labels[best];
    }

    std::vector<Label> recommend_all(const Eigen::MatrixXd& xs) const {
        std::vector<Label> out;
        out.reserve(static_cast<std::size_t>(xs.rows()));
        for (Index i = 0; i < xs.rows(); ++i) out.push_back((*this)(xs.row(i).transpose()));
        return out;
    }
};

inline OlsRule ols_baseline(const Dataset& d) {
    OlsRule rule;
    rule.labels = d.labels();
    rule.p = d.p();
    const auto m = static_cast<Index>(rule.labels.size());
    const Index cols = 1 + d.p() + (m - 1) * (d.p() + 1);
    Eigen::MatrixXd design = Eigen::MatrixXd::Zero(d.n(), cols);
    for (Index i = 0; i < d.n(); ++i) {
        design(i, 0) = 1.0;
        design.block(i, 1, 1, d.p()) = d.x().row(i);
        auto it = std::find(rule.labels.begin(), rule.labels.end(), d.a()[i]);
        auto arm = static_cast<Index>(it - rule.labels.begin());
        if (arm > 0) {
            const Index base = 1 + d.p() + (arm - 1) * (d.p() + 1);
            design(i, base) = 1.0;
            design.block(i, base + 1, 1, d.p()) = d.x().row(i);
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() == cols) {
        rule.coef = qr.solve(d.y());
    } else {
        Eigen::MatrixXd xtx = design.transpose() * design;
        const double ridge = 1e-8 * std::max(xtx.trace() / static_cast<double>(cols), 1e-300);
        xtx.diagonal().array() += ridge;
        rule.coef = xtx.ldlt().solve(design.transpose() * d.y());
        rule.ridge_used = true;
    }
    return rule;
}

// ---------------------------------------------------------------------------
// Benchmark

enum class Method { sir, ols, oracle, anti };

inline std::string to_string(Method m) {
    switch (m) {
    case Method::sir: return "sir";
    case Method::ols: return "ols";
    case Method::oracle: return "oracle";
    default: return "anti";
    }
}

inline Method method_from_string(const std::string& s) {
    if (s == "sir") return Method::sir;
    if (s == "ols") return Method::ols;
    if (s == "oracle") return Method::oracle;
    if (s == "anti") return Method::anti;
    throw invalid_argument("unknown method '" + s + "'");
}

struct RunConfig {
    int scenario = 3;
    Index n = 400;
    Index p = 8;
    int reps = 200;
    std::uint64_t seed = 42;
    std::vector<Method> methods{Method::sir, Method::ols, Method::oracle};
    RecommenderConfig model{}; // screening here applies to both sir and ols
    bool leave_one_out = false;
    bool compute_value_gap = true;
    Index n_test = 1000;
    unsigned threads = 1;
};

struct BenchRow {
    int scenario;
    Index n;
    Index p;
    std::string method;
    int replicate;
    double misclass_rate;
    double value_gap;
    Index n_eval;
    std::string status; // "ok" or the failure message
};

struct MethodSummary {
    std::string method;
    double mean_misclass = 0.0;
    double std_misclass = 0.0;
    double mean_gap = 0.0;
    double se_gap = 0.0; // standard error of mean_gap across replicates
    int ok = 0;
    int failed = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::vector<MethodSummary> summary;
    std::vector<std::size_t> selected_counts; // per replicate, when screening
};

namespace detail {

/// Rule for arbitrary covariate rows plus its in-sample recommendations.
struct FittedMethod {
    std::function<std::vector<Label>(const Eigen::MatrixXd&)> rule; // on the full covariate vector
    std::vector<Label> in_sample;
};

inline Eigen::MatrixXd select_cols(const Eigen::MatrixXd& x, const std::vector<Index>& cols) {
    Eigen::MatrixXd out(x.rows(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Index>(c)) = x.col(cols[c]);
    return out;
}

inline std::function<std::vector<Label>(const Eigen::MatrixXd&)> fit_rule(Method m, const Dataset& d,
                                                                          const Scenario& s,
                                                                          const RecommenderConfig& model) {
    switch (m) {
    case Method::sir: {
        auto r = std::make_shared<Recommender>(fit_recommender(d, model));
        std::vector<Index> cols;
        for (const auto& name : r->selected_columns) cols.push_back(*d.column_index(name));
        return [r, cols](const Eigen::MatrixXd& xs) { return recommended_labels(*r, select_cols(xs, cols)); };
    }
    case Method::ols: {
        auto cols = choose_columns(d, model);
        auto rule = std::make_shared<OlsRule>(ols_baseline(d.subset_columns(cols)));
        return [rule, cols](const Eigen::MatrixXd& xs) { return rule->recommend_all(select_cols(xs, cols)); };
    }
    case Method::oracle:
    case Method::anti: {
        bool anti = m == Method::anti;
        return [s, anti](const Eigen::MatrixXd& xs) {
            std::vector<Label> out;
            for (Index i = 0; i < xs.rows(); ++i) {
                Eigen::VectorXd x = xs.row(i).transpose();
                int best = s.q0(x, 1) >= s.q0(x, -1) ? 1 : -1;
                if (s.q0(x, 1) == s.q0(x, -1)) best = -1;
                out.emplace_back(anti ? -best : best);
            }
            return out;
        };
    }
    }
    throw invalid_argument("unknown method");
}

inline void summarize(BenchReport& report, const std::vector<Method>& methods) {
    for (auto m : methods) {
        MethodSummary s;
        s.method = to_string(m);
        std::vector<double> rates, gaps;
        for (const auto& row : report.rows) {
            if (row.method != s.method) continue;
            if (row.status != "ok") {
                ++s.failed;
                continue;
            }
            ++s.ok;
            rates.push_back(row.misclass_rate);
            if (std::isfinite(row.value_gap)) gaps.push_back(row.value_gap);
        }
        auto mean_sd = [](const std::vector<double>& v) -> std::pair<double, double> {
            if (v.empty()) return {std::nan(""), std::nan("")};
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - mean) * (x - mean);
            return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
        };
        std::tie(s.mean_misclass, s.std_misclass) = mean_sd(rates);
        auto [gm, gsd] = mean_sd(gaps);
        s.mean_gap = gm;
        s.se_gap = gaps.empty() ? std::nan("") : gsd / std::sqrt(static_cast<double>(gaps.size()));
        report.summary.push_back(s);
    }
}

} // namespace detail

/// Replicated simulation: generate, fit every method, score misclassification
/// on the training rows and the value gap on fresh covariate draws.
inline BenchReport run_benchmark(const RunConfig& cfg) {
    if (cfg.reps < 1) throw invalid_argument("reps must be at least 1");
    const Scenario scenario = Scenario::make(cfg.scenario);
    const auto q0 = scenario.mean_function();
    const auto labels = Scenario::labels();
    const std::size_t nm = cfg.methods.size();

    std::vector<std::vector<BenchRow>> per_rep(static_cast<std::size_t>(cfg.reps));
    std::vector<std::size_t> counts(static_cast<std::size_t>(cfg.reps), 0);

    parallel_for(
        static_cast<std::size_t>(cfg.reps),
        [&](std::size_t rep) {
            auto& rows = per_rep[rep];
            std::optional<SimData> sim;
            std::string gen_error;
            try {
                sim = generate(scenario, cfg.n, cfg.p, derive_seed(cfg.seed, rep, 0));
                if (cfg.model.screen) counts[rep] = choose_columns(sim->data, cfg.model).size();
            } catch (const std::exception& e) {
                gen_error = e.what();
            }
            Eigen::MatrixXd x_test;
            if (sim && cfg.compute_value_gap) {
                std::mt19937_64 rng(derive_seed(cfg.seed, rep, 1));
                x_test = draw_covariates(cfg.n_test, cfg.p, rng);
            }
            for (std::size_t k = 0; k < nm; ++k) {
                const Method m = cfg.methods[k];
                BenchRow row{cfg.scenario, cfg.n, cfg.p, to_string(m), static_cast<int>(rep),
                             std::nan(""), std::nan(""), cfg.n, "ok"};
                if (!sim) {
                    row.status = gen_error;
                    rows.push_back(row);
                    continue;
                }
                try {
                    const Dataset& d = sim->data;
                    auto rule = detail::fit_rule(m, d, scenario, cfg.model);
                    std::vector<Label> in_sample;
                    if (cfg.leave_one_out && (m == Method::sir || m == Method::ols)) {
                        std::vector<Index> keep(static_cast<std::size_t>(d.n() - 1));
                        for (Index i = 0; i < d.n(); ++i) {
                            keep.clear();
                            for (Index r = 0; r < d.n(); ++r)
                                if (r != i) keep.push_back(r);
                            auto loo_rule = detail::fit_rule(m, d.subset_rows(keep), scenario, cfg.model);
                            in_sample.push_back(loo_rule(d.x().row(i)).front());
                        }
                    } else {
                        in_sample = rule(d.x());
                    }
                    row.misclass_rate = misclassification(q0, labels, in_sample, d.x()).rate;
                    if (cfg.compute_value_gap) row.value_gap = value_gap(q0, labels, rule(x_test), x_test).gap;
                } catch (const std::exception& e) {
                    row.status = e.what();
                }
                rows.push_back(row);
            }
        },
        cfg.threads);

    BenchReport report;
    for (auto& rows : per_rep)
        for (auto& row : rows) report.rows.push_back(std::move(row));
    if (cfg.model.screen) report.selected_counts = std::move(counts);
    detail::summarize(report, cfg.methods);
    return report;
}

/// Misclassification and in-sample value gap of externally computed
/// per-row labels (e.g. from third-party rule learners).
inline BenchRow score_external(const SimData& sim, const std::vector<Label>& labels, const std::string& name,
                               int replicate) {
    const auto q0 = sim.scenario.mean_function();
    BenchRow row{sim.scenario.id, sim.data.n(), sim.data.p(), name, replicate, 0.0, 0.0, sim.data.n(), "ok"};
    row.misclass_rate = misclassification(q0, Scenario::labels(), labels, sim.data.x()).rate;
    row.value_gap = value_gap(q0, Scenario::labels(), labels, sim.data.x()).gap;
    return row;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "scenario,n,p,method,replicate,misclass_rate,value_gap,n_eval,status\n";
    for (const auto& r : rows) {
        os << r.scenario << ',' << r.n << ',' << r.p << ',' << r.method << ',' << r.replicate << ','
           << featrec::detail::format_double(r.misclass_rate) << ',' << featrec::detail::format_double(r.value_gap)
           << ',' << r.n_eval << ',' << featrec::detail::quote_csv(r.status) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Split evaluation

struct SplitSummary {
    std::string method;
    double mean = 0.0;
    double sd = 0.0;
    int reps = 0;
    std::vector<double> values;
};

/// "mean (std)" with three decimals.
inline std::string format_mean_sd(double mean, double sd) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f (%.3f)", mean, sd);
    return buf;
}

/// Arm-stratified fold labels 0..folds-1.
inline std::vector<int> stratified_folds(const Dataset& d, int folds, std::mt19937_64& rng) {
    std::vector<int> fold(static_cast<std::size_t>(d.n()), 0);
    std::uniform_int_distribution<int> start_dist(0, folds - 1);
    int next = start_dist(rng);
    for (auto& view : split_by_arm(d)) {
        auto rows = view.rows;
        std::shuffle(rows.begin(), rows.end(), rng);
        for (auto r : rows) {
            fold[static_cast<std::size_t>(r)] = next;
            next = (next + 1) % folds;
        }
    }
    return fold;
}

/// Repeated k-fold estimate of the held-out value of each method and of the
/// observed assignment. Screening and fitting are redone inside every split.
/// Only `sir` and `ols` are meaningful here (no oracle on real data).
inline std::vector<SplitSummary> split_evaluate(const Dataset& d, int folds, int reps, const std::vector<Method>& methods,
                                                const RecommenderConfig& model, std::uint64_t seed,
                                                unsigned threads = 1) {
    if (folds < 2) throw invalid_argument("split_evaluate: at least 2 folds required");
    if (reps < 1) throw invalid_argument("split_evaluate: reps must be at least 1");
    if (d.n() < folds * min_arm_size) throw insufficient_data_error("split_evaluate: too few rows for the fold count");
    for (auto m : methods)
        if (m != Method::sir && m != Method::ols)
            throw invalid_argument("split_evaluate supports the sir and ols methods only");

    const std::size_t nm = methods.size() + 1; // last slot: observed assignment
    std::vector<std::vector<double>> values(static_cast<std::size_t>(reps), std::vector<double>(nm, std::nan("")));

    parallel_for(
        static_cast<std::size_t>(reps),
        [&](std::size_t rep) {
            std::mt19937_64 rng(derive_seed(seed, rep, 2));
            const auto fold = stratified_folds(d, folds, rng);
            const auto f = std::uniform_int_distribution<int>(0, folds - 1)(rng);
            std::vector<Index> train, test;
            for (Index i = 0; i < d.n(); ++i) (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
            const Dataset dtrain = d.subset_rows(train);
            const Dataset dtest = d.subset_rows(test);
            const auto propensity = empirical_propensity(dtrain);
            const Scenario unused{};
            for (std::size_t k = 0; k < methods.size(); ++k) {
                try {
                    auto rule = detail::fit_rule(methods[k], dtrain, unused, model);
                    values[rep][k] = empirical_value(dtest, rule(dtest.x()), propensity).value;
                } catch (const undefined_value_error&) {
                    // no held-out row follows the rule; the replicate is dropped for this method
                }
            }
            values[rep][nm - 1] = empirical_value(dtest, dtest.a(), propensity).value;
        },
        threads);

    std::vector<SplitSummary> out;
    for (std::size_t k = 0; k < nm; ++k) {
        SplitSummary s;
        s.method = k + 1 == nm ? "observed" : to_string(methods[k]);
        for (const auto& rep : values)
            if (std::isfinite(rep[k])) s.values.push_back(rep[k]);
        s.reps = static_cast<int>(s.values.size());
        if (!s.values.empty()) {
            for (double v : s.values) s.mean += v;
            s.mean /= static_cast<double>(s.values.size());
            double ss = 0.0;
            for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
            s.sd = s.values.size() > 1 ? std::sqrt(ss / static_cast<double>(s.values.size() - 1)) : 0.0;
        } else {
            s.mean = s.sd = std::nan("");
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_split_csv(std::ostream& os, const std::vector<SplitSummary>& rows) {
    os << "method,mean,std,reps,summary\n";
    for (const auto& s : rows)
        os << s.method << ',' << featrec::detail::format_double(s.mean) << ',' << featrec::detail::format_double(s.sd)
           << ',' << s.reps << ",\"" << format_mean_sd(s.mean, s.sd) << "\"\n";
}

} // namespace featrec
