#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "featrec/dataset.hpp"
#include "featrec/error.hpp"
#include "featrec/json_io.hpp"
#include "featrec/loess.hpp"
#include "featrec/parallel.hpp"

namespace featrec {

enum class ScreenMethod { fdr, loess };

inline std::string to_string(ScreenMethod m) { return m == ScreenMethod::fdr ? "fdr" : "loess"; }

inline ScreenMethod screen_method_from_string(const std::string& s) {
    if (s == "fdr") return ScreenMethod::fdr;
    if (s == "loess") return ScreenMethod::loess;
    throw invalid_argument("unknown screening method '" + s + "'");
}

struct ScreenResult {
    ScreenMethod method = ScreenMethod::fdr;
    std::vector<double> scores;        // p-values (fdr) or pooled residual SSE (loess)
    std::vector<Index> selected;       // ascending column indices
    double threshold = 0.0;            // largest score admitted
};

struct MarginalPValues {
    std::vector<double> pvalues;
    std::vector<Index> rank_deficient; // columns collinear with the arm indicators (p set to 1)
};

/// Two-sided t-test p-value of the X_j coefficient in Y ~ 1 + X_j + arm
/// indicators, for every column j.
///
/// The arm indicators are partialled out first (group-mean centering), which
/// gives the same coefficient and residuals as the full least-squares fit.
inline MarginalPValues marginal_pvalues(const Dataset& d) {
    const Index n = d.n();
    const auto arms = split_by_arm(d);
    const auto df = n - static_cast<Index>(arms.size()) - 1;
    if (df < 1) throw insufficient_data_error("marginal regression needs n > 2 + (arms - 1)");

    auto center_by_arm = [&](const Eigen::VectorXd& v) {
        Eigen::VectorXd r = v;
        for (const auto& arm : arms) {
            double mean = 0.0;
            for (auto i : arm.rows) mean += v[i];
            mean /= static_cast<double>(arm.n_a());
            for (auto i : arm.rows) r[i] -= mean;
        }
        return r;
    };

    const Eigen::VectorXd ry = center_by_arm(d.y());
    boost::math::students_t tdist(static_cast<double>(df));
    MarginalPValues out;
    out.pvalues.resize(static_cast<std::size_t>(d.p()));
    for (Index j = 0; j < d.p(); ++j) {
        const Eigen::VectorXd xj = d.x().col(j);
        const Eigen::VectorXd rx = center_by_arm(xj);
        const double sxx = rx.squaredNorm();
        const double total = (xj.array() - xj.mean()).square().sum();
        if (!(sxx > 1e-12 * total)) {
            out.pvalues[j] = 1.0;
            out.rank_deficient.push_back(j);
            continue;
        }
        const double b = rx.dot(ry) / sxx;
        const double sse = (ry - b * rx).squaredNorm();
        double p = 0.0;
        if (sse > 0.0) {
            const double se = std::sqrt(sse / static_cast<double>(df) / sxx);
            const double t = std::abs(b) / se;
            p = 2.0 * boost::math::cdf(boost::math::complement(tdist, t));
        } else if (b == 0.0) {
            p = 1.0;
        }
        out.pvalues[j] = std::clamp(p, 0.0, 1.0);
    }
    return out;
}

/// Lower and upper clamp applied to p-values before the tangent transform.
inline constexpr double cauchy_pvalue_floor = 1e-15;

/// Cauchy combination: T = mean(tan((0.5 - p) pi)), p = 0.5 - atan(T)/pi.
inline double cauchy_combination(const std::vector<double>& pvals) {
    if (pvals.empty()) throw invalid_argument("cauchy_combination: empty input");
    double t = 0.0;
    for (double p : pvals) {
        if (std::isnan(p)) throw invalid_argument("cauchy_combination: NaN p-value");
        p = std::clamp(p, cauchy_pvalue_floor, 1.0 - cauchy_pvalue_floor);
        // tan((0.5 - p) pi) = 1 / tan(p pi); the reciprocal form keeps precision for small p
        t += p < 0.5 ? 1.0 / std::tan(p * std::numbers::pi) : -1.0 / std::tan((1.0 - p) * std::numbers::pi);
    }
    t /= static_cast<double>(pvals.size());
    // 0.5 - atan(T)/pi, written to avoid cancellation when T is large
    if (t > 1.0) return std::atan(1.0 / t) / std::numbers::pi;
    return 0.5 - std::atan(t) / std::numbers::pi;
}

/// Benjamini-Hochberg step-up selection at level q.
inline ScreenResult bh_select(const std::vector<double>& pvals, double q = 0.05) {
    if (!(q > 0.0 && q < 1.0)) throw invalid_argument("bh_select: q must lie in (0, 1)");
    ScreenResult out;
    out.method = ScreenMethod::fdr;
    out.scores = pvals;
    const std::size_t m = pvals.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto l, auto r) { return pvals[l] < pvals[r]; });

    std::size_t best = 0; // j*, 1-based; 0 means none
    for (std::size_t j = 1; j <= m; ++j) {
        if (pvals[order[j - 1]] <= static_cast<double>(j) * q / static_cast<double>(m)) best = j;
    }
    if (best == 0) return out;
    out.threshold = pvals[order[best - 1]];
    for (std::size_t i = 0; i < m; ++i)
        if (pvals[i] <= out.threshold) out.selected.push_back(static_cast<Index>(i));
    return out;
}

/// Pooled within-arm LOESS residual SSE of Y on each X_j; keeps the
/// ceil(fraction * p) columns with the smallest SSE.
inline ScreenResult loess_screen(const Dataset& d, double fraction = 0.05, double span = 0.75, int degree = 1,
                                 unsigned threads = 1) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw invalid_argument("loess_screen: fraction must lie in (0, 1)");
    const auto arms = split_by_arm(d);
    const Index p = d.p();
    ScreenResult out;
    out.method = ScreenMethod::loess;
    out.scores.assign(static_cast<std::size_t>(p), 0.0);

    parallel_for(
        static_cast<std::size_t>(p),
        [&](std::size_t j) {
            double sse = 0.0;
            for (const auto& arm : arms) {
                Eigen::MatrixXd u(arm.n_a(), 1);
                Eigen::VectorXd y(arm.n_a());
                for (Index r = 0; r < arm.n_a(); ++r) {
                    u(r, 0) = d.x()(arm.rows[r], static_cast<Index>(j));
                    y[r] = d.y()[arm.rows[r]];
                }
                if (u.col(0).maxCoeff() == u.col(0).minCoeff()) {
                    sse = std::numeric_limits<double>::infinity();
                    break;
                }
                auto model = fit_loess(std::move(u), std::move(y), span, degree);
                Eigen::VectorXd q(1);
                for (Index r = 0; r < model.n(); ++r) {
                    q[0] = model.u_train(r, 0);
                    double e = model.y_train[r] - predict(model, q).value;
                    sse += e * e;
                }
            }
            out.scores[j] = sse;
        },
        threads);

    auto want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(p) - 1e-9));
    want = std::max<std::size_t>(want, 1);
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < out.scores.size(); ++j)
        if (std::isfinite(out.scores[j])) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](auto l, auto r) { return out.scores[l] < out.scores[r]; });
    order.resize(std::min(want, order.size()));
    for (auto j : order) {
        out.selected.push_back(static_cast<Index>(j));
        out.threshold = std::max(out.threshold, out.scores[j]);
    }
    std::sort(out.selected.begin(), out.selected.end());
    return out;
}

struct GateResult {
    double pvalue = 1.0;
    bool pass = false;
    double alpha = 0.05;
};

/// Global information test: Cauchy combination of the marginal p-values.
inline GateResult global_gate(const Dataset& d, double alpha = 0.05) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_argument("global_gate: alpha must lie in (0, 1)");
    GateResult g;
    g.alpha = alpha;
    g.pvalue = cauchy_combination(marginal_pvalues(d).pvalues);
    g.pass = g.pvalue <= alpha;
    return g;
}

/// {method, threshold, selected: [names], scores: {name: value}}
inline json to_json(const ScreenResult& r, const std::vector<std::string>& names) {
    json j;
    j["method"] = to_string(r.method);
    j["threshold"] = r.threshold;
    j["selected"] = json::array();
    for (auto idx : r.selected) j["selected"].push_back(names[static_cast<std::size_t>(idx)]);
    j["scores"] = json::object();
    for (std::size_t i = 0; i < r.scores.size(); ++i)
        j["scores"][names[i]] = std::isfinite(r.scores[i]) ? json(r.scores[i]) : json(nullptr);
    return j;
}

} // namespace featrec
