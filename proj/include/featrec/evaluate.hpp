#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "featrec/dataset.hpp"
#include "featrec/error.hpp"

namespace featrec {

struct ValueEstimate {
    double value = 0.0;
    Index n_matched = 0;
    double weights_sum = 0.0;
};

/// Inverse-propensity value of a rule given per-row recommendations.
///
/// normalized: sum(y m / p) / sum(m / p), with m_i = 1{rule_i = a_i}.
/// Otherwise sum(y m / p) / n.
inline ValueEstimate empirical_value(const Dataset& d, const std::vector<Label>& rule,
                                     const std::map<Label, double>& propensity, bool normalized = true) {
    if (static_cast<Index>(rule.size()) != d.n()) throw invalid_argument("empirical_value: rule length mismatch");
    ValueEstimate out;
    double num = 0.0;
    for (Index i = 0; i < d.n(); ++i) {
        if (!(rule[i] == d.a()[i])) continue;
        auto it = propensity.find(d.a()[i]);
        if (it == propensity.end()) throw invalid_argument("empirical_value: no propensity for arm '" + d.a()[i].str() + "'");
        if (!(it->second > 0.0)) throw invalid_argument("empirical_value: propensity must be positive");
        const double w = 1.0 / it->second;
        num += w * d.y()[i];
        out.weights_sum += w;
        ++out.n_matched;
    }
    if (out.n_matched == 0) throw undefined_value_error("empirical_value: no row follows the rule");
    out.value = normalized ? num / out.weights_sum : num / static_cast<double>(d.n());
    return out;
}

/// True conditional mean Q0(x, a).
using MeanFunction = std::function<double(const Eigen::VectorXd&, const Label&)>;

/// Labels attaining max_a Q0(x, a) (exact ties all included).
inline std::vector<Label> oracle_arms(const MeanFunction& q0, const std::vector<Label>& labels, const Eigen::VectorXd& x) {
    std::vector<Label> best;
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& a : labels) {
        double v = q0(x, a);
        if (v > top) {
            top = v;
            best = {a};
        } else if (v == top) {
            best.push_back(a);
        }
    }
    return best;
}

/// First oracle arm in canonical label order.
inline Label oracle_rule(const MeanFunction& q0, const std::vector<Label>& labels, const Eigen::VectorXd& x) {
    auto best = oracle_arms(q0, labels, x);
    return *std::min_element(best.begin(), best.end());
}

struct MisclassReport {
    double rate = 0.0;
    Index n = 0;
    Index misclassified = 0;
};

/// Fraction of rows whose recommendation is outside the oracle argmax set.
inline MisclassReport misclassification(const MeanFunction& q0, const std::vector<Label>& labels,
                                        const std::vector<Label>& recommended, const Eigen::MatrixXd& xs) {
    if (static_cast<Index>(recommended.size()) != xs.rows())
        throw invalid_argument("misclassification: recommendation count mismatch");
    MisclassReport out;
    out.n = xs.rows();
    for (Index i = 0; i < xs.rows(); ++i) {
        auto best = oracle_arms(q0, labels, xs.row(i).transpose());
        if (std::find(best.begin(), best.end(), recommended[static_cast<std::size_t>(i)]) == best.end())
            ++out.misclassified;
    }
    out.rate = out.n > 0 ? static_cast<double>(out.misclassified) / static_cast<double>(out.n) : 0.0;
    return out;
}

struct ValueGap {
    double gap = 0.0;
    double standard_error = 0.0;
};

/// Monte Carlo estimate of E[Q0(X, d0(X))] - E[Q0(X, d(X))] over the rows of xs.
inline ValueGap value_gap(const MeanFunction& q0, const std::vector<Label>& labels,
                          const std::vector<Label>& recommended, const Eigen::MatrixXd& xs) {
    if (static_cast<Index>(recommended.size()) != xs.rows() || xs.rows() == 0)
        throw invalid_argument("value_gap: recommendation count mismatch");
    const auto n = xs.rows();
    Eigen::VectorXd diff(n);
    for (Index i = 0; i < n; ++i) {
        Eigen::VectorXd x = xs.row(i).transpose();
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& a : labels) top = std::max(top, q0(x, a));
        diff[i] = top - q0(x, recommended[static_cast<std::size_t>(i)]);
    }
    ValueGap out;
    out.gap = diff.mean();
    if (n > 1) out.standard_error = std::sqrt((diff.array() - out.gap).square().sum() / static_cast<double>(n - 1) / static_cast<double>(n));
    return out;
}

} // namespace featrec
