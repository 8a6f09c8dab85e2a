#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <Eigen/Dense>

#include "featrec/error.hpp"
#include "featrec/json_io.hpp"

namespace featrec {

enum class SliceMode {
    automatic,   // by_level when y has at most `count` distinct values, else equal_count
    equal_count, // sort by y, contiguous blocks of near-equal size
    by_level,    // one slice per distinct y value
};

inline std::string to_string(SliceMode m) {
    switch (m) {
    case SliceMode::automatic: return "auto";
    case SliceMode::equal_count: return "equal_count";
    default: return "by_level";
    }
}

inline SliceMode slice_mode_from_string(const std::string& s) {
    if (s == "auto") return SliceMode::automatic;
    if (s == "equal_count") return SliceMode::equal_count;
    if (s == "by_level") return SliceMode::by_level;
    throw invalid_argument("unknown slice mode '" + s + "'");
}

struct SliceSpec {
    SliceMode mode = SliceMode::automatic;
    int count = 10; // H for equal_count; distinct-level cutoff for automatic
};

/// Partition of row indices into slices of y, in increasing y order.
inline std::vector<std::vector<Eigen::Index>> make_slices(const Eigen::VectorXd& y, const SliceSpec& spec) {
    const auto n = y.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto l, auto r) { return y[l] < y[r]; });

    std::size_t distinct = 0;
    for (std::size_t i = 0; i < order.size(); ++i)
        if (i == 0 || y[order[i]] != y[order[i - 1]]) ++distinct;

    SliceMode mode = spec.mode;
    if (mode == SliceMode::automatic)
        mode = distinct <= static_cast<std::size_t>(spec.count) ? SliceMode::by_level : SliceMode::equal_count;

    std::vector<std::vector<Eigen::Index>> slices;
    if (mode == SliceMode::by_level) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i == 0 || y[order[i]] != y[order[i - 1]]) slices.emplace_back();
            slices.back().push_back(order[i]);
        }
    } else {
        const auto h = static_cast<Eigen::Index>(spec.count);
        if (h < 2) throw invalid_argument("sir: at least 2 slices required");
        if (n < h) throw insufficient_data_error("sir: fewer observations than slices");
        const auto base = n / h;
        const auto extra = n % h;
        std::size_t pos = 0;
        for (Eigen::Index s = 0; s < h; ++s) {
            auto size = static_cast<std::size_t>(base + (s < extra ? 1 : 0));
            slices.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                order.begin() + static_cast<std::ptrdiff_t>(pos + size));
            pos += size;
        }
    }
    if (slices.size() < 2) throw insufficient_data_error("sir: response has fewer than 2 distinct levels");
    for (auto& s : slices) std::sort(s.begin(), s.end());
    return slices;
}

/// Fitted SIR directions for one arm.
struct SirFit {
    Eigen::MatrixXd directions;  // k x p; rows are the leading directions in the original x scale
    Eigen::VectorXd eigenvalues; // length p, descending, clipped to [0, 1]
    Eigen::VectorXd center;      // column means
    Eigen::MatrixXd whitener;    // symmetric (cov + ridge I)^(-1/2)
    int n_slices = 0;
    Eigen::Index n_used = 0;
    double ridge_used = 0.0;

    Eigen::Index k() const { return directions.rows(); }
    Eigen::Index p() const { return directions.cols(); }
};

/// Ridge added to the covariance before the inverse square root,
/// relative to trace / p.
inline constexpr double sir_ridge = 1e-8;
inline constexpr double sir_ridge_escalated = 1e-4;
inline constexpr double sir_condition_limit = 1e10;

inline SirFit fit_sir(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int k = 1, const SliceSpec& spec = {}) {
    const auto n = x.rows();
    const auto p = x.cols();
    if (y.size() != n) throw invalid_argument("sir: x and y row counts differ");
    if (!x.allFinite() || !y.allFinite()) throw invalid_argument("sir: non-finite input");
    if (k < 1) throw invalid_argument("sir: k must be at least 1");
    if (k >= p) throw invalid_argument("sir: k must be < number of covariates");
    if (n < 2) throw insufficient_data_error("sir: at least 2 observations required");

    const auto slices = make_slices(y, spec);
    const auto h = static_cast<int>(slices.size());
    if (k >= h) throw invalid_argument("sir: k must be < slice count");

    SirFit fit;
    fit.n_slices = h;
    fit.n_used = n;
    fit.center = x.colwise().mean().transpose();
    const Eigen::MatrixXd xc = x.rowwise() - fit.center.transpose();
    const Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> cov_eig(cov);
    Eigen::VectorXd lambda = cov_eig.eigenvalues().cwiseMax(0.0);
    const double scale = lambda.sum() / static_cast<double>(p);
    if (!(scale > 0.0)) throw invalid_argument("sir: covariates have zero total variance");
    double ridge = sir_ridge * scale;
    const double lmin = lambda.minCoeff();
    if (lmin <= 0.0 || lambda.maxCoeff() / lmin > sir_condition_limit) ridge = sir_ridge_escalated * scale;
    fit.ridge_used = ridge;
    const Eigen::VectorXd inv_sqrt = (lambda.array() + ridge).rsqrt().matrix();
    fit.whitener = cov_eig.eigenvectors() * inv_sqrt.asDiagonal() * cov_eig.eigenvectors().transpose();
    fit.whitener = 0.5 * (fit.whitener + fit.whitener.transpose()).eval();

    const Eigen::MatrixXd z = xc * fit.whitener;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
    for (const auto& slice : slices) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
        for (auto i : slice) mean += z.row(i).transpose();
        mean /= static_cast<double>(slice.size());
        m.noalias() += (static_cast<double>(slice.size()) / static_cast<double>(n)) * mean * mean.transpose();
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> m_eig(m);
    fit.eigenvalues = m_eig.eigenvalues().reverse().cwiseMax(0.0).cwiseMin(1.0);
    fit.directions.resize(k, p);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd v = m_eig.eigenvectors().col(p - 1 - j);
        Eigen::RowVectorXd beta = v.transpose() * fit.whitener;
        Eigen::Index arg = 0;
        beta.cwiseAbs().maxCoeff(&arg);
        if (beta[arg] < 0.0) beta = -beta;
        fit.directions.row(j) = beta;
    }
    return fit;
}

/// u = B x for each row of x (raw, uncentered covariates).
inline Eigen::MatrixXd feature_scores(const SirFit& fit, const Eigen::MatrixXd& x) {
    if (x.cols() != fit.p()) throw invalid_argument("feature_scores: covariate dimension mismatch");
    return x * fit.directions.transpose();
}

struct DimensionTestStep {
    int m;
    double statistic;
    double df;
    double pvalue;
};

struct DimensionTest {
    int k_hat = 0;
    std::vector<DimensionTestStep> steps;
    bool exhausted = false; // ran out of slices before accepting; k_hat = H - 2
};

/// Sequential chi-square test for the number of directions:
/// T_m = n * sum_{j>m} lambda_j, df = (p - m)(H - m - 1).
inline DimensionTest chi2_dimension_test(const SirFit& fit, double level = 0.05) {
    if (!(level > 0.0 && level < 1.0)) throw invalid_argument("chi2_dimension_test: level must lie in (0, 1)");
    const auto p = fit.eigenvalues.size();
    const int h = fit.n_slices;
    DimensionTest out;
    for (int m = 0;; ++m) {
        if (h <= m + 1) {
            out.k_hat = std::max(0, h - 2);
            out.exhausted = true;
            return out;
        }
        double t = 0.0;
        for (Eigen::Index j = m; j < p; ++j) t += fit.eigenvalues[j];
        t *= static_cast<double>(fit.n_used);
        const double df = static_cast<double>(p - m) * static_cast<double>(h - m - 1);
        double pv = 1.0;
        if (df > 0.0 && t > 0.0) pv = boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), t));
        out.steps.push_back({m, t, df, pv});
        if (pv > level) {
            out.k_hat = m;
            return out;
        }
    }
}

inline json to_json(const SirFit& f) {
    json j;
    j["directions"] = detail::to_json_matrix(f.directions);
    j["eigenvalues"] = detail::to_json_vector(f.eigenvalues);
    j["center"] = detail::to_json_vector(f.center);
    j["whitener"] = detail::to_json_matrix(f.whitener);
    j["n_slices"] = f.n_slices;
    j["n_used"] = f.n_used;
    j["ridge_used"] = f.ridge_used;
    return j;
}

inline SirFit sir_from_json(const json& j) {
    SirFit f;
    f.directions = detail::matrix_from_json(j.at("directions"));
    f.eigenvalues = detail::vector_from_json(j.at("eigenvalues"));
    f.center = detail::vector_from_json(j.at("center"));
    f.whitener = detail::matrix_from_json(j.at("whitener"));
    f.n_slices = j.at("n_slices").get<int>();
    f.n_used = j.at("n_used").get<Eigen::Index>();
    f.ridge_used = j.at("ridge_used").get<double>();
    if (f.directions.cols() != f.center.size() || f.whitener.rows() != f.center.size())
        throw error("inconsistent SIR fit in JSON");
    return f;
}

} // namespace featrec
