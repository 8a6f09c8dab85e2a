#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "featrec/error.hpp"
#include "featrec/json_io.hpp"

namespace featrec {

/// Tricube kernel, supported on [-1, 1].
inline double tricube(double t) {
    t = std::abs(t);
    if (t >= 1.0) return 0.0;
    double c = 1.0 - t * t * t;
    return c * c * c;
}

/// Number of terms in a full polynomial basis of the given degree in k variables.
inline Eigen::Index loess_basis_size(int degree, Eigen::Index k) {
    switch (degree) {
    case 0: return 1;
    case 1: return 1 + k;
    default: return 1 + k + k * (k + 1) / 2;
    }
}

/// Locally weighted polynomial regression of y on Feature Scores.
///
/// When `bandwidth` is set the neighborhood is a fixed radius (in units of
/// `scale`) instead of a nearest-neighbor fraction. The radius is widened
/// when needed so that at least `loess_basis_size` points carry weight.
struct LoessModel {
    Eigen::MatrixXd u_train; // n_a x k
    Eigen::VectorXd y_train;
    double span = 0.75;
    int degree = 1;
    Eigen::VectorXd scale; // per-dimension standard deviation of u_train
    std::optional<double> bandwidth;

    Eigen::Index n() const { return u_train.rows(); }
    Eigen::Index k() const { return u_train.cols(); }
};

struct LoessPrediction {
    double value = 0.0;
    bool clamped = false;    // query moved into the training range
    bool degenerate = false; // local design was singular; weighted mean returned
};

/// h = n^(-1/(k+3)), the bandwidth rate of the local linear consistency analysis.
inline double bandwidth_schedule(Eigen::Index n, Eigen::Index k) {
    return std::pow(static_cast<double>(n), -1.0 / static_cast<double>(k + 3));
}

inline LoessModel fit_loess(Eigen::MatrixXd u, Eigen::VectorXd y, double span = 0.75, int degree = 1,
                            std::optional<double> bandwidth = std::nullopt) {
    if (u.rows() != y.size()) throw invalid_argument("loess: score and response lengths differ");
    if (u.cols() < 1) throw invalid_argument("loess: at least one score dimension required");
    if (degree < 0 || degree > 2) throw invalid_argument("loess: degree must be 0, 1 or 2");
    if (!(span > 0.0 && span <= 1.0)) throw invalid_argument("loess: span must lie in (0, 1]");
    if (bandwidth && !(*bandwidth > 0.0)) throw invalid_argument("loess: bandwidth must be positive");
    if (!u.allFinite() || !y.allFinite()) throw invalid_argument("loess: non-finite training data");

    const auto n = u.rows();
    const auto need = static_cast<Eigen::Index>(degree) * u.cols() + 2;
    if (n < need)
        throw insufficient_data_error("loess: " + std::to_string(n) + " observations, at least " +
                                      std::to_string(need) + " required for degree " + std::to_string(degree));
    if (span * static_cast<double>(n) < static_cast<double>(need))
        throw invalid_argument("loess: span too small for the local fit; minimal feasible span is " +
                               std::to_string(static_cast<double>(need) / static_cast<double>(n)));

    Eigen::VectorXd scale(u.cols());
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
        double mean = u.col(j).mean();
        double ss = (u.col(j).array() - mean).square().sum();
        scale[j] = std::sqrt(ss / static_cast<double>(n - 1));
        if (!(scale[j] > 0.0)) throw invalid_argument("loess: feature score dimension " + std::to_string(j) + " is constant");
    }
    return LoessModel{std::move(u), std::move(y), span, degree, std::move(scale), bandwidth};
}

namespace detail {

// Basis row for a scaled offset vector.
inline void loess_basis(const Eigen::VectorXd& offset, int degree, double* out) {
    const auto k = offset.size();
    *out++ = 1.0;
    if (degree >= 1)
        for (Eigen::Index i = 0; i < k; ++i) *out++ = offset[i];
    if (degree >= 2)
        for (Eigen::Index i = 0; i < k; ++i)
            for (Eigen::Index j = i; j < k; ++j) *out++ = offset[i] * offset[j];
}

/// Number of nearest neighbors in a span window.
inline Eigen::Index span_neighbors(double span, Eigen::Index n) {
    auto q = static_cast<Eigen::Index>(std::ceil(span * static_cast<double>(n) - 1e-9));
    return std::clamp<Eigen::Index>(q, 1, n);
}

} // namespace detail

/// Relative size of a pivot in the local QR below which the design is treated as singular.
inline constexpr double loess_rank_tolerance = 1e-10;

/// Smoothed response at a query (k-vector of Feature Scores).
inline LoessPrediction predict(const LoessModel& m, const Eigen::VectorXd& query) {
    const auto n = m.n();
    const auto k = m.k();
    if (query.size() != k) throw invalid_argument("loess: query dimension mismatch");
    if (!query.allFinite()) throw invalid_argument("loess: non-finite query");

    LoessPrediction out;
    Eigen::VectorXd q = query;
    for (Eigen::Index j = 0; j < k; ++j) {
        double lo = m.u_train.col(j).minCoeff();
        double hi = m.u_train.col(j).maxCoeff();
        double c = std::clamp(q[j], lo, hi);
        if (c != q[j]) out.clamped = true;
        q[j] = c;
    }

    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            double z = (m.u_train(i, j) - q[j]) / m.scale[j];
            s += z * z;
        }
        dist[static_cast<std::size_t>(i)] = std::sqrt(s);
    }

    const Eigen::Index terms = loess_basis_size(m.degree, k);
    double d_max = 0.0;
    {
        std::vector<double> sorted = dist;
        if (m.bandwidth) {
            auto floor_idx = std::min<Eigen::Index>(terms, n - 1);
            std::nth_element(sorted.begin(), sorted.begin() + floor_idx, sorted.end());
            d_max = std::max(*m.bandwidth, sorted[static_cast<std::size_t>(floor_idx)]);
        } else {
            auto nq = detail::span_neighbors(m.span, n);
            std::nth_element(sorted.begin(), sorted.begin() + (nq - 1), sorted.end());
            d_max = sorted[static_cast<std::size_t>(nq - 1)];
        }
    }

    // Weighted least squares on the sqrt(w)-scaled design; QR keeps the
    // conditioning of the local fit instead of squaring it.
    std::vector<Eigen::Index> active;
    std::vector<double> weight;
    double w_sum = 0.0;
    double wy_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double d = dist[static_cast<std::size_t>(i)];
        double w = d_max > 0.0 ? tricube(d / d_max) : (d == 0.0 ? 1.0 : 0.0);
        if (w <= 0.0) continue;
        active.push_back(i);
        weight.push_back(w);
        w_sum += w;
        wy_sum += w * m.y_train[i];
    }

    if (terms > 1 && static_cast<Eigen::Index>(active.size()) >= terms) {
        const auto na = static_cast<Eigen::Index>(active.size());
        Eigen::MatrixXd design(na, terms);
        Eigen::VectorXd rhs(na);
        Eigen::VectorXd basis(terms);
        Eigen::VectorXd offset(k);
        for (Eigen::Index r = 0; r < na; ++r) {
            const auto i = active[static_cast<std::size_t>(r)];
            const double sw = std::sqrt(weight[static_cast<std::size_t>(r)]);
            for (Eigen::Index j = 0; j < k; ++j) offset[j] = (m.u_train(i, j) - q[j]) / m.scale[j];
            detail::loess_basis(offset, m.degree, basis.data());
            design.row(r) = sw * basis.transpose();
            rhs[r] = sw * m.y_train[i];
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        qr.setThreshold(loess_rank_tolerance);
        if (qr.rank() == terms) {
            Eigen::VectorXd beta = qr.solve(rhs);
            if (std::isfinite(beta[0])) {
                out.value = beta[0];
                return out;
            }
        }
        out.degenerate = true;
    } else if (terms > 1) {
        out.degenerate = true;
    }
    out.value = wy_sum / w_sum;
    return out;
}

struct CurvePoint {
    double u;
    double y;
};

/// Predictions on an equally spaced grid spanning the training scores (k = 1).
inline std::vector<CurvePoint> curve(const LoessModel& m, int grid_size) {
    if (m.k() != 1) throw invalid_argument("loess curve requires one-dimensional scores; use predict for k > 1");
    if (grid_size < 2) throw invalid_argument("loess curve needs grid_size >= 2");
    const double lo = m.u_train.col(0).minCoeff();
    const double hi = m.u_train.col(0).maxCoeff();
    std::vector<CurvePoint> out;
    out.reserve(static_cast<std::size_t>(grid_size));
    Eigen::VectorXd q(1);
    for (int g = 0; g < grid_size; ++g) {
        double u = g == grid_size - 1 ? hi : lo + (hi - lo) * g / (grid_size - 1);
        q[0] = u;
        out.push_back({u, predict(m, q).value});
    }
    return out;
}

inline json to_json(const LoessModel& m) {
    json j;
    j["u_train"] = detail::to_json_matrix(m.u_train);
    j["y_train"] = detail::to_json_vector(m.y_train);
    j["span"] = m.span;
    j["degree"] = m.degree;
    j["scale"] = detail::to_json_vector(m.scale);
    j["bandwidth"] = m.bandwidth ? json(*m.bandwidth) : json(nullptr);
    return j;
}

inline LoessModel loess_from_json(const json& j) {
    LoessModel m;
    m.scale = detail::vector_from_json(j.at("scale"));
    m.u_train = detail::matrix_from_json(j.at("u_train"), m.scale.size());
    m.y_train = detail::vector_from_json(j.at("y_train"));
    m.span = j.at("span").get<double>();
    m.degree = j.at("degree").get<int>();
    if (j.contains("bandwidth") && !j["bandwidth"].is_null()) m.bandwidth = j["bandwidth"].get<double>();
    if (m.u_train.rows() != m.y_train.size() || m.u_train.cols() != m.scale.size())
        throw error("inconsistent loess model in JSON");
    return m;
}

} // namespace featrec
