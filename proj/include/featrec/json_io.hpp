#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "featrec/error.hpp"

namespace featrec {

using json = nlohmann::json;

namespace detail {

inline json to_json_vector(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline json to_json_matrix(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(std::move(row));
    }
    return out;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    if (!j.is_array()) throw error("expected a JSON array of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

/// `cols` is used when the array is empty.
inline Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index cols = 0) {
    if (!j.is_array()) throw error("expected a JSON array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (rows > 0) cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (static_cast<Eigen::Index>(row.size()) != cols) throw error("ragged matrix in JSON");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

} // namespace detail
} // namespace featrec
