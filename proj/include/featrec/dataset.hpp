#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdio>
#include <fnmatch.h>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "featrec/error.hpp"

namespace featrec {

using Index = Eigen::Index;

/// Minimum number of observations per treatment arm.
inline constexpr Index min_arm_size = 5;

namespace detail {

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// Treatment label. Stored as text; numeric labels order numerically and
/// precede non-numeric ones, which order lexicographically.
class Label {
public:
    Label() = default;
    Label(std::string text) : text_(std::move(text)), numeric_(detail::parse_double(text_)) {}
    Label(const char* text) : Label(std::string(text)) {}
    Label(int value) : Label(std::to_string(value)) {}

    const std::string& str() const noexcept { return text_; }
    std::optional<double> numeric() const noexcept { return numeric_; }

    friend bool operator==(const Label& l, const Label& r) { return l.text_ == r.text_; }

    friend std::strong_ordering operator<=>(const Label& l, const Label& r) {
        if (l.numeric_ && r.numeric_) {
            if (*l.numeric_ < *r.numeric_) return std::strong_ordering::less;
            if (*l.numeric_ > *r.numeric_) return std::strong_ordering::greater;
        } else if (l.numeric_ != r.numeric_) {
            return l.numeric_ ? std::strong_ordering::less : std::strong_ordering::greater;
        }
        return l.text_ <=> r.text_;
    }

    friend std::ostream& operator<<(std::ostream& os, const Label& l) { return os << l.text_; }

private:
    std::string text_;
    std::optional<double> numeric_;
};

/// Rows of one treatment arm within a parent Dataset.
struct ArmView {
    Label label;
    std::vector<Index> rows; // strictly increasing
    Index n_a() const { return static_cast<Index>(rows.size()); }
};

/// Validated (X, A, Y) triple. Immutable after construction.
class Dataset {
public:
    Dataset(Eigen::VectorXd y, std::vector<Label> a, Eigen::MatrixXd x,
            std::vector<std::string> column_names, std::vector<std::string> ids = {})
        : y_(std::move(y)), a_(std::move(a)), x_(std::move(x)),
          names_(std::move(column_names)), ids_(std::move(ids)) {
        const Index n = y_.size();
        if (n < 2) throw insufficient_data_error("dataset needs at least 2 rows");
        if (static_cast<Index>(a_.size()) != n || x_.rows() != n)
            throw invalid_argument("y, a and x must have the same number of rows");
        if (x_.cols() < 1) throw schema_error("dataset needs at least one covariate");
        if (static_cast<Index>(names_.size()) != x_.cols())
            throw invalid_argument("column_names must match the covariate count");
        if (ids_.empty()) {
            ids_.reserve(n);
            for (Index i = 0; i < n; ++i) ids_.push_back(std::to_string(i + 1));
        } else if (static_cast<Index>(ids_.size()) != n) {
            throw invalid_argument("ids must match the row count");
        }
        if (!y_.allFinite() || !x_.allFinite()) throw invalid_argument("dataset contains non-finite values");

        for (Index i = 0; i < n; ++i) counts_[a_[i]] += 1;
        if (counts_.size() < 2) throw insufficient_data_error("dataset needs at least 2 distinct treatment labels");
        for (const auto& [label, count] : counts_) {
            if (count < min_arm_size)
                throw insufficient_data_error("treatment arm '" + label.str() + "' has " +
                                              std::to_string(count) + " rows; at least " +
                                              std::to_string(min_arm_size) + " required");
        }
        for (Index j = 0; j < x_.cols(); ++j) {
            if (x_.col(j).maxCoeff() == x_.col(j).minCoeff()) throw constant_column_error(names_[j]);
        }
    }

    Index n() const { return y_.size(); }
    Index p() const { return x_.cols(); }
    const Eigen::VectorXd& y() const { return y_; }
    const std::vector<Label>& a() const { return a_; }
    const Eigen::MatrixXd& x() const { return x_; }
    const std::vector<std::string>& column_names() const { return names_; }
    const std::vector<std::string>& ids() const { return ids_; }

    /// Distinct labels in canonical order.
    std::vector<Label> labels() const {
        std::vector<Label> out;
        for (const auto& entry : counts_) out.push_back(entry.first);
        return out;
    }

    Index count(const Label& label) const {
        auto it = counts_.find(label);
        return it == counts_.end() ? 0 : it->second;
    }

    std::optional<Index> row_of_id(const std::string& id) const {
        auto it = std::find(ids_.begin(), ids_.end(), id);
        if (it == ids_.end()) return std::nullopt;
        return static_cast<Index>(it - ids_.begin());
    }

    std::optional<Index> column_index(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) return std::nullopt;
        return static_cast<Index>(it - names_.begin());
    }

    /// New dataset from a subset of rows (revalidated).
    Dataset subset_rows(const std::vector<Index>& rows) const {
        Eigen::VectorXd y(rows.size());
        Eigen::MatrixXd x(rows.size(), p());
        std::vector<Label> a;
        std::vector<std::string> ids;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            y[r] = y_[rows[r]];
            x.row(r) = x_.row(rows[r]);
            a.push_back(a_[rows[r]]);
            ids.push_back(ids_[rows[r]]);
        }
        return Dataset(std::move(y), std::move(a), std::move(x), names_, std::move(ids));
    }

    /// New dataset restricted to the given covariate columns.
    Dataset subset_columns(const std::vector<Index>& cols) const {
        Eigen::MatrixXd x(n(), static_cast<Index>(cols.size()));
        std::vector<std::string> names;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            x.col(c) = x_.col(cols[c]);
            names.push_back(names_[cols[c]]);
        }
        return Dataset(y_, a_, std::move(x), std::move(names), ids_);
    }

    /// Same covariates and labels with a replacement response.
    Dataset with_response(Eigen::VectorXd y) const {
        return Dataset(std::move(y), a_, x_, names_, ids_);
    }

private:
    Eigen::VectorXd y_;
    std::vector<Label> a_;
    Eigen::MatrixXd x_;
    std::vector<std::string> names_;
    std::vector<std::string> ids_;
    std::map<Label, Index> counts_;
};

/// One view per distinct label, labels ascending.
inline std::vector<ArmView> split_by_arm(const Dataset& d) {
    std::map<Label, std::vector<Index>> groups;
    for (Index i = 0; i < d.n(); ++i) groups[d.a()[i]].push_back(i);
    std::vector<ArmView> views;
    for (auto& [label, rows] : groups) views.push_back({label, std::move(rows)});
    return views;
}

/// p(a) = n_a / n.
inline std::map<Label, double> empirical_propensity(const Dataset& d) {
    std::map<Label, double> out;
    for (const auto& label : d.labels())
        out[label] = static_cast<double>(d.count(label)) / static_cast<double>(d.n());
    return out;
}

/// Rows of `x` belonging to `view`.
inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const ArmView& view) {
    Eigen::MatrixXd out(view.n_a(), x.cols());
    for (Index r = 0; r < view.n_a(); ++r) out.row(r) = x.row(view.rows[r]);
    return out;
}

inline Eigen::VectorXd rows_of(const Eigen::VectorXd& v, const ArmView& view) {
    Eigen::VectorXd out(view.n_a());
    for (Index r = 0; r < view.n_a(); ++r) out[r] = v[view.rows[r]];
    return out;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string quote_csv(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace detail

inline CsvTable parse_csv(std::istream& in) {
    CsvTable table;
    std::string line;
    bool first = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
            if (line.empty()) throw schema_error("CSV header row is empty");
            table.header = detail::split_csv_line(line);
            first = false;
            continue;
        }
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != table.header.size())
            throw parse_error("line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                  " fields, header has " + std::to_string(table.header.size()),
                              table.rows.size() + 1, "");
        table.rows.push_back(std::move(fields));
    }
    if (first) throw schema_error("CSV input has no header row");
    return table;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open '" + path + "'");
    return parse_csv(in);
}

/// Column roles. `x_cols` entries are names or glob patterns; empty selects
/// every column not claimed by another role.
struct Schema {
    std::string y_col = "y";
    std::string a_col = "a";
    std::vector<std::string> x_cols;
    std::string id_col;
};

namespace detail {

inline std::vector<std::size_t> resolve_covariates(const CsvTable& t, const std::vector<std::string>& patterns,
                                                   const std::vector<std::string>& reserved) {
    std::vector<std::size_t> out;
    auto is_reserved = [&](const std::string& name) {
        return std::find(reserved.begin(), reserved.end(), name) != reserved.end();
    };
    if (patterns.empty()) {
        for (std::size_t c = 0; c < t.header.size(); ++c)
            if (!is_reserved(t.header[c])) out.push_back(c);
        return out;
    }
    for (const auto& pat : patterns) {
        bool glob = pat.find_first_of("*?[") != std::string::npos;
        bool matched = false;
        for (std::size_t c = 0; c < t.header.size(); ++c) {
            bool hit = glob ? fnmatch(pat.c_str(), t.header[c].c_str(), 0) == 0 : t.header[c] == pat;
            if (hit && !is_reserved(t.header[c]) && std::find(out.begin(), out.end(), c) == out.end()) {
                out.push_back(c);
                matched = true;
            }
        }
        if (!matched) throw schema_error("covariate column '" + pat + "' not found");
    }
    return out;
}

inline double numeric_cell(const CsvTable& t, std::size_t row, std::size_t col) {
    const std::string& cell = t.rows[row][col];
    auto v = parse_double(cell);
    if (!v) {
        std::string what = cell.empty() ? "missing value" : "non-numeric value '" + cell + "'";
        throw parse_error(what + " at row " + std::to_string(row + 1) + ", column '" + t.header[col] + "'",
                          row + 1, t.header[col]);
    }
    if (!std::isfinite(*v))
        throw parse_error("non-finite value at row " + std::to_string(row + 1) + ", column '" + t.header[col] + "'",
                          row + 1, t.header[col]);
    return *v;
}

} // namespace detail

inline Dataset dataset_from_table(const CsvTable& t, const Schema& schema) {
    auto y_col = t.find(schema.y_col);
    if (!y_col) throw schema_error("response column '" + schema.y_col + "' not found");
    auto a_col = t.find(schema.a_col);
    if (!a_col) throw schema_error("treatment column '" + schema.a_col + "' not found");
    std::optional<std::size_t> id_col;
    if (!schema.id_col.empty()) {
        id_col = t.find(schema.id_col);
        if (!id_col) throw schema_error("id column '" + schema.id_col + "' not found");
    }
    std::vector<std::string> reserved{schema.y_col, schema.a_col};
    if (!schema.id_col.empty()) reserved.push_back(schema.id_col);
    auto x_cols = detail::resolve_covariates(t, schema.x_cols, reserved);
    if (x_cols.empty()) throw schema_error("no covariate columns selected");

    const auto n = static_cast<Index>(t.rows.size());
    Eigen::VectorXd y(n);
    Eigen::MatrixXd x(n, static_cast<Index>(x_cols.size()));
    std::vector<Label> a;
    std::vector<std::string> ids;
    a.reserve(n);
    for (Index i = 0; i < n; ++i) {
        y[i] = detail::numeric_cell(t, i, *y_col);
        const std::string& label = t.rows[i][*a_col];
        if (label.empty())
            throw parse_error("missing treatment label at row " + std::to_string(i + 1), i + 1, schema.a_col);
        a.emplace_back(label);
        for (std::size_t c = 0; c < x_cols.size(); ++c) x(i, c) = detail::numeric_cell(t, i, x_cols[c]);
        if (id_col) ids.push_back(t.rows[i][*id_col]);
    }
    std::vector<std::string> names;
    for (auto c : x_cols) names.push_back(t.header[c]);
    return Dataset(std::move(y), std::move(a), std::move(x), std::move(names), std::move(ids));
}

inline Dataset load_csv(const std::string& path, const Schema& schema) {
    return dataset_from_table(read_csv_file(path), schema);
}

/// Header `id,<y>,<a>,<x names...>`; numbers with 17 significant digits.
inline void write_csv(std::ostream& os, const Dataset& d, const std::string& y_name = "y",
                      const std::string& a_name = "a", const std::string& id_name = "id") {
    os << detail::quote_csv(id_name) << ',' << detail::quote_csv(y_name) << ',' << detail::quote_csv(a_name);
    for (const auto& name : d.column_names()) os << ',' << detail::quote_csv(name);
    os << '\n';
    for (Index i = 0; i < d.n(); ++i) {
        os << detail::quote_csv(d.ids()[i]) << ',' << detail::format_double(d.y()[i]) << ','
           << detail::quote_csv(d.a()[i].str());
        for (Index j = 0; j < d.p(); ++j) os << ',' << detail::format_double(d.x()(i, j));
        os << '\n';
    }
}

inline void write_csv(const std::string& path, const Dataset& d) {
    std::ofstream out(path);
    if (!out) throw error("cannot write '" + path + "'");
    write_csv(out, d);
}

/// Covariate rows read by column name, for scoring new patients.
struct CovariateTable {
    Eigen::MatrixXd x;
    std::vector<std::string> ids;
};

inline CovariateTable covariates_from_table(const CsvTable& t, const std::vector<std::string>& names,
                                            const std::string& id_col = "") {
    std::vector<std::string> missing;
    std::vector<std::size_t> cols;
    for (const auto& name : names) {
        auto c = t.find(name);
        if (!c) missing.push_back(name);
        else cols.push_back(*c);
    }
    if (!missing.empty()) {
        std::string msg = "missing covariate columns:";
        for (const auto& m : missing) msg += " " + m;
        throw schema_error(msg);
    }
    std::optional<std::size_t> idc;
    if (!id_col.empty()) {
        idc = t.find(id_col);
        if (!idc) throw schema_error("id column '" + id_col + "' not found");
    }
    CovariateTable out;
    const auto n = static_cast<Index>(t.rows.size());
    out.x.resize(n, static_cast<Index>(cols.size()));
    for (Index i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cols.size(); ++c) out.x(i, c) = detail::numeric_cell(t, i, cols[c]);
        out.ids.push_back(idc ? t.rows[i][*idc] : std::to_string(i + 1));
    }
    return out;
}

} // namespace featrec
