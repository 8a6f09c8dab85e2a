#pragma once

#include <stdexcept>
#include <string>

namespace featrec {

/// Base of every exception thrown by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A required column is missing or the role mapping is inconsistent.
class schema_error : public error {
public:
    using error::error;
};

/// A cell could not be interpreted; carries its 1-based data row and column name.
class parse_error : public error {
public:
    parse_error(const std::string& msg, std::size_t row, std::string column)
        : error(msg), row_(row), column_(std::move(column)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

/// Too few observations (overall or within a treatment arm).
class insufficient_data_error : public error {
public:
    using error::error;
};

/// A covariate column has zero variance.
class constant_column_error : public error {
public:
    constant_column_error(const std::string& column)
        : error("covariate column '" + column + "' is constant"), column_(column) {}

    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

/// Arguments violate an operation's preconditions.
class invalid_argument : public error {
public:
    using error::error;
};

/// The inverse-propensity value is undefined because no row follows the rule.
class undefined_value_error : public error {
public:
    using error::error;
};

} // namespace featrec
