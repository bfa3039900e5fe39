#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace impact {

/// Root of every exception thrown by the library. `module()` names the
/// component that raised it so the CLI can report provenance.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(module + ": " + what), module_(std::move(module)), message_(what) {}

    [[nodiscard]] const std::string& module() const noexcept { return module_; }
    /// The description without the module prefix.
    [[nodiscard]] const std::string& message() const noexcept { return message_; }

private:
    std::string module_;
    std::string message_;
};

class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& what, std::string module = "argument")
        : Error(std::move(module), what) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error("parse", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

/// A least-squares problem without full column rank. Carries the labels of
/// the columns the rank-revealing factorization could not separate.
class RankDeficientError : public Error {
public:
    RankDeficientError(const std::string& what, std::vector<std::string> columns)
        : Error("design", what + describe(columns)), columns_(std::move(columns)) {}

    [[nodiscard]] const std::vector<std::string>& columns() const noexcept { return columns_; }

private:
    static std::string describe(const std::vector<std::string>& cols) {
        if (cols.empty()) return {};
        std::string out = " (collinear columns:";
        for (const auto& c : cols) out += " " + c;
        return out + ")";
    }

    std::vector<std::string> columns_;
};

}  // namespace impact
