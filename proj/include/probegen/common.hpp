#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace probegen {

// Error taxonomy shared by all modules.
// DomainError: a value is outside its documented domain (bad latitude, negative rate).
// ContractError: a structural precondition is violated (shape mismatch, missing skips).
// FormatError: malformed file content (bad magic, truncated payload, unknown config key).
// NumericError: a computation left the finite range (non-finite loss, count overflow).
// DegenerateDataError: an algorithm cannot proceed on this data (single-class SVM input).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& m) : std::runtime_error(m) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
struct DegenerateDataError : std::runtime_error {
    explicit DegenerateDataError(const std::string& m) : std::runtime_error(m) {}
};

inline void check_domain(bool ok, const std::string& msg) {
    if (!ok) throw DomainError(msg);
}
inline void check_contract(bool ok, const std::string& msg) {
    if (!ok) throw ContractError(msg);
}
inline void check_format(bool ok, const std::string& msg) {
    if (!ok) throw FormatError(msg);
}

} // namespace probegen
