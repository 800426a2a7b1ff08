#pragma once
// Error types shared by every stage of the dissection pipeline.
//
// Error        -- bad user input, malformed files, contract violations the
//                 caller can fix. The CLI maps these to exit code 1.
// InternalError -- broken internal invariant. The CLI maps these to exit 2.

#include <stdexcept>
#include <string>

namespace netdissect {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error {
public:
    FormatError(std::string field, const std::string& what)
        : Error(what), field_(std::move(field)) {}

    // Name of the header field / JSON key that failed validation.
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace netdissect
