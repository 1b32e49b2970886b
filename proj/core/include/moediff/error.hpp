#pragma once

#include <stdexcept>
#include <string>

namespace moediff {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// validation-class errors map to exit 1, I/O to 2, numeric to 3.
enum class ErrorKind {
    Shape,       // dimension mismatch between operands
    Config,      // invalid configuration (k > n, steps > T, ...)
    Validation,  // config-file level validation failure
    Data,        // degenerate or insufficient input data
    Parse,       // malformed structured text (scorer payloads, CSV, config)
    Io,          // missing/unreadable/unwritable files
    Numeric,     // non-finite values where finiteness is required
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorKind::Shape, m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& m) : Error(ErrorKind::Validation, m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& m) : Error(ErrorKind::Parse, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};

// CLI contract: 0 success, 1 validation, 2 I/O, 3 numeric failure.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace moediff
