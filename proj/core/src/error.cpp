#include "moediff/error.hpp"

namespace moediff {

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Io:
            return 2;
        case ErrorKind::Numeric:
            return 3;
        default:
            return 1;
    }
}

}  // namespace moediff
