#include "kalign/error.hpp"

namespace kalign {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidAnnotation: return "invalid-annotation";
        case ErrorKind::Schema: return "schema";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Config: return "config";
        case ErrorKind::Split: return "split";
        case ErrorKind::Contract: return "contract";
        case ErrorKind::Divergence: return "divergence";
        case ErrorKind::NotFound: return "not-found";
        case ErrorKind::Infeasible: return "infeasible";
        case ErrorKind::NoConsistentClass: return "no-consistent-class";
        case ErrorKind::Conflict: return "conflict";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

}  // namespace kalign
