// Error taxonomy shared by the whole library. Input-side problems (parsing,
// schema, domain, validation) are distinguished from numerical failures so
// callers can map them to different process exit codes.
#pragma once

#include <stdexcept>
#include <string>

namespace enscal {

enum class errc {
    parse,       // malformed file content
    schema,      // structure disagrees with the declared sources
    domain,      // value outside its legal range (e.g. negative rain)
    validation,  // inconsistent arguments or parameter vectors
    io,          // file system failure
    degenerate,  // data carries no usable signal for the requested fit
    solver,      // iterative solver failed to bracket or converge
    numeric      // internal numerical invariant violated
};

inline const char* errc_name(errc k) {
    switch (k) {
        case errc::parse: return "parse";
        case errc::schema: return "schema";
        case errc::domain: return "domain";
        case errc::validation: return "validation";
        case errc::io: return "io";
        case errc::degenerate: return "degenerate";
        case errc::solver: return "solver";
        case errc::numeric: return "numeric";
    }
    return "unknown";
}

class Error : public std::runtime_error {
  public:
    Error(errc kind, const std::string& message)
        : std::runtime_error(std::string(errc_name(kind)) + ": " + message),
          kind_(kind) {}

    errc kind() const { return kind_; }

    // Exit code contract: 1 for bad input, 2 for numerical failure.
    int exit_code() const {
        switch (kind_) {
            case errc::degenerate:
            case errc::solver:
            case errc::numeric:
                return 2;
            default:
                return 1;
        }
    }

  private:
    errc kind_;
};

[[noreturn]] inline void fail(errc kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool cond, errc kind, const std::string& message) {
    if (!cond) fail(kind, message);
}

}  // namespace enscal
