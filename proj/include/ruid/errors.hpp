#pragma once

#include <stdexcept>
#include <string>

// Error taxonomy shared by all modules. Each condition the pipeline can
// surface to a caller gets its own type so call sites can react (and the
// CLI can map families to exit codes).

namespace ruid {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

// html
struct IrrecoverableParse : Error {
    using Error::Error;
};

// gen
struct EmptyWordlist : Error {
    using Error::Error;
};
struct IoFailure : Error {
    using Error::Error;
};

// raster
struct ViewportTooSmall : Error {
    using Error::Error;
};
struct MalformedPng : Error {
    using Error::Error;
};

// metrics
struct EmptyReference : Error {
    using Error::Error;
};
struct DimensionMismatch : Error {
    using Error::Error;
};
struct LengthMismatch : Error {
    using Error::Error;
};
struct DegenerateInput : Error {
    using Error::Error;
};

// critic
struct OutOfRange : Error {
    using Error::Error;
};
struct EmptyInput : Error {
    using Error::Error;
};
struct DegenerateLabels : Error {
    using Error::Error;
};

// rl
struct GrammarMismatch : Error {
    using Error::Error;
};
struct DetokenizeFailure : Error {
    using Error::Error;
};
struct DivergenceDetected : Error {
    using Error::Error;
};

} // namespace ruid
