#pragma once

#include <stdexcept>
#include <string>

namespace blnet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable/unwritable files, malformed or unsupported image data.
struct IoError : Error {
    using Error::Error;
};

// Bad shapes, bad arguments, contract violations.
struct ValueError : Error {
    using Error::Error;
};

}  // namespace blnet
