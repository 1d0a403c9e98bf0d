// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pikv {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
    using Error::Error;
};

struct InvalidConfig : Error {
    using Error::Error;
};

struct InvalidEntry : Error {
    using Error::Error;
};

struct NumericalError : Error {
    using Error::Error;
};

struct CodecMismatch : Error {
    using Error::Error;
};

struct NotFitted : Error {
    using Error::Error;
};

struct InsufficientCalibration : Error {
    using Error::Error;
};

struct InvalidComparison : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace pikv
