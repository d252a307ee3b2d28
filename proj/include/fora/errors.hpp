// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fora {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes passed to a matrix or tape operation.
struct DimensionError : Error {
  using Error::Error;
};

/// Numerically rank-deficient input where full column rank is required.
struct RankError : Error {
  using Error::Error;
};

/// Malformed configuration (file, CLI flags, or inconsistent values).
struct ConfigError : Error {
  using Error::Error;
};

/// Non-finite values or diverging iterations at runtime.
struct NumericalError : Error {
  using Error::Error;
};

/// Checkpoint / CSV file I/O failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fora
