// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace elasreg {

/// Unreadable or malformed input file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameter or configuration value.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Mesh operation applied to an inconsistent forest or a key that is not a leaf.
class MeshError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Factorization failure, stale system, or non-finite iterate.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace elasreg
