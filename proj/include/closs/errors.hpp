#pragma once

#include <stdexcept>
#include <string>

namespace closs {

// Bad input files, schemas, or configuration. CLI exit code 1.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Estimation degeneracies: empty panel, empty working-model class, n < 2.
// CLI exit code 2.
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A checked validation property failed. CLI exit code 3.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace closs
