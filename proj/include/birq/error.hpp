#pragma once

#include <stdexcept>
#include <string>

namespace birq {

/// Base of every error raised by the library. Subclasses name the failure class
/// so the CLI can map them onto stable exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class LengthError : public Error { public: using Error::Error; };
class InputError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

}  // namespace birq
