#pragma once

#include <stdexcept>
#include <string>

namespace throatline {

// Base for every error raised by the library. Subclasses name the failure
// class so callers (and the CLI exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define THROATLINE_DEFINE_ERROR(Name) \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  };

THROATLINE_DEFINE_ERROR(FormatError)
THROATLINE_DEFINE_ERROR(UnsupportedFormatError)
THROATLINE_DEFINE_ERROR(IoError)
THROATLINE_DEFINE_ERROR(ParameterError)
THROATLINE_DEFINE_ERROR(ConfigurationError)
THROATLINE_DEFINE_ERROR(ShapeError)
THROATLINE_DEFINE_ERROR(RangeError)
THROATLINE_DEFINE_ERROR(EmptyCorpusError)
THROATLINE_DEFINE_ERROR(TrainingError)
THROATLINE_DEFINE_ERROR(UndefinedReferenceError)
THROATLINE_DEFINE_ERROR(InsufficientSignalError)
THROATLINE_DEFINE_ERROR(ControlError)

#undef THROATLINE_DEFINE_ERROR

}  // namespace throatline
