#pragma once

#include <stdexcept>
#include <string>

namespace groundbox {

/// Base of every error raised by the library. Callers that only need a
/// diagnostic can catch this; the subclasses exist so tests and the CLI can
/// tell the failure classes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GROUNDBOX_DEFINE_ERROR(Name)      \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

GROUNDBOX_DEFINE_ERROR(DimensionError)
GROUNDBOX_DEFINE_ERROR(DomainError)
GROUNDBOX_DEFINE_ERROR(ContractError)
GROUNDBOX_DEFINE_ERROR(ParameterError)
GROUNDBOX_DEFINE_ERROR(VocabularyError)
GROUNDBOX_DEFINE_ERROR(LengthError)
GROUNDBOX_DEFINE_ERROR(ConfigError)
GROUNDBOX_DEFINE_ERROR(DataError)
GROUNDBOX_DEFINE_ERROR(SamplingError)
GROUNDBOX_DEFINE_ERROR(ParseError)
GROUNDBOX_DEFINE_ERROR(IntegrityError)
GROUNDBOX_DEFINE_ERROR(ShapeError)
GROUNDBOX_DEFINE_ERROR(ReportError)
GROUNDBOX_DEFINE_ERROR(NumericError)

#undef GROUNDBOX_DEFINE_ERROR

}  // namespace groundbox
