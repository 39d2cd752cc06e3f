#pragma once

#include <stdexcept>
#include <string>

namespace wxs {

/// Base of every error raised by the library. `error_class()` is the short,
/// machine-parsable tag the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* error_class() const noexcept { return "runtime"; }
};

#define WXS_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    using Error::Error;                                              \
    const char* error_class() const noexcept override { return tag; } \
  };

WXS_DEFINE_ERROR(FormatError, "format")
WXS_DEFINE_ERROR(TruncationError, "truncation")
WXS_DEFINE_ERROR(ValidationError, "validation")
WXS_DEFINE_ERROR(ManifestError, "manifest")
WXS_DEFINE_ERROR(ArgumentError, "argument")
WXS_DEFINE_ERROR(ContractError, "contract")
WXS_DEFINE_ERROR(ConfigError, "config")
WXS_DEFINE_ERROR(ModelError, "model")
WXS_DEFINE_ERROR(InsufficientDataError, "insufficient_data")
WXS_DEFINE_ERROR(UndefinedLossError, "undefined_loss")
WXS_DEFINE_ERROR(TrainingError, "training")
WXS_DEFINE_ERROR(BackendError, "backend")
WXS_DEFINE_ERROR(IoError, "io")

#undef WXS_DEFINE_ERROR

}  // namespace wxs
