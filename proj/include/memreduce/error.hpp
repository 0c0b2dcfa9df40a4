#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace memreduce {

enum class ErrorCode {
  InvalidArgument,
  MalformedRecord,
  BadMagic,
  IoFailure,
  // engine
  InvalidJob,
  InputNotFound,
  OutputAlreadyExists,
  UserFunctionError,
  EngineDown,
  JobInFlight,
  EmitAfterTaskEnd,
  TransportInitFailure,
  TransportFailure,
  UnknownNamedOutput,
  // kvstore
  NotFound,
  BlockNotFound,
  ParentNotFound,
  IsDirectory,
  DestinationExists,
  InvalidPath,
  AncestorIsFile,
  // cachefs
  NotInCache,
  OutputExists,
  CacheFull,
  // baseline / workloads
  SpillIoFailure,
  DimensionMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace memreduce
