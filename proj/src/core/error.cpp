#include "memreduce/error.hpp"

namespace memreduce {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::IoFailure: return "IOFailure";
    case ErrorCode::InvalidJob: return "InvalidJob";
    case ErrorCode::InputNotFound: return "InputNotFound";
    case ErrorCode::OutputAlreadyExists: return "OutputAlreadyExists";
    case ErrorCode::UserFunctionError: return "UserFunctionError";
    case ErrorCode::EngineDown: return "EngineDown";
    case ErrorCode::JobInFlight: return "JobInFlight";
    case ErrorCode::EmitAfterTaskEnd: return "EmitAfterTaskEnd";
    case ErrorCode::TransportInitFailure: return "TransportInitFailure";
    case ErrorCode::TransportFailure: return "TransportFailure";
    case ErrorCode::UnknownNamedOutput: return "UnknownNamedOutput";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::BlockNotFound: return "BlockNotFound";
    case ErrorCode::ParentNotFound: return "ParentNotFound";
    case ErrorCode::IsDirectory: return "IsDirectory";
    case ErrorCode::DestinationExists: return "DestinationExists";
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::AncestorIsFile: return "AncestorIsFile";
    case ErrorCode::NotInCache: return "NotInCache";
    case ErrorCode::OutputExists: return "OutputExists";
    case ErrorCode::CacheFull: return "CacheFull";
    case ErrorCode::SpillIoFailure: return "SpillIOFailure";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
  }
  return "Unknown";
}

}  // namespace memreduce
