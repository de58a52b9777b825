#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedtput {

enum class Errc {
  missing_column,
  empty_dataset,
  invalid_sigma,
  trace_too_short,
  shape_mismatch,
  length_mismatch,
  bad_magic,
  version_unsupported,
  checksum_mismatch,
  empty_round,
  zero_variance,
  insufficient_history,
  trace_exhausted,
  invalid_argument,
  io,
  protocol,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::missing_column: return "MissingColumn";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::invalid_sigma: return "InvalidSigma";
    case Errc::trace_too_short: return "TraceTooShort";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::bad_magic: return "BadMagic";
    case Errc::version_unsupported: return "VersionUnsupported";
    case Errc::checksum_mismatch: return "ChecksumMismatch";
    case Errc::empty_round: return "EmptyRound";
    case Errc::zero_variance: return "ZeroVariance";
    case Errc::insufficient_history: return "InsufficientHistory";
    case Errc::trace_exhausted: return "TraceExhausted";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::io: return "IoError";
    case Errc::protocol: return "ProtocolError";
  }
  return "Unknown";
}

// All library failures are reported through this type; code() identifies
// the failure class, what() carries "<Name>: detail".
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace fedtput
