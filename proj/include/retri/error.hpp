#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace retri {

enum class ErrorCode {
  // data / format
  EmptyDataset,
  AmbiguousLabel,
  FormatError,
  VersionError,
  DataError,
  ShapeMismatch,
  DuplicateId,
  IdCoverageError,
  IoError,
  // configuration
  ConfigError,
  InvalidSpec,
  EmptyAxis,
  // stage runtime
  CropTooLarge,
  BackendUnavailable,
  SubprocessProtocolError,
  NotEnoughSamples,
  NPartsExceedsChannels,
  ChannelMismatch,
  RankDeficient,
  DimMismatch,
  EmptyGallery,
  KTooLarge,
  InvalidK,
  MissingCamera,
  NoValidQueries,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::AmbiguousLabel: return "AmbiguousLabel";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::VersionError: return "VersionError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::IdCoverageError: return "IdCoverageError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyAxis: return "EmptyAxis";
    case ErrorCode::CropTooLarge: return "CropTooLarge";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::SubprocessProtocolError: return "SubprocessProtocolError";
    case ErrorCode::NotEnoughSamples: return "NotEnoughSamples";
    case ErrorCode::NPartsExceedsChannels: return "NPartsExceedsChannels";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::MissingCamera: return "MissingCamera";
    case ErrorCode::NoValidQueries: return "NoValidQueries";
  }
  return "Unknown";
}

/// Process exit code for an error: 2 config, 3 data, 4 stage runtime.
constexpr int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidSpec:
    case ErrorCode::EmptyAxis:
      return 2;
    case ErrorCode::EmptyDataset:
    case ErrorCode::AmbiguousLabel:
    case ErrorCode::FormatError:
    case ErrorCode::VersionError:
    case ErrorCode::DataError:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DuplicateId:
    case ErrorCode::IdCoverageError:
    case ErrorCode::IoError:
      return 3;
    default:
      return 4;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// "<CodeName>: <message>", single line.
  std::string describe() const {
    std::string out(to_string(code_));
    out += ": ";
    for (char c : std::string_view(what())) out += (c == '\n') ? ' ' : c;
    return out;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace retri
