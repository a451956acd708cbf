#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace blindvault {

/// Every failure the library reports. Numeric values travel in ERROR frames,
/// so never renumber existing entries.
enum class ErrorCode : std::uint16_t {
  Ok = 0,
  Malformed = 1,
  Io = 2,
  BadConfig = 3,
  Usage = 4,
  CryptoFailure = 5,
  InvalidCurvePoint = 6,

  // soft_tee
  InvalidImage = 100,
  InvalidReportData = 101,
  SealIdentityMismatch = 102,
  SealPlatformMismatch = 103,
  SealIntegrityError = 104,

  // attestation
  PckUnavailable = 200,
  VerificationServiceRequired = 201,
  WrongQuoteType = 202,
  OrgSignatureInvalid = 203,
  NotFound = 204,

  // keyvault
  AlreadyInitialized = 300,
  NotInitialized = 301,
  AuthFailure = 302,
  UnsupportedAlgorithm = 303,
  UnknownHandle = 304,
  WrongKeyType = 305,
  NonExtractable = 306,
  CounterWriteFailure = 307,
  RollbackDetected = 308,
  ChainCorrupted = 309,
  IncompleteOperation = 310,
  VaultLocked = 311,

  // certkit
  BadCSR = 400,
  MissingQuoteExtension = 401,

  // protocols
  CAQuoteInvalid = 500,
  IASRejected = 501,
  CertIssuerMismatch = 502,
  QuoteInvalid = 503,
  PeerQuoteInvalid = 504,
  PeerSignatureInvalid = 505,
  DecryptFailure = 506,
  PckRejected = 507,
  UnexpectedStep = 508,
  PeerAborted = 509,

  // noded
  UnsupportedForRole = 600,
  FrameTooLarge = 601,
  Unavailable = 602,
};

std::string_view to_string(ErrorCode code);

/// Process exit status used by the CLI and daemon for a given error.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string step = {})
      : std::runtime_error(compose(code, message, step)),
        code_(code),
        detail_(message),
        step_(std::move(step)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  /// Protocol step at which the abort happened, empty outside protocols.
  const std::string& step() const noexcept { return step_; }

 private:
  static std::string compose(ErrorCode code, const std::string& message,
                             const std::string& step);

  ErrorCode code_;
  std::string detail_;
  std::string step_;
};

}  // namespace blindvault
