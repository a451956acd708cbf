#include "blindvault/error.hpp"

namespace blindvault {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::Malformed: return "Malformed";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::Usage: return "Usage";
    case ErrorCode::CryptoFailure: return "CryptoFailure";
    case ErrorCode::InvalidCurvePoint: return "InvalidCurvePoint";
    case ErrorCode::InvalidImage: return "InvalidImage";
    case ErrorCode::InvalidReportData: return "InvalidReportData";
    case ErrorCode::SealIdentityMismatch: return "SealIdentityMismatch";
    case ErrorCode::SealPlatformMismatch: return "SealPlatformMismatch";
    case ErrorCode::SealIntegrityError: return "SealIntegrityError";
    case ErrorCode::PckUnavailable: return "PckUnavailable";
    case ErrorCode::VerificationServiceRequired: return "VerificationServiceRequired";
    case ErrorCode::WrongQuoteType: return "WrongQuoteType";
    case ErrorCode::OrgSignatureInvalid: return "OrgSignatureInvalid";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::AlreadyInitialized: return "AlreadyInitialized";
    case ErrorCode::NotInitialized: return "NotInitialized";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::UnsupportedAlgorithm: return "UnsupportedAlgorithm";
    case ErrorCode::UnknownHandle: return "UnknownHandle";
    case ErrorCode::WrongKeyType: return "WrongKeyType";
    case ErrorCode::NonExtractable: return "NonExtractable";
    case ErrorCode::CounterWriteFailure: return "CounterWriteFailure";
    case ErrorCode::RollbackDetected: return "RollbackDetected";
    case ErrorCode::ChainCorrupted: return "ChainCorrupted";
    case ErrorCode::IncompleteOperation: return "IncompleteOperation";
    case ErrorCode::VaultLocked: return "VaultLocked";
    case ErrorCode::BadCSR: return "BadCSR";
    case ErrorCode::MissingQuoteExtension: return "MissingQuoteExtension";
    case ErrorCode::CAQuoteInvalid: return "CAQuoteInvalid";
    case ErrorCode::IASRejected: return "IASRejected";
    case ErrorCode::CertIssuerMismatch: return "CertIssuerMismatch";
    case ErrorCode::QuoteInvalid: return "QuoteInvalid";
    case ErrorCode::PeerQuoteInvalid: return "PeerQuoteInvalid";
    case ErrorCode::PeerSignatureInvalid: return "PeerSignatureInvalid";
    case ErrorCode::DecryptFailure: return "DecryptFailure";
    case ErrorCode::PckRejected: return "PckRejected";
    case ErrorCode::UnexpectedStep: return "UnexpectedStep";
    case ErrorCode::PeerAborted: return "PeerAborted";
    case ErrorCode::UnsupportedForRole: return "UnsupportedForRole";
    case ErrorCode::FrameTooLarge: return "FrameTooLarge";
    case ErrorCode::Unavailable: return "Unavailable";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Ok: return 0;
    case ErrorCode::Usage: return 2;
    case ErrorCode::BadConfig: return 3;
    case ErrorCode::AuthFailure: return 4;
    case ErrorCode::VaultLocked: return 5;
    case ErrorCode::RollbackDetected: return 10;
    case ErrorCode::ChainCorrupted: return 11;
    case ErrorCode::IncompleteOperation: return 12;
    case ErrorCode::NonExtractable: return 13;
    case ErrorCode::CAQuoteInvalid: return 20;
    case ErrorCode::IASRejected: return 21;
    case ErrorCode::CertIssuerMismatch: return 22;
    case ErrorCode::QuoteInvalid: return 23;
    case ErrorCode::PeerQuoteInvalid: return 24;
    case ErrorCode::PeerSignatureInvalid: return 25;
    case ErrorCode::DecryptFailure: return 26;
    case ErrorCode::PckRejected: return 27;
    case ErrorCode::Unavailable: return 30;
    default: return 1;
  }
}

std::string Error::compose(ErrorCode code, const std::string& message, const std::string& step) {
  std::string out(to_string(code));
  if (!step.empty()) {
    out += " at ";
    out += step;
  }
  if (!message.empty()) {
    out += ": ";
    out += message;
  }
  return out;
}

}  // namespace blindvault
