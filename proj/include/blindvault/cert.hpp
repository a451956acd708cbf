#pragma once

// Simplified certificates and signing requests. The encoding is a canonical
// length-prefixed binary format; the signed payload of a certificate is its
// serialization with the signature field omitted.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "blindvault/bytes.hpp"
#include "blindvault/crypto.hpp"

namespace blindvault::cert {

using Serial = FixedBytes<16>;
using UnixSeconds = std::int64_t;

inline constexpr std::string_view kQuoteExtension = "bf-quote";
inline constexpr std::string_view kPlatformIdExtension = "bf-platform-id";

inline constexpr UnixSeconds kDay = 24 * 60 * 60;
inline constexpr UnixSeconds kCaValidity = 10 * 365 * kDay;
inline constexpr UnixSeconds kLeafValidity = 90 * kDay;

UnixSeconds now_seconds();

struct BlindCert {
  Serial serial{};
  std::string subject;
  std::string issuer;
  UnixSeconds not_before = 0;
  UnixSeconds not_after = 0;
  Bytes subject_public_key;
  std::map<std::string, Bytes, std::less<>> extensions;
  crypto::SignatureAlgorithm sig_algorithm = crypto::SignatureAlgorithm::None;
  Bytes signature;

  /// Signed payload: every field except `signature`.
  Bytes tbs() const;
  Bytes serialize() const;
  static BlindCert parse(ByteView data);

  std::string armor() const;
  static BlindCert from_armor(std::string_view text);

  Hash32 fingerprint() const;
  bool self_issued() const { return subject == issuer; }
  const Bytes* extension(std::string_view key) const;

  friend bool operator==(const BlindCert&, const BlindCert&) = default;
};

struct Csr {
  std::string subject;
  Bytes public_key;
  Bytes self_signature;

  Bytes tbs() const;
  Bytes serialize() const;
  static Csr parse(ByteView data);
  std::string armor() const;
  static Csr from_armor(std::string_view text);

  /// Proof of possession: the self-signature verifies under public_key.
  bool verify_pop() const;

  friend bool operator==(const Csr&, const Csr&) = default;
};

enum class CertStatus : std::uint8_t {
  Ok = 0,
  Signature,
  IssuerMismatch,
  Expired,
  Revoked,
  UntrustedRoot,
  Malformed,
};

std::string_view to_string(CertStatus s);

struct CertCheck {
  CertStatus status = CertStatus::Ok;
  std::string detail;

  bool ok() const { return status == CertStatus::Ok; }
  explicit operator bool() const { return ok(); }
};

/// True iff child's signature verifies under parent's key, child.issuer equals
/// parent.subject, and `now` lies within child's validity period.
CertCheck verify_cert(const BlindCert& child, const BlindCert& parent, UnixSeconds now);

/// Serial numbers that must fail chain validation. Loaded from a text file
/// holding one hex serial per line ('#' starts a comment).
class RevocationList {
 public:
  RevocationList() = default;
  static RevocationList load(const std::filesystem::path& path);
  void revoke(const Serial& serial) { revoked_.insert(to_hex(serial)); }
  bool is_revoked(const BlindCert& c) const { return revoked_.contains(to_hex(c.serial)); }
  std::size_t size() const { return revoked_.size(); }

 private:
  std::set<std::string> revoked_;
};

/// Walks `chain` (leaf first). Every link must verify against its successor.
/// The last certificate is either a self-signed root byte-identical to one
/// of `trusted_roots`, or is verified against the trusted root named by its
/// issuer. No certificate may be revoked.
CertCheck verify_chain(const std::vector<BlindCert>& chain,
                       const std::vector<BlindCert>& trusted_roots, UnixSeconds now,
                       const RevocationList& revoked = {});

/// Template for a certificate before signing.
struct CertRequest {
  std::string subject;
  std::string issuer;
  Bytes subject_public_key;
  UnixSeconds not_before = 0;
  UnixSeconds validity = kLeafValidity;
  std::map<std::string, Bytes, std::less<>> extensions;
};

BlindCert make_unsigned(const CertRequest& req, crypto::SignatureAlgorithm sig_alg);

/// Signs with a key held outside any vault; used by the manufacturer
/// fixture for PCK certificates.
BlindCert sign_with(const CertRequest& req, const crypto::PrivateKey& issuer_key);

Csr make_csr(std::string subject, const crypto::PrivateKey& key);

std::string armor(std::string_view label, ByteView data);
Bytes dearmor(std::string_view label, std::string_view text);

}  // namespace blindvault::cert
