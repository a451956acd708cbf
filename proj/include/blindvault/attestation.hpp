#pragma once

// Quotes for both attestation models, the simulated verification service
// that alone can check EPID quotes, and the organization's signed PCK
// certificate cache.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "blindvault/bytes.hpp"
#include "blindvault/cert.hpp"
#include "blindvault/crypto.hpp"
#include "blindvault/soft_tee.hpp"

namespace blindvault::keyvault {
class Token;
}

namespace blindvault::attest {

enum class QuoteType : std::uint8_t { Epid = 1, Ecdsa = 2 };

std::string_view to_string(QuoteType t);
QuoteType quote_type_from_string(std::string_view s);

struct Quote {
  tee::Report report;
  QuoteType type = QuoteType::Ecdsa;
  std::uint32_t epid_group_id = 0;  // EPID only
  Bytes signature;
  /// ECDSA only: [attestation-key cert, PCK cert], leaf first.
  std::vector<cert::BlindCert> pck_chain;

  Bytes signed_body() const;
  Bytes serialize() const;
  static Quote parse(ByteView data);
  Hash32 hash() const;

  friend bool operator==(const Quote&, const Quote&) = default;
};

/// EPID group: the service keeps the group secret, each platform receives a
/// member key derived from it at manufacturing time.
class EpidGroup {
 public:
  static EpidGroup generate(std::uint32_t group_id);
  EpidGroup(std::uint32_t group_id, const Hash32& secret) : id_(group_id), secret_(secret) {}

  std::uint32_t id() const { return id_; }
  Hash32 member_key_for(const PlatformId& platform) const;
  const Hash32& secret() const { return secret_; }

 private:
  std::uint32_t id_;
  Hash32 secret_;
};

/// Test-fixture stand-in for the CPU vendor: owns the root certificate that
/// anchors PCK certificates and the EPID group handed to platforms.
class Manufacturer {
 public:
  static Manufacturer create(std::string root_subject = "Simulated Manufacturer Root CA",
                             std::uint32_t epid_group_id = 1);
  static Manufacturer load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  const cert::BlindCert& root_cert() const { return root_cert_; }
  const EpidGroup& epid_group() const { return epid_; }

  /// New platform with its EPID member key installed.
  tee::PlatformSecret make_platform() const;
  cert::BlindCert issue_pck_cert(const tee::PlatformSecret& platform) const;

 private:
  Manufacturer(crypto::PrivateKey key, cert::BlindCert root, EpidGroup epid)
      : root_key_(std::move(key)), root_cert_(std::move(root)), epid_(epid) {}

  crypto::PrivateKey root_key_;
  cert::BlindCert root_cert_;
  EpidGroup epid_;
};

/// Quoting side of a platform: turns local reports into quotes. Holds the
/// ECDSA attestation key certified by the platform's PCK.
class Attester {
 public:
  Attester(const tee::Enclave& enclave, std::optional<cert::BlindCert> pck_cert);

  /// q <- Quote(x, t) with report_data bound to SHA-256(x).
  Quote quote(ByteView data, QuoteType type) const;
  /// Quote over caller-built 64-byte report_data.
  Quote quote_report_data(const tee::ReportData& report_data, QuoteType type) const;

  bool has_pck() const { return pck_cert_.has_value(); }
  const std::optional<cert::BlindCert>& pck_cert() const { return pck_cert_; }
  const tee::Enclave& enclave() const { return enclave_; }

 private:
  const tee::Enclave& enclave_;
  std::optional<cert::BlindCert> pck_cert_;
  std::optional<crypto::PrivateKey> ak_;
  std::optional<cert::BlindCert> ak_cert_;
};

enum class Verdict : std::uint8_t { Ok = 0, SignatureInvalid = 1, GroupRevoked = 2 };

std::string_view to_string(Verdict v);

struct AttestationVerificationReport {
  Hash32 quote_hash{};
  Verdict verdict = Verdict::SignatureInvalid;
  cert::UnixSeconds timestamp = 0;
  Bytes service_signature;

  Bytes signed_body() const;
  Bytes serialize() const;
  static AttestationVerificationReport parse(ByteView data);
  bool verify_signature(ByteView service_public_key) const;
};

/// The verification-service role. The only holder of EPID group secrets.
class VerificationService {
 public:
  VerificationService(std::vector<EpidGroup> groups, crypto::PrivateKey signing_key);

  /// Throws WrongQuoteType for non-EPID quotes.
  AttestationVerificationReport verify(const Quote& q) const;
  Bytes public_key() const { return signing_key_.public_der(); }
  void revoke_group(std::uint32_t group_id);

 private:
  std::map<std::uint32_t, Hash32> groups_;
  crypto::PrivateKey signing_key_;
  mutable std::mutex mu_;
  std::set<std::uint32_t> revoked_;
};

class VerificationServiceClient {
 public:
  virtual ~VerificationServiceClient() = default;
  virtual AttestationVerificationReport verify(const Quote& q) = 0;
};

/// In-process client for tests and for nodes colocated with the service.
class LocalServiceClient : public VerificationServiceClient {
 public:
  explicit LocalServiceClient(const VerificationService& service) : service_(service) {}
  AttestationVerificationReport verify(const Quote& q) override { return service_.verify(q); }

 private:
  const VerificationService& service_;
};

/// Memoizes OK reports per quote hash for `ttl` seconds.
class CachingServiceClient : public VerificationServiceClient {
 public:
  explicit CachingServiceClient(VerificationServiceClient& inner,
                                cert::UnixSeconds ttl = cert::kDay)
      : inner_(inner), ttl_(ttl) {}
  AttestationVerificationReport verify(const Quote& q) override;
  std::size_t upstream_calls() const { return upstream_calls_; }

 private:
  VerificationServiceClient& inner_;
  cert::UnixSeconds ttl_;
  std::mutex mu_;
  std::map<Hash32, std::pair<cert::UnixSeconds, AttestationVerificationReport>> cache_;
  std::size_t upstream_calls_ = 0;
};

struct TrustAnchors {
  std::vector<cert::BlindCert> manufacturer_roots;
  Bytes service_public_key;
  VerificationServiceClient* service = nullptr;
  cert::UnixSeconds now = 0;  // 0 = wall clock
};

struct QuotePolicy {
  std::vector<Hash32> expected_mrenclave;
  std::uint16_t min_svn = 0;
  std::uint16_t min_tcb = 0;
};

enum class QuoteStatus : std::uint8_t {
  Ok = 0,
  SignatureInvalid,
  ReportDataMismatch,
  MrenclaveMismatch,
  TcbOutdated,
  QuoteTypeMismatch,
  VerificationServiceRequired,
};

std::string_view to_string(QuoteStatus s);

struct QuoteVerdict {
  QuoteStatus status = QuoteStatus::Ok;
  std::string detail;

  bool ok() const { return status == QuoteStatus::Ok; }
  explicit operator bool() const { return ok(); }
};

/// Attestation signature only: ECDSA by walking the PCK chain offline, EPID
/// by consulting the verification service.
QuoteVerdict check_quote_signature(const Quote& q, const TrustAnchors& anchors);

/// Field inspection without the signature: report_data binding, mrenclave
/// allowlist, and SVN/TCB minimums, in that order.
QuoteVerdict inspect_quote_fields(const Quote& q, ByteView expected_data,
                                  const QuotePolicy& policy);

/// Full check: quote type, signature, then the field inspection. Reports
/// the first failing check rather than throwing.
QuoteVerdict verify_quote(const Quote& q, ByteView expected_data, QuoteType type,
                          const TrustAnchors& anchors, const QuotePolicy& policy);

/// PCK certificate of the platform that produced an ECDSA quote.
const cert::BlindCert* quote_pck_cert(const Quote& q);

struct PckCacheEntry {
  PlatformId platform_id{};
  cert::BlindCert pck_cert;
  Bytes org_signature;

  Bytes signed_payload() const;
  Bytes serialize() const;
  static PckCacheEntry parse(ByteView data);
  bool verify(ByteView mpk) const;
};

/// Draft entry for a platform's PCK certificate, not yet org-signed.
PckCacheEntry pck_entry_draft(const cert::BlindCert& pck_cert);

/// Signs each draft with the org master key `msk` held in the admin vault.
std::vector<PckCacheEntry> sign_pck_cache(std::vector<PckCacheEntry> drafts,
                                          keyvault::Token& admin, std::uint64_t msk_handle,
                                          std::string_view pin);

/// Server-side store. One entry per platform; writes are serialized.
class PckCache {
 public:
  PckCache() = default;
  explicit PckCache(std::filesystem::path file);

  void put(const PckCacheEntry& entry);
  std::optional<PckCacheEntry> get(const PlatformId& platform) const;
  std::size_t size() const;

 private:
  void persist_locked() const;

  std::optional<std::filesystem::path> file_;
  mutable std::mutex mu_;
  std::map<PlatformId, PckCacheEntry> entries_;
};

class PckCacheClient {
 public:
  virtual ~PckCacheClient() = default;
  virtual std::optional<PckCacheEntry> fetch(const PlatformId& platform) = 0;
};

class LocalPckCacheClient : public PckCacheClient {
 public:
  explicit LocalPckCacheClient(const PckCache& cache) : cache_(cache) {}
  std::optional<PckCacheEntry> fetch(const PlatformId& platform) override {
    return cache_.get(platform);
  }

 private:
  const PckCache& cache_;
};

/// Fetches and checks the org signature. Throws NotFound or OrgSignatureInvalid.
PckCacheEntry fetch_pck_cert(const PlatformId& platform, PckCacheClient& cache, ByteView mpk);

}  // namespace blindvault::attest
