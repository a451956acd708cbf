#pragma once

// The three multi-party protocols, each written as a strictly ordered
// sequence of frames on one session:
//
//   issuance      website -> CA        CERT_FETCH, ISSUE_REQUEST
//   transfer      website -> CDN       HELLO, RESPONDER_AUTH, INITIATOR_AUTH,
//                                      READY, KEY, DONE
//   provisioning  sender  -> receiver  HELLO, HELLO_ACK, KEYSHARE x2, READY,
//                                      PAYLOAD, DONE
//
// Any frame other than the expected next one aborts the session with
// UnexpectedStep; any failed check sends an ERROR frame carrying the reason
// and the step, then throws the same error locally.

#include <optional>
#include <string>
#include <vector>

#include "blindvault/attestation.hpp"
#include "blindvault/cert.hpp"
#include "blindvault/certkit.hpp"
#include "blindvault/keyvault.hpp"
#include "blindvault/wire.hpp"

namespace blindvault::protocols {

using keyvault::KeyHandle;
using wire::MsgType;

class Session {
 public:
  Session(wire::MessageChannel& channel, const wire::SessionId& id) : ch_(channel), id_(id) {}

  static wire::SessionId new_id();

  const wire::SessionId& id() const { return id_; }
  wire::MessageChannel& channel() { return ch_; }

  void send(MsgType type, Bytes payload);
  /// Payload of the next frame, which must be `type` on this session.
  Bytes expect(MsgType type, std::string_view step);
  /// Sends an ERROR frame (best effort) and throws.
  [[noreturn]] void abort(ErrorCode code, const std::string& message, std::string_view step);

 private:
  wire::MessageChannel& ch_;
  wire::SessionId id_;
};

/// A vault together with the PIN the protocol may use on it.
struct VaultRef {
  keyvault::Token& token;
  std::string pin;
};

/// Destroys volatile channel objects when a protocol run ends, however it ends.
class ChannelGuard {
 public:
  explicit ChannelGuard(VaultRef vault) : vault_(vault) {}
  ~ChannelGuard();
  ChannelGuard(const ChannelGuard&) = delete;
  ChannelGuard& operator=(const ChannelGuard&) = delete;
  void track(KeyHandle h) { handles_.push_back(h); }
  void forget(KeyHandle h);

 private:
  VaultRef vault_;
  std::vector<KeyHandle> handles_;
};

// ---- issuance --------------------------------------------------------------

struct IssueRequestMsg {
  cert::Csr csr;
  attest::Quote quote;
  Bytes encode() const;
  static IssueRequestMsg decode(ByteView data);
};

struct WebsiteIssuanceConfig {
  std::string subject;
  attest::TrustAnchors anchors;
  /// Measurement and minimum SVN/TCB expected of the CA's vault.
  attest::QuotePolicy ca_policy;
  attest::QuoteType csr_quote_type = attest::QuoteType::Epid;
  crypto::KeyAlgorithm algorithm = crypto::KeyAlgorithm::EcdsaP256;
};

struct IssuanceResult {
  cert::BlindCert cert;
  KeyHandle handle = 0;
  cert::BlindCert ca_cert;
  attest::Quote csr_quote;
};

/// Website side: fetch Cert_c, inspect its quote, have the verification
/// service check it, generate CSR_w + q_w, request issuance, verify the
/// result. Aborts with CAQuoteInvalid, IASRejected, or CertIssuerMismatch.
IssuanceResult issuance_website(wire::MessageChannel& ca, VaultRef vault,
                                const WebsiteIssuanceConfig& config);

/// Fetches a node's current certificate.
cert::BlindCert fetch_cert(wire::MessageChannel& peer);

struct CaConfig {
  KeyHandle ca_handle = 0;
  attest::TrustAnchors anchors;
  /// Measurement expected of the requesting website's vault.
  attest::QuotePolicy website_policy;
  /// Some CAs choose not to check CSR quotes; on by default.
  bool verify_csr_quote = true;
  certkit::IssueOptions issue;
};

/// CA side of one ISSUE_REQUEST. Rejections are logged in the CA vault.
void issuance_ca(Session& session, ByteView request, VaultRef vault, const cert::BlindCert& ca_cert,
                 const CaConfig& config);

// ---- website -> CDN transfer -------------------------------------------------

struct TransferHelloMsg {
  Bytes ephemeral_public;
  Bytes encode() const;
  static TransferHelloMsg decode(ByteView data);
};

struct TransferAuthMsg {
  cert::BlindCert cert;
  /// Quote binding cert.subject_public_key; the responder's lives in its
  /// certificate instead.
  std::optional<attest::Quote> quote;
  Bytes ephemeral_public;
  Bytes signature;
  Bytes encode() const;
  static TransferAuthMsg decode(ByteView data);
};

/// Bytes signed by each side: its own and the peer's ephemeral keys.
Bytes transfer_signature_input(std::string_view role, const wire::SessionId& sid,
                               ByteView own_ephemeral, ByteView peer_ephemeral);

/// Channel-key salt: session, both ephemeral keys, both certificates and
/// both quotes.
Hash32 transfer_transcript(const wire::SessionId& sid, ByteView pk_w, ByteView pk_c,
                           const cert::BlindCert& cert_w, const cert::BlindCert& cert_c,
                           const attest::Quote& q_w, const attest::Quote& q_c);

struct TransferInitiatorConfig {
  KeyHandle key = 0;
  cert::BlindCert cert;
  attest::QuoteType quote_type = attest::QuoteType::Epid;
  attest::TrustAnchors anchors;
  attest::QuotePolicy peer_policy;
};

/// Website side. Sends the wrapped key only after the responder's quote,
/// signature, and key confirmation check out.
void transfer_initiator(wire::MessageChannel& peer, VaultRef vault,
                        const TransferInitiatorConfig& config);

struct TransferResponderConfig {
  KeyHandle key = 0;
  cert::BlindCert cert;  // must embed a quote
  attest::TrustAnchors anchors;
  attest::QuotePolicy peer_policy;
};

/// CDN side, after TRANSFER_HELLO arrived. Returns the imported handles.
std::vector<KeyHandle> transfer_responder(Session& session, ByteView hello, VaultRef vault,
                                          const TransferResponderConfig& config);

// ---- provisioning ------------------------------------------------------------

enum class ProvisionPurpose : std::uint8_t { Provision = 0, Backup = 1 };

struct ProvisionHelloMsg {
  PlatformId platform_id{};
  ProvisionPurpose purpose = ProvisionPurpose::Provision;
  Hash32 log_head{};
  Bytes encode() const;
  static ProvisionHelloMsg decode(ByteView data);
};

struct KeyShareMsg {
  Bytes ephemeral_public;
  attest::Quote quote;  // ECDSA, binds ephemeral_public
  Bytes encode() const;
  static KeyShareMsg decode(ByteView data);
};

/// What both ends need to decide whether a peer belongs to the organization.
struct OrgTrust {
  Bytes mpk;
  attest::PckCacheClient* pck_cache = nullptr;
  attest::TrustAnchors anchors;
  attest::QuotePolicy policy;
};

/// Sender side of ProvisionKeys. Fails with PckRejected before any quote is
/// exchanged when the receiver's platform has no valid org-signed entry.
void provision_sender(wire::MessageChannel& peer, VaultRef vault,
                      const std::vector<KeyHandle>& handles, const OrgTrust& org,
                      ProvisionPurpose purpose = ProvisionPurpose::Provision);

struct ProvisionReceived {
  std::vector<KeyHandle> handles;
  PlatformId source{};
  ProvisionPurpose purpose = ProvisionPurpose::Provision;
};

/// Receiver side, after PROVISION_HELLO arrived. A backup records its
/// provenance in the vault before anything else.
ProvisionReceived provision_receiver(Session& session, ByteView hello, VaultRef vault,
                                     const OrgTrust& org);

/// All key objects of `vault`, for backups.
std::vector<KeyHandle> all_keys(const keyvault::Token& vault);

// ---- remote service clients --------------------------------------------------

/// Verification service reached over the wire.
class RemoteServiceClient : public attest::VerificationServiceClient {
 public:
  explicit RemoteServiceClient(std::string endpoint) : endpoint_(std::move(endpoint)) {}
  attest::AttestationVerificationReport verify(const attest::Quote& q) override;

 private:
  std::string endpoint_;
};

class RemotePckCacheClient : public attest::PckCacheClient {
 public:
  explicit RemotePckCacheClient(std::string endpoint) : endpoint_(std::move(endpoint)) {}
  std::optional<attest::PckCacheEntry> fetch(const PlatformId& platform) override;
  void publish(const attest::PckCacheEntry& entry);

 private:
  std::string endpoint_;
};

}  // namespace blindvault::protocols
