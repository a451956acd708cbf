#include "blindvault/protocols.hpp"

#include <algorithm>

namespace blindvault::protocols {

namespace {

std::string verdict_text(const attest::QuoteVerdict& v) {
  return std::string(attest::to_string(v.status)) + (v.detail.empty() ? "" : ": " + v.detail);
}

}  // namespace

// ---- session ---------------------------------------------------------------

wire::SessionId Session::new_id() { return crypto::random_fixed<16>(); }

void Session::send(MsgType type, Bytes payload) { ch_.send({type, id_, std::move(payload)}); }

Bytes Session::expect(MsgType type, std::string_view step) {
  std::optional<wire::Frame> f;
  try {
    f = ch_.recv();
  } catch (const Error& e) {
    throw Error(e.code(), e.detail(), std::string(step));
  }
  if (!f) throw Error(ErrorCode::PeerAborted, "peer closed the session", std::string(step));
  if (f->type == MsgType::Error) {
    try {
      wire::throw_if_error(*f);
    } catch (const Error& e) {
      throw Error(e.code(), e.detail(), e.step().empty() ? std::string(step) : e.step());
    }
  }
  if (f->session != id_) abort(ErrorCode::UnexpectedStep, "frame for another session", step);
  if (f->type != type) {
    abort(ErrorCode::UnexpectedStep,
          "expected " + std::string(wire::to_string(type)) + ", got " +
              std::string(wire::to_string(f->type)),
          step);
  }
  return std::move(f->payload);
}

void Session::abort(ErrorCode code, const std::string& message, std::string_view step) {
  try {
    ch_.send(wire::error_frame(id_, code, message, std::string(step)));
  } catch (const Error&) {
    // the peer may already be gone
  }
  throw Error(code, message, std::string(step));
}

ChannelGuard::~ChannelGuard() {
  for (auto h : handles_) {
    try {
      vault_.token.destroy_channel(h, vault_.pin);
    } catch (const Error&) {
    }
  }
}

void ChannelGuard::forget(KeyHandle h) {
  handles_.erase(std::remove(handles_.begin(), handles_.end(), h), handles_.end());
}

// ---- issuance ----------------------------------------------------------------

Bytes IssueRequestMsg::encode() const {
  ByteWriter w;
  w.blob(csr.serialize()).blob(quote.serialize());
  return std::move(w).bytes();
}

IssueRequestMsg IssueRequestMsg::decode(ByteView data) {
  ByteReader r(data);
  IssueRequestMsg m;
  m.csr = cert::Csr::parse(r.blob());
  m.quote = attest::Quote::parse(r.blob());
  r.expect_end();
  return m;
}

cert::BlindCert fetch_cert(wire::MessageChannel& peer) {
  Session s(peer, Session::new_id());
  s.send(MsgType::CertFetch, {});
  auto body = s.expect(MsgType::CertResponse, "cert-fetch");
  try {
    return cert::BlindCert::parse(body);
  } catch (const Error& e) {
    throw Error(ErrorCode::Malformed, e.detail(), "cert-fetch");
  }
}

IssuanceResult issuance_website(wire::MessageChannel& ca, VaultRef vault,
                                const WebsiteIssuanceConfig& config) {
  Session s(ca, Session::new_id());

  // 1. Cert_c with q_c.
  s.send(MsgType::CertFetch, {});
  cert::BlindCert ca_cert;
  try {
    ca_cert = cert::BlindCert::parse(s.expect(MsgType::CertResponse, "fetch-ca-cert"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    throw Error(ErrorCode::CAQuoteInvalid, "unreadable CA certificate", "fetch-ca-cert");
  }

  // 2. Inspect q_c: measurement and binding to Cert_c.pk.
  attest::Quote q_c;
  try {
    q_c = certkit::embedded_quote(ca_cert);
  } catch (const Error& e) {
    throw Error(ErrorCode::CAQuoteInvalid, e.detail(), "inspect-ca-quote");
  }
  if (auto v = attest::inspect_quote_fields(q_c, ca_cert.subject_public_key, config.ca_policy); !v) {
    throw Error(ErrorCode::CAQuoteInvalid, verdict_text(v), "inspect-ca-quote");
  }
  if (!cert::verify_cert(ca_cert, ca_cert, config.anchors.now ? config.anchors.now
                                                              : cert::now_seconds())) {
    throw Error(ErrorCode::CAQuoteInvalid, "CA certificate is not validly self-signed",
                "inspect-ca-quote");
  }

  // 3. Attestation signature, through the verification service for EPID.
  attest::QuoteVerdict sig;
  try {
    sig = attest::check_quote_signature(q_c, config.anchors);
  } catch (const Error& e) {
    throw Error(ErrorCode::IASRejected, e.detail(), "ias-verify");
  }
  if (!sig) throw Error(ErrorCode::IASRejected, verdict_text(sig), "ias-verify");

  // 4. CSR_w and q_w.
  auto gen = certkit::gen_csr(vault.token, config.subject, vault.pin, config.algorithm,
                              config.csr_quote_type);

  // 5. Request and receive Cert_w.
  s.send(MsgType::IssueRequest, IssueRequestMsg{gen.csr, gen.quote}.encode());
  cert::BlindCert issued;
  try {
    issued = cert::BlindCert::parse(s.expect(MsgType::IssueResponse, "issue"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    throw Error(ErrorCode::CertIssuerMismatch, "unreadable certificate", "verify-issued-cert");
  }

  // 6. Cert_c must be the issuer of Cert_w, for our key.
  auto check = cert::verify_cert(issued, ca_cert, cert::now_seconds());
  if (!check) {
    throw Error(ErrorCode::CertIssuerMismatch,
                "issued certificate fails against Cert_c: " + std::string(cert::to_string(check.status)),
                "verify-issued-cert");
  }
  if (issued.subject_public_key != gen.csr.public_key) {
    throw Error(ErrorCode::CertIssuerMismatch, "issued certificate is for another key",
                "verify-issued-cert");
  }
  vault.token.attach_certificate(gen.handle, issued, vault.pin);
  return {issued, gen.handle, ca_cert, gen.quote};
}

void issuance_ca(Session& session, ByteView request, VaultRef vault, const cert::BlindCert& ca_cert,
                 const CaConfig& config) {
  constexpr std::string_view kStep = "ca-verify-csr";
  IssueRequestMsg req;
  try {
    req = IssueRequestMsg::decode(request);
  } catch (const Error& e) {
    vault.token.record_event("issue_rejected", request, vault.pin);
    session.abort(ErrorCode::BadCSR, "unreadable issue request: " + e.detail(), kStep);
  }
  // Every request is logged with a hash of exactly what was asked for, so
  // replays show up as repeated params in a log review.
  vault.token.record_event("issue_request", request, vault.pin);

  if (!req.csr.verify_pop()) {
    vault.token.record_event("issue_rejected", request, vault.pin);
    session.abort(ErrorCode::BadCSR, "CSR proof of possession failed", kStep);
  }
  if (config.verify_csr_quote) {
    auto v = attest::verify_quote(req.quote, req.csr.public_key, req.quote.type, config.anchors,
                                  config.website_policy);
    if (!v) {
      vault.token.record_event("issue_rejected", request, vault.pin);
      session.abort(ErrorCode::QuoteInvalid, verdict_text(v), kStep);
    }
  }
  auto issued = certkit::issue_cert(req.csr, ca_cert, vault.token, config.ca_handle, vault.pin,
                                    config.issue);
  session.send(MsgType::IssueResponse, issued.serialize());
}

// ---- transfer --------------------------------------------------------------------

Bytes TransferHelloMsg::encode() const {
  ByteWriter w;
  w.blob(ephemeral_public);
  return std::move(w).bytes();
}

TransferHelloMsg TransferHelloMsg::decode(ByteView data) {
  ByteReader r(data);
  TransferHelloMsg m;
  m.ephemeral_public = r.blob();
  r.expect_end();
  return m;
}

Bytes TransferAuthMsg::encode() const {
  ByteWriter w;
  w.blob(cert.serialize()).u8(quote ? 1 : 0);
  if (quote) w.blob(quote->serialize());
  w.blob(ephemeral_public).blob(signature);
  return std::move(w).bytes();
}

TransferAuthMsg TransferAuthMsg::decode(ByteView data) {
  ByteReader r(data);
  TransferAuthMsg m;
  m.cert = cert::BlindCert::parse(r.blob());
  if (r.u8() != 0) m.quote = attest::Quote::parse(r.blob());
  m.ephemeral_public = r.blob();
  m.signature = r.blob();
  r.expect_end();
  return m;
}

Bytes transfer_signature_input(std::string_view role, const wire::SessionId& sid,
                               ByteView own_ephemeral, ByteView peer_ephemeral) {
  ByteWriter w;
  w.str("blindvault/transfer-sig").str(role).raw(sid).blob(own_ephemeral).blob(peer_ephemeral);
  return std::move(w).bytes();
}

Hash32 transfer_transcript(const wire::SessionId& sid, ByteView pk_w, ByteView pk_c,
                           const cert::BlindCert& cert_w, const cert::BlindCert& cert_c,
                           const attest::Quote& q_w, const attest::Quote& q_c) {
  ByteWriter w;
  w.str("blindvault/transfer").raw(sid).blob(pk_w).blob(pk_c);
  w.raw(cert_w.fingerprint()).raw(cert_c.fingerprint()).raw(q_w.hash()).raw(q_c.hash());
  return crypto::sha256(w.bytes());
}

namespace {

Bytes channel_aad(std::string_view label, const wire::SessionId& sid, const Hash32& transcript) {
  ByteWriter w;
  w.str(label).raw(sid).raw(transcript);
  return std::move(w).bytes();
}

// Quote first, then the signature over both ephemeral keys.
void verify_peer_auth(Session& s, const TransferAuthMsg& m, const attest::Quote* quote,
                      std::string_view peer_role, ByteView own_ephemeral,
                      const attest::TrustAnchors& anchors, const attest::QuotePolicy& policy,
                      std::string_view step) {
  if (quote == nullptr) {
    s.abort(ErrorCode::PeerQuoteInvalid, "peer certificate carries no quote", step);
  }
  try {
    crypto::check_p256_public(m.ephemeral_public);
  } catch (const Error& e) {
    s.abort(ErrorCode::InvalidCurvePoint, e.detail(), step);
  }
  auto v = attest::verify_quote(*quote, m.cert.subject_public_key, quote->type, anchors, policy);
  if (!v) s.abort(ErrorCode::PeerQuoteInvalid, verdict_text(v), step);
  auto input = transfer_signature_input(peer_role, s.id(), m.ephemeral_public, own_ephemeral);
  if (!crypto::verify_signature(m.cert.subject_public_key, input, m.signature)) {
    s.abort(ErrorCode::PeerSignatureInvalid, "signature over the ephemeral keys does not verify",
            step);
  }
}

}  // namespace

void transfer_initiator(wire::MessageChannel& peer, VaultRef vault,
                        const TransferInitiatorConfig& config) {
  Session s(peer, Session::new_id());
  ChannelGuard guard(vault);
  auto& t = vault.token;

  auto eph = t.ecdh_keygen(vault.pin, config.quote_type);
  guard.track(eph.handle);
  s.send(MsgType::TransferHello, TransferHelloMsg{eph.public_part}.encode());

  TransferAuthMsg resp;
  try {
    resp = TransferAuthMsg::decode(s.expect(MsgType::TransferResponderAuth, "responder-auth"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    s.abort(ErrorCode::PeerQuoteInvalid, "unreadable responder auth: " + e.detail(), "responder-auth");
  }
  std::optional<attest::Quote> q_c;
  try {
    q_c = certkit::embedded_quote(resp.cert);
  } catch (const Error&) {
  }
  verify_peer_auth(s, resp, q_c ? &*q_c : nullptr, "responder", eph.public_part, config.anchors,
                   config.peer_policy, "verify-responder");

  // Own authentication: quote over Cert_w.pk and signature over both keys.
  TransferAuthMsg own;
  own.cert = config.cert;
  own.quote = t.quote_public_key(config.key, config.quote_type, vault.pin);
  own.ephemeral_public = eph.public_part;
  own.signature = t.sign(config.key,
                         transfer_signature_input("initiator", s.id(), eph.public_part,
                                                  resp.ephemeral_public),
                         vault.pin);
  s.send(MsgType::TransferInitiatorAuth, own.encode());

  auto transcript = transfer_transcript(s.id(), eph.public_part, resp.ephemeral_public, own.cert,
                                        resp.cert, *own.quote, *q_c);
  auto channel = t.derive_shared_key(eph.handle, resp.ephemeral_public, transcript, vault.pin);
  guard.forget(eph.handle);
  guard.track(channel);

  auto ready = s.expect(MsgType::TransferReady, "key-confirm");
  auto expected = t.channel_mac(channel, "transfer/responder-ready", transcript, vault.pin);
  if (!equal_ct(ready, expected)) {
    s.abort(ErrorCode::DecryptFailure, "key confirmation failed", "key-confirm");
  }

  auto wrapped = t.wrap_keys(channel, {config.key}, channel_aad("transfer/key", s.id(), transcript),
                             vault.pin);
  s.send(MsgType::TransferKey, wrapped.serialize());
  s.expect(MsgType::TransferDone, "done");
}

std::vector<KeyHandle> transfer_responder(Session& s, ByteView hello_bytes, VaultRef vault,
                                          const TransferResponderConfig& config) {
  ChannelGuard guard(vault);
  auto& t = vault.token;
  TransferHelloMsg hello;
  try {
    hello = TransferHelloMsg::decode(hello_bytes);
    crypto::check_p256_public(hello.ephemeral_public);
  } catch (const Error& e) {
    s.abort(ErrorCode::InvalidCurvePoint, "bad initiator ephemeral key: " + e.detail(), "hello");
  }
  attest::Quote q_c;
  try {
    q_c = certkit::embedded_quote(config.cert);
  } catch (const Error& e) {
    s.abort(ErrorCode::MissingQuoteExtension, e.detail(), "responder-auth");
  }

  auto eph = t.ecdh_keygen(vault.pin, q_c.type);
  guard.track(eph.handle);
  TransferAuthMsg own;
  own.cert = config.cert;
  own.ephemeral_public = eph.public_part;
  own.signature = t.sign(config.key,
                         transfer_signature_input("responder", s.id(), eph.public_part,
                                                  hello.ephemeral_public),
                         vault.pin);
  s.send(MsgType::TransferResponderAuth, own.encode());

  TransferAuthMsg init;
  try {
    init = TransferAuthMsg::decode(s.expect(MsgType::TransferInitiatorAuth, "initiator-auth"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    s.abort(ErrorCode::PeerQuoteInvalid, "unreadable initiator auth: " + e.detail(), "initiator-auth");
  }
  if (init.ephemeral_public != hello.ephemeral_public) {
    s.abort(ErrorCode::PeerSignatureInvalid, "initiator changed its ephemeral key",
            "verify-initiator");
  }
  verify_peer_auth(s, init, init.quote ? &*init.quote : nullptr, "initiator", eph.public_part,
                   config.anchors, config.peer_policy, "verify-initiator");

  auto transcript = transfer_transcript(s.id(), hello.ephemeral_public, eph.public_part, init.cert,
                                        config.cert, *init.quote, q_c);
  auto channel = t.derive_shared_key(eph.handle, hello.ephemeral_public, transcript, vault.pin);
  guard.forget(eph.handle);
  guard.track(channel);
  auto mac = t.channel_mac(channel, "transfer/responder-ready", transcript, vault.pin);
  s.send(MsgType::TransferReady, Bytes(mac.begin(), mac.end()));

  keyvault::WrappedKeys wrapped;
  try {
    wrapped = keyvault::WrappedKeys::parse(s.expect(MsgType::TransferKey, "receive-key"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    s.abort(ErrorCode::DecryptFailure, e.detail(), "receive-key");
  }
  std::vector<KeyHandle> handles;
  try {
    handles = t.unwrap_keys(channel, wrapped, channel_aad("transfer/key", s.id(), transcript),
                            vault.pin);
  } catch (const Error& e) {
    s.abort(e.code(), e.detail(), "receive-key");
  }
  // The transferred key must be the one Cert_w certifies.
  for (auto h : handles) {
    if (t.info(h)->public_part != init.cert.subject_public_key) {
      s.abort(ErrorCode::DecryptFailure, "transferred key does not match Cert_w", "receive-key");
    }
  }
  ByteWriter done;
  done.u32(static_cast<std::uint32_t>(handles.size()));
  s.send(MsgType::TransferDone, std::move(done).bytes());
  return handles;
}

// ---- provisioning ------------------------------------------------------------------

Bytes ProvisionHelloMsg::encode() const {
  ByteWriter w;
  w.raw(platform_id).u8(static_cast<std::uint8_t>(purpose)).raw(log_head);
  return std::move(w).bytes();
}

ProvisionHelloMsg ProvisionHelloMsg::decode(ByteView data) {
  ByteReader r(data);
  ProvisionHelloMsg m;
  m.platform_id = r.fixed<16>();
  auto p = r.u8();
  if (p > 1) throw Error(ErrorCode::Malformed, "unknown provisioning purpose");
  m.purpose = static_cast<ProvisionPurpose>(p);
  m.log_head = r.fixed<32>();
  r.expect_end();
  return m;
}

Bytes KeyShareMsg::encode() const {
  ByteWriter w;
  w.blob(ephemeral_public).blob(quote.serialize());
  return std::move(w).bytes();
}

KeyShareMsg KeyShareMsg::decode(ByteView data) {
  ByteReader r(data);
  KeyShareMsg m;
  m.ephemeral_public = r.blob();
  m.quote = attest::Quote::parse(r.blob());
  r.expect_end();
  return m;
}

std::vector<KeyHandle> all_keys(const keyvault::Token& vault) {
  std::vector<KeyHandle> out;
  for (const auto& k : vault.objects()) out.push_back(k.handle);
  return out;
}

namespace {

attest::PckCacheEntry check_peer_pck(Session& s, const PlatformId& peer, const OrgTrust& org,
                                     std::string_view step) {
  if (org.pck_cache == nullptr) s.abort(ErrorCode::BadConfig, "no PCK cache configured", step);
  try {
    return attest::fetch_pck_cert(peer, *org.pck_cache, org.mpk);
  } catch (const Error& e) {
    s.abort(ErrorCode::PckRejected, "platform " + to_hex(peer) + ": " + e.detail(), step);
  }
}

// Assert VerifyQuote(q, pk, ECDSA), plus: the quote comes from the platform
// whose org-signed PCK entry we checked.
void check_key_share(Session& s, const KeyShareMsg& m, const attest::PckCacheEntry& entry,
                     const OrgTrust& org, std::string_view step) {
  try {
    crypto::check_p256_public(m.ephemeral_public);
  } catch (const Error& e) {
    s.abort(ErrorCode::InvalidCurvePoint, e.detail(), step);
  }
  auto v = attest::verify_quote(m.quote, m.ephemeral_public, attest::QuoteType::Ecdsa, org.anchors,
                                org.policy);
  if (!v) s.abort(ErrorCode::QuoteInvalid, verdict_text(v), step);
  const auto* pck = attest::quote_pck_cert(m.quote);
  if (pck == nullptr || *pck != entry.pck_cert || m.quote.report.platform_id != entry.platform_id) {
    s.abort(ErrorCode::PckRejected, "quote was not produced by the vetted platform", step);
  }
}

Hash32 provision_transcript(const wire::SessionId& sid, const PlatformId& sender,
                            const PlatformId& receiver, const KeyShareMsg& s_share,
                            const KeyShareMsg& r_share) {
  ByteWriter w;
  w.str("blindvault/provision").raw(sid).raw(sender).raw(receiver);
  w.blob(s_share.ephemeral_public).blob(r_share.ephemeral_public);
  w.raw(s_share.quote.hash()).raw(r_share.quote.hash());
  return crypto::sha256(w.bytes());
}

}  // namespace

void provision_sender(wire::MessageChannel& peer, VaultRef vault,
                      const std::vector<KeyHandle>& handles, const OrgTrust& org,
                      ProvisionPurpose purpose) {
  Session s(peer, Session::new_id());
  ChannelGuard guard(vault);
  auto& t = vault.token;
  const auto own_pid = t.enclave().platform_id();

  s.send(MsgType::ProvisionHello, ProvisionHelloMsg{own_pid, purpose, t.log().head()}.encode());
  ProvisionHelloMsg ack;
  try {
    ack = ProvisionHelloMsg::decode(s.expect(MsgType::ProvisionHelloAck, "hello"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    s.abort(ErrorCode::PckRejected, "unreadable hello: " + e.detail(), "hello");
  }
  auto entry = check_peer_pck(s, ack.platform_id, org, "check-receiver-pck");

  auto eph = t.ecdh_keygen(vault.pin, attest::QuoteType::Ecdsa);
  guard.track(eph.handle);
  KeyShareMsg own{eph.public_part, eph.quote};
  s.send(MsgType::ProvisionKeyShare, own.encode());

  KeyShareMsg theirs;
  try {
    theirs = KeyShareMsg::decode(s.expect(MsgType::ProvisionKeyShare, "receiver-keyshare"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    s.abort(ErrorCode::QuoteInvalid, "unreadable key share: " + e.detail(), "receiver-keyshare");
  }
  check_key_share(s, theirs, entry, org, "verify-receiver-quote");

  auto transcript = provision_transcript(s.id(), own_pid, ack.platform_id, own, theirs);
  auto channel = t.derive_shared_key(eph.handle, theirs.ephemeral_public, transcript, vault.pin);
  guard.forget(eph.handle);
  guard.track(channel);

  auto ready = s.expect(MsgType::ProvisionReady, "key-confirm");
  auto expected = t.channel_mac(channel, "provision/receiver-ready", transcript, vault.pin);
  if (!equal_ct(ready, expected)) {
    s.abort(ErrorCode::DecryptFailure, "key confirmation failed", "key-confirm");
  }
  // c <- Encrypt(Certs, k)
  auto wrapped = t.wrap_keys(channel, handles, channel_aad("provision/payload", s.id(), transcript),
                             vault.pin);
  s.send(MsgType::ProvisionPayload, wrapped.serialize());
  s.expect(MsgType::ProvisionDone, "done");
}

ProvisionReceived provision_receiver(Session& s, ByteView hello_bytes, VaultRef vault,
                                     const OrgTrust& org) {
  ChannelGuard guard(vault);
  auto& t = vault.token;
  const auto own_pid = t.enclave().platform_id();

  ProvisionHelloMsg hello;
  try {
    hello = ProvisionHelloMsg::decode(hello_bytes);
  } catch (const Error& e) {
    s.abort(ErrorCode::PckRejected, "unreadable hello: " + e.detail(), "hello");
  }
  auto entry = check_peer_pck(s, hello.platform_id, org, "check-sender-pck");
  if (hello.purpose == ProvisionPurpose::Backup) {
    t.record_provenance(hello.platform_id, hello.log_head, vault.pin);
  }
  s.send(MsgType::ProvisionHelloAck, ProvisionHelloMsg{own_pid, hello.purpose, t.log().head()}.encode());

  KeyShareMsg theirs;
  try {
    theirs = KeyShareMsg::decode(s.expect(MsgType::ProvisionKeyShare, "sender-keyshare"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    s.abort(ErrorCode::QuoteInvalid, "unreadable key share: " + e.detail(), "sender-keyshare");
  }
  check_key_share(s, theirs, entry, org, "verify-sender-quote");

  auto eph = t.ecdh_keygen(vault.pin, attest::QuoteType::Ecdsa);
  guard.track(eph.handle);
  KeyShareMsg own{eph.public_part, eph.quote};
  s.send(MsgType::ProvisionKeyShare, own.encode());

  auto transcript = provision_transcript(s.id(), hello.platform_id, own_pid, theirs, own);
  auto channel = t.derive_shared_key(eph.handle, theirs.ephemeral_public, transcript, vault.pin);
  guard.forget(eph.handle);
  guard.track(channel);
  auto mac = t.channel_mac(channel, "provision/receiver-ready", transcript, vault.pin);
  s.send(MsgType::ProvisionReady, Bytes(mac.begin(), mac.end()));

  keyvault::WrappedKeys wrapped;
  try {
    wrapped = keyvault::WrappedKeys::parse(s.expect(MsgType::ProvisionPayload, "receive-payload"));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Malformed) throw;
    s.abort(ErrorCode::DecryptFailure, e.detail(), "receive-payload");
  }
  ProvisionReceived out;
  out.source = hello.platform_id;
  out.purpose = hello.purpose;
  try {
    // Decrypt + Store(Certs)
    out.handles = t.unwrap_keys(channel, wrapped,
                                channel_aad("provision/payload", s.id(), transcript), vault.pin);
  } catch (const Error& e) {
    s.abort(e.code(), e.detail(), "receive-payload");
  }
  ByteWriter done;
  done.u32(static_cast<std::uint32_t>(out.handles.size()));
  s.send(MsgType::ProvisionDone, std::move(done).bytes());
  return out;
}

// ---- remote clients ------------------------------------------------------------------

attest::AttestationVerificationReport RemoteServiceClient::verify(const attest::Quote& q) {
  auto reply = wire::round_trip(endpoint_, MsgType::IasVerify, q.serialize(), MsgType::IasReport);
  return attest::AttestationVerificationReport::parse(reply.payload);
}

std::optional<attest::PckCacheEntry> RemotePckCacheClient::fetch(const PlatformId& platform) {
  auto reply = wire::round_trip(endpoint_, MsgType::PckFetch, Bytes(platform.begin(), platform.end()),
                                MsgType::PckEntry);
  ByteReader r(reply.payload);
  if (r.u8() == 0) return std::nullopt;
  auto e = attest::PckCacheEntry::parse(r.blob());
  r.expect_end();
  return e;
}

void RemotePckCacheClient::publish(const attest::PckCacheEntry& entry) {
  wire::round_trip(endpoint_, MsgType::PckPublish, entry.serialize(), MsgType::PckPublished);
}

}  // namespace blindvault::protocols
