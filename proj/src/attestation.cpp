#include "blindvault/attestation.hpp"

#include <algorithm>

#include "blindvault/fileio.hpp"

namespace blindvault::attest {

namespace {

constexpr std::string_view kQuoteMagic = "BFQUOTE1";
constexpr std::string_view kAvrMagic = "BFAVR001";
constexpr std::string_view kPckEntryMagic = "BFPCKE01";

std::string pck_subject(const PlatformId& id) { return "pck:" + to_hex(id); }

cert::UnixSeconds effective_now(const TrustAnchors& a) {
  return a.now != 0 ? a.now : cert::now_seconds();
}

}  // namespace

std::string_view to_string(QuoteType t) {
  return t == QuoteType::Epid ? "epid" : "ecdsa";
}

QuoteType quote_type_from_string(std::string_view s) {
  if (s == "epid" || s == "EPID") return QuoteType::Epid;
  if (s == "ecdsa" || s == "ECDSA") return QuoteType::Ecdsa;
  throw Error(ErrorCode::Usage, "unknown quote type '" + std::string(s) + "'");
}

Bytes Quote::signed_body() const {
  ByteWriter w;
  w.raw(as_bytes(kQuoteMagic))
      .u8(static_cast<std::uint8_t>(type))
      .u32(epid_group_id)
      .raw(report.serialize());
  return std::move(w).bytes();
}

Bytes Quote::serialize() const {
  ByteWriter w;
  w.raw(signed_body()).blob(signature).u16(static_cast<std::uint16_t>(pck_chain.size()));
  for (const auto& c : pck_chain) w.blob(c.serialize());
  return std::move(w).bytes();
}

Quote Quote::parse(ByteView data) {
  ByteReader r(data);
  auto magic = r.raw(kQuoteMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kQuoteMagic.begin())) {
    throw Error(ErrorCode::Malformed, "bad quote magic");
  }
  Quote q;
  auto t = r.u8();
  if (t != 1 && t != 2) throw Error(ErrorCode::Malformed, "bad quote type");
  q.type = static_cast<QuoteType>(t);
  q.epid_group_id = r.u32();
  q.report = tee::Report::read(r);
  q.signature = r.blob();
  auto n = r.u16();
  for (std::uint16_t i = 0; i < n; ++i) q.pck_chain.push_back(cert::BlindCert::parse(r.blob()));
  r.expect_end();
  return q;
}

Hash32 Quote::hash() const { return crypto::sha256(serialize()); }

EpidGroup EpidGroup::generate(std::uint32_t group_id) {
  return EpidGroup(group_id, crypto::random_fixed<32>());
}

Hash32 EpidGroup::member_key_for(const PlatformId& platform) const {
  auto k = crypto::hkdf_sha256(secret_, platform, "blindvault/epid-member/" + std::to_string(id_),
                               32);
  return to_fixed<32>(crypto::view(k));
}

Manufacturer Manufacturer::create(std::string root_subject, std::uint32_t epid_group_id) {
  auto key = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256);
  cert::CertRequest req;
  req.subject = root_subject;
  req.issuer = root_subject;
  req.subject_public_key = key.public_der();
  req.validity = 20 * 365 * cert::kDay;
  auto root = cert::sign_with(req, key);
  return Manufacturer(std::move(key), std::move(root), EpidGroup::generate(epid_group_id));
}

Manufacturer Manufacturer::load(const std::filesystem::path& dir) {
  auto key_der = read_file(dir / "root.key");
  auto key = crypto::PrivateKey::from_pkcs8(key_der, crypto::KeyAlgorithm::EcdsaP256);
  crypto::cleanse(key_der.data(), key_der.size());
  auto root = cert::BlindCert::from_armor(read_text_file(dir / "root.cert"));
  auto epid_bytes = read_file(dir / "epid-group.secret");
  ByteReader r(epid_bytes);
  auto id = r.u32();
  auto secret = r.fixed<32>();
  r.expect_end();
  return Manufacturer(std::move(key), std::move(root), EpidGroup(id, secret));
}

void Manufacturer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto der = root_key_.to_pkcs8();
  write_file_atomic(dir / "root.key", crypto::view(der), true, 0600);
  auto text = root_cert_.armor();
  write_file_atomic(dir / "root.cert", as_bytes(text), true, 0644);
  ByteWriter w;
  w.u32(epid_.id()).raw(epid_.secret());
  write_file_atomic(dir / "epid-group.secret", w.bytes(), true, 0600);
}

tee::PlatformSecret Manufacturer::make_platform() const {
  auto p = tee::PlatformSecret::generate();
  p.install_epid_member(epid_.id(), epid_.member_key_for(p.platform_id()));
  return p;
}

cert::BlindCert Manufacturer::issue_pck_cert(const tee::PlatformSecret& platform) const {
  cert::CertRequest req;
  req.subject = pck_subject(platform.platform_id());
  req.issuer = root_cert_.subject;
  req.subject_public_key = tee::detail::SecretAccess::pck_key(platform).public_der();
  req.validity = 10 * 365 * cert::kDay;
  req.extensions.emplace(std::string(cert::kPlatformIdExtension), to_bytes(platform.platform_id()));
  return cert::sign_with(req, root_key_);
}

Attester::Attester(const tee::Enclave& enclave, std::optional<cert::BlindCert> pck_cert)
    : enclave_(enclave), pck_cert_(std::move(pck_cert)) {
  if (!pck_cert_) return;
  auto pck_key = tee::detail::SecretAccess::pck_key(enclave_.platform());
  if (pck_cert_->subject_public_key != pck_key.public_der()) {
    throw Error(ErrorCode::PckUnavailable, "PCK certificate does not belong to this platform");
  }
  // QE generates an attestation key; the PCE certifies it with the PCK.
  ak_ = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256);
  cert::CertRequest req;
  req.subject = "qe-ak:" + to_hex(enclave_.platform_id());
  req.issuer = pck_cert_->subject;
  req.subject_public_key = ak_->public_der();
  req.validity = 365 * cert::kDay;
  ak_cert_ = cert::sign_with(req, pck_key);
}

Quote Attester::quote(ByteView data, QuoteType type) const {
  return quote_report_data(tee::report_data_for(data), type);
}

Quote Attester::quote_report_data(const tee::ReportData& report_data, QuoteType type) const {
  Quote q;
  q.type = type;
  q.report = enclave_.create_report(report_data);
  // Local attestation of the application enclave to the quoting enclave.
  if (!enclave_.verify_report(q.report)) {
    throw Error(ErrorCode::CryptoFailure, "local report failed verification");
  }
  if (type == QuoteType::Ecdsa) {
    if (!ak_) throw Error(ErrorCode::PckUnavailable, "no PCK certificate provisioned");
    q.pck_chain = {*ak_cert_, *pck_cert_};
    q.signature = ak_->sign(q.signed_body());
  } else {
    const auto& platform = enclave_.platform();
    if (!platform.has_epid_member_key()) {
      throw Error(ErrorCode::PckUnavailable, "platform has no EPID member key");
    }
    q.epid_group_id = platform.epid_group_id();
    auto mac =
        crypto::hmac_sha256(tee::detail::SecretAccess::epid_member_key(platform), q.signed_body());
    q.signature = to_bytes(mac);
  }
  return q;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Ok: return "OK";
    case Verdict::SignatureInvalid: return "SIGNATURE_INVALID";
    case Verdict::GroupRevoked: return "GROUP_REVOKED";
  }
  return "UNKNOWN";
}

Bytes AttestationVerificationReport::signed_body() const {
  ByteWriter w;
  w.raw(as_bytes(kAvrMagic)).raw(quote_hash).u8(static_cast<std::uint8_t>(verdict)).i64(timestamp);
  return std::move(w).bytes();
}

Bytes AttestationVerificationReport::serialize() const {
  ByteWriter w;
  w.raw(signed_body()).blob(service_signature);
  return std::move(w).bytes();
}

AttestationVerificationReport AttestationVerificationReport::parse(ByteView data) {
  ByteReader r(data);
  auto magic = r.raw(kAvrMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kAvrMagic.begin())) {
    throw Error(ErrorCode::Malformed, "bad verification report magic");
  }
  AttestationVerificationReport avr;
  avr.quote_hash = r.fixed<32>();
  auto v = r.u8();
  if (v > 2) throw Error(ErrorCode::Malformed, "bad verdict");
  avr.verdict = static_cast<Verdict>(v);
  avr.timestamp = r.i64();
  avr.service_signature = r.blob();
  r.expect_end();
  return avr;
}

bool AttestationVerificationReport::verify_signature(ByteView service_public_key) const {
  return crypto::verify_signature(service_public_key, signed_body(), service_signature);
}

VerificationService::VerificationService(std::vector<EpidGroup> groups,
                                         crypto::PrivateKey signing_key)
    : signing_key_(std::move(signing_key)) {
  for (const auto& g : groups) groups_.emplace(g.id(), g.secret());
}

AttestationVerificationReport VerificationService::verify(const Quote& q) const {
  if (q.type != QuoteType::Epid) {
    throw Error(ErrorCode::WrongQuoteType, "verification service only handles EPID quotes");
  }
  AttestationVerificationReport avr;
  avr.quote_hash = q.hash();
  avr.timestamp = cert::now_seconds();
  avr.verdict = Verdict::SignatureInvalid;
  auto it = groups_.find(q.epid_group_id);
  if (it != groups_.end()) {
    EpidGroup group(it->first, it->second);
    auto expected = crypto::hmac_sha256(group.member_key_for(q.report.platform_id), q.signed_body());
    if (equal_ct(expected, q.signature)) {
      std::lock_guard lock(mu_);
      avr.verdict = revoked_.contains(q.epid_group_id) ? Verdict::GroupRevoked : Verdict::Ok;
    }
  }
  avr.service_signature = signing_key_.sign(avr.signed_body());
  return avr;
}

void VerificationService::revoke_group(std::uint32_t group_id) {
  std::lock_guard lock(mu_);
  revoked_.insert(group_id);
}

AttestationVerificationReport CachingServiceClient::verify(const Quote& q) {
  auto h = q.hash();
  auto now = cert::now_seconds();
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(h);
    if (it != cache_.end() && now - it->second.first < ttl_) return it->second.second;
  }
  auto avr = inner_.verify(q);
  std::lock_guard lock(mu_);
  ++upstream_calls_;
  if (avr.verdict == Verdict::Ok) cache_[h] = {now, avr};
  return avr;
}

std::string_view to_string(QuoteStatus s) {
  switch (s) {
    case QuoteStatus::Ok: return "OK";
    case QuoteStatus::SignatureInvalid: return "SIGNATURE_INVALID";
    case QuoteStatus::ReportDataMismatch: return "REPORT_DATA_MISMATCH";
    case QuoteStatus::MrenclaveMismatch: return "MRENCLAVE_MISMATCH";
    case QuoteStatus::TcbOutdated: return "TCB_OUTDATED";
    case QuoteStatus::QuoteTypeMismatch: return "QUOTE_TYPE_MISMATCH";
    case QuoteStatus::VerificationServiceRequired: return "VERIFICATION_SERVICE_REQUIRED";
  }
  return "UNKNOWN";
}

const cert::BlindCert* quote_pck_cert(const Quote& q) {
  if (q.type != QuoteType::Ecdsa || q.pck_chain.size() != 2) return nullptr;
  return &q.pck_chain[1];
}

QuoteVerdict check_quote_signature(const Quote& q, const TrustAnchors& anchors) {
  if (q.type == QuoteType::Ecdsa) {
    if (q.pck_chain.size() != 2) {
      return {QuoteStatus::SignatureInvalid, "ECDSA quote without a two-certificate PCK chain"};
    }
    auto chain = cert::verify_chain(q.pck_chain, anchors.manufacturer_roots, effective_now(anchors));
    if (!chain) {
      return {QuoteStatus::SignatureInvalid,
              "PCK chain: " + std::string(cert::to_string(chain.status)) + " " + chain.detail};
    }
    const auto* pid = q.pck_chain[1].extension(cert::kPlatformIdExtension);
    if (pid == nullptr || !equal_ct(*pid, q.report.platform_id)) {
      return {QuoteStatus::SignatureInvalid, "PCK certificate is for another platform"};
    }
    if (!crypto::verify_signature(q.pck_chain[0].subject_public_key, q.signed_body(),
                                  q.signature)) {
      return {QuoteStatus::SignatureInvalid, "attestation signature does not verify"};
    }
    return {};
  }

  if (anchors.service == nullptr || anchors.service_public_key.empty()) {
    return {QuoteStatus::VerificationServiceRequired,
            "EPID quotes can only be checked by the verification service"};
  }
  auto avr = anchors.service->verify(q);
  if (!avr.verify_signature(anchors.service_public_key)) {
    return {QuoteStatus::SignatureInvalid, "verification report not signed by the trusted service"};
  }
  if (avr.quote_hash != q.hash()) {
    return {QuoteStatus::SignatureInvalid, "verification report is for a different quote"};
  }
  if (avr.verdict != Verdict::Ok) {
    return {QuoteStatus::SignatureInvalid,
            "verification service verdict " + std::string(to_string(avr.verdict))};
  }
  return {};
}

QuoteVerdict inspect_quote_fields(const Quote& q, ByteView expected_data,
                                  const QuotePolicy& policy) {
  const auto expected = tee::report_data_for(expected_data);
  if (!equal_ct(expected, q.report.report_data)) {
    return {QuoteStatus::ReportDataMismatch, "report_data does not bind the expected value"};
  }
  const auto& m = q.report.measurement;
  bool known = std::any_of(policy.expected_mrenclave.begin(), policy.expected_mrenclave.end(),
                           [&](const Hash32& h) { return h == m.mrenclave; });
  if (!known) {
    return {QuoteStatus::MrenclaveMismatch, "mrenclave " + to_hex(m.mrenclave) + " not expected"};
  }
  if (m.svn < policy.min_svn || m.tcb_version < policy.min_tcb) {
    return {QuoteStatus::TcbOutdated, "svn " + std::to_string(m.svn) + "/tcb " +
                                          std::to_string(m.tcb_version) + " below minimum " +
                                          std::to_string(policy.min_svn) + "/" +
                                          std::to_string(policy.min_tcb)};
  }
  return {};
}

QuoteVerdict verify_quote(const Quote& q, ByteView expected_data, QuoteType type,
                          const TrustAnchors& anchors, const QuotePolicy& policy) {
  if (q.type != type) {
    return {QuoteStatus::QuoteTypeMismatch,
            "expected " + std::string(to_string(type)) + " quote, got " +
                std::string(to_string(q.type))};
  }
  if (auto v = check_quote_signature(q, anchors); !v) return v;
  return inspect_quote_fields(q, expected_data, policy);
}

Bytes PckCacheEntry::signed_payload() const {
  ByteWriter w;
  w.raw(as_bytes(kPckEntryMagic)).raw(platform_id).blob(pck_cert.serialize());
  return std::move(w).bytes();
}

Bytes PckCacheEntry::serialize() const {
  ByteWriter w;
  w.raw(signed_payload()).blob(org_signature);
  return std::move(w).bytes();
}

PckCacheEntry PckCacheEntry::parse(ByteView data) {
  ByteReader r(data);
  auto magic = r.raw(kPckEntryMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kPckEntryMagic.begin())) {
    throw Error(ErrorCode::Malformed, "bad PCK entry magic");
  }
  PckCacheEntry e;
  e.platform_id = r.fixed<16>();
  e.pck_cert = cert::BlindCert::parse(r.blob());
  e.org_signature = r.blob();
  r.expect_end();
  return e;
}

bool PckCacheEntry::verify(ByteView mpk) const {
  const auto* pid = pck_cert.extension(cert::kPlatformIdExtension);
  if (pid == nullptr || !equal_ct(*pid, platform_id)) return false;
  return crypto::verify_signature(mpk, signed_payload(), org_signature);
}

PckCacheEntry pck_entry_draft(const cert::BlindCert& pck_cert) {
  const auto* pid = pck_cert.extension(cert::kPlatformIdExtension);
  if (pid == nullptr) throw Error(ErrorCode::Malformed, "PCK certificate lacks a platform id");
  PckCacheEntry e;
  e.platform_id = to_fixed<16>(*pid);
  e.pck_cert = pck_cert;
  return e;
}

PckCache::PckCache(std::filesystem::path file) : file_(std::move(file)) {
  if (!std::filesystem::exists(*file_)) return;
  auto data = read_file(*file_);
  ByteReader r(data);
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto e = PckCacheEntry::parse(r.blob());
    entries_[e.platform_id] = std::move(e);
  }
  r.expect_end();
}

void PckCache::put(const PckCacheEntry& entry) {
  std::lock_guard lock(mu_);
  entries_[entry.platform_id] = entry;
  persist_locked();
}

std::optional<PckCacheEntry> PckCache::get(const PlatformId& platform) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(platform);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t PckCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void PckCache::persist_locked() const {
  if (!file_) return;
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [_, e] : entries_) w.blob(e.serialize());
  write_file_atomic(*file_, w.bytes(), true, 0644);
}

PckCacheEntry fetch_pck_cert(const PlatformId& platform, PckCacheClient& cache, ByteView mpk) {
  auto entry = cache.fetch(platform);
  if (!entry) throw Error(ErrorCode::NotFound, "no PCK entry for platform " + to_hex(platform));
  if (entry->platform_id != platform || !entry->verify(mpk)) {
    throw Error(ErrorCode::OrgSignatureInvalid,
                "PCK entry for " + to_hex(platform) + " is not signed by the organization");
  }
  return std::move(*entry);
}

}  // namespace blindvault::attest
