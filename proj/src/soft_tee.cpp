#include "blindvault/soft_tee.hpp"

#include <string>

#include "blindvault/fileio.hpp"

namespace blindvault::tee {

namespace {

constexpr std::string_view kPlatformMagic = "BFPLAT01";

constexpr std::string_view kSignerIdentity = "blindvault release signing authority v1";

constexpr std::string_view kEnclaveImage =
    "blindvault-enclave\n"
    "image-format: 1\n"
    "components: keyvault certkit attestation protocols\n"
    "ecalls: init_token generate_keypair sign export_private gen_csr issue_cert self_sign\n"
    "        ecdh_keygen derive_shared_key wrap_keys unwrap_keys quote verify_quote\n";

Hash32 identity_for(SealPolicy policy, const Measurement& meas) {
  return policy == SealPolicy::MrEnclave ? meas.mrenclave : meas.mrsigner;
}

}  // namespace

PlatformSecret PlatformSecret::generate() {
  PlatformSecret p;
  p.platform_id_ = crypto::random_fixed<16>();
  p.root_secret_ = crypto::random_fixed<32>();
  p.provisioning_secret_ = crypto::random_fixed<32>();
  return p;
}

void PlatformSecret::install_epid_member(std::uint32_t group_id, const Hash32& member_key) {
  if (group_id == 0) throw Error(ErrorCode::Usage, "EPID group id 0 is reserved");
  epid_group_id_ = group_id;
  epid_member_key_ = member_key;
}

PlatformSecret PlatformSecret::load(const std::filesystem::path& path) {
  auto data = blindvault::read_file(path);
  ByteReader r(data);
  auto magic = r.raw(kPlatformMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kPlatformMagic.begin())) {
    throw Error(ErrorCode::Malformed, "not a platform secret file: " + path.string());
  }
  PlatformSecret p;
  p.platform_id_ = r.fixed<16>();
  p.root_secret_ = r.fixed<32>();
  p.provisioning_secret_ = r.fixed<32>();
  p.epid_group_id_ = r.u32();
  p.epid_member_key_ = r.fixed<32>();
  r.expect_end();
  crypto::cleanse(data.data(), data.size());
  return p;
}

void PlatformSecret::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.raw(as_bytes(kPlatformMagic))
      .raw(platform_id_)
      .raw(root_secret_)
      .raw(provisioning_secret_)
      .u32(epid_group_id_)
      .raw(epid_member_key_);
  auto bytes = std::move(w).bytes();
  write_file_atomic(path, bytes, true, 0600);
  crypto::cleanse(bytes.data(), bytes.size());
}

ByteView default_signer_identity() { return as_bytes(kSignerIdentity); }

ByteView default_enclave_image() { return as_bytes(kEnclaveImage); }

Measurement measure_enclave(ByteView image, ByteView signer_identity, std::uint16_t svn,
                            std::uint16_t tcb_version) {
  if (image.empty()) throw Error(ErrorCode::InvalidImage, "empty enclave image");
  Measurement m;
  m.mrenclave = crypto::sha256(image);
  m.mrsigner = crypto::sha256(signer_identity);
  m.svn = svn;
  m.tcb_version = tcb_version;
  return m;
}

ReportData report_data_for(ByteView data) {
  ReportData out{};
  auto h = crypto::sha256(data);
  std::copy(h.begin(), h.end(), out.begin() + 32);
  return out;
}

Bytes Report::body() const {
  ByteWriter w;
  w.raw(measurement.mrenclave)
      .raw(measurement.mrsigner)
      .u16(measurement.svn)
      .u16(measurement.tcb_version)
      .raw(report_data)
      .raw(platform_id);
  return std::move(w).bytes();
}

Bytes Report::serialize() const {
  auto out = body();
  out.insert(out.end(), mac.begin(), mac.end());
  return out;
}

Report Report::read(ByteReader& r) {
  Report rep;
  rep.measurement.mrenclave = r.fixed<32>();
  rep.measurement.mrsigner = r.fixed<32>();
  rep.measurement.svn = r.u16();
  rep.measurement.tcb_version = r.u16();
  rep.report_data = r.fixed<kReportDataSize>();
  rep.platform_id = r.fixed<16>();
  rep.mac = r.fixed<32>();
  return rep;
}

Report Report::parse(ByteView data) {
  ByteReader r(data);
  auto rep = read(r);
  r.expect_end();
  return rep;
}

Report create_report(ByteView report_data, const PlatformSecret& platform,
                     const Measurement& meas) {
  if (report_data.size() != kReportDataSize) {
    throw Error(ErrorCode::InvalidReportData,
                "report_data must be 64 bytes, got " + std::to_string(report_data.size()));
  }
  Report r;
  r.measurement = meas;
  std::copy(report_data.begin(), report_data.end(), r.report_data.begin());
  r.platform_id = platform.platform_id();
  auto key = detail::SecretAccess::report_key(platform);
  r.mac = crypto::hmac_sha256(crypto::view(key), r.body());
  return r;
}

bool verify_report(const Report& report, const PlatformSecret& platform) {
  if (!equal_ct(report.platform_id, platform.platform_id())) return false;
  auto key = detail::SecretAccess::report_key(platform);
  auto expected = crypto::hmac_sha256(crypto::view(key), report.body());
  return equal_ct(expected, report.mac);
}

Bytes SealedBlob::header() const {
  ByteWriter w;
  w.raw(as_bytes(kMagic))
      .u8(static_cast<std::uint8_t>(policy))
      .raw(bound_identity)
      .raw(platform_id)
      .raw(nonce);
  return std::move(w).bytes();
}

Bytes SealedBlob::serialize() const {
  ByteWriter w;
  w.raw(header()).blob(ciphertext);
  return std::move(w).bytes();
}

SealedBlob SealedBlob::parse(ByteView data) {
  ByteReader r(data);
  auto magic = r.raw(kMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw Error(ErrorCode::Malformed, "bad sealed blob magic");
  }
  SealedBlob b;
  auto policy = r.u8();
  if (policy != 1 && policy != 2) throw Error(ErrorCode::Malformed, "bad seal policy");
  b.policy = static_cast<SealPolicy>(policy);
  b.bound_identity = r.fixed<32>();
  b.platform_id = r.fixed<16>();
  b.nonce = r.fixed<crypto::kAeadNonceSize>();
  b.ciphertext = r.blob();
  r.expect_end();
  return b;
}

void SealedBlob::write_file(const std::filesystem::path& path, bool durable) const {
  write_file_atomic(path, serialize(), durable, 0600);
}

SealedBlob SealedBlob::read_file(const std::filesystem::path& path) {
  return parse(blindvault::read_file(path));
}

SealedBlob seal(ByteView plaintext, SealPolicy policy, const PlatformSecret& platform,
                const Measurement& meas) {
  if (plaintext.empty()) throw Error(ErrorCode::Usage, "nothing to seal");
  SealedBlob b;
  b.policy = policy;
  b.bound_identity = identity_for(policy, meas);
  b.platform_id = platform.platform_id();
  b.nonce = crypto::random_fixed<crypto::kAeadNonceSize>();
  auto key = detail::SecretAccess::seal_key(platform, policy, b.bound_identity);
  b.ciphertext = crypto::aead_seal(crypto::view(key), b.nonce, b.header(), plaintext);
  return b;
}

crypto::SecureBytes unseal(const SealedBlob& blob, const PlatformSecret& platform,
                           const Measurement& meas) {
  if (!equal_ct(blob.platform_id, platform.platform_id())) {
    throw Error(ErrorCode::SealPlatformMismatch, "blob sealed on another platform");
  }
  if (!equal_ct(blob.bound_identity, identity_for(blob.policy, meas))) {
    throw Error(ErrorCode::SealIdentityMismatch,
                blob.policy == SealPolicy::MrEnclave ? "mrenclave differs" : "mrsigner differs");
  }
  auto key = detail::SecretAccess::seal_key(platform, blob.policy, blob.bound_identity);
  auto pt = crypto::aead_open(crypto::view(key), blob.nonce, blob.header(), blob.ciphertext);
  if (!pt) throw Error(ErrorCode::SealIntegrityError, "sealed blob failed authentication");
  return std::move(*pt);
}

namespace detail {

crypto::SecureBytes SecretAccess::report_key(const PlatformSecret& p) {
  return crypto::hkdf_sha256(p.root_secret_, p.platform_id_, "blindvault/report-key", 32);
}

crypto::SecureBytes SecretAccess::seal_key(const PlatformSecret& p, SealPolicy policy,
                                           const Hash32& identity) {
  std::string info = "blindvault/seal-key/";
  info += policy == SealPolicy::MrEnclave ? "mrenclave/" : "mrsigner/";
  info += to_hex(identity);
  return crypto::hkdf_sha256(p.root_secret_, p.platform_id_, info, 32);
}

crypto::PrivateKey SecretAccess::pck_key(const PlatformSecret& p) {
  auto seed = crypto::hkdf_sha256(p.provisioning_secret_, p.platform_id_, "blindvault/pck-key", 32);
  return crypto::PrivateKey::p256_from_seed(crypto::view(seed));
}

}  // namespace detail

}  // namespace blindvault::tee
