#include "blindvault/cert.hpp"

#include <algorithm>
#include <sstream>

#include "blindvault/fileio.hpp"

namespace blindvault::cert {

namespace {

constexpr std::string_view kCertMagic = "BFCERT01";
constexpr std::string_view kCsrMagic = "BFCSR001";

void expect_magic(ByteReader& r, std::string_view magic) {
  auto m = r.raw(magic.size());
  if (!std::equal(m.begin(), m.end(), magic.begin())) {
    throw Error(ErrorCode::Malformed, "bad magic, expected " + std::string(magic));
  }
}

crypto::SignatureAlgorithm read_sig_alg(ByteReader& r) {
  auto v = r.u8();
  if (v > 2) throw Error(ErrorCode::Malformed, "unknown signature algorithm");
  return static_cast<crypto::SignatureAlgorithm>(v);
}

}  // namespace

UnixSeconds now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Bytes BlindCert::tbs() const {
  ByteWriter w;
  w.raw(as_bytes(kCertMagic))
      .raw(serial)
      .str(subject)
      .str(issuer)
      .i64(not_before)
      .i64(not_after)
      .blob(subject_public_key)
      .u32(static_cast<std::uint32_t>(extensions.size()));
  for (const auto& [k, v] : extensions) w.str(k).blob(v);
  w.u8(static_cast<std::uint8_t>(sig_algorithm));
  return std::move(w).bytes();
}

Bytes BlindCert::serialize() const {
  ByteWriter w;
  w.raw(tbs()).blob(signature);
  return std::move(w).bytes();
}

BlindCert BlindCert::parse(ByteView data) {
  ByteReader r(data);
  expect_magic(r, kCertMagic);
  BlindCert c;
  c.serial = r.fixed<16>();
  c.subject = r.str();
  c.issuer = r.str();
  c.not_before = r.i64();
  c.not_after = r.i64();
  c.subject_public_key = r.blob();
  auto n = r.u32();
  std::string prev;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = r.str();
    // Canonical form requires strictly increasing keys.
    if (i > 0 && !(prev < k)) throw Error(ErrorCode::Malformed, "extensions not canonical");
    c.extensions.emplace(k, r.blob());
    prev = std::move(k);
  }
  c.sig_algorithm = read_sig_alg(r);
  c.signature = r.blob();
  r.expect_end();
  return c;
}

std::string BlindCert::armor() const { return cert::armor("BLINDCERT", serialize()); }

BlindCert BlindCert::from_armor(std::string_view text) {
  return parse(dearmor("BLINDCERT", text));
}

Hash32 BlindCert::fingerprint() const { return crypto::sha256(serialize()); }

const Bytes* BlindCert::extension(std::string_view key) const {
  auto it = extensions.find(key);
  return it == extensions.end() ? nullptr : &it->second;
}

Bytes Csr::tbs() const {
  ByteWriter w;
  w.raw(as_bytes(kCsrMagic)).str(subject).blob(public_key);
  return std::move(w).bytes();
}

Bytes Csr::serialize() const {
  ByteWriter w;
  w.raw(tbs()).blob(self_signature);
  return std::move(w).bytes();
}

Csr Csr::parse(ByteView data) {
  ByteReader r(data);
  expect_magic(r, kCsrMagic);
  Csr c;
  c.subject = r.str();
  c.public_key = r.blob();
  c.self_signature = r.blob();
  r.expect_end();
  return c;
}

std::string Csr::armor() const { return cert::armor("BLINDCSR", serialize()); }

Csr Csr::from_armor(std::string_view text) { return parse(dearmor("BLINDCSR", text)); }

bool Csr::verify_pop() const {
  return crypto::verify_signature(public_key, tbs(), self_signature);
}

std::string_view to_string(CertStatus s) {
  switch (s) {
    case CertStatus::Ok: return "OK";
    case CertStatus::Signature: return "SIGNATURE";
    case CertStatus::IssuerMismatch: return "ISSUER_MISMATCH";
    case CertStatus::Expired: return "EXPIRED";
    case CertStatus::Revoked: return "REVOKED";
    case CertStatus::UntrustedRoot: return "UNTRUSTED_ROOT";
    case CertStatus::Malformed: return "MALFORMED";
  }
  return "UNKNOWN";
}

CertCheck verify_cert(const BlindCert& child, const BlindCert& parent, UnixSeconds now) {
  if (child.not_after <= child.not_before) {
    return {CertStatus::Malformed, "empty validity period"};
  }
  if (child.sig_algorithm != crypto::signature_algorithm_of(parent.subject_public_key)) {
    return {CertStatus::Signature, "signature algorithm does not match issuer key"};
  }
  if (!crypto::verify_signature(parent.subject_public_key, child.tbs(), child.signature)) {
    return {CertStatus::Signature, "signature does not verify under issuer key"};
  }
  if (child.issuer != parent.subject) {
    return {CertStatus::IssuerMismatch, "issuer '" + child.issuer + "' != '" + parent.subject + "'"};
  }
  if (now < child.not_before || now >= child.not_after) {
    return {CertStatus::Expired, "outside validity period"};
  }
  return {};
}

RevocationList RevocationList::load(const std::filesystem::path& path) {
  RevocationList out;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line.erase(std::remove_if(line.begin(), line.end(), ::isspace), line.end());
    if (line.empty()) continue;
    out.revoke(fixed_from_hex<16>(line));
  }
  return out;
}

CertCheck verify_chain(const std::vector<BlindCert>& chain,
                       const std::vector<BlindCert>& trusted_roots, UnixSeconds now,
                       const RevocationList& revoked) {
  if (chain.empty()) return {CertStatus::Malformed, "empty chain"};
  for (std::size_t i = 0; i < chain.size(); ++i) {
    if (revoked.is_revoked(chain[i])) {
      return {CertStatus::Revoked, "certificate '" + chain[i].subject + "' is revoked"};
    }
    if (i + 1 < chain.size()) {
      if (auto c = verify_cert(chain[i], chain[i + 1], now); !c) return c;
    }
  }
  // The chain either ends in a trusted self-signed root or in a
  // certificate issued by one.
  const auto& last = chain.back();
  if (last.self_issued()) {
    if (auto c = verify_cert(last, last, now); !c) return c;
    auto last_bytes = last.serialize();
    bool trusted = std::any_of(trusted_roots.begin(), trusted_roots.end(),
                               [&](const BlindCert& t) { return t.serialize() == last_bytes; });
    if (!trusted) return {CertStatus::UntrustedRoot, "root '" + last.subject + "' not trusted"};
    return {};
  }
  CertCheck result{CertStatus::UntrustedRoot, "no trusted root named '" + last.issuer + "'"};
  for (const auto& root : trusted_roots) {
    if (root.subject != last.issuer) continue;
    if (revoked.is_revoked(root)) return {CertStatus::Revoked, "root '" + root.subject + "' is revoked"};
    result = verify_cert(last, root, now);
    if (result) return result;
  }
  return result;
}

BlindCert make_unsigned(const CertRequest& req, crypto::SignatureAlgorithm sig_alg) {
  BlindCert c;
  c.serial = crypto::random_fixed<16>();
  c.subject = req.subject;
  c.issuer = req.issuer;
  c.not_before = req.not_before != 0 ? req.not_before : now_seconds() - 60;
  c.not_after = c.not_before + req.validity;
  c.subject_public_key = req.subject_public_key;
  c.extensions = req.extensions;
  c.sig_algorithm = sig_alg;
  return c;
}

BlindCert sign_with(const CertRequest& req, const crypto::PrivateKey& issuer_key) {
  auto c = make_unsigned(req, issuer_key.signature_algorithm());
  c.signature = issuer_key.sign(c.tbs());
  return c;
}

Csr make_csr(std::string subject, const crypto::PrivateKey& key) {
  Csr csr;
  csr.subject = std::move(subject);
  csr.public_key = key.public_der();
  csr.self_signature = key.sign(csr.tbs());
  return csr;
}

std::string armor(std::string_view label, ByteView data) {
  std::string b64 = base64_encode(data);
  std::string out = "-----BEGIN " + std::string(label) + "-----\n";
  for (std::size_t i = 0; i < b64.size(); i += 64) {
    out += b64.substr(i, 64);
    out += '\n';
  }
  out += "-----END " + std::string(label) + "-----\n";
  return out;
}

Bytes dearmor(std::string_view label, std::string_view text) {
  const std::string begin = "-----BEGIN " + std::string(label) + "-----";
  const std::string end = "-----END " + std::string(label) + "-----";
  auto b = text.find(begin);
  auto e = text.find(end);
  if (b == std::string_view::npos || e == std::string_view::npos || e < b) {
    throw Error(ErrorCode::Malformed, "missing " + std::string(label) + " armor");
  }
  return base64_decode(text.substr(b + begin.size(), e - b - begin.size()));
}

}  // namespace blindvault::cert
