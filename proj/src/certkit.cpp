#include "blindvault/certkit.hpp"

namespace blindvault::certkit {

namespace {

keyvault::GeneratedKey generate(keyvault::Token& vault, crypto::KeyAlgorithm alg,
                                std::string label, std::string_view pin,
                                const std::optional<attest::QuoteType>& type) {
  if (!crypto::can_sign(alg)) {
    throw Error(ErrorCode::UnsupportedAlgorithm, "certificate keys must be able to sign");
  }
  return type ? vault.generate_keypair(alg, std::move(label), pin, *type)
              : vault.generate_keypair(alg, std::move(label), pin);
}

}  // namespace

GeneratedCsr gen_csr(keyvault::Token& vault, std::string subject, std::string_view pin,
                     crypto::KeyAlgorithm alg, std::optional<attest::QuoteType> quote_type) {
  auto key = generate(vault, alg, "csr:" + subject, pin, quote_type);
  GeneratedCsr out;
  out.csr.subject = std::move(subject);
  out.csr.public_key = key.public_part;
  out.csr.self_signature = vault.sign(key.handle, out.csr.tbs(), pin);
  out.handle = key.handle;
  out.quote = std::move(key.quote);
  return out;
}

cert::BlindCert issue_cert(const cert::Csr& csr, const cert::BlindCert& issuer_cert,
                           keyvault::Token& issuer_vault, keyvault::KeyHandle issuer_handle,
                           std::string_view pin, const IssueOptions& options) {
  if (!csr.verify_pop()) throw Error(ErrorCode::BadCSR, "CSR proof of possession failed");
  auto info = issuer_vault.info(issuer_handle);
  if (!info || info->public_part != issuer_cert.subject_public_key) {
    throw Error(ErrorCode::UnknownHandle, "issuer key is not resident in the vault");
  }
  cert::CertRequest req;
  req.subject = csr.subject;
  req.issuer = issuer_cert.subject;
  req.subject_public_key = csr.public_key;
  req.not_before = options.not_before;
  req.validity = options.validity;
  req.extensions = options.extensions;
  auto c = cert::make_unsigned(req, crypto::signature_algorithm_of(info->public_part));
  c.signature = issuer_vault.sign(issuer_handle, c.tbs(), pin);
  return c;
}

cert::BlindCert self_sign(std::string subject, keyvault::Token& vault, keyvault::KeyHandle handle,
                          std::string_view pin, const std::optional<attest::Quote>& quote,
                          cert::UnixSeconds validity) {
  auto info = vault.info(handle);
  if (!info) throw Error(ErrorCode::UnknownHandle, "no object with handle " + std::to_string(handle));
  cert::CertRequest req;
  req.subject = subject;
  req.issuer = std::move(subject);
  req.subject_public_key = info->public_part;
  req.validity = validity;
  if (quote) req.extensions.emplace(std::string(cert::kQuoteExtension), quote->serialize());
  auto c = cert::make_unsigned(req, crypto::signature_algorithm_of(info->public_part));
  c.signature = vault.sign(handle, c.tbs(), pin);
  return c;
}

SelfSigned self_sign(std::string subject, keyvault::Token& vault, std::string_view pin,
                     bool embed_quote, crypto::KeyAlgorithm alg,
                     std::optional<attest::QuoteType> quote_type) {
  auto key = generate(vault, alg, "cert:" + subject, pin, quote_type);
  std::optional<attest::Quote> q;
  if (embed_quote) q = std::move(key.quote);
  return {self_sign(std::move(subject), vault, key.handle, pin, q), key.handle};
}

attest::Quote embedded_quote(const cert::BlindCert& c) {
  const auto* ext = c.extension(cert::kQuoteExtension);
  if (ext == nullptr) {
    throw Error(ErrorCode::MissingQuoteExtension, "certificate '" + c.subject + "' has no quote");
  }
  return attest::Quote::parse(*ext);
}

attest::QuoteVerdict inspect_cert_quote(const cert::BlindCert& c, const attest::QuotePolicy& policy,
                                        const attest::TrustAnchors& anchors) {
  auto q = embedded_quote(c);
  return attest::verify_quote(q, c.subject_public_key, q.type, anchors, policy);
}

}  // namespace blindvault::certkit
