#pragma once

// Certificate operations that need a vault: CSR generation, issuance by a
// vault-resident CA key, self-signing with an embedded quote, and the quote
// checks a relying party runs on such a certificate.

#include <optional>
#include <string>
#include <string_view>

#include "blindvault/attestation.hpp"
#include "blindvault/cert.hpp"
#include "blindvault/keyvault.hpp"

namespace blindvault::certkit {

struct GeneratedCsr {
  cert::Csr csr;
  keyvault::KeyHandle handle = 0;
  /// Binds csr.public_key.
  attest::Quote quote;
};

/// Generates a key pair in `vault` and a CSR self-signed by it.
GeneratedCsr gen_csr(keyvault::Token& vault, std::string subject, std::string_view pin,
                     crypto::KeyAlgorithm alg = crypto::KeyAlgorithm::EcdsaP256,
                     std::optional<attest::QuoteType> quote_type = std::nullopt);

struct IssueOptions {
  cert::UnixSeconds not_before = 0;  // 0 = now
  cert::UnixSeconds validity = cert::kLeafValidity;
  std::map<std::string, Bytes, std::less<>> extensions;
};

/// Signs `csr` with the issuer key held in `issuer_vault`. Throws BadCSR
/// when the proof of possession fails.
cert::BlindCert issue_cert(const cert::Csr& csr, const cert::BlindCert& issuer_cert,
                           keyvault::Token& issuer_vault, keyvault::KeyHandle issuer_handle,
                           std::string_view pin, const IssueOptions& options = {});

/// Self-signed certificate for an existing vault key. With `embed_quote`
/// set, `quote` must bind the key and is stored under "bf-quote".
cert::BlindCert self_sign(std::string subject, keyvault::Token& vault, keyvault::KeyHandle handle,
                          std::string_view pin, const std::optional<attest::Quote>& quote,
                          cert::UnixSeconds validity = cert::kCaValidity);

struct SelfSigned {
  cert::BlindCert cert;
  keyvault::KeyHandle handle = 0;
};

/// Generates a fresh key and self-signs it, embedding the generation quote
/// when `embed_quote` is set.
SelfSigned self_sign(std::string subject, keyvault::Token& vault, std::string_view pin,
                     bool embed_quote, crypto::KeyAlgorithm alg = crypto::KeyAlgorithm::EcdsaP256,
                     std::optional<attest::QuoteType> quote_type = std::nullopt);

/// Embedded quote of a certificate. Throws MissingQuoteExtension.
attest::Quote embedded_quote(const cert::BlindCert& cert);

/// Quote in "bf-quote" must verify, bind subject_public_key, and carry the
/// expected measurement. Throws MissingQuoteExtension.
attest::QuoteVerdict inspect_cert_quote(const cert::BlindCert& cert,
                                        const attest::QuotePolicy& policy,
                                        const attest::TrustAnchors& anchors);

}  // namespace blindvault::certkit
