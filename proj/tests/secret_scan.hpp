#pragma once

// Independent extraction of private key material for leak scans: the raw
// scalar / primes pulled out with OpenSSL directly, plus the PKCS#8 blob.

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/x509.h>

#include <stdexcept>
#include <string>
#include <vector>

#include "blindvault/bytes.hpp"

namespace bvtest {

inline blindvault::Bytes bn_param(EVP_PKEY* pkey, const char* name) {
  BIGNUM* bn = nullptr;
  if (EVP_PKEY_get_bn_param(pkey, name, &bn) != 1) return {};
  blindvault::Bytes out(BN_num_bytes(bn));
  BN_bn2bin(bn, out.data());
  BN_clear_free(bn);
  return out;
}

/// Byte strings that must never appear outside sealed or encrypted data.
inline std::vector<blindvault::Bytes> secret_needles(blindvault::ByteView pkcs8) {
  std::vector<blindvault::Bytes> out{blindvault::Bytes(pkcs8.begin(), pkcs8.end())};
  const unsigned char* p = pkcs8.data();
  PKCS8_PRIV_KEY_INFO* info = d2i_PKCS8_PRIV_KEY_INFO(nullptr, &p, static_cast<long>(pkcs8.size()));
  if (!info) throw std::runtime_error("needle source is not PKCS#8");
  EVP_PKEY* pkey = EVP_PKCS82PKEY(info);
  PKCS8_PRIV_KEY_INFO_free(info);
  if (!pkey) throw std::runtime_error("PKCS#8 key not loadable");
  for (const char* name : {OSSL_PKEY_PARAM_PRIV_KEY, OSSL_PKEY_PARAM_RSA_D,
                           OSSL_PKEY_PARAM_RSA_FACTOR1, OSSL_PKEY_PARAM_RSA_FACTOR2}) {
    auto b = bn_param(pkey, name);
    if (b.size() >= 16) out.push_back(std::move(b));
  }
  EVP_PKEY_free(pkey);
  if (out.size() < 2) throw std::runtime_error("no raw key material extracted");
  return out;
}

inline bool contains_any(blindvault::ByteView hay, const std::vector<blindvault::Bytes>& needles) {
  for (const auto& n : needles) {
    if (blindvault::contains(hay, n)) return true;
  }
  return false;
}

}  // namespace bvtest
