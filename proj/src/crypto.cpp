#include "blindvault/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/ec.h>
#include <openssl/evp.h>
#include <openssl/kdf.h>
#include <openssl/obj_mac.h>
#include <openssl/param_build.h>
#include <openssl/rand.h>
#include <openssl/x509.h>

#include <cstring>

namespace blindvault::crypto {

namespace {

struct PkeyDeleter {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct PkeyCtxDeleter {
  void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
};
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};
struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
struct BnDeleter {
  void operator()(BIGNUM* p) const { BN_clear_free(p); }
};
struct GroupDeleter {
  void operator()(EC_GROUP* p) const { EC_GROUP_free(p); }
};
struct PointDeleter {
  void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};
struct ParamBldDeleter {
  void operator()(OSSL_PARAM_BLD* p) const { OSSL_PARAM_BLD_free(p); }
};
struct ParamDeleter {
  void operator()(OSSL_PARAM* p) const { OSSL_PARAM_free(p); }
};
struct KdfDeleter {
  void operator()(EVP_KDF* p) const { EVP_KDF_free(p); }
};
struct KdfCtxDeleter {
  void operator()(EVP_KDF_CTX* p) const { EVP_KDF_CTX_free(p); }
};

using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

[[noreturn]] void fail(const char* what) { throw Error(ErrorCode::CryptoFailure, what); }

void check(int rc, const char* what) {
  if (rc <= 0) fail(what);
}

std::shared_ptr<EVP_PKEY> share(EVP_PKEY* p) {
  if (p == nullptr) fail("null key");
  return {p, PkeyDeleter{}};
}

PkeyPtr parse_public(ByteView der) {
  const unsigned char* p = der.data();
  EVP_PKEY* key = d2i_PUBKEY(nullptr, &p, static_cast<long>(der.size()));
  if (key == nullptr || p != der.data() + der.size()) {
    EVP_PKEY_free(key);
    return nullptr;
  }
  return PkeyPtr(key);
}

bool is_p256(EVP_PKEY* key) {
  if (EVP_PKEY_get_base_id(key) != EVP_PKEY_EC) return false;
  char name[64] = {};
  std::size_t len = 0;
  if (EVP_PKEY_get_utf8_string_param(key, OSSL_PKEY_PARAM_GROUP_NAME, name, sizeof(name),
                                     &len) != 1) {
    return false;
  }
  return std::strcmp(name, "prime256v1") == 0 || std::strcmp(name, "P-256") == 0;
}

}  // namespace

void cleanse(void* p, std::size_t n) noexcept {
  if (p != nullptr && n != 0) OPENSSL_cleanse(p, n);
}

Hash32 sha256(ByteView data) {
  Hash32 out{};
  unsigned int len = 0;
  check(EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr),
        "sha256");
  return out;
}

struct Sha256::Impl {
  MdCtxPtr ctx{EVP_MD_CTX_new()};
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  if (!impl_->ctx) fail("EVP_MD_CTX_new");
  check(EVP_DigestInit_ex(impl_->ctx.get(), EVP_sha256(), nullptr), "sha256 init");
}

Sha256::~Sha256() = default;

Sha256& Sha256::update(ByteView data) {
  check(EVP_DigestUpdate(impl_->ctx.get(), data.data(), data.size()), "sha256 update");
  return *this;
}

Hash32 Sha256::finish() {
  Hash32 out{};
  unsigned int len = 0;
  check(EVP_DigestFinal_ex(impl_->ctx.get(), out.data(), &len), "sha256 final");
  return out;
}

Hash32 hmac_sha256(ByteView key, ByteView data) {
  Hash32 out{};
  std::size_t len = out.size();
  unsigned char* r = EVP_Q_mac(nullptr, "HMAC", nullptr, "SHA256", nullptr, key.data(),
                               key.size(), data.data(), data.size(), out.data(), out.size(),
                               &len);
  if (r == nullptr || len != out.size()) fail("hmac");
  return out;
}

SecureBytes hkdf_sha256(ByteView ikm, ByteView salt, std::string_view info, std::size_t length) {
  std::unique_ptr<EVP_KDF, KdfDeleter> kdf(EVP_KDF_fetch(nullptr, "HKDF", nullptr));
  if (!kdf) fail("HKDF fetch");
  std::unique_ptr<EVP_KDF_CTX, KdfCtxDeleter> ctx(EVP_KDF_CTX_new(kdf.get()));
  if (!ctx) fail("HKDF ctx");

  char digest[] = "SHA256";
  // OSSL_PARAM wants non-const pointers; none of these buffers are written.
  auto* ikm_p = const_cast<std::uint8_t*>(ikm.data());
  auto* salt_p = const_cast<std::uint8_t*>(salt.data());
  auto* info_p = const_cast<char*>(info.data());
  OSSL_PARAM params[] = {
      OSSL_PARAM_construct_utf8_string(OSSL_KDF_PARAM_DIGEST, digest, 0),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_KEY, ikm_p, ikm.size()),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_SALT, salt_p, salt.size()),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_INFO, info_p, info.size()),
      OSSL_PARAM_construct_end(),
  };
  SecureBytes out(length);
  check(EVP_KDF_derive(ctx.get(), out.data(), out.size(), params), "HKDF derive");
  return out;
}

SecureBytes pbkdf2_sha256(std::string_view password, ByteView salt, std::uint32_t iterations,
                          std::size_t length) {
  SecureBytes out(length);
  check(PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()), salt.data(),
                          static_cast<int>(salt.size()), static_cast<int>(iterations),
                          EVP_sha256(), static_cast<int>(length), out.data()),
        "pbkdf2");
  return out;
}

Bytes random_bytes(std::size_t n) {
  Bytes out(n);
  if (n != 0) check(RAND_bytes(out.data(), static_cast<int>(n)), "RAND_bytes");
  return out;
}

Bytes aead_seal(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext) {
  if (key.size() != kAeadKeySize || nonce.size() != kAeadNonceSize) {
    throw Error(ErrorCode::CryptoFailure, "bad AEAD key or nonce size");
  }
  std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter> ctx(EVP_CIPHER_CTX_new());
  if (!ctx) fail("cipher ctx");
  check(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()),
        "gcm init");
  int len = 0;
  if (!aad.empty()) {
    check(EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())),
          "gcm aad");
  }
  Bytes out(plaintext.size() + kAeadTagSize);
  int written = 0;
  if (!plaintext.empty()) {
    check(EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                            static_cast<int>(plaintext.size())),
          "gcm update");
    written = len;
  }
  check(EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &len), "gcm final");
  written += len;
  check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kAeadTagSize,
                            out.data() + written),
        "gcm tag");
  out.resize(static_cast<std::size_t>(written) + kAeadTagSize);
  return out;
}

std::optional<SecureBytes> aead_open(ByteView key, ByteView nonce, ByteView aad,
                                     ByteView sealed) {
  if (key.size() != kAeadKeySize || nonce.size() != kAeadNonceSize) {
    throw Error(ErrorCode::CryptoFailure, "bad AEAD key or nonce size");
  }
  if (sealed.size() < kAeadTagSize) return std::nullopt;
  std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter> ctx(EVP_CIPHER_CTX_new());
  if (!ctx) fail("cipher ctx");
  check(EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()),
        "gcm init");
  int len = 0;
  if (!aad.empty()) {
    check(EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())),
          "gcm aad");
  }
  const std::size_t ct_len = sealed.size() - kAeadTagSize;
  SecureBytes out(ct_len);
  int written = 0;
  if (ct_len != 0) {
    check(EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(ct_len)),
          "gcm update");
    written = len;
  }
  Bytes tag(sealed.begin() + static_cast<std::ptrdiff_t>(ct_len), sealed.end());
  check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kAeadTagSize, tag.data()),
        "gcm set tag");
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + written, &len) <= 0) {
    return std::nullopt;
  }
  out.resize(static_cast<std::size_t>(written + len));
  return out;
}

std::string_view to_string(KeyAlgorithm alg) {
  switch (alg) {
    case KeyAlgorithm::Rsa2048: return "rsa2048";
    case KeyAlgorithm::EcdsaP256: return "ecdsa-p256";
    case KeyAlgorithm::EcdhP256: return "ecdh-p256";
  }
  return "unknown";
}

KeyAlgorithm key_algorithm_from_string(std::string_view s) {
  if (s == "rsa2048") return KeyAlgorithm::Rsa2048;
  if (s == "ecdsa-p256" || s == "p256") return KeyAlgorithm::EcdsaP256;
  if (s == "ecdh-p256") return KeyAlgorithm::EcdhP256;
  throw Error(ErrorCode::UnsupportedAlgorithm, std::string(s));
}

PrivateKey PrivateKey::generate(KeyAlgorithm alg) {
  EVP_PKEY* key = nullptr;
  switch (alg) {
    case KeyAlgorithm::Rsa2048:
      key = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA", static_cast<std::size_t>(2048));
      break;
    case KeyAlgorithm::EcdsaP256:
    case KeyAlgorithm::EcdhP256:
      key = EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-256");
      break;
    default:
      throw Error(ErrorCode::UnsupportedAlgorithm, "unknown key algorithm");
  }
  if (key == nullptr) fail("keygen");
  return PrivateKey(share(key), alg);
}

PrivateKey PrivateKey::from_pkcs8(ByteView der, KeyAlgorithm alg) {
  const unsigned char* p = der.data();
  EVP_PKEY* key = d2i_AutoPrivateKey(nullptr, &p, static_cast<long>(der.size()));
  if (key == nullptr) throw Error(ErrorCode::Malformed, "unparseable private key");
  auto shared = share(key);
  const bool rsa = EVP_PKEY_get_base_id(key) == EVP_PKEY_RSA;
  if ((alg == KeyAlgorithm::Rsa2048) != rsa || (!rsa && !is_p256(key))) {
    throw Error(ErrorCode::Malformed, "private key does not match declared algorithm");
  }
  return PrivateKey(std::move(shared), alg);
}

PrivateKey PrivateKey::p256_from_seed(ByteView seed, KeyAlgorithm alg) {
  std::unique_ptr<EC_GROUP, GroupDeleter> group(EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1));
  if (!group) fail("P-256 group");
  const BIGNUM* order = EC_GROUP_get0_order(group.get());

  // scalar = 1 + (H(seed) mod (n - 1)), never zero.
  auto digest = hkdf_sha256(seed, {}, "p256-scalar", 48);
  std::unique_ptr<BIGNUM, BnDeleter> d(BN_bin2bn(digest.data(), static_cast<int>(digest.size()),
                                                 nullptr));
  std::unique_ptr<BIGNUM, BnDeleter> n_minus_1(BN_dup(order));
  if (!d || !n_minus_1) fail("bignum");
  check(BN_sub_word(n_minus_1.get(), 1), "bn sub");
  std::unique_ptr<BN_CTX, decltype(&BN_CTX_free)> bn_ctx(BN_CTX_new(), &BN_CTX_free);
  check(BN_nnmod(d.get(), d.get(), n_minus_1.get(), bn_ctx.get()), "bn mod");
  check(BN_add_word(d.get(), 1), "bn add");

  std::unique_ptr<EC_POINT, PointDeleter> pub(EC_POINT_new(group.get()));
  check(EC_POINT_mul(group.get(), pub.get(), d.get(), nullptr, nullptr, bn_ctx.get()),
        "point mul");
  unsigned char pub_oct[65];
  std::size_t pub_len = EC_POINT_point2oct(group.get(), pub.get(), POINT_CONVERSION_UNCOMPRESSED,
                                           pub_oct, sizeof(pub_oct), bn_ctx.get());
  if (pub_len == 0) fail("point encode");

  std::unique_ptr<OSSL_PARAM_BLD, ParamBldDeleter> bld(OSSL_PARAM_BLD_new());
  check(OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME, "prime256v1", 0),
        "param group");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_PRIV_KEY, d.get()), "param priv");
  check(OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PUB_KEY, pub_oct, pub_len),
        "param pub");
  std::unique_ptr<OSSL_PARAM, ParamDeleter> params(OSSL_PARAM_BLD_to_param(bld.get()));
  if (!params) fail("param build");

  PkeyCtxPtr ctx(EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr));
  check(EVP_PKEY_fromdata_init(ctx.get()), "fromdata init");
  EVP_PKEY* key = nullptr;
  check(EVP_PKEY_fromdata(ctx.get(), &key, EVP_PKEY_KEYPAIR, params.get()), "fromdata");
  return PrivateKey(share(key), alg);
}

SignatureAlgorithm PrivateKey::signature_algorithm() const {
  switch (alg_) {
    case KeyAlgorithm::Rsa2048: return SignatureAlgorithm::RsaPkcs1Sha256;
    case KeyAlgorithm::EcdsaP256: return SignatureAlgorithm::EcdsaSha256;
    case KeyAlgorithm::EcdhP256: return SignatureAlgorithm::None;
  }
  return SignatureAlgorithm::None;
}

SecureBytes PrivateKey::to_pkcs8() const {
  // i2d_PrivateKey would give the traditional SEC1 / PKCS#1 form.
  PKCS8_PRIV_KEY_INFO* info = EVP_PKEY2PKCS8(key_.get());
  if (info == nullptr) fail("encode private key");
  int len = i2d_PKCS8_PRIV_KEY_INFO(info, nullptr);
  if (len <= 0) {
    PKCS8_PRIV_KEY_INFO_free(info);
    fail("encode private key");
  }
  SecureBytes out(static_cast<std::size_t>(len));
  unsigned char* p = out.data();
  int written = i2d_PKCS8_PRIV_KEY_INFO(info, &p);
  PKCS8_PRIV_KEY_INFO_free(info);
  check(written, "encode private key");
  return out;
}

Bytes PrivateKey::public_der() const {
  int len = i2d_PUBKEY(key_.get(), nullptr);
  if (len <= 0) fail("encode public key");
  Bytes out(static_cast<std::size_t>(len));
  unsigned char* p = out.data();
  check(i2d_PUBKEY(key_.get(), &p), "encode public key");
  return out;
}

Bytes PrivateKey::sign(ByteView message) const {
  if (!can_sign(alg_)) throw Error(ErrorCode::WrongKeyType, "key cannot sign");
  MdCtxPtr ctx(EVP_MD_CTX_new());
  check(EVP_DigestSignInit(ctx.get(), nullptr, EVP_sha256(), nullptr, key_.get()), "sign init");
  std::size_t len = 0;
  check(EVP_DigestSign(ctx.get(), nullptr, &len, message.data(), message.size()), "sign size");
  Bytes sig(len);
  check(EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()), "sign");
  sig.resize(len);
  return sig;
}

SecureBytes PrivateKey::ecdh(ByteView peer_public_der) const {
  if (alg_ != KeyAlgorithm::EcdhP256) throw Error(ErrorCode::WrongKeyType, "not an ECDH key");
  auto peer = parse_public(peer_public_der);
  if (!peer || !is_p256(peer.get())) {
    throw Error(ErrorCode::InvalidCurvePoint, "peer key is not a P-256 point");
  }
  PkeyCtxPtr check_ctx(EVP_PKEY_CTX_new(peer.get(), nullptr));
  if (!check_ctx || EVP_PKEY_public_check(check_ctx.get()) != 1) {
    throw Error(ErrorCode::InvalidCurvePoint, "peer point failed validation");
  }
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new(key_.get(), nullptr));
  check(EVP_PKEY_derive_init(ctx.get()), "derive init");
  if (EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) <= 0) {
    throw Error(ErrorCode::InvalidCurvePoint, "peer rejected");
  }
  std::size_t len = 0;
  check(EVP_PKEY_derive(ctx.get(), nullptr, &len), "derive size");
  SecureBytes out(len);
  check(EVP_PKEY_derive(ctx.get(), out.data(), &len), "derive");
  out.resize(len);
  return out;
}

bool verify_signature(ByteView public_der, ByteView message, ByteView signature) {
  auto key = parse_public(public_der);
  if (!key || signature.empty()) return false;
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (EVP_DigestVerifyInit(ctx.get(), nullptr, EVP_sha256(), nullptr, key.get()) <= 0) {
    return false;
  }
  return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(),
                          message.size()) == 1;
}

SignatureAlgorithm signature_algorithm_of(ByteView public_der) {
  auto key = parse_public(public_der);
  if (!key) return SignatureAlgorithm::None;
  if (EVP_PKEY_get_base_id(key.get()) == EVP_PKEY_RSA) return SignatureAlgorithm::RsaPkcs1Sha256;
  if (is_p256(key.get())) return SignatureAlgorithm::EcdsaSha256;
  return SignatureAlgorithm::None;
}

void check_p256_public(ByteView public_der) {
  auto key = parse_public(public_der);
  if (!key || !is_p256(key.get())) {
    throw Error(ErrorCode::InvalidCurvePoint, "not a P-256 public key");
  }
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new(key.get(), nullptr));
  if (!ctx || EVP_PKEY_public_check(ctx.get()) != 1) {
    throw Error(ErrorCode::InvalidCurvePoint, "point not on curve");
  }
}

}  // namespace blindvault::crypto
