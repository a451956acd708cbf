#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "blindvault/bytes.hpp"

using EVP_PKEY = struct evp_pkey_st;

namespace blindvault::crypto {

/// Allocator that wipes memory before releasing it. Used for every buffer
/// that may hold private key material.
template <typename T>
struct CleansingAllocator {
  using value_type = T;
  CleansingAllocator() = default;
  template <typename U>
  CleansingAllocator(const CleansingAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return std::allocator<T>{}.allocate(n); }
  void deallocate(T* p, std::size_t n) noexcept;
  template <typename U>
  bool operator==(const CleansingAllocator<U>&) const noexcept {
    return true;
  }
};

void cleanse(void* p, std::size_t n) noexcept;

template <typename T>
void CleansingAllocator<T>::deallocate(T* p, std::size_t n) noexcept {
  cleanse(p, n * sizeof(T));
  std::allocator<T>{}.deallocate(p, n);
}

using SecureBytes = std::vector<std::uint8_t, CleansingAllocator<std::uint8_t>>;

inline SecureBytes secure_copy(ByteView v) { return {v.begin(), v.end()}; }
inline ByteView view(const SecureBytes& s) { return {s.data(), s.size()}; }

Hash32 sha256(ByteView data);

/// Incremental SHA-256 for hashing several fields without concatenating.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  Sha256& update(ByteView data);
  Hash32 finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Hash32 hmac_sha256(ByteView key, ByteView data);

/// HKDF-SHA256 (extract + expand).
SecureBytes hkdf_sha256(ByteView ikm, ByteView salt, std::string_view info, std::size_t length);

SecureBytes pbkdf2_sha256(std::string_view password, ByteView salt, std::uint32_t iterations,
                          std::size_t length);

Bytes random_bytes(std::size_t n);

template <std::size_t N>
FixedBytes<N> random_fixed() {
  auto b = random_bytes(N);
  return to_fixed<N>(b);
}

inline constexpr std::size_t kAeadKeySize = 32;
inline constexpr std::size_t kAeadNonceSize = 12;
inline constexpr std::size_t kAeadTagSize = 16;

/// AES-256-GCM. Returns ciphertext || tag.
Bytes aead_seal(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext);

/// Returns nullopt when the tag does not verify.
std::optional<SecureBytes> aead_open(ByteView key, ByteView nonce, ByteView aad,
                                     ByteView sealed);

enum class KeyAlgorithm : std::uint8_t {
  Rsa2048 = 1,
  EcdsaP256 = 2,
  EcdhP256 = 3,
};

std::string_view to_string(KeyAlgorithm alg);
KeyAlgorithm key_algorithm_from_string(std::string_view s);

enum class SignatureAlgorithm : std::uint8_t {
  None = 0,
  RsaPkcs1Sha256 = 1,
  EcdsaSha256 = 2,
};

inline bool can_sign(KeyAlgorithm alg) { return alg != KeyAlgorithm::EcdhP256; }

/// Immutable handle on an OpenSSL private key. Copies share the key.
class PrivateKey {
 public:
  static PrivateKey generate(KeyAlgorithm alg);
  static PrivateKey from_pkcs8(ByteView der, KeyAlgorithm alg);
  /// Deterministic P-256 key whose scalar is derived from a 32-byte seed.
  static PrivateKey p256_from_seed(ByteView seed, KeyAlgorithm alg = KeyAlgorithm::EcdsaP256);

  KeyAlgorithm algorithm() const { return alg_; }
  SignatureAlgorithm signature_algorithm() const;

  SecureBytes to_pkcs8() const;
  /// DER SubjectPublicKeyInfo; the canonical public-key encoding.
  Bytes public_der() const;

  Bytes sign(ByteView message) const;
  /// Raw ECDH shared secret with a peer's DER public key.
  SecureBytes ecdh(ByteView peer_public_der) const;

 private:
  PrivateKey(std::shared_ptr<EVP_PKEY> key, KeyAlgorithm alg) : key_(std::move(key)), alg_(alg) {}

  std::shared_ptr<EVP_PKEY> key_;
  KeyAlgorithm alg_;
};

/// Verifies a signature made by PrivateKey::sign. Malformed keys or
/// signatures yield false.
bool verify_signature(ByteView public_der, ByteView message, ByteView signature);

/// Signature algorithm implied by a DER public key, None if unusable.
SignatureAlgorithm signature_algorithm_of(ByteView public_der);

/// Throws InvalidCurvePoint unless `public_der` is a valid P-256 point.
void check_p256_public(ByteView public_der);

}  // namespace blindvault::crypto
