#pragma once

// Plaintext layout of a token inside its SealedBlob. Internal to the
// library; tests include it to inspect unsealed state.

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "blindvault/audit_log.hpp"
#include "blindvault/cert.hpp"
#include "blindvault/crypto.hpp"

namespace blindvault::keyvault::detail {

struct StoredKey {
  std::uint64_t handle = 0;
  crypto::KeyAlgorithm algorithm = crypto::KeyAlgorithm::EcdsaP256;
  Bytes public_part;
  crypto::SecureBytes private_part;  // PKCS#8 DER
  bool extractable = false;
  std::string label;
  std::optional<cert::BlindCert> certificate;

  /// Parsed key, cached after first use.
  const crypto::PrivateKey& key() const;

 private:
  mutable std::optional<crypto::PrivateKey> cached_;
};

struct TokenState {
  std::uint32_t slot_id = 0;
  FixedBytes<16> pin_salt{};
  Hash32 pin_hash{};
  std::uint32_t pin_iterations = 0;
  std::uint64_t next_handle = 1;
  std::map<std::uint64_t, StoredKey> objects;
  AuditLog log;

  /// Serialization into a cleansing buffer.
  crypto::SecureBytes serialize() const;
  static TokenState parse(ByteView data);
};

void write_key(ByteWriter& w, const StoredKey& k);
StoredKey read_key(ByteReader& r);

}  // namespace blindvault::keyvault::detail
