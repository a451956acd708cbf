#pragma once

// PKCS#11-shaped token that lives inside the emulated enclave boundary.
//
// Private keys never leave a Token in plaintext: at rest the whole token is
// one SealedBlob, and the only egress is wrap_keys() under a channel key
// derived inside the token. Every PIN-authenticated call appends exactly one
// entry to the hash-chained audit log, and the monotonic counter file is
// persisted before the call returns.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blindvault/attestation.hpp"
#include "blindvault/audit_log.hpp"
#include "blindvault/cert.hpp"
#include "blindvault/crypto.hpp"
#include "blindvault/soft_tee.hpp"

namespace blindvault::keyvault {

using KeyHandle = std::uint64_t;
using crypto::KeyAlgorithm;

/// Public view of a key object.
struct KeyInfo {
  KeyHandle handle = 0;
  KeyAlgorithm algorithm = KeyAlgorithm::EcdsaP256;
  Bytes public_part;
  std::string label;
  bool extractable = false;
  std::optional<cert::BlindCert> certificate;
};

struct GeneratedKey {
  KeyHandle handle = 0;
  Bytes public_part;
  attest::Quote quote;
};

/// Ephemeral ECDH key living only in token memory.
struct EphemeralKey {
  KeyHandle handle = 0;
  Bytes public_part;
  attest::Quote quote;
};

struct WrappedKeys {
  FixedBytes<crypto::kAeadNonceSize> nonce{};
  Bytes ciphertext;

  Bytes serialize() const;
  static WrappedKeys parse(ByteView data);
};

struct TokenPaths {
  std::filesystem::path dir;

  std::filesystem::path sealed() const { return dir / "vault.sealed"; }
  std::filesystem::path counter() const { return dir / "vault.counter"; }
  std::filesystem::path intent() const { return dir / "vault.intent"; }
  std::filesystem::path lock() const { return dir / "vault.lock"; }
};

struct TokenOptions {
  std::uint32_t pin_iterations = 100'000;
  /// Extra delay per consecutive PIN failure beyond the third.
  std::chrono::milliseconds pin_failure_delay{500};
  tee::SealPolicy seal_policy = tee::SealPolicy::MrEnclave;
  attest::QuoteType quote_type = attest::QuoteType::Epid;
  /// init(): replace an existing token.
  bool overwrite = false;
  /// open(): accept an interrupted operation, re-anchor the counter and log
  /// the recovery instead of failing with IncompleteOperation.
  bool recover_incomplete = false;
  /// Called at "intent", "counter" and "sealed" after each persistence step;
  /// tests use it to simulate crashes.
  std::function<void(std::string_view stage)> fault_hook;
};

class Token {
 public:
  /// Creates an empty token sealed to `dir` with counter 0.
  static Token init(const std::filesystem::path& dir, std::string_view pin,
                    const attest::Attester& attester, TokenOptions options = {});
  /// Opens, authenticates, and verifies the log against the counter file.
  /// Throws AuthFailure, RollbackDetected, ChainCorrupted,
  /// IncompleteOperation, VaultLocked, or NotInitialized.
  static Token open(const std::filesystem::path& dir, std::string_view pin,
                    const attest::Attester& attester, TokenOptions options = {});
  /// Read-only log verification of the persisted state; never throws for
  /// rollback or corruption, only for unreadable files.
  static LogCheck inspect(const std::filesystem::path& dir, const tee::Enclave& enclave);
  static bool exists(const std::filesystem::path& dir);

  Token(Token&&) noexcept;
  Token& operator=(Token&&) noexcept;
  ~Token();

  GeneratedKey generate_keypair(KeyAlgorithm alg, std::string label, std::string_view pin);
  GeneratedKey generate_keypair(KeyAlgorithm alg, std::string label, std::string_view pin,
                                attest::QuoteType quote_type);
  Bytes sign(KeyHandle handle, ByteView message, std::string_view pin);
  /// Always throws NonExtractable after logging the attempt.
  [[noreturn]] void export_private(KeyHandle handle, std::string_view pin);
  void attach_certificate(KeyHandle handle, const cert::BlindCert& cert, std::string_view pin);
  void destroy_object(KeyHandle handle, std::string_view pin);
  /// Fresh quote binding an existing object's public key (after an SVN/TCB update).
  attest::Quote quote_public_key(KeyHandle handle, attest::QuoteType type, std::string_view pin);

  /// ECDH.KeyGen: volatile key pair plus a quote binding its public part.
  EphemeralKey ecdh_keygen(std::string_view pin, attest::QuoteType quote_type);
  /// DeriveSharedKey: HKDF over the ECDH secret salted with the transcript
  /// hash. Destroys the ephemeral private key and returns a handle to the
  /// volatile channel key.
  KeyHandle derive_shared_key(KeyHandle ephemeral, ByteView peer_public, const Hash32& transcript,
                              std::string_view pin);
  /// HMAC under a label-specific subkey of the channel key, for key confirmation.
  Hash32 channel_mac(KeyHandle channel, std::string_view label, ByteView data,
                     std::string_view pin);
  WrappedKeys encrypt(KeyHandle channel, ByteView aad, ByteView plaintext, std::string_view pin);
  /// Throws DecryptFailure.
  Bytes decrypt(KeyHandle channel, ByteView aad, const WrappedKeys& ct, std::string_view pin);
  /// Encrypt(Certs, k): the listed objects, private parts included, under the
  /// channel key. The only way private key bytes leave the token.
  WrappedKeys wrap_keys(KeyHandle channel, const std::vector<KeyHandle>& handles, ByteView aad,
                        std::string_view pin);
  /// Decrypt + Store: imports wrapped objects as new non-extractable keys.
  std::vector<KeyHandle> unwrap_keys(KeyHandle channel, const WrappedKeys& wrapped, ByteView aad,
                                     std::string_view pin);
  void destroy_channel(KeyHandle channel, std::string_view pin);
  /// Records where restored state came from, as the first act of a restore.
  void record_provenance(const PlatformId& source_platform, const Hash32& source_log_head,
                         std::string_view pin);

  /// Logs an application-level event (for example a rejected request) as
  /// one entry with api_name = `event` and params_hash = SHA-256(details).
  void record_event(std::string_view event, ByteView details, std::string_view pin);

  // Public information; these calls are not logged.
  std::optional<KeyInfo> info(KeyHandle handle) const;
  std::optional<KeyHandle> find_by_label(std::string_view label) const;
  std::vector<KeyInfo> objects() const;
  std::size_t object_count() const;
  std::size_t volatile_count() const;

  const AuditLog& log() const;
  CounterRecord counter() const;
  LogCheck verify_log() const;

  const tee::Enclave& enclave() const;
  const attest::Attester& attester() const;
  const TokenPaths& paths() const;

 private:
  struct Impl;
  explicit Token(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace blindvault::keyvault
