#include "blindvault/keyvault.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <mutex>
#include <thread>

#include "blindvault/fileio.hpp"
#include "token_state.hpp"

namespace blindvault::keyvault {

namespace fs = std::filesystem;
using detail::StoredKey;
using detail::TokenState;

namespace {

constexpr std::string_view kStateMagic = "BFTOKEN1";
constexpr std::string_view kWrapMagic = "BFKEYS01";
constexpr std::size_t kPinHashSize = 32;

// Volatile handles live in their own range so they never collide with
// persisted ones and never advance the sealed next_handle.
constexpr KeyHandle kVolatileBit = KeyHandle{1} << 63;

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

Hash32 hash_pin(std::string_view pin, const FixedBytes<16>& salt, std::uint32_t iterations) {
  auto k = crypto::pbkdf2_sha256(pin, salt, iterations, kPinHashSize);
  return to_fixed<32>(crypto::view(k));
}

class Params {
 public:
  explicit Params(std::string_view api) { w_.str(api); }
  Params& u64(std::uint64_t v) {
    w_.u64(v);
    return *this;
  }
  Params& blob(ByteView v) {
    w_.blob(v);
    return *this;
  }
  Params& str(std::string_view v) {
    w_.str(v);
    return *this;
  }
  // Message bodies are hashed before they reach the params hash.
  Params& digest(ByteView v) {
    w_.raw(crypto::sha256(v));
    return *this;
  }
  Hash32 hash() const { return crypto::sha256(w_.bytes()); }

 private:
  ByteWriter w_;
};

struct VolatileKey {
  enum class Kind { Ephemeral, Channel } kind = Kind::Ephemeral;
  std::optional<crypto::PrivateKey> ephemeral;
  crypto::SecureBytes channel_key;
};

class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0600);
    if (fd_ < 0) throw Error(ErrorCode::Io, "cannot open " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw Error(ErrorCode::VaultLocked, path.parent_path().string() + " is in use");
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  ~FileLock() {
    if (fd_ >= 0) ::close(fd_);
  }

 private:
  int fd_ = -1;
};

std::optional<LogEntry> read_intent(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  try {
    auto data = read_file(path);
    ByteReader r(data);
    auto e = LogEntry::read(r);
    r.expect_end();
    return e;
  } catch (const Error&) {
    // A torn intent record explains nothing.
    return std::nullopt;
  }
}

CounterRecord read_counter(const fs::path& path) {
  return CounterRecord::parse(read_file(path));
}

ErrorCode code_for(LogStatus s) {
  switch (s) {
    case LogStatus::Ok: return ErrorCode::Ok;
    case LogStatus::RollbackDetected: return ErrorCode::RollbackDetected;
    case LogStatus::ChainCorrupted: return ErrorCode::ChainCorrupted;
    case LogStatus::IncompleteOperation: return ErrorCode::IncompleteOperation;
  }
  return ErrorCode::ChainCorrupted;
}

KeyInfo info_of(const StoredKey& k) {
  return {k.handle, k.algorithm, k.public_part, k.label, k.extractable, k.certificate};
}

}  // namespace

// ---- state serialization -------------------------------------------------

const crypto::PrivateKey& StoredKey::key() const {
  if (!cached_) cached_ = crypto::PrivateKey::from_pkcs8(crypto::view(private_part), algorithm);
  return *cached_;
}

void detail::write_key(ByteWriter& w, const StoredKey& k) {
  w.u64(k.handle).u8(static_cast<std::uint8_t>(k.algorithm)).blob(k.public_part);
  w.blob(crypto::view(k.private_part)).u8(k.extractable ? 1 : 0).str(k.label);
  w.u8(k.certificate ? 1 : 0);
  if (k.certificate) w.blob(k.certificate->serialize());
}

StoredKey detail::read_key(ByteReader& r) {
  StoredKey k;
  k.handle = r.u64();
  auto alg = r.u8();
  if (alg < 1 || alg > 3) throw Error(ErrorCode::Malformed, "unknown key algorithm in token state");
  k.algorithm = static_cast<KeyAlgorithm>(alg);
  k.public_part = r.blob();
  {
    auto priv = r.blob();
    k.private_part = crypto::secure_copy(priv);
    crypto::cleanse(priv.data(), priv.size());
  }
  k.extractable = r.u8() != 0;
  k.label = r.str();
  if (r.u8() != 0) k.certificate = cert::BlindCert::parse(r.blob());
  return k;
}

crypto::SecureBytes TokenState::serialize() const {
  ByteWriter w;
  w.raw(as_bytes(kStateMagic)).u32(slot_id).raw(pin_salt).raw(pin_hash).u32(pin_iterations);
  w.u64(next_handle).u32(static_cast<std::uint32_t>(objects.size()));
  for (const auto& [h, k] : objects) write_key(w, k);
  w.u64(log.size());
  for (const auto& e : log.entries()) e.write(w);
  Bytes raw = std::move(w).bytes();
  crypto::SecureBytes out = crypto::secure_copy(raw);
  crypto::cleanse(raw.data(), raw.size());
  return out;
}

TokenState TokenState::parse(ByteView data) {
  ByteReader r(data);
  if (r.raw(kStateMagic.size()) != to_bytes(kStateMagic)) {
    throw Error(ErrorCode::Malformed, "not a token state");
  }
  TokenState s;
  s.slot_id = r.u32();
  s.pin_salt = r.fixed<16>();
  s.pin_hash = r.fixed<32>();
  s.pin_iterations = r.u32();
  s.next_handle = r.u64();
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = read_key(r);
    auto h = k.handle;
    if (!s.objects.emplace(h, std::move(k)).second) {
      throw Error(ErrorCode::Malformed, "duplicate handle in token state");
    }
  }
  auto entries = r.u64();
  std::vector<LogEntry> log;
  for (std::uint64_t i = 0; i < entries; ++i) log.push_back(LogEntry::read(r));
  r.expect_end();
  s.log = AuditLog(std::move(log));
  return s;
}

Bytes WrappedKeys::serialize() const {
  ByteWriter w;
  w.raw(nonce).blob(ciphertext);
  return std::move(w).bytes();
}

WrappedKeys WrappedKeys::parse(ByteView data) {
  ByteReader r(data);
  WrappedKeys k;
  k.nonce = r.fixed<crypto::kAeadNonceSize>();
  k.ciphertext = r.blob();
  r.expect_end();
  return k;
}

// ---- token ---------------------------------------------------------------

struct Token::Impl {
  Impl(const fs::path& dir, const attest::Attester& a, TokenOptions o)
      : paths{dir}, attester(a), options(std::move(o)) {}

  TokenPaths paths;
  const attest::Attester& attester;
  TokenOptions options;
  std::unique_ptr<FileLock> lock;

  TokenState state;
  CounterRecord counter;
  std::map<KeyHandle, VolatileKey> volatiles;
  KeyHandle next_volatile = kVolatileBit | 1;

  // After one successful PBKDF2 check the PIN is remembered as an HMAC tag
  // under a per-process random key, so later checks are cheap.
  Hash32 session_key = crypto::random_fixed<32>();
  std::optional<Hash32> session_tag;
  int consecutive_failures = 0;

  mutable std::mutex mu;

  const tee::Enclave& enclave() const { return attester.enclave(); }

  void hook(std::string_view stage) const {
    if (options.fault_hook) options.fault_hook(stage);
  }

  void authenticate(std::string_view pin) {
    if (session_tag) {
      auto tag = crypto::hmac_sha256(session_key, as_bytes(pin));
      if (equal_ct(tag, *session_tag)) {
        consecutive_failures = 0;
        return;
      }
    }
    auto h = hash_pin(pin, state.pin_salt, state.pin_iterations);
    if (equal_ct(h, state.pin_hash)) {
      consecutive_failures = 0;
      session_tag = crypto::hmac_sha256(session_key, as_bytes(pin));
      return;
    }
    ++consecutive_failures;
    if (consecutive_failures >= 3) {
      std::this_thread::sleep_for(options.pin_failure_delay * (consecutive_failures - 2));
    }
    throw Error(ErrorCode::AuthFailure, "PIN rejected");
  }

  void persist_state() {
    auto plain = state.serialize();
    auto blob = enclave().seal(crypto::view(plain), options.seal_policy);
    // Durability comes from the counter file; a lost sealed write shows up
    // as IncompleteOperation on the next open.
    blob.write_file(paths.sealed(), /*durable=*/false);
  }

  /// Logs one API call. The counter is persisted before `mutate` runs, so a
  /// failed counter write leaves the token untouched.
  void commit(std::string_view api, const Hash32& params, const std::function<void()>& mutate) {
    auto entry = state.log.make_next(std::string(api), params, now_ms());
    {
      ByteWriter w;
      entry.write(w);
      write_file_atomic(paths.intent(), w.bytes(), /*durable=*/false);
    }
    hook("intent");
    CounterRecord next{entry.seq, entry.hash()};
    try {
      write_file_atomic(paths.counter(), next.serialize(), /*durable=*/true);
    } catch (const Error& e) {
      std::error_code ec;
      fs::remove(paths.intent(), ec);
      throw Error(ErrorCode::CounterWriteFailure, e.detail());
    }
    counter = next;
    hook("counter");
    if (mutate) mutate();
    state.log.append(std::move(entry));
    persist_state();
    hook("sealed");
    std::error_code ec;
    fs::remove(paths.intent(), ec);
  }

  /// Logs a call that failed after authentication, then throws.
  [[noreturn]] void fail(std::string_view api, const Hash32& params, ErrorCode code,
                         const std::string& message) {
    commit(api, params, nullptr);
    throw Error(code, message);
  }

  StoredKey& object(std::string_view api, const Hash32& params, KeyHandle h) {
    auto it = state.objects.find(h);
    if (it == state.objects.end()) {
      fail(api, params, ErrorCode::UnknownHandle, "no object with handle " + std::to_string(h));
    }
    return it->second;
  }

  VolatileKey& volatile_key(std::string_view api, const Hash32& params, KeyHandle h,
                            VolatileKey::Kind kind) {
    auto it = volatiles.find(h);
    if (it == volatiles.end()) {
      fail(api, params, ErrorCode::UnknownHandle, "no volatile object " + std::to_string(h));
    }
    if (it->second.kind != kind) {
      fail(api, params, ErrorCode::WrongKeyType, "handle has the wrong kind for " + std::string(api));
    }
    return it->second;
  }

  attest::Quote quote_for(ByteView public_part, attest::QuoteType type) const {
    return attester.quote(public_part, type);
  }

  GeneratedKey generate(KeyAlgorithm alg, std::string label, std::string_view pin,
                        attest::QuoteType type) {
    std::lock_guard g(mu);
    authenticate(pin);
    auto params = Params("generate_keypair").u64(static_cast<std::uint8_t>(alg)).str(label).hash();
    if (alg != KeyAlgorithm::Rsa2048 && alg != KeyAlgorithm::EcdsaP256 &&
        alg != KeyAlgorithm::EcdhP256) {
      fail("generate_keypair", params, ErrorCode::UnsupportedAlgorithm, "unsupported algorithm");
    }
    auto key = crypto::PrivateKey::generate(alg);
    StoredKey k;
    k.handle = state.next_handle;
    k.algorithm = alg;
    k.public_part = key.public_der();
    k.private_part = key.to_pkcs8();
    k.extractable = false;
    k.label = std::move(label);
    GeneratedKey out{k.handle, k.public_part, quote_for(k.public_part, type)};
    const KeyHandle h = k.handle;
    commit("generate_keypair", params, [&] {
      state.objects.emplace(h, std::move(k));
      ++state.next_handle;
    });
    return out;
  }

  void check_log_or_throw(const std::optional<LogEntry>& pending) {
    auto check = verify_chain(state.log.entries(), counter, pending);
    if (check.ok()) return;
    if (check.status == LogStatus::IncompleteOperation && options.recover_incomplete) {
      // Accept the sealed state as authoritative: re-anchor the counter on
      // it and record that an operation was lost.
      CounterRecord anchored{state.log.size(), state.log.head()};
      write_file_atomic(paths.counter(), anchored.serialize(), true);
      counter = anchored;
      commit("recover_incomplete", Params("recover_incomplete").u64(pending->seq)
                                       .blob(pending->hash()).str(pending->api_name).hash(),
             nullptr);
      return;
    }
    throw Error(code_for(check.status), check.detail);
  }
};

Token::Token(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Token::Token(Token&&) noexcept = default;
Token& Token::operator=(Token&&) noexcept = default;
Token::~Token() = default;

bool Token::exists(const fs::path& dir) {
  std::error_code ec;
  TokenPaths p{dir};
  return fs::exists(p.sealed(), ec) || fs::exists(p.counter(), ec);
}

Token Token::init(const fs::path& dir, std::string_view pin, const attest::Attester& attester,
                  TokenOptions options) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  auto impl = std::make_unique<Impl>(dir, attester, std::move(options));
  impl->lock = std::make_unique<FileLock>(impl->paths.lock());
  if (exists(dir) && !impl->options.overwrite) {
    throw Error(ErrorCode::AlreadyInitialized, "a token already exists in " + dir.string());
  }
  if (impl->options.pin_iterations == 0) {
    throw Error(ErrorCode::BadConfig, "pin_iterations must be positive");
  }
  fs::remove(impl->paths.intent(), ec);

  auto& s = impl->state;
  s.slot_id = 0;
  s.pin_salt = crypto::random_fixed<16>();
  s.pin_iterations = impl->options.pin_iterations;
  s.pin_hash = hash_pin(pin, s.pin_salt, s.pin_iterations);
  impl->session_tag = crypto::hmac_sha256(impl->session_key, as_bytes(pin));

  impl->counter = CounterRecord{};
  write_file_atomic(impl->paths.counter(), impl->counter.serialize(), true);
  impl->persist_state();
  return Token(std::move(impl));
}

Token Token::open(const fs::path& dir, std::string_view pin, const attest::Attester& attester,
                  TokenOptions options) {
  auto impl = std::make_unique<Impl>(dir, attester, std::move(options));
  std::error_code ec;
  if (!fs::exists(impl->paths.sealed(), ec)) {
    throw Error(ErrorCode::NotInitialized, "no token in " + dir.string());
  }
  impl->lock = std::make_unique<FileLock>(impl->paths.lock());

  auto blob = tee::SealedBlob::read_file(impl->paths.sealed());
  impl->options.seal_policy = blob.policy;
  {
    auto plain = impl->enclave().unseal(blob);
    impl->state = TokenState::parse(crypto::view(plain));
  }
  if (!fs::exists(impl->paths.counter(), ec)) {
    throw Error(ErrorCode::RollbackDetected, "counter file is missing");
  }
  impl->counter = read_counter(impl->paths.counter());

  impl->authenticate(pin);
  auto pending = read_intent(impl->paths.intent());
  impl->check_log_or_throw(pending);
  fs::remove(impl->paths.intent(), ec);
  return Token(std::move(impl));
}

LogCheck Token::inspect(const fs::path& dir, const tee::Enclave& enclave) {
  TokenPaths p{dir};
  auto blob = tee::SealedBlob::read_file(p.sealed());
  auto plain = enclave.unseal(blob);
  auto state = TokenState::parse(crypto::view(plain));
  std::error_code ec;
  if (!fs::exists(p.counter(), ec)) {
    return {LogStatus::RollbackDetected, state.log.size(), "counter file is missing"};
  }
  return verify_chain(state.log.entries(), read_counter(p.counter()), read_intent(p.intent()));
}

GeneratedKey Token::generate_keypair(KeyAlgorithm alg, std::string label, std::string_view pin) {
  return impl_->generate(alg, std::move(label), pin, impl_->options.quote_type);
}

GeneratedKey Token::generate_keypair(KeyAlgorithm alg, std::string label, std::string_view pin,
                                     attest::QuoteType quote_type) {
  return impl_->generate(alg, std::move(label), pin, quote_type);
}

Bytes Token::sign(KeyHandle handle, ByteView message, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("sign").u64(handle).digest(message).hash();
  auto& k = m.object("sign", params, handle);
  if (!crypto::can_sign(k.algorithm)) {
    m.fail("sign", params, ErrorCode::WrongKeyType, "ECDH keys cannot sign");
  }
  auto sig = k.key().sign(message);
  m.commit("sign", params, nullptr);
  return sig;
}

void Token::export_private(KeyHandle handle, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("export_private").u64(handle).hash();
  m.fail("export_private", params, ErrorCode::NonExtractable,
         "private keys cannot be exported");
}

void Token::attach_certificate(KeyHandle handle, const cert::BlindCert& c, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("attach_certificate").u64(handle).blob(c.fingerprint()).hash();
  auto& k = m.object("attach_certificate", params, handle);
  if (c.subject_public_key != k.public_part) {
    m.fail("attach_certificate", params, ErrorCode::WrongKeyType,
           "certificate does not certify this key");
  }
  m.commit("attach_certificate", params, [&] { k.certificate = c; });
}

void Token::destroy_object(KeyHandle handle, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("destroy_object").u64(handle).hash();
  m.object("destroy_object", params, handle);
  m.commit("destroy_object", params, [&] { m.state.objects.erase(handle); });
}

attest::Quote Token::quote_public_key(KeyHandle handle, attest::QuoteType type,
                                      std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("quote_public_key").u64(handle).u64(static_cast<std::uint8_t>(type)).hash();
  auto& k = m.object("quote_public_key", params, handle);
  auto q = m.quote_for(k.public_part, type);
  m.commit("quote_public_key", params, nullptr);
  return q;
}

EphemeralKey Token::ecdh_keygen(std::string_view pin, attest::QuoteType quote_type) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("ecdh_keygen").u64(static_cast<std::uint8_t>(quote_type)).hash();
  auto key = crypto::PrivateKey::generate(KeyAlgorithm::EcdhP256);
  EphemeralKey out;
  out.handle = m.next_volatile;
  out.public_part = key.public_der();
  out.quote = m.quote_for(out.public_part, quote_type);
  m.commit("ecdh_keygen", params, [&] {
    m.volatiles[out.handle] = VolatileKey{VolatileKey::Kind::Ephemeral, key, {}};
    ++m.next_volatile;
  });
  return out;
}

KeyHandle Token::derive_shared_key(KeyHandle ephemeral, ByteView peer_public,
                                   const Hash32& transcript, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("derive_shared_key").u64(ephemeral).blob(peer_public).blob(transcript).hash();
  auto& eph = m.volatile_key("derive_shared_key", params, ephemeral, VolatileKey::Kind::Ephemeral);
  crypto::SecureBytes secret;
  try {
    secret = eph.ephemeral->ecdh(peer_public);
  } catch (const Error& e) {
    m.fail("derive_shared_key", params, e.code(), e.detail());
  }
  auto k = crypto::hkdf_sha256(crypto::view(secret), transcript, "blindvault/channel-key",
                               crypto::kAeadKeySize);
  KeyHandle h = m.next_volatile;
  m.commit("derive_shared_key", params, [&] {
    m.volatiles.erase(ephemeral);
    m.volatiles[h] = VolatileKey{VolatileKey::Kind::Channel, std::nullopt, std::move(k)};
    ++m.next_volatile;
  });
  return h;
}

Hash32 Token::channel_mac(KeyHandle channel, std::string_view label, ByteView data,
                          std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("channel_mac").u64(channel).str(label).digest(data).hash();
  auto& ch = m.volatile_key("channel_mac", params, channel, VolatileKey::Kind::Channel);
  auto sub = crypto::hkdf_sha256(crypto::view(ch.channel_key), {},
                                 "blindvault/mac/" + std::string(label), 32);
  auto mac = crypto::hmac_sha256(crypto::view(sub), data);
  m.commit("channel_mac", params, nullptr);
  return mac;
}

WrappedKeys Token::encrypt(KeyHandle channel, ByteView aad, ByteView plaintext,
                           std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("encrypt").u64(channel).digest(aad).digest(plaintext).hash();
  auto& ch = m.volatile_key("encrypt", params, channel, VolatileKey::Kind::Channel);
  WrappedKeys out;
  out.nonce = crypto::random_fixed<crypto::kAeadNonceSize>();
  out.ciphertext = crypto::aead_seal(crypto::view(ch.channel_key), out.nonce, aad, plaintext);
  m.commit("encrypt", params, nullptr);
  return out;
}

Bytes Token::decrypt(KeyHandle channel, ByteView aad, const WrappedKeys& ct, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("decrypt").u64(channel).digest(aad).digest(ct.ciphertext).hash();
  auto& ch = m.volatile_key("decrypt", params, channel, VolatileKey::Kind::Channel);
  auto plain = crypto::aead_open(crypto::view(ch.channel_key), ct.nonce, aad, ct.ciphertext);
  if (!plain) m.fail("decrypt", params, ErrorCode::DecryptFailure, "channel decryption failed");
  m.commit("decrypt", params, nullptr);
  return Bytes(plain->begin(), plain->end());
}

WrappedKeys Token::wrap_keys(KeyHandle channel, const std::vector<KeyHandle>& handles, ByteView aad,
                             std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  Params p("wrap_keys");
  p.u64(channel).digest(aad).u64(handles.size());
  for (auto h : handles) p.u64(h);
  auto params = p.hash();
  auto& ch = m.volatile_key("wrap_keys", params, channel, VolatileKey::Kind::Channel);

  ByteWriter w;
  w.raw(as_bytes(kWrapMagic)).u32(static_cast<std::uint32_t>(handles.size()));
  for (auto h : handles) detail::write_key(w, m.object("wrap_keys", params, h));
  Bytes plain = std::move(w).bytes();

  WrappedKeys out;
  out.nonce = crypto::random_fixed<crypto::kAeadNonceSize>();
  out.ciphertext = crypto::aead_seal(crypto::view(ch.channel_key), out.nonce, aad, plain);
  crypto::cleanse(plain.data(), plain.size());
  m.commit("wrap_keys", params, nullptr);
  return out;
}

std::vector<KeyHandle> Token::unwrap_keys(KeyHandle channel, const WrappedKeys& wrapped,
                                          ByteView aad, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("unwrap_keys").u64(channel).digest(aad).digest(wrapped.ciphertext).hash();
  auto& ch = m.volatile_key("unwrap_keys", params, channel, VolatileKey::Kind::Channel);
  auto plain = crypto::aead_open(crypto::view(ch.channel_key), wrapped.nonce, aad,
                                 wrapped.ciphertext);
  if (!plain) m.fail("unwrap_keys", params, ErrorCode::DecryptFailure, "wrapped keys rejected");

  std::vector<StoredKey> imported;
  try {
    ByteReader r(crypto::view(*plain));
    if (r.raw(kWrapMagic.size()) != to_bytes(kWrapMagic)) {
      throw Error(ErrorCode::Malformed, "bad key bundle");
    }
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      auto k = detail::read_key(r);
      // Refuse bundles whose private and public parts disagree.
      if (crypto::PrivateKey::from_pkcs8(crypto::view(k.private_part), k.algorithm).public_der() !=
          k.public_part) {
        throw Error(ErrorCode::Malformed, "key bundle entry is inconsistent");
      }
      imported.push_back(std::move(k));
    }
    r.expect_end();
  } catch (const Error& e) {
    m.fail("unwrap_keys", params, ErrorCode::DecryptFailure, e.detail());
  }

  std::vector<KeyHandle> handles;
  m.commit("unwrap_keys", params, [&] {
    for (auto& k : imported) {
      k.handle = m.state.next_handle++;
      k.extractable = false;
      handles.push_back(k.handle);
      m.state.objects.emplace(k.handle, std::move(k));
    }
  });
  return handles;
}

void Token::destroy_channel(KeyHandle channel, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("destroy_channel").u64(channel).hash();
  if (!m.volatiles.count(channel)) {
    m.fail("destroy_channel", params, ErrorCode::UnknownHandle, "no such channel");
  }
  m.commit("destroy_channel", params, [&] { m.volatiles.erase(channel); });
}

void Token::record_provenance(const PlatformId& source_platform, const Hash32& source_log_head,
                              std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  auto params = Params("record_provenance").blob(source_platform).blob(source_log_head).hash();
  m.commit("record_provenance", params, nullptr);
}

void Token::record_event(std::string_view event, ByteView details, std::string_view pin) {
  auto& m = *impl_;
  std::lock_guard g(m.mu);
  m.authenticate(pin);
  m.commit(event, crypto::sha256(details), nullptr);
}

std::optional<KeyInfo> Token::info(KeyHandle handle) const {
  std::lock_guard g(impl_->mu);
  auto it = impl_->state.objects.find(handle);
  if (it == impl_->state.objects.end()) return std::nullopt;
  return info_of(it->second);
}

std::optional<KeyHandle> Token::find_by_label(std::string_view label) const {
  std::lock_guard g(impl_->mu);
  for (const auto& [h, k] : impl_->state.objects) {
    if (k.label == label) return h;
  }
  return std::nullopt;
}

std::vector<KeyInfo> Token::objects() const {
  std::lock_guard g(impl_->mu);
  std::vector<KeyInfo> out;
  for (const auto& [h, k] : impl_->state.objects) out.push_back(info_of(k));
  return out;
}

std::size_t Token::object_count() const {
  std::lock_guard g(impl_->mu);
  return impl_->state.objects.size();
}

std::size_t Token::volatile_count() const {
  std::lock_guard g(impl_->mu);
  return impl_->volatiles.size();
}

const AuditLog& Token::log() const { return impl_->state.log; }

CounterRecord Token::counter() const {
  std::lock_guard g(impl_->mu);
  return impl_->counter;
}

LogCheck Token::verify_log() const {
  std::lock_guard g(impl_->mu);
  auto& m = *impl_;
  // Check against what is on disk, not only the in-memory copy.
  try {
    auto blob = tee::SealedBlob::read_file(m.paths.sealed());
    auto plain = m.enclave().unseal(blob);
    auto persisted = TokenState::parse(crypto::view(plain));
    std::error_code ec;
    if (!fs::exists(m.paths.counter(), ec)) {
      return {LogStatus::RollbackDetected, persisted.log.size(), "counter file is missing"};
    }
    return verify_chain(persisted.log.entries(), read_counter(m.paths.counter()),
                        read_intent(m.paths.intent()));
  } catch (const Error& e) {
    return {LogStatus::ChainCorrupted, 0, e.what()};
  }
}

const tee::Enclave& Token::enclave() const { return impl_->enclave(); }
const attest::Attester& Token::attester() const { return impl_->attester; }
const TokenPaths& Token::paths() const { return impl_->paths; }

}  // namespace blindvault::keyvault
