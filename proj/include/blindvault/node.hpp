#pragma once

// Node daemon: configuration, the per-role message table, the operator
// control surface shared by the daemon and the CLI, and the TCP server.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "blindvault/attestation.hpp"
#include "blindvault/keyvault.hpp"
#include "blindvault/protocols.hpp"
#include "blindvault/wire.hpp"

namespace blindvault::node {

namespace fs = std::filesystem;

enum class Role : std::uint8_t { Ca, Website, Cdn, PckCache, Ias };

std::string_view to_string(Role r);
/// "ca", "website", "cdn", "pck-cache", "ias". Throws BadConfig.
Role role_from_string(std::string_view s);
bool role_has_vault(Role r);

/// Message types a role answers. Every other type, responses included,
/// is refused with UnsupportedForRole.
const std::set<wire::MsgType>& accepted_types(Role r);

struct NodeConfig {
  Role role = Role::Website;
  std::string listen = "127.0.0.1:0";

  fs::path data_dir;          // vault files, session log, cache file
  fs::path platform_secret;   // fused-secret stand-in
  fs::path pck_cert;          // platform PCK certificate, armored
  fs::path manufacturer_root; // armored root certificate
  fs::path enclave_image;     // empty = built-in image
  std::uint16_t svn = 1;
  std::uint16_t tcb = 1;

  std::string ias_endpoint;
  fs::path ias_public_key;  // hex DER
  cert::UnixSeconds ias_cache_ttl = cert::kDay;
  std::string pck_cache_endpoint;
  fs::path org_mpk;  // hex DER

  /// Accepted peer measurements; empty = this node's own mrenclave.
  std::vector<Hash32> expected_mrenclave;
  std::uint16_t min_svn = 0;
  std::uint16_t min_tcb = 0;

  fs::path pin_file;
  std::uint32_t pin_iterations = 100'000;
  tee::SealPolicy seal_policy = tee::SealPolicy::MrEnclave;
  attest::QuoteType quote_type = attest::QuoteType::Epid;

  std::string subject;  // certificate subject of ca / cdn / website
  bool verify_csr_quote = true;

  fs::path service_key;  // ias: PKCS#8 signing key
  fs::path epid_group;   // ias: group secret file
  fs::path cache_file;   // pck-cache: empty = data_dir/pck-cache.bin

  std::map<std::string, std::string> peers;  // peer.<name> = host:port

  /// Flat key=value text; '#' starts a comment. Relative paths resolve
  /// against `base_dir`. Throws BadConfig on unknown keys or bad values.
  static NodeConfig parse(std::string_view text, const fs::path& base_dir = {});
  static NodeConfig load(const fs::path& file);

  std::string peer(const std::string& name_or_endpoint) const;
  fs::path session_log() const { return data_dir / "sessions.log"; }
};

/// First line of a PIN file, trailing whitespace removed.
std::string read_pin_file(const fs::path& path);

/// Hex-encoded DER public key file, as written by the fixture commands.
Bytes read_public_key_file(const fs::path& path);
void write_public_key_file(const fs::path& path, ByteView public_der);

/// EPID group secret file: u32 id || 32-byte secret.
attest::EpidGroup read_epid_group(const fs::path& path);

/// Label of the key behind a node's own certificate.
inline constexpr std::string_view kNodeKeyLabel = "node-cert";

/// One platform with its vault opened: the state every vault role and the
/// CLI's direct mode work from.
class NodeContext {
 public:
  /// Loads platform, measurement, trust anchors, and opens the vault.
  NodeContext(NodeConfig config, std::string pin, keyvault::TokenOptions extra = {});
  ~NodeContext();
  NodeContext(const NodeContext&) = delete;
  NodeContext& operator=(const NodeContext&) = delete;

  /// Creates the vault of `config`. CA and CDN nodes also get their quoted
  /// self-signed certificate.
  static void init_vault(const NodeConfig& config, std::string_view pin, bool overwrite = false);

  /// Options derived from the config (PIN iterations, seal policy, quote type).
  static keyvault::TokenOptions token_options(const NodeConfig& config);
  static tee::Measurement measurement(const NodeConfig& config);

  /// Runs one control command. Request and reply are JSON objects; the
  /// request's "pin" is used for every vault call. Throws Error.
  std::string execute(std::string_view request_json);

  /// Answers one inbound session that started with `first`.
  void handle(wire::MessageChannel& channel, wire::Frame first);

  /// The certificate CERT_FETCH returns. Throws NotFound.
  cert::BlindCert current_cert() const;
  /// CA/CDN: re-quote and re-sign the node certificate when the embedded
  /// quote no longer matches this build's measurement. True if refreshed.
  bool refresh_certificate();

  const NodeConfig& config() const { return config_; }
  keyvault::Token& token() { return *token_; }
  const tee::Enclave& enclave() const { return *enclave_; }
  attest::TrustAnchors anchors() const;
  attest::QuotePolicy peer_policy() const;
  protocols::OrgTrust org_trust() const;

 private:
  protocols::VaultRef own_vault() { return {*token_, pin_}; }

  NodeConfig config_;
  std::string pin_;
  std::unique_ptr<tee::Enclave> enclave_;
  std::unique_ptr<attest::Attester> attester_;
  std::unique_ptr<keyvault::Token> token_;
  std::vector<cert::BlindCert> roots_;
  Bytes service_public_key_;
  std::unique_ptr<attest::VerificationServiceClient> ias_remote_;
  std::unique_ptr<attest::CachingServiceClient> ias_cached_;
  std::unique_ptr<protocols::RemotePckCacheClient> pck_client_;
};

/// Listening node. Construction performs all startup checks; failures
/// (BadConfig, VaultLocked, ...) are thrown from the constructor.
class Server {
 public:
  explicit Server(NodeConfig config, keyvault::TokenOptions extra = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const { return port_; }
  std::string endpoint() const;
  /// Accepts connections until stop().
  void run();
  void stop();
  NodeContext* context() { return ctx_.get(); }

 private:
  struct Conn {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void serve_connection(int fd);
  void dispatch(wire::SocketChannel& ch, wire::Frame f);
  void log_session(const wire::Frame& f, std::string_view outcome);
  void reap(bool all);

  NodeConfig config_;
  std::unique_ptr<NodeContext> ctx_;
  std::unique_ptr<attest::VerificationService> ias_;
  std::unique_ptr<attest::PckCache> pck_cache_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex conn_mu_;
  std::vector<Conn> conns_;
  std::set<int> open_fds_;
  std::mutex log_mu_;
};

}  // namespace blindvault::node
