#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "blindvault/attestation.hpp"
#include "blindvault/keyvault.hpp"
#include "blindvault/protocols.hpp"
#include "blindvault/soft_tee.hpp"

namespace bvtest {

namespace fs = std::filesystem;
using namespace blindvault;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> seq{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("bvtest-" + std::to_string(::getpid()) + "-" + std::to_string(seq++) + "-" +
             std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

/// One simulated machine: platform, loaded enclave, quoting engine.
struct Machine {
  Machine(const attest::Manufacturer& m, tee::Measurement meas)
      : enclave(m.make_platform(), meas) {
    attester = std::make_unique<attest::Attester>(enclave, m.issue_pck_cert(enclave.platform()));
  }
  Machine(const Machine&) = delete;

  tee::Enclave enclave;
  std::unique_ptr<attest::Attester> attester;
};

inline keyvault::TokenOptions fast_options() {
  keyvault::TokenOptions o;
  o.pin_iterations = 1000;
  o.pin_failure_delay = std::chrono::milliseconds(1);
  return o;
}

/// Manufacturer, verification service, and helpers shared by most tests.
struct World {
  World()
      : manufacturer(attest::Manufacturer::create()),
        service({manufacturer.epid_group()},
                crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256)),
        service_client(service) {}

  std::unique_ptr<Machine> machine(tee::Measurement meas = tee::measure_enclave(
                                       tee::default_enclave_image())) const {
    return std::make_unique<Machine>(manufacturer, meas);
  }

  attest::TrustAnchors anchors() {
    attest::TrustAnchors a;
    a.manufacturer_roots = {manufacturer.root_cert()};
    a.service_public_key = service.public_key();
    a.service = &service_client;
    return a;
  }

  attest::QuotePolicy policy() const {
    attest::QuotePolicy p;
    p.expected_mrenclave = {tee::measure_enclave(tee::default_enclave_image()).mrenclave};
    return p;
  }

  attest::Manufacturer manufacturer;
  attest::VerificationService service;
  attest::LocalServiceClient service_client;
};

inline constexpr const char* kPin = "1234";

/// A machine with an open vault.
struct Node {
  Node(const World& w, tee::Measurement meas = tee::measure_enclave(tee::default_enclave_image()))
      : machine(w.machine(meas)),
        token(keyvault::Token::init(dir.path(), kPin, *machine->attester, fast_options())) {}

  protocols::VaultRef vault() { return {token, kPin}; }
  const PlatformId& platform_id() const { return machine->enclave.platform_id(); }

  TempDir dir;
  std::unique_ptr<Machine> machine;
  keyvault::Token token;
};

/// An organization: admin vault holding msk and the signed PCK cache.
struct Org {
  explicit Org(World& w) : world(w), admin(w) {
    msk = admin.token.generate_keypair(crypto::KeyAlgorithm::EcdsaP256, "org-msk", kPin).handle;
    mpk = admin.token.info(msk)->public_part;
  }

  void sanction(const Node& n) {
    auto draft = attest::pck_entry_draft(*n.machine->attester->pck_cert());
    cache.put(attest::sign_pck_cache({draft}, admin.token, msk, kPin).front());
  }
  void publish_unsigned(const Node& n) {
    cache.put(attest::pck_entry_draft(*n.machine->attester->pck_cert()));
  }
  void publish_foreign(const Node& n) {
    auto foreign = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256);
    auto e = attest::pck_entry_draft(*n.machine->attester->pck_cert());
    e.org_signature = foreign.sign(e.signed_payload());
    cache.put(e);
  }

  protocols::OrgTrust trust() {
    protocols::OrgTrust t;
    t.mpk = mpk;
    t.pck_cache = &client;
    t.anchors = world.anchors();
    t.policy = world.policy();
    return t;
  }

  World& world;
  Node admin;
  keyvault::KeyHandle msk = 0;
  Bytes mpk;
  attest::PckCache cache;
  attest::LocalPckCacheClient client{cache};
};

}  // namespace bvtest
