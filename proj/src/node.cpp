#include "blindvault/node.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "blindvault/certkit.hpp"
#include "blindvault/fileio.hpp"

namespace blindvault::node {

using json = nlohmann::json;
using wire::MsgType;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Ca: return "ca";
    case Role::Website: return "website";
    case Role::Cdn: return "cdn";
    case Role::PckCache: return "pck-cache";
    case Role::Ias: return "ias";
  }
  return "unknown";
}

Role role_from_string(std::string_view s) {
  for (auto r : {Role::Ca, Role::Website, Role::Cdn, Role::PckCache, Role::Ias}) {
    if (s == to_string(r)) return r;
  }
  throw Error(ErrorCode::BadConfig, "unknown role '" + std::string(s) + "'");
}

bool role_has_vault(Role r) { return r == Role::Ca || r == Role::Website || r == Role::Cdn; }

const std::set<MsgType>& accepted_types(Role r) {
  static const std::set<MsgType> ca{MsgType::CertFetch, MsgType::IssueRequest,
                                    MsgType::ProvisionHello, MsgType::CtlRequest};
  static const std::set<MsgType> website{MsgType::CertFetch, MsgType::ProvisionHello,
                                         MsgType::CtlRequest};
  static const std::set<MsgType> cdn{MsgType::CertFetch, MsgType::TransferHello,
                                     MsgType::ProvisionHello, MsgType::CtlRequest};
  static const std::set<MsgType> pck{MsgType::PckFetch, MsgType::PckPublish};
  static const std::set<MsgType> ias{MsgType::IasVerify};
  switch (r) {
    case Role::Ca: return ca;
    case Role::Website: return website;
    case Role::Cdn: return cdn;
    case Role::PckCache: return pck;
    case Role::Ias: return ias;
  }
  return ias;
}

// ---- config ------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::BadConfig, key + ": '" + v + "' is not a valid number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw Error(ErrorCode::BadConfig, key + ": expected true or false");
}

}  // namespace

NodeConfig NodeConfig::parse(std::string_view text, const fs::path& base_dir) {
  NodeConfig c;
  bool have_role = false;
  auto path = [&](const std::string& v) {
    fs::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    auto hash = raw.find('#');
    auto line = trim(raw.substr(0, hash));
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(line_no) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    auto v = trim(line.substr(eq + 1));
    try {
      if (key == "role") {
        c.role = role_from_string(v);
        have_role = true;
      } else if (key == "listen") {
        wire::parse_endpoint(v);
        c.listen = v;
      } else if (key == "data_dir") {
        c.data_dir = path(v);
      } else if (key == "platform_secret") {
        c.platform_secret = path(v);
      } else if (key == "pck_cert") {
        c.pck_cert = path(v);
      } else if (key == "manufacturer_root") {
        c.manufacturer_root = path(v);
      } else if (key == "enclave_image") {
        c.enclave_image = path(v);
      } else if (key == "svn") {
        c.svn = parse_number<std::uint16_t>(key, v);
      } else if (key == "tcb") {
        c.tcb = parse_number<std::uint16_t>(key, v);
      } else if (key == "ias_endpoint") {
        wire::parse_endpoint(v);
        c.ias_endpoint = v;
      } else if (key == "ias_public_key") {
        c.ias_public_key = path(v);
      } else if (key == "ias_cache_ttl") {
        c.ias_cache_ttl = parse_number<cert::UnixSeconds>(key, v);
      } else if (key == "pck_cache_endpoint") {
        wire::parse_endpoint(v);
        c.pck_cache_endpoint = v;
      } else if (key == "org_mpk") {
        c.org_mpk = path(v);
      } else if (key == "expected_mrenclave") {
        std::size_t p = 0;
        while (p < v.size()) {
          auto comma = v.find(',', p);
          auto item = trim(std::string_view(v).substr(p, comma == std::string::npos ? std::string::npos
                                                                                   : comma - p));
          if (!item.empty()) c.expected_mrenclave.push_back(fixed_from_hex<32>(item));
          if (comma == std::string::npos) break;
          p = comma + 1;
        }
      } else if (key == "min_svn") {
        c.min_svn = parse_number<std::uint16_t>(key, v);
      } else if (key == "min_tcb") {
        c.min_tcb = parse_number<std::uint16_t>(key, v);
      } else if (key == "pin_file") {
        c.pin_file = path(v);
      } else if (key == "pin_iterations") {
        c.pin_iterations = parse_number<std::uint32_t>(key, v);
        if (c.pin_iterations == 0) throw Error(ErrorCode::BadConfig, "pin_iterations must be > 0");
      } else if (key == "seal_policy") {
        if (v == "mrenclave") {
          c.seal_policy = tee::SealPolicy::MrEnclave;
        } else if (v == "mrsigner") {
          c.seal_policy = tee::SealPolicy::MrSigner;
        } else {
          throw Error(ErrorCode::BadConfig, "seal_policy must be mrenclave or mrsigner");
        }
      } else if (key == "quote_type") {
        c.quote_type = attest::quote_type_from_string(v);
      } else if (key == "subject") {
        c.subject = v;
      } else if (key == "verify_csr_quote") {
        c.verify_csr_quote = parse_bool(key, v);
      } else if (key == "service_key") {
        c.service_key = path(v);
      } else if (key == "epid_group") {
        c.epid_group = path(v);
      } else if (key == "cache_file") {
        c.cache_file = path(v);
      } else if (key.rfind("peer.", 0) == 0 && key.size() > 5) {
        wire::parse_endpoint(v);
        c.peers[key.substr(5)] = v;
      } else {
        throw Error(ErrorCode::BadConfig, "unknown key '" + key + "'");
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BadConfig && e.detail().rfind("line ", 0) == 0) throw;
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(line_no) + " (" + key + "): " + e.detail());
    }
  }
  if (!have_role) throw Error(ErrorCode::BadConfig, "missing required key 'role'");
  if (c.subject.empty()) c.subject = "blindvault " + std::string(to_string(c.role));
  return c;
}

NodeConfig NodeConfig::load(const fs::path& file) {
  std::string text;
  try {
    text = read_text_file(file);
  } catch (const Error& e) {
    throw Error(ErrorCode::BadConfig, "cannot read config " + file.string() + ": " + e.detail());
  }
  return parse(text, fs::absolute(file).parent_path());
}

std::string NodeConfig::peer(const std::string& name_or_endpoint) const {
  auto it = peers.find(name_or_endpoint);
  if (it != peers.end()) return it->second;
  if (name_or_endpoint.find(':') == std::string::npos) {
    throw Error(ErrorCode::BadConfig, "no peer named '" + name_or_endpoint + "'");
  }
  return name_or_endpoint;
}

std::string read_pin_file(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::BadConfig, "cannot read PIN file: " + e.detail());
  }
  auto nl = text.find('\n');
  auto pin = trim(text.substr(0, nl));
  if (pin.empty()) throw Error(ErrorCode::BadConfig, "PIN file " + path.string() + " is empty");
  return pin;
}

Bytes read_public_key_file(const fs::path& path) {
  return from_hex(trim(read_text_file(path)));
}

void write_public_key_file(const fs::path& path, ByteView public_der) {
  auto text = to_hex(public_der) + "\n";
  write_file_atomic(path, as_bytes(text), true, 0644);
}

attest::EpidGroup read_epid_group(const fs::path& path) {
  auto data = read_file(path);
  ByteReader r(data);
  auto id = r.u32();
  auto secret = r.fixed<32>();
  r.expect_end();
  crypto::cleanse(data.data(), data.size());
  return {id, secret};
}

// ---- node context --------------------------------------------------------------

namespace {

template <typename F>
auto startup(std::string_view what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Io || e.code() == ErrorCode::Malformed) {
      throw Error(ErrorCode::BadConfig, std::string(what) + ": " + e.detail());
    }
    throw;
  }
}

void require(bool ok, std::string_view key, Role role) {
  if (!ok) {
    throw Error(ErrorCode::BadConfig, "role " + std::string(to_string(role)) + " requires '" +
                                          std::string(key) + "'");
  }
}

std::string hex(ByteView b) { return to_hex(b); }

keyvault::KeyHandle resolve_key(const keyvault::Token& t, const json& req) {
  if (req.contains("handle")) {
    auto h = req.at("handle").get<keyvault::KeyHandle>();
    if (!t.info(h)) throw Error(ErrorCode::UnknownHandle, "no object " + std::to_string(h));
    return h;
  }
  if (req.contains("label")) {
    auto label = req.at("label").get<std::string>();
    auto h = t.find_by_label(label);
    if (!h) throw Error(ErrorCode::UnknownHandle, "no object labelled '" + label + "'");
    return *h;
  }
  throw Error(ErrorCode::Usage, "request needs 'handle' or 'label'");
}

json key_json(const keyvault::KeyInfo& k) {
  json j{{"handle", k.handle},
         {"algorithm", std::string(crypto::to_string(k.algorithm))},
         {"label", k.label},
         {"public_key", hex(k.public_part)},
         {"extractable", k.extractable}};
  if (k.certificate) {
    j["certificate"] = k.certificate->armor();
    j["subject"] = k.certificate->subject;
  }
  return j;
}

template <typename T>
T opt(const json& req, const char* key, T fallback) {
  return req.contains(key) ? req.at(key).get<T>() : fallback;
}

std::unique_ptr<wire::SocketChannel> connect_to(const std::string& endpoint) {
  auto [host, port] = wire::parse_endpoint(endpoint);
  return wire::SocketChannel::connect(host, port);
}

}  // namespace

tee::Measurement NodeContext::measurement(const NodeConfig& c) {
  if (c.enclave_image.empty()) {
    return tee::measure_enclave(tee::default_enclave_image(), tee::default_signer_identity(), c.svn,
                                c.tcb);
  }
  auto image = startup("enclave_image", [&] { return read_file(c.enclave_image); });
  return tee::measure_enclave(image, tee::default_signer_identity(), c.svn, c.tcb);
}

keyvault::TokenOptions NodeContext::token_options(const NodeConfig& c) {
  keyvault::TokenOptions o;
  o.pin_iterations = c.pin_iterations;
  o.seal_policy = c.seal_policy;
  o.quote_type = c.quote_type;
  return o;
}

NodeContext::NodeContext(NodeConfig config, std::string pin, keyvault::TokenOptions extra)
    : config_(std::move(config)), pin_(std::move(pin)) {
  const auto role = config_.role;
  require(role_has_vault(role), "a vault role", role);
  require(!config_.data_dir.empty(), "data_dir", role);
  require(!config_.platform_secret.empty(), "platform_secret", role);
  require(!config_.manufacturer_root.empty(), "manufacturer_root", role);

  auto platform =
      startup("platform_secret", [&] { return tee::PlatformSecret::load(config_.platform_secret); });
  enclave_ = std::make_unique<tee::Enclave>(std::move(platform), measurement(config_));
  std::optional<cert::BlindCert> pck;
  if (!config_.pck_cert.empty()) {
    pck = startup("pck_cert",
                  [&] { return cert::BlindCert::from_armor(read_text_file(config_.pck_cert)); });
  }
  attester_ = std::make_unique<attest::Attester>(*enclave_, std::move(pck));
  roots_.push_back(startup("manufacturer_root", [&] {
    return cert::BlindCert::from_armor(read_text_file(config_.manufacturer_root));
  }));
  if (!config_.ias_public_key.empty()) {
    service_public_key_ =
        startup("ias_public_key", [&] { return read_public_key_file(config_.ias_public_key); });
  }
  if (!config_.ias_endpoint.empty()) {
    ias_remote_ = std::make_unique<protocols::RemoteServiceClient>(config_.ias_endpoint);
    ias_cached_ = std::make_unique<attest::CachingServiceClient>(*ias_remote_, config_.ias_cache_ttl);
  }
  if (!config_.pck_cache_endpoint.empty()) {
    pck_client_ = std::make_unique<protocols::RemotePckCacheClient>(config_.pck_cache_endpoint);
  }

  auto options = token_options(config_);
  options.recover_incomplete = extra.recover_incomplete;
  options.fault_hook = extra.fault_hook;
  if (extra.pin_failure_delay != keyvault::TokenOptions{}.pin_failure_delay) {
    options.pin_failure_delay = extra.pin_failure_delay;
  }
  token_ = std::make_unique<keyvault::Token>(
      keyvault::Token::open(config_.data_dir, pin_, *attester_, options));
}

NodeContext::~NodeContext() = default;

void NodeContext::init_vault(const NodeConfig& config, std::string_view pin, bool overwrite) {
  require(role_has_vault(config.role), "a vault role", config.role);
  require(!config.data_dir.empty(), "data_dir", config.role);
  require(!config.platform_secret.empty(), "platform_secret", config.role);
  {
    auto platform =
        startup("platform_secret", [&] { return tee::PlatformSecret::load(config.platform_secret); });
    tee::Enclave enclave(std::move(platform), measurement(config));
    std::optional<cert::BlindCert> pck;
    if (!config.pck_cert.empty()) {
      pck = startup("pck_cert",
                    [&] { return cert::BlindCert::from_armor(read_text_file(config.pck_cert)); });
    }
    attest::Attester attester(enclave, std::move(pck));
    auto options = token_options(config);
    options.overwrite = overwrite;
    fs::create_directories(config.data_dir);
    keyvault::Token::init(config.data_dir, pin, attester, options);
  }
  if (config.role == Role::Ca || config.role == Role::Cdn) {
    NodeContext ctx(config, std::string(pin));
    ctx.refresh_certificate();
  }
}

attest::TrustAnchors NodeContext::anchors() const {
  attest::TrustAnchors a;
  a.manufacturer_roots = roots_;
  a.service_public_key = service_public_key_;
  a.service = ias_cached_.get();
  return a;
}

attest::QuotePolicy NodeContext::peer_policy() const {
  attest::QuotePolicy p;
  p.expected_mrenclave = config_.expected_mrenclave;
  if (p.expected_mrenclave.empty()) p.expected_mrenclave = {enclave_->measurement().mrenclave};
  p.min_svn = config_.min_svn;
  p.min_tcb = config_.min_tcb;
  return p;
}

protocols::OrgTrust NodeContext::org_trust() const {
  if (config_.org_mpk.empty() || !pck_client_) {
    throw Error(ErrorCode::BadConfig, "provisioning needs org_mpk and pck_cache_endpoint");
  }
  protocols::OrgTrust t;
  t.mpk = startup("org_mpk", [&] { return read_public_key_file(config_.org_mpk); });
  t.pck_cache = pck_client_.get();
  t.anchors = anchors();
  t.policy = peer_policy();
  return t;
}

cert::BlindCert NodeContext::current_cert() const {
  if (config_.role == Role::Ca || config_.role == Role::Cdn) {
    auto h = token_->find_by_label(kNodeKeyLabel);
    auto info = h ? token_->info(*h) : std::nullopt;
    if (!info || !info->certificate) throw Error(ErrorCode::NotFound, "node certificate missing");
    return *info->certificate;
  }
  // Website: newest certificate for its subject.
  std::optional<cert::BlindCert> best;
  for (const auto& k : token_->objects()) {
    if (k.certificate && k.certificate->subject == config_.subject) best = k.certificate;
  }
  if (!best) throw Error(ErrorCode::NotFound, "no certificate issued for '" + config_.subject + "'");
  return *best;
}

bool NodeContext::refresh_certificate() {
  if (config_.role != Role::Ca && config_.role != Role::Cdn) return false;
  auto& t = *token_;
  auto h = t.find_by_label(kNodeKeyLabel);
  attest::Quote q;
  if (!h) {
    auto gen = t.generate_keypair(crypto::KeyAlgorithm::EcdsaP256, std::string(kNodeKeyLabel), pin_,
                                  config_.quote_type);
    h = gen.handle;
    q = std::move(gen.quote);
  } else {
    auto info = t.info(*h);
    if (info->certificate) {
      try {
        auto current = certkit::embedded_quote(*info->certificate);
        if (current.type == config_.quote_type &&
            current.report.measurement == enclave_->measurement()) {
          return false;
        }
      } catch (const Error&) {
      }
    }
    // SVN/TCB or build changed since the quote was taken: take a new one.
    q = t.quote_public_key(*h, config_.quote_type, pin_);
  }
  auto c = certkit::self_sign(config_.subject, t, *h, pin_, q);
  t.attach_certificate(*h, c, pin_);
  return true;
}

std::string NodeContext::execute(std::string_view request_json) {
  json req;
  try {
    req = json::parse(request_json);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Malformed, std::string("control request is not JSON: ") + e.what());
  }
  if (!req.is_object() || !req.contains("cmd")) {
    throw Error(ErrorCode::Usage, "control request needs 'cmd'");
  }
  try {
    const auto cmd = req.at("cmd").get<std::string>();
    const auto pin = opt<std::string>(req, "pin", "");
    auto& t = *token_;
    protocols::VaultRef vault{t, pin};
    json out{{"cmd", cmd}};

    if (cmd == "status") {
      const auto& m = enclave_->measurement();
      auto c = t.counter();
      out["role"] = std::string(to_string(config_.role));
      out["platform_id"] = hex(enclave_->platform_id());
      out["mrenclave"] = hex(m.mrenclave);
      out["mrsigner"] = hex(m.mrsigner);
      out["svn"] = m.svn;
      out["tcb"] = m.tcb_version;
      out["counter"] = c.counter;
      out["log_head"] = hex(c.head);
      out["objects"] = t.object_count();
    } else if (cmd == "objects") {
      out["objects"] = json::array();
      for (const auto& k : t.objects()) out["objects"].push_back(key_json(k));
    } else if (cmd == "keygen") {
      auto alg = crypto::key_algorithm_from_string(opt<std::string>(req, "alg", "ecdsa-p256"));
      auto type = req.contains("quote_type")
                      ? attest::quote_type_from_string(req.at("quote_type").get<std::string>())
                      : config_.quote_type;
      auto gen = t.generate_keypair(alg, opt<std::string>(req, "label", ""), pin, type);
      attest::QuotePolicy own;
      own.expected_mrenclave = {enclave_->measurement().mrenclave};
      auto v = attest::verify_quote(gen.quote, gen.public_part, type, anchors(), own);
      out["handle"] = gen.handle;
      out["algorithm"] = std::string(crypto::to_string(alg));
      out["public_key"] = hex(gen.public_part);
      out["quote"] = hex(gen.quote.serialize());
      out["quote_type"] = std::string(attest::to_string(type));
      out["quote_verdict"] = std::string(attest::to_string(v.status));
    } else if (cmd == "sign") {
      auto h = resolve_key(t, req);
      auto msg = from_hex(req.at("message").get<std::string>());
      out["handle"] = h;
      out["signature"] = hex(t.sign(h, msg, pin));
      out["public_key"] = hex(t.info(h)->public_part);
    } else if (cmd == "cert") {
      auto h = resolve_key(t, req);
      auto info = t.info(h);
      if (!info->certificate) throw Error(ErrorCode::NotFound, "object has no certificate");
      out["handle"] = h;
      out["certificate"] = info->certificate->armor();
    } else if (cmd == "node-cert") {
      out["certificate"] = current_cert().armor();
    } else if (cmd == "csr") {
      auto alg = crypto::key_algorithm_from_string(opt<std::string>(req, "alg", "ecdsa-p256"));
      auto gen = certkit::gen_csr(t, opt<std::string>(req, "subject", config_.subject), pin, alg,
                                  config_.quote_type);
      out["handle"] = gen.handle;
      out["csr"] = gen.csr.armor();
      out["quote"] = hex(gen.quote.serialize());
    } else if (cmd == "self-sign") {
      auto alg = crypto::key_algorithm_from_string(opt<std::string>(req, "alg", "ecdsa-p256"));
      auto res = certkit::self_sign(opt<std::string>(req, "subject", config_.subject), t, pin,
                                    opt<bool>(req, "embed_quote", true), alg, config_.quote_type);
      t.attach_certificate(res.handle, res.cert, pin);
      out["handle"] = res.handle;
      out["certificate"] = res.cert.armor();
    } else if (cmd == "issue") {
      protocols::WebsiteIssuanceConfig wc;
      wc.subject = opt<std::string>(req, "subject", config_.subject);
      wc.anchors = anchors();
      wc.ca_policy = peer_policy();
      wc.csr_quote_type = req.contains("csr_quote_type")
                              ? attest::quote_type_from_string(req.at("csr_quote_type").get<std::string>())
                              : config_.quote_type;
      wc.algorithm = crypto::key_algorithm_from_string(opt<std::string>(req, "alg", "ecdsa-p256"));
      auto ch = connect_to(config_.peer(opt<std::string>(req, "ca", "ca")));
      auto res = protocols::issuance_website(*ch, vault, wc);
      out["handle"] = res.handle;
      out["certificate"] = res.cert.armor();
      out["ca_certificate"] = res.ca_cert.armor();
    } else if (cmd == "transfer") {
      protocols::TransferInitiatorConfig tc;
      if (req.contains("handle") || req.contains("label")) {
        tc.key = resolve_key(t, req);
      } else {
        auto current = current_cert();
        for (const auto& k : t.objects()) {
          if (k.certificate && k.certificate->serialize() == current.serialize()) tc.key = k.handle;
        }
      }
      if (tc.key == 0) throw Error(ErrorCode::NotFound, "no key to transfer");
      auto info = t.info(tc.key);
      if (!info->certificate) throw Error(ErrorCode::NotFound, "key to transfer has no certificate");
      tc.cert = *info->certificate;
      tc.quote_type = config_.quote_type;
      tc.anchors = anchors();
      tc.peer_policy = peer_policy();
      auto ch = connect_to(config_.peer(opt<std::string>(req, "peer", "cdn")));
      protocols::transfer_initiator(*ch, vault, tc);
      out["handle"] = tc.key;
      out["subject"] = tc.cert.subject;
    } else if (cmd == "provision" || cmd == "backup") {
      auto purpose = cmd == "backup" ? protocols::ProvisionPurpose::Backup
                                     : protocols::ProvisionPurpose::Provision;
      std::vector<keyvault::KeyHandle> handles;
      if (req.contains("handles")) {
        handles = req.at("handles").get<std::vector<keyvault::KeyHandle>>();
      } else if (req.contains("labels")) {
        for (const auto& l : req.at("labels")) handles.push_back(resolve_key(t, json{{"label", l}}));
      } else {
        handles = protocols::all_keys(t);
      }
      auto trust = org_trust();
      auto ch = connect_to(config_.peer(req.at("peer").get<std::string>()));
      protocols::provision_sender(*ch, vault, handles, trust, purpose);
      out["sent"] = handles.size();
    } else if (cmd == "log-verify") {
      auto check = t.verify_log();
      out["status"] = std::string(keyvault::to_string(check.status));
      out["entries"] = check.entries;
      out["detail"] = check.detail;
      out["counter"] = t.counter().counter;
    } else if (cmd == "log-export") {
      out["log"] = t.log().export_lines();
    } else {
      throw Error(ErrorCode::Usage, "unknown control command '" + cmd + "'");
    }
    return out.dump();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Usage, std::string("bad control request: ") + e.what());
  }
}

void NodeContext::handle(wire::MessageChannel& channel, wire::Frame first) {
  protocols::Session s(channel, first.session);
  switch (first.type) {
    case MsgType::CertFetch:
      s.send(MsgType::CertResponse, current_cert().serialize());
      return;
    case MsgType::IssueRequest: {
      auto ca_cert = current_cert();
      protocols::CaConfig cfg;
      cfg.ca_handle = *token_->find_by_label(kNodeKeyLabel);
      cfg.anchors = anchors();
      cfg.website_policy = peer_policy();
      cfg.verify_csr_quote = config_.verify_csr_quote;
      protocols::issuance_ca(s, first.payload, own_vault(), ca_cert, cfg);
      return;
    }
    case MsgType::TransferHello: {
      auto c = current_cert();
      protocols::TransferResponderConfig cfg;
      cfg.key = *token_->find_by_label(kNodeKeyLabel);
      cfg.cert = c;
      cfg.anchors = anchors();
      cfg.peer_policy = peer_policy();
      protocols::transfer_responder(s, first.payload, own_vault(), cfg);
      return;
    }
    case MsgType::ProvisionHello:
      protocols::provision_receiver(s, first.payload, own_vault(), org_trust());
      return;
    default:
      throw Error(ErrorCode::UnsupportedForRole,
                  std::string(wire::to_string(first.type)) + " is not served here");
  }
}

// ---- server ------------------------------------------------------------------

Server::Server(NodeConfig config, keyvault::TokenOptions extra) : config_(std::move(config)) {
  const auto role = config_.role;
  if (role_has_vault(role)) {
    require(!config_.pin_file.empty(), "pin_file", role);
    ctx_ = std::make_unique<NodeContext>(config_, read_pin_file(config_.pin_file), extra);
    ctx_->refresh_certificate();
  } else if (role == Role::Ias) {
    require(!config_.service_key.empty(), "service_key", role);
    require(!config_.epid_group.empty(), "epid_group", role);
    auto group = startup("epid_group", [&] { return read_epid_group(config_.epid_group); });
    auto key = startup("service_key", [&] {
      auto der = read_file(config_.service_key);
      auto k = crypto::PrivateKey::from_pkcs8(der, crypto::KeyAlgorithm::EcdsaP256);
      crypto::cleanse(der.data(), der.size());
      return k;
    });
    ias_ = std::make_unique<attest::VerificationService>(std::vector<attest::EpidGroup>{group},
                                                         std::move(key));
  } else {
    auto file = config_.cache_file;
    if (file.empty()) {
      require(!config_.data_dir.empty(), "data_dir or cache_file", role);
      file = config_.data_dir / "pck-cache.bin";
    }
    fs::create_directories(file.parent_path());
    pck_cache_ = startup("cache_file", [&] { return std::make_unique<attest::PckCache>(file); });
  }
  if (!config_.data_dir.empty()) fs::create_directories(config_.data_dir);
  auto [host, port] = wire::parse_endpoint(config_.listen);
  listen_fd_ = wire::listen_tcp(host, port, &port_);
}

Server::~Server() {
  stop();
  reap(true);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

std::string Server::endpoint() const {
  auto [host, port] = wire::parse_endpoint(config_.listen);
  (void)port;
  return host + ":" + std::to_string(port_);
}

void Server::run() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 200);
    if (rc <= 0) {
      reap(false);
      continue;
    }
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::lock_guard g(conn_mu_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    open_fds_.insert(fd);
    auto done = std::make_shared<std::atomic<bool>>(false);
    conns_.push_back({std::thread([this, fd, done] {
                        serve_connection(fd);
                        *done = true;
                      }),
                      done});
  }
  reap(true);
}

void Server::stop() {
  stopping_ = true;
  std::lock_guard g(conn_mu_);
  for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
}

void Server::reap(bool all) {
  std::vector<Conn> finished;
  {
    std::lock_guard g(conn_mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (all || *it->done) {
        finished.push_back(std::move(*it));
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& c : finished) {
    if (c.thread.joinable()) c.thread.join();
  }
}

void Server::serve_connection(int fd) {
  auto ch = std::make_unique<wire::SocketChannel>(fd);
  const auto& accepted = accepted_types(config_.role);
  while (!stopping_) {
    std::optional<wire::Frame> f;
    try {
      f = ch->recv();
    } catch (const Error& e) {
      // Oversized or garbled frame: answer once, then drop the connection.
      try {
        ch->send(wire::error_frame({}, e.code(), e.detail(), "frame"));
      } catch (const Error&) {
      }
      log_session({}, std::string("dropped: ") + std::string(to_string(e.code())));
      break;
    }
    if (!f) break;
    if (accepted.count(f->type) == 0) {
      try {
        ch->send(wire::error_frame(f->session, ErrorCode::UnsupportedForRole,
                                   std::string(wire::to_string(f->type)) + " is not served by role " +
                                       std::string(to_string(config_.role))));
      } catch (const Error&) {
        break;
      }
      log_session(*f, "refused");
      continue;
    }
    auto session = f->session;
    auto type = f->type;
    try {
      dispatch(*ch, std::move(*f));
      log_session({type, session, {}}, "ok");
    } catch (const Error& e) {
      try {
        ch->send(wire::error_frame(session, e.code(), e.detail(), e.step()));
      } catch (const Error&) {
      }
      log_session({type, session, {}}, std::string("failed: ") + e.what());
      break;
    } catch (const std::exception& e) {
      try {
        ch->send(wire::error_frame(session, ErrorCode::Malformed, e.what()));
      } catch (const Error&) {
      }
      log_session({type, session, {}}, std::string("failed: ") + e.what());
      break;
    }
  }
  std::lock_guard g(conn_mu_);
  open_fds_.erase(fd);
  ch->close();
}

void Server::dispatch(wire::SocketChannel& ch, wire::Frame f) {
  switch (f.type) {
    case MsgType::CtlRequest: {
      if (!ch.peer_is_loopback()) {
        throw Error(ErrorCode::UnsupportedForRole, "control requests are accepted from loopback only");
      }
      std::string text(f.payload.begin(), f.payload.end());
      auto reply = ctx_->execute(text);
      ch.send({MsgType::CtlResponse, f.session, Bytes(reply.begin(), reply.end())});
      return;
    }
    case MsgType::IasVerify: {
      auto q = attest::Quote::parse(f.payload);
      ch.send({MsgType::IasReport, f.session, ias_->verify(q).serialize()});
      return;
    }
    case MsgType::PckFetch: {
      if (f.payload.size() != 16) throw Error(ErrorCode::Malformed, "PCK_FETCH needs a 16-byte platform id");
      auto e = pck_cache_->get(to_fixed<16>(f.payload));
      ByteWriter w;
      w.u8(e ? 1 : 0);
      if (e) w.blob(e->serialize());
      ch.send({MsgType::PckEntry, f.session, std::move(w).bytes()});
      return;
    }
    case MsgType::PckPublish: {
      // Stored as given; relying parties check the org signature on fetch.
      pck_cache_->put(attest::PckCacheEntry::parse(f.payload));
      ch.send({MsgType::PckPublished, f.session, {}});
      return;
    }
    default:
      ctx_->handle(ch, std::move(f));
  }
}

void Server::log_session(const wire::Frame& f, std::string_view outcome) {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char ts[32];
  std::tm tm{};
  ::gmtime_r(&now, &tm);
  std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", &tm);
  std::string line = std::string(ts) + "\t" + std::string(to_string(config_.role)) + "\t" +
                     std::string(wire::to_string(f.type)) + "\t" + to_hex(f.session) + "\t" +
                     std::string(outcome) + "\n";
  std::lock_guard g(log_mu_);
  std::cerr << line;
  if (!config_.data_dir.empty()) {
    std::ofstream out(config_.session_log(), std::ios::app);
    out << line;
  }
}

}  // namespace blindvault::node
