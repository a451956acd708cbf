// Operator CLI: drives every protocol against a node (over the control
// channel with --node, or on the vault directly with --config), inspects
// logs, runs the benchmark harness, and sets up test fixtures.

#include <sys/socket.h>
#include <unistd.h>

#include <CLI/CLI.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "blindvault/attestation.hpp"
#include "blindvault/bench.hpp"
#include "blindvault/certkit.hpp"
#include "blindvault/fileio.hpp"
#include "blindvault/node.hpp"
#include "blindvault/protocols.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace blindvault;

namespace {

struct Globals {
  std::string config;
  std::string node;
  std::string pin;
  std::string pin_file;
  bool json_out = false;
};

Globals g;

node::NodeConfig load_config() {
  if (g.config.empty()) throw Error(ErrorCode::Usage, "this command needs --config");
  return node::NodeConfig::load(g.config);
}

std::string pin_for(const node::NodeConfig* cfg) {
  if (!g.pin.empty()) return g.pin;
  if (!g.pin_file.empty()) return node::read_pin_file(g.pin_file);
  if (const char* env = std::getenv("BLINDVAULT_PIN"); env != nullptr && *env != '\0') return env;
  if (cfg != nullptr && !cfg->pin_file.empty()) return node::read_pin_file(cfg->pin_file);
  throw Error(ErrorCode::Usage, "no PIN given (--pin, --pin-file, BLINDVAULT_PIN, or pin_file in the config)");
}

/// Runs a control command on the node or, without --node, on the vault
/// named by --config.
json call(json req, keyvault::TokenOptions extra = {}) {
  if (!g.node.empty()) {
    req["pin"] = pin_for(nullptr);
    auto text = req.dump();
    auto reply = wire::round_trip(g.node, wire::MsgType::CtlRequest, Bytes(text.begin(), text.end()),
                                  wire::MsgType::CtlResponse);
    return json::parse(std::string(reply.payload.begin(), reply.payload.end()));
  }
  auto cfg = load_config();
  auto pin = pin_for(&cfg);
  req["pin"] = pin;
  node::NodeContext ctx(cfg, pin, extra);
  return json::parse(ctx.execute(req.dump()));
}

void write_text(const std::string& path, const std::string& text) {
  write_file_atomic(path, as_bytes(text), true, 0644);
}

void print(const json& j) {
  if (g.json_out) {
    std::cout << j.dump() << '\n';
    return;
  }
  for (const auto& [k, v] : j.items()) {
    if (k == "cmd") continue;
    if (v.is_string()) {
      const auto& s = v.get_ref<const std::string&>();
      if (s.find('\n') != std::string::npos) {
        std::cout << k << ":\n" << s;
        if (s.back() != '\n') std::cout << '\n';
      } else {
        std::cout << k << ": " << s << '\n';
      }
    } else if (v.is_array()) {
      std::cout << k << ":\n";
      for (const auto& item : v) std::cout << "  " << item.dump() << '\n';
    } else {
      std::cout << k << ": " << v.dump() << '\n';
    }
  }
}

ErrorCode log_status_code(const std::string& status) {
  if (status == "Ok") return ErrorCode::Ok;
  if (status == "RollbackDetected") return ErrorCode::RollbackDetected;
  if (status == "IncompleteOperation") return ErrorCode::IncompleteOperation;
  return ErrorCode::ChainCorrupted;
}

json key_selector(std::uint64_t handle, const std::string& label) {
  json j = json::object();
  if (handle != 0) j["handle"] = handle;
  if (!label.empty()) j["label"] = label;
  return j;
}

// ---- fixture commands ------------------------------------------------------------

void manufacturer_init(const std::string& out) {
  auto m = attest::Manufacturer::create();
  m.save(out);
  print({{"root_cert", (fs::path(out) / "root.cert").string()},
         {"epid_group", (fs::path(out) / "epid-group.secret").string()}});
}

void service_init(const std::string& out) {
  fs::create_directories(out);
  auto key = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256);
  auto der = key.to_pkcs8();
  write_file_atomic(fs::path(out) / "service.key", crypto::view(der), true, 0600);
  node::write_public_key_file(fs::path(out) / "service.pub", key.public_der());
  print({{"service_key", (fs::path(out) / "service.key").string()},
         {"service_public_key", (fs::path(out) / "service.pub").string()}});
}

void platform_init(const std::string& manufacturer, const std::string& out) {
  auto m = attest::Manufacturer::load(manufacturer);
  fs::create_directories(out);
  auto p = m.make_platform();
  p.save(fs::path(out) / "platform.secret");
  write_text((fs::path(out) / "pck.cert").string(), m.issue_pck_cert(p).armor());
  print({{"platform_id", to_hex(p.platform_id())},
         {"platform_secret", (fs::path(out) / "platform.secret").string()},
         {"pck_cert", (fs::path(out) / "pck.cert").string()}});
}

void measure(const std::string& image, int svn, int tcb) {
  Bytes img = image.empty() ? Bytes(tee::default_enclave_image().begin(), tee::default_enclave_image().end())
                            : read_file(image);
  auto m = tee::measure_enclave(img, tee::default_signer_identity(), static_cast<std::uint16_t>(svn),
                                static_cast<std::uint16_t>(tcb));
  print({{"mrenclave", to_hex(m.mrenclave)}, {"mrsigner", to_hex(m.mrsigner)}, {"svn", m.svn},
         {"tcb", m.tcb_version}});
}

constexpr std::string_view kMskLabel = "org-msk";

void org_init(const std::string& out) {
  auto cfg = load_config();
  auto pin = pin_for(&cfg);
  node::NodeContext ctx(cfg, pin);
  auto& t = ctx.token();
  auto h = t.find_by_label(kMskLabel);
  if (!h) h = t.generate_keypair(crypto::KeyAlgorithm::EcdsaP256, std::string(kMskLabel), pin).handle;
  auto mpk = t.info(*h)->public_part;
  node::write_public_key_file(out, mpk);
  print({{"msk_handle", *h}, {"mpk", to_hex(mpk)}, {"mpk_file", out}});
}

void pck_publish(const std::string& pck_file, const std::string& cache, bool unsigned_entry,
                 bool foreign) {
  auto pck = cert::BlindCert::from_armor(read_text_file(pck_file));
  auto entry = attest::pck_entry_draft(pck);
  if (foreign) {
    // Signed, but by a key that is not the organization's.
    auto rogue = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256);
    entry.org_signature = rogue.sign(entry.signed_payload());
  } else if (!unsigned_entry) {
    auto cfg = load_config();
    auto pin = pin_for(&cfg);
    node::NodeContext ctx(cfg, pin);
    auto h = ctx.token().find_by_label(kMskLabel);
    if (!h) throw Error(ErrorCode::NotFound, "admin vault holds no org master key; run org-init");
    entry = attest::sign_pck_cache({entry}, ctx.token(), *h, pin).front();
  }
  protocols::RemotePckCacheClient(cache).publish(entry);
  print({{"platform_id", to_hex(entry.platform_id)},
         {"signed", !entry.org_signature.empty()},
         {"cache", cache}});
}

// ---- vault commands --------------------------------------------------------------

void init_cmd(bool overwrite) {
  auto cfg = load_config();
  auto pin = pin_for(&cfg);
  node::NodeContext::init_vault(cfg, pin, overwrite);
  node::NodeContext ctx(cfg, pin);
  print(json::parse(ctx.execute(json{{"cmd", "status"}, {"pin", pin}}.dump())));
}

int log_verify(const std::string& log_file) {
  json out;
  if (!log_file.empty()) {
    // Exported log: link structure and per-record hashes only.
    try {
      auto log = keyvault::AuditLog::parse_lines(read_text_file(log_file));
      auto check = keyvault::verify_links(log.entries());
      out = {{"status", std::string(keyvault::to_string(check.status))},
             {"entries", check.entries},
             {"detail", check.detail}};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ChainCorrupted && e.code() != ErrorCode::Malformed) throw;
      out = {{"status", "ChainCorrupted"}, {"entries", 0}, {"detail", e.detail()}};
    }
  } else if (!g.node.empty()) {
    out = call({{"cmd", "log-verify"}});
  } else {
    // Direct: read-only inspection, so a rolled-back vault still reports.
    auto cfg = load_config();
    auto platform = tee::PlatformSecret::load(cfg.platform_secret);
    tee::Enclave enclave(std::move(platform), node::NodeContext::measurement(cfg));
    auto check = keyvault::Token::inspect(cfg.data_dir, enclave);
    out = {{"status", std::string(keyvault::to_string(check.status))},
           {"entries", check.entries},
           {"detail", check.detail}};
  }
  print(out);
  return exit_code_for(log_status_code(out.at("status").get<std::string>()));
}

int log_diff(const std::string& a, const std::string& b, const std::vector<std::string>& apis,
             bool fail_on_diff) {
  auto la = keyvault::AuditLog::parse_lines(read_text_file(a));
  auto lb = keyvault::AuditLog::parse_lines(read_text_file(b));
  auto d = keyvault::diff_logs(la, lb, apis);
  auto lines = [](const std::vector<keyvault::LogEntry>& v) {
    json arr = json::array();
    for (const auto& e : v) arr.push_back(e.to_line());
    return arr;
  };
  json out{{"only_in_a", lines(d.only_in_a)},
           {"only_in_b", lines(d.only_in_b)},
           {"repeated_in_a", lines(d.repeated_in_a)},
           {"repeated_in_b", lines(d.repeated_in_b)}};
  print(out);
  bool differs = !d.only_in_a.empty() || !d.only_in_b.empty() || !d.repeated_in_a.empty() ||
                 !d.repeated_in_b.empty();
  return fail_on_diff && differs ? 1 : 0;
}

void provision_receive(const std::string& listen) {
  auto cfg = load_config();
  auto pin = pin_for(&cfg);
  node::NodeContext ctx(cfg, pin);
  auto [host, port] = wire::parse_endpoint(listen);
  std::uint16_t bound = 0;
  int lfd = wire::listen_tcp(host, port, &bound);
  std::cerr << "listening on " << host << ":" << bound << '\n';
  int fd = ::accept(lfd, nullptr, nullptr);
  ::close(lfd);
  if (fd < 0) throw Error(ErrorCode::Io, "accept failed");
  wire::SocketChannel ch(fd);
  auto first = ch.recv();
  if (!first) throw Error(ErrorCode::PeerAborted, "sender closed the connection");
  if (first->type != wire::MsgType::ProvisionHello) {
    throw Error(ErrorCode::UnexpectedStep, "expected PROVISION_HELLO");
  }
  auto before = ctx.token().object_count();
  ctx.handle(ch, std::move(*first));
  print({{"received", ctx.token().object_count() - before}});
}

int bench_cmd(const std::string& op, const std::string& mode, std::size_t runs, std::size_t warmup,
              std::string work_dir, const std::string& format) {
  std::vector<bench::Operation> ops;
  if (op == "all") {
    ops = {bench::Operation::KeygenRsa2048, bench::Operation::SignRsa2048,
           bench::Operation::IssuanceE2E};
  } else {
    ops = {bench::operation_from_string(op)};
  }
  std::vector<bench::Mode> modes;
  if (mode == "both") {
    modes = {bench::Mode::Vault, bench::Mode::Direct};
  } else {
    modes = {bench::mode_from_string(mode)};
  }
  bool temp = work_dir.empty();
  if (temp) {
    char tmpl[] = "/tmp/blindctl-bench-XXXXXX";
    if (::mkdtemp(tmpl) == nullptr) throw Error(ErrorCode::Io, "cannot create bench directory");
    work_dir = tmpl;
  }
  bench::BenchOptions o;
  o.runs = runs;
  o.warmup = warmup;
  o.work_dir = work_dir;
  std::vector<bench::BenchReport> reports;
  {
    bench::Harness h(o);
    for (auto p : ops) {
      if (modes.size() == 2) {
        auto [v, d] = h.run_both(p);
        reports.push_back(std::move(v));
        reports.push_back(std::move(d));
      } else {
        reports.push_back(h.run(p, modes[0]));
      }
    }
  }
  if (temp) fs::remove_all(work_dir);
  if (format == "table" || format == "both") std::cout << bench::format_table(reports);
  if (format == "records" || format == "both") std::cout << bench::format_records(reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blindctl: operate blindvault nodes, inspect audit logs, run benchmarks"};
  app.require_subcommand(1);
  app.add_option("--config", g.config, "Node config file; commands then run on its vault directly");
  app.add_option("--node", g.node, "Running node's endpoint (host:port); commands use its control channel");
  app.add_option("--pin", g.pin, "Vault PIN");
  app.add_option("--pin-file", g.pin_file, "File whose first line is the vault PIN");
  app.add_flag("--json", g.json_out, "Print one JSON object instead of key: value lines");

  int rc = 0;
  std::function<void()> action;

  // fixtures
  std::string out_dir, manufacturer, image, pck_file, cache;
  int svn = 1, tcb = 1;
  bool unsigned_entry = false, foreign = false;
  auto* c_man = app.add_subcommand("manufacturer-init", "Create a simulated manufacturer root and EPID group");
  c_man->add_option("--out", out_dir, "Output directory")->required();
  c_man->callback([&] { action = [&] { manufacturer_init(out_dir); }; });

  auto* c_svc = app.add_subcommand("service-init", "Create the verification service's signing key");
  c_svc->add_option("--out", out_dir, "Output directory")->required();
  c_svc->callback([&] { action = [&] { service_init(out_dir); }; });

  auto* c_plat = app.add_subcommand("platform-init", "Create a platform secret and its PCK certificate");
  c_plat->add_option("--manufacturer", manufacturer, "Manufacturer directory")->required();
  c_plat->add_option("--out", out_dir, "Output directory")->required();
  c_plat->callback([&] { action = [&] { platform_init(manufacturer, out_dir); }; });

  auto* c_meas = app.add_subcommand("measure", "Print the measurement of an enclave image");
  c_meas->add_option("--image", image, "Image file (default: built-in image)");
  c_meas->add_option("--svn", svn, "Security version")->default_val(1);
  c_meas->add_option("--tcb", tcb, "TCB version")->default_val(1);
  c_meas->callback([&] { action = [&] { measure(image, svn, tcb); }; });

  std::string mpk_out;
  auto* c_org = app.add_subcommand("org-init", "Create the org master key in the admin vault (--config)");
  c_org->add_option("--out", mpk_out, "Where to write the org public key (mpk)")->required();
  c_org->callback([&] { action = [&] { org_init(mpk_out); }; });

  auto* c_pub = app.add_subcommand("pck-publish", "Sign a platform's PCK certificate with msk and publish it");
  c_pub->add_option("--pck", pck_file, "Armored PCK certificate")->required();
  c_pub->add_option("--cache", cache, "PCK cache endpoint")->required();
  c_pub->add_flag("--unsigned", unsigned_entry, "Publish without an org signature");
  c_pub->add_flag("--foreign", foreign, "Sign with a fresh non-org key");
  c_pub->callback([&] { action = [&] { pck_publish(pck_file, cache, unsigned_entry, foreign); }; });

  // vault commands
  bool overwrite = false;
  auto* c_init = app.add_subcommand("init", "Create the vault named by --config");
  c_init->add_flag("--overwrite", overwrite, "Replace an existing vault");
  c_init->callback([&] { action = [&] { init_cmd(overwrite); }; });

  auto* c_status = app.add_subcommand("status", "Platform, measurement, and vault counters");
  c_status->callback([&] { action = [&] { print(call({{"cmd", "status"}})); }; });

  auto* c_objects = app.add_subcommand("objects", "List key objects");
  c_objects->callback([&] { action = [&] { print(call({{"cmd", "objects"}})); }; });

  std::string alg = "ecdsa-p256", label, quote_type, subject, out_file, message, peer;
  std::uint64_t handle = 0;
  auto* c_keygen = app.add_subcommand("keygen", "Generate a key pair; prints handle and quote");
  c_keygen->add_option("--alg", alg, "rsa2048 | ecdsa-p256 | ecdh-p256");
  c_keygen->add_option("--label", label, "Object label");
  c_keygen->add_option("--quote-type", quote_type, "epid | ecdsa");
  c_keygen->callback([&] {
    action = [&] {
      json req{{"cmd", "keygen"}, {"alg", alg}, {"label", label}};
      if (!quote_type.empty()) req["quote_type"] = quote_type;
      print(call(req));
    };
  });

  auto* c_sign = app.add_subcommand("sign", "Sign a message with a vault key");
  c_sign->add_option("--handle", handle, "Key handle");
  c_sign->add_option("--label", label, "Key label");
  c_sign->add_option("--message", message, "Message text")->required();
  c_sign->callback([&] {
    action = [&] {
      auto req = key_selector(handle, label);
      req["cmd"] = "sign";
      req["message"] = to_hex(as_bytes(message));
      print(call(req));
    };
  });

  auto* c_csr = app.add_subcommand("csr", "Generate a key and a CSR with its quote");
  c_csr->add_option("--subject", subject, "Subject name");
  c_csr->add_option("--alg", alg, "rsa2048 | ecdsa-p256");
  c_csr->add_option("--out", out_file, "Write the armored CSR here");
  c_csr->callback([&] {
    action = [&] {
      json req{{"cmd", "csr"}, {"alg", alg}};
      if (!subject.empty()) req["subject"] = subject;
      auto res = call(req);
      if (!out_file.empty()) write_text(out_file, res.at("csr").get<std::string>());
      print(res);
    };
  });

  std::string ca, csr_quote_type;
  auto* c_issue = app.add_subcommand("issue", "Obtain a certificate from a CA node (website side)");
  c_issue->add_option("--ca", ca, "CA endpoint or peer name")->default_val("ca");
  c_issue->add_option("--subject", subject, "Subject name (default: config subject)");
  c_issue->add_option("--alg", alg, "rsa2048 | ecdsa-p256");
  c_issue->add_option("--csr-quote-type", csr_quote_type, "epid | ecdsa");
  c_issue->add_option("--out", out_file, "Write the armored certificate here");
  c_issue->callback([&] {
    action = [&] {
      json req{{"cmd", "issue"}, {"ca", ca}, {"alg", alg}};
      if (!subject.empty()) req["subject"] = subject;
      if (!csr_quote_type.empty()) req["csr_quote_type"] = csr_quote_type;
      auto res = call(req);
      if (!out_file.empty()) write_text(out_file, res.at("certificate").get<std::string>());
      print(res);
    };
  });

  bool no_quote = false;
  auto* c_self = app.add_subcommand("self-sign", "Generate a key and a self-signed certificate");
  c_self->add_option("--subject", subject, "Subject name");
  c_self->add_option("--alg", alg, "rsa2048 | ecdsa-p256");
  c_self->add_flag("--no-quote", no_quote, "Do not embed the generation quote");
  c_self->add_option("--out", out_file, "Write the armored certificate here");
  c_self->callback([&] {
    action = [&] {
      json req{{"cmd", "self-sign"}, {"alg", alg}, {"embed_quote", !no_quote}};
      if (!subject.empty()) req["subject"] = subject;
      auto res = call(req);
      if (!out_file.empty()) write_text(out_file, res.at("certificate").get<std::string>());
      print(res);
    };
  });

  auto* c_fetch = app.add_subcommand("cert-fetch", "Fetch a node's current certificate");
  c_fetch->add_option("--from", peer, "Node endpoint")->required();
  c_fetch->add_option("--out", out_file, "Write the armored certificate here");
  c_fetch->callback([&] {
    action = [&] {
      auto [host, port] = wire::parse_endpoint(peer);
      auto ch = wire::SocketChannel::connect(host, port);
      auto c = protocols::fetch_cert(*ch);
      if (!out_file.empty()) write_text(out_file, c.armor());
      json out{{"subject", c.subject}, {"fingerprint", to_hex(c.fingerprint())},
               {"certificate", c.armor()}};
      try {
        auto q = certkit::embedded_quote(c);
        out["quote_svn"] = q.report.measurement.svn;
        out["quote_tcb"] = q.report.measurement.tcb_version;
        out["quote_type"] = std::string(attest::to_string(q.type));
      } catch (const Error&) {
      }
      print(out);
    };
  });

  auto* c_transfer = app.add_subcommand("transfer", "Hand a certified key to a CDN node (website side)");
  c_transfer->add_option("--peer", peer, "CDN endpoint or peer name")->default_val("cdn");
  c_transfer->add_option("--handle", handle, "Key handle (default: current website certificate)");
  c_transfer->add_option("--label", label, "Key label");
  c_transfer->callback([&] {
    action = [&] {
      auto req = key_selector(handle, label);
      req["cmd"] = "transfer";
      req["peer"] = peer;
      print(call(req));
    };
  });

  std::string role = "sender", listen;
  std::vector<std::uint64_t> handles;
  auto* c_prov = app.add_subcommand("provision", "Provision keys to another org node");
  c_prov->add_option("--role", role, "sender | receiver")->default_val("sender");
  c_prov->add_option("--peer", peer, "Receiver endpoint or peer name (sender)");
  c_prov->add_option("--listen", listen, "host:port to accept one sender on (receiver, direct mode)");
  c_prov->add_option("--handle", handles, "Handles to send (default: all keys)");
  c_prov->callback([&] {
    action = [&] {
      if (role == "receiver") {
        if (listen.empty()) throw Error(ErrorCode::Usage, "receiver needs --listen");
        provision_receive(listen);
        return;
      }
      if (role != "sender") throw Error(ErrorCode::Usage, "--role must be sender or receiver");
      if (peer.empty()) throw Error(ErrorCode::Usage, "sender needs --peer");
      json req{{"cmd", "provision"}, {"peer", peer}};
      if (!handles.empty()) req["handles"] = handles;
      print(call(req));
    };
  });

  auto* c_backup = app.add_subcommand("backup", "Back up every key to a sanctioned org node");
  c_backup->add_option("--peer", peer, "Backup node endpoint or peer name")->required();
  c_backup->callback([&] { action = [&] { print(call({{"cmd", "backup"}, {"peer", peer}})); }; });

  std::string log_file;
  auto* c_lv = app.add_subcommand("log-verify", "Verify the audit log against the monotonic counter");
  c_lv->add_option("--log", log_file, "Verify an exported log file instead");
  c_lv->callback([&] { action = [&] { rc = log_verify(log_file); }; });

  auto* c_le = app.add_subcommand("log-export", "Write the audit log as text records");
  c_le->add_option("--out", out_file, "Output file (default: stdout)");
  c_le->callback([&] {
    action = [&] {
      auto res = call({{"cmd", "log-export"}});
      auto text = res.at("log").get<std::string>();
      if (out_file.empty()) {
        std::cout << text;
      } else {
        write_text(out_file, text);
      }
    };
  });

  std::string log_a, log_b;
  std::vector<std::string> apis;
  bool fail_on_diff = false;
  auto* c_ld = app.add_subcommand("log-diff", "Compare two exported logs, e.g. a website's and its CA's");
  c_ld->add_option("a", log_a, "First log")->required();
  c_ld->add_option("b", log_b, "Second log")->required();
  c_ld->add_option("--api", apis, "Only compare these API names");
  c_ld->add_flag("--fail-on-diff", fail_on_diff, "Exit 1 when the logs differ");
  c_ld->callback([&] { action = [&] { rc = log_diff(log_a, log_b, apis, fail_on_diff); }; });

  std::string op = "all", mode = "both", work_dir, format = "table";
  std::size_t runs = 1000, warmup = 10;
  auto* c_bench = app.add_subcommand("bench", "Measure keygen, sign, and issuance in VAULT and DIRECT modes");
  c_bench->add_option("--op", op, "keygen | sign | issuance | all")->default_val("all");
  c_bench->add_option("--mode", mode, "vault | direct | both (both interleaves the runs)")->default_val("both");
  c_bench->add_option("--runs", runs, "Measured runs per operation and mode")->default_val(1000);
  c_bench->add_option("--warmup", warmup, "Leading runs excluded from the report")->default_val(10);
  c_bench->add_option("--work-dir", work_dir, "Directory for bench vaults (default: temporary)");
  c_bench->add_option("--format", format, "table | records | both")->default_val("table");
  c_bench->callback([&] { action = [&] { rc = bench_cmd(op, mode, runs, warmup, work_dir, format); }; });

  auto* c_recover = app.add_subcommand("recover", "Open a vault after an interrupted operation and log the recovery");
  c_recover->callback([&] {
    action = [&] {
      keyvault::TokenOptions extra;
      extra.recover_incomplete = true;
      print(call({{"cmd", "log-verify"}}, extra));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : exit_code_for(ErrorCode::Usage);
  }

  try {
    if (action) action();
    return rc;
  } catch (const Error& e) {
    if (g.json_out) {
      std::cout << json{{"error", std::string(to_string(e.code()))},
                        {"code", static_cast<int>(e.code())},
                        {"message", e.detail()},
                        {"step", e.step()}}
                       .dump()
                << '\n';
    }
    std::cerr << "blindctl: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "blindctl: " << e.what() << '\n';
    return 1;
  }
}
