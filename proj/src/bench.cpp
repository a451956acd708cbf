#include "blindvault/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <thread>

#include "blindvault/certkit.hpp"
#include "blindvault/protocols.hpp"

namespace blindvault::bench {

std::string_view to_string(Operation op) {
  switch (op) {
    case Operation::KeygenRsa2048: return "KEYGEN_RSA2048";
    case Operation::SignRsa2048: return "SIGN_RSA2048";
    case Operation::IssuanceE2E: return "ISSUANCE_E2E";
  }
  return "UNKNOWN";
}

std::string_view to_string(Mode m) { return m == Mode::Vault ? "VAULT" : "DIRECT"; }

Operation operation_from_string(std::string_view s) {
  if (s == "KEYGEN_RSA2048" || s == "keygen") return Operation::KeygenRsa2048;
  if (s == "SIGN_RSA2048" || s == "sign") return Operation::SignRsa2048;
  if (s == "ISSUANCE_E2E" || s == "issuance") return Operation::IssuanceE2E;
  throw Error(ErrorCode::Usage, "unknown bench operation '" + std::string(s) + "'");
}

Mode mode_from_string(std::string_view s) {
  if (s == "VAULT" || s == "vault") return Mode::Vault;
  if (s == "DIRECT" || s == "direct") return Mode::Direct;
  throw Error(ErrorCode::Usage, "unknown bench mode '" + std::string(s) + "'");
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::Usage, "median of no samples");
  const auto n = v.size();
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), mid);
  return (lo + hi) / 2;
}

BenchReport summarize(Operation op, Mode mode, std::vector<double> samples) {
  if (samples.empty()) throw Error(ErrorCode::Usage, "a report needs at least one run");
  BenchReport r;
  r.operation = op;
  r.mode = mode;
  r.runs = samples.size();
  auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  r.min_ms = *lo;
  r.max_ms = *hi;
  r.median_ms = median(samples);
  r.samples_ms = std::move(samples);
  return r;
}

double overhead_ratio(const BenchReport& vault, const BenchReport& direct) {
  if (direct.median_ms <= 0) throw Error(ErrorCode::Usage, "direct median is not positive");
  return vault.median_ms / direct.median_ms;
}

const std::vector<ReferencePoint>& reference_points() {
  static const std::vector<ReferencePoint> points{
      {Operation::KeygenRsa2048, Mode::Vault, 74, 75, 77},
      {Operation::KeygenRsa2048, Mode::Direct, 74.5, 76, 79},
      {Operation::SignRsa2048, Mode::Vault, 0.862, 0.871, 0.878},
      {Operation::SignRsa2048, Mode::Direct, 0.66, 0.67, 0.681},
      {Operation::IssuanceE2E, Mode::Vault, 4210, 4273, 4380},
      {Operation::IssuanceE2E, Mode::Direct, 4120, 4235, 4520},
  };
  return points;
}

// ---- harness -------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;
constexpr const char* kPin = "bench-pin";

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Platform {
  Platform(const attest::Manufacturer& m, const tee::Measurement& meas)
      : enclave(m.make_platform(), meas),
        attester(enclave, m.issue_pck_cert(enclave.platform())) {}
  tee::Enclave enclave;
  attest::Attester attester;
};

}  // namespace

struct Runner;

struct Harness::Impl {
  explicit Impl(BenchOptions o)
      : options(std::move(o)),
        manufacturer(attest::Manufacturer::create()),
        service({manufacturer.epid_group()},
                crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256)),
        service_client(service),
        meas(tee::measure_enclave(tee::default_enclave_image())),
        website(manufacturer, meas),
        ca(manufacturer, meas) {
    if (options.work_dir.empty()) {
      throw Error(ErrorCode::Usage, "bench needs a work directory for vault state");
    }
    std::filesystem::create_directories(options.work_dir);
  }

  keyvault::TokenOptions token_options() const {
    keyvault::TokenOptions t;
    t.pin_iterations = options.pin_iterations;
    t.overwrite = true;
    return t;
  }

  keyvault::Token fresh_vault(const std::string& name, const attest::Attester& at) {
    auto dir = options.work_dir / name;
    std::filesystem::create_directories(dir);
    keyvault::Token::init(dir, kPin, at, token_options());
    return keyvault::Token::open(dir, kPin, at, token_options());
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
    p.expected_mrenclave = {meas.mrenclave};
    return p;
  }

  std::unique_ptr<Runner> make(Operation op, Mode mode);

  BenchOptions options;
  attest::Manufacturer manufacturer;
  attest::VerificationService service;
  attest::LocalServiceClient service_client;
  tee::Measurement meas;
  Platform website;
  Platform ca;
};

/// One (operation, mode) cell with its setup kept alive between runs.
struct Runner {
  virtual ~Runner() = default;
  /// One timed run in milliseconds.
  virtual double once() = 0;
  crypto::KeyAlgorithm algorithm = crypto::KeyAlgorithm::Rsa2048;
  std::size_t public_key_bytes = 0;
};

namespace {

struct KeygenVault : Runner {
  explicit KeygenVault(keyvault::Token v) : vault(std::move(v)) {}
  double once() override {
    auto t0 = Clock::now();
    auto k = vault.generate_keypair(crypto::KeyAlgorithm::Rsa2048, "bench", kPin);
    double ms = elapsed_ms(t0);
    public_key_bytes = k.public_part.size();
    vault.destroy_object(k.handle, kPin);  // keeps the sealed state small
    return ms;
  }
  keyvault::Token vault;
};

struct KeygenDirect : Runner {
  double once() override {
    auto t0 = Clock::now();
    auto k = crypto::PrivateKey::generate(crypto::KeyAlgorithm::Rsa2048);
    auto pub = k.public_der();
    double ms = elapsed_ms(t0);
    public_key_bytes = pub.size();
    return ms;
  }
};

struct SignVault : Runner {
  explicit SignVault(keyvault::Token v) : vault(std::move(v)) {
    auto k = vault.generate_keypair(crypto::KeyAlgorithm::Rsa2048, "bench", kPin);
    handle = k.handle;
    public_key_bytes = k.public_part.size();
  }
  double once() override {
    message[0]++;
    auto t0 = Clock::now();
    auto sig = vault.sign(handle, message, kPin);
    return elapsed_ms(t0);
  }
  keyvault::Token vault;
  keyvault::KeyHandle handle = 0;
  Bytes message = crypto::random_bytes(32);
};

struct SignDirect : Runner {
  SignDirect() : key(crypto::PrivateKey::generate(crypto::KeyAlgorithm::Rsa2048)) {
    public_key_bytes = key.public_der().size();
  }
  double once() override {
    message[0]++;
    auto t0 = Clock::now();
    auto sig = key.sign(message);
    return elapsed_ms(t0);
  }
  crypto::PrivateKey key;
  Bytes message = crypto::random_bytes(32);
};

/// Website side over a pipe; the CA side answers on its own thread.
struct IssuanceBase : Runner {
  IssuanceBase() {
    algorithm = crypto::KeyAlgorithm::EcdsaP256;
    auto [w, c] = wire::make_pipe();
    website_end = std::move(w);
    ca_end = std::move(c);
  }
  ~IssuanceBase() override { shutdown(); }
  void shutdown() {
    if (website_end) website_end->close();
    if (server.joinable()) server.join();
  }
  std::unique_ptr<wire::MessageChannel> website_end;
  std::unique_ptr<wire::MessageChannel> ca_end;
  std::thread server;
};

struct IssuanceVault : IssuanceBase {
  IssuanceVault(keyvault::Token ca, keyvault::Token site, attest::TrustAnchors trust,
                attest::QuotePolicy pol)
      : ca_vault(std::move(ca)),
        site_vault(std::move(site)),
        ca_self(certkit::self_sign("Bench CA", ca_vault, kPin, true)) {
    cfg.ca_handle = ca_self.handle;
    cfg.anchors = trust;
    cfg.website_policy = pol;
    wc.subject = "bench.example";
    wc.anchors = trust;
    wc.ca_policy = pol;
    server = std::thread([this, ch = ca_end.get()] {
      using wire::MsgType;
      while (auto f = ch->recv()) {
        protocols::Session s(*ch, f->session);
        try {
          if (f->type == MsgType::CertFetch) {
            s.send(MsgType::CertResponse, ca_self.cert.serialize());
          } else if (f->type == MsgType::IssueRequest) {
            protocols::issuance_ca(s, f->payload, {ca_vault, kPin}, ca_self.cert, cfg);
          }
        } catch (const Error&) {
        }
      }
    });
  }
  ~IssuanceVault() override { shutdown(); }
  double once() override {
    auto t0 = Clock::now();
    auto res = protocols::issuance_website(*website_end, {site_vault, kPin}, wc);
    double ms = elapsed_ms(t0);
    public_key_bytes = res.cert.subject_public_key.size();
    site_vault.destroy_object(res.handle, kPin);
    return ms;
  }
  keyvault::Token ca_vault;
  keyvault::Token site_vault;
  certkit::SelfSigned ca_self;
  protocols::CaConfig cfg;
  protocols::WebsiteIssuanceConfig wc;
};

// Same messages and checks; keys live in process memory.
struct IssuanceDirect : IssuanceBase {
  IssuanceDirect(const attest::Attester& ca_at, const attest::Attester& site_at,
                 attest::TrustAnchors t, attest::QuotePolicy p)
      : website_at(site_at),
        trust(std::move(t)),
        pol(std::move(p)),
        ca_key(crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256)) {
    cert::CertRequest root;
    root.subject = root.issuer = "Bench CA";
    root.subject_public_key = ca_key.public_der();
    root.validity = cert::kCaValidity;
    root.extensions.emplace(std::string(cert::kQuoteExtension),
                            ca_at.quote(root.subject_public_key, attest::QuoteType::Epid).serialize());
    ca_cert = cert::sign_with(root, ca_key);
    server = std::thread([this, ch = ca_end.get()] {
      using wire::MsgType;
      while (auto f = ch->recv()) {
        protocols::Session s(*ch, f->session);
        try {
          if (f->type == MsgType::CertFetch) {
            s.send(MsgType::CertResponse, ca_cert.serialize());
          } else if (f->type == MsgType::IssueRequest) {
            auto req = protocols::IssueRequestMsg::decode(f->payload);
            if (!req.csr.verify_pop()) s.abort(ErrorCode::BadCSR, "pop", "ca-verify-csr");
            if (!attest::verify_quote(req.quote, req.csr.public_key, req.quote.type, trust, pol)) {
              s.abort(ErrorCode::QuoteInvalid, "quote", "ca-verify-csr");
            }
            cert::CertRequest cr;
            cr.subject = req.csr.subject;
            cr.issuer = ca_cert.subject;
            cr.subject_public_key = req.csr.public_key;
            cr.validity = cert::kLeafValidity;
            s.send(MsgType::IssueResponse, cert::sign_with(cr, ca_key).serialize());
          }
        } catch (const Error&) {
        }
      }
    });
  }
  ~IssuanceDirect() override { shutdown(); }
  double once() override {
    using wire::MsgType;
    auto t0 = Clock::now();
    protocols::Session s(*website_end, protocols::Session::new_id());
    s.send(MsgType::CertFetch, {});
    auto c = cert::BlindCert::parse(s.expect(MsgType::CertResponse, "fetch-ca-cert"));
    auto q_c = certkit::embedded_quote(c);
    if (!attest::inspect_quote_fields(q_c, c.subject_public_key, pol) ||
        !cert::verify_cert(c, c, cert::now_seconds()) ||
        !attest::check_quote_signature(q_c, trust)) {
      throw Error(ErrorCode::CAQuoteInvalid, "bench CA quote rejected", "inspect-ca-quote");
    }
    auto key = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256);
    auto csr = cert::make_csr("bench.example", key);
    auto q_w = website_at.quote(csr.public_key, attest::QuoteType::Epid);
    s.send(MsgType::IssueRequest, protocols::IssueRequestMsg{csr, q_w}.encode());
    auto issued = cert::BlindCert::parse(s.expect(MsgType::IssueResponse, "issue"));
    if (!cert::verify_cert(issued, c, cert::now_seconds()) ||
        issued.subject_public_key != csr.public_key) {
      throw Error(ErrorCode::CertIssuerMismatch, "bench issuance failed", "verify-issued-cert");
    }
    public_key_bytes = issued.subject_public_key.size();
    return elapsed_ms(t0);
  }
  const attest::Attester& website_at;
  attest::TrustAnchors trust;
  attest::QuotePolicy pol;
  crypto::PrivateKey ca_key;
  cert::BlindCert ca_cert;
};

BenchReport report_of(Operation op, Mode mode, const Runner& r, std::vector<double> samples) {
  auto out = summarize(op, mode, std::move(samples));
  out.algorithm = r.algorithm;
  out.public_key_bytes = r.public_key_bytes;
  return out;
}

}  // namespace

std::unique_ptr<Runner> Harness::Impl::make(Operation op, Mode mode) {
  const bool vault = mode == Mode::Vault;
  switch (op) {
    case Operation::KeygenRsa2048:
      if (vault) return std::make_unique<KeygenVault>(fresh_vault("keygen", website.attester));
      return std::make_unique<KeygenDirect>();
    case Operation::SignRsa2048:
      if (vault) return std::make_unique<SignVault>(fresh_vault("sign", website.attester));
      return std::make_unique<SignDirect>();
    case Operation::IssuanceE2E:
      if (vault) {
        return std::make_unique<IssuanceVault>(fresh_vault("issuance-ca", ca.attester),
                                               fresh_vault("issuance-website", website.attester),
                                               anchors(), policy());
      }
      return std::make_unique<IssuanceDirect>(ca.attester, website.attester, anchors(), policy());
  }
  throw Error(ErrorCode::Usage, "unknown operation");
}

Harness::Harness(BenchOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  if (impl_->options.runs == 0) throw Error(ErrorCode::Usage, "runs must be at least 1");
}

Harness::~Harness() = default;

BenchReport Harness::run(Operation op, Mode mode) {
  auto r = impl_->make(op, mode);
  const auto& o = impl_->options;
  std::vector<double> samples;
  samples.reserve(o.runs);
  for (std::size_t i = 0; i < o.warmup + o.runs; ++i) {
    double ms = r->once();
    if (i >= o.warmup) samples.push_back(ms);
  }
  return report_of(op, mode, *r, std::move(samples));
}

std::pair<BenchReport, BenchReport> Harness::run_both(Operation op) {
  auto v = impl_->make(op, Mode::Vault);
  auto d = impl_->make(op, Mode::Direct);
  const auto& o = impl_->options;
  std::vector<double> vs, ds;
  vs.reserve(o.runs);
  ds.reserve(o.runs);
  // Alternate which mode goes first so neither systematically follows the other.
  for (std::size_t i = 0; i < o.warmup + o.runs; ++i) {
    double a, b;
    if (i % 2 == 0) {
      a = v->once();
      b = d->once();
    } else {
      b = d->once();
      a = v->once();
    }
    if (i >= o.warmup) {
      vs.push_back(a);
      ds.push_back(b);
    }
  }
  return {report_of(op, Mode::Vault, *v, std::move(vs)),
          report_of(op, Mode::Direct, *d, std::move(ds))};
}

// ---- output --------------------------------------------------------------------

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(std::string s, std::size_t w, bool right) {
  if (s.size() >= w) return s;
  return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string format_table(const std::vector<BenchReport>& reports) {
  std::vector<std::vector<std::string>> rows{
      {"operation", "mode", "runs", "min_ms", "median_ms", "max_ms"}};
  for (const auto& r : reports) {
    rows.push_back({std::string(to_string(r.operation)), std::string(to_string(r.mode)),
                    std::to_string(r.runs), fmt("%.3f", r.min_ms), fmt("%.3f", r.median_ms),
                    fmt("%.3f", r.max_ms)});
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      if (i > 0) out += "  ";
      out += pad(rows[r][i], width[i], i >= 2);
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + '\n';
    }
  }
  // Ratios for operations measured in both modes.
  for (auto op : {Operation::KeygenRsa2048, Operation::SignRsa2048, Operation::IssuanceE2E}) {
    const BenchReport* v = nullptr;
    const BenchReport* d = nullptr;
    for (const auto& r : reports) {
      if (r.operation != op) continue;
      (r.mode == Mode::Vault ? v : d) = &r;
    }
    if (v == nullptr || d == nullptr) continue;
    out += std::string(to_string(op)) + " VAULT/DIRECT median ratio: " +
           fmt("%.3f", overhead_ratio(*v, *d));
    for (const auto& p : reference_points()) {
      if (p.operation != op || p.mode != Mode::Vault) continue;
      for (const auto& q : reference_points()) {
        if (q.operation == op && q.mode == Mode::Direct) {
          out += " (reference " + fmt("%.3f", p.median_ms / q.median_ms) + ")";
        }
      }
    }
    out += '\n';
  }
  return out;
}

std::string format_records(const std::vector<BenchReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    nlohmann::json j{{"operation", std::string(to_string(r.operation))},
                     {"mode", std::string(to_string(r.mode))},
                     {"runs", r.runs},
                     {"min_ms", r.min_ms},
                     {"median_ms", r.median_ms},
                     {"max_ms", r.max_ms},
                     {"algorithm", std::string(crypto::to_string(r.algorithm))},
                     {"public_key_bytes", r.public_key_bytes}};
    out += j.dump() + '\n';
  }
  return out;
}

}  // namespace blindvault::bench
