#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "blindvault/cert.hpp"
#include "blindvault/certkit.hpp"
#include "fixture.hpp"

using namespace bvtest;
using namespace blindvault::cert;
using crypto::KeyAlgorithm;
using crypto::PrivateKey;

namespace {

constexpr UnixSeconds kNow = 1'700'000'000;

BlindCert make(const std::string& subject, const std::string& issuer, const PrivateKey& subject_key,
               const PrivateKey& issuer_key, UnixSeconds validity = kCaValidity) {
  CertRequest r;
  r.subject = subject;
  r.issuer = issuer;
  r.subject_public_key = subject_key.public_der();
  r.not_before = kNow - kDay;
  r.validity = validity;
  return sign_with(r, issuer_key);
}

/// Link check written from the field definitions, not from verify_cert.
bool oracle_link(const BlindCert& child, const BlindCert& parent, UnixSeconds now) {
  return child.issuer == parent.subject && now >= child.not_before && now < child.not_after &&
         crypto::verify_signature(parent.subject_public_key, child.tbs(), child.signature);
}

struct ThreeLevels {
  PrivateKey root_key = PrivateKey::generate(KeyAlgorithm::EcdsaP256);
  PrivateKey mid_key = PrivateKey::generate(KeyAlgorithm::Rsa2048);
  PrivateKey leaf_key = PrivateKey::generate(KeyAlgorithm::EcdsaP256);
  BlindCert root = make("Root", "Root", root_key, root_key);
  BlindCert mid = make("Intermediate", "Root", mid_key, root_key);
  BlindCert leaf = make("www.example.test", "Intermediate", leaf_key, mid_key, kLeafValidity);
};

}  // namespace

TEST(Cert, RoundTripIsByteIdentical) {
  std::mt19937 rng(9);
  auto key = PrivateKey::generate(KeyAlgorithm::EcdsaP256);
  for (int i = 0; i < 100; ++i) {
    CertRequest r;
    r.subject = "s" + std::to_string(rng());
    r.issuer = "i" + std::to_string(rng());
    r.subject_public_key = key.public_der();
    r.not_before = kNow + static_cast<UnixSeconds>(rng() % 1000);
    for (unsigned e = 0; e < rng() % 4; ++e) {
      Bytes v(rng() % 50);
      for (auto& b : v) b = static_cast<std::uint8_t>(rng());
      r.extensions["ext" + std::to_string(e)] = v;
    }
    auto c = sign_with(r, key);
    auto s = c.serialize();
    EXPECT_EQ(BlindCert::parse(s), c);
    EXPECT_EQ(BlindCert::parse(s).serialize(), s);
    EXPECT_EQ(BlindCert::from_armor(c.armor()), c);
  }
  auto csr = make_csr("x.test", key);
  EXPECT_EQ(Csr::parse(csr.serialize()).serialize(), csr.serialize());
  EXPECT_EQ(Csr::from_armor(csr.armor()), csr);
}

TEST(Cert, ArmorFormat) {
  ThreeLevels t;
  auto a = t.leaf.armor();
  EXPECT_EQ(a.rfind("-----BEGIN BLINDCERT-----", 0), 0u);
  EXPECT_NE(a.find("-----END BLINDCERT-----"), std::string::npos);
  EXPECT_THROW(BlindCert::from_armor("garbage"), Error);
}

TEST(Cert, SignedPayloadIsSerializationWithoutSignature) {
  ThreeLevels t;
  auto c = t.leaf;
  auto tbs = c.tbs();
  c.signature = Bytes(300, 0xee);
  EXPECT_EQ(c.tbs(), tbs);
  EXPECT_TRUE(contains(c.serialize(), tbs));
}

TEST(Cert, VerifyCertReasons) {
  ThreeLevels t;
  EXPECT_TRUE(verify_cert(t.mid, t.root, kNow));
  EXPECT_EQ(verify_cert(t.leaf, t.mid, kNow + kLeafValidity).status, CertStatus::Expired);
  EXPECT_EQ(verify_cert(t.leaf, t.mid, kNow - 2 * kDay).status, CertStatus::Expired);

  auto renamed = t.leaf;
  renamed.subject = "evil.test";
  EXPECT_EQ(verify_cert(renamed, t.mid, kNow).status, CertStatus::Signature);

  // Same subject as the real parent, different key.
  auto decoy_key = PrivateKey::generate(KeyAlgorithm::Rsa2048);
  auto decoy = make("Intermediate", "Root", decoy_key, t.root_key);
  EXPECT_EQ(verify_cert(t.leaf, decoy, kNow).status, CertStatus::Signature);

  // Right key, wrong name.
  auto misnamed = make("Other", "Root", t.mid_key, t.root_key);
  EXPECT_EQ(verify_cert(t.leaf, misnamed, kNow).status, CertStatus::IssuerMismatch);
}

TEST(Cert, VerifyCertAgreesWithOracle) {
  ThreeLevels t;
  std::vector<const BlindCert*> all{&t.root, &t.mid, &t.leaf};
  for (UnixSeconds now : {kNow - 2 * kDay, kNow, kNow + kLeafValidity, kNow + kCaValidity}) {
    for (auto* c : all) {
      for (auto* p : all) {
        EXPECT_EQ(static_cast<bool>(verify_cert(*c, *p, now)), oracle_link(*c, *p, now))
            << c->subject << " <- " << p->subject << " @" << now;
      }
    }
  }
}

TEST(Chain, DepthThree) {
  ThreeLevels t;
  EXPECT_TRUE(oracle_link(t.leaf, t.mid, kNow) && oracle_link(t.mid, t.root, kNow) &&
              oracle_link(t.root, t.root, kNow));
  EXPECT_TRUE(verify_chain({t.leaf, t.mid, t.root}, {t.root}, kNow));
  EXPECT_TRUE(verify_chain({t.leaf, t.mid}, {t.root}, kNow));
  EXPECT_EQ(verify_chain({t.leaf}, {t.root}, kNow).status, CertStatus::UntrustedRoot);
  EXPECT_EQ(verify_chain({t.leaf, t.mid, t.root}, {}, kNow).status, CertStatus::UntrustedRoot);
  EXPECT_EQ(verify_chain({t.leaf, t.root}, {t.root}, kNow).status, CertStatus::Signature);
  EXPECT_EQ(verify_chain({}, {t.root}, kNow).status, CertStatus::Malformed);
}

TEST(Chain, LookalikeRootRejected) {
  ThreeLevels t;
  auto fake_key = PrivateKey::generate(KeyAlgorithm::EcdsaP256);
  auto fake_root = make("Root", "Root", fake_key, fake_key);
  EXPECT_EQ(verify_chain({t.leaf, t.mid, fake_root}, {t.root}, kNow).status,
            CertStatus::Signature);
  auto fake_mid = make("Intermediate", "Root", t.mid_key, fake_key);
  EXPECT_EQ(verify_chain({t.leaf, fake_mid, fake_root}, {t.root}, kNow).status,
            CertStatus::UntrustedRoot);
  EXPECT_EQ(verify_chain({t.leaf, fake_mid}, {t.root}, kNow).status, CertStatus::Signature);
}

TEST(Chain, RevocationFromFile) {
  ThreeLevels t;
  TempDir dir;
  {
    std::ofstream f(dir / "revoked.txt");
    f << "# revoked intermediates\n" << to_hex(t.mid.serial) << "  # compromised\n\n";
  }
  auto crl = RevocationList::load(dir / "revoked.txt");
  EXPECT_EQ(crl.size(), 1u);
  EXPECT_EQ(verify_chain({t.leaf, t.mid, t.root}, {t.root}, kNow, crl).status,
            CertStatus::Revoked);
  RevocationList leaf_only;
  leaf_only.revoke(t.leaf.serial);
  EXPECT_EQ(verify_chain({t.leaf, t.mid}, {t.root}, kNow, leaf_only).status, CertStatus::Revoked);
  RevocationList root_only;
  root_only.revoke(t.root.serial);
  EXPECT_EQ(verify_chain({t.leaf, t.mid}, {t.root}, kNow, root_only).status, CertStatus::Revoked);
}

TEST(Chain, EmptyValidityIsMalformed) {
  ThreeLevels t;
  auto c = t.leaf;
  c.not_after = c.not_before;
  EXPECT_EQ(verify_cert(c, t.mid, kNow).status, CertStatus::Malformed);
}

TEST(Csr, ProofOfPossession) {
  auto key = PrivateKey::generate(KeyAlgorithm::EcdsaP256);
  auto csr = make_csr("a.test", key);
  EXPECT_TRUE(csr.verify_pop());
  auto swapped = csr;
  swapped.public_key = PrivateKey::generate(KeyAlgorithm::EcdsaP256).public_der();
  EXPECT_FALSE(swapped.verify_pop());
  auto renamed = csr;
  renamed.subject = "b.test";
  EXPECT_FALSE(renamed.verify_pop());
}

struct CertkitTest : ::testing::Test {
  World world;
  Node ca{world};
  Node site{world};
};

TEST_F(CertkitTest, GenCsrBindsKeyAndQuote) {
  auto g = certkit::gen_csr(site.token, "www.example.test", kPin, KeyAlgorithm::EcdsaP256,
                            attest::QuoteType::Ecdsa);
  EXPECT_TRUE(g.csr.verify_pop());
  EXPECT_EQ(site.token.info(g.handle)->public_part, g.csr.public_key);
  EXPECT_TRUE(attest::verify_quote(g.quote, g.csr.public_key, attest::QuoteType::Ecdsa,
                                   world.anchors(), world.policy()));
}

TEST_F(CertkitTest, IssueAndTamper) {
  auto ca_cert = certkit::self_sign("CA", ca.token, kPin, true);
  auto g = certkit::gen_csr(site.token, "www.example.test", kPin);
  auto c = certkit::issue_cert(g.csr, ca_cert.cert, ca.token, ca_cert.handle, kPin);
  EXPECT_TRUE(verify_cert(c, ca_cert.cert, now_seconds()));
  EXPECT_EQ(c.subject_public_key, g.csr.public_key);
  EXPECT_EQ(c.not_after - c.not_before, kLeafValidity);
  EXPECT_EQ(ca_cert.cert.not_after - ca_cert.cert.not_before, kCaValidity);
  EXPECT_TRUE(verify_chain({c, ca_cert.cert}, {ca_cert.cert}, now_seconds()));
  auto t = c;
  t.subject = "www.evil.test";
  EXPECT_FALSE(verify_cert(t, ca_cert.cert, now_seconds()));
}

TEST_F(CertkitTest, BadCsrNeverIssued) {
  auto ca_cert = certkit::self_sign("CA", ca.token, kPin, false);
  auto key = PrivateKey::generate(KeyAlgorithm::EcdsaP256);
  std::mt19937 rng(4);
  for (int i = 0; i < 20; ++i) {
    auto csr = make_csr("x.test", key);
    csr.self_signature[rng() % csr.self_signature.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    try {
      certkit::issue_cert(csr, ca_cert.cert, ca.token, ca_cert.handle, kPin);
      ADD_FAILURE() << "issued on a broken CSR";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadCSR);
    }
  }
}

TEST_F(CertkitTest, SelfSignedWithQuote) {
  auto s = certkit::self_sign("CA", ca.token, kPin, true);
  EXPECT_TRUE(s.cert.self_issued());
  EXPECT_TRUE(verify_cert(s.cert, s.cert, now_seconds()));
  EXPECT_TRUE(verify_chain({s.cert}, {s.cert}, now_seconds()));
  EXPECT_TRUE(s.cert.extension(kQuoteExtension) != nullptr);
  auto v = certkit::inspect_cert_quote(s.cert, world.policy(), world.anchors());
  EXPECT_TRUE(v) << v.detail;
}

TEST_F(CertkitTest, InspectRejectsSplicedQuote) {
  auto s = certkit::self_sign("CA", ca.token, kPin, true);
  auto other = ca.token.generate_keypair(KeyAlgorithm::EcdsaP256, "other", kPin);
  auto spliced = certkit::self_sign("CA", ca.token, s.handle, kPin, other.quote);
  EXPECT_EQ(certkit::inspect_cert_quote(spliced, world.policy(), world.anchors()).status,
            attest::QuoteStatus::ReportDataMismatch);
}

TEST_F(CertkitTest, InspectRejectsOtherBuild) {
  auto modified = to_bytes("a modified vault build");
  Node rogue(world, tee::measure_enclave(modified));
  auto s = certkit::self_sign("CA", rogue.token, kPin, true);
  EXPECT_EQ(certkit::inspect_cert_quote(s.cert, world.policy(), world.anchors()).status,
            attest::QuoteStatus::MrenclaveMismatch);
}

TEST_F(CertkitTest, MissingQuoteExtension) {
  auto s = certkit::self_sign("CA", ca.token, kPin, false);
  try {
    certkit::inspect_cert_quote(s.cert, world.policy(), world.anchors());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingQuoteExtension);
  }
}

TEST_F(CertkitTest, EcdsaQuoteEmbedsAndVerifiesOffline) {
  auto s = certkit::self_sign("CA", ca.token, kPin, true, KeyAlgorithm::Rsa2048,
                              attest::QuoteType::Ecdsa);
  auto anchors = world.anchors();
  anchors.service = nullptr;
  anchors.service_public_key.clear();
  EXPECT_TRUE(certkit::inspect_cert_quote(s.cert, world.policy(), anchors));
  EXPECT_EQ(certkit::embedded_quote(s.cert).type, attest::QuoteType::Ecdsa);
}
