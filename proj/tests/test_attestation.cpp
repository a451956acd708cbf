#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "blindvault/attestation.hpp"
#include "fixture.hpp"

using namespace bvtest;
using namespace blindvault::attest;

namespace {

/// Counts calls; stands in for any network-backed client.
struct RecordingClient : VerificationServiceClient {
  explicit RecordingClient(VerificationServiceClient& inner) : inner(inner) {}
  AttestationVerificationReport verify(const Quote& q) override {
    ++calls;
    return inner.verify(q);
  }
  VerificationServiceClient& inner;
  int calls = 0;
};

/// Chain walk written against the raw fields only: each link's signature
/// over tbs under the parent key, issuer/subject names, ending at `root`.
bool independent_chain_check(const std::vector<cert::BlindCert>& chain,
                             const cert::BlindCert& root) {
  std::vector<cert::BlindCert> full = chain;
  full.push_back(root);
  for (std::size_t i = 0; i + 1 < full.size(); ++i) {
    if (full[i].issuer != full[i + 1].subject) return false;
    if (!crypto::verify_signature(full[i + 1].subject_public_key, full[i].tbs(),
                                  full[i].signature)) {
      return false;
    }
  }
  return root.self_issued() &&
         crypto::verify_signature(root.subject_public_key, root.tbs(), root.signature);
}

struct AttestTest : ::testing::Test {
  World world;
  std::unique_ptr<Machine> m = world.machine();
  Bytes data = to_bytes("the public key being bound");
};

}  // namespace

TEST_F(AttestTest, HonestQuotesOfBothTypesVerify) {
  for (auto t : {QuoteType::Ecdsa, QuoteType::Epid}) {
    auto q = m->attester->quote(data, t);
    auto v = verify_quote(q, data, t, world.anchors(), world.policy());
    EXPECT_TRUE(v) << to_string(v.status) << " " << v.detail;
    EXPECT_EQ(Quote::parse(q.serialize()), q);
    EXPECT_EQ(Quote::parse(q.serialize()).serialize(), q.serialize());
  }
}

TEST_F(AttestTest, EcdsaChainValidatesUnderIndependentWalk) {
  auto q = m->attester->quote(data, QuoteType::Ecdsa);
  ASSERT_EQ(q.pck_chain.size(), 2u);
  EXPECT_TRUE(independent_chain_check(q.pck_chain, world.manufacturer.root_cert()));
  auto other = Manufacturer::create("Other Root");
  EXPECT_FALSE(independent_chain_check(q.pck_chain, other.root_cert()));
  auto anchors = world.anchors();
  anchors.manufacturer_roots = {other.root_cert()};
  EXPECT_EQ(check_quote_signature(q, anchors).status, QuoteStatus::SignatureInvalid);
}

TEST_F(AttestTest, EcdsaVerificationIsOffline) {
  RecordingClient rec(world.service_client);
  auto anchors = world.anchors();
  anchors.service = &rec;
  auto q = m->attester->quote(data, QuoteType::Ecdsa);
  EXPECT_TRUE(verify_quote(q, data, QuoteType::Ecdsa, anchors, world.policy()));
  EXPECT_EQ(rec.calls, 0);
  auto e = m->attester->quote(data, QuoteType::Epid);
  EXPECT_TRUE(verify_quote(e, data, QuoteType::Epid, anchors, world.policy()));
  EXPECT_EQ(rec.calls, 1);
}

TEST_F(AttestTest, EpidNeedsTheService) {
  auto q = m->attester->quote(data, QuoteType::Epid);
  auto anchors = world.anchors();
  anchors.service = nullptr;
  EXPECT_EQ(verify_quote(q, data, QuoteType::Epid, anchors, world.policy()).status,
            QuoteStatus::VerificationServiceRequired);
}

TEST_F(AttestTest, EcdsaWithoutPckIsUnavailable) {
  Attester bare(m->enclave, std::nullopt);
  try {
    bare.quote(data, QuoteType::Ecdsa);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PckUnavailable);
  }
  EXPECT_NO_THROW(bare.quote(data, QuoteType::Epid));
}

TEST_F(AttestTest, ForeignPckCertificateRefused) {
  auto other = world.machine();
  EXPECT_THROW(Attester(m->enclave, other->attester->pck_cert()), Error);
}

// One adversarial case per check; each time the other three pass.

TEST_F(AttestTest, CheckOneSignature) {
  for (auto t : {QuoteType::Ecdsa, QuoteType::Epid}) {
    auto q = m->attester->quote(data, t);
    q.signature[3] ^= 0x10;
    auto v = verify_quote(q, data, t, world.anchors(), world.policy());
    EXPECT_EQ(v.status, QuoteStatus::SignatureInvalid) << to_string(t);
    EXPECT_TRUE(inspect_quote_fields(q, data, world.policy()));
  }
}

TEST_F(AttestTest, CheckTwoReportData) {
  auto q = m->attester->quote(data, QuoteType::Ecdsa);
  auto other = data;
  other.back() ^= 1;
  EXPECT_TRUE(check_quote_signature(q, world.anchors()));
  EXPECT_EQ(verify_quote(q, other, QuoteType::Ecdsa, world.anchors(), world.policy()).status,
            QuoteStatus::ReportDataMismatch);
}

TEST_F(AttestTest, CheckThreeMrenclave) {
  auto modified = Bytes(tee::default_enclave_image().begin(), tee::default_enclave_image().end());
  modified[10] ^= 0x01;
  auto rogue = world.machine(tee::measure_enclave(modified));
  auto q = rogue->attester->quote(data, QuoteType::Ecdsa);
  EXPECT_TRUE(check_quote_signature(q, world.anchors()));
  EXPECT_EQ(verify_quote(q, data, QuoteType::Ecdsa, world.anchors(), world.policy()).status,
            QuoteStatus::MrenclaveMismatch);
}

TEST_F(AttestTest, CheckFourSvn) {
  auto policy = world.policy();
  policy.min_svn = 2;
  auto q = m->attester->quote(data, QuoteType::Ecdsa);
  EXPECT_EQ(verify_quote(q, data, QuoteType::Ecdsa, world.anchors(), policy).status,
            QuoteStatus::TcbOutdated);
  auto updated = world.machine(tee::measure_enclave(tee::default_enclave_image(),
                                                    tee::default_signer_identity(), 2, 1));
  EXPECT_TRUE(verify_quote(updated->attester->quote(data, QuoteType::Ecdsa), data,
                           QuoteType::Ecdsa, world.anchors(), policy));
  auto tcb = world.policy();
  tcb.min_tcb = 5;
  EXPECT_EQ(verify_quote(q, data, QuoteType::Ecdsa, world.anchors(), tcb).status,
            QuoteStatus::TcbOutdated);
}

TEST_F(AttestTest, TypeMismatchReported) {
  auto q = m->attester->quote(data, QuoteType::Epid);
  EXPECT_EQ(verify_quote(q, data, QuoteType::Ecdsa, world.anchors(), world.policy()).status,
            QuoteStatus::QuoteTypeMismatch);
}

TEST_F(AttestTest, ThousandSingleByteMutationsNoFalseAccept) {
  std::mt19937 rng(2024);
  for (auto t : {QuoteType::Ecdsa, QuoteType::Epid}) {
    auto s = m->attester->quote(data, t).serialize();
    int accepted = 0;
    for (int i = 0; i < 1000; ++i) {
      auto mutated = s;
      mutated[rng() % mutated.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      try {
        auto q = Quote::parse(mutated);
        if (verify_quote(q, data, t, world.anchors(), world.policy())) ++accepted;
      } catch (const Error&) {
      }
    }
    EXPECT_EQ(accepted, 0) << to_string(t);
  }
}

TEST_F(AttestTest, BindingSoundness) {
  std::mt19937 rng(5);
  auto q = m->attester->quote(data, QuoteType::Ecdsa);
  for (int i = 0; i < 200; ++i) {
    Bytes d(1 + rng() % 80);
    for (auto& b : d) b = static_cast<std::uint8_t>(rng());
    if (d == data) continue;
    EXPECT_FALSE(verify_quote(q, d, QuoteType::Ecdsa, world.anchors(), world.policy()));
  }
}

TEST_F(AttestTest, ServiceVerdicts) {
  auto q = m->attester->quote(data, QuoteType::Epid);
  EXPECT_EQ(world.service.verify(q).verdict, Verdict::Ok);
  auto bad = q;
  bad.signature[0] ^= 1;
  EXPECT_EQ(world.service.verify(bad).verdict, Verdict::SignatureInvalid);
  try {
    world.service.verify(m->attester->quote(data, QuoteType::Ecdsa));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WrongQuoteType);
  }
  world.service.revoke_group(world.manufacturer.epid_group().id());
  EXPECT_EQ(world.service.verify(q).verdict, Verdict::GroupRevoked);
}

TEST_F(AttestTest, ReportFromAnotherServiceRejected) {
  // Second service instance knowing the same group, different signing key.
  VerificationService impostor({world.manufacturer.epid_group()},
                               crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256));
  LocalServiceClient impostor_client(impostor);
  auto anchors = world.anchors();
  anchors.service = &impostor_client;
  auto q = m->attester->quote(data, QuoteType::Epid);
  EXPECT_EQ(check_quote_signature(q, anchors).status, QuoteStatus::SignatureInvalid);
  auto avr = impostor.verify(q);
  EXPECT_TRUE(avr.verify_signature(impostor.public_key()));
  EXPECT_FALSE(avr.verify_signature(world.service.public_key()));
  EXPECT_EQ(AttestationVerificationReport::parse(avr.serialize()).serialize(), avr.serialize());
}

TEST_F(AttestTest, ServiceWithoutGroupCannotApprove) {
  VerificationService blind({}, crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256));
  auto q = m->attester->quote(data, QuoteType::Epid);
  EXPECT_NE(blind.verify(q).verdict, Verdict::Ok);
  // Another group's secret does not approve this platform's quote.
  VerificationService other({EpidGroup::generate(world.manufacturer.epid_group().id())},
                            crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256));
  EXPECT_EQ(other.verify(q).verdict, Verdict::SignatureInvalid);
}

TEST_F(AttestTest, CachingClientMemoizesOkOnly) {
  CachingServiceClient cache(world.service_client, cert::kDay);
  auto q = m->attester->quote(data, QuoteType::Epid);
  cache.verify(q);
  cache.verify(q);
  EXPECT_EQ(cache.upstream_calls(), 1u);
  auto bad = q;
  bad.signature[0] ^= 1;
  cache.verify(bad);
  cache.verify(bad);
  EXPECT_EQ(cache.upstream_calls(), 3u);
}

TEST_F(AttestTest, CachingClientExpires) {
  CachingServiceClient cache(world.service_client, 1);
  auto q = m->attester->quote(data, QuoteType::Epid);
  cache.verify(q);
  std::this_thread::sleep_for(std::chrono::milliseconds(2100));
  cache.verify(q);
  EXPECT_EQ(cache.upstream_calls(), 2u);
}

TEST_F(AttestTest, PckCacheEntries) {
  Org org(world);
  Node n(world);
  org.sanction(n);
  auto e = fetch_pck_cert(n.platform_id(), org.client, org.mpk);
  EXPECT_EQ(e.pck_cert, *n.machine->attester->pck_cert());
  EXPECT_EQ(PckCacheEntry::parse(e.serialize()).serialize(), e.serialize());

  auto tampered = e;
  tampered.platform_id[0] ^= 1;
  EXPECT_FALSE(tampered.verify(org.mpk));

  Node stranger(world);
  try {
    fetch_pck_cert(stranger.platform_id(), org.client, org.mpk);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::NotFound);
  }
  org.publish_foreign(stranger);
  try {
    fetch_pck_cert(stranger.platform_id(), org.client, org.mpk);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::OrgSignatureInvalid);
  }
  org.publish_unsigned(stranger);
  EXPECT_THROW(fetch_pck_cert(stranger.platform_id(), org.client, org.mpk), Error);
}

TEST_F(AttestTest, PckCacheKeepsOneEntryPerPlatformAndPersists) {
  TempDir dir;
  Org org(world);
  Node a(world), b(world);
  {
    PckCache cache(dir / "pck.bin");
    auto draft = pck_entry_draft(*a.machine->attester->pck_cert());
    cache.put(draft);
    cache.put(sign_pck_cache({draft}, org.admin.token, org.msk, kPin).front());
    cache.put(pck_entry_draft(*b.machine->attester->pck_cert()));
    EXPECT_EQ(cache.size(), 2u);
  }
  PckCache reloaded(dir / "pck.bin");
  EXPECT_EQ(reloaded.size(), 2u);
  auto e = reloaded.get(a.platform_id());
  ASSERT_TRUE(e);
  EXPECT_TRUE(e->verify(org.mpk));
  EXPECT_FALSE(reloaded.get(b.platform_id())->verify(org.mpk));
}

TEST_F(AttestTest, MskStaysInTheAdminVault) {
  Org org(world);
  try {
    org.admin.token.export_private(org.msk, kPin);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonExtractable);
  }
}
