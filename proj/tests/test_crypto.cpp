#include <gtest/gtest.h>

#include <random>
#include <set>

#include "blindvault/audit_log.hpp"
#include "blindvault/crypto.hpp"
#include "blindvault/wire.hpp"

using namespace blindvault;

// Expected digests below were computed once with Python's hashlib/hmac and
// frozen here; they are not produced by this code base.

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(to_hex(crypto::sha256(as_bytes("abc"))),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(to_hex(crypto::sha256({})),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(to_hex(crypto::sha256(
                as_bytes("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"))),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Sha256, IncrementalMatchesOneShot) {
  std::mt19937 rng(7);
  for (int i = 0; i < 50; ++i) {
    Bytes data(rng() % 3000);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    std::size_t cut = data.empty() ? 0 : rng() % data.size();
    crypto::Sha256 h;
    h.update(ByteView(data).first(cut)).update(ByteView(data).subspan(cut));
    EXPECT_EQ(h.finish(), crypto::sha256(data));
  }
}

TEST(Hmac, Rfc4231Case2) {
  EXPECT_EQ(to_hex(crypto::hmac_sha256(as_bytes("Jefe"), as_bytes("what do ya want for nothing?"))),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
}

TEST(Hkdf, Rfc5869Case1) {
  Bytes ikm(22, 0x0b);
  Bytes salt;
  for (int i = 0; i < 13; ++i) salt.push_back(static_cast<std::uint8_t>(i));
  auto info_bytes = from_hex("f0f1f2f3f4f5f6f7f8f9");
  std::string info(info_bytes.begin(), info_bytes.end());
  auto okm = crypto::hkdf_sha256(ikm, salt, info, 42);
  EXPECT_EQ(to_hex(crypto::view(okm)),
            "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865");
}

TEST(Pbkdf2, Sha256Vector) {
  auto k = crypto::pbkdf2_sha256("password", as_bytes("salt"), 4096, 32);
  EXPECT_EQ(to_hex(crypto::view(k)),
            "c5e478d59288c841aa530db6845c4c8d962893a001ce4e11a4963873aa98134a");
}

TEST(Aead, RoundTripAndEveryBitFlipRejected) {
  auto key = crypto::random_bytes(crypto::kAeadKeySize);
  auto nonce = crypto::random_bytes(crypto::kAeadNonceSize);
  auto pt = to_bytes("attack at dawn");
  auto sealed = crypto::aead_seal(key, nonce, as_bytes("aad"), pt);
  ASSERT_EQ(sealed.size(), pt.size() + crypto::kAeadTagSize);
  auto opened = crypto::aead_open(key, nonce, as_bytes("aad"), sealed);
  ASSERT_TRUE(opened);
  EXPECT_EQ(Bytes(opened->begin(), opened->end()), pt);
  EXPECT_FALSE(crypto::aead_open(key, nonce, as_bytes("aaD"), sealed));
  for (std::size_t i = 0; i < sealed.size() * 8; ++i) {
    auto m = sealed;
    m[i / 8] ^= static_cast<std::uint8_t>(1u << (i % 8));
    EXPECT_FALSE(crypto::aead_open(key, nonce, as_bytes("aad"), m)) << i;
  }
}

TEST(Keys, SignVerifyForEachSigningAlgorithm) {
  for (auto alg : {crypto::KeyAlgorithm::Rsa2048, crypto::KeyAlgorithm::EcdsaP256}) {
    auto k = crypto::PrivateKey::generate(alg);
    auto sig = k.sign(as_bytes("msg"));
    EXPECT_TRUE(crypto::verify_signature(k.public_der(), as_bytes("msg"), sig));
    EXPECT_FALSE(crypto::verify_signature(k.public_der(), as_bytes("msh"), sig));
    auto again = crypto::PrivateKey::from_pkcs8(crypto::view(k.to_pkcs8()), alg);
    EXPECT_EQ(again.public_der(), k.public_der());
  }
  auto dh = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdhP256);
  EXPECT_THROW(dh.sign(as_bytes("x")), Error);
}

TEST(Keys, EcdhAgreesAndSeedIsDeterministic) {
  auto a = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdhP256);
  auto b = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdhP256);
  EXPECT_EQ(a.ecdh(b.public_der()), b.ecdh(a.public_der()));
  Bytes seed(32, 0x42);
  EXPECT_EQ(crypto::PrivateKey::p256_from_seed(seed).public_der(),
            crypto::PrivateKey::p256_from_seed(seed).public_der());
  seed[0] ^= 1;
  EXPECT_NE(crypto::PrivateKey::p256_from_seed(seed).public_der(),
            crypto::PrivateKey::p256_from_seed(Bytes(32, 0x42)).public_der());
}

TEST(Keys, PrivateKeyEncodingIsPkcs8) {
  // PrivateKeyInfo header for an unencrypted P-256 key with embedded
  // public point (RFC 5208 / RFC 5915 layout, fixed length 0x87).
  const auto ec_prefix = from_hex(
      "308187020100301306072a8648ce3d020106082a8648ce3d030107046d306b0201010420");
  auto ec = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdsaP256).to_pkcs8();
  ASSERT_GE(ec.size(), ec_prefix.size());
  EXPECT_TRUE(std::equal(ec_prefix.begin(), ec_prefix.end(), ec.begin()));
  EXPECT_EQ(ec.size(), 0x8au);
  // rsaEncryption algorithm identifier right after the version field.
  const auto rsa_alg = from_hex("020100300d06092a864886f70d0101010500");
  auto rsa = crypto::PrivateKey::generate(crypto::KeyAlgorithm::Rsa2048).to_pkcs8();
  EXPECT_EQ(rsa[0], 0x30);
  EXPECT_TRUE(std::equal(rsa_alg.begin(), rsa_alg.end(), rsa.begin() + 4));
  auto back = crypto::PrivateKey::from_pkcs8(crypto::view(rsa), crypto::KeyAlgorithm::Rsa2048);
  EXPECT_EQ(back.to_pkcs8(), rsa);
}

TEST(Keys, InvalidCurvePointRejected) {
  auto good = crypto::PrivateKey::generate(crypto::KeyAlgorithm::EcdhP256).public_der();
  EXPECT_NO_THROW(crypto::check_p256_public(good));
  auto bad = good;
  bad[bad.size() - 1] ^= 0x01;  // y no longer on the curve
  try {
    crypto::check_p256_public(bad);
    FAIL() << "accepted off-curve point";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCurvePoint);
  }
}

TEST(Bytes, HexAndBase64) {
  Bytes b;
  for (int i = 0; i < 256; i += 17) b.push_back(static_cast<std::uint8_t>(i));
  EXPECT_EQ(base64_encode(b), "ABEiM0RVZneImaq7zN3u/w==");
  EXPECT_EQ(base64_decode("ABEiM0RVZneImaq7zN3u/w=="), b);
  EXPECT_EQ(to_hex(b), "00112233445566778899aabbccddeeff");
  EXPECT_EQ(from_hex("00112233445566778899AABBCCDDEEFF"), b);
  EXPECT_THROW(from_hex("abc"), Error);
  EXPECT_THROW(from_hex("zz"), Error);
}

TEST(Bytes, RandomRoundTrips) {
  std::mt19937 rng(11);
  for (int i = 0; i < 200; ++i) {
    Bytes b(rng() % 100);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(from_hex(to_hex(b)), b);
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
}

TEST(Bytes, WriterReaderAndUnderrun) {
  ByteWriter w;
  w.u8(1).u16(0x0203).u32(0x04050607).u64(0x08090a0b0c0d0e0fULL).str("hi");
  EXPECT_EQ(to_hex(w.bytes()), "0102030405060708090a0b0c0d0e0f000000026869");
  ByteReader r(w.bytes());
  EXPECT_EQ(r.u8(), 1);
  EXPECT_EQ(r.u16(), 0x0203);
  EXPECT_EQ(r.u32(), 0x04050607u);
  EXPECT_EQ(r.u64(), 0x08090a0b0c0d0e0fULL);
  EXPECT_EQ(r.str(), "hi");
  r.expect_end();
  Bytes short_blob{0, 0, 0, 9, 'a', 'b'};
  ByteReader short_r(short_blob);
  EXPECT_THROW(short_r.blob(), Error);
}

TEST(Bytes, ContainsAndConstantTimeEqual) {
  EXPECT_TRUE(contains(as_bytes("hello world"), as_bytes("o w")));
  EXPECT_FALSE(contains(as_bytes("hello"), as_bytes("hello!")));
  EXPECT_TRUE(equal_ct(as_bytes("abc"), as_bytes("abc")));
  EXPECT_FALSE(equal_ct(as_bytes("abc"), as_bytes("abd")));
  EXPECT_FALSE(equal_ct(as_bytes("abc"), as_bytes("ab")));
}

TEST(Wire, FrameEncodingIsBitExact) {
  wire::Frame f;
  f.type = wire::MsgType::CertFetch;
  for (int i = 0; i < 16; ++i) f.session[i] = static_cast<std::uint8_t>(i);
  f.payload = to_bytes("hi");
  auto enc = f.encode();
  EXPECT_EQ(to_hex(enc), "424650310100000102030405060708090a0b0c0d0e0f000000026869");
  auto back = wire::decode(enc);
  EXPECT_EQ(back.type, f.type);
  EXPECT_EQ(back.session, f.session);
  EXPECT_EQ(back.payload, f.payload);
}

TEST(Wire, HeaderLimitsAndMagic) {
  wire::Frame f;
  f.type = wire::MsgType::CertFetch;
  auto enc = f.encode();
  auto bad = enc;
  bad[0] = 'X';
  try {
    wire::parse_header(ByteView(bad).first(wire::kHeaderSize));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Malformed);
  }
  auto big = enc;
  std::uint32_t len = wire::kMaxPayload + 1;
  for (int i = 0; i < 4; ++i) big[22 + i] = static_cast<std::uint8_t>(len >> (24 - 8 * i));
  try {
    wire::parse_header(ByteView(big).first(wire::kHeaderSize));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FrameTooLarge);
  }
  std::uint32_t max = wire::kMaxPayload;
  for (int i = 0; i < 4; ++i) big[22 + i] = static_cast<std::uint8_t>(max >> (24 - 8 * i));
  EXPECT_EQ(wire::parse_header(ByteView(big).first(wire::kHeaderSize)).length, max);
}

TEST(Wire, TypeTagsAreDistinctAndNamed) {
  std::set<std::uint16_t> seen;
  for (auto t : wire::all_message_types()) {
    EXPECT_TRUE(seen.insert(static_cast<std::uint16_t>(t)).second);
    EXPECT_FALSE(wire::to_string(t).empty());
  }
  EXPECT_EQ(seen.size(), 25u);
}

TEST(Wire, ErrorBodyRoundTrip) {
  wire::ErrorBody b{ErrorCode::PckRejected, "nope", "check-sender-pck"};
  auto d = wire::ErrorBody::decode(b.encode());
  EXPECT_EQ(d.code, b.code);
  EXPECT_EQ(d.message, b.message);
  EXPECT_EQ(d.step, b.step);
  auto f = wire::error_frame({}, ErrorCode::PckRejected, "nope", "s");
  try {
    wire::throw_if_error(f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PckRejected);
    EXPECT_EQ(e.step(), "s");
  }
}

TEST(Wire, PipeDeliversInOrderAndCloses) {
  auto [a, b] = wire::make_pipe();
  for (int i = 0; i < 5; ++i) {
    wire::Frame f;
    f.type = wire::MsgType::CertFetch;
    f.payload = {static_cast<std::uint8_t>(i)};
    a->send(f);
  }
  a->close();
  for (int i = 0; i < 5; ++i) {
    auto f = b->recv();
    ASSERT_TRUE(f);
    EXPECT_EQ(f->payload[0], i);
  }
  EXPECT_FALSE(b->recv());
}

TEST(CounterRecord, LayoutMatchesIndependentEncoding) {
  keyvault::CounterRecord c;
  c.counter = 258;
  c.head.fill(0xab);
  EXPECT_EQ(to_hex(c.serialize()),
            "0000000000000102abababababababababababababababababababababababababababababababab");
  EXPECT_EQ(keyvault::CounterRecord::parse(c.serialize()), c);
}

TEST(Errors, ExitCodesAreDistinctForOperatorFacingErrors) {
  std::set<int> codes;
  for (auto c : {ErrorCode::Usage, ErrorCode::BadConfig, ErrorCode::AuthFailure,
                 ErrorCode::VaultLocked, ErrorCode::RollbackDetected, ErrorCode::ChainCorrupted,
                 ErrorCode::IncompleteOperation, ErrorCode::NonExtractable,
                 ErrorCode::CAQuoteInvalid, ErrorCode::IASRejected, ErrorCode::CertIssuerMismatch,
                 ErrorCode::QuoteInvalid, ErrorCode::PeerQuoteInvalid,
                 ErrorCode::PeerSignatureInvalid, ErrorCode::DecryptFailure,
                 ErrorCode::PckRejected, ErrorCode::Unavailable}) {
    int x = exit_code_for(c);
    EXPECT_NE(x, 0);
    EXPECT_TRUE(codes.insert(x).second) << to_string(c);
  }
  EXPECT_EQ(exit_code_for(ErrorCode::Ok), 0);
  EXPECT_EQ(exit_code_for(ErrorCode::PckRejected), 27);
}
