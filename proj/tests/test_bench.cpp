#include <gtest/gtest.h>

#include <algorithm>
#include <nlohmann/json.hpp>
#include <random>

#include "blindvault/bench.hpp"
#include "fixture.hpp"

using namespace blindvault;
using namespace blindvault::bench;

namespace {

double sort_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

const ReferencePoint& ref(Operation op, Mode m) {
  for (const auto& p : reference_points()) {
    if (p.operation == op && p.mode == m) return p;
  }
  throw std::logic_error("missing reference point");
}

}  // namespace

TEST(Median, MatchesSortOracle) {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> dist(0.0, 100.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> v(1 + rng() % 60);
    for (auto& x : v) x = rng() % 3 == 0 ? std::floor(dist(rng)) : dist(rng);
    EXPECT_DOUBLE_EQ(median(v), sort_median(v));
  }
}

TEST(Median, SmallCases) {
  EXPECT_DOUBLE_EQ(median({5}), 5);
  EXPECT_DOUBLE_EQ(median({3, 1}), 2);
  EXPECT_DOUBLE_EQ(median({9, 1, 5}), 5);
  EXPECT_DOUBLE_EQ(median({4, 4, 4, 4}), 4);
  EXPECT_THROW(median({}), Error);
}

TEST(Summarize, SingleRunHasEqualStatistics) {
  auto r = summarize(Operation::SignRsa2048, Mode::Vault, {0.8});
  EXPECT_EQ(r.runs, 1u);
  EXPECT_DOUBLE_EQ(r.min_ms, 0.8);
  EXPECT_DOUBLE_EQ(r.median_ms, 0.8);
  EXPECT_DOUBLE_EQ(r.max_ms, 0.8);
  EXPECT_THROW(summarize(Operation::SignRsa2048, Mode::Vault, {}), Error);
}

TEST(Summarize, OrderedStatistics) {
  std::mt19937 rng(5);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = (rng() % 100000) / 100.0;
    auto r = summarize(Operation::KeygenRsa2048, Mode::Direct, v);
    EXPECT_EQ(r.runs, v.size());
    EXPECT_DOUBLE_EQ(r.min_ms, *std::min_element(v.begin(), v.end()));
    EXPECT_DOUBLE_EQ(r.max_ms, *std::max_element(v.begin(), v.end()));
    EXPECT_LE(r.min_ms, r.median_ms);
    EXPECT_LE(r.median_ms, r.max_ms);
    EXPECT_EQ(r.samples_ms, v);
  }
}

TEST(Reference, PublishedFigures) {
  const auto& kv = ref(Operation::KeygenRsa2048, Mode::Vault);
  const auto& kd = ref(Operation::KeygenRsa2048, Mode::Direct);
  EXPECT_DOUBLE_EQ(kv.min_ms, 74);
  EXPECT_DOUBLE_EQ(kv.median_ms, 75);
  EXPECT_DOUBLE_EQ(kv.max_ms, 77);
  EXPECT_DOUBLE_EQ(kd.min_ms, 74.5);
  EXPECT_DOUBLE_EQ(kd.median_ms, 76);
  EXPECT_DOUBLE_EQ(kd.max_ms, 79);
  const auto& sv = ref(Operation::SignRsa2048, Mode::Vault);
  const auto& sd = ref(Operation::SignRsa2048, Mode::Direct);
  EXPECT_DOUBLE_EQ(sv.median_ms, 0.871);
  EXPECT_DOUBLE_EQ(sd.median_ms, 0.67);
  // Sign overhead about 30%, keygen near parity.
  EXPECT_NEAR(sv.median_ms / sd.median_ms, 1.30, 0.01);
  EXPECT_NEAR(kv.median_ms / kd.median_ms, 0.987, 0.001);
  const auto& iv = ref(Operation::IssuanceE2E, Mode::Vault);
  const auto& id = ref(Operation::IssuanceE2E, Mode::Direct);
  EXPECT_DOUBLE_EQ(iv.median_ms, 4273);
  EXPECT_DOUBLE_EQ(id.median_ms, 4235);
}

TEST(Names, CanonicalAndShort) {
  EXPECT_EQ(operation_from_string("SIGN_RSA2048"), Operation::SignRsa2048);
  EXPECT_EQ(operation_from_string("sign"), Operation::SignRsa2048);
  EXPECT_EQ(operation_from_string("keygen"), Operation::KeygenRsa2048);
  EXPECT_EQ(operation_from_string("ISSUANCE_E2E"), Operation::IssuanceE2E);
  EXPECT_EQ(mode_from_string("VAULT"), Mode::Vault);
  EXPECT_EQ(mode_from_string("direct"), Mode::Direct);
  EXPECT_THROW(operation_from_string("nope"), Error);
  EXPECT_THROW(mode_from_string("nope"), Error);
}

TEST(Harness, ModesDoIdenticalCryptographicWork) {
  bvtest::TempDir dir;
  BenchOptions o;
  o.runs = 3;
  o.warmup = 1;
  o.work_dir = dir.path();
  o.pin_iterations = 1000;
  Harness h(o);
  for (auto op : {Operation::KeygenRsa2048, Operation::SignRsa2048, Operation::IssuanceE2E}) {
    auto v = h.run(op, Mode::Vault);
    auto d = h.run(op, Mode::Direct);
    EXPECT_EQ(v.runs, 3u);
    EXPECT_EQ(d.runs, 3u);
    EXPECT_EQ(v.samples_ms.size(), 3u);
    EXPECT_EQ(v.algorithm, d.algorithm) << to_string(op);
    EXPECT_EQ(v.public_key_bytes, d.public_key_bytes) << to_string(op);
    EXPECT_GT(v.public_key_bytes, 0u);
    EXPECT_GT(v.min_ms, 0.0);
    EXPECT_GT(overhead_ratio(v, d), 0.0);
  }
}

TEST(Harness, InterleavedRunMatchesSeparateRuns) {
  bvtest::TempDir dir;
  BenchOptions o;
  o.runs = 4;
  o.warmup = 1;
  o.work_dir = dir.path();
  o.pin_iterations = 1000;
  Harness h(o);
  for (auto op : {Operation::KeygenRsa2048, Operation::SignRsa2048, Operation::IssuanceE2E}) {
    auto [v, d] = h.run_both(op);
    EXPECT_EQ(v.mode, Mode::Vault);
    EXPECT_EQ(d.mode, Mode::Direct);
    EXPECT_EQ(v.runs, 4u);
    EXPECT_EQ(d.runs, 4u);
    auto single = h.run(op, Mode::Direct);
    EXPECT_EQ(v.algorithm, single.algorithm);
    EXPECT_EQ(v.public_key_bytes, d.public_key_bytes);
    EXPECT_EQ(d.public_key_bytes, single.public_key_bytes);
  }
}

TEST(Harness, RsaOperationsUseRsa2048) {
  bvtest::TempDir dir;
  BenchOptions o;
  o.runs = 1;
  o.warmup = 0;
  o.work_dir = dir.path();
  o.pin_iterations = 1000;
  Harness h(o);
  auto r = h.run(Operation::SignRsa2048, Mode::Direct);
  EXPECT_EQ(r.algorithm, crypto::KeyAlgorithm::Rsa2048);
  EXPECT_EQ(r.public_key_bytes,
            crypto::PrivateKey::generate(crypto::KeyAlgorithm::Rsa2048).public_der().size());
  EXPECT_DOUBLE_EQ(r.min_ms, r.max_ms);
}

TEST(Format, TableAndRecords) {
  auto v = summarize(Operation::SignRsa2048, Mode::Vault, {1.0, 2.0, 3.0});
  auto d = summarize(Operation::SignRsa2048, Mode::Direct, {0.5, 1.0, 1.5});
  auto table = format_table({v, d});
  EXPECT_NE(table.find("median_ms"), std::string::npos);
  EXPECT_NE(table.find("SIGN_RSA2048 VAULT/DIRECT median ratio: 2.000"), std::string::npos);
  EXPECT_NE(table.find("(reference 1.300)"), std::string::npos);
  auto records = format_records({v, d});
  std::size_t lines = 0;
  std::size_t pos = 0;
  while ((pos = records.find('\n', pos)) != std::string::npos) {
    ++pos;
    ++lines;
  }
  EXPECT_EQ(lines, 2u);
  auto first = nlohmann::json::parse(records.substr(0, records.find('\n')));
  EXPECT_EQ(first["operation"], "SIGN_RSA2048");
  EXPECT_EQ(first["mode"], "VAULT");
  EXPECT_EQ(first["runs"], 3);
  EXPECT_DOUBLE_EQ(first["median_ms"].get<double>(), 2.0);
}
