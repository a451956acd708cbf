#include <gtest/gtest.h>

#include <random>

#include "blindvault/audit_log.hpp"
#include "blindvault/crypto.hpp"

using namespace blindvault;
using namespace blindvault::keyvault;

namespace {

AuditLog build(std::size_t n, std::mt19937& rng) {
  static const char* kApis[] = {"sign", "generate_keypair", "export_private", "attach_certificate"};
  AuditLog log;
  for (std::size_t i = 0; i < n; ++i) {
    auto p = crypto::sha256(as_bytes(std::to_string(rng())));
    log.append(log.make_next(kApis[rng() % 4], p, 1'700'000'000'000 + static_cast<std::int64_t>(i)));
  }
  return log;
}

CounterRecord counter_of(const AuditLog& log) { return {log.size(), log.head()}; }

/// Head recomputed from the entry definition: hash of the previous entry
/// becomes the next prev_hash.
Hash32 recompute_head(const std::vector<LogEntry>& entries) {
  Hash32 prev{};
  for (const auto& e : entries) {
    if (e.prev_hash != prev) return {};
    prev = e.hash();
  }
  return prev;
}

}  // namespace

TEST(AuditLog, EmptyLogHasZeroHead) {
  AuditLog log;
  EXPECT_EQ(log.head(), Hash32{});
  EXPECT_TRUE(verify_chain(log.entries(), CounterRecord{}));
}

TEST(AuditLog, IntactLogsVerify) {
  std::mt19937 rng(1);
  for (std::size_t n : {1u, 2u, 3u, 17u, 200u}) {
    auto log = build(n, rng);
    EXPECT_EQ(recompute_head(log.entries()), log.head());
    auto c = verify_chain(log.entries(), counter_of(log));
    EXPECT_TRUE(c) << c.detail;
    EXPECT_EQ(c.entries, n);
  }
}

TEST(AuditLog, TruncatedByOneIsRollback) {
  std::mt19937 rng(2);
  auto log = build(10, rng);
  auto counter = counter_of(log);
  log.pop_back();
  EXPECT_EQ(verify_chain(log.entries(), counter).status, LogStatus::RollbackDetected);
}

TEST(AuditLog, EveryStrictPrefixIsRollback) {
  std::mt19937 rng(3);
  auto log = build(60, rng);
  auto counter = counter_of(log);
  for (std::size_t k = 0; k < log.size(); ++k) {
    std::vector<LogEntry> prefix(log.entries().begin(), log.entries().begin() + k);
    EXPECT_EQ(verify_chain(prefix, counter).status, LogStatus::RollbackDetected) << k;
  }
}

TEST(AuditLog, CounterBehindLogIsRollback) {
  std::mt19937 rng(4);
  auto log = build(5, rng);
  CounterRecord old{3, AuditLog({log.entries().begin(), log.entries().begin() + 3}).head()};
  EXPECT_EQ(verify_chain(log.entries(), old).status, LogStatus::RollbackDetected);
}

TEST(AuditLog, AnyFieldMutationOfAnyNonFinalEntryIsCorruption) {
  std::mt19937 rng(5);
  auto log = build(12, rng);
  auto counter = counter_of(log);
  for (std::size_t i = 0; i + 1 < log.size(); ++i) {
    for (int field = 0; field < 5; ++field) {
      auto entries = log.entries();
      auto& e = entries[i];
      switch (field) {
        case 0: e.timestamp_ms += 1; break;
        case 1: e.api_name += "x"; break;
        case 2: e.params_hash[rng() % 32] ^= 1; break;
        case 3: e.prev_hash[rng() % 32] ^= 1; break;
        case 4: e.seq += 1; break;
      }
      EXPECT_EQ(verify_chain(entries, counter).status, LogStatus::ChainCorrupted)
          << "entry " << i << " field " << field;
    }
  }
}

TEST(AuditLog, MutatedLastEntryDivergesFromCounter) {
  std::mt19937 rng(6);
  auto log = build(4, rng);
  auto counter = counter_of(log);
  auto entries = log.entries();
  entries.back().api_name = "sign";
  entries.back().params_hash[0] ^= 0xff;
  EXPECT_EQ(verify_chain(entries, counter).status, LogStatus::ChainCorrupted);
}

TEST(AuditLog, ReorderedOrDroppedMiddleEntryIsCorruption) {
  std::mt19937 rng(7);
  auto log = build(8, rng);
  auto counter = counter_of(log);
  auto swapped = log.entries();
  std::swap(swapped[2], swapped[3]);
  EXPECT_EQ(verify_chain(swapped, counter).status, LogStatus::ChainCorrupted);
  auto dropped = log.entries();
  dropped.erase(dropped.begin() + 4);
  EXPECT_EQ(verify_chain(dropped, counter).status, LogStatus::ChainCorrupted);
}

TEST(AuditLog, PendingIntentExplainsOneEntryGapOnly) {
  std::mt19937 rng(8);
  auto log = build(6, rng);
  auto next = log.make_next("sign", crypto::sha256(as_bytes("m")), 1);
  CounterRecord counter{log.size() + 1, next.hash()};
  EXPECT_EQ(verify_chain(log.entries(), counter, next).status, LogStatus::IncompleteOperation);
  EXPECT_EQ(verify_chain(log.entries(), counter).status, LogStatus::RollbackDetected);
  auto forged = next;
  forged.api_name = "export_private";
  EXPECT_EQ(verify_chain(log.entries(), counter, forged).status, LogStatus::RollbackDetected);
  // A stale intent cannot excuse an older snapshot.
  std::vector<LogEntry> older(log.entries().begin(), log.entries().end() - 1);
  EXPECT_EQ(verify_chain(older, counter, next).status, LogStatus::RollbackDetected);
}

TEST(AuditLog, ExportParseRoundTrip) {
  std::mt19937 rng(9);
  auto log = build(30, rng);
  auto text = log.export_lines();
  auto back = AuditLog::parse_lines("# exported\n" + text);
  EXPECT_EQ(back.entries(), log.entries());
  EXPECT_TRUE(verify_links(back.entries()));
  for (const auto& e : log.entries()) EXPECT_EQ(LogEntry::from_line(e.to_line()), e);
}

TEST(AuditLog, ExportedRecordWithEditedColumnRejected) {
  std::mt19937 rng(10);
  auto log = build(3, rng);
  auto line = log.entries()[1].to_line();
  auto pos = line.find("\t");
  auto edited = line;
  edited[pos + 1] = edited[pos + 1] == '9' ? '8' : '9';
  try {
    LogEntry::from_line(edited);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ChainCorrupted);
  }
}

TEST(AuditLog, EntryBinaryRoundTrip) {
  std::mt19937 rng(11);
  auto log = build(5, rng);
  for (const auto& e : log.entries()) {
    ByteWriter w;
    e.write(w);
    ByteReader r(w.bytes());
    EXPECT_EQ(LogEntry::read(r), e);
    EXPECT_TRUE(r.empty());
  }
}

TEST(LogDiff, IdenticalMultisetsAreConsistent) {
  std::mt19937 rng(12);
  auto a = build(20, rng);
  // Same calls, different node-local seq and timestamps.
  AuditLog b;
  for (auto it = a.entries().rbegin(); it != a.entries().rend(); ++it) {
    b.append(b.make_next(it->api_name, it->params_hash, 42));
  }
  auto d = diff_logs(a, b);
  EXPECT_TRUE(d.consistent());
}

TEST(LogDiff, ReportsMissingExtraAndRepeated) {
  AuditLog origin, cdn;
  auto h = [](const char* s) { return crypto::sha256(as_bytes(s)); };
  origin.append(origin.make_next("issue_request", h("csr1"), 1));
  origin.append(origin.make_next("issue_request", h("csr2"), 2));
  cdn.append(cdn.make_next("issue_request", h("csr1"), 1));
  cdn.append(cdn.make_next("issue_request", h("csr1"), 2));
  cdn.append(cdn.make_next("sign", h("m"), 3));
  auto d = diff_logs(origin, cdn, {"issue_request"});
  EXPECT_FALSE(d.consistent());
  ASSERT_EQ(d.only_in_a.size(), 1u);
  EXPECT_EQ(d.only_in_a[0].params_hash, h("csr2"));
  ASSERT_EQ(d.only_in_b.size(), 1u);
  EXPECT_EQ(d.only_in_b[0].params_hash, h("csr1"));
  EXPECT_EQ(d.repeated_in_b.size(), 1u);
  EXPECT_TRUE(d.repeated_in_a.empty());
  EXPECT_EQ(diff_logs(origin, cdn).only_in_b.size(), 2u);
}
