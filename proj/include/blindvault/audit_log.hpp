#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blindvault/bytes.hpp"

namespace blindvault::keyvault {

struct LogEntry {
  std::uint64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  std::string api_name;
  Hash32 params_hash{};
  Hash32 prev_hash{};

  Hash32 hash() const;
  void write(ByteWriter& w) const;
  static LogEntry read(ByteReader& r);

  /// Tab-separated export record; the last column is the entry hash.
  std::string to_line() const;
  /// Parses a record and checks its trailing hash column.
  static LogEntry from_line(std::string_view line);

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

/// Contents of the monotonic counter file: 8-byte big-endian count followed
/// by the 32-byte head hash.
struct CounterRecord {
  std::uint64_t counter = 0;
  Hash32 head{};

  static constexpr std::size_t kSize = 40;
  Bytes serialize() const;
  static CounterRecord parse(ByteView data);
  friend bool operator==(const CounterRecord&, const CounterRecord&) = default;
};

enum class LogStatus : std::uint8_t {
  Ok = 0,
  RollbackDetected,
  ChainCorrupted,
  IncompleteOperation,
};

std::string_view to_string(LogStatus s);

struct LogCheck {
  LogStatus status = LogStatus::Ok;
  std::uint64_t entries = 0;
  std::string detail;

  bool ok() const { return status == LogStatus::Ok; }
  explicit operator bool() const { return ok(); }
};

/// Hash-chained API log. The head of an empty log is all zeros.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(std::vector<LogEntry> entries) : entries_(std::move(entries)) {}

  const std::vector<LogEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Hash32 head() const { return entries_.empty() ? Hash32{} : entries_.back().hash(); }

  LogEntry make_next(std::string api_name, const Hash32& params_hash,
                     std::int64_t timestamp_ms) const;
  void append(LogEntry e) { entries_.push_back(std::move(e)); }
  void pop_back() { entries_.pop_back(); }

  std::string export_lines() const;
  static AuditLog parse_lines(std::string_view text);

 private:
  std::vector<LogEntry> entries_;
};

/// Checks chain integrity first (sequence numbers, prev links), then the
/// relation to the counter. A `pending` intent record that exactly explains
/// a one-entry gap turns RollbackDetected into IncompleteOperation.
LogCheck verify_chain(std::span<const LogEntry> entries, const CounterRecord& counter,
                      const std::optional<LogEntry>& pending = std::nullopt);

/// Chain integrity alone, for exported logs without a counter.
LogCheck verify_links(std::span<const LogEntry> entries);

/// Differences between two exported logs, for spotting misuse.
struct LogDiff {
  std::vector<LogEntry> only_in_a;
  std::vector<LogEntry> only_in_b;
  /// Entries whose (api_name, params_hash) already appeared earlier in the same log.
  std::vector<LogEntry> repeated_in_a;
  std::vector<LogEntry> repeated_in_b;

  bool consistent() const { return only_in_a.empty() && only_in_b.empty(); }
};

/// Compares logs by (api_name, params_hash) multiset; seq and timestamps are
/// node-local and ignored.
LogDiff diff_logs(const AuditLog& a, const AuditLog& b,
                  const std::vector<std::string>& api_filter = {});

}  // namespace blindvault::keyvault
