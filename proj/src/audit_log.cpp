#include "blindvault/audit_log.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "blindvault/crypto.hpp"

namespace blindvault::keyvault {

Hash32 LogEntry::hash() const {
  ByteWriter w;
  write(w);
  return crypto::sha256(w.bytes());
}

void LogEntry::write(ByteWriter& w) const {
  w.u64(seq).i64(timestamp_ms).str(api_name).raw(params_hash).raw(prev_hash);
}

LogEntry LogEntry::read(ByteReader& r) {
  LogEntry e;
  e.seq = r.u64();
  e.timestamp_ms = r.i64();
  e.api_name = r.str();
  e.params_hash = r.fixed<32>();
  e.prev_hash = r.fixed<32>();
  return e;
}

std::string LogEntry::to_line() const {
  std::ostringstream out;
  out << seq << '\t' << timestamp_ms << '\t' << api_name << '\t' << to_hex(params_hash) << '\t'
      << to_hex(prev_hash) << '\t' << to_hex(hash());
  return out.str();
}

LogEntry LogEntry::from_line(std::string_view line) {
  std::vector<std::string> cols;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      cols.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cols.push_back(std::move(cur));
  if (cols.size() != 6) throw Error(ErrorCode::Malformed, "log record needs 6 columns");
  LogEntry e;
  try {
    e.seq = std::stoull(cols[0]);
    e.timestamp_ms = std::stoll(cols[1]);
  } catch (const std::exception&) {
    throw Error(ErrorCode::Malformed, "bad numeric column in log record");
  }
  e.api_name = cols[2];
  e.params_hash = fixed_from_hex<32>(cols[3]);
  e.prev_hash = fixed_from_hex<32>(cols[4]);
  if (to_hex(e.hash()) != cols[5]) {
    throw Error(ErrorCode::ChainCorrupted, "log record " + cols[0] + " hash column mismatch");
  }
  return e;
}

Bytes CounterRecord::serialize() const {
  ByteWriter w;
  w.u64(counter).raw(head);
  return std::move(w).bytes();
}

CounterRecord CounterRecord::parse(ByteView data) {
  if (data.size() != kSize) throw Error(ErrorCode::Malformed, "counter record must be 40 bytes");
  ByteReader r(data);
  CounterRecord c;
  c.counter = r.u64();
  c.head = r.fixed<32>();
  return c;
}

std::string_view to_string(LogStatus s) {
  switch (s) {
    case LogStatus::Ok: return "Ok";
    case LogStatus::RollbackDetected: return "RollbackDetected";
    case LogStatus::ChainCorrupted: return "ChainCorrupted";
    case LogStatus::IncompleteOperation: return "IncompleteOperation";
  }
  return "Unknown";
}

LogEntry AuditLog::make_next(std::string api_name, const Hash32& params_hash,
                             std::int64_t timestamp_ms) const {
  LogEntry e;
  e.seq = entries_.size() + 1;
  e.timestamp_ms = timestamp_ms;
  e.api_name = std::move(api_name);
  e.params_hash = params_hash;
  e.prev_hash = head();
  return e;
}

std::string AuditLog::export_lines() const {
  std::string out;
  for (const auto& e : entries_) {
    out += e.to_line();
    out += '\n';
  }
  return out;
}

AuditLog AuditLog::parse_lines(std::string_view text) {
  std::vector<LogEntry> entries;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (!line.empty() && line[0] != '#') entries.push_back(LogEntry::from_line(line));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return AuditLog(std::move(entries));
}

LogCheck verify_links(std::span<const LogEntry> entries) {
  Hash32 prev{};
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.seq != i + 1) {
      return {LogStatus::ChainCorrupted, i,
              "entry " + std::to_string(i) + " has seq " + std::to_string(e.seq)};
    }
    if (e.prev_hash != prev) {
      return {LogStatus::ChainCorrupted, i, "entry " + std::to_string(e.seq) + " breaks the chain"};
    }
    prev = e.hash();
  }
  return {LogStatus::Ok, entries.size(), {}};
}

LogCheck verify_chain(std::span<const LogEntry> entries, const CounterRecord& counter,
                      const std::optional<LogEntry>& pending) {
  auto links = verify_links(entries);
  if (!links) return links;

  const std::uint64_t n = entries.size();
  const Hash32 head = entries.empty() ? Hash32{} : entries.back().hash();
  if (n == counter.counter) {
    if (head != counter.head) {
      return {LogStatus::ChainCorrupted, n, "head hash diverges from the counter record"};
    }
    return {LogStatus::Ok, n, {}};
  }
  if (n < counter.counter) {
    if (pending && counter.counter == n + 1 && pending->seq == n + 1 && pending->prev_hash == head &&
        pending->hash() == counter.head) {
      return {LogStatus::IncompleteOperation, n,
              "operation '" + pending->api_name + "' was interrupted before its state was sealed"};
    }
    return {LogStatus::RollbackDetected, n,
            "state holds " + std::to_string(n) + " entries but counter is " +
                std::to_string(counter.counter)};
  }
  return {LogStatus::RollbackDetected, n,
          "counter " + std::to_string(counter.counter) + " is behind the log (" +
              std::to_string(n) + " entries)"};
}

LogDiff diff_logs(const AuditLog& a, const AuditLog& b, const std::vector<std::string>& api_filter) {
  auto wanted = [&](const LogEntry& e) {
    return api_filter.empty() ||
           std::find(api_filter.begin(), api_filter.end(), e.api_name) != api_filter.end();
  };
  using Key = std::pair<std::string, Hash32>;
  LogDiff out;

  auto count = [&](const AuditLog& log, std::vector<LogEntry>& repeated) {
    std::map<Key, int> counts;
    for (const auto& e : log.entries()) {
      if (!wanted(e)) continue;
      if (counts[{e.api_name, e.params_hash}]++ > 0) repeated.push_back(e);
    }
    return counts;
  };
  auto ca = count(a, out.repeated_in_a);
  auto cb = count(b, out.repeated_in_b);

  // Walk each log and report occurrences beyond the other side's count.
  auto excess = [&](const AuditLog& log, std::map<Key, int> other, std::vector<LogEntry>& sink) {
    for (const auto& e : log.entries()) {
      if (!wanted(e)) continue;
      auto& n = other[{e.api_name, e.params_hash}];
      if (n > 0) {
        --n;
      } else {
        sink.push_back(e);
      }
    }
  };
  excess(a, cb, out.only_in_a);
  excess(b, ca, out.only_in_b);
  return out;
}

}  // namespace blindvault::keyvault
