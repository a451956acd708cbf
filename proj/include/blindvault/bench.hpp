#pragma once

// Benchmark harness: RSA-2048 key generation and signing, and end-to-end
// certificate issuance, each measured through the vault (VAULT) and with
// the same primitives called directly (DIRECT).

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blindvault/crypto.hpp"

namespace blindvault::bench {

enum class Operation : std::uint8_t { KeygenRsa2048, SignRsa2048, IssuanceE2E };
enum class Mode : std::uint8_t { Vault, Direct };

std::string_view to_string(Operation op);
std::string_view to_string(Mode m);
/// Accepts the canonical names ("SIGN_RSA2048") and short ones ("sign").
Operation operation_from_string(std::string_view s);
Mode mode_from_string(std::string_view s);

struct BenchReport {
  Operation operation = Operation::SignRsa2048;
  Mode mode = Mode::Vault;
  std::size_t runs = 0;
  double min_ms = 0;
  double median_ms = 0;
  double max_ms = 0;
  /// Per-run durations after warm-up, in run order.
  std::vector<double> samples_ms;
  /// Algorithm and DER public-key size of the keys the runs used; equal
  /// across modes for the same operation.
  crypto::KeyAlgorithm algorithm = crypto::KeyAlgorithm::Rsa2048;
  std::size_t public_key_bytes = 0;
};

/// Order-statistic median; mean of the two middle values for even sizes.
/// Throws Usage on an empty input.
double median(std::vector<double> values);

/// Builds a report from recorded durations. Throws Usage when empty.
BenchReport summarize(Operation op, Mode mode, std::vector<double> samples_ms);

/// VAULT median over DIRECT median.
double overhead_ratio(const BenchReport& vault, const BenchReport& direct);

/// Published reference figures (min/median/max, milliseconds) used as the
/// comparison target in reports. Not expected to match local hardware.
struct ReferencePoint {
  Operation operation;
  Mode mode;
  double min_ms;
  double median_ms;
  double max_ms;
};
const std::vector<ReferencePoint>& reference_points();

struct BenchOptions {
  std::size_t runs = 1000;
  std::size_t warmup = 10;
  std::filesystem::path work_dir;  // vault files; created if missing
  std::uint32_t pin_iterations = 10'000;
};

/// In-process platforms, verification service, and vaults for the runs.
/// Runs execute serially on the calling thread (issuance uses one helper
/// thread for the CA side).
class Harness {
 public:
  explicit Harness(BenchOptions options);
  ~Harness();
  Harness(const Harness&) = delete;
  Harness& operator=(const Harness&) = delete;

  BenchReport run(Operation op, Mode mode);
  /// Both modes with runs interleaved one-for-one, so drift in machine
  /// load lands on both. Returns {VAULT, DIRECT}.
  std::pair<BenchReport, BenchReport> run_both(Operation op);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Aligned table, one row per report, with VAULT/DIRECT ratios below.
std::string format_table(const std::vector<BenchReport>& reports);
/// One JSON object per line and report.
std::string format_records(const std::vector<BenchReport>& reports);

}  // namespace blindvault::bench
