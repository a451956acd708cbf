#pragma once

// Software stand-in for the trusted execution environment: enclave identity,
// platform-keyed reports, and sealed storage. Everything that would be fused
// into the CPU lives in PlatformSecret.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string_view>

#include "blindvault/bytes.hpp"
#include "blindvault/crypto.hpp"

namespace blindvault::tee {

namespace detail {
struct SecretAccess;
}

inline constexpr std::size_t kReportDataSize = 64;
using ReportData = FixedBytes<kReportDataSize>;

class PlatformSecret {
 public:
  static PlatformSecret generate();
  static PlatformSecret load(const std::filesystem::path& path);
  /// Written with mode 0600 through a temp file and rename.
  void save(const std::filesystem::path& path) const;

  const PlatformId& platform_id() const { return platform_id_; }
  std::uint32_t epid_group_id() const { return epid_group_id_; }
  bool has_epid_member_key() const { return epid_group_id_ != 0; }

  /// Installs the EPID group member key handed out at manufacturing time.
  void install_epid_member(std::uint32_t group_id, const Hash32& member_key);

 private:
  friend struct detail::SecretAccess;

  PlatformId platform_id_{};
  Hash32 root_secret_{};
  Hash32 provisioning_secret_{};
  std::uint32_t epid_group_id_ = 0;
  Hash32 epid_member_key_{};
};

struct Measurement {
  Hash32 mrenclave{};
  Hash32 mrsigner{};
  std::uint16_t svn = 0;
  std::uint16_t tcb_version = 0;

  friend bool operator==(const Measurement&, const Measurement&) = default;
};

/// Identity of the release signer used when no explicit signer is given.
ByteView default_signer_identity();

/// The vault image shipped with this build; nodes measure it unless
/// configured with an explicit image file.
ByteView default_enclave_image();

/// mrenclave = SHA-256(image), mrsigner = SHA-256(signer_identity).
Measurement measure_enclave(ByteView image, ByteView signer_identity = default_signer_identity(),
                            std::uint16_t svn = 1, std::uint16_t tcb_version = 1);

/// Binds arbitrary-length data into the 64-byte report_data slot:
/// 32 zero bytes followed by SHA-256(data).
ReportData report_data_for(ByteView data);

struct Report {
  Measurement measurement;
  ReportData report_data{};
  PlatformId platform_id{};
  Hash32 mac{};

  static constexpr std::size_t kSerializedSize = 32 + 32 + 2 + 2 + kReportDataSize + 16 + 32;

  /// Everything except the mac, in canonical order.
  Bytes body() const;
  Bytes serialize() const;
  static Report parse(ByteView data);
  static Report read(ByteReader& r);

  friend bool operator==(const Report&, const Report&) = default;
};

Report create_report(ByteView report_data, const PlatformSecret& platform,
                     const Measurement& meas);
bool verify_report(const Report& report, const PlatformSecret& platform);

enum class SealPolicy : std::uint8_t { MrEnclave = 1, MrSigner = 2 };

struct SealedBlob {
  SealPolicy policy = SealPolicy::MrEnclave;
  Hash32 bound_identity{};
  PlatformId platform_id{};
  FixedBytes<crypto::kAeadNonceSize> nonce{};
  Bytes ciphertext;  // includes the AEAD tag

  static constexpr std::string_view kMagic = "BFSEAL01";

  /// Header bytes up to and including the nonce; also the AEAD associated data.
  Bytes header() const;
  Bytes serialize() const;
  static SealedBlob parse(ByteView data);

  void write_file(const std::filesystem::path& path, bool durable = true) const;
  static SealedBlob read_file(const std::filesystem::path& path);
};

SealedBlob seal(ByteView plaintext, SealPolicy policy, const PlatformSecret& platform,
                const Measurement& meas);
crypto::SecureBytes unseal(const SealedBlob& blob, const PlatformSecret& platform,
                           const Measurement& meas);

/// One running enclave: a platform plus the measurement of the loaded image.
class Enclave {
 public:
  Enclave(PlatformSecret platform, Measurement measurement)
      : platform_(std::move(platform)), measurement_(measurement) {}

  const PlatformSecret& platform() const { return platform_; }
  const PlatformId& platform_id() const { return platform_.platform_id(); }
  const Measurement& measurement() const { return measurement_; }

  Report create_report(ByteView report_data) const {
    return tee::create_report(report_data, platform_, measurement_);
  }
  bool verify_report(const Report& r) const { return tee::verify_report(r, platform_); }
  SealedBlob seal(ByteView plaintext, SealPolicy policy = SealPolicy::MrEnclave) const {
    return tee::seal(plaintext, policy, platform_, measurement_);
  }
  crypto::SecureBytes unseal(const SealedBlob& blob) const {
    return tee::unseal(blob, platform_, measurement_);
  }

 private:
  PlatformSecret platform_;
  Measurement measurement_;
};

namespace detail {
/// Key derivations over the platform secrets. Only the soft_tee and
/// attestation implementations use this.
struct SecretAccess {
  static crypto::SecureBytes report_key(const PlatformSecret& p);
  static crypto::SecureBytes seal_key(const PlatformSecret& p, SealPolicy policy,
                                      const Hash32& identity);
  static crypto::PrivateKey pck_key(const PlatformSecret& p);
  static const Hash32& epid_member_key(const PlatformSecret& p) { return p.epid_member_key_; }
};
}  // namespace detail

}  // namespace blindvault::tee
