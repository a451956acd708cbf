#include "blindvault/attestation.hpp"
#include "blindvault/keyvault.hpp"

namespace blindvault::attest {

std::vector<PckCacheEntry> sign_pck_cache(std::vector<PckCacheEntry> drafts,
                                          keyvault::Token& admin, std::uint64_t msk_handle,
                                          std::string_view pin) {
  for (auto& d : drafts) d.org_signature = admin.sign(msk_handle, d.signed_payload(), pin);
  return drafts;
}

}  // namespace blindvault::attest
