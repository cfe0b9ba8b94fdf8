#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmunet/config.hpp"
#include "cmunet/model.hpp"
#include "cmunet/nn.hpp"
#include "cmunet/optim.hpp"

namespace cmunet {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kMetaEntry = "__meta__";

// Little-endian container: "CMUW", u32 version, u32 entry count, then per
// entry u32 name length, name, u8 dtype, u32 ndim, u32 dims[ndim], raw data.
// The JSON metadata is the first entry, stored as UTF-8 bytes (dtype 2).
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// `source` names the file in error messages.
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Meta keys: version, config (run config), epoch, seed, plus `extra`.
Checkpoint make_checkpoint(const CmUnet& model, const RunConfig& cfg, std::int64_t epoch,
                           const AdamW* optimizer, const nlohmann::json& extra = {});
RunConfig checkpoint_run_config(const Checkpoint& ckpt);
// Copies parameters and buffers by name; every model tensor must be present.
void restore_model(CmUnet& model, const Checkpoint& ckpt);

}  // namespace cmunet
