#pragma once

// Binary parameter container shared by checkpoints and embedding tables.
//
//   "THLMCKPT"  8 bytes magic
//   u32         format version
//   u64, bytes  header JSON (hyperparameters and provenance)
//   u32         blob count
//   per blob:   u32 name length, name, u32 rank, u64 dims[rank],
//               f64 values (row-major, little endian)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "thlm/model.hpp"
#include "thlm/tensor.hpp"

namespace thlm {

inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedBlob {
  std::string name;
  nn::Matrix value;
};

struct Container {
  std::uint32_t version = kContainerVersion;
  nlohmann::json header;
  std::vector<NamedBlob> blobs;

  const NamedBlob* find(const std::string& name) const;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// Header: {"kind": "checkpoint", "model": ModelConfig, ...extra}.
void save_checkpoint(const std::filesystem::path& path, const ModelState& m,
                     const nlohmann::json& extra = nlohmann::json::object());
// Validates blob names and shapes against the stored hyperparameters.
ModelState load_checkpoint(const std::filesystem::path& path, nlohmann::json* header = nullptr);

}  // namespace thlm
