#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mfqe/svm.hpp"

namespace mfqe {

/// Named f32 array.
struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

/// Binary layout, all integers little-endian:
///   "MFQE", u32 version, u32 entry count, then per entry
///   u16 name length, name bytes, u8 dtype (0 = f32), u8 rank, rank x u32 dims, payload.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  /// Inserts or replaces. The product of dims must equal data.size().
  void put(const std::string& name, std::vector<std::uint32_t> dims, std::vector<float> data);
  bool has(const std::string& name) const;
  /// Throws FormatError naming the entry when it is absent.
  const CheckpointEntry& get(const std::string& name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  /// Throws FormatError on bad magic, version, dtype, sizes or truncation.
  static Checkpoint parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) { return a.serialize() == b.serialize(); }

 private:
  std::vector<CheckpointEntry> entries_;
};

/// Stores the model as "svm.sv", "svm.coef", "svm.bias", "svm.gamma", "svm.platt", "svm.standardizer".
void put_svm(Checkpoint& ckpt, const svm::Model& model);
svm::Model get_svm(const Checkpoint& ckpt);
bool has_svm(const Checkpoint& ckpt);

}  // namespace mfqe
