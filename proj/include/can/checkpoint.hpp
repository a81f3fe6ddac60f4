#pragma once

#include <filesystem>
#include <string>

#include "can/errors.hpp"
#include "can/model.hpp"

namespace can {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public DataError {
 public:
  enum class Kind { kVersion, kCorrupt, kInconsistent };
  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Canonical text container: header, config, vocabulary, labels, then tensors in sorted-name
/// order, closed by a checksum line.
std::string serialize_checkpoint(const Model& model, bool with_optimizer_state = false);
Model deserialize_checkpoint(const std::string& text);

void save(const Model& model, const std::filesystem::path& path, bool with_optimizer_state = false);
Model load(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& contents);

}  // namespace can
