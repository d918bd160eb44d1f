#pragma once

#include <map>
#include <string>
#include <string_view>

#include "qadpt/model.hpp"

namespace qadpt {

inline constexpr std::string_view kCheckpointMagic = "QADPT1\n";

/// Magic line, one-line JSON header (hyperparameters, vocabulary, relation
/// names, tensor manifest with per-tensor FNV-1a), then little-endian float64
/// tensor data. `metadata` is stored verbatim in the header.
std::string serialize_checkpoint(const Model& m,
                                 const std::map<std::string, std::string>& metadata = {});
/// Throws DataError naming the byte offset of the first problem found.
Model deserialize_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const Model& m, const std::string& path,
                     const std::map<std::string, std::string>& metadata = {});
Model load_checkpoint(const std::string& path);
std::map<std::string, std::string> checkpoint_metadata(const std::string& path);

}  // namespace qadpt
