#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "acq/generator.hpp"
#include "acq/nn.hpp"

namespace acq {

inline constexpr int kArchiveVersion = 1;

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VersionError : public ArchiveError {
 public:
  using ArchiveError::ArchiveError;
};
class DigestError : public ArchiveError {
 public:
  using ArchiveError::ArchiveError;
};
class TruncatedError : public ArchiveError {
 public:
  using ArchiveError::ArchiveError;
};

/// Directory archive: `model.json` manifest plus `blob_NNNN.bin` little-endian f32 files.
void save_model(const LayerGraph& graph, const std::filesystem::path& dir);
LayerGraph load_model(const std::filesystem::path& dir);

void save_generator(const GeneratorNet& generator, const std::filesystem::path& dir);
GeneratorNet load_generator(const std::filesystem::path& dir);

/// "layer_graph" or "generator".
std::string archive_kind(const std::filesystem::path& dir);

}  // namespace acq
