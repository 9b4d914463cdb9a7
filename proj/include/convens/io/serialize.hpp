#pragma once

#include "convens/data/partition.hpp"
#include "convens/edge/edge.hpp"
#include "convens/ensemble/ensemble.hpp"
#include "convens/imputation/vae.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace convens {

/// Binary artifacts start with "CVNS", a format version, the hash of the
/// experiment configuration that produced them and a kind string.
inline constexpr std::uint32_t kArtifactVersion = 1;

/// FNV-1a over the compact dump of `j`; key order is canonical in nlohmann::json.
std::uint64_t config_hash(const nlohmann::json& j);

nlohmann::json to_json(const LayerSpec& spec);
LayerSpec layer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EdgeModelConfig& c);
EdgeModelConfig edge_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EnsembleConfig& c);
EnsembleConfig ensemble_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EdgeAssignment& a);
EdgeAssignment assignment_from_json(const nlohmann::json& j);

/// Header of an artifact file, readable without loading the payload.
struct ArtifactHeader {
  std::uint32_t version = 0;
  std::uint64_t config_hash = 0;
  std::string kind;
};

ArtifactHeader read_artifact_header(const std::filesystem::path& path);

void save_edge(const std::filesystem::path& path, const EdgeArtifact& edge, std::uint64_t hash);
/// Throws FormatError on a missing or corrupt file, a version mismatch or a
/// config hash other than `expected_hash`.
EdgeArtifact load_edge(const std::filesystem::path& path, std::uint64_t expected_hash);

void save_vae(const std::filesystem::path& path, const VaeModel<float>& vae, std::uint64_t hash);
VaeModel<float> load_vae(const std::filesystem::path& path, std::uint64_t expected_hash);

void save_ensemble(const std::filesystem::path& path, const EnsembleArtifact& ens, std::uint64_t hash);
EnsembleArtifact load_ensemble(const std::filesystem::path& path, std::uint64_t expected_hash);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace convens
