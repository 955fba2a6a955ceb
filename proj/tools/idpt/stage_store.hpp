#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "json.hpp"

namespace idpt::cli {

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);  // throws IoError

// Root of all run directories: $IDPT_RUN_ROOT, else ./runs.
std::filesystem::path default_run_root();

struct StageResult {
  std::filesystem::path dir;
  bool cached = false;
};

// Runs a pipeline stage in a directory addressed by the hash of its resolved
// config: <root>/<stage>/<hash>. A directory that already holds a completed
// run is reused without calling `body`. Otherwise `body` fills a scratch
// directory, the snapshot is written as config.json and the directory is
// moved into place.
StageResult run_stage(const std::filesystem::path& root, const std::string& stage, const nlohmann::json& resolved,
                      const std::function<void(const std::filesystem::path& dir)>& body);

}  // namespace idpt::cli
