#include "stage_store.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <vector>

#include "idpt/error.hpp"

namespace idpt::cli {

namespace {

constexpr const char* kDoneMarker = "COMPLETE";

std::string hex(const unsigned char* data, unsigned int n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out += digits[data[i] >> 4];
    out += digits[data[i] & 15];
  }
  return out;
}

struct Digest {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  Digest() {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  ~Digest() { EVP_MD_CTX_free(ctx); }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx, data, n); }
  std::string finish() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx, md, &n);
    return hex(md, n);
  }
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.finish();
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Digest d;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.finish();
}

std::filesystem::path default_run_root() {
  if (const char* env = std::getenv("IDPT_RUN_ROOT"); env && *env) return env;
  return "runs";
}

StageResult run_stage(const std::filesystem::path& root, const std::string& stage, const nlohmann::json& resolved,
                      const std::function<void(const std::filesystem::path& dir)>& body) {
  namespace fs = std::filesystem;
  const std::string snapshot = resolved.dump(2) + "\n";
  const fs::path dir = root / stage / sha256_hex(resolved.dump()).substr(0, 16);
  if (fs::exists(dir / kDoneMarker)) return {dir, true};

  std::random_device rd;
  const fs::path scratch = root / stage / (".tmp-" + std::to_string(rd()));
  fs::create_directories(scratch);
  try {
    body(scratch);
    std::ofstream(scratch / "config.json") << snapshot;
    std::ofstream(scratch / kDoneMarker) << "";
    if (fs::exists(dir)) fs::remove_all(dir);
    fs::rename(scratch, dir);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(scratch, ec);
    throw;
  }
  return {dir, false};
}

}  // namespace idpt::cli
