#include "idpt/model/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "idpt/error.hpp"

namespace idpt {

namespace {

constexpr std::array<char, 8> kMagic{'I', 'D', 'P', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint");
  return value;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("truncated checkpoint");
  return s;
}

struct Header {
  std::uint32_t scalar_bytes = 0;
  ModelConfig config;
};

Header read_header(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a checkpoint file");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Header h;
  h.scalar_bytes = get<std::uint32_t>(in);
  if (h.scalar_bytes != 4 && h.scalar_bytes != 8) throw FormatError("bad scalar width in checkpoint");
  try {
    h.config = model_config_from_json(nlohmann::json::parse(get_string(in)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad config in checkpoint: ") + e.what());
  }
  return h;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const Seq2SeqModel<Scalar>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, sizeof(Scalar));
  const std::string config = to_json(model.config()).dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.tensors().size()));
  for (const auto& t : model.tensors()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.group));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols));
    out.write(reinterpret_cast<const char*>(model.parameters().data() + t.offset),
              static_cast<std::streamsize>(t.size() * static_cast<Eigen::Index>(sizeof(Scalar))));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

template <typename Scalar>
Seq2SeqModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  const Header h = read_header(in);
  Seq2SeqModel<Scalar> model(h.config, 0);
  const auto sections = get<std::uint32_t>(in);
  if (sections != model.tensors().size()) throw FormatError("checkpoint section count does not match its config");
  for (const auto& t : model.tensors()) {
    const std::string name = get_string(in);
    const auto group = get<std::uint32_t>(in);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (name != t.name || group != static_cast<std::uint32_t>(t.group) ||
        rows != static_cast<std::uint64_t>(t.rows) || cols != static_cast<std::uint64_t>(t.cols)) {
      throw FormatError("checkpoint section '" + name + "' does not match expected '" + t.name + "'");
    }
    Scalar* dst = model.parameters().data() + t.offset;
    if (h.scalar_bytes == sizeof(Scalar)) {
      in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(t.size() * static_cast<Eigen::Index>(sizeof(Scalar))));
    } else if (h.scalar_bytes == 4) {
      for (Eigen::Index i = 0; i < t.size(); ++i) dst[i] = static_cast<Scalar>(get<float>(in));
    } else {
      for (Eigen::Index i = 0; i < t.size(); ++i) dst[i] = static_cast<Scalar>(get<double>(in));
    }
    if (!in) throw FormatError("truncated checkpoint");
  }
  return model;
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  return read_header(in).config;
}

template void save_checkpoint(const Seq2SeqModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const Seq2SeqModel<double>&, const std::filesystem::path&);
template Seq2SeqModel<float> load_checkpoint(const std::filesystem::path&);
template Seq2SeqModel<double> load_checkpoint(const std::filesystem::path&);

}  // namespace idpt
