#include "thlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace thlm {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'H', 'L', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated container reading " + what);
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const std::string& what) {
  if (n > (1ULL << 32)) throw FormatError("implausible length for " + what);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError("truncated container reading " + what);
  }
  return s;
}

}  // namespace

const NamedBlob* Container::find(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, c.version);
  const std::string header = c.header.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.blobs.size()));
  for (const auto& b : c.blobs) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(b.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(b.value.cols()));
    out.write(reinterpret_cast<const char*>(b.value.data()),
              static_cast<std::streamsize>(b.value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": not a thlm container");
  }
  Container c;
  c.version = get<std::uint32_t>(in, "version");
  if (c.version != kContainerVersion) {
    throw FormatError(path.string() + ": unsupported container version " + std::to_string(c.version));
  }
  const auto hlen = get<std::uint64_t>(in, "header length");
  try {
    c.header = nlohmann::json::parse(get_bytes(in, hlen, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  const auto count = get<std::uint32_t>(in, "blob count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob b;
    b.name = get_bytes(in, get<std::uint32_t>(in, "name length"), "blob name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank != 2) throw FormatError("blob " + b.name + ": expected rank 2");
    const auto rows = get<std::uint64_t>(in, "rows");
    const auto cols = get<std::uint64_t>(in, "cols");
    if (rows * cols > (1ULL << 31)) throw FormatError("blob " + b.name + ": implausible shape");
    b.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(b.value.data()),
                 static_cast<std::streamsize>(rows * cols * sizeof(double)))) {
      throw FormatError("truncated container reading blob " + b.name);
    }
    c.blobs.push_back(std::move(b));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& m, const nlohmann::json& extra) {
  Container c;
  c.header = extra.is_object() ? extra : nlohmann::json::object();
  c.header["kind"] = "checkpoint";
  c.header["model"] = m.config;
  for (const auto& p : m.parameters()) c.blobs.push_back({p.name, p.tensor.value()});
  write_container(path, c);
}

ModelState load_checkpoint(const std::filesystem::path& path, nlohmann::json* header) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "checkpoint") throw FormatError(path.string() + ": not a checkpoint");
  ModelConfig cfg;
  try {
    cfg = c.header.at("model").get<ModelConfig>();
    cfg.check();
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": bad hyperparameter record: " + e.what());
  }
  ModelState m = ModelState::init(cfg, 0);
  auto params = m.parameters();
  if (params.size() != c.blobs.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(params.size()) + " parameter blobs, found " +
                      std::to_string(c.blobs.size()));
  }
  std::map<std::string, const NamedBlob*> by_name;
  for (const auto& b : c.blobs) by_name[b.name] = &b;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError(path.string() + ": missing parameter " + p.name);
    const nn::Matrix& v = it->second->value;
    if (v.rows() != p.tensor.rows() || v.cols() != p.tensor.cols()) {
      throw FormatError(path.string() + ": parameter " + p.name + " has shape " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()) + ", expected " + std::to_string(p.tensor.rows()) + "x" +
                        std::to_string(p.tensor.cols()));
    }
    p.tensor.mutable_value() = v;
  }
  if (header) *header = std::move(c.header);
  return m;
}

}  // namespace thlm
