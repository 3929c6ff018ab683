#include "s3d/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "s3d/error.hpp"

namespace s3d {

namespace {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void read(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw LoadError(std::string("model file truncated while reading ") + what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v = 0;
    read(&v, 8, what);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("write failed for " + path.string());
}

}  // namespace

std::string serialize_model(const NetworkConfig& config, const NetworkParams& params) {
  std::string out(kModelMagic, 4);
  out.push_back(static_cast<char>(kModelVersion));
  const std::string cfg = config.to_json().dump();
  put_u64(out, cfg.size());
  out += cfg;
  params.for_each_array([&](const std::string&, Eigen::Ref<const Vector> a) {
    put_u64(out, static_cast<std::uint64_t>(a.size()));
    out.append(reinterpret_cast<const char*>(a.data()), static_cast<std::size_t>(a.size()) * sizeof(double));
  });
  return out;
}

std::pair<NetworkConfig, NetworkParams> deserialize_model(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw LoadError("not a model file (bad magic bytes)");
  unsigned char version = 0;
  r.read(&version, 1, "version");
  if (version != kModelVersion) {
    throw LoadError("unsupported model file version " + std::to_string(version));
  }
  const std::uint64_t cfg_len = r.u64("config length");
  if (cfg_len > r.remaining()) throw LoadError("model file truncated while reading config");
  std::string cfg(cfg_len, '\0');
  r.read(cfg.data(), cfg_len, "config");

  NetworkConfig config;
  try {
    config = NetworkConfig::from_json(nlohmann::json::parse(cfg));
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("model config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("model config rejected: ") + e.what());
  }

  NetworkParams params = NetworkParams::zeros_like(config);
  params.for_each_array([&](const std::string& name, Eigen::Ref<Vector> a) {
    const std::uint64_t n = r.u64(name.c_str());
    if (n != static_cast<std::uint64_t>(a.size())) {
      throw LoadError("array " + name + " holds " + std::to_string(n) + " values, config expects " +
                      std::to_string(a.size()));
    }
    r.read(a.data(), n * sizeof(double), name.c_str());
  });
  if (r.remaining() != 0) throw LoadError("model file has " + std::to_string(r.remaining()) + " trailing bytes");
  return {std::move(config), std::move(params)};
}

void save_model(const Network& net, const std::filesystem::path& path) {
  write_file(path, serialize_model(net.config(), net.params()));
}

Network load_model(const std::filesystem::path& path) {
  auto [config, params] = deserialize_model(read_file(path));
  return Network(std::move(config), std::move(params));
}

void save_params(const NetworkConfig& config, const NetworkParams& params, const std::filesystem::path& path) {
  write_file(path, serialize_model(config, params));
}

NetworkParams load_params(const NetworkConfig& expected, const std::filesystem::path& path) {
  auto [config, params] = deserialize_model(read_file(path));
  if (config.to_json() != expected.to_json()) {
    throw LoadError(path.string() + " was written for a different network configuration");
  }
  return params;
}

}  // namespace s3d
