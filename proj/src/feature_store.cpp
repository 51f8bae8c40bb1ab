#include "sergan/feature_store.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sergan {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'L', 'S', 'P', 'E', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "feature container I/O assumes a little-endian host");

json config_to_json(const FeatureConfig& c, bool normalized) {
  return json{{"sample_rate_hz", c.sample_rate_hz}, {"window_ms", c.window_ms},
              {"overlap_ratio", c.overlap_ratio},   {"n_mels", c.n_mels},
              {"log_floor_db", c.log_floor_db},     {"normalized", normalized}};
}

}  // namespace

void write_mel_file(const std::string& path, const MelSpectrogram& mel,
                    bool as_float32) {
  if (mel.values.rank() != 2)
    throw std::invalid_argument("write_mel_file: expected a [T,bands] spectrogram");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_mel_file: cannot open " + path);

  out.write(kMagic, 8);
  std::uint32_t version = kVersion;
  std::uint8_t dtype = as_float32 ? 0 : 1;
  std::uint8_t byte_order = 1;
  std::uint16_t reserved = 0;
  std::uint32_t rows = static_cast<std::uint32_t>(mel.values.dim(0));
  std::uint32_t cols = static_cast<std::uint32_t>(mel.values.dim(1));
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&dtype), 1);
  out.write(reinterpret_cast<const char*>(&byte_order), 1);
  out.write(reinterpret_cast<const char*>(&reserved), 2);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);

  if (as_float32) {
    std::vector<float> buf(mel.values.numel());
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(mel.values[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    out.write(reinterpret_cast<const char*>(mel.values.data()),
              static_cast<std::streamsize>(mel.values.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write_mel_file: write failed for " + path);

  std::ofstream side(path + ".json");
  if (!side) throw std::runtime_error("write_mel_file: cannot open sidecar for " + path);
  side << config_to_json(mel.config, mel.normalized).dump(2) << "\n";
}

MelSpectrogram read_mel_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_mel_file: cannot open " + path);

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("read_mel_file: bad magic in " + path);
  std::uint32_t version = 0, rows = 0, cols = 0;
  std::uint8_t dtype = 0, byte_order = 0;
  std::uint16_t reserved = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&dtype), 1);
  in.read(reinterpret_cast<char*>(&byte_order), 1);
  in.read(reinterpret_cast<char*>(&reserved), 2);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in) throw std::runtime_error("read_mel_file: truncated header in " + path);
  if (version != kVersion)
    throw std::runtime_error("read_mel_file: version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kVersion) + ")");
  if (byte_order != 1)
    throw std::runtime_error("read_mel_file: unsupported byte order in " + path);
  if (dtype > 1) throw std::runtime_error("read_mel_file: unknown dtype in " + path);
  if (rows == 0 || cols == 0)
    throw std::runtime_error("read_mel_file: empty shape in " + path);

  MelSpectrogram mel;
  mel.values = Tensor({static_cast<int>(rows), static_cast<int>(cols)});
  const std::size_t n = mel.values.numel();
  if (dtype == 0) {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
      throw std::runtime_error("read_mel_file: truncated data in " + path);
    for (std::size_t i = 0; i < n; ++i) mel.values[i] = buf[i];
  } else {
    in.read(reinterpret_cast<char*>(mel.values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double))
      throw std::runtime_error("read_mel_file: truncated data in " + path);
  }

  std::ifstream side(path + ".json");
  if (side) {
    json j = json::parse(side);
    mel.config.sample_rate_hz = j.value("sample_rate_hz", 16000);
    mel.config.window_ms = j.value("window_ms", 50.0);
    mel.config.overlap_ratio = j.value("overlap_ratio", 0.5);
    mel.config.n_mels = j.value("n_mels", static_cast<int>(cols));
    mel.config.log_floor_db = j.value("log_floor_db", -80.0);
    mel.normalized = j.value("normalized", false);
  } else {
    mel.config.n_mels = static_cast<int>(cols);
  }
  return mel;
}

FeatureStore::FeatureStore(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::string FeatureStore::path_for(const std::string& id) const {
  return (fs::path(dir_) / (id + ".mel")).string();
}

bool FeatureStore::has(const std::string& id) const {
  return fs::exists(path_for(id));
}

MelSpectrogram FeatureStore::load(const std::string& id) const {
  if (!has(id))
    throw std::runtime_error("FeatureStore: no features for id '" + id + "' in " + dir_);
  return read_mel_file(path_for(id));
}

void FeatureStore::save(const std::string& id, const MelSpectrogram& mel,
                        bool as_float32) {
  write_mel_file(path_for(id), mel, as_float32);
}

MelSpectrogram InMemoryFeatureStore::load(const std::string& id) const {
  auto it = items_.find(id);
  if (it == items_.end())
    throw std::runtime_error("InMemoryFeatureStore: no features for id '" + id + "'");
  return it->second;
}

bool InMemoryFeatureStore::has(const std::string& id) const {
  return items_.count(id) > 0;
}

void InMemoryFeatureStore::save(const std::string& id, MelSpectrogram mel) {
  items_[id] = std::move(mel);
}

}  // namespace sergan
