#ifndef SERGAN_FEATURE_STORE_HPP_
#define SERGAN_FEATURE_STORE_HPP_

#include <map>
#include <string>
#include <vector>

#include "sergan/audio_features.hpp"

namespace sergan {

// On-disk container for one spectrogram. Fixed little-endian header
//   magic "MELSPEC1" | u32 version | u8 dtype (0=f32, 1=f64) | u8 byte order
//   (1 = little endian) | u16 reserved | u32 rows | u32 cols
// followed by row-major values, plus a sidecar <path>.json holding the
// FeatureConfig and the normalized flag.
void write_mel_file(const std::string& path, const MelSpectrogram& mel,
                    bool as_float32 = true);
MelSpectrogram read_mel_file(const std::string& path);

// Read access to per-utterance spectrograms, keyed by record id.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual MelSpectrogram load(const std::string& id) const = 0;
  virtual bool has(const std::string& id) const = 0;
};

// Directory of <id>.mel files (+ sidecars).
class FeatureStore : public FeatureProvider {
 public:
  explicit FeatureStore(std::string dir);

  MelSpectrogram load(const std::string& id) const override;
  bool has(const std::string& id) const override;
  void save(const std::string& id, const MelSpectrogram& mel, bool as_float32 = true);
  std::string path_for(const std::string& id) const;
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
};

class InMemoryFeatureStore : public FeatureProvider {
 public:
  MelSpectrogram load(const std::string& id) const override;
  bool has(const std::string& id) const override;
  void save(const std::string& id, MelSpectrogram mel);

 private:
  std::map<std::string, MelSpectrogram> items_;
};

}  // namespace sergan

#endif  // SERGAN_FEATURE_STORE_HPP_
