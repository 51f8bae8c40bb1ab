#ifndef SERGAN_WAV_HPP_
#define SERGAN_WAV_HPP_

#include <string>
#include <vector>

namespace sergan {

struct WavData {
  std::vector<double> samples;  // mono, in [-1,1]
  int sample_rate_hz = 0;
};

// Reads a RIFF/WAVE file. Supports 16-bit PCM and 32-bit IEEE float;
// multi-channel audio is averaged down to mono.
WavData read_wav(const std::string& path);

// Linear-interpolation resampler.
std::vector<double> resample_linear(const std::vector<double>& x, int from_rate,
                                    int to_rate);

// read_wav + resample to the target rate in one step.
std::vector<double> load_audio_mono(const std::string& path, int target_rate_hz);

// Writes mono 16-bit PCM; used by tests and the toy tooling.
void write_wav_pcm16(const std::string& path, const std::vector<double>& samples,
                     int sample_rate_hz);

}  // namespace sergan

#endif  // SERGAN_WAV_HPP_
