#ifndef SERGAN_AUDIO_FEATURES_HPP_
#define SERGAN_AUDIO_FEATURES_HPP_

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sergan/tensor.hpp"

namespace sergan {

struct FeatureConfig {
  int sample_rate_hz = 16000;
  double window_ms = 50.0;
  double overlap_ratio = 0.5;  // in [0,1)
  int n_mels = 128;
  double log_floor_db = -80.0;

  int window_samples() const;
  int hop_samples() const;
  void validate() const;

  bool operator==(const FeatureConfig&) const = default;
};

// Log mel-band energies, [T frames x n_mels bands]. `normalized` marks the
// per-utterance min-max mapping to [0,1] that bounded-perturbation
// augmentation relies on.
struct MelSpectrogram {
  Tensor values;  // [T, n_mels]
  FeatureConfig config;
  bool normalized = false;

  int frames() const { return values.rank() == 2 ? values.dim(0) : 0; }
  int bands() const { return values.rank() == 2 ? values.dim(1) : 0; }
};

// Short-time mel analysis: Hann window, power spectrum, triangular mel
// filterbank (HTK mel scale), 10*log10 compression clamped at log_floor_db.
// The waveform must already be at cfg.sample_rate_hz (see wav.hpp for
// loading and resampling).
MelSpectrogram compute_mel_spectrogram(std::span<const double> waveform,
                                       const FeatureConfig& cfg);

// Affine min-max map to [0,1]. Uses per-utterance extrema unless explicit
// (min,max) stats are supplied; a constant input maps to all zeros. With
// supplied stats, values outside [min,max] are clipped.
MelSpectrogram normalize_mel(const MelSpectrogram& mel,
                             std::optional<std::pair<double, double>> stats = {});

// Fixed-length windows over the frame axis. Inputs shorter than frame_len
// are loop-padded (repeating from frame 0) into a single segment; otherwise
// the count is floor((T - frame_len)/hop_frames) + 1.
std::vector<MelSpectrogram> segment_mel(const MelSpectrogram& mel, int frame_len,
                                        int hop_frames);

// Mel filterbank weights, [n_mels x (n_fft/2 + 1)]. Exposed for tests.
std::vector<std::vector<double>> mel_filterbank(int n_mels, int n_fft,
                                                double sample_rate_hz);

// In-place iterative radix-2 FFT over interleaved complex data. n must be a
// power of two. Exposed for tests.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

}  // namespace sergan

#endif  // SERGAN_AUDIO_FEATURES_HPP_
