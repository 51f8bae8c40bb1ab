#include "sergan/audio_features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sergan {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

int FeatureConfig::window_samples() const {
  return static_cast<int>(std::lround(static_cast<double>(sample_rate_hz) * window_ms / 1000.0));
}

int FeatureConfig::hop_samples() const {
  return static_cast<int>(std::lround(static_cast<double>(window_samples()) * (1.0 - overlap_ratio)));
}

void FeatureConfig::validate() const {
  if (sample_rate_hz <= 0) throw std::invalid_argument("FeatureConfig: sample_rate_hz must be positive");
  if (!(window_ms > 0.0)) throw std::invalid_argument("FeatureConfig: window_ms must be positive");
  if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0))
    throw std::invalid_argument("FeatureConfig: overlap_ratio must be in [0,1)");
  if (n_mels < 1) throw std::invalid_argument("FeatureConfig: n_mels must be >= 1");
  if (window_samples() < 2) throw std::invalid_argument("FeatureConfig: window shorter than 2 samples");
  if (hop_samples() < 1) throw std::invalid_argument("FeatureConfig: hop shorter than 1 sample");
  if (!std::isfinite(log_floor_db)) throw std::invalid_argument("FeatureConfig: log_floor_db not finite");
}

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0 || im.size() != n)
    throw std::invalid_argument("fft_radix2: size must be a power of two");
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::size_t a = i + k, b = i + k + len / 2;
        double tr = re[b] * cr - im[b] * ci;
        double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

std::vector<std::vector<double>> mel_filterbank(int n_mels, int n_fft,
                                                double sample_rate_hz) {
  const int n_bins = n_fft / 2 + 1;
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(sample_rate_hz / 2.0);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / static_cast<double>(n_mels + 1));

  std::vector<std::vector<double>> fb(static_cast<std::size_t>(n_mels),
                                      std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
  for (int m = 0; m < n_mels; ++m) {
    double lo = edges[static_cast<std::size_t>(m)];
    double center = edges[static_cast<std::size_t>(m) + 1];
    double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      double f = static_cast<double>(k) * sample_rate_hz / n_fft;
      double w = 0.0;
      if (f > lo && f < center)
        w = (f - lo) / (center - lo);
      else if (f >= center && f < hi)
        w = (hi - f) / (hi - center);
      fb[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = w;
    }
  }
  return fb;
}

MelSpectrogram compute_mel_spectrogram(std::span<const double> waveform,
                                       const FeatureConfig& cfg) {
  cfg.validate();
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  if (waveform.empty()) throw std::invalid_argument("compute_mel_spectrogram: empty waveform");
  if (static_cast<long>(waveform.size()) < win)
    throw std::invalid_argument("compute_mel_spectrogram: utterance too short (" +
                                std::to_string(waveform.size()) + " samples < window " +
                                std::to_string(win) + ")");
  for (double s : waveform)
    if (!std::isfinite(s))
      throw std::invalid_argument("compute_mel_spectrogram: non-finite sample");

  const int frames = static_cast<int>((static_cast<long>(waveform.size()) - win) / hop) + 1;
  const int n_fft = next_pow2(win);
  const int n_bins = n_fft / 2 + 1;

  std::vector<double> hann(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i)
    hann[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

  const auto fb = mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate_hz);
  const double floor_power = std::pow(10.0, cfg.log_floor_db / 10.0);

  Tensor out({frames, cfg.n_mels});
  std::vector<double> re(static_cast<std::size_t>(n_fft)), im(static_cast<std::size_t>(n_fft));
  std::vector<double> power(static_cast<std::size_t>(n_bins));
  for (int t = 0; t < frames; ++t) {
    const double* x = waveform.data() + static_cast<std::size_t>(t) * hop;
    for (int i = 0; i < win; ++i) re[static_cast<std::size_t>(i)] = x[i] * hann[static_cast<std::size_t>(i)];
    std::fill(re.begin() + win, re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    fft_radix2(re, im);
    for (int k = 0; k < n_bins; ++k)
      power[static_cast<std::size_t>(k)] =
          re[static_cast<std::size_t>(k)] * re[static_cast<std::size_t>(k)] +
          im[static_cast<std::size_t>(k)] * im[static_cast<std::size_t>(k)];
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& w = fb[static_cast<std::size_t>(m)];
      for (int k = 0; k < n_bins; ++k) e += w[static_cast<std::size_t>(k)] * power[static_cast<std::size_t>(k)];
      double db = 10.0 * std::log10(std::max(e, floor_power));
      out[static_cast<std::size_t>(t) * cfg.n_mels + m] = std::max(db, cfg.log_floor_db);
    }
  }

  MelSpectrogram mel;
  mel.values = std::move(out);
  mel.config = cfg;
  mel.normalized = false;
  return mel;
}

MelSpectrogram normalize_mel(const MelSpectrogram& mel,
                             std::optional<std::pair<double, double>> stats) {
  if (mel.normalized)
    throw std::invalid_argument("normalize_mel: input is already normalized");
  if (mel.values.numel() == 0) throw std::invalid_argument("normalize_mel: empty spectrogram");

  double lo, hi;
  if (stats) {
    lo = stats->first;
    hi = stats->second;
    if (!(hi >= lo)) throw std::invalid_argument("normalize_mel: stats max < min");
  } else {
    lo = hi = mel.values[0];
    for (std::size_t i = 1; i < mel.values.numel(); ++i) {
      lo = std::min(lo, mel.values[i]);
      hi = std::max(hi, mel.values[i]);
    }
  }

  MelSpectrogram out;
  out.config = mel.config;
  out.normalized = true;
  out.values = Tensor(mel.values.shape());
  if (hi == lo) {
    // degenerate constant spectrogram: defined as all zeros
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < mel.values.numel(); ++i)
    out.values[i] = std::clamp((mel.values[i] - lo) * inv, 0.0, 1.0);
  return out;
}

std::vector<MelSpectrogram> segment_mel(const MelSpectrogram& mel, int frame_len,
                                        int hop_frames) {
  if (frame_len < 1 || hop_frames < 1)
    throw std::invalid_argument("segment_mel: frame_len and hop_frames must be >= 1");
  const int T = mel.frames();
  const int B = mel.bands();
  if (T == 0 || B == 0) throw std::invalid_argument("segment_mel: empty spectrogram");

  std::vector<MelSpectrogram> out;
  auto make_segment = [&](int start, bool loop) {
    MelSpectrogram seg;
    seg.config = mel.config;
    seg.normalized = mel.normalized;
    seg.values = Tensor({frame_len, B});
    for (int i = 0; i < frame_len; ++i) {
      int src = loop ? (start + i) % T : start + i;
      std::copy_n(mel.values.data() + static_cast<std::size_t>(src) * B, B,
                  seg.values.data() + static_cast<std::size_t>(i) * B);
    }
    out.push_back(std::move(seg));
  };

  if (T < frame_len) {
    make_segment(0, true);
    return out;
  }
  const int count = (T - frame_len) / hop_frames + 1;
  out.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) make_segment(s * hop_frames, false);
  return out;
}

}  // namespace sergan
