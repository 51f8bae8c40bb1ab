#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "sergan/audio_features.hpp"
#include "sergan/feature_store.hpp"
#include "sergan/rng.hpp"
#include "sergan/wav.hpp"

using namespace sergan;
namespace fs = std::filesystem;

namespace {
FeatureConfig default_cfg() {
  FeatureConfig cfg;  // 16 kHz, 50 ms, 50% overlap, 128 mels, -80 dB floor
  return cfg;
}
}  // namespace

TEST_CASE("window and hop sizes at the default configuration") {
  FeatureConfig cfg = default_cfg();
  CHECK(cfg.window_samples() == 800);
  CHECK(cfg.hop_samples() == 400);
  cfg.validate();
}

TEST_CASE("fft matches a direct DFT") {
  RngStream rng(31);
  std::vector<double> x(64);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  auto ref = oracles::dft_power(x);

  std::vector<double> re = x, im(x.size(), 0.0);
  fft_radix2(re, im);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    double p = re[k] * re[k] + im[k] * im[k];
    CHECK(p == doctest::Approx(ref[k]).epsilon(1e-9));
  }
}

TEST_CASE("frame count: 4 s at 16 kHz gives 159 frames of 128 bands") {
  FeatureConfig cfg = default_cfg();
  std::vector<double> wave(64000);
  RngStream rng(32);
  for (auto& v : wave) v = 0.1 * rng.uniform(-1.0, 1.0);

  auto mel = compute_mel_spectrogram(wave, cfg);
  CHECK(mel.frames() == 159);
  CHECK(mel.bands() == 128);
  CHECK(mel.frames() == oracles::frame_count_by_simulation(64000, 800, 400));
  CHECK_FALSE(mel.normalized);
}

TEST_CASE("frame-count formula holds over random lengths") {
  FeatureConfig cfg = default_cfg();
  cfg.n_mels = 8;  // keep the filterbank cheap
  RngStream rng(33);
  for (int trial = 0; trial < 40; ++trial) {
    long n = 800 + static_cast<long>(rng.uniform_int(20000));
    std::vector<double> wave(static_cast<std::size_t>(n), 0.01);
    auto mel = compute_mel_spectrogram(wave, cfg);
    int expected = static_cast<int>((n - 800) / 400) + 1;
    CHECK(mel.frames() == expected);
    CHECK(mel.frames() == oracles::frame_count_by_simulation(n, 800, 400));
  }
}

TEST_CASE("silence maps every cell to the log floor") {
  FeatureConfig cfg = default_cfg();
  std::vector<double> wave(16000, 0.0);
  auto mel = compute_mel_spectrogram(wave, cfg);
  for (std::size_t i = 0; i < mel.values.numel(); ++i)
    CHECK(mel.values[i] == doctest::Approx(cfg.log_floor_db));
}

TEST_CASE("1 kHz sine peaks in the mel band containing 1 kHz") {
  FeatureConfig cfg = default_cfg();
  std::vector<double> wave(16000);
  for (std::size_t i = 0; i < wave.size(); ++i)
    wave[i] = 0.8 * std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 16000.0);
  auto mel = compute_mel_spectrogram(wave, cfg);

  // average band energies over frames, find the argmax band
  std::vector<double> band_mean(128, 0.0);
  for (int t = 0; t < mel.frames(); ++t)
    for (int b = 0; b < 128; ++b)
      band_mean[static_cast<std::size_t>(b)] += mel.values[static_cast<std::size_t>(t) * 128 + b];
  int argmax = 0;
  for (int b = 1; b < 128; ++b)
    if (band_mean[static_cast<std::size_t>(b)] > band_mean[static_cast<std::size_t>(argmax)]) argmax = b;

  // reference filterbank oracle: band i responds on (edges[i], edges[i+2])
  auto edges = oracles::mel_band_edges(128, 16000.0);
  CHECK(edges[static_cast<std::size_t>(argmax)] < 1000.0);
  CHECK(edges[static_cast<std::size_t>(argmax) + 2] > 1000.0);
}

TEST_CASE("error paths of compute_mel_spectrogram") {
  FeatureConfig cfg = default_cfg();
  std::vector<double> too_short(799, 0.1);
  CHECK_THROWS_WITH_AS(compute_mel_spectrogram(too_short, cfg),
                       doctest::Contains("utterance too short"), std::invalid_argument);

  std::vector<double> with_nan(1600, 0.1);
  with_nan[100] = std::nan("");
  CHECK_THROWS_AS(compute_mel_spectrogram(with_nan, cfg), std::invalid_argument);

  std::vector<double> empty;
  CHECK_THROWS_AS(compute_mel_spectrogram(empty, cfg), std::invalid_argument);
}

TEST_CASE("determinism: identical input gives identical output") {
  FeatureConfig cfg = default_cfg();
  cfg.n_mels = 16;
  RngStream rng(34);
  std::vector<double> wave(4800);
  for (auto& v : wave) v = rng.uniform(-0.5, 0.5);
  auto a = compute_mel_spectrogram(wave, cfg);
  auto b = compute_mel_spectrogram(wave, cfg);
  REQUIRE(a.values.numel() == b.values.numel());
  for (std::size_t i = 0; i < a.values.numel(); ++i) CHECK(a.values[i] == b.values[i]);
}

TEST_CASE("normalize_mel") {
  MelSpectrogram mel;
  mel.config = default_cfg();
  mel.config.n_mels = 4;
  mel.values = Tensor({2, 4}, {-80, -60, -40, -20, -70, -50, -30, 0});

  auto norm = normalize_mel(mel);
  CHECK(norm.normalized);
  CHECK(norm.values[0] == 0.0);                       // min -> 0
  CHECK(norm.values[7] == 1.0);                       // max -> 1
  CHECK(norm.values[3] == doctest::Approx(0.75));     // affine interior

  // constant spectrogram normalizes to zeros
  MelSpectrogram flat;
  flat.config = mel.config;
  flat.values = Tensor({3, 4});
  flat.values.fill(-12.5);
  auto z = normalize_mel(flat);
  for (std::size_t i = 0; i < z.values.numel(); ++i) CHECK(z.values[i] == 0.0);

  // already-spanning [0,1] input with stats (0,1) is unchanged
  MelSpectrogram unit;
  unit.config = mel.config;
  unit.values = Tensor({1, 4}, {0.0, 0.25, 0.5, 1.0});
  auto same = normalize_mel(unit, std::pair{0.0, 1.0});
  for (std::size_t i = 0; i < 4; ++i) CHECK(same.values[i] == unit.values[i]);

  // reapplying with the same stats is idempotent
  MelSpectrogram again = same;
  again.normalized = false;
  auto twice = normalize_mel(again, std::pair{0.0, 1.0});
  for (std::size_t i = 0; i < 4; ++i) CHECK(twice.values[i] == same.values[i]);

  CHECK_THROWS_AS(normalize_mel(same), std::invalid_argument);  // already normalized
}

TEST_CASE("normalize_mel output always lands in [0,1]") {
  RngStream rng(35);
  for (int trial = 0; trial < 50; ++trial) {
    MelSpectrogram mel;
    mel.config = default_cfg();
    mel.config.n_mels = 6;
    mel.values = Tensor({4, 6});
    for (std::size_t i = 0; i < mel.values.numel(); ++i)
      mel.values[i] = rng.uniform(-120.0, 40.0);
    auto n = normalize_mel(mel);
    for (std::size_t i = 0; i < n.values.numel(); ++i) {
      CHECK(n.values[i] >= 0.0);
      CHECK(n.values[i] <= 1.0);
    }
  }
}

TEST_CASE("segment_mel") {
  auto make = [](int t, int b) {
    MelSpectrogram m;
    m.config = default_cfg();
    m.config.n_mels = b;
    m.values = Tensor({t, b});
    for (std::size_t i = 0; i < m.values.numel(); ++i) m.values[i] = static_cast<double>(i);
    return m;
  };

  // exact tiling: 512 frames, window 128, hop 128 -> 4 segments
  auto tiled = segment_mel(make(512, 8), 128, 128);
  CHECK(tiled.size() == 4);

  // loop padding: 100 frames -> one 128-frame segment, frames 100..127
  // repeat frames 0..27
  auto padded = segment_mel(make(100, 8), 128, 128);
  REQUIRE(padded.size() == 1);
  CHECK(padded[0].frames() == 128);
  const auto& src = make(100, 8);
  for (int t = 100; t < 128; ++t)
    for (int b = 0; b < 8; ++b)
      CHECK(padded[0].values[static_cast<std::size_t>(t) * 8 + b] ==
            src.values[static_cast<std::size_t>(t - 100) * 8 + b]);

  // count formula: floor((300-128)/64)+1 = 3
  auto hopped = segment_mel(make(300, 8), 128, 64);
  CHECK(hopped.size() == 3);

  // exact-tiling segments concatenate back to the input bit-exactly
  auto m = make(256, 8);
  auto segs = segment_mel(m, 64, 64);
  REQUIRE(segs.size() == 4);
  for (std::size_t s = 0; s < segs.size(); ++s)
    for (std::size_t i = 0; i < segs[s].values.numel(); ++i)
      CHECK(segs[s].values[i] == m.values[s * segs[s].values.numel() + i]);

  CHECK_THROWS_AS(segment_mel(make(10, 4), 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(segment_mel(MelSpectrogram{}, 128, 64), std::invalid_argument);
}

TEST_CASE("feature container round trip") {
  fs::path dir = fs::temp_directory_path() / "sergan_store_test";
  fs::remove_all(dir);
  FeatureStore store(dir.string());

  MelSpectrogram mel;
  mel.config = default_cfg();
  mel.config.n_mels = 5;
  mel.normalized = true;
  mel.values = Tensor({3, 5});
  RngStream rng(36);
  for (std::size_t i = 0; i < mel.values.numel(); ++i) mel.values[i] = rng.uniform();

  // f64 path is bit exact
  store.save("utt1", mel, /*as_float32=*/false);
  auto back = store.load("utt1");
  CHECK(back.normalized);
  CHECK(back.config.n_mels == 5);
  REQUIRE(back.values.same_shape(mel.values));
  for (std::size_t i = 0; i < mel.values.numel(); ++i) CHECK(back.values[i] == mel.values[i]);

  // f32 path is lossy but close
  store.save("utt2", mel, /*as_float32=*/true);
  auto back32 = store.load("utt2");
  for (std::size_t i = 0; i < mel.values.numel(); ++i)
    CHECK(back32.values[i] == doctest::Approx(mel.values[i]).epsilon(1e-6));

  CHECK(store.has("utt1"));
  CHECK_FALSE(store.has("nope"));
  CHECK_THROWS(store.load("nope"));

  // truncated file is rejected
  {
    std::ifstream in(store.path_for("utt1"), std::ios::binary);
    std::vector<char> buf(30);
    in.read(buf.data(), 30);
    std::ofstream out(store.path_for("trunc"), std::ios::binary);
    out.write(buf.data(), in.gcount());
  }
  CHECK_THROWS_WITH_AS(read_mel_file(store.path_for("trunc")),
                       doctest::Contains("truncated"), std::runtime_error);

  fs::remove_all(dir);
}

TEST_CASE("wav io and resampling") {
  fs::path dir = fs::temp_directory_path() / "sergan_wav_test";
  fs::create_directories(dir);
  std::string path = (dir / "tone.wav").string();

  std::vector<double> tone(8000);
  for (std::size_t i = 0; i < tone.size(); ++i)
    tone[i] = 0.5 * std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / 8000.0);
  write_wav_pcm16(path, tone, 8000);

  auto wav = read_wav(path);
  CHECK(wav.sample_rate_hz == 8000);
  REQUIRE(wav.samples.size() == tone.size());
  for (std::size_t i = 0; i < tone.size(); i += 500)
    CHECK(wav.samples[i] == doctest::Approx(tone[i]).epsilon(1e-3));

  auto up = resample_linear(wav.samples, 8000, 16000);
  CHECK(up.size() >= 2 * wav.samples.size() - 2);

  auto same = resample_linear(wav.samples, 8000, 8000);
  CHECK(same.size() == wav.samples.size());

  auto loaded = load_audio_mono(path, 16000);
  CHECK(loaded.size() == up.size());

  CHECK_THROWS(read_wav((dir / "missing.wav").string()));
  fs::remove_all(dir);
}
