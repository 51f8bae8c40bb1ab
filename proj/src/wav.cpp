#include "sergan/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sergan {

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open " + path);

  char riff[4], wave[4];
  in.read(riff, 4);
  read_u32(in);  // overall size
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: " + path + " is not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<char> data;
  bool got_fmt = false, got_data = false;

  while (in && !(got_fmt && got_data)) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    std::uint32_t size = read_u32(in);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_u16(in);
      channels = read_u16(in);
      rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (size > 16) in.ignore(size - 16);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      if (static_cast<std::uint32_t>(in.gcount()) != size)
        throw std::runtime_error("read_wav: truncated data chunk in " + path);
      got_data = true;
    } else {
      in.ignore(size + (size & 1));  // chunks are word-aligned
    }
  }
  if (!got_fmt || !got_data)
    throw std::runtime_error("read_wav: missing fmt or data chunk in " + path);
  if (channels == 0 || rate == 0)
    throw std::runtime_error("read_wav: bad fmt chunk in " + path);

  WavData out;
  out.sample_rate_hz = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const std::size_t n = data.size() / 2 / channels;
    out.samples.resize(n);
    const auto* p = reinterpret_cast<const std::int16_t*>(data.data());
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::uint16_t c = 0; c < channels; ++c) acc += p[i * channels + c] / 32768.0;
      out.samples[i] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data.size() / 4 / channels;
    out.samples.resize(n);
    const auto* p = reinterpret_cast<const float*>(data.data());
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::uint16_t c = 0; c < channels; ++c) acc += p[i * channels + c];
      out.samples[i] = acc / channels;
    }
  } else {
    throw std::runtime_error("read_wav: unsupported format (fmt=" + std::to_string(format) +
                             ", bits=" + std::to_string(bits) + ") in " + path);
  }
  return out;
}

std::vector<double> resample_linear(const std::vector<double>& x, int from_rate,
                                    int to_rate) {
  if (from_rate <= 0 || to_rate <= 0)
    throw std::invalid_argument("resample_linear: rates must be positive");
  if (from_rate == to_rate || x.empty()) return x;
  const double ratio = static_cast<double>(from_rate) / to_rate;
  const std::size_t n_out =
      static_cast<std::size_t>(std::floor((x.size() - 1) / ratio)) + 1;
  std::vector<double> out(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    double pos = i * ratio;
    std::size_t lo = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(lo);
    std::size_t hi = std::min(lo + 1, x.size() - 1);
    out[i] = x[lo] * (1.0 - frac) + x[hi] * frac;
  }
  return out;
}

std::vector<double> load_audio_mono(const std::string& path, int target_rate_hz) {
  WavData w = read_wav(path);
  return resample_linear(w.samples, w.sample_rate_hz, target_rate_hz);
}

void write_wav_pcm16(const std::string& path, const std::vector<double>& samples,
                     int sample_rate_hz) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_wav_pcm16: cannot open " + path);
  const std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<std::uint32_t>(sample_rate_hz));
  write_u32(out, static_cast<std::uint32_t>(sample_rate_hz * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_size);
  for (double s : samples) {
    double c = std::clamp(s, -1.0, 1.0);
    auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
    write_u16(out, static_cast<std::uint16_t>(v));
  }
}

}  // namespace sergan
