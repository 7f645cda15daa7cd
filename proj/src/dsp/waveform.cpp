#include "avsep/dsp/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

namespace avsep::dsp {

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double peak(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

namespace {

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

double decode_sample(const unsigned char* p, int bits, bool is_float) {
  if (is_float) {
    float f;
    std::uint32_t u = le32(p);
    std::memcpy(&f, &u, sizeof f);
    return f;
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<std::int16_t>(le16(p)) / 32768.0;
    case 24: {
      std::int32_t v = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
      if (v & 0x800000) v |= ~0xffffff;
      return v / 8388608.0;
    }
    case 32:
      return static_cast<std::int32_t>(le32(p)) / 2147483648.0;
    default:
      throw InvalidInput("unsupported WAV bit depth: " + std::to_string(bits));
  }
}

// Hann-windowed sinc low-pass with cutoff at `cutoff` (fraction of Nyquist).
std::vector<double> lowpass_taps(int half_len, double cutoff) {
  std::vector<double> h(2 * half_len + 1);
  for (int i = -half_len; i <= half_len; ++i) {
    double x = static_cast<double>(i);
    double sinc = i == 0 ? cutoff : std::sin(std::numbers::pi * cutoff * x) / (std::numbers::pi * x);
    double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / (half_len + 1));
    h[i + half_len] = sinc * win;
  }
  return h;
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path, int target_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open WAV file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IntegrityError("not a RIFF/WAVE file: " + path.string());

  int channels = 0, rate = 0, bits = 0;
  bool is_float = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::uint32_t len = le32(chunk + 4);
    if (pos + 8 + len > bytes.size()) len = static_cast<std::uint32_t>(bytes.size() - pos - 8);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && len >= 16) {
      std::uint16_t format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = static_cast<int>(le32(chunk + 12));
      bits = le16(chunk + 22);
      is_float = format == 3;
      if (format != 1 && format != 3 && format != 0xfffe)
        throw InvalidInput("unsupported WAV encoding " + std::to_string(format));
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (channels <= 0 || rate <= 0 || data == nullptr)
    throw IntegrityError("WAV file missing fmt or data chunk: " + path.string());

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_len / frame_bytes;
  std::vector<double> mono(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c)
      acc += decode_sample(data + i * frame_bytes + c * (bits / 8), bits, is_float);
    mono[i] = acc / channels;
  }
  Waveform w;
  w.sample_rate = target_rate;
  w.samples = rate == target_rate ? std::move(mono) : resample_linear(mono, rate, target_rate);
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  require(w.sample_rate > 0, "write_wav: sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(w.sample_rate));
  put32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, 2 * n);
  for (double s : w.samples) {
    double c = std::clamp(std::isfinite(s) ? s : 0.0, -1.0, 1.0);
    auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    put16(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidInput("cannot write WAV file: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

std::vector<double> resample_linear(const std::vector<double>& x, int from_rate, int to_rate) {
  require(from_rate > 0 && to_rate > 0, "resample: rates must be positive");
  if (x.empty() || from_rate == to_rate) return x;
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) * to_rate / static_cast<double>(from_rate)));
  std::vector<double> y(n_out);
  const double step = static_cast<double>(from_rate) / to_rate;
  for (std::size_t i = 0; i < n_out; ++i) {
    double t = static_cast<double>(i) * step;
    auto j = static_cast<std::size_t>(t);
    if (j + 1 >= x.size()) {
      y[i] = x.back();
      continue;
    }
    double frac = t - static_cast<double>(j);
    y[i] = x[j] * (1.0 - frac) + x[j + 1] * frac;
  }
  return y;
}

std::vector<double> decimate(const std::vector<double>& x, int factor) {
  require(factor >= 1, "decimate: factor must be >= 1");
  if (factor == 1) return x;
  const int half = 8 * factor;
  const auto h = lowpass_taps(half, 0.9 / factor);
  const std::size_t n_out = x.size() / factor;
  std::vector<double> y(n_out, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t i = 0; i < n_out; ++i) {
    const auto c = static_cast<std::ptrdiff_t>(i) * factor;
    double acc = 0.0;
    for (int k = -half; k <= half; ++k) {
      std::ptrdiff_t j = c - k;
      if (j >= 0 && j < n) acc += h[k + half] * x[static_cast<std::size_t>(j)];
    }
    y[i] = acc;
  }
  return y;
}

std::vector<double> interpolate(const std::vector<double>& x, int factor) {
  require(factor >= 1, "interpolate: factor must be >= 1");
  if (factor == 1) return x;
  const int half = 8 * factor;
  const auto h = lowpass_taps(half, 0.9 / factor);
  const std::size_t n_out = x.size() * factor;
  std::vector<double> y(n_out, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t i = 0; i < n_out; ++i) {
    const auto ii = static_cast<std::ptrdiff_t>(i);
    // source sample j sits at stuffed position j * factor
    std::ptrdiff_t j_lo = ii - half <= 0 ? 0 : (ii - half + factor - 1) / factor;
    std::ptrdiff_t j_hi = std::min<std::ptrdiff_t>(n - 1, (ii + half) / factor);
    double acc = 0.0;
    for (std::ptrdiff_t j = j_lo; j <= j_hi; ++j)
      acc += h[static_cast<std::size_t>(ii - j * factor + half)] * x[static_cast<std::size_t>(j)];
    y[i] = acc * factor;
  }
  return y;
}

Waveform convert_rate(const Waveform& w, int to_rate) {
  if (w.sample_rate == to_rate) return w;
  Waveform out;
  out.sample_rate = to_rate;
  if (w.sample_rate % to_rate == 0)
    out.samples = decimate(w.samples, w.sample_rate / to_rate);
  else if (to_rate % w.sample_rate == 0)
    out.samples = interpolate(w.samples, to_rate / w.sample_rate);
  else
    out.samples = resample_linear(w.samples, w.sample_rate, to_rate);
  return out;
}

}  // namespace avsep::dsp
