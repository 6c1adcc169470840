// SPDX-License-Identifier: Apache-2.0
/**
 * @file   features.hpp
 * @brief  16 kHz audio -> stacked 240-dim log-mel features, and nearest
 *         neighbour synchronization of video frames to acoustic steps.
 *
 * Acoustic pipeline: 400-sample (25 ms) frames every 160 samples (10 ms),
 * periodic Hann window, 512-point power spectrum, 80 triangular mel filters
 * over 125-7500 Hz (mel = 2595 log10(1 + f/700), triangles in mel space),
 * log(max(energy, 1e-10)), then three consecutive frames folded into one
 * 240-dim vector (one per 30 ms, ~33.3 Hz).
 */
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "avsel/tensor.hpp"
#include "avsel/tensor_io.hpp"

namespace avsel {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindow = 400;
inline constexpr std::size_t kHop = 160;
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kMelBins = 80;
inline constexpr std::size_t kStack = 3;
inline constexpr std::size_t kAcousticDim = kMelBins * kStack;  // 240
inline constexpr double kAcousticFps = 100.0 / 3.0;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
};

struct MelConfig {
  std::size_t fft_size = kFftSize;
  std::size_t bins = kMelBins;
  double low_hz = 125.0;
  double high_hz = 7500.0;
  double log_floor = 1e-10;
  int sample_rate = kSampleRate;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Periodic Hann window: 0.5 - 0.5 cos(2 pi n / N).
inline std::vector<double> hann_window(std::size_t n) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(two_pi * double(i) / double(n));
  return w;
}

inline std::size_t num_frames(std::size_t samples) {
  return samples < kWindow ? 0 : 1 + (samples - kWindow) / kHop;
}

/// Windowed frames [T', 400].
inline Tensor frame_signal(const Waveform &wave) {
  if (wave.sample_rate != kSampleRate)
    throw std::invalid_argument("frame_signal: sample rate must be 16000, got " +
                                std::to_string(wave.sample_rate));
  const std::size_t n = num_frames(wave.samples.size());
  if (n == 0)
    throw std::invalid_argument("frame_signal: need at least 400 samples, got " +
                                std::to_string(wave.samples.size()));
  const auto w = hann_window(kWindow);
  Tensor out({n, kWindow});
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t i = 0; i < kWindow; ++i)
      out[f * kWindow + i] = wave.samples[f * kHop + i] * w[i];
  return out;
}

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>> &a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  constexpr double pi = 3.14159265358979323846264338327950288;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * pi / double(len);
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * double(k)),
                                     std::sin(ang * double(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
  }
}

/// Triangular mel filterbank [bins, fft_size/2 + 1].
inline Tensor mel_filterbank(const MelConfig &cfg = {}) {
  const std::size_t nfreq = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.low_hz), hi = hz_to_mel(cfg.high_hz);
  std::vector<double> edges(cfg.bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = lo + (hi - lo) * double(i) / double(cfg.bins + 1);
  Tensor fb({cfg.bins, nfreq});
  for (std::size_t m = 0; m < cfg.bins; ++m)
    for (std::size_t k = 0; k < nfreq; ++k) {
      const double mel =
          hz_to_mel(double(k) * cfg.sample_rate / double(cfg.fft_size));
      const double l = edges[m], c = edges[m + 1], u = edges[m + 2];
      double w = 0.0;
      if (mel > l && mel <= c)
        w = (mel - l) / (c - l);
      else if (mel > c && mel < u)
        w = (u - mel) / (u - c);
      fb[m * nfreq + k] = w;
    }
  return fb;
}

/// Power spectrum |DFT|^2 of each zero-padded frame, [T', fft_size/2 + 1].
inline Tensor power_spectrum(const Tensor &frames, std::size_t fft_size = kFftSize) {
  expect_rank(frames, 2, "power_spectrum frames");
  const std::size_t n = frames.dim(0), len = frames.dim(1);
  if (len > fft_size)
    throw ShapeError("power_spectrum: frame length exceeds FFT size");
  const std::size_t nfreq = fft_size / 2 + 1;
  Tensor out({n, nfreq});
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t f = 0; f < n; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < len; ++i) buf[i] = frames[f * len + i];
    fft(buf);
    for (std::size_t k = 0; k < nfreq; ++k) out[f * nfreq + k] = std::norm(buf[k]);
  }
  return out;
}

/// Log mel energies [T', 80].
inline Tensor log_mel(const Tensor &frames, const MelConfig &cfg = {}) {
  require_finite(frames, "log_mel frames");
  const Tensor power = power_spectrum(frames, cfg.fft_size);
  const Tensor fb = mel_filterbank(cfg);
  const std::size_t n = power.dim(0), nfreq = power.dim(1);
  Tensor out({n, cfg.bins});
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t m = 0; m < cfg.bins; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < nfreq; ++k)
        e += fb[m * nfreq + k] * power[f * nfreq + k];
      out[f * cfg.bins + m] = std::log(std::max(e, cfg.log_floor));
    }
  return out;
}

/// Concatenates rows 3t, 3t+1, 3t+2; the T' mod 3 trailing rows are dropped.
inline Tensor stack3(const Tensor &feats) {
  expect_rank(feats, 2, "stack3 input");
  const std::size_t n = feats.dim(0), d = feats.dim(1);
  if (n < kStack)
    throw ShapeError("stack3: need at least 3 rows, got " + std::to_string(n));
  const std::size_t out_rows = n / kStack;
  Tensor out({out_rows, d * kStack});
  std::copy_n(feats.ptr(), out_rows * kStack * d, out.ptr());
  return out;
}

/// Waveform -> [T, 240].
inline Tensor acoustic_features(const Waveform &wave, const MelConfig &cfg = {}) {
  return stack3(log_mel(frame_signal(wave), cfg));
}

inline std::size_t acoustic_steps(std::size_t samples) {
  return num_frames(samples) / kStack;
}

// ---------------------------------------------------------------------------
// A/V synchronization

/// Positive rational frame rate.
struct Rate {
  std::int64_t num = 1;
  std::int64_t den = 1;

  /// Best rational approximation (continued fractions, denominator <= 10^6)
  /// within 1e-12 relative; exact for rates like 100/3 and 29.97.
  static Rate from_double(double x) {
    if (!(x > 0) || !std::isfinite(x))
      throw std::invalid_argument("Rate: frame rate must be positive and finite");
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double r = x;
    for (int it = 0; it < 64; ++it) {
      const double a = std::floor(r);
      const auto ai = static_cast<std::int64_t>(a);
      const std::int64_t p2 = ai * p1 + p0, q2 = ai * q1 + q0;
      if (q2 > 1000000) break;
      p0 = p1, q0 = q1, p1 = p2, q1 = q2;
      if (std::abs(double(p1) / double(q1) - x) <= 1e-12 * x) break;
      const double frac = r - a;
      if (frac <= 0) break;
      r = 1.0 / frac;
    }
    const std::int64_t g = std::gcd(p1, q1);
    return {p1 / g, q1 / g};
  }

  double value() const { return double(num) / double(den); }
};

/**
 * 1-based video frame for 1-based acoustic step i_a:
 *   round_half_up(i_a * v_fps / a_fps), clamped to [1, frames].
 * Computed in exact integer arithmetic.
 */
inline std::size_t sync_index(std::size_t i_a, Rate v_fps, Rate a_fps,
                              std::size_t frames) {
  using i128 = __int128;
  const i128 num = i128(i_a) * v_fps.num * a_fps.den;
  const i128 den = i128(v_fps.den) * a_fps.num;
  // floor(num/den + 1/2) = floor((2 num + den) / (2 den))
  i128 idx = (2 * num + den) / (2 * den);
  if (idx < 1) idx = 1;
  if (idx > i128(frames)) idx = i128(frames);
  return static_cast<std::size_t>(idx);
}

inline std::size_t sync_index(std::size_t i_a, double v_fps, double a_fps,
                              std::size_t frames = SIZE_MAX) {
  return sync_index(i_a, Rate::from_double(v_fps), Rate::from_double(a_fps),
                    frames);
}

struct VideoTrack {
  Tensor frames;  // [F, H, W, 3], values in [-1, 1]
  double fps = 25.0;
};

/// 0-based source frame for each of T acoustic steps.
inline std::vector<std::size_t> sync_map(std::size_t frames, double fps,
                                         std::size_t steps,
                                         double a_fps = kAcousticFps) {
  const Rate v = Rate::from_double(fps), a = Rate::from_double(a_fps);
  std::vector<std::size_t> map(steps);
  for (std::size_t i = 0; i < steps; ++i)
    map[i] = sync_index(i + 1, v, a, frames) - 1;
  return map;
}

inline Tensor resample_track(const VideoTrack &track, std::size_t steps,
                             double a_fps = kAcousticFps) {
  if (track.frames.rank() != 4)
    throw std::invalid_argument("resample_track: empty track");
  if (!(track.fps > 0))
    throw std::invalid_argument("resample_track: fps must be positive");
  if (steps == 0) throw std::invalid_argument("resample_track: steps must be > 0");
  const std::size_t F = track.frames.dim(0);
  const std::size_t frame_size = track.frames.size() / F;
  for (double v : track.frames.data())
    if (!(v >= -1.0 && v <= 1.0))
      throw std::invalid_argument("resample_track: pixel value outside [-1, 1]");
  const auto map = sync_map(F, track.fps, steps, a_fps);
  const auto &fr = track.frames;
  Tensor out({steps, fr.dim(1), fr.dim(2), fr.dim(3)});
  for (std::size_t i = 0; i < steps; ++i)
    std::copy_n(track.frames.ptr() + map[i] * frame_size, frame_size,
                out.ptr() + i * frame_size);
  return out;
}

// ---------------------------------------------------------------------------
// WAV (RIFF, PCM 16-bit mono)

inline Waveform read_wav(const fs::path &path) {
  const std::string bytes = read_text(path);
  const auto u16 = [&](std::size_t o) {
    return std::uint32_t(static_cast<unsigned char>(bytes[o])) |
           std::uint32_t(static_cast<unsigned char>(bytes[o + 1])) << 8;
  };
  const auto u32 = [&](std::size_t o) { return u16(o) | u16(o + 2) << 16; };
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 ||
      bytes.compare(8, 4, "WAVE") != 0)
    throw IoError("not a RIFF/WAVE file: " + path.string());
  std::size_t pos = 12;
  bool have_fmt = false;
  Waveform w;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::size_t len = u32(pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size())
      throw IoError("truncated chunk '" + id + "' in " + path.string());
    if (id == "fmt ") {
      if (len < 16) throw IoError("short fmt chunk in " + path.string());
      const auto format = u16(body), channels = u16(body + 2),
                 bits = u16(body + 14);
      w.sample_rate = static_cast<int>(u32(body + 4));
      if (format != 1 || channels != 1 || bits != 16)
        throw IoError("expected mono 16-bit PCM: " + path.string());
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError("data chunk before fmt in " + path.string());
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] =
            static_cast<std::int16_t>(u16(body + 2 * i)) / 32768.0;
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw IoError("no data chunk in " + path.string());
}

inline void write_wav(const fs::path &path, const Waveform &w) {
  std::string out;
  const auto put16 = [&](std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
  };
  const auto put32 = [&](std::uint32_t v) {
    put16(v & 0xffff);
    put16(v >> 16);
  };
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  out += "RIFF";
  put32(36 + data_len);
  out += "WAVEfmt ";
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(w.sample_rate));
  put32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(2);
  put16(16);
  out += "data";
  put32(data_len);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put16(static_cast<std::uint16_t>(
        static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  write_text(path, out);
}

}  // namespace avsel
