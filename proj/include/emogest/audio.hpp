#pragma once

// Waveform handling and the mel-spectrogram front end: WAV read/write,
// linear resampling, Hann-window STFT and an HTK-scale mel filterbank.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "emogest/tensor.hpp"

namespace emogest {

struct AudioClip {
  std::vector<double> samples;  // mono, nominally in [-1,1]
  double sample_rate = 16000.0;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// ---------------------------------------------------------------------------
// WAV I/O (PCM16 and IEEE float32, mono or stereo downmixed to mono)
// ---------------------------------------------------------------------------

namespace wav_detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void push_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}

inline void push_u16(std::vector<unsigned char>& v, std::uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

}  // namespace wav_detail

inline AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t chunk_len = wav_detail::read_u32(bytes.data() + pos + 4);
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0 && pos + 8 + 16 <= bytes.size()) {
      format = wav_detail::read_u16(bytes.data() + pos + 8);
      channels = wav_detail::read_u16(bytes.data() + pos + 10);
      rate = wav_detail::read_u32(bytes.data() + pos + 12);
      bits = wav_detail::read_u16(bytes.data() + pos + 22);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data_off = pos + 8;
      data_len = std::min<std::size_t>(chunk_len, bytes.size() - data_off);
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (data_off == 0 || channels == 0 || rate == 0)
    throw std::runtime_error("read_wav: missing fmt/data chunk: " + path);

  AudioClip clip;
  clip.sample_rate = static_cast<double>(rate);
  const unsigned char* d = bytes.data() + data_off;
  if (format == 1 && bits == 16) {
    const std::size_t n = data_len / 2 / channels;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const std::int16_t s = static_cast<std::int16_t>(
            wav_detail::read_u16(d + (i * channels + ch) * 2));
        acc += static_cast<double>(s) / 32768.0;
      }
      clip.samples[i] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_len / 4 / channels;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        float f;
        std::uint32_t u = wav_detail::read_u32(d + (i * channels + ch) * 4);
        std::memcpy(&f, &u, 4);
        acc += f;
      }
      clip.samples[i] = acc / channels;
    }
  } else {
    throw std::runtime_error("read_wav: unsupported encoding (need PCM16 or float32): " + path);
  }
  return clip;
}

inline void write_wav(const std::string& path, const AudioClip& clip) {
  std::vector<unsigned char> v;
  const std::uint32_t rate = static_cast<std::uint32_t>(clip.sample_rate);
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  v.insert(v.end(), {'R', 'I', 'F', 'F'});
  wav_detail::push_u32(v, 36 + data_len);
  v.insert(v.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wav_detail::push_u32(v, 16);
  wav_detail::push_u16(v, 1);  // PCM
  wav_detail::push_u16(v, 1);  // mono
  wav_detail::push_u32(v, rate);
  wav_detail::push_u32(v, rate * 2);
  wav_detail::push_u16(v, 2);
  wav_detail::push_u16(v, 16);
  v.insert(v.end(), {'d', 'a', 't', 'a'});
  wav_detail::push_u32(v, data_len);
  for (double s : clip.samples) {
    const long q = std::lround(std::min(1.0, std::max(-1.0, s)) * 32768.0);
    const std::int16_t q16 = static_cast<std::int16_t>(std::min<long>(q, 32767));
    wav_detail::push_u16(v, static_cast<std::uint16_t>(q16));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_wav: cannot open " + path);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
}

inline AudioClip resample_linear(const AudioClip& clip, double target_rate) {
  if (target_rate <= 0) throw std::invalid_argument("resample_linear: rate must be positive");
  if (clip.sample_rate == target_rate || clip.samples.empty()) {
    AudioClip out = clip;
    out.sample_rate = target_rate;
    return out;
  }
  const std::size_t n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(clip.samples.size()) * target_rate / clip.sample_rate));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<std::size_t>(n_out, 1));
  const double step = clip.sample_rate / target_rate;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double src = static_cast<double>(i) * step;
    const std::size_t j = std::min(static_cast<std::size_t>(src), clip.samples.size() - 1);
    const std::size_t j1 = std::min(j + 1, clip.samples.size() - 1);
    const double w = src - static_cast<double>(j);
    out.samples[i] = (1.0 - w) * clip.samples[j] + w * clip.samples[j1];
  }
  return out;
}

// Pad with trailing zeros or center-crop so the clip lasts exactly `seconds`.
// Returns true when the clip was altered.
inline bool fit_to_duration(AudioClip& clip, double seconds) {
  const std::size_t want = static_cast<std::size_t>(std::llround(seconds * clip.sample_rate));
  if (clip.samples.size() == want) return false;
  if (clip.samples.size() < want) {
    clip.samples.resize(want, 0.0);
  } else {
    const std::size_t start = (clip.samples.size() - want) / 2;
    clip.samples = std::vector<double>(clip.samples.begin() + static_cast<long>(start),
                                       clip.samples.begin() + static_cast<long>(start + want));
  }
  return true;
}

// ---------------------------------------------------------------------------
// mel spectrogram
// ---------------------------------------------------------------------------

struct MelSpectrogram {
  Tensor values;  // {frames, mel_bins}, log power
  std::size_t fft_size = 1024;
  std::size_t hop_length = 512;
  double sample_rate = 16000.0;

  std::size_t frames() const { return values.dim(0); }
  std::size_t mel_bins() const { return values.dim(1); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Center frequencies (Hz) of the triangular mel filters; bins+2 edge points
// spaced evenly on the mel scale between 0 and sr/2, entries 1..bins are the
// peaks.
inline std::vector<double> mel_filter_points(double sample_rate, std::size_t bins) {
  std::vector<double> pts(bins + 2);
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  for (std::size_t i = 0; i < pts.size(); ++i)
    pts[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(bins + 1));
  return pts;
}

// Hann-window STFT with centered frames (zero padding of fft_size/2 on both
// sides), power spectrum through a triangular mel filterbank, log with a hard
// floor. Frame count is floor(len/hop)+1.
inline MelSpectrogram compute_mel(const AudioClip& audio, std::size_t fft_size,
                                  std::size_t hop_length, std::size_t mel_bins,
                                  double log_floor = 1e-5) {
  if (audio.samples.empty()) throw std::invalid_argument("compute_mel: empty audio");
  if (audio.sample_rate <= 0) throw std::invalid_argument("compute_mel: sample_rate must be positive");
  if (fft_size < hop_length) throw std::invalid_argument("compute_mel: fft_size < hop_length");
  if (mel_bins == 0) throw std::invalid_argument("compute_mel: mel_bins must be positive");

  const std::size_t n = audio.samples.size();
  const std::size_t frames = n / hop_length + 1;
  const std::size_t spec_bins = fft_size / 2 + 1;

  std::vector<double> window(fft_size);
  for (std::size_t i = 0; i < fft_size; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                     static_cast<double>(fft_size));

  // Triangular filterbank rows over the linear-frequency power bins.
  const std::vector<double> pts = mel_filter_points(audio.sample_rate, mel_bins);
  std::vector<std::vector<double>> fb(mel_bins, std::vector<double>(spec_bins, 0.0));
  const double hz_per_bin = audio.sample_rate / static_cast<double>(fft_size);
  for (std::size_t m = 0; m < mel_bins; ++m) {
    const double lo = pts[m], mid = pts[m + 1], hi = pts[m + 2];
    for (std::size_t b = 0; b < spec_bins; ++b) {
      const double f = static_cast<double>(b) * hz_per_bin;
      if (f > lo && f < mid)
        fb[m][b] = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        fb[m][b] = (hi - f) / (hi - mid);
    }
  }

  Eigen::FFT<double> fft;
  std::vector<double> frame(fft_size);
  std::vector<std::complex<double>> spectrum;
  Tensor out({frames, mel_bins});
  const long half = static_cast<long>(fft_size / 2);
  for (std::size_t t = 0; t < frames; ++t) {
    const long center = static_cast<long>(t * hop_length);
    for (std::size_t i = 0; i < fft_size; ++i) {
      const long idx = center - half + static_cast<long>(i);
      const double s = (idx >= 0 && idx < static_cast<long>(n))
                           ? audio.samples[static_cast<std::size_t>(idx)]
                           : 0.0;
      frame[i] = s * window[i];
    }
    fft.fwd(spectrum, frame);
    for (std::size_t m = 0; m < mel_bins; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < spec_bins; ++b) e += fb[m][b] * std::norm(spectrum[b]);
      out(t, m) = std::log(std::max(e, log_floor));
    }
  }

  MelSpectrogram mel;
  mel.values = std::move(out);
  mel.fft_size = fft_size;
  mel.hop_length = hop_length;
  mel.sample_rate = audio.sample_rate;
  return mel;
}

}  // namespace emogest
