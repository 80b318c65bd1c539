#include "casceq/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "casceq/error.hpp"
#include "casceq/rng.hpp"

namespace casceq {

double mean_power(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (double s : samples) sum += s * s;
  return sum / static_cast<double>(samples.size());
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xffu));
  out.push_back(static_cast<char>((v >> 8) & 0xffu));
}

void require_valid(const Waveform& w, const char* what) {
  if (w.sample_rate <= 0) throw InputError(std::string(what) + ": sample rate must be positive");
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw InputError(std::string(what) + ": non-finite sample");
  }
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open WAV file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) { return InputError(path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  int channels = 0;
  int bits = 0;
  Waveform wave;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw fail("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw fail("short fmt chunk");
      const std::uint16_t format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      wave.sample_rate = static_cast<int>(read_u32(bytes.data() + body + 4));
      bits = read_u16(bytes.data() + body + 14);
      if (format != 1) throw fail("only PCM WAV is supported");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels != 1 || bits != 16) throw fail("expected 16-bit mono PCM");
      const std::size_t count = size / 2;
      wave.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const auto raw = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        wave.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      return wave;
    }
    pos = body + size + (size & 1u);
  }
  throw fail("no data chunk");
}

void write_wav(const Waveform& wave, const std::filesystem::path& path) {
  require_valid(wave, "write_wav");
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : wave.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(std::min(clamped * 32768.0, 32767.0)));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw InputError("cannot write WAV file: " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw InputError("write failed: " + path.string());
}

nlohmann::json MixResult::metadata() const {
  return {{"target_snr_db", target_snr_db},
          {"achieved_snr_db", achieved_snr_db},
          {"gain", gain},
          {"noise_offset", noise_offset},
          {"peak_rescaled", peak_rescaled},
          {"rescale", rescale},
          {"power_convention", "full-clip mean square"}};
}

double measured_snr(std::span<const double> signal, std::span<const double> noise) {
  const double ps = mean_power(signal);
  const double pn = mean_power(noise);
  if (ps <= 0.0) throw InputError("measured_snr: signal has zero power");
  if (pn <= 0.0) throw InputError("measured_snr: noise has zero power");
  return 10.0 * std::log10(ps / pn);
}

double measured_snr(const Waveform& signal, const Waveform& noise) {
  return measured_snr(signal.samples, noise.samples);
}

MixResult mix_at_snr(const Waveform& signal, const Waveform& noise, double snr_db,
                     std::uint64_t seed) {
  require_valid(signal, "signal");
  require_valid(noise, "noise");
  if (signal.sample_rate != noise.sample_rate) {
    throw InputError("sample-rate mismatch: signal " + std::to_string(signal.sample_rate) +
                     " Hz vs noise " + std::to_string(noise.sample_rate) + " Hz");
  }
  if (!std::isfinite(snr_db)) throw InputError("SNR must be finite");
  const double ps = mean_power(signal.samples);
  if (ps <= 0.0) throw InputError("signal has zero power");
  if (mean_power(noise.samples) <= 0.0) throw InputError("noise has zero power");

  MixResult r;
  r.target_snr_db = snr_db;
  Rng rng(seed);
  r.noise_offset = rng.index(noise.size());

  std::vector<double> segment(signal.size());
  for (std::size_t i = 0; i < segment.size(); ++i) {
    segment[i] = noise.samples[(r.noise_offset + i) % noise.size()];
  }
  const double pn = mean_power(segment);
  if (pn <= 0.0) throw InputError("noise segment has zero power");
  r.gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));

  r.scaled_noise.sample_rate = signal.sample_rate;
  r.scaled_noise.samples.resize(segment.size());
  r.mixture.sample_rate = signal.sample_rate;
  r.mixture.samples.resize(segment.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < segment.size(); ++i) {
    r.scaled_noise.samples[i] = r.gain * segment[i];
    r.mixture.samples[i] = signal.samples[i] + r.scaled_noise.samples[i];
    peak = std::max(peak, std::abs(r.mixture.samples[i]));
  }
  r.achieved_snr_db = measured_snr(signal.samples, r.scaled_noise.samples);
  if (peak > 1.0) {
    r.peak_rescaled = true;
    r.rescale = 1.0 / peak;
    for (double& s : r.mixture.samples) s *= r.rescale;
  }
  return r;
}

std::size_t FrameSpec::frame_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::lround(frame_length * sample_rate));
}

std::size_t FrameSpec::hop_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::lround(hop * sample_rate));
}

namespace {

struct Framing {
  std::size_t frame = 0;
  std::size_t hop = 0;
  std::size_t count = 0;
};

Framing framing(const Waveform& wave, const FrameSpec& spec) {
  require_valid(wave, "waveform");
  if (!(spec.hop > 0.0) || spec.frame_length < spec.hop) {
    throw InputError("frame spec requires frame_length >= hop > 0");
  }
  Framing f{spec.frame_samples(wave.sample_rate), spec.hop_samples(wave.sample_rate), 0};
  if (f.hop == 0 || f.frame == 0) throw InputError("frame or hop shorter than one sample");
  if (wave.size() < f.frame) throw InputError("audio shorter than one frame");
  f.count = (wave.size() - f.frame) / f.hop + 1;
  return f;
}

}  // namespace

std::vector<double> frame_energy(const Waveform& wave, const FrameSpec& spec) {
  const Framing f = framing(wave, spec);
  std::vector<double> out(f.count);
  for (std::size_t k = 0; k < f.count; ++k) {
    const std::span<const double> frame(wave.samples.data() + k * f.hop, f.frame);
    out[k] = std::log(std::sqrt(mean_power(frame)) + kEnergyEpsilon);
  }
  return out;
}

std::vector<double> estimate_pitch(const Waveform& wave, const FrameSpec& spec,
                                   const PitchRange& range) {
  const double nyquist = wave.sample_rate / 2.0;
  if (!(range.f_min > 0.0 && range.f_min < range.f_max && range.f_max < nyquist)) {
    throw InputError("pitch range requires 0 < f_min < f_max < sample_rate/2");
  }
  const Framing f = framing(wave, spec);
  const double sr = wave.sample_rate;
  const auto min_lag = static_cast<std::size_t>(std::ceil(sr / range.f_max));
  const auto max_lag = static_cast<std::size_t>(std::floor(sr / range.f_min));
  // One period of f_min plus a neighbour on each side of the peak.
  if (f.frame < max_lag + 2) {
    throw InputError("analysis window too short to hold one period of f_min");
  }

  std::vector<double> out(f.count, 0.0);
  std::vector<double> r(max_lag + 2, 0.0);
  for (std::size_t k = 0; k < f.count; ++k) {
    const double* x = wave.samples.data() + k * f.hop;
    const std::size_t n = f.frame;
    // Prefix sums of x^2 give the energy of each lagged window in O(1).
    std::vector<double> energy(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) energy[i + 1] = energy[i] + x[i] * x[i];
    if (energy[n] <= 0.0) continue;

    const std::size_t lo = min_lag > 1 ? min_lag - 1 : 1;
    for (std::size_t lag = lo; lag <= max_lag + 1; ++lag) {
      double dot = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i) dot += x[i] * x[i + lag];
      const double e0 = energy[n - lag];
      const double e1 = energy[n] - energy[lag];
      r[lag] = (e0 > 0.0 && e1 > 0.0) ? dot / std::sqrt(e0 * e1) : 0.0;
    }

    // Interior local maxima only: a peak on the range boundary means the
    // true period lies outside [min_lag, max_lag].
    double best = 0.0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
      if (r[lag] > r[lag - 1] && r[lag] >= r[lag + 1]) best = std::max(best, r[lag]);
    }
    if (best < kVoicingThreshold) continue;
    std::size_t chosen = 0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
      if (r[lag] > r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] >= 0.9 * best) {
        chosen = lag;
        break;
      }
    }
    const double a = r[chosen - 1];
    const double b = r[chosen];
    const double c = r[chosen + 1];
    const double denom = a - 2.0 * b + c;
    const double shift = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
    const double period = static_cast<double>(chosen) + std::clamp(shift, -0.5, 0.5);
    out[k] = std::clamp(sr / period, range.f_min, range.f_max);
  }
  return out;
}

AcousticSeries acoustic_series(const Waveform& wave, const FrameSpec& frames,
                               const PitchRange& range) {
  return {frames.frame_length, frames.hop, frame_energy(wave, frames),
          estimate_pitch(wave, frames, range)};
}

}  // namespace casceq
