#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace casceq {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

/// Mean squared amplitude over the whole clip.
double mean_power(std::span<const double> samples);

/// 16-bit PCM mono RIFF/WAVE. Samples are scaled to [-1, 1).
Waveform read_wav(const std::filesystem::path& path);
/// Values are clamped to [-1, 1] before quantization.
void write_wav(const Waveform& wave, const std::filesystem::path& path);

struct MixResult {
  Waveform mixture;
  Waveform scaled_noise;   // g * noise segment, before any peak rescale
  double gain = 0.0;       // g
  std::size_t noise_offset = 0;
  double target_snr_db = 0.0;
  double achieved_snr_db = 0.0;  // measured on signal vs scaled_noise
  bool peak_rescaled = false;
  double rescale = 1.0;    // applied to the mixture when peak_rescaled

  nlohmann::json metadata() const;
};

/// Adds noise at an exact SNR. Power is measured over the full clip; the
/// noise starts at a seeded uniform offset and is looped to the signal
/// length. If the mixture peak exceeds 1 it is scaled by 1/peak.
MixResult mix_at_snr(const Waveform& signal, const Waveform& noise, double snr_db,
                     std::uint64_t seed);

/// 10 log10(P_signal / P_noise).
double measured_snr(std::span<const double> signal, std::span<const double> noise);
double measured_snr(const Waveform& signal, const Waveform& noise);

struct FrameSpec {
  double frame_length = 0.025;  // seconds
  double hop = 0.010;

  std::size_t frame_samples(int sample_rate) const;
  std::size_t hop_samples(int sample_rate) const;
};

struct PitchRange {
  double f_min = 50.0;
  double f_max = 400.0;
};

inline constexpr double kEnergyEpsilon = 1e-10;
inline constexpr double kVoicingThreshold = 0.5;

/// Per-frame log(RMS + 1e-10); floor((len - frame) / hop) + 1 frames.
std::vector<double> frame_energy(const Waveform& wave, const FrameSpec& frames = {});

/// Per-frame F0 in Hz from the normalized autocorrelation peak over lags
/// [sr/f_max, sr/f_min]; 0 marks unvoiced frames.
std::vector<double> estimate_pitch(const Waveform& wave, const FrameSpec& frames = {},
                                   const PitchRange& range = {});

struct AcousticSeries {
  double frame_length = 0.0;
  double hop = 0.0;
  std::vector<double> energy;
  std::vector<double> pitch;
};

AcousticSeries acoustic_series(const Waveform& wave, const FrameSpec& frames = {},
                               const PitchRange& range = {});

}  // namespace casceq
