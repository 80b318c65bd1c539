#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "casceq/error.hpp"
#include "casceq/rng.hpp"
#include "casceq/signal.hpp"

namespace fs = std::filesystem;
using namespace casceq;

namespace {

Waveform sine(double hz, double seconds, double amplitude = 1.0, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  for (std::size_t i = 0; i < n; ++i)
    w.samples.push_back(amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr));
  return w;
}

Waveform gaussian(std::size_t n, std::uint64_t seed, double sigma = 1.0) {
  Rng rng(seed);
  Waveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(sigma * rng.normal());
  return w;
}

}  // namespace

TEST(MixAtSnr, ZeroDbMatchesSignalPower) {
  Waveform s;
  s.samples.assign(8000, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) s.samples[i] = i % 2 ? 1.0 : -1.0;
  const auto r = mix_at_snr(s, gaussian(3000, 1), 0.0, 4);
  EXPECT_NEAR(mean_power(r.scaled_noise.samples) / mean_power(s.samples), 1.0, 1e-12);
}

TEST(MixAtSnr, TenDbScalesNoisePower) {
  Waveform s;
  s.samples.assign(16000, 0.2);
  const auto r = mix_at_snr(s, gaussian(5000, 2), 10.0, 0);
  EXPECT_NEAR(mean_power(r.scaled_noise.samples), 0.004, 1e-15);
  EXPECT_FALSE(r.peak_rescaled);
}

TEST(MixAtSnr, RoundTripThroughMeasuredSnr) {
  const auto s = sine(300, 1.0, 0.3);
  const auto n = gaussian(7000, 3);
  for (double target : {15.0, 10.0, 5.0, 0.0}) {
    const auto r = mix_at_snr(s, n, target, 9);
    EXPECT_NEAR(measured_snr(s, r.scaled_noise), target, 1e-6);
    EXPECT_NEAR(r.achieved_snr_db, target, 1e-6);
  }
}

TEST(MixAtSnr, Deterministic) {
  const auto s = sine(200, 0.5, 0.5);
  const auto n = gaussian(3000, 5);
  const auto a = mix_at_snr(s, n, 5.0, 77);
  const auto b = mix_at_snr(s, n, 5.0, 77);
  EXPECT_EQ(a.mixture.samples, b.mixture.samples);
  EXPECT_EQ(a.noise_offset, b.noise_offset);
}

TEST(MixAtSnr, PeakRescaleKeepsMixtureInRange) {
  const auto s = sine(200, 0.5, 0.99);
  const auto r = mix_at_snr(s, gaussian(4000, 6), 0.0, 1);
  EXPECT_TRUE(r.peak_rescaled);
  for (double x : r.mixture.samples) EXPECT_LE(std::abs(x), 1.0 + 1e-12);
  // The SNR is defined before the rescale, so the noise scale is untouched.
  EXPECT_NEAR(measured_snr(s, r.scaled_noise), 0.0, 1e-6);
}

TEST(MixAtSnr, RejectsSilentInputs) {
  Waveform silent;
  silent.samples.assign(100, 0.0);
  EXPECT_THROW(mix_at_snr(silent, gaussian(100, 1), 5.0, 0), InputError);
  EXPECT_THROW(mix_at_snr(sine(100, 0.1), silent, 5.0, 0), InputError);
}

TEST(MeasuredSnr, Examples) {
  const auto s = sine(150, 0.2);
  EXPECT_DOUBLE_EQ(measured_snr(s, s), 0.0);
  Waveform twice = s;
  for (auto& x : twice.samples) x *= 2.0;
  EXPECT_NEAR(measured_snr(twice, s), 20.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(measured_snr(twice, s), 6.0206, 1e-4);
}

TEST(FrameEnergy, ConstantSignal) {
  Waveform w;
  w.samples.assign(4000, 0.3);
  const auto e = frame_energy(w);
  EXPECT_EQ(e.size(), (4000 - 400) / 160 + 1);
  for (double x : e) EXPECT_NEAR(x, std::log(0.3 + kEnergyEpsilon), 1e-12);
}

TEST(FrameEnergy, UnitSineRms) {
  // 200 Hz gives an integer number of periods per 400-sample frame.
  const auto e = frame_energy(sine(200, 0.5));
  for (double x : e) EXPECT_NEAR(x, std::log(std::sqrt(0.5)), 1e-6);
}

TEST(FrameEnergy, Silence) {
  Waveform w;
  w.samples.assign(1000, 0.0);
  for (double x : frame_energy(w)) EXPECT_DOUBLE_EQ(x, std::log(kEnergyEpsilon));
}

TEST(FrameEnergy, ClipShorterThanOneFrameRejected) {
  Waveform w;
  w.samples.assign(100, 0.5);
  EXPECT_THROW(frame_energy(w), InputError);
}

TEST(Pitch, SineAt220Hz) {
  const auto p = estimate_pitch(sine(220, 0.5));
  ASSERT_GT(p.size(), 4u);
  for (std::size_t i = 1; i + 1 < p.size(); ++i) EXPECT_NEAR(p[i], 220.0, 1.0) << "frame " << i;
}

TEST(Pitch, SilenceIsUnvoiced) {
  Waveform w;
  w.samples.assign(8000, 0.0);
  for (double x : estimate_pitch(w)) EXPECT_EQ(x, 0.0);
}

TEST(Pitch, BelowRangeNeverReportsTrueFrequency) {
  const auto p = estimate_pitch(sine(100, 0.5), {}, {120.0, 400.0});
  for (double x : p) EXPECT_TRUE(x == 0.0 || std::abs(x - 100.0) > 5.0) << x;
}

TEST(Pitch, NoiseMostlyUnvoiced) {
  const auto p = estimate_pitch(gaussian(8000, 12, 0.3));
  std::size_t voiced = 0;
  for (double x : p) voiced += x > 0.0;
  EXPECT_LT(voiced, p.size() / 4);
}

TEST(AcousticSeries, AlignedLengths) {
  const auto a = acoustic_series(sine(180, 0.4));
  EXPECT_EQ(a.energy.size(), a.pitch.size());
  EXPECT_DOUBLE_EQ(a.hop, 0.010);
}

TEST(Wav, RoundTripWithinQuantization) {
  auto w = sine(440, 0.1, 0.8, 8000);
  w.samples.push_back(1.7);  // clamped
  const auto path = fs::temp_directory_path() / "casceq_signal.wav";
  write_wav(w, path);
  const auto back = read_wav(path);
  fs::remove(path);
  EXPECT_EQ(back.sample_rate, 8000);
  ASSERT_EQ(back.size(), w.size());
  for (std::size_t i = 0; i + 1 < w.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32768.0);
  EXPECT_NEAR(back.samples.back(), 1.0, 1.0 / 32768.0);
}

TEST(Wav, MissingAndGarbageFilesRejected) {
  const auto path = fs::temp_directory_path() / "casceq_garbage.wav";
  EXPECT_THROW(read_wav(path), InputError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a riff file at all";
  }
  EXPECT_THROW(read_wav(path), InputError);
  fs::remove(path);
}
