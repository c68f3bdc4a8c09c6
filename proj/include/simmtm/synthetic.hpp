#pragma once

#include <cstdint>

#include "simmtm/data.hpp"

namespace simmtm {

enum class SynthKind { kSinMix, kTrendSeason, kClassWaveforms };

// Parameters of the deterministic synthetic generators. Periods are in
// time steps; a single fixed period is expressed with min == max.
struct SynthSpec {
  SynthKind kind = SynthKind::kSinMix;
  Index length = 2000;
  Index channels = 1;
  double min_period = 12.0;
  double max_period = 60.0;
  double min_amplitude = 0.5;
  double max_amplitude = 1.5;
  int min_components = 2;
  int max_components = 4;
  double max_trend = 5e-4;  // |slope| per step
  double noise = 0.1;
  // class_waveforms only
  int classes = 2;
  Index samples = 100;
  Index sample_length = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

// Sinusoid mixtures with a linear trend (sin_mix) or a trend plus a
// harmonic seasonal profile (trend_season), plus Gaussian noise.
RawDataset gen_forecast(const SynthSpec& spec);

// Balanced classes; sample i belongs to class i % K. Class k has its own
// base frequency and waveform shape (sine, clipped square, sawtooth).
RawDataset gen_classify(const SynthSpec& spec);

RawDataset generate(const SynthSpec& spec);

}  // namespace simmtm
