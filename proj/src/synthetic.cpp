#include "simmtm/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace simmtm {

void SynthSpec::validate() const {
  if (length <= 0 || channels <= 0) fail(ErrorKind::kConfig, "synthetic length and channels must be positive");
  if (!(noise >= 0.0)) fail(ErrorKind::kConfig, "synthetic noise stdev must be >= 0");
  if (!(min_period > 0.0) || max_period < min_period) fail(ErrorKind::kConfig, "synthetic periods must be positive");
  if (min_components < 1 || max_components < min_components) {
    fail(ErrorKind::kConfig, "synthetic component range is invalid");
  }
  if (kind == SynthKind::kClassWaveforms && (classes < 2 || samples <= 0 || sample_length <= 0)) {
    fail(ErrorKind::kConfig, "class_waveforms needs classes >= 2 and positive sample counts");
  }
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<std::string> channel_names(Index channels) {
  std::vector<std::string> names;
  for (Index c = 0; c < channels; ++c) names.push_back("x" + std::to_string(c));
  return names;
}

}  // namespace

RawDataset gen_forecast(const SynthSpec& spec) {
  spec.validate();
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RawDataset out;
  out.name = spec.kind == SynthKind::kTrendSeason ? "trend_season" : "sin_mix";
  out.columns = channel_names(spec.channels);
  out.values = RowMatrix::Zero(spec.length, spec.channels);

  for (Index c = 0; c < spec.channels; ++c) {
    const double slope = uniform(rng, -spec.max_trend, spec.max_trend);
    if (spec.kind == SynthKind::kTrendSeason) {
      const double period = uniform(rng, spec.min_period, spec.max_period);
      const double amp = uniform(rng, spec.min_amplitude, spec.max_amplitude);
      const double phase = uniform(rng, 0.0, kTwoPi);
      for (Index t = 0; t < spec.length; ++t) {
        const double angle = kTwoPi * static_cast<double>(t) / period + phase;
        out.values(t, c) = slope * static_cast<double>(t) + amp * std::sin(angle) + 0.5 * amp * std::sin(2.0 * angle);
      }
    } else {
      const int components = std::uniform_int_distribution<int>(spec.min_components, spec.max_components)(rng);
      for (int k = 0; k < components; ++k) {
        const double period = uniform(rng, spec.min_period, spec.max_period);
        const double amp = uniform(rng, spec.min_amplitude, spec.max_amplitude);
        const double phase = uniform(rng, 0.0, kTwoPi);
        for (Index t = 0; t < spec.length; ++t) {
          out.values(t, c) += amp * std::sin(kTwoPi * static_cast<double>(t) / period + phase);
        }
      }
      for (Index t = 0; t < spec.length; ++t) out.values(t, c) += slope * static_cast<double>(t);
    }
    if (spec.noise > 0.0) {
      for (Index t = 0; t < spec.length; ++t) out.values(t, c) += spec.noise * gauss(rng);
    }
  }
  return out;
}

RawDataset gen_classify(const SynthSpec& spec) {
  spec.validate();
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Index len = spec.sample_length;

  RawDataset out;
  out.name = "class_waveforms";
  out.columns = channel_names(spec.channels);
  out.values = RowMatrix::Zero(spec.samples * len, spec.channels);
  out.labels.resize(static_cast<std::size_t>(spec.samples * len));

  for (Index n = 0; n < spec.samples; ++n) {
    const int label = static_cast<int>(n % spec.classes);
    // Cycles per sample grows with the class index; the shape cycles through
    // three families so neighboring classes also differ in form.
    const double cycles = 1.5 + 1.25 * label;
    const int shape = label % 3;
    for (Index c = 0; c < spec.channels; ++c) {
      const double amp = uniform(rng, 0.9, 1.1);
      const double phase = uniform(rng, -0.3, 0.3) + 0.7 * static_cast<double>(c);
      for (Index t = 0; t < len; ++t) {
        const double u = cycles * static_cast<double>(t) / static_cast<double>(len) + phase / kTwoPi;
        double v = 0.0;
        switch (shape) {
          case 0: v = std::sin(kTwoPi * u); break;
          case 1: v = std::tanh(3.0 * std::sin(kTwoPi * u)); break;
          default: v = 2.0 * (u - std::floor(u + 0.5)); break;
        }
        out.values(n * len + t, c) = amp * v + (spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0);
      }
    }
    for (Index t = 0; t < len; ++t) out.labels[static_cast<std::size_t>(n * len + t)] = label;
  }
  return out;
}

RawDataset generate(const SynthSpec& spec) {
  return spec.kind == SynthKind::kClassWaveforms ? gen_classify(spec) : gen_forecast(spec);
}

}  // namespace simmtm
