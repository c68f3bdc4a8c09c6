#include "simmtm/analysis.hpp"

#include <cstdio>
#include <sstream>

#include "simmtm/data.hpp"
#include "simmtm/training.hpp"

namespace simmtm {

Eigen::MatrixXd layer_features(const Tensor& layer_output) {
  if (layer_output.rank() != 3) fail(ErrorKind::kDimension, "layer output must be [n, L, d]");
  const Index n = layer_output.dim(0), width = layer_output.dim(1) * layer_output.dim(2);
  return Eigen::Map<const RowMatrix>(layer_output.values().data(), n, width);
}

CkaReport cka_first_last(const Encoder& encoder, const Tensor& probe) {
  NoGradGuard no_grad;
  const auto layers = encoder.layer_outputs(probe);
  CkaReport report;
  report.first_layer = "layer0";
  report.last_layer = "layer" + std::to_string(layers.size() - 1);
  report.samples = probe.dim(0);
  report.cka_first_last = cka(layer_features(layers.front()), layer_features(layers.back()));
  return report;
}

RepresentationGap representation_gap(const Encoder& pretrained, const Encoder& finetuned, const Tensor& probe) {
  if (!(pretrained.config() == finetuned.config())) {
    fail(ErrorKind::kConfig, "representation gap needs two encoders with the same model config");
  }
  RepresentationGap out;
  out.pretrained = cka_first_last(pretrained, probe);
  out.finetuned = cka_first_last(finetuned, probe);
  out.gap = std::abs(out.pretrained.cka_first_last - out.finetuned.cka_first_last);
  return out;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * fraction);
  return buf;
}

ReconstructionDemo reconstruction_demo(const Tensor& series, const MaskedSet& masked, const ReconstructionNetwork& simmtm,
                                       const ReconstructionNetwork& direct, const AggregationConfig& aggregation) {
  NoGradGuard no_grad;
  const Tensor ours = reconstruct(series, masked, simmtm, aggregation).x_hat;
  const Tensor baseline = reconstruct_direct(direct, masked);
  const Index n = series.dim(0), len = series.dim(1), channels = series.dim(2);

  ReconstructionDemo demo;
  std::ostringstream csv;
  csv << "sample,t";
  for (Index c = 0; c < channels; ++c) {
    csv << ",original_" << c << ",masked_" << c << ",simmtm_" << c << ",direct_" << c;
  }
  csv << ",simmtm_mse,direct_mse\n";
  for (Index i = 0; i < n; ++i) {
    const Index block = len * channels;
    const auto x = series.values().segment(i * block, block).array();
    const double mse_ours = (ours.values().segment(i * block, block).array() - x).square().mean();
    const double mse_direct = (baseline.values().segment(i * block, block).array() - x).square().mean();
    demo.simmtm_mse += mse_ours / static_cast<double>(n);
    demo.direct_mse += mse_direct / static_cast<double>(n);
    for (Index t = 0; t < len; ++t) {
      csv << i << ',' << t;
      for (Index c = 0; c < channels; ++c) {
        csv << ',' << format_double(series.at({i, t, c})) << ',' << format_double(masked.variants.at({i, 0, t, c}))
            << ',' << format_double(ours.at({i, t, c})) << ',' << format_double(baseline.at({i, t, c}));
      }
      csv << ',' << format_double(mse_ours) << ',' << format_double(mse_direct) << '\n';
    }
  }
  demo.csv = csv.str();
  return demo;
}

}  // namespace simmtm
