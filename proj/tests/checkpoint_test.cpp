#include <gtest/gtest.h>

#include <fstream>

#include "simmtm/checkpoint.hpp"

namespace simmtm {
namespace {

ModelConfig small_model(EncoderKind kind = EncoderKind::kTransformer) {
  ModelConfig cfg;
  cfg.encoder = kind;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.input_length = 12;
  return cfg;
}

PretrainResult trained_like(std::uint64_t seed) {
  PretrainResult r{ReconstructionNetwork(small_model(), seed), AdaptiveWeights{}, {}};
  r.weights.a.mutable_values()(0) = 0.3125;
  r.weights.b.mutable_values()(0) = -1.0 / 3.0;
  // Values that do not survive a decimal round trip by accident.
  r.network.decoder.proj.bias.mutable_values()(0) = 0.1 + 0.2;
  return r;
}

ErrorKind parse_kind(const std::string& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "parse succeeded";
  return ErrorKind::kContract;
}

std::string message_of(const std::string& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(Checkpoint, RoundTripIsBitExactAndByteIdentical) {
  const PretrainResult original = trained_like(3);
  const Checkpoint ck = make_checkpoint(original, 3, "pretrain");
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  const PretrainResult restored = restore_pretrain(back);
  const NamedTensors a = original.network.parameters(), b = restored.network.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE((a[i].second.values().array() == b[i].second.values().array()).all()) << a[i].first;
  }
  EXPECT_EQ(restored.weights.a.item(), 0.3125);
  EXPECT_EQ(restored.weights.b.item(), -1.0 / 3.0);
  EXPECT_EQ(back.seed, 3u);
  EXPECT_EQ(back.created_by, "pretrain");
  EXPECT_TRUE(back.model == small_model());
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "simmtm_ckpt_test.ckpt";
  const Checkpoint ck = make_checkpoint(trained_like(1), 1, "pretrain");
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  const auto path2 = std::filesystem::temp_directory_path() / "simmtm_ckpt_test2.ckpt";
  save_checkpoint(back, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingFile);
  }
}

TEST(Checkpoint, FineTunedKinds) {
  const ForecastModel fm(Encoder(small_model(), 2), 5, 2);
  const Checkpoint fck = parse_checkpoint(serialize_checkpoint(make_checkpoint(fm, 2, "finetune-forecast")));
  EXPECT_EQ(fck.horizon, 5);
  const ForecastModel fback = restore_forecast(fck);
  EXPECT_TRUE((fback.head.proj.weight.values().array() == fm.head.proj.weight.values().array()).all());

  ModelConfig conv = small_model(EncoderKind::kConvResNet);
  conv.input_channels = 2;
  const ClassifierModel cm(Encoder(conv, 4), 3, 4);
  const Checkpoint cck = parse_checkpoint(serialize_checkpoint(make_checkpoint(cm, 4, "finetune-classify")));
  EXPECT_EQ(cck.classes, 3);
  const ClassifierModel cback = restore_classifier(cck);
  EXPECT_TRUE((cback.encoder.parameters()[0].second.values().array() ==
               cm.encoder.parameters()[0].second.values().array())
                  .all());
  EXPECT_THROW(restore_pretrain(cck), Error);
  EXPECT_NO_THROW(restore_encoder(cck));
}

TEST(Checkpoint, EditedDModelNamesTheTensor) {
  std::string bytes = serialize_checkpoint(make_checkpoint(trained_like(1), 1, "pretrain"));
  const auto at = bytes.find("model.d_model=8\n");
  ASSERT_NE(at, std::string::npos);
  bytes.replace(at, 16, "model.d_model=16\n");
  EXPECT_EQ(parse_kind(bytes), ErrorKind::kShapeMismatch);
  EXPECT_NE(message_of(bytes).find("encoder.embed.weight"), std::string::npos);
}

TEST(Checkpoint, TruncationAndCorruption) {
  const std::string bytes = serialize_checkpoint(make_checkpoint(trained_like(1), 1, "pretrain"));
  EXPECT_EQ(parse_kind(bytes.substr(0, bytes.size() - 1)), ErrorKind::kIntegrity);
  EXPECT_EQ(parse_kind(bytes.substr(0, 40)), ErrorKind::kIntegrity);
  EXPECT_EQ(parse_kind(bytes + "x"), ErrorKind::kIntegrity);
  std::string flipped = bytes;
  flipped.back() = static_cast<char>(flipped.back() ^ 0x01);
  EXPECT_EQ(parse_kind(flipped), ErrorKind::kIntegrity);
  EXPECT_EQ(parse_kind("hello\n"), ErrorKind::kIntegrity);
}

TEST(Checkpoint, VersionMismatch) {
  std::string bytes = serialize_checkpoint(make_checkpoint(trained_like(1), 1, "pretrain"));
  bytes.replace(0, std::string("SIMMTM-CHECKPOINT 1").size(), "SIMMTM-CHECKPOINT 2");
  EXPECT_EQ(parse_kind(bytes), ErrorKind::kVersion);
}

}  // namespace
}  // namespace simmtm
