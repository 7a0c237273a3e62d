#include "qpress/config.h"

#include <fstream>

#include <gtest/gtest.h>

#include "qpress/errors.h"
#include "test_util.h"

namespace qpress {
namespace {

TEST(ConfigTest, EmptyTextGivesDefaults) {
  const AppConfig c = ParseAppConfig("");
  EXPECT_EQ(c.model.Canonical(), ModelConfig::Full().Canonical());
  EXPECT_EQ(c.loss.distortion, Distortion::kMse);
  EXPECT_FALSE(c.loss.lambda.has_value());
  EXPECT_FALSE(c.codec.side_info_tables);
}

TEST(ConfigTest, ProfileAppliesBeforeOverridesRegardlessOfOrder) {
  const AppConfig c = ParseAppConfig(
      "[model]\n"
      "dim = 16\n"
      "profile = toy\n"
      "norm = post\n"
      "prior_filters = 4,4\n"
      "[train]\n"
      "lr = 0.003\n"
      "steps = 20\n"
      "flip = false\n"
      "[loss]\n"
      "distortion = perceptual\n"
      "[codec]\n"
      "side_info_tables = yes\n");
  EXPECT_EQ(c.model.num_queries, 4);
  EXPECT_EQ(c.model.depth, 2);
  EXPECT_EQ(c.model.dim, 16);
  EXPECT_EQ(c.model.norm, NormPlacement::kPost);
  EXPECT_EQ(c.model.prior_filters, (std::vector<int>{4, 4}));
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.003);
  EXPECT_EQ(c.train.steps, 20);
  EXPECT_FALSE(c.train.flip);
  EXPECT_EQ(c.loss.distortion, Distortion::kPerceptual);
  EXPECT_TRUE(c.codec.side_info_tables);
}

TEST(ConfigTest, LambdaDefaultsFollowTheDistortion) {
  RDLossConfig loss;
  EXPECT_EQ(loss.EffectiveLambda(), kDefaultLambdaMse);
  loss.distortion = Distortion::kPerceptual;
  EXPECT_EQ(loss.EffectiveLambda(), kDefaultLambdaPerceptual);
  loss.lambda = 2.5;
  EXPECT_EQ(loss.EffectiveLambda(), 2.5);
  loss.lambda = 0.0;
  EXPECT_THROW(loss.Validate(), ConfigError);
}

TEST(ConfigTest, RejectsUnknownOrInvalidSettings) {
  EXPECT_THROW(ParseAppConfig("[model]\nwidth = 3\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[optim]\nlr = 1\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[model]\nprofile = huge\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[model]\npatch_size = 12\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[model]\nheads = 5\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[model]\ndim = abc\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[train]\nflip = maybe\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[train]\nlr = -1\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[loss]\ndistortion = l1\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("stray = 1\n"), ConfigError);
  EXPECT_THROW(ParseAppConfig("[model\n"), ConfigError);
}

TEST(ConfigTest, LoadsFromFile) {
  testing::TempDir dir("config");
  {
    std::ofstream out(dir.path() / "c.ini");
    out << "[model]\nprofile = toy\n";
  }
  EXPECT_EQ(LoadAppConfig(dir.path() / "c.ini").model.Canonical(),
            ModelConfig::Toy().Canonical());
  EXPECT_THROW(LoadAppConfig(dir.path() / "missing.ini"), IoError);
}

TEST(ConfigTest, DistortionNamesRoundTrip) {
  for (Distortion d : {Distortion::kMse, Distortion::kPerceptual}) {
    EXPECT_EQ(ParseDistortion(ToString(d)), d);
  }
}

}  // namespace
}  // namespace qpress
