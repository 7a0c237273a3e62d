#include "qpress/config.h"

#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qpress/errors.h"

namespace qpress {

namespace {

namespace pt = boost::property_tree;

template <typename T>
T ParseNumber(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError("bad value '" + value + "' for " + key);
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("bad boolean '" + value + "' for " + key);
}

std::vector<int> ParseIntList(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(ParseNumber<int>(key, item));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

void ApplyTrainSetting(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "learning_rate" || key == "lr") {
    c.learning_rate = ParseNumber<double>(key, value);
  } else if (key == "adam_beta1") {
    c.adam_beta1 = ParseNumber<double>(key, value);
  } else if (key == "adam_beta2") {
    c.adam_beta2 = ParseNumber<double>(key, value);
  } else if (key == "adam_eps") {
    c.adam_eps = ParseNumber<double>(key, value);
  } else if (key == "steps") {
    c.steps = ParseNumber<int64_t>(key, value);
  } else if (key == "batch_size") {
    c.batch_size = ParseNumber<int>(key, value);
  } else if (key == "crop") {
    c.crop = ParseNumber<int>(key, value);
  } else if (key == "flip") {
    c.flip = ParseBool(key, value);
  } else if (key == "seed") {
    c.seed = ParseNumber<uint64_t>(key, value);
  } else if (key == "checkpoint_every") {
    c.checkpoint_every = ParseNumber<int64_t>(key, value);
  } else if (key == "log_every") {
    c.log_every = ParseNumber<int64_t>(key, value);
  } else {
    throw ConfigError("unknown [train] key '" + key + "'");
  }
}

void ApplyLossSetting(RDLossConfig& c, const std::string& key, const std::string& value) {
  if (key == "distortion") {
    c.distortion = ParseDistortion(value);
  } else if (key == "lambda") {
    c.lambda = ParseNumber<double>(key, value);
  } else if (key == "perceptual_upscale") {
    c.perceptual_upscale = ParseNumber<int>(key, value);
  } else if (key == "perceptual_weights") {
    c.perceptual_weights = value;
  } else {
    throw ConfigError("unknown [loss] key '" + key + "'");
  }
}

void ApplyCodecSetting(CodecConfig& c, const std::string& key, const std::string& value) {
  if (key == "side_info_tables") {
    c.side_info_tables = ParseBool(key, value);
  } else {
    throw ConfigError("unknown [codec] key '" + key + "'");
  }
}

AppConfig FromTree(const pt::ptree& tree) {
  AppConfig config;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) {
      throw ConfigError("key '" + section + "' outside of any section");
    }
    if (section == "model") {
      if (auto profile = body.get_optional<std::string>("profile")) {
        if (*profile == "toy") {
          config.model = ModelConfig::Toy();
        } else if (*profile == "full") {
          config.model = ModelConfig::Full();
        } else {
          throw ConfigError("unknown model profile '" + *profile + "'");
        }
      }
      for (const auto& [key, v] : body) {
        if (key != "profile") ApplyModelSetting(config.model, key, v.data());
      }
    } else if (section == "train") {
      for (const auto& [key, v] : body) ApplyTrainSetting(config.train, key, v.data());
    } else if (section == "loss") {
      for (const auto& [key, v] : body) ApplyLossSetting(config.loss, key, v.data());
    } else if (section == "codec") {
      for (const auto& [key, v] : body) ApplyCodecSetting(config.codec, key, v.data());
    } else {
      throw ConfigError("unknown config section [" + section + "]");
    }
  }
  config.model.Validate();
  config.train.Validate();
  config.loss.Validate();
  return config;
}

}  // namespace

Distortion ParseDistortion(const std::string& s) {
  if (s == "mse") return Distortion::kMse;
  if (s == "perceptual") return Distortion::kPerceptual;
  throw ConfigError("unknown distortion '" + s + "' (mse or perceptual)");
}

std::string ToString(Distortion d) {
  return d == Distortion::kMse ? "mse" : "perceptual";
}

double RDLossConfig::EffectiveLambda() const {
  if (lambda) return *lambda;
  return distortion == Distortion::kMse ? kDefaultLambdaMse : kDefaultLambdaPerceptual;
}

void RDLossConfig::Validate() const {
  if (EffectiveLambda() <= 0.0) throw ConfigError("lambda must be > 0");
  if (perceptual_upscale < 1) throw ConfigError("perceptual upscale must be positive");
}

void TrainConfig::Validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning rate must be > 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (adam_eps <= 0.0) throw ConfigError("Adam eps must be > 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (crop < 1) throw ConfigError("crop must be positive");
  if (checkpoint_every < 0 || log_every < 1) {
    throw ConfigError("checkpoint_every must be >= 0 and log_every >= 1");
  }
}

void ApplyModelSetting(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "tile_size") {
    c.tile_size = ParseNumber<int>(key, value);
  } else if (key == "patch_size") {
    c.patch_size = ParseNumber<int>(key, value);
  } else if (key == "num_queries") {
    c.num_queries = ParseNumber<int>(key, value);
  } else if (key == "dim") {
    c.dim = ParseNumber<int>(key, value);
  } else if (key == "depth") {
    c.depth = ParseNumber<int>(key, value);
  } else if (key == "heads") {
    c.heads = ParseNumber<int>(key, value);
  } else if (key == "ffw_multiplier") {
    c.ffw_multiplier = ParseNumber<int>(key, value);
  } else if (key == "norm") {
    c.norm = ParseNormPlacement(value);
  } else if (key == "attention_scale") {
    c.attention_scale = ParseNumber<double>(key, value);
  } else if (key == "init_stddev") {
    c.init_stddev = ParseNumber<double>(key, value);
  } else if (key == "prior_filters") {
    c.prior_filters = ParseIntList(key, value);
  } else if (key == "prior_init_scale") {
    c.prior_init_scale = ParseNumber<double>(key, value);
  } else if (key == "likelihood_floor") {
    c.likelihood_floor = ParseNumber<double>(key, value);
  } else if (key == "seed") {
    c.seed = ParseNumber<uint64_t>(key, value);
  } else {
    throw ConfigError("unknown [model] key '" + key + "'");
  }
}

AppConfig ParseAppConfig(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() +
                      " at line " + std::to_string(e.line()));
  }
  return FromTree(tree);
}

AppConfig LoadAppConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return ParseAppConfig(text.str());
}

}  // namespace qpress
