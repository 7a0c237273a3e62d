// qpf: command-line front end for the image-query codec.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qpress/analysis.h"
#include "qpress/bitstream.h"
#include "qpress/codec.h"
#include "qpress/config.h"
#include "qpress/entropy_model.h"
#include "qpress/errors.h"
#include "qpress/model.h"
#include "qpress/patch_codec.h"
#include "qpress/training.h"

namespace {

using qpress::AppConfig;
using qpress::Image;
using qpress::Model;

struct CommonArgs {
  std::string config;
  std::string checkpoint;
};

AppConfig ReadConfig(const CommonArgs& a) {
  return a.config.empty() ? AppConfig{} : qpress::LoadAppConfig(a.config);
}

Model ReadModel(const CommonArgs& a) {
  if (a.checkpoint.empty()) throw qpress::InputError("--checkpoint is required");
  return qpress::LoadCheckpoint(a.checkpoint).model;
}

void AddCommon(CLI::App* cmd, CommonArgs* a, bool needs_checkpoint) {
  cmd->add_option("--config", a->config, "INI configuration file")->check(CLI::ExistingFile);
  auto* opt = cmd->add_option("--checkpoint", a->checkpoint, "model checkpoint (.qpck)");
  if (needs_checkpoint) opt->required();
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw qpress::IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw qpress::IoError("write failed for '" + path + "'");
}

Image MapToGray(const qpress::Matrix& m, double scale) {
  Image img(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = m(y, x) * scale;
    }
  }
  return img;
}

int Run(int argc, char** argv) {
  CLI::App app{"Learned image codec built on image queries"};
  app.require_subcommand(1);

  // train
  CommonArgs train_args;
  std::string dataset, out_dir, resume;
  std::optional<int64_t> steps;
  auto* train = app.add_subcommand("train", "train a model");
  AddCommon(train, &train_args, false);
  train->add_option("--dataset", dataset, "directory of training images")->required();
  train->add_option("-o,--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--steps", steps, "override [train] steps");

  // compress
  CommonArgs compress_args;
  std::string input, output;
  bool side_info = false;
  auto* compress = app.add_subcommand("compress", "image -> .qpf");
  AddCommon(compress, &compress_args, true);
  compress->add_option("input", input, "PNG or PPM image")->required();
  compress->add_option("-o,--output", output, "bitstream path")->required();
  compress->add_flag("--side-info", side_info, "transmit CDF tables in the stream");

  // decompress
  CommonArgs decompress_args;
  auto* decompress = app.add_subcommand("decompress", ".qpf -> PNG");
  AddCommon(decompress, &decompress_args, true);
  decompress->add_option("input", input, "bitstream")->required();
  decompress->add_option("-o,--output", output, "PNG path")->required();

  // eval
  CommonArgs eval_args;
  std::string csv_path;
  auto* eval = app.add_subcommand("eval", "rate and distortion over a folder");
  AddCommon(eval, &eval_args, true);
  eval->add_option("--dataset", dataset, "directory of images")->required();
  eval->add_option("--csv", csv_path, "write the per-image CSV here (default stdout)");

  // viz-attn
  CommonArgs attn_args;
  std::string mode = "max";
  int query = 0;
  double alpha = 0.5;
  auto* viz_attn = app.add_subcommand("viz-attn", "encoder cross-attention heatmap");
  AddCommon(viz_attn, &attn_args, true);
  viz_attn->add_option("input", input, "image")->required();
  viz_attn->add_option("-o,--output", output, "PNG path")->required();
  viz_attn->add_option("--mode", mode, "max or mean")
      ->check(CLI::IsMember({"max", "mean"}));
  viz_attn->add_option("--query", query, "query index for --mode mean (0-based)");
  viz_attn->add_option("--alpha", alpha, "overlay opacity")->check(CLI::Range(0.0, 1.0));

  // viz-ablate
  CommonArgs ablate_args;
  bool all_queries = false;
  auto* viz_ablate = app.add_subcommand("viz-ablate", "query ablation error maps");
  AddCommon(viz_ablate, &ablate_args, true);
  viz_ablate->add_option("--dataset", dataset, "directory of images")->required();
  viz_ablate->add_option("--query", query, "query index (0-based)");
  viz_ablate->add_flag("--all", all_queries, "one map per query");
  viz_ablate->add_option("-o,--output", output,
                         "PNG path; with --all, a directory")->required();

  // viz-pca
  CommonArgs pca_args;
  int layer = 1;
  auto* viz_pca = app.add_subcommand("viz-pca", "decoder attention on PCA meta-queries");
  AddCommon(viz_pca, &pca_args, true);
  viz_pca->add_option("input", input, "image")->required();
  viz_pca->add_option("--layer", layer, "decoder layer (1-based)")->required();
  viz_pca->add_option("-o,--output", output, "PNG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  if (train->parsed()) {
    AppConfig config = ReadConfig(train_args);
    if (steps) config.train.steps = *steps;
    config.train.Validate();
    qpress::TrainOptions opts;
    opts.dataset_dir = dataset;
    opts.output_dir = out_dir;
    if (!resume.empty()) opts.resume = resume;
    const int64_t every = std::max<int64_t>(1, config.train.steps / 20);
    opts.on_log = [every](int64_t step, const qpress::RdTerms& t) {
      if (step % every == 0) {
        std::printf("step %lld loss %.6f rate %.5f bpp distortion %.6f\n",
                    static_cast<long long>(step), t.loss, t.rate_bpp, t.distortion);
      }
    };
    qpress::Train(config, opts);
    std::printf("wrote %s\n", (std::filesystem::path(out_dir) / "final.qpck").c_str());
  } else if (compress->parsed()) {
    const AppConfig config = ReadConfig(compress_args);
    const Model model = ReadModel(compress_args);
    qpress::CompressOptions opts;
    opts.side_info_tables = side_info || config.codec.side_info_tables;
    const auto stream = qpress::CompressImage(qpress::LoadImage(input), model, opts);
    const auto bytes = qpress::SerializeBitstream(stream);
    qpress::WriteFile(output, bytes);
    const auto rate = qpress::ComputeRate(stream);
    std::printf("%zu bytes, %.6f bpp (payload %.6f bpp)\n", rate.file_bytes,
                rate.file_bpp, rate.payload_bpp);
  } else if (decompress->parsed()) {
    const Model model = ReadModel(decompress_args);
    const auto bytes = qpress::ReadFile(input);
    const Image image = qpress::DecompressImage(qpress::ParseBitstream(bytes), model);
    qpress::SavePng(image, output);
  } else if (eval->parsed()) {
    const AppConfig config = ReadConfig(eval_args);
    const Model model = ReadModel(eval_args);
    std::shared_ptr<const qpress::PerceptualMetric> metric;
    if (!config.loss.perceptual_weights.empty()) {
      metric = std::make_shared<qpress::FeatureNetDistance>(
          qpress::FeatureNetDistance::Load(config.loss.perceptual_weights));
    }
    const auto report = qpress::Evaluate(dataset, model, config.codec, metric.get());
    if (csv_path.empty()) {
      std::cout << report.ToCsv();
    } else {
      WriteText(csv_path, report.ToCsv());
    }
    std::cerr << report.ToText();
  } else if (viz_attn->parsed()) {
    const Model model = ReadModel(attn_args);
    const auto& c = model.config();
    const auto tiled = qpress::TileImage(qpress::LoadImage(input), c.tile_size);
    qpress::HeatmapSpec spec;
    spec.reduction = mode == "max" ? qpress::HeatmapReduction::kMax
                                   : qpress::HeatmapReduction::kMeanPerQuery;
    spec.query = query;
    spec.alpha = alpha;
    std::vector<Image> overlays;
    for (size_t i = 0; i < tiled.tiles.size(); ++i) {
      const auto enc = qpress::Encode(tiled.tiles[i], model.encoder, /*capture=*/true);
      const auto h = qpress::AttentionHeatmap(enc.records, spec, c.patches_per_side(),
                                              c.tile_size);
      std::printf("tile %zu: low attn %.4f high attn %.4f\n", i, h.raw_min, h.raw_max);
      overlays.push_back(qpress::RenderHeatmapOverlay(tiled.tiles[i], h, alpha));
    }
    qpress::SavePng(qpress::ReassembleTiles(tiled.grid, overlays), output);
  } else if (viz_ablate->parsed()) {
    const Model model = ReadModel(ablate_args);
    const auto images = qpress::LoadDataset(dataset, model.config().tile_size);
    if (images.empty()) throw qpress::InputError("no usable images in '" + dataset + "'");
    auto render = [&](int q, const std::string& path) {
      const auto study = qpress::QueryAblationStudy(images, model, q);
      const double peak = study.mean_error.maxCoeff();
      std::printf("query %d: mean abs error %.6f, max %.6f\n", q,
                  study.mean_error.mean(), peak);
      qpress::SavePng(MapToGray(study.mean_error, peak > 0.0 ? 1.0 / peak : 0.0), path);
    };
    if (all_queries) {
      std::filesystem::create_directories(output);
      for (int q = 0; q < model.config().num_queries; ++q) {
        render(q, (std::filesystem::path(output) / ("query_" + std::to_string(q) + ".png"))
                      .string());
      }
    } else {
      render(query, output);
    }
  } else if (viz_pca->parsed()) {
    const Model model = ReadModel(pca_args);
    const auto& c = model.config();
    if (layer < 1 || layer > c.depth) {
      throw qpress::InputError("layer " + std::to_string(layer) + " outside [1, " +
                               std::to_string(c.depth) + "]");
    }
    const auto tiled = qpress::TileImage(qpress::LoadImage(input), c.tile_size);
    qpress::Rng unused(0);
    std::vector<qpress::LatentCode> latents;
    std::vector<qpress::Matrix> values;
    for (const auto& tile : tiled.tiles) {
      latents.push_back(qpress::Quantize(qpress::Encode(tile, model.encoder).latent,
                                         qpress::QuantizerMode::kRound, unused));
      values.push_back(latents.back().values);
    }
    const auto meta = qpress::PcaMetaQueries(values);
    std::vector<Image> renders;
    for (size_t i = 0; i < latents.size(); ++i) {
      const auto dec = qpress::Decode(latents[i], model.decoder, /*capture=*/true);
      const qpress::Matrix block =
          meta.projected.middleRows(static_cast<Eigen::Index>(i) * c.num_queries,
                                    c.num_queries);
      const auto projection = qpress::ProjectDecoderAttention(dec.records, block, layer - 1);
      renders.push_back(qpress::RenderYCbCr(projection, meta.projected,
                                            c.patches_per_side(), c.patch_size));
    }
    qpress::SavePng(qpress::ReassembleTiles(tiled.grid, renders), output);
    std::printf("explained variance:");
    for (int k = 0; k < std::min<Eigen::Index>(3, meta.explained_variance.size()); ++k) {
      std::printf(" %.6g", meta.explained_variance(k));
    }
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return Run(argc, argv);
  } catch (const qpress::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
