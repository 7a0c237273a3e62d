#include "qpress/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "qpress/bitstream.h"
#include "qpress/codec.h"
#include "qpress/errors.h"
#include "qpress/metrics.h"
#include "qpress/patch_codec.h"

namespace qpress {

// ---------------------------------------------------------------- RdLoss

RdLoss::RdLoss(RDLossConfig config, std::shared_ptr<const PerceptualMetric> metric)
    : config_(std::move(config)), metric_(std::move(metric)) {
  config_.Validate();
  if (config_.distortion == Distortion::kPerceptual && metric_ == nullptr) {
    throw ConfigError("perceptual distortion selected but no perceptual metric loaded");
  }
}

double RdLoss::Distortion(const Image& original, const Image& reconstruction,
                          Image* grad) const {
  if (config_.distortion == Distortion::kMse) {
    const double d = kMseDistortionScale * Mse(original, reconstruction);
    if (grad != nullptr) {
      *grad = Image(reconstruction.height(), reconstruction.width());
      const double k = 2.0 * kMseDistortionScale / static_cast<double>(original.size());
      for (size_t i = 0; i < original.size(); ++i) {
        grad->data()[i] = k * (reconstruction.data()[i] - original.data()[i]);
      }
    }
    return d;
  }
  const int side = config_.perceptual_upscale;
  const bool resize = original.height() != side || original.width() != side;
  const Image a = resize ? ResizeBilinear(original, side, side) : original;
  const Image b = resize ? ResizeBilinear(reconstruction, side, side) : reconstruction;
  if (grad == nullptr) return metric_->Distance(a, b);
  Image d_b;
  const double d = metric_->DistanceAndGrad(a, b, &d_b);
  *grad = resize ? ResizeBilinearAdjoint(d_b, reconstruction.height(),
                                         reconstruction.width())
                 : d_b;
  return d;
}

RdTerms RdLoss::Compute(Model& model, const Image& tile, Rng& rng, bool backward,
                        double weight) const {
  const ModelConfig& c = model.config();
  Matrix noise(c.num_queries, c.dim);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.Uniform() - 0.5;
  return ComputeWithNoise(model, tile, noise, backward, weight);
}

RdTerms RdLoss::ComputeWithNoise(Model& model, const Image& tile,
                                 const Matrix& noise, bool backward,
                                 double weight) const {
  const ModelConfig& c = model.config();
  const double pixels = static_cast<double>(tile.height()) * tile.width();
  Encoder::Cache enc_cache;
  const Matrix latent = model.encoder.Forward(tile, backward ? &enc_cache : nullptr);
  if (noise.rows() != latent.rows() || noise.cols() != latent.cols()) {
    throw ShapeError("noise shape does not match the latent");
  }
  const Matrix noisy = latent + noise;

  RdTerms t;
  Matrix d_latent;
  if (backward) {
    d_latent = Matrix::Zero(latent.rows(), latent.cols());
    t.rate_bits = model.prior.RateBitsBackward(noisy, weight / pixels, &d_latent);
  } else {
    t.rate_bits = model.prior.RateBits(noisy);
  }
  t.rate_bpp = t.rate_bits / pixels;

  Decoder::Cache dec_cache;
  const Matrix patches = model.decoder.Forward(noisy, backward ? &dec_cache : nullptr);
  const Image reconstruction = UnpatchifyRaw(patches, c.patch_size);
  Image d_image;
  t.distortion = Distortion(tile, reconstruction, backward ? &d_image : nullptr);
  const double lambda = config_.EffectiveLambda();
  t.loss = t.rate_bpp + lambda * t.distortion;

  if (backward) {
    Matrix d_patches = Patchify(d_image, c.patch_size);
    d_patches *= weight * lambda;
    d_latent += model.decoder.Backward(dec_cache, d_patches);
    model.encoder.Backward(enc_cache, d_latent);
  }
  return t;
}

std::shared_ptr<const PerceptualMetric> LoadPerceptualMetric(
    const RDLossConfig& config) {
  if (config.distortion != Distortion::kPerceptual) return nullptr;
  if (config.perceptual_weights.empty()) {
    throw ConfigError("perceptual distortion needs [loss] perceptual_weights");
  }
  return std::make_shared<FeatureNetDistance>(
      FeatureNetDistance::Load(config.perceptual_weights));
}

// ------------------------------------------------------------------ Adam

void Adam::Step(Model& model) {
  ++step_;
  const double b1 = config_.adam_beta1;
  const double b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  const double eps = config_.adam_eps;
  model.VisitParams([&](const std::string& name, Param& p) {
    auto [mit, m_new] = m_.try_emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = b1 * m + (1.0 - b1) * p.grad;
    v = b2 * v + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  });
}

void Adam::ExportState(TrainingState* state) const {
  state->step = step_;
  state->first_moment = m_;
  state->second_moment = v_;
}

void Adam::ImportState(const TrainingState& state) {
  step_ = state.step;
  m_ = state.first_moment;
  v_ = state.second_moment;
}

// --------------------------------------------------------------- Trainer

std::vector<Image> LoadDataset(const std::filesystem::path& dir, int min_side) {
  std::vector<Image> images;
  for (const auto& path : ListImages(dir)) {
    Image img = LoadImage(path);
    if (img.height() < min_side || img.width() < min_side) {
      std::cerr << "warning: skipping " << path.string() << " (" << img.height()
                << "x" << img.width() << " is smaller than " << min_side << ")\n";
      continue;
    }
    images.push_back(std::move(img));
  }
  return images;
}

Trainer::Trainer(AppConfig config, std::vector<Image> dataset, Model model,
                 std::shared_ptr<const PerceptualMetric> metric,
                 const std::optional<TrainingState>& resume)
    : config_(std::move(config)),
      dataset_(std::move(dataset)),
      model_(std::move(model)),
      loss_(config_.loss, std::move(metric)),
      adam_(config_.train),
      rng_(config_.train.seed) {
  config_.train.Validate();
  if (dataset_.empty()) throw InputError("training dataset is empty");
  if (config_.train.crop != model_.config().tile_size) {
    throw ConfigError("training crop must equal the model tile size");
  }
  for (const Image& img : dataset_) {
    if (img.height() < config_.train.crop || img.width() < config_.train.crop) {
      throw InputError("training image smaller than the crop size");
    }
  }
  if (resume) {
    adam_.ImportState(*resume);
    rng_.Deserialize(resume->rng_state);
  }
}

Image Trainer::SampleCrop(Rng& rng) const {
  const int crop = config_.train.crop;
  const Image& img = dataset_[rng.Below(dataset_.size())];
  const int y = static_cast<int>(rng.Below(static_cast<uint64_t>(img.height() - crop + 1)));
  const int x = static_cast<int>(rng.Below(static_cast<uint64_t>(img.width() - crop + 1)));
  Image tile = img.Crop(y, x, crop, crop);
  if (config_.train.flip && rng.Uniform() < 0.5) tile = tile.FlipHorizontal();
  return tile;
}

RdTerms Trainer::Step() {
  model_.ZeroGrad();
  const int batch = config_.train.batch_size;
  const double weight = 1.0 / batch;
  RdTerms mean;
  for (int b = 0; b < batch; ++b) {
    const Image tile = SampleCrop(rng_);
    const RdTerms t = loss_.Compute(model_, tile, rng_, /*backward=*/true, weight);
    mean.loss += weight * t.loss;
    mean.rate_bits += weight * t.rate_bits;
    mean.rate_bpp += weight * t.rate_bpp;
    mean.distortion += weight * t.distortion;
  }
  if (!std::isfinite(mean.loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << adam_.step() << " (rate " << mean.rate_bits
       << " bits, distortion " << mean.distortion << ")";
    throw NumericError(os.str());
  }
  adam_.Step(model_);
  return mean;
}

TrainingState Trainer::State() const {
  TrainingState s;
  adam_.ExportState(&s);
  s.rng_state = rng_.Serialize();
  return s;
}

Model Train(const AppConfig& config, const TrainOptions& options) {
  std::vector<Image> dataset = LoadDataset(options.dataset_dir, config.train.crop);
  if (dataset.empty()) {
    throw InputError("no usable images under '" + options.dataset_dir.string() + "'");
  }
  std::optional<TrainingState> state;
  Model model(config.model);
  if (options.resume) {
    Checkpoint ckpt = LoadCheckpoint(*options.resume);
    if (!ckpt.training) {
      throw InputError("checkpoint '" + options.resume->string() +
                       "' has no training state to resume from");
    }
    model = std::move(ckpt.model);
    state = std::move(ckpt.training);
  } else {
    model.Init();
  }
  std::filesystem::create_directories(options.output_dir);
  Trainer trainer(config, std::move(dataset), std::move(model),
                  LoadPerceptualMetric(config.loss), state);

  const auto csv_path = options.output_dir / "metrics.csv";
  const bool fresh = !options.resume || !std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, fresh ? std::ios::trunc : std::ios::app);
  if (!csv) throw IoError("cannot open '" + csv_path.string() + "'");
  csv.precision(10);
  if (fresh) csv << "step,loss,rate_bpp,distortion\n";

  auto save = [&](const std::filesystem::path& path) {
    const TrainingState s = trainer.State();
    SaveCheckpoint(path, trainer.model(), &s);
  };
  while (trainer.step() < config.train.steps) {
    const int64_t step = trainer.step();
    RdTerms t;
    try {
      t = trainer.Step();
    } catch (const NumericError&) {
      save(options.output_dir / "nan_snapshot.qpck");
      throw;
    }
    if (step % config.train.log_every == 0) {
      csv << step << "," << t.loss << "," << t.rate_bpp << "," << t.distortion << "\n";
      if (options.on_log) options.on_log(step, t);
    }
    if (config.train.checkpoint_every > 0 &&
        trainer.step() % config.train.checkpoint_every == 0) {
      save(options.output_dir / ("step_" + std::to_string(trainer.step()) + ".qpck"));
    }
  }
  csv.flush();
  save(options.output_dir / "final.qpck");
  return std::move(trainer.model());
}

// ------------------------------------------------------------ Evaluation

ImageMetrics EvaluateImage(const std::string& name, const Image& image,
                           const Model& model, const CodecConfig& codec,
                           const PerceptualMetric* metric) {
  CompressOptions opts;
  opts.side_info_tables = codec.side_info_tables;
  const Bitstream stream = CompressImage(image, model, opts);
  const std::vector<uint8_t> bytes = SerializeBitstream(stream);
  const Bitstream parsed = ParseBitstream(bytes);
  const Image reconstruction = DecompressImage(parsed, model);
  const TileGrid grid = ComputeTileGrid(image.height(), image.width(),
                                        model.config().tile_size);
  const Image original = CenterCrop(image, grid);
  const RateReport rate = ComputeRate(parsed);

  ImageMetrics m;
  m.name = name;
  m.height = image.height();
  m.width = image.width();
  m.tiles = grid.tile_count();
  m.psnr = Psnr(original, reconstruction);
  if (std::min(original.height(), original.width()) >= kMsSsimMinSide) {
    m.ms_ssim = MsSsim(original, reconstruction);
  }
  if (metric != nullptr) m.perceptual = metric->Distance(original, reconstruction);
  m.file_bpp = rate.file_bpp;
  m.payload_bpp = rate.payload_bpp;
  return m;
}

MetricReport Evaluate(const std::filesystem::path& dataset_dir, const Model& model,
                      const CodecConfig& codec, const PerceptualMetric* metric) {
  MetricReport report;
  const int tile = model.config().tile_size;
  for (const auto& path : ListImages(dataset_dir)) {
    const Image image = LoadImage(path);
    const std::string name =
        std::filesystem::relative(path, dataset_dir).generic_string();
    if (image.height() < tile || image.width() < tile) {
      std::cerr << "warning: skipping " << name << " (" << image.height() << "x"
                << image.width() << " is smaller than one tile)\n";
      report.skipped.push_back(name);
      continue;
    }
    report.images.push_back(EvaluateImage(name, image, model, codec, metric));
  }
  return report;
}

ImageMetrics MetricReport::Mean() const {
  ImageMetrics m;
  m.name = "mean";
  if (images.empty()) return m;
  const double n = static_cast<double>(images.size());
  bool all_perceptual = true;
  bool all_ms_ssim = true;
  double perceptual = 0.0;
  double ms_ssim = 0.0;
  for (const auto& r : images) {
    m.tiles += r.tiles;
    m.psnr += r.psnr / n;
    if (r.ms_ssim) {
      ms_ssim += *r.ms_ssim / n;
    } else {
      all_ms_ssim = false;
    }
    m.file_bpp += r.file_bpp / n;
    m.payload_bpp += r.payload_bpp / n;
    if (r.perceptual) {
      perceptual += *r.perceptual / n;
    } else {
      all_perceptual = false;
    }
  }
  if (all_perceptual) m.perceptual = perceptual;
  if (all_ms_ssim) m.ms_ssim = ms_ssim;
  return m;
}

std::string MetricReport::ToCsv() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "image,height,width,tiles,psnr,ms_ssim,perceptual,file_bpp,payload_bpp\n";
  auto row = [&](const ImageMetrics& m) {
    os << m.name << "," << m.height << "," << m.width << "," << m.tiles << ","
       << m.psnr << ",";
    if (m.ms_ssim) os << *m.ms_ssim;
    os << ",";
    if (m.perceptual) os << *m.perceptual;
    os << "," << m.file_bpp << "," << m.payload_bpp << "\n";
  };
  for (const auto& m : images) row(m);
  return os.str();
}

std::string MetricReport::ToText() const {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(28) << "image" << std::right << std::setw(9) << "PSNR"
     << std::setw(10) << "MS-SSIM" << std::setw(12) << "perceptual" << std::setw(10)
     << "bpp" << "\n";
  auto row = [&](const ImageMetrics& m) {
    os << std::left << std::setw(28) << m.name << std::right << std::setprecision(2)
       << std::setw(9) << m.psnr << std::setprecision(4);
    if (m.ms_ssim) {
      os << std::setw(10) << *m.ms_ssim;
    } else {
      os << std::setw(10) << "-";
    }
    if (m.perceptual) {
      os << std::setw(12) << *m.perceptual;
    } else {
      os << std::setw(12) << "-";
    }
    os << std::setw(10) << m.file_bpp << "\n";
  };
  for (const auto& m : images) row(m);
  if (!images.empty()) row(Mean());
  for (const auto& s : skipped) os << "skipped: " << s << "\n";
  return os.str();
}

}  // namespace qpress
