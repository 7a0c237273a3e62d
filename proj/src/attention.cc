#include "qpress/attention.h"

#include <cmath>

#include "qpress/errors.h"

namespace qpress {

NormPlacement ParseNormPlacement(const std::string& s) {
  if (s == "off") return NormPlacement::kOff;
  if (s == "pre") return NormPlacement::kPre;
  if (s == "post") return NormPlacement::kPost;
  throw ConfigError("unknown norm placement '" + s + "' (off|pre|post)");
}

std::string ToString(NormPlacement p) {
  switch (p) {
    case NormPlacement::kOff: return "off";
    case NormPlacement::kPre: return "pre";
    case NormPlacement::kPost: return "post";
  }
  return "pre";
}

namespace {

void SoftmaxRowsInPlace(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    const double peak = row.maxCoeff();
    row = (row.array() - peak).exp().matrix();
    row /= row.sum();
  }
}

// dS = A ⊙ (dA − rowsum(dA ⊙ A)).
Matrix SoftmaxBackward(const Matrix& weights, const Matrix& d_weights) {
  Matrix d_scores = weights.cwiseProduct(d_weights);
  const Vector row_dot = d_scores.rowwise().sum();
  d_scores -= (weights.array().colwise() * row_dot.array()).matrix();
  return d_scores;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double Gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double GeluGrad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

AttentionOutput Attention(const Matrix& q, const Matrix& k, const Matrix& v,
                          double scale) {
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: key length " + std::to_string(k.rows()) +
                     " != value length " + std::to_string(v.rows()));
  }
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query/key width mismatch");
  }
  if (k.rows() == 0) throw ShapeError("attention: empty key/value sequence");
  AttentionOutput out;
  out.weights.noalias() = scale * q * k.transpose();
  SoftmaxRowsInPlace(out.weights);
  out.output.noalias() = out.weights * v;
  return out;
}

AttentionGradients AttentionBackward(const Matrix& q, const Matrix& k,
                                     const Matrix& v, double scale,
                                     const Matrix& weights,
                                     const Matrix& d_output) {
  AttentionGradients g;
  const Matrix d_weights = d_output * v.transpose();
  g.d_v.noalias() = weights.transpose() * d_output;
  const Matrix d_scores = SoftmaxBackward(weights, d_weights);
  g.d_q.noalias() = scale * d_scores * k;
  g.d_k.noalias() = scale * d_scores.transpose() * q;
  return g;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : weight(Matrix::Zero(in_features, out_features)),
      bias(Matrix::Zero(1, out_features)) {}

void Linear::InitXavier(Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(in_features() + out_features()));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
    weight.value.data()[i] = rng.Uniform(-limit, limit);
  }
  bias.value.setZero();
}

Matrix Linear::Forward(const Matrix& x) const {
  if (x.cols() != weight.value.rows()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) +
                     " != " + std::to_string(weight.value.rows()));
  }
  Matrix y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::Backward(const Matrix& x, const Matrix& d_out) {
  weight.grad.noalias() += x.transpose() * d_out;
  bias.grad.row(0) += d_out.colwise().sum();
  return d_out * weight.value.transpose();
}

void Linear::VisitParams(const std::string& prefix, const ParamVisitor& visit) {
  visit(prefix + ".weight", weight);
  visit(prefix + ".bias", bias);
}

// ------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(int dim)
    : gain(Matrix::Ones(1, dim)), bias(Matrix::Zero(1, dim)) {}

Matrix LayerNorm::Forward(const Matrix& x, Cache* cache) const {
  const Eigen::Index n = x.rows();
  const double dim = static_cast<double>(x.cols());
  Matrix normalized(n, x.cols());
  Vector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / dim;
    const auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() / dim;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = (centered * inv_std(i)).matrix();
  }
  Matrix y = (normalized.array().rowwise() * gain.value.row(0).array()).matrix();
  y.rowwise() += bias.value.row(0);
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::Backward(const Cache& cache, const Matrix& d_out) {
  gain.grad.row(0) += d_out.cwiseProduct(cache.normalized).colwise().sum();
  bias.grad.row(0) += d_out.colwise().sum();
  const Matrix d_norm =
      (d_out.array().rowwise() * gain.value.row(0).array()).matrix();
  const double dim = static_cast<double>(d_out.cols());
  Matrix d_x(d_out.rows(), d_out.cols());
  for (Eigen::Index i = 0; i < d_out.rows(); ++i) {
    const double mean_d = d_norm.row(i).sum() / dim;
    const double mean_dx = d_norm.row(i).dot(cache.normalized.row(i)) / dim;
    d_x.row(i) = cache.inv_std(i) *
                 (d_norm.row(i).array() - mean_d -
                  cache.normalized.row(i).array() * mean_dx)
                     .matrix();
  }
  return d_x;
}

void LayerNorm::VisitParams(const std::string& prefix,
                            const ParamVisitor& visit) {
  visit(prefix + ".gain", gain);
  visit(prefix + ".bias", bias);
}

// ----------------------------------------------------------- BlockConfig

double BlockConfig::scale() const {
  return attention_scale > 0.0 ? attention_scale
                               : 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

void BlockConfig::Validate() const {
  if (dim <= 0 || heads <= 0) throw ConfigError("dim and heads must be positive");
  if (dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) +
                      " is not divisible by head count " +
                      std::to_string(heads));
  }
  if (ffw_hidden <= 0) throw ConfigError("feed-forward width must be positive");
}

// ---------------------------------------------------- MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(int dim, int heads, double scale)
    : query(dim, dim), key(dim, dim), value(dim, dim), output(dim, dim),
      heads_(heads), scale_(scale) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) +
                      " is not divisible by head count " +
                      std::to_string(heads));
  }
}

void MultiHeadAttention::Init(Rng& rng) {
  query.InitXavier(rng);
  key.InitXavier(rng);
  value.InitXavier(rng);
  output.InitXavier(rng);
}

Matrix MultiHeadAttention::Forward(const Matrix& x_q, const Matrix& x_kv,
                                   Cache* cache,
                                   std::vector<Matrix>* head_weights) const {
  if (x_kv.rows() == 0) throw ShapeError("attention over an empty context");
  Matrix q = query.Forward(x_q);
  Matrix k = key.Forward(x_kv);
  Matrix v = value.Forward(x_kv);
  const int dim = static_cast<int>(q.cols());
  const int head_dim = dim / heads_;
  Matrix concat(q.rows(), dim);
  if (cache != nullptr) cache->weights.resize(heads_);
  if (head_weights != nullptr) head_weights->resize(heads_);
  for (int h = 0; h < heads_; ++h) {
    const int c0 = h * head_dim;
    AttentionOutput head = Attention(q.middleCols(c0, head_dim),
                                     k.middleCols(c0, head_dim),
                                     v.middleCols(c0, head_dim), scale_);
    concat.middleCols(c0, head_dim) = head.output;
    if (head_weights != nullptr) (*head_weights)[h] = head.weights;
    if (cache != nullptr) cache->weights[h] = std::move(head.weights);
  }
  Matrix out = output.Forward(concat);
  if (cache != nullptr) {
    cache->x_q = x_q;
    cache->x_kv = x_kv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
  }
  return out;
}

void MultiHeadAttention::Backward(const Cache& cache, const Matrix& d_out,
                                  Matrix* d_x_q, Matrix* d_x_kv) {
  const Matrix d_concat = output.Backward(cache.concat, d_out);
  const int dim = static_cast<int>(cache.q.cols());
  const int head_dim = dim / heads_;
  Matrix d_q(cache.q.rows(), dim);
  Matrix d_k(cache.k.rows(), dim);
  Matrix d_v(cache.v.rows(), dim);
  for (int h = 0; h < heads_; ++h) {
    const int c0 = h * head_dim;
    AttentionGradients g = AttentionBackward(
        cache.q.middleCols(c0, head_dim), cache.k.middleCols(c0, head_dim),
        cache.v.middleCols(c0, head_dim), scale_, cache.weights[h],
        d_concat.middleCols(c0, head_dim));
    d_q.middleCols(c0, head_dim) = g.d_q;
    d_k.middleCols(c0, head_dim) = g.d_k;
    d_v.middleCols(c0, head_dim) = g.d_v;
  }
  *d_x_q = query.Backward(cache.x_q, d_q);
  *d_x_kv = key.Backward(cache.x_kv, d_k);
  *d_x_kv += value.Backward(cache.x_kv, d_v);
}

void MultiHeadAttention::VisitParams(const std::string& prefix,
                                     const ParamVisitor& visit) {
  query.VisitParams(prefix + ".query", visit);
  key.VisitParams(prefix + ".key", visit);
  value.VisitParams(prefix + ".value", visit);
  output.VisitParams(prefix + ".output", visit);
}

Matrix MultiHeadAttentionResidual(const Matrix& q, const Matrix& kv,
                                  const MultiHeadAttention& mha) {
  return q + mha.Forward(q, kv, nullptr);
}

Matrix SelfAttentionResidual(const Matrix& q, const MultiHeadAttention& mha) {
  return q + mha.Forward(q, q, nullptr);
}

// ----------------------------------------------------------- FeedForward

FeedForward::FeedForward(int dim, int hidden)
    : expand(dim, hidden), contract(hidden, dim) {}

void FeedForward::Init(Rng& rng) {
  expand.InitXavier(rng);
  contract.InitXavier(rng);
}

Matrix FeedForward::Forward(const Matrix& x, Cache* cache) const {
  Matrix pre = expand.Forward(x);
  Matrix hidden = pre.unaryExpr([](double v) { return Gelu(v); });
  Matrix out = contract.Forward(hidden);
  if (cache != nullptr) {
    cache->x = x;
    cache->pre_activation = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Matrix FeedForward::Backward(const Cache& cache, const Matrix& d_out) {
  Matrix d_hidden = contract.Backward(cache.hidden, d_out);
  d_hidden.array() *=
      cache.pre_activation.unaryExpr([](double v) { return GeluGrad(v); }).array();
  return expand.Backward(cache.x, d_hidden);
}

void FeedForward::VisitParams(const std::string& prefix,
                              const ParamVisitor& visit) {
  expand.VisitParams(prefix + ".expand", visit);
  contract.VisitParams(prefix + ".contract", visit);
}

// ---------------------------------------------------------- DecoderBlock

DecoderBlock::DecoderBlock(const BlockConfig& config)
    : self_norm(config.dim),
      self_attn(config.dim, config.heads, config.scale()),
      cross_norm(config.dim),
      cross_attn(config.dim, config.heads, config.scale()),
      ffw_norm(config.dim),
      ffw(config.dim, config.ffw_hidden),
      config_(config) {
  config.Validate();
}

void DecoderBlock::Init(Rng& rng) {
  self_attn.Init(rng);
  cross_attn.Init(rng);
  ffw.Init(rng);
}

Matrix DecoderBlock::Forward(const Matrix& queries, const Matrix& context,
                             Cache* cache,
                             std::vector<AttentionRecord>* capture,
                             int layer) const {
  if (context.rows() == 0) throw ShapeError("decoder block: empty context");
  if (queries.cols() != config_.dim || context.cols() != config_.dim) {
    throw ShapeError("decoder block: expected width " +
                     std::to_string(config_.dim));
  }
  const NormPlacement norm = config_.norm;
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  const bool keep = cache != nullptr;

  // Applies one residual sub-layer f around x according to the norm mode.
  auto sublayer = [&](const Matrix& x, const LayerNorm& ln, SubLayerNorm& sc,
                      auto&& f) -> Matrix {
    switch (norm) {
      case NormPlacement::kPre: {
        const Matrix n = ln.Forward(x, keep ? &sc.norm : nullptr);
        return x + f(n);
      }
      case NormPlacement::kPost: {
        Matrix sum = x + f(x);
        return ln.Forward(sum, keep ? &sc.norm : nullptr);
      }
      case NormPlacement::kOff:
        break;
    }
    return x + f(x);
  };

  std::vector<Matrix> self_weights;
  std::vector<Matrix> cross_weights;
  std::vector<Matrix>* self_out = capture != nullptr ? &self_weights : nullptr;
  std::vector<Matrix>* cross_out = capture != nullptr ? &cross_weights : nullptr;

  Matrix h1 = sublayer(queries, self_norm, c.self_norm, [&](const Matrix& x) {
    return self_attn.Forward(x, x, keep ? &c.self_attn : nullptr, self_out);
  });
  Matrix h2 = sublayer(h1, cross_norm, c.cross_norm, [&](const Matrix& x) {
    return cross_attn.Forward(x, context, keep ? &c.cross_attn : nullptr,
                              cross_out);
  });
  Matrix h3 = sublayer(h2, ffw_norm, c.ffw_norm, [&](const Matrix& x) {
    return ffw.Forward(x, keep ? &c.ffw : nullptr);
  });

  if (capture != nullptr) {
    for (int h = 0; h < self_attn.heads(); ++h) {
      capture->push_back({layer, h, AttentionRole::kSelf, std::move(self_weights[h])});
    }
    for (int h = 0; h < cross_attn.heads(); ++h) {
      capture->push_back({layer, h, AttentionRole::kCross, std::move(cross_weights[h])});
    }
  }
  return h3;
}

void DecoderBlock::Backward(const Cache& cache, const Matrix& d_out,
                            Matrix* d_queries, Matrix* d_context) {
  const NormPlacement norm = config_.norm;

  // Inverse of the forward sub-layer; f_back maps d(f output) to d(f input).
  auto sublayer_back = [&](const Matrix& d_y, LayerNorm& ln,
                           const SubLayerNorm& sc, auto&& f_back) -> Matrix {
    switch (norm) {
      case NormPlacement::kPre: {
        const Matrix d_n = f_back(d_y);
        return d_y + ln.Backward(sc.norm, d_n);
      }
      case NormPlacement::kPost: {
        const Matrix d_sum = ln.Backward(sc.norm, d_y);
        return d_sum + f_back(d_sum);
      }
      case NormPlacement::kOff:
        break;
    }
    return d_y + f_back(d_y);
  };

  const Matrix d_h2 = sublayer_back(d_out, ffw_norm, cache.ffw_norm,
                                    [&](const Matrix& d) {
                                      return ffw.Backward(cache.ffw, d);
                                    });
  const Matrix d_h1 = sublayer_back(d_h2, cross_norm, cache.cross_norm,
                                    [&](const Matrix& d) {
                                      Matrix d_xq, d_ctx;
                                      cross_attn.Backward(cache.cross_attn, d,
                                                          &d_xq, &d_ctx);
                                      *d_context += d_ctx;
                                      return d_xq;
                                    });
  *d_queries = sublayer_back(d_h1, self_norm, cache.self_norm,
                             [&](const Matrix& d) {
                               Matrix d_xq, d_xkv;
                               self_attn.Backward(cache.self_attn, d, &d_xq,
                                                  &d_xkv);
                               return Matrix(d_xq + d_xkv);
                             });
}

void DecoderBlock::VisitParams(const std::string& prefix,
                               const ParamVisitor& visit) {
  if (config_.norm != NormPlacement::kOff) {
    self_norm.VisitParams(prefix + ".self_norm", visit);
  }
  self_attn.VisitParams(prefix + ".self_attn", visit);
  if (config_.norm != NormPlacement::kOff) {
    cross_norm.VisitParams(prefix + ".cross_norm", visit);
  }
  cross_attn.VisitParams(prefix + ".cross_attn", visit);
  if (config_.norm != NormPlacement::kOff) {
    ffw_norm.VisitParams(prefix + ".ffw_norm", visit);
  }
  ffw.VisitParams(prefix + ".ffw", visit);
}

}  // namespace qpress
