#ifndef QPRESS_ATTENTION_H_
#define QPRESS_ATTENTION_H_

#include <string>
#include <vector>

#include "qpress/tensor.h"

namespace qpress {

// Where layer normalization sits relative to each residual sub-layer.
enum class NormPlacement { kOff, kPre, kPost };

NormPlacement ParseNormPlacement(const std::string& s);
std::string ToString(NormPlacement p);

enum class AttentionRole { kSelf, kCross };

// Softmax weights of one head in one layer, captured during a forward pass.
struct AttentionRecord {
  int layer = 0;
  int head = 0;
  AttentionRole role = AttentionRole::kSelf;
  Matrix weights;  // L_q × L_kv, rows sum to one
};

struct AttentionOutput {
  Matrix output;   // L_q × d_v
  Matrix weights;  // L_q × L_kv
};

// A = softmax(scale · Q Kᵀ) row-wise, output = A V.
AttentionOutput Attention(const Matrix& q, const Matrix& k, const Matrix& v,
                          double scale);

struct AttentionGradients {
  Matrix d_q;
  Matrix d_k;
  Matrix d_v;
};

AttentionGradients AttentionBackward(const Matrix& q, const Matrix& k,
                                     const Matrix& v, double scale,
                                     const Matrix& weights,
                                     const Matrix& d_output);

// y = x W + b. Gradients accumulate into the params on Backward.
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features);

  void InitXavier(Rng& rng);
  Matrix Forward(const Matrix& x) const;
  Matrix Backward(const Matrix& x, const Matrix& d_out);
  void VisitParams(const std::string& prefix, const ParamVisitor& visit);

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }

  Param weight;  // in × out
  Param bias;    // 1 × out
};

class LayerNorm {
 public:
  struct Cache {
    Matrix normalized;
    Vector inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Matrix Forward(const Matrix& x, Cache* cache) const;
  Matrix Backward(const Cache& cache, const Matrix& d_out);
  void VisitParams(const std::string& prefix, const ParamVisitor& visit);

  Param gain;
  Param bias;
  double eps = 1e-5;
};

struct BlockConfig {
  int dim = 768;
  int heads = 12;
  int ffw_hidden = 3072;
  NormPlacement norm = NormPlacement::kPre;
  // Softmax temperature; a non-positive value selects 1/sqrt(dim/heads).
  double attention_scale = 0.0;

  int head_dim() const { return dim / heads; }
  double scale() const;
  void Validate() const;
};

// Multi-head attention without the residual: concat_h(A_h V_h) W_o + b_o.
class MultiHeadAttention {
 public:
  struct Cache {
    Matrix x_q;
    Matrix x_kv;
    Matrix q;
    Matrix k;
    Matrix v;
    Matrix concat;
    std::vector<Matrix> weights;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, double scale);

  void Init(Rng& rng);
  // head_weights, if given, receives one softmax matrix per head.
  Matrix Forward(const Matrix& x_q, const Matrix& x_kv, Cache* cache,
                 std::vector<Matrix>* head_weights = nullptr) const;
  // d_x_q and d_x_kv are overwritten.
  void Backward(const Cache& cache, const Matrix& d_out, Matrix* d_x_q,
                Matrix* d_x_kv);
  void VisitParams(const std::string& prefix, const ParamVisitor& visit);

  int heads() const { return heads_; }
  double scale() const { return scale_; }

  Linear query;
  Linear key;
  Linear value;
  Linear output;

 private:
  int heads_ = 1;
  double scale_ = 1.0;
};

// Q + MHA(Q, KV): one residual attention update.
Matrix MultiHeadAttentionResidual(const Matrix& q, const Matrix& kv,
                                  const MultiHeadAttention& mha);
// Q + MHA(Q, Q).
Matrix SelfAttentionResidual(const Matrix& q, const MultiHeadAttention& mha);

// Two affine maps with a GELU in between.
class FeedForward {
 public:
  struct Cache {
    Matrix x;
    Matrix pre_activation;
    Matrix hidden;
  };

  FeedForward() = default;
  FeedForward(int dim, int hidden);

  void Init(Rng& rng);
  Matrix Forward(const Matrix& x, Cache* cache) const;
  Matrix Backward(const Cache& cache, const Matrix& d_out);
  void VisitParams(const std::string& prefix, const ParamVisitor& visit);

  Linear expand;
  Linear contract;
};

// Transformer decoder block: self-attention over the queries, cross-attention
// from the queries into the context, then a feed-forward update. Every
// sub-step is residual.
class DecoderBlock {
 public:
  struct SubLayerNorm {
    LayerNorm::Cache norm;
  };
  struct Cache {
    SubLayerNorm self_norm;
    MultiHeadAttention::Cache self_attn;
    SubLayerNorm cross_norm;
    MultiHeadAttention::Cache cross_attn;
    SubLayerNorm ffw_norm;
    FeedForward::Cache ffw;
  };

  DecoderBlock() = default;
  explicit DecoderBlock(const BlockConfig& config);

  void Init(Rng& rng);
  Matrix Forward(const Matrix& queries, const Matrix& context, Cache* cache,
                 std::vector<AttentionRecord>* capture = nullptr,
                 int layer = 0) const;
  // d_queries is overwritten; d_context is accumulated into (it must be
  // sized like the context).
  void Backward(const Cache& cache, const Matrix& d_out, Matrix* d_queries,
                Matrix* d_context);
  void VisitParams(const std::string& prefix, const ParamVisitor& visit);

  const BlockConfig& config() const { return config_; }

  LayerNorm self_norm;
  MultiHeadAttention self_attn;
  LayerNorm cross_norm;
  MultiHeadAttention cross_attn;
  LayerNorm ffw_norm;
  FeedForward ffw;

 private:
  BlockConfig config_;
};

}  // namespace qpress

#endif  // QPRESS_ATTENTION_H_
