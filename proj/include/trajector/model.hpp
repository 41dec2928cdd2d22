#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trajector/error.hpp"
#include "trajector/eval.hpp"
#include "trajector/io.hpp"
#include "trajector/parallel.hpp"
#include "trajector/rng.hpp"

namespace trajector {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TransformerConfig {
  int input_dim = 1;
  int hidden_dim = 128;
  int n_layers = 2;
  int n_heads = 2;
  int ff_dim = 256;
  int max_len = 256;
  std::uint64_t seed = 0;
  bool positional_encoding = true;

  int head_dim() const { return hidden_dim / n_heads; }

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1 || n_layers < 1 || n_heads < 1 || ff_dim < 1 || max_len < 1)
      throw ModelError("transformer dimensions must be positive");
    if (hidden_dim % n_heads != 0)
      throw ModelError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by n_heads " +
                       std::to_string(n_heads));
  }

  bool operator==(const TransformerConfig&) const = default;
};

// One pre-norm encoder layer. Vectors are stored as 1 x n matrices.
struct LayerParams {
  MatrixXd ln1_gain, ln1_bias;
  MatrixXd wq, wk, wv, wo;
  MatrixXd ln2_gain, ln2_bias;
  MatrixXd ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ModelParams {
  MatrixXd embed;  // input_dim x hidden
  std::vector<LayerParams> layers;
  MatrixXd head_w;  // hidden x 2
  MatrixXd head_b;  // 1 x 2

  // Visits every tensor in a fixed order with its checkpoint name.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("embed.weight", self.embed);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1.gain", L.ln1_gain);
      f(p + "ln1.bias", L.ln1_bias);
      f(p + "attn.wq", L.wq);
      f(p + "attn.wk", L.wk);
      f(p + "attn.wv", L.wv);
      f(p + "attn.wo", L.wo);
      f(p + "ln2.gain", L.ln2_gain);
      f(p + "ln2.bias", L.ln2_bias);
      f(p + "ff1.weight", L.ff1_w);
      f(p + "ff1.bias", L.ff1_b);
      f(p + "ff2.weight", L.ff2_w);
      f(p + "ff2.bias", L.ff2_b);
    }
    f("head.weight", self.head_w);
    f("head.bias", self.head_b);
  }
  template <typename F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each([](const std::string&, MatrixXd& t) { t.setZero(); });
    return z;
  }

  void add(const ModelParams& other) {
    std::vector<const MatrixXd*> src;
    other.for_each([&](const std::string&, const MatrixXd& t) { src.push_back(&t); });
    std::size_t i = 0;
    for_each([&](const std::string&, MatrixXd& t) { t += *src[i++]; });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const MatrixXd& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  bool operator==(const ModelParams& other) const {
    std::vector<const MatrixXd*> mine;
    for_each([&](const std::string&, const MatrixXd& t) { mine.push_back(&t); });
    std::size_t i = 0;
    bool equal = true;
    other.for_each([&](const std::string&, const MatrixXd& t) {
      if (i >= mine.size() || mine[i]->rows() != t.rows() || mine[i]->cols() != t.cols() || *mine[i] != t)
        equal = false;
      ++i;
    });
    return equal && i == mine.size();
  }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm
// gains. Deterministic in config.seed.
inline ModelParams init_model(const TransformerConfig& config) {
  config.validate();
  const int h = config.hidden_dim;
  ModelParams p;
  p.embed = MatrixXd::Zero(config.input_dim, h);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& L : p.layers) {
    L.ln1_gain = MatrixXd::Ones(1, h);
    L.ln1_bias = MatrixXd::Zero(1, h);
    L.wq = L.wk = L.wv = L.wo = MatrixXd::Zero(h, h);
    L.ln2_gain = MatrixXd::Ones(1, h);
    L.ln2_bias = MatrixXd::Zero(1, h);
    L.ff1_w = MatrixXd::Zero(h, config.ff_dim);
    L.ff1_b = MatrixXd::Zero(1, config.ff_dim);
    L.ff2_w = MatrixXd::Zero(config.ff_dim, h);
    L.ff2_b = MatrixXd::Zero(1, h);
  }
  p.head_w = MatrixXd::Zero(h, 2);
  p.head_b = MatrixXd::Zero(1, 2);

  Rng rng(config.seed);
  p.for_each([&](const std::string& name, MatrixXd& t) {
    if (name.ends_with(".bias") || name.ends_with(".gain")) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows()));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  });
  return p;
}

// Mean binary cross-entropy with log arguments clamped at 1e-12.
inline double bce_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty()) throw ModelError("loss needs equal, non-empty inputs");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double y = labels[i];
    sum -= y * std::log(std::max(probs[i], 1e-12)) + (1.0 - y) * std::log(std::max(1.0 - probs[i], 1e-12));
  }
  return sum / static_cast<double>(probs.size());
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

inline MatrixXd layer_norm_forward(const MatrixXd& x, const MatrixXd& gain, const MatrixXd& bias,
                                   LayerNormCache& cache) {
  const double h = static_cast<double>(x.cols());
  const VectorXd mean = x.rowwise().mean();
  cache.xhat = x.colwise() - mean;
  const VectorXd var = cache.xhat.rowwise().squaredNorm() / h;
  cache.inv_std = (var.array() + kLayerNormEps).rsqrt();
  cache.xhat = cache.inv_std.asDiagonal() * cache.xhat;
  MatrixXd y = (cache.xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  return y;
}

inline MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& gain, const LayerNormCache& cache,
                                    MatrixXd& dgain, MatrixXd& dbias) {
  const double h = static_cast<double>(dy.cols());
  dgain += dy.cwiseProduct(cache.xhat).colwise().sum();
  dbias += dy.colwise().sum();
  const MatrixXd dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const VectorXd s1 = dxhat.rowwise().sum();
  const VectorXd s2 = dxhat.cwiseProduct(cache.xhat).rowwise().sum();
  MatrixXd dx = h * dxhat;
  dx.colwise() -= s1;
  dx -= s2.asDiagonal() * cache.xhat;
  return (cache.inv_std / h).asDiagonal() * dx;
}

inline void softmax_rows(MatrixXd& s) {
  const VectorXd row_max = s.rowwise().maxCoeff();
  s = (s.colwise() - row_max).array().exp().matrix();
  const VectorXd sums = s.rowwise().sum();
  s = sums.cwiseInverse().asDiagonal() * s;
}

struct LayerCache {
  LayerNormCache ln1, ln2;
  MatrixXd a, q, k, v, attn_out;
  std::vector<MatrixXd> probs;
  MatrixXd b, ff_pre, ff_act;
};

struct SampleCache {
  MatrixXd input;
  std::vector<LayerCache> layers;
  Eigen::RowVectorXd pooled;
  double p_fake = 0.5;
};

}  // namespace detail

// Encoder-only classifier: linear embed -> (+ sinusoidal positions) ->
// pre-norm encoder layers -> mean pool over valid positions -> linear head ->
// softmax. Only the valid prefix of a padded sequence is ever touched, so
// padding cannot leak into attention or pooling.
class Transformer {
 public:
  explicit Transformer(TransformerConfig config) : Transformer(config, init_model(config)) {}

  Transformer(TransformerConfig config, ModelParams params) : config_(config), params_(std::move(params)) {
    config_.validate();
    check_shapes();
    positions_ = MatrixXd::Zero(config_.max_len, config_.hidden_dim);
    if (config_.positional_encoding) {
      for (int pos = 0; pos < config_.max_len; ++pos)
        for (int i = 0; i < config_.hidden_dim; ++i) {
          const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / config_.hidden_dim);
          positions_(pos, i) = i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
        }
    }
  }

  const TransformerConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  // Probability of class fake for one unpadded sequence (n x input_dim).
  double predict(const MatrixXd& sequence) const {
    detail::SampleCache cache;
    return forward_sample(sequence, cache);
  }

  // Batch entries are L x input_dim; only the first lengths[b] rows count.
  std::vector<double> forward(const std::vector<MatrixXd>& batch, const std::vector<int>& lengths) const {
    if (batch.size() != lengths.size()) throw ModelError("batch/lengths size mismatch");
    std::vector<double> out;
    out.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(predict(valid_prefix(batch[b], lengths[b])));
    return out;
  }

  // Adds weight * d(per-sample BCE)/d(params) into grad; returns the
  // per-sample loss and, through p_out, the predicted probability.
  double accumulate_gradient(const MatrixXd& sequence, int label, double weight, ModelParams& grad,
                             double* p_out = nullptr) const {
    detail::SampleCache cache;
    const double p = forward_sample(sequence, cache);
    if (p_out) *p_out = p;
    const double y = label;
    // d(loss)/d(logit_fake) with the softmax over two logits; clamped log
    // arguments contribute no gradient.
    double g = 0.0;
    if (y > 0.0 && p > 1e-12) g -= y * (1.0 - p);
    if (y < 1.0 && 1.0 - p > 1e-12) g += (1.0 - y) * p;
    g *= weight;
    backward_sample(cache, Eigen::RowVector2d(-g, g), grad);
    return -(y * std::log(std::max(p, 1e-12)) + (1.0 - y) * std::log(std::max(1.0 - p, 1e-12)));
  }

  MatrixXd valid_prefix(const MatrixXd& padded, int length) const {
    if (length < 1 || length > padded.rows()) throw ModelError("sequence length outside [1, L]");
    return padded.topRows(length);
  }

 private:
  void check_shapes() const {
    const ModelParams reference = shape_template();
    std::vector<std::pair<Eigen::Index, Eigen::Index>> expected;
    reference.for_each([&](const std::string&, const MatrixXd& t) { expected.emplace_back(t.rows(), t.cols()); });
    std::size_t i = 0;
    params_.for_each([&](const std::string& name, const MatrixXd& t) {
      if (i >= expected.size() || expected[i] != std::make_pair(t.rows(), t.cols()))
        throw ModelError("parameter shape mismatch at " + name);
      ++i;
    });
    if (i != expected.size()) throw ModelError("parameter count mismatch");
  }

  ModelParams shape_template() const {
    TransformerConfig c = config_;
    c.seed = 0;
    return init_model(c);
  }

  double forward_sample(const MatrixXd& x, detail::SampleCache& cache) const {
    const Eigen::Index n = x.rows();
    if (n < 1) throw ModelError("empty sequence");
    if (n > config_.max_len) throw ModelError("sequence longer than max_len");
    if (x.cols() != config_.input_dim) throw ModelError("input width does not match input_dim");
    const int heads = config_.n_heads;
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.input = x;
    MatrixXd h = x * params_.embed;
    h += positions_.topRows(n);
    cache.layers.resize(params_.layers.size());
    for (std::size_t l = 0; l < params_.layers.size(); ++l) {
      const auto& L = params_.layers[l];
      auto& c = cache.layers[l];
      c.a = detail::layer_norm_forward(h, L.ln1_gain, L.ln1_bias, c.ln1);
      c.q.noalias() = c.a * L.wq;
      c.k.noalias() = c.a * L.wk;
      c.v.noalias() = c.a * L.wv;
      c.attn_out.resize(n, config_.hidden_dim);
      c.probs.resize(static_cast<std::size_t>(heads));
      for (int hd = 0; hd < heads; ++hd) {
        auto& probs = c.probs[static_cast<std::size_t>(hd)];
        probs.noalias() = scale * (c.q.middleCols(hd * dh, dh) * c.k.middleCols(hd * dh, dh).transpose());
        detail::softmax_rows(probs);
        c.attn_out.middleCols(hd * dh, dh).noalias() = probs * c.v.middleCols(hd * dh, dh);
      }
      h.noalias() += c.attn_out * L.wo;

      c.b = detail::layer_norm_forward(h, L.ln2_gain, L.ln2_bias, c.ln2);
      c.ff_pre.noalias() = c.b * L.ff1_w;
      c.ff_pre.rowwise() += L.ff1_b.row(0);
      c.ff_act = c.ff_pre.cwiseMax(0.0);
      h.noalias() += c.ff_act * L.ff2_w;
      h.rowwise() += L.ff2_b.row(0);
    }
    cache.pooled = h.colwise().mean();
    Eigen::RowVector2d logits = cache.pooled * params_.head_w + params_.head_b;
    // Two-class softmax; P(fake) = sigmoid(l1 - l0).
    const double diff = logits(1) - logits(0);
    cache.p_fake = diff >= 0.0 ? 1.0 / (1.0 + std::exp(-diff)) : std::exp(diff) / (1.0 + std::exp(diff));
    return cache.p_fake;
  }

  void backward_sample(const detail::SampleCache& cache, const Eigen::RowVector2d& dlogits, ModelParams& grad) const {
    const Eigen::Index n = cache.input.rows();
    const int heads = config_.n_heads;
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    grad.head_w.noalias() += cache.pooled.transpose() * dlogits;
    grad.head_b += dlogits;
    const Eigen::RowVectorXd dpooled = dlogits * params_.head_w.transpose();
    MatrixXd dh_res = (dpooled / static_cast<double>(n)).replicate(n, 1);

    for (std::size_t li = params_.layers.size(); li-- > 0;) {
      const auto& L = params_.layers[li];
      auto& G = grad.layers[li];
      const auto& c = cache.layers[li];

      // Feed-forward block: h += relu(b W1 + b1) W2 + b2, b = LN2(h).
      G.ff2_w.noalias() += c.ff_act.transpose() * dh_res;
      G.ff2_b += dh_res.colwise().sum();
      MatrixXd dpre = dh_res * L.ff2_w.transpose();
      dpre = dpre.cwiseProduct((c.ff_pre.array() > 0.0).cast<double>().matrix());
      G.ff1_w.noalias() += c.b.transpose() * dpre;
      G.ff1_b += dpre.colwise().sum();
      const MatrixXd db = dpre * L.ff1_w.transpose();
      dh_res += detail::layer_norm_backward(db, L.ln2_gain, c.ln2, G.ln2_gain, G.ln2_bias);

      // Attention block: h += concat_h(softmax(Q K^T * scale) V) Wo, with
      // Q, K, V projected from a = LN1(h).
      G.wo.noalias() += c.attn_out.transpose() * dh_res;
      const MatrixXd dattn = dh_res * L.wo.transpose();
      MatrixXd dq(n, config_.hidden_dim), dk(n, config_.hidden_dim), dv(n, config_.hidden_dim);
      for (int hd = 0; hd < heads; ++hd) {
        const auto& probs = c.probs[static_cast<std::size_t>(hd)];
        const auto d_out = dattn.middleCols(hd * dh, dh);
        dv.middleCols(hd * dh, dh).noalias() = probs.transpose() * d_out;
        MatrixXd dprobs = d_out * c.v.middleCols(hd * dh, dh).transpose();
        const VectorXd row_dot = dprobs.cwiseProduct(probs).rowwise().sum();
        dprobs.colwise() -= row_dot;
        const MatrixXd dscores = scale * probs.cwiseProduct(dprobs);
        dq.middleCols(hd * dh, dh).noalias() = dscores * c.k.middleCols(hd * dh, dh);
        dk.middleCols(hd * dh, dh).noalias() = dscores.transpose() * c.q.middleCols(hd * dh, dh);
      }
      G.wq.noalias() += c.a.transpose() * dq;
      G.wk.noalias() += c.a.transpose() * dk;
      G.wv.noalias() += c.a.transpose() * dv;
      MatrixXd da = dq * L.wq.transpose();
      da.noalias() += dk * L.wk.transpose();
      da.noalias() += dv * L.wv.transpose();
      dh_res += detail::layer_norm_backward(da, L.ln1_gain, c.ln1, G.ln1_gain, G.ln1_bias);
    }
    grad.embed.noalias() += cache.input.transpose() * dh_res;
  }

  TransformerConfig config_;
  ModelParams params_;
  MatrixXd positions_;
};

// Free-function surface over Transformer.
inline std::vector<double> forward(const ModelParams& params, const TransformerConfig& config,
                                   const std::vector<MatrixXd>& batch, const std::vector<int>& lengths) {
  return Transformer(config, params).forward(batch, lengths);
}

// Gradient of the mean BCE over the batch.
inline ModelParams backward(const ModelParams& params, const TransformerConfig& config,
                            const std::vector<MatrixXd>& batch, const std::vector<int>& lengths,
                            const std::vector<int>& labels) {
  if (batch.size() != labels.size() || batch.size() != lengths.size() || batch.empty())
    throw ModelError("backward needs equal, non-empty batch/lengths/labels");
  const Transformer model(config, params);
  ModelParams grad = params.zeros_like();
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b)
    model.accumulate_gradient(model.valid_prefix(batch[b], lengths[b]), labels[b], weight, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Optimization.

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<MatrixXd> m, v;

  void apply(ModelParams& params, const ModelParams& grad, double lr) {
    std::vector<const MatrixXd*> g;
    grad.for_each([&](const std::string&, const MatrixXd& t) { g.push_back(&t); });
    if (m.empty()) {
      for (const auto* t : g) {
        m.push_back(MatrixXd::Zero(t->rows(), t->cols()));
        v.push_back(MatrixXd::Zero(t->rows(), t->cols()));
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    std::size_t i = 0;
    params.for_each([&](const std::string&, MatrixXd& p) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * *g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i]->cwiseProduct(*g[i]);
      p.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
      ++i;
    });
  }
};

// Multiplies the learning rate by `factor` once the monitored loss has failed
// to improve for `patience` consecutive epochs.
class ReduceOnPlateau {
 public:
  ReduceOnPlateau(double lr, int patience, double factor) : lr_(lr), patience_(patience), factor_(factor) {}

  double step(double loss) {
    if (loss < best_) {
      best_ = loss;
      bad_epochs_ = 0;
    } else if (++bad_epochs_ >= patience_) {
      lr_ *= factor_;
      bad_epochs_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 128;
  int epochs = 30;
  int plateau_patience = 3;
  double plateau_factor = 0.5;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0) || batch_size < 1 || epochs < 1 || plateau_patience < 1)
      throw ModelError("invalid training configuration");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ModelError("plateau_factor must lie in (0,1)");
    for (double f : split)
      if (f < 0.0) throw ModelError("split fractions must be non-negative");
    if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) throw ModelError("split fractions must sum to 1");
  }
};

struct Example {
  MatrixXd states;  // n x input_dim
  int label = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double train_auc = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  double val_auc = std::numeric_limits<double>::quiet_NaN();

  bool operator==(const EpochRecord& o) const {
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return epoch == o.epoch && same(lr, o.lr) && same(train_loss, o.train_loss) && same(train_acc, o.train_acc) &&
           same(train_auc, o.train_auc) && same(val_loss, o.val_loss) && same(val_acc, o.val_acc) &&
           same(val_auc, o.val_auc);
  }
};

struct TrainResult {
  ModelParams params;  // snapshot at the best validation loss
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

// Samples per gradient work unit. Fixed so that the summation order, and
// hence the result, does not depend on the worker count.
inline constexpr std::size_t kGradientChunk = 16;

struct Scored {
  double loss = 0.0;
  double acc = 0.0;
  double auc = std::numeric_limits<double>::quiet_NaN();
};

inline Scored score_predictions(const std::vector<double>& probs, const std::vector<int>& labels) {
  Scored s;
  s.loss = bce_loss(probs, labels);
  std::vector<int> preds;
  for (double p : probs) preds.push_back(p > 0.5 ? 1 : 0);
  s.acc = accuracy(preds, labels);
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos > 0 && static_cast<std::size_t>(pos) < labels.size()) s.auc = roc_auc(probs, labels).auc;
  return s;
}

inline MatrixXd clip_length(const MatrixXd& states, int max_len) {
  return states.rows() > max_len ? MatrixXd(states.topRows(max_len)) : states;
}

// Adam + reduce-on-plateau (monitoring epoch training loss); parameters are
// snapshotted at the best validation loss (training loss if there is no
// validation set). Shuffling uses tconfig.seed, so runs are reproducible.
inline TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                         const TrainConfig& tconfig, const TransformerConfig& mconfig,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  tconfig.validate();
  if (train_set.empty()) throw ModelError("empty training set");
  const auto positives = std::count_if(train_set.begin(), train_set.end(), [](const Example& e) { return e.label == 1; });
  if (positives == 0 || static_cast<std::size_t>(positives) == train_set.size())
    throw ModelError("training set must contain both classes");

  Transformer model(mconfig);
  AdamState adam;
  ReduceOnPlateau scheduler(tconfig.lr, tconfig.plateau_patience, tconfig.plateau_factor);
  Rng shuffle_rng(derive_seed(tconfig.seed, 0x7261696eULL));

  std::vector<MatrixXd> train_inputs, val_inputs;
  for (const auto& e : train_set) train_inputs.push_back(clip_length(e.states, mconfig.max_len));
  for (const auto& e : val_set) val_inputs.push_back(clip_length(e.states, mconfig.max_len));
  std::vector<int> val_labels;
  for (const auto& e : val_set) val_labels.push_back(e.label);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= tconfig.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = scheduler.lr();
    shuffle_rng.shuffle(order);

    std::vector<double> epoch_probs(order.size());
    std::vector<int> epoch_labels(order.size());
    std::vector<double> epoch_losses(order.size());
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tconfig.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tconfig.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      const std::size_t chunks = (end - start + kGradientChunk - 1) / kGradientChunk;
      std::vector<ModelParams> partial(chunks);
      parallel_for(chunks, [&](std::size_t c) {
        partial[c] = model.params().zeros_like();
        const std::size_t lo = start + c * kGradientChunk;
        const std::size_t hi = std::min(end, lo + kGradientChunk);
        for (std::size_t k = lo; k < hi; ++k) {
          const auto& ex = train_set[order[k]];
          epoch_labels[k] = ex.label;
          epoch_losses[k] =
              model.accumulate_gradient(train_inputs[order[k]], ex.label, weight, partial[c], &epoch_probs[k]);
        }
      });
      ModelParams grad = std::move(partial[0]);
      for (std::size_t c = 1; c < chunks; ++c) grad.add(partial[c]);
      adam.apply(model.params(), grad, scheduler.lr());
    }
    const Scored tr = score_predictions(epoch_probs, epoch_labels);
    rec.train_loss = std::accumulate(epoch_losses.begin(), epoch_losses.end(), 0.0) / static_cast<double>(order.size());
    rec.train_acc = tr.acc;
    rec.train_auc = tr.auc;

    double monitored = rec.train_loss;
    if (!val_set.empty()) {
      std::vector<double> probs(val_inputs.size());
      parallel_for(val_inputs.size(), [&](std::size_t i) { probs[i] = model.predict(val_inputs[i]); });
      const Scored va = score_predictions(probs, val_labels);
      rec.val_loss = va.loss;
      rec.val_acc = va.acc;
      rec.val_auc = va.auc;
      monitored = va.loss;
    }
    if (monitored < best || epoch == 1) {
      best = monitored;
      result.params = model.params();
      result.best_epoch = epoch;
    }
    scheduler.step(rec.train_loss);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

inline nlohmann::json history_to_json(const std::vector<EpochRecord>& history) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : history) {
    out.push_back({{"epoch", r.epoch},
                   {"lr", r.lr},
                   {"train_loss", num(r.train_loss)},
                   {"train_acc", num(r.train_acc)},
                   {"train_auc", num(r.train_auc)},
                   {"val_loss", num(r.val_loss)},
                   {"val_acc", num(r.val_acc)},
                   {"val_auc", num(r.val_auc)}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: {"format": 1, "config": {...}, "tensors": {name: {shape, data}}}

inline constexpr int kCheckpointFormat = 1;

struct Checkpoint {
  TransformerConfig config;
  ModelParams params;
  MatrixXd input_transform;  // input_dim x input_dim, applied to states before the model
  nlohmann::json pipeline = nlohmann::json::object();
};

inline nlohmann::json transformer_config_to_json(const TransformerConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden_dim", c.hidden_dim},   {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},     {"ff_dim", c.ff_dim},           {"max_len", c.max_len},
          {"seed", c.seed},           {"positional_encoding", c.positional_encoding}};
}

inline TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  return c;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json doc;
  doc["format"] = kCheckpointFormat;
  doc["config"] = transformer_config_to_json(ck.config);
  doc["config"]["pipeline"] = ck.pipeline;
  auto tensor = [](const MatrixXd& t) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t.size()));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) data.push_back(t(r, c));
    return nlohmann::json{{"shape", {t.rows(), t.cols()}}, {"data", std::move(data)}};
  };
  auto& tensors = doc["tensors"];
  ck.params.for_each([&](const std::string& name, const MatrixXd& t) { tensors[name] = tensor(t); });
  tensors["input.whiten"] = tensor(ck.input_transform);
  return doc.dump() + "\n";
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint decode_checkpoint(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("unreadable checkpoint: ") + e.what());
  }
  try {
    if (doc.at("format").get<int>() != kCheckpointFormat)
      throw CheckpointError("unsupported checkpoint format " + doc.at("format").dump());
    Checkpoint ck;
    ck.config = transformer_config_from_json(doc.at("config"));
    ck.config.validate();
    if (doc["config"].contains("pipeline")) ck.pipeline = doc["config"]["pipeline"];
    ck.params = init_model(ck.config);
    const auto& tensors = doc.at("tensors");
    auto read = [&](const std::string& name, MatrixXd& t) {
      if (!tensors.contains(name)) throw CheckpointError("missing tensor " + name);
      const auto& jt = tensors.at(name);
      const auto shape = jt.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
        throw CheckpointError("shape mismatch for tensor " + name);
      const auto data = jt.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != t.size()) throw CheckpointError("size mismatch for tensor " + name);
      std::size_t i = 0;
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = data[i++];
    };
    ck.params.for_each(read);
    ck.input_transform = MatrixXd::Identity(ck.config.input_dim, ck.config.input_dim);
    read("input.whiten", ck.input_transform);
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ModelError& e) {
    throw CheckpointError(std::string("invalid checkpoint config: ") + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

// Loads and requires the stored architecture to match `expected` (the seed is
// not part of the architecture).
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const TransformerConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  TransformerConfig a = ck.config, b = expected;
  a.seed = b.seed = 0;
  if (!(a == b)) throw CheckpointError("checkpoint shape mismatch: stored architecture differs from the requested one");
  return ck;
}

}  // namespace trajector
