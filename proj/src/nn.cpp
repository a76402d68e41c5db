#include "prunefl/nn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "prunefl/rng.hpp"

namespace prunefl {

LayerSpec LayerSpec::fully_connected(int in, int out) {
  LayerSpec s;
  s.kind = LayerKind::FullyConnected;
  s.in_features = in;
  s.out_features = out;
  s.prunable = true;
  return s;
}

LayerSpec LayerSpec::conv2d(int in_ch, int out_ch, int kernel, int stride,
                            int padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.prunable = true;
  return s;
}

LayerSpec LayerSpec::relu() { return {LayerKind::ReLU}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::Flatten}; }
LayerSpec LayerSpec::softmax_cross_entropy() {
  return {LayerKind::SoftmaxCrossEntropy};
}

double SgdConfig::lr_at(long round) const {
  if (lr_half_rounds <= 0) return learning_rate;
  return learning_rate *
         std::pow(0.5, static_cast<double>(round) /
                           static_cast<double>(lr_half_rounds));
}

std::size_t MaskedParams::weight_capacity() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size();
  return n;
}

std::size_t MaskedParams::kept_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (auto m : l.mask) n += m;
  return n;
}

double MaskedParams::density() const {
  std::size_t cap = weight_capacity();
  return cap == 0 ? 0.0
                  : static_cast<double>(kept_count()) /
                        static_cast<double>(cap);
}

std::vector<std::size_t> MaskedParams::kept_per_layer() const {
  std::vector<std::size_t> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    std::size_t n = 0;
    for (auto m : l.mask) n += m;
    out.push_back(n);
  }
  return out;
}

std::vector<std::size_t> MaskedParams::capacity_per_layer() const {
  std::vector<std::size_t> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.w.size());
  return out;
}

Model::Model(TensorShape input, std::vector<LayerSpec> layers)
    : input_(input), layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("model: no layers");
  TensorShape cur = input_;
  std::size_t flat_offset = 0;
  for (int li = 0; li < static_cast<int>(layers_.size()); ++li) {
    const LayerSpec& l = layers_[li];
    bool last = li + 1 == static_cast<int>(layers_.size());
    switch (l.kind) {
      case LayerKind::FullyConnected: {
        if (cur.spatial)
          throw std::invalid_argument(
              "model: fully-connected layer needs flat input (add Flatten)");
        if (cur.features != l.in_features)
          throw std::invalid_argument(
              "model: fully-connected in_features=" +
              std::to_string(l.in_features) + " but input has " +
              std::to_string(cur.features));
        if (!l.prunable)
          throw std::invalid_argument("model: weight layers must be prunable");
        ParamSlot slot;
        slot.layer_index = li;
        slot.weight_count =
            static_cast<std::size_t>(l.in_features) * l.out_features;
        slot.bias_count = l.out_features;
        slot.fan_in = l.in_features;
        slot.fan_out = l.out_features;
        slot.flat_offset = flat_offset;
        flat_offset += slot.weight_count;
        slots_.push_back(slot);
        cur = TensorShape::flat(l.out_features);
        break;
      }
      case LayerKind::Conv2d: {
        if (!cur.spatial)
          throw std::invalid_argument("model: conv layer needs C x H x W input");
        if (cur.channels != l.in_channels)
          throw std::invalid_argument("model: conv in_channels mismatch");
        int ho = (cur.height + 2 * l.padding - l.kernel) / l.stride + 1;
        int wo = (cur.width + 2 * l.padding - l.kernel) / l.stride + 1;
        if (l.kernel <= 0 || l.stride <= 0 || ho <= 0 || wo <= 0)
          throw std::invalid_argument("model: conv output would be empty");
        if (!l.prunable)
          throw std::invalid_argument("model: weight layers must be prunable");
        ParamSlot slot;
        slot.layer_index = li;
        slot.weight_count = static_cast<std::size_t>(l.out_channels) *
                            l.in_channels * l.kernel * l.kernel;
        slot.bias_count = l.out_channels;
        slot.fan_in = l.in_channels * l.kernel * l.kernel;
        slot.fan_out = l.out_channels * l.kernel * l.kernel;
        slot.flat_offset = flat_offset;
        flat_offset += slot.weight_count;
        slots_.push_back(slot);
        cur = TensorShape::chw(l.out_channels, ho, wo);
        break;
      }
      case LayerKind::ReLU:
        break;
      case LayerKind::Flatten:
        cur = TensorShape::flat(cur.features);
        break;
      case LayerKind::SoftmaxCrossEntropy:
        if (!last)
          throw std::invalid_argument(
              "model: softmax cross-entropy must be the last layer");
        if (cur.spatial)
          throw std::invalid_argument("model: loss layer needs flat input");
        num_classes_ = cur.features;
        break;
    }
    shapes_.push_back(cur);
  }
  if (layers_.back().kind != LayerKind::SoftmaxCrossEntropy)
    throw std::invalid_argument(
        "model: last layer must be softmax cross-entropy");
  if (num_classes_ < 2)
    throw std::invalid_argument("model: need at least 2 classes");
  prunable_capacity_ = flat_offset;
}

MaskedParams Model::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  MaskedParams p;
  p.layers.resize(slots_.size());
  for (std::size_t si = 0; si < slots_.size(); ++si) {
    const ParamSlot& s = slots_[si];
    LayerParams& lp = p.layers[si];
    double limit = std::sqrt(6.0 / (s.fan_in + s.fan_out));
    lp.w.resize(s.weight_count);
    for (auto& w : lp.w) w = uniform_in(rng, -limit, limit);
    lp.mask.assign(s.weight_count, 1);
    lp.b.assign(s.bias_count, 0.0);
  }
  return p;
}

namespace {

// out[N x n_out] = x[N x n_in] * w[n_in x n_out] + b
void fc_forward(const DenseMatrix& x, const std::vector<double>& w,
                const std::vector<double>& b, int n_in, int n_out,
                DenseMatrix& out) {
  out = DenseMatrix(x.rows, n_out, 0.0);
  for (std::size_t n = 0; n < x.rows; ++n) {
    const double* xr = &x.values[n * x.cols];
    double* orow = &out.values[n * n_out];
    for (int i = 0; i < n_in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wrow = &w[static_cast<std::size_t>(i) * n_out];
      for (int o = 0; o < n_out; ++o) orow[o] += xi * wrow[o];
    }
    for (int o = 0; o < n_out; ++o) orow[o] += b[o];
  }
}

struct ConvDims {
  int c, h, w, oc, k, s, p, ho, wo;
  int col_rows() const { return c * k * k; }
  int col_cols() const { return ho * wo; }
};

ConvDims conv_dims(const LayerSpec& l, const TensorShape& in) {
  ConvDims d;
  d.c = l.in_channels;
  d.h = in.height;
  d.w = in.width;
  d.oc = l.out_channels;
  d.k = l.kernel;
  d.s = l.stride;
  d.p = l.padding;
  d.ho = (d.h + 2 * d.p - d.k) / d.s + 1;
  d.wo = (d.w + 2 * d.p - d.k) / d.s + 1;
  return d;
}

void im2col(const double* x, const ConvDims& d, DenseMatrix& col) {
  col = DenseMatrix(d.col_rows(), d.col_cols(), 0.0);
  for (int c = 0; c < d.c; ++c) {
    for (int ki = 0; ki < d.k; ++ki) {
      for (int kj = 0; kj < d.k; ++kj) {
        double* crow =
            &col.values[static_cast<std::size_t>((c * d.k + ki) * d.k + kj) *
                        col.cols];
        for (int ho = 0; ho < d.ho; ++ho) {
          int ih = ho * d.s - d.p + ki;
          if (ih < 0 || ih >= d.h) continue;
          for (int wo = 0; wo < d.wo; ++wo) {
            int iw = wo * d.s - d.p + kj;
            if (iw < 0 || iw >= d.w) continue;
            crow[ho * d.wo + wo] =
                x[(static_cast<std::size_t>(c) * d.h + ih) * d.w + iw];
          }
        }
      }
    }
  }
}

void col2im_add(const DenseMatrix& dcol, const ConvDims& d, double* gx) {
  for (int c = 0; c < d.c; ++c) {
    for (int ki = 0; ki < d.k; ++ki) {
      for (int kj = 0; kj < d.k; ++kj) {
        const double* crow =
            &dcol.values[static_cast<std::size_t>((c * d.k + ki) * d.k + kj) *
                         dcol.cols];
        for (int ho = 0; ho < d.ho; ++ho) {
          int ih = ho * d.s - d.p + ki;
          if (ih < 0 || ih >= d.h) continue;
          for (int wo = 0; wo < d.wo; ++wo) {
            int iw = wo * d.s - d.p + kj;
            if (iw < 0 || iw >= d.w) continue;
            gx[(static_cast<std::size_t>(c) * d.h + ih) * d.w + iw] +=
                crow[ho * d.wo + wo];
          }
        }
      }
    }
  }
}

double layer_density(const LayerParams& lp) {
  if (lp.w.empty()) return 1.0;
  std::size_t kept = 0;
  for (auto m : lp.mask) kept += m;
  return static_cast<double>(kept) / static_cast<double>(lp.w.size());
}

// Sparse weights pay off in the forward pass only below this density (5.2
// threshold rule; the exact crossover is hardware-bound, so the storage
// switch point doubles as the compute switch point).
constexpr double kSparseComputeThreshold = 1.0 / 32.0;

}  // namespace

ForwardResult Model::forward(const MaskedParams& params,
                             const Batch& batch) const {
  if (batch.size() == 0) throw std::invalid_argument("forward: empty batch");
  if (batch.x.rows != batch.size())
    throw std::invalid_argument("forward: feature/label count mismatch");
  if (static_cast<int>(batch.x.cols) != input_.features)
    throw std::invalid_argument(
        "forward: batch has " + std::to_string(batch.x.cols) +
        " features, model expects " + std::to_string(input_.features));
  if (params.layers.size() != slots_.size())
    throw std::invalid_argument("forward: params do not match model");
  for (int lab : batch.labels)
    if (lab < 0 || lab >= num_classes_)
      throw std::invalid_argument("forward: label out of range");

  ForwardResult res;
  res.cache.labels = batch.labels;
  res.cache.inputs.reserve(layers_.size());

  DenseMatrix cur = batch.x;
  TensorShape shape = input_;
  std::size_t slot = 0;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerSpec& l = layers_[li];
    res.cache.inputs.push_back(cur);
    switch (l.kind) {
      case LayerKind::FullyConnected: {
        const LayerParams& lp = params.layers[slot++];
        DenseMatrix out;
        fc_forward(cur, lp.w, lp.b, l.in_features, l.out_features, out);
        cur = std::move(out);
        break;
      }
      case LayerKind::Conv2d: {
        const LayerParams& lp = params.layers[slot++];
        ConvDims d = conv_dims(l, shape);
        DenseMatrix wmat(d.oc, d.col_rows());
        wmat.values = lp.w;
        bool sparse = layer_density(lp) < kSparseComputeThreshold;
        SparseMatrix wsp;
        if (sparse) wsp = sparse_from_dense(wmat);
        DenseMatrix out(cur.rows, static_cast<std::size_t>(d.oc) * d.ho * d.wo,
                        0.0);
        DenseMatrix col;
        for (std::size_t n = 0; n < cur.rows; ++n) {
          im2col(&cur.values[n * cur.cols], d, col);
          DenseMatrix o = sparse ? spmm(wsp, col) : matmul(wmat, col);
          double* orow = &out.values[n * out.cols];
          for (int oc = 0; oc < d.oc; ++oc) {
            const double* osrc = &o.values[static_cast<std::size_t>(oc) * o.cols];
            double* odst = orow + static_cast<std::size_t>(oc) * d.ho * d.wo;
            for (int sp = 0; sp < d.ho * d.wo; ++sp)
              odst[sp] = osrc[sp] + lp.b[oc];
          }
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::ReLU: {
        for (auto& v : cur.values) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerKind::Flatten:
        break;
      case LayerKind::SoftmaxCrossEntropy: {
        const std::size_t n_rows = cur.rows;
        const int nc = num_classes_;
        res.cache.probs = DenseMatrix(n_rows, nc, 0.0);
        double total = 0.0;
        for (std::size_t n = 0; n < n_rows; ++n) {
          const double* z = &cur.values[n * nc];
          double zmax = z[0];
          for (int j = 1; j < nc; ++j) zmax = std::max(zmax, z[j]);
          double sum = 0.0;
          for (int j = 0; j < nc; ++j) sum += std::exp(z[j] - zmax);
          double lse = zmax + std::log(sum);
          for (int j = 0; j < nc; ++j)
            res.cache.probs.at(n, j) = std::exp(z[j] - lse);
          total += lse - z[batch.labels[n]];
        }
        res.loss = total / static_cast<double>(n_rows);
        break;
      }
    }
    shape = shapes_[li];
  }
  return res;
}

GradientSample Model::backward(const MaskedParams& params,
                               const ForwardCache& cache) const {
  if (cache.inputs.size() != layers_.size())
    throw std::invalid_argument("backward: cache does not match model");
  const std::size_t n_rows = cache.probs.rows;
  GradientSample g;
  g.batch_size = n_rows;
  g.layers.resize(slots_.size());
  for (std::size_t si = 0; si < slots_.size(); ++si) {
    g.layers[si].w.assign(slots_[si].weight_count, 0.0);
    g.layers[si].b.assign(slots_[si].bias_count, 0.0);
  }

  // d(mean CE)/d(logits) = (softmax - onehot) / N
  DenseMatrix grad = cache.probs;
  const double inv_n = 1.0 / static_cast<double>(n_rows);
  for (std::size_t n = 0; n < n_rows; ++n) {
    grad.at(n, cache.labels[n]) -= 1.0;
    for (std::size_t j = 0; j < grad.cols; ++j) grad.at(n, j) *= inv_n;
  }

  std::size_t slot = slots_.size();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerSpec& l = layers_[li];
    const DenseMatrix& x = cache.inputs[li];
    switch (l.kind) {
      case LayerKind::SoftmaxCrossEntropy:
      case LayerKind::Flatten:
        break;
      case LayerKind::ReLU: {
        for (std::size_t i = 0; i < grad.values.size(); ++i)
          if (x.values[i] <= 0.0) grad.values[i] = 0.0;
        break;
      }
      case LayerKind::FullyConnected: {
        --slot;
        const LayerParams& lp = params.layers[slot];
        auto& gl = g.layers[slot];
        const int n_in = l.in_features, n_out = l.out_features;
        // g_w = x^T g_out, full space
        for (std::size_t n = 0; n < n_rows; ++n) {
          const double* xr = &x.values[n * n_in];
          const double* gr = &grad.values[n * n_out];
          for (int i = 0; i < n_in; ++i) {
            const double xi = xr[i];
            if (xi == 0.0) continue;
            double* gw = &gl.w[static_cast<std::size_t>(i) * n_out];
            for (int o = 0; o < n_out; ++o) gw[o] += xi * gr[o];
          }
          for (int o = 0; o < n_out; ++o) gl.b[o] += gr[o];
        }
        if (li > 0) {
          DenseMatrix gin(n_rows, n_in, 0.0);
          for (std::size_t n = 0; n < n_rows; ++n) {
            const double* gr = &grad.values[n * n_out];
            double* gi = &gin.values[n * n_in];
            for (int i = 0; i < n_in; ++i) {
              const double* wrow = &lp.w[static_cast<std::size_t>(i) * n_out];
              double acc = 0.0;
              for (int o = 0; o < n_out; ++o) acc += gr[o] * wrow[o];
              gi[i] = acc;
            }
          }
          grad = std::move(gin);
        }
        break;
      }
      case LayerKind::Conv2d: {
        --slot;
        const LayerParams& lp = params.layers[slot];
        auto& gl = g.layers[slot];
        TensorShape in_shape = li == 0 ? input_ : shapes_[li - 1];
        ConvDims d = conv_dims(l, in_shape);
        const int cr = d.col_rows(), cc = d.col_cols();
        DenseMatrix gin(n_rows, x.cols, 0.0);
        DenseMatrix col, dcol(cr, cc, 0.0);
        for (std::size_t n = 0; n < n_rows; ++n) {
          im2col(&x.values[n * x.cols], d, col);
          const double* go = &grad.values[n * grad.cols];  // oc x (ho*wo)
          // g_w += g_out col^T
          for (int oc = 0; oc < d.oc; ++oc) {
            const double* gor = go + static_cast<std::size_t>(oc) * cc;
            double* gw = &gl.w[static_cast<std::size_t>(oc) * cr];
            for (int r = 0; r < cr; ++r) {
              const double* crow = &col.values[static_cast<std::size_t>(r) * cc];
              double acc = 0.0;
              for (int q = 0; q < cc; ++q) acc += gor[q] * crow[q];
              gw[r] += acc;
            }
            double acc = 0.0;
            for (int q = 0; q < cc; ++q) acc += gor[q];
            gl.b[oc] += acc;
          }
          if (li > 0) {
            // dcol = w^T g_out, then scatter back to the input image
            std::fill(dcol.values.begin(), dcol.values.end(), 0.0);
            for (int oc = 0; oc < d.oc; ++oc) {
              const double* gor = go + static_cast<std::size_t>(oc) * cc;
              const double* wrow = &lp.w[static_cast<std::size_t>(oc) * cr];
              for (int r = 0; r < cr; ++r) {
                const double wv = wrow[r];
                if (wv == 0.0) continue;
                double* drow = &dcol.values[static_cast<std::size_t>(r) * cc];
                for (int q = 0; q < cc; ++q) drow[q] += wv * gor[q];
              }
            }
            col2im_add(dcol, d, &gin.values[n * gin.cols]);
          }
        }
        grad = std::move(gin);
        break;
      }
    }
  }
  return g;
}

double Model::loss(const MaskedParams& params, const Batch& batch) const {
  return forward(params, batch).loss;
}

std::vector<int> Model::predict(const MaskedParams& params,
                                const DenseMatrix& x) const {
  Batch b;
  b.x = x;
  b.labels.assign(x.rows, 0);  // placeholder labels; loss value unused
  ForwardResult r = forward(params, b);
  std::vector<int> out(x.rows);
  for (std::size_t n = 0; n < x.rows; ++n) {
    int best = 0;
    double bestp = r.cache.probs.at(n, 0);
    for (int j = 1; j < num_classes_; ++j) {
      double p = r.cache.probs.at(n, j);
      if (p > bestp) {
        bestp = p;
        best = j;
      }
    }
    out[n] = best;
  }
  return out;
}

MaskedParams sgd_step(const MaskedParams& params, const GradientSample& grad,
                      const SgdConfig& cfg, long round, SgdState* state) {
  if (grad.layers.size() != params.layers.size())
    throw std::invalid_argument("sgd_step: gradient/params layer mismatch");
  const double lr = cfg.lr_at(round);
  const bool use_momentum = cfg.momentum != 0.0;
  if (use_momentum && state == nullptr)
    throw std::invalid_argument("sgd_step: momentum requires SgdState");
  if (use_momentum && state->empty()) {
    state->vel_w.resize(params.layers.size());
    state->vel_b.resize(params.layers.size());
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
      state->vel_w[li].assign(params.layers[li].w.size(), 0.0);
      state->vel_b[li].assign(params.layers[li].b.size(), 0.0);
    }
  }
  MaskedParams out = params;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    LayerParams& lp = out.layers[li];
    const auto& gl = grad.layers[li];
    if (gl.w.size() != lp.w.size() || gl.b.size() != lp.b.size())
      throw std::invalid_argument("sgd_step: gradient shape mismatch");
    if (use_momentum) {
      auto& vw = state->vel_w[li];
      for (std::size_t j = 0; j < lp.w.size(); ++j) {
        if (lp.mask[j]) {
          vw[j] = cfg.momentum * vw[j] + gl.w[j];
          lp.w[j] -= lr * vw[j];
        } else {
          vw[j] = 0.0;
        }
      }
      auto& vb = state->vel_b[li];
      for (std::size_t j = 0; j < lp.b.size(); ++j) {
        vb[j] = cfg.momentum * vb[j] + gl.b[j];
        lp.b[j] -= lr * vb[j];
      }
    } else {
      for (std::size_t j = 0; j < lp.w.size(); ++j)
        if (lp.mask[j]) lp.w[j] -= lr * gl.w[j];
      for (std::size_t j = 0; j < lp.b.size(); ++j) lp.b[j] -= lr * gl.b[j];
    }
  }
  return out;
}

MaskedParams apply_mask(const MaskedParams& params, const MaskSet& new_masks,
                        SgdState* state) {
  if (new_masks.size() != params.layers.size())
    throw std::invalid_argument("apply_mask: mask layer count mismatch");
  MaskedParams out = params;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    LayerParams& lp = out.layers[li];
    const auto& nm = new_masks[li];
    if (nm.size() != lp.mask.size())
      throw std::invalid_argument("apply_mask: mask length mismatch");
    for (std::size_t j = 0; j < nm.size(); ++j) {
      if (!nm[j]) {
        lp.w[j] = 0.0;
        if (state && !state->empty()) state->vel_w[li][j] = 0.0;
      }
      lp.mask[j] = nm[j] ? 1 : 0;
    }
  }
  return out;
}

double masked_sqnorm(std::span<const double> g,
                     std::span<const std::uint8_t> m) {
  if (g.size() != m.size())
    throw std::invalid_argument("masked_sqnorm: length mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j)
    if (m[j]) acc += g[j] * g[j];
  return acc;
}

double masked_grad_sqnorm(const GradientSample& grad,
                          const MaskedParams& params) {
  double acc = 0.0;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    acc += masked_sqnorm(grad.layers[li].w, params.layers[li].mask);
    for (double gb : grad.layers[li].b) acc += gb * gb;
  }
  return acc;
}

}  // namespace prunefl
