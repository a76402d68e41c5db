#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "prunefl/sparse_tensor.hpp"

namespace prunefl {

enum class LayerKind {
  FullyConnected,
  Conv2d,
  ReLU,
  Flatten,
  SoftmaxCrossEntropy,
};

struct LayerSpec {
  LayerKind kind;
  // FullyConnected
  int in_features = 0;
  int out_features = 0;
  // Conv2d (square kernels, same stride/padding both axes)
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  // Weight layers are prunable; biases never are.
  bool prunable = false;

  static LayerSpec fully_connected(int in, int out);
  static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride = 1,
                          int padding = 0);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec softmax_cross_entropy();
};

// Activation shape flowing between layers: either flat features or C x H x W.
struct TensorShape {
  bool spatial = false;
  int features = 0;  // flat form
  int channels = 0, height = 0, width = 0;

  static TensorShape flat(int n) { return {false, n, 0, 0, 0}; }
  static TensorShape chw(int c, int h, int w) {
    return {true, c * h * w, c, h, w};
  }
  int element_count() const { return features; }
};

struct Batch {
  DenseMatrix x;            // N x input features, row-major
  std::vector<int> labels;  // N entries in [0, num_classes)
  std::size_t size() const { return labels.size(); }
};

// Per weight layer: flat weights, a same-length keep mask, and an unmasked
// bias vector. Invariant: mask[j] == 0 implies w[j] == 0.
struct LayerParams {
  std::vector<double> w;
  std::vector<std::uint8_t> mask;
  std::vector<double> b;
};

// The single source of truth for model state.
struct MaskedParams {
  std::vector<LayerParams> layers;

  std::size_t weight_capacity() const;
  std::size_t kept_count() const;
  double density() const;  // kept / capacity over prunable weights
  std::vector<std::size_t> kept_per_layer() const;
  std::vector<std::size_t> capacity_per_layer() const;
};

using MaskSet = std::vector<std::vector<std::uint8_t>>;

// Full-space gradients: every weight coordinate is present, including ones
// whose mask bit is 0 (the gradient of the dense extension at the masked
// point).
struct GradientSample {
  struct LayerGrads {
    std::vector<double> w;
    std::vector<double> b;
  };
  std::vector<LayerGrads> layers;
  std::size_t batch_size = 0;
};

struct SgdConfig {
  double learning_rate = 0.1;  // eta at round 0
  double momentum = 0.0;       // in [0, 1)
  // lr(r) = learning_rate * 0.5^(r / lr_half_rounds); 0 disables decay.
  long lr_half_rounds = 0;

  double lr_at(long round) const;
};

// Momentum buffers, masked like the weights they belong to.
struct SgdState {
  std::vector<std::vector<double>> vel_w;
  std::vector<std::vector<double>> vel_b;
  bool empty() const { return vel_w.empty(); }
};

struct ForwardCache {
  std::vector<DenseMatrix> inputs;  // input to each layer, in layer order
  DenseMatrix probs;                // softmax output
  std::vector<int> labels;
};

struct ForwardResult {
  double loss = 0.0;
  ForwardCache cache;
};

class Model {
 public:
  Model(TensorShape input, std::vector<LayerSpec> layers);

  struct ParamSlot {
    int layer_index = 0;  // into layers()
    std::size_t weight_count = 0;
    std::size_t bias_count = 0;
    int fan_in = 0;
    int fan_out = 0;
    std::size_t flat_offset = 0;  // into the global prunable coordinate space
  };

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<ParamSlot>& param_slots() const { return slots_; }
  const TensorShape& input_shape() const { return input_; }
  std::size_t prunable_capacity() const { return prunable_capacity_; }
  int num_classes() const { return num_classes_; }

  // Glorot-uniform weights, zero biases, all-ones masks. The stream consumes
  // layers in order, so replaying a seed reproduces the init bitwise.
  MaskedParams init_params(std::uint64_t seed) const;

  ForwardResult forward(const MaskedParams& params, const Batch& batch) const;
  GradientSample backward(const MaskedParams& params,
                          const ForwardCache& cache) const;

  double loss(const MaskedParams& params, const Batch& batch) const;
  // argmax predictions; ties to the lowest class index.
  std::vector<int> predict(const MaskedParams& params,
                           const DenseMatrix& x) const;

 private:
  TensorShape input_;
  std::vector<LayerSpec> layers_;
  std::vector<TensorShape> shapes_;  // output shape of each layer
  std::vector<ParamSlot> slots_;
  std::size_t prunable_capacity_ = 0;
  int num_classes_ = 0;
};

// One masked SGD step: w <- w - lr(round) * (g (.) m), biases unmasked.
// With momentum, v <- (momentum * v + g) (.) m and the step uses v.
MaskedParams sgd_step(const MaskedParams& params, const GradientSample& grad,
                      const SgdConfig& cfg, long round = 0,
                      SgdState* state = nullptr);

// Re-mask: newly pruned coordinates drop to zero (and their momentum with
// them); newly unmasked ones start at zero; everything else is preserved.
MaskedParams apply_mask(const MaskedParams& params, const MaskSet& new_masks,
                        SgdState* state = nullptr);

// sum of g_j^2 over coordinates with m_j == 1
double masked_sqnorm(std::span<const double> g,
                     std::span<const std::uint8_t> m);

// Same over a whole gradient sample; bias coordinates always count.
double masked_grad_sqnorm(const GradientSample& grad,
                          const MaskedParams& params);

}  // namespace prunefl
