#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedweight/signal_core.hpp"
#include "fedweight/synth.hpp"

namespace fedweight {

/// Dense row-major matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

struct Layer {
  std::string name;
  Matrix weight;  // out x in
  std::vector<double> bias;

  bool operator==(const Layer&) const = default;
};

/// Ordered layers of a per-frame perceptron. Hidden layers use tanh, the
/// last layer is affine with one output.
struct ModelParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols; }
  std::size_t parameter_count() const;
  bool operator==(const ModelParams&) const = default;
};

/// d loss / d parameter, laid out like ModelParams.
struct GradientSet {
  std::vector<Layer> layers;

  bool operator==(const GradientSet&) const = default;
};

struct OptimizerState {
  GradientSet m;
  GradientSet v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_params(const ModelParams& params, double lr = 1e-3);
};

/// Flattened per-frame feature vectors, one row per difference frame.
struct FrameFeatures {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t count() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

struct TrainingWindow {
  std::size_t dim = 0;
  std::vector<double> inputs;   // frames x dim
  std::vector<double> targets;  // one per frame

  std::size_t frames() const { return targets.size(); }
};

struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};

inline constexpr double kDifferenceEpsilon = 1e-7;
inline constexpr int kDefaultWindow = 20;
inline constexpr int kDefaultHidden = 16;

/// Glorot-uniform weights, zero biases: input -> hidden (tanh) -> 1.
ModelParams init_params(int input_dim, int hidden, std::uint64_t seed);

/// Same architecture with every entry zero.
ModelParams zero_params(int input_dim, int hidden);

GradientSet zeros_like(const ModelParams& params);

/// True when both layer lists have identical names and shapes.
bool congruent(std::span<const Layer> a, std::span<const Layer> b);

/// (I(t+1) - I(t)) / (I(t+1) + I(t) + eps) per pixel; when `standardize`
/// is set every value is divided by the standard deviation over the whole
/// sequence.
FrameFeatures make_difference_frames(const FrameSequence& frames, bool standardize = true);

/// Non-overlapping consecutive windows; a trailing partial window is dropped.
std::vector<TrainingWindow> make_windows(const FrameFeatures& features, const PpgTrace& label,
                                         int window = kDefaultWindow);

/// One prediction per frame of `inputs` (frames x input_dim, row-major).
std::vector<double> forward(const ModelParams& params, std::span<const double> inputs);

/// Mean squared error over the window and its gradient by backpropagation.
LossAndGrad loss_and_grad(const ModelParams& params, const TrainingWindow& window);

/// Bias-corrected Adam update applied in place.
void adam_step(ModelParams& params, const GradientSet& grads, OptimizerState& state);

}  // namespace fedweight
