#include "fedweight/model.hpp"

#include <cmath>

#include "fedweight/error.hpp"
#include "fedweight/rng.hpp"

namespace fedweight {

namespace {

void check_chain(const ModelParams& params) {
  if (params.layers.empty()) throw InvalidArgument("model has no layers");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Layer& layer = params.layers[l];
    if (static_cast<int>(layer.bias.size()) != layer.weight.rows ||
        layer.weight.data.size() != static_cast<std::size_t>(layer.weight.rows) * layer.weight.cols) {
      throw InvalidArgument("layer '" + layer.name + "' has inconsistent shape");
    }
    if (l > 0 && layer.weight.cols != params.layers[l - 1].weight.rows) {
      throw InvalidArgument("layer '" + layer.name + "' does not chain with its predecessor");
    }
  }
  if (params.layers.back().weight.rows != 1) throw InvalidArgument("model must have one output");
}

// out[f][r] = b[r] + sum_c W[r][c] * in[f][c], optionally passed through tanh.
std::vector<double> affine(const Layer& layer, std::span<const double> in, std::size_t frames,
                           bool activate) {
  const int rows = layer.weight.rows;
  const int cols = layer.weight.cols;
  std::vector<double> out(frames * static_cast<std::size_t>(rows));
  for (std::size_t f = 0; f < frames; ++f) {
    const double* x = in.data() + f * cols;
    for (int r = 0; r < rows; ++r) {
      const double* w = layer.weight.data.data() + static_cast<std::size_t>(r) * cols;
      double acc = 0.0;
      for (int c = 0; c < cols; ++c) acc += w[c] * x[c];
      acc += layer.bias[r];
      out[f * rows + r] = activate ? std::tanh(acc) : acc;
    }
  }
  return out;
}

Layer zero_layer_like(const Layer& layer) {
  return {layer.name, Matrix(layer.weight.rows, layer.weight.cols), std::vector<double>(layer.bias.size())};
}

}  // namespace

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weight.data.size() + l.bias.size();
  return n;
}

OptimizerState OptimizerState::for_params(const ModelParams& params, double lr) {
  OptimizerState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  s.lr = lr;
  return s;
}

ModelParams init_params(int input_dim, int hidden, std::uint64_t seed) {
  if (input_dim < 1 || hidden < 1) throw InvalidArgument("layer sizes must be >= 1");
  ModelParams p = zero_params(input_dim, hidden);
  Rng rng(seed);
  for (Layer& layer : p.layers) {
    const double limit = std::sqrt(6.0 / (layer.weight.rows + layer.weight.cols));
    for (double& w : layer.weight.data) w = rng.uniform(-limit, limit);
  }
  return p;
}

ModelParams zero_params(int input_dim, int hidden) {
  ModelParams p;
  p.layers.push_back({"hidden", Matrix(hidden, input_dim), std::vector<double>(hidden, 0.0)});
  p.layers.push_back({"output", Matrix(1, hidden), std::vector<double>(1, 0.0)});
  return p;
}

GradientSet zeros_like(const ModelParams& params) {
  GradientSet g;
  for (const Layer& l : params.layers) g.layers.push_back(zero_layer_like(l));
  return g;
}

bool congruent(std::span<const Layer> a, std::span<const Layer> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].weight.rows != b[i].weight.rows ||
        a[i].weight.cols != b[i].weight.cols || a[i].bias.size() != b[i].bias.size()) {
      return false;
    }
  }
  return true;
}

FrameFeatures make_difference_frames(const FrameSequence& frames, bool standardize) {
  if (frames.t < 2) throw InvalidArgument("need at least two frames");
  FrameFeatures out;
  out.dim = frames.pixels_per_frame();
  out.data.resize(static_cast<std::size_t>(frames.t - 1) * out.dim);
  for (int t = 0; t + 1 < frames.t; ++t) {
    const auto cur = frames.frame(t);
    const auto nxt = frames.frame(t + 1);
    double* dst = out.data.data() + static_cast<std::size_t>(t) * out.dim;
    for (std::size_t i = 0; i < out.dim; ++i) {
      const double a = cur[i];
      const double b = nxt[i];
      dst[i] = (b - a) / (b + a + kDifferenceEpsilon);
    }
  }
  if (standardize) {
    const double n = static_cast<double>(out.data.size());
    double mean = 0.0;
    for (double v : out.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : out.data) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    if (sd > 0.0) {
      for (double& v : out.data) v /= sd;
    }
  }
  return out;
}

std::vector<TrainingWindow> make_windows(const FrameFeatures& features, const PpgTrace& label,
                                         int window) {
  if (window < 1) throw InvalidArgument("window must be >= 1");
  if (features.count() != label.size()) {
    throw InvalidArgument("features and label differ in length");
  }
  const std::size_t w = static_cast<std::size_t>(window);
  std::vector<TrainingWindow> out;
  for (std::size_t start = 0; start + w <= features.count(); start += w) {
    TrainingWindow tw;
    tw.dim = features.dim;
    tw.inputs.assign(features.data.begin() + static_cast<std::ptrdiff_t>(start * features.dim),
                     features.data.begin() + static_cast<std::ptrdiff_t>((start + w) * features.dim));
    tw.targets.assign(label.samples().begin() + static_cast<std::ptrdiff_t>(start),
                      label.samples().begin() + static_cast<std::ptrdiff_t>(start + w));
    out.push_back(std::move(tw));
  }
  return out;
}

std::vector<double> forward(const ModelParams& params, std::span<const double> inputs) {
  check_chain(params);
  const auto dim = static_cast<std::size_t>(params.input_dim());
  if (inputs.size() % dim != 0) throw InvalidArgument("input size is not a multiple of input_dim");
  const std::size_t frames = inputs.size() / dim;
  std::vector<double> act(inputs.begin(), inputs.end());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    act = affine(params.layers[l], act, frames, l + 1 < params.layers.size());
  }
  return act;
}

LossAndGrad loss_and_grad(const ModelParams& params, const TrainingWindow& window) {
  check_chain(params);
  if (window.dim != static_cast<std::size_t>(params.input_dim()) ||
      window.inputs.size() != window.dim * window.frames() || window.frames() == 0) {
    throw InvalidArgument("window shape does not match model");
  }
  const std::size_t frames = window.frames();
  const std::size_t n_layers = params.layers.size();

  // acts[l] is the input to layer l; acts[n_layers] is the output.
  std::vector<std::vector<double>> acts(n_layers + 1);
  acts[0] = window.inputs;
  for (std::size_t l = 0; l < n_layers; ++l) {
    acts[l + 1] = affine(params.layers[l], acts[l], frames, l + 1 < n_layers);
  }

  LossAndGrad out;
  out.grads = zeros_like(params);
  std::vector<double> delta(frames);
  const double scale = 2.0 / static_cast<double>(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double err = acts[n_layers][f] - window.targets[f];
    out.loss += err * err;
    delta[f] = scale * err;
  }
  out.loss /= static_cast<double>(frames);
  if (!std::isfinite(out.loss)) throw TrainingOverflow();

  for (std::size_t l = n_layers; l-- > 0;) {
    const Layer& layer = params.layers[l];
    Layer& g = out.grads.layers[l];
    const int rows = layer.weight.rows;
    const int cols = layer.weight.cols;
    const std::vector<double>& in = acts[l];
    for (std::size_t f = 0; f < frames; ++f) {
      const double* x = in.data() + f * cols;
      for (int r = 0; r < rows; ++r) {
        const double d = delta[f * rows + r];
        if (d == 0.0) continue;
        g.bias[r] += d;
        double* gw = g.weight.data.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gw[c] += d * x[c];
      }
    }
    if (l == 0) break;
    // Propagate through W and the tanh of the previous layer.
    std::vector<double> prev(frames * static_cast<std::size_t>(cols), 0.0);
    for (std::size_t f = 0; f < frames; ++f) {
      for (int r = 0; r < rows; ++r) {
        const double d = delta[f * rows + r];
        const double* w = layer.weight.data.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) prev[f * cols + c] += w[c] * d;
      }
      for (int c = 0; c < cols; ++c) {
        const double a = in[f * cols + c];
        prev[f * cols + c] *= 1.0 - a * a;
      }
    }
    delta = std::move(prev);
  }

  for (const Layer& g : out.grads.layers) {
    for (double v : g.weight.data) {
      if (!std::isfinite(v)) throw TrainingOverflow();
    }
    for (double v : g.bias) {
      if (!std::isfinite(v)) throw TrainingOverflow();
    }
  }
  return out;
}

void adam_step(ModelParams& params, const GradientSet& grads, OptimizerState& state) {
  if (!congruent(params.layers, grads.layers) || !congruent(params.layers, state.m.layers) ||
      !congruent(params.layers, state.v.layers)) {
    throw InvalidArgument("adam_step: shapes are not congruent");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weight.data, grads.layers[l].weight.data, state.m.layers[l].weight.data,
           state.v.layers[l].weight.data);
    update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias,
           state.v.layers[l].bias);
  }
}

}  // namespace fedweight
