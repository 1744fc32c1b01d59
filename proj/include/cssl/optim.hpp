#pragma once

#include <cmath>
#include <cstddef>

#include "cssl/nn.hpp"

namespace cssl {

inline void check_tape_shapes(const ParamBlock& block, const GradTape& tape) {
  require_shape(tape.dweight.size() == block.layers.size(),
                "optimizer: tape layer count mismatch");
  for (std::size_t l = 0; l < block.layers.size(); ++l) {
    require_shape(tape.dweight[l].same_shape(block.layers[l].weight),
                  "optimizer: weight gradient shape mismatch");
    require_shape(tape.dbias[l].size() == block.layers[l].bias.size(),
                  "optimizer: bias gradient shape mismatch");
  }
}

inline void sgd_step(ParamBlock& block, const GradTape& tape, double lr,
                     double weight_decay = 0.0) {
  if (!(lr > 0.0)) throw StateError("sgd_step: lr must be positive");
  check_tape_shapes(block, tape);
  for (std::size_t l = 0; l < block.layers.size(); ++l) {
    auto& layer = block.layers[l];
    for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
      layer.weight.data[i] -= lr * tape.dweight[l].data[i];
      layer.weight.data[i] -= lr * weight_decay * layer.weight.data[i];
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      layer.bias[i] -= lr * tape.dbias[l][i];
  }
}

// Adam with bias correction and decoupled weight decay (decay multiplies
// the weights directly, it never enters the moment estimates; biases are
// not decayed).
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  GradTape m;  // first moment
  GradTape v;  // second moment
  long t = 0;

  void step(ParamBlock& block, const GradTape& tape) {
    if (!(lr > 0.0)) throw StateError("Adam: lr must be positive");
    check_tape_shapes(block, tape);
    if (t == 0) {
      m = block.make_tape();
      v = block.make_tape();
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t l = 0; l < block.layers.size(); ++l) {
      auto& layer = block.layers[l];
      auto update = [&](double& param, double& mi, double& vi, double g) {
        mi = beta1 * mi + (1.0 - beta1) * g;
        vi = beta2 * vi + (1.0 - beta2) * g * g;
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        param -= lr * mhat / (std::sqrt(vhat) + eps);
      };
      for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
        update(layer.weight.data[i], m.dweight[l].data[i], v.dweight[l].data[i],
               tape.dweight[l].data[i]);
        layer.weight.data[i] -= lr * weight_decay * layer.weight.data[i];
      }
      for (std::size_t i = 0; i < layer.bias.size(); ++i)
        update(layer.bias[i], m.dbias[l][i], v.dbias[l][i], tape.dbias[l][i]);
    }
  }
};

}  // namespace cssl
