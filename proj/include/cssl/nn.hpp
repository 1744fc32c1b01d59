#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "cssl/matrix.hpp"
#include "cssl/rng.hpp"

namespace cssl {

enum class Activation { Identity, ReLU, Softmax };

struct Layer {
  Matrix weight;             // in_dim x out_dim
  std::vector<double> bias;  // out_dim
  Activation act = Activation::Identity;

  std::size_t in_dim() const { return weight.rows; }
  std::size_t out_dim() const { return weight.cols; }
};

// Intermediates of one forward pass, kept so backward can be replayed.
// A block can be run several times per step (e.g. a head shared by two
// branches); each pass gets its own trace.
struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> layer_out;  // post-activation, one per layer
  bool valid = false;
};

// Gradient accumulators mirroring a block's parameters.
struct GradTape {
  std::vector<Matrix> dweight;
  std::vector<std::vector<double>> dbias;

  void zero() {
    for (auto& w : dweight) std::fill(w.data.begin(), w.data.end(), 0.0);
    for (auto& b : dbias) std::fill(b.begin(), b.end(), 0.0);
  }

  void add(const GradTape& o) {
    require_shape(dweight.size() == o.dweight.size(), "GradTape::add: layer count");
    for (std::size_t l = 0; l < dweight.size(); ++l) {
      require_shape(dweight[l].same_shape(o.dweight[l]), "GradTape::add: weight shape");
      for (std::size_t i = 0; i < dweight[l].data.size(); ++i)
        dweight[l].data[i] += o.dweight[l].data[i];
      for (std::size_t i = 0; i < dbias[l].size(); ++i) dbias[l][i] += o.dbias[l][i];
    }
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& w : dweight)
      for (double v : w.data) m = std::max(m, std::abs(v));
    for (const auto& b : dbias)
      for (double v : b) m = std::max(m, std::abs(v));
    return m;
  }
};

struct ParamBlock {
  std::vector<Layer> layers;
  ForwardTrace last_trace;  // filled by the caching forward() overload

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
    return n;
  }

  void validate() const {
    require_shape(!layers.empty(), "ParamBlock: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require_shape(layers[l].bias.size() == layers[l].out_dim(),
                    "ParamBlock: bias length != out_dim");
      if (l + 1 < layers.size()) {
        require_shape(layers[l].out_dim() == layers[l + 1].in_dim(),
                      "ParamBlock: layer dimensions do not chain");
        require_shape(layers[l].act != Activation::Softmax,
                      "ParamBlock: softmax allowed only on the final layer");
      }
    }
  }

  GradTape make_tape() const {
    GradTape t;
    for (const auto& l : layers) {
      t.dweight.emplace_back(l.weight.rows, l.weight.cols);
      t.dbias.emplace_back(l.bias.size(), 0.0);
    }
    return t;
  }
};

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
inline Layer make_layer(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  Layer l;
  l.weight = Matrix(in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : l.weight.data) v = rng.uniform(-bound, bound);
  l.bias.assign(out, 0.0);
  l.act = act;
  return l;
}

inline ParamBlock make_block(const std::vector<std::size_t>& dims,
                             const std::vector<Activation>& acts, Rng& rng) {
  require_shape(dims.size() >= 2 && acts.size() == dims.size() - 1,
                "make_block: need dims.size()-1 activations");
  ParamBlock b;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    b.layers.push_back(make_layer(dims[l], dims[l + 1], acts[l], rng));
  b.validate();
  return b;
}

inline void softmax_rows(Matrix& z) {
  for (std::size_t i = 0; i < z.rows; ++i) {
    double* r = z.row(i);
    double mx = r[0];
    for (std::size_t j = 1; j < z.cols; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < z.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (std::size_t j = 0; j < z.cols; ++j) r[j] /= sum;
  }
}

inline Matrix forward(const ParamBlock& block, const Matrix& x, ForwardTrace* trace) {
  require_shape(x.cols == block.in_dim(),
                "forward: input has " + std::to_string(x.cols) +
                    " columns, block expects " + std::to_string(block.in_dim()));
  if (trace) {
    trace->input = x;
    trace->layer_out.clear();
    trace->valid = true;
  }
  Matrix cur = x;
  for (const auto& layer : block.layers) {
    Matrix z = matmul(cur, layer.weight);
    add_row_vector(z, layer.bias);
    switch (layer.act) {
      case Activation::Identity:
        break;
      case Activation::ReLU:
        for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
        break;
      case Activation::Softmax:
        softmax_rows(z);
        break;
    }
    if (trace) trace->layer_out.push_back(z);
    cur = std::move(z);
  }
  if (!all_finite(cur)) throw StateError("forward: non-finite activations");
  return cur;
}

// Caching overload; pairs with the trace-free backward below.
inline Matrix forward(ParamBlock& block, const Matrix& x) {
  return forward(block, x, &block.last_trace);
}

// Gradients of the scalar whose d/d(output) is `upstream`, w.r.t. every
// parameter of the block. Optionally also d/d(input) for chaining into an
// upstream block. Parameters are not touched.
inline GradTape backward(const ParamBlock& block, const ForwardTrace& trace,
                         const Matrix& upstream, Matrix* input_grad = nullptr) {
  if (!trace.valid || trace.layer_out.size() != block.layers.size())
    throw StateError("backward: no matching forward trace");
  require_shape(upstream.rows == trace.layer_out.back().rows &&
                    upstream.cols == block.out_dim(),
                "backward: upstream gradient shape mismatch");

  GradTape tape = block.make_tape();
  Matrix g = upstream;  // d loss / d (post-activation of current layer)
  for (std::size_t li = block.layers.size(); li-- > 0;) {
    const Layer& layer = block.layers[li];
    const Matrix& out = trace.layer_out[li];

    // activation backward: g becomes d loss / d (pre-activation)
    switch (layer.act) {
      case Activation::Identity:
        break;
      case Activation::ReLU:
        for (std::size_t i = 0; i < g.data.size(); ++i)
          if (out.data[i] <= 0.0) g.data[i] = 0.0;
        break;
      case Activation::Softmax:
        for (std::size_t i = 0; i < g.rows; ++i) {
          const double* p = out.row(i);
          double* gi = g.row(i);
          double dot = 0.0;
          for (std::size_t j = 0; j < g.cols; ++j) dot += gi[j] * p[j];
          for (std::size_t j = 0; j < g.cols; ++j) gi[j] = p[j] * (gi[j] - dot);
        }
        break;
    }

    const Matrix& in = li == 0 ? trace.input : trace.layer_out[li - 1];
    tape.dweight[li] = matmul_at_b(in, g);
    tape.dbias[li] = column_sums(g);
    if (li > 0 || input_grad) g = matmul_a_bt(g, layer.weight);
    if (li == 0 && input_grad) *input_grad = std::move(g);
    if (li == 0) break;
  }
  for (const auto& w : tape.dweight)
    if (!all_finite(w)) throw StateError("backward: non-finite gradients");
  return tape;
}

inline GradTape backward(ParamBlock& block, const Matrix& upstream,
                         Matrix* input_grad = nullptr) {
  GradTape t = backward(block, block.last_trace, upstream, input_grad);
  block.last_trace.valid = false;
  return t;
}

// Central-difference gradient of an arbitrary scalar function of the
// parameters. Used as the independent oracle for backward().
inline GradTape finite_diff_grad(
    const std::function<double(const ParamBlock&)>& loss_fn, const ParamBlock& block,
    double h) {
  if (!(h > 0.0)) throw StateError("finite_diff_grad: h must be positive");
  ParamBlock probe = block;
  probe.last_trace = ForwardTrace{};
  GradTape tape = probe.make_tape();
  for (std::size_t li = 0; li < probe.layers.size(); ++li) {
    auto& layer = probe.layers[li];
    for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
      const double saved = layer.weight.data[i];
      layer.weight.data[i] = saved + h;
      const double fp = loss_fn(probe);
      layer.weight.data[i] = saved - h;
      const double fm = loss_fn(probe);
      layer.weight.data[i] = saved;
      tape.dweight[li].data[i] = (fp - fm) / (2.0 * h);
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      const double saved = layer.bias[i];
      layer.bias[i] = saved + h;
      const double fp = loss_fn(probe);
      layer.bias[i] = saved - h;
      const double fm = loss_fn(probe);
      layer.bias[i] = saved;
      tape.dbias[li][i] = (fp - fm) / (2.0 * h);
    }
  }
  return tape;
}

}  // namespace cssl
