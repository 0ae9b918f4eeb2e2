#pragma once

#include <vector>

#include "ipd/diffcore/params.hpp"

namespace ipd::diffcore {

// Fully connected network: per hidden layer Linear -> (LayerNorm) -> ReLU
// (-> Dropout at train time), then a final Linear. ReLU is the only
// activation in use.
struct DenseNetwork {
  int input_dim{0};
  int output_dim{0};
  std::vector<int> hidden_widths;
  bool uses_layernorm{false};
  double dropout_rate{0.0};

  // Uniform fan-in init; zero_final zeroes the output layer.
  ParameterSet init_params(uint64_t seed, bool zero_final = false) const;

  // Differentiable forward; dropout active iff dropout_rng != nullptr.
  Var forward(Tape& tape, const ParamBinding& p, Var x, Rng* dropout_rng = nullptr) const;

  // Inference path without a tape (dropout off). Deterministic in
  // (params, x).
  Mat forward_plain(const ParameterSet& p, const Mat& x) const;
};

}  // namespace ipd::diffcore
