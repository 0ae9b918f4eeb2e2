#pragma once

#include "ipd/diffcore/params.hpp"

namespace ipd::diffcore {

// Pre-LN causal self-attention stack over an already-embedded token matrix
// (embed_dim x T). Token/position embedding and output heads belong to the
// caller. Output at position t depends only on tokens at positions <= t.
struct CausalTransformer {
  int n_layers{0};
  int n_heads{0};
  int embed_dim{0};
  int max_context{0};  // maximum T accepted by forward
  double dropout_rate{0.0};

  ParameterSet init_params(uint64_t seed) const;

  Var forward(Tape& tape, const ParamBinding& p, Var x, Rng* dropout_rng = nullptr) const;
  Mat forward_plain(const ParameterSet& p, const Mat& x) const;
};

}  // namespace ipd::diffcore
