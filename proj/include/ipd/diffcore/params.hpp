#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "ipd/diffcore/tape.hpp"

namespace ipd::diffcore {

// Flat parameter storage with named, shaped views. The flat layout is what
// the optimizer, soft updates, and checkpoints operate on.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    int rows{0};
    int cols{0};
    int offset{0};
  };

  // Registers a block and returns its entry index. Values start at zero.
  int add(const std::string& name, int rows, int cols);

  int count() const { return static_cast<int>(entries_.size()); }
  int total_size() const { return static_cast<int>(values_.size()); }
  const Entry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  int find(const std::string& name) const;  // -1 if absent

  Eigen::Map<Mat> view(int i);
  Eigen::Map<const Mat> view(int i) const;
  Eigen::Map<Mat> view(const std::string& name);
  Eigen::Map<const Mat> view(const std::string& name) const;

  Vec& values() { return values_; }
  const Vec& values() const { return values_; }

  uint64_t rng_seed() const { return rng_seed_; }
  void set_rng_seed(uint64_t s) { rng_seed_ = s; }

  bool all_finite() const { return values_.allFinite(); }

 private:
  std::vector<Entry> entries_;
  Vec values_{Vec::Zero(0)};
  uint64_t rng_seed_{0};
};

// Copies every entry of a ParameterSet onto a tape, as differentiable leaves
// (trainable) or constants (frozen). collect_grad() assembles the flat
// gradient in entry order after Tape::backward.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParameterSet& ps, bool trainable = true);

  Var operator[](int i) const { return vars_[static_cast<size_t>(i)]; }
  Var at(const std::string& name) const;

  Vec collect_grad() const;
  const ParameterSet& params() const { return *ps_; }

 private:
  Tape* tape_;
  const ParameterSet* ps_;
  std::vector<Var> vars_;
};

}  // namespace ipd::diffcore
