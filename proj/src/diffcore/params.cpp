#include "ipd/diffcore/params.hpp"

#include <stdexcept>

namespace ipd::diffcore {

int ParameterSet::add(const std::string& name, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("parameter block must be non-empty");
  if (find(name) >= 0) throw std::invalid_argument("duplicate parameter name: " + name);
  Entry e;
  e.name = name;
  e.rows = rows;
  e.cols = cols;
  e.offset = total_size();
  entries_.push_back(e);
  values_.conservativeResize(e.offset + rows * cols);
  values_.tail(rows * cols).setZero();
  return count() - 1;
}

int ParameterSet::find(const std::string& name) const {
  for (int i = 0; i < count(); ++i)
    if (entries_[static_cast<size_t>(i)].name == name) return i;
  return -1;
}

Eigen::Map<Mat> ParameterSet::view(int i) {
  const Entry& e = entries_[static_cast<size_t>(i)];
  return Eigen::Map<Mat>(values_.data() + e.offset, e.rows, e.cols);
}

Eigen::Map<const Mat> ParameterSet::view(int i) const {
  const Entry& e = entries_[static_cast<size_t>(i)];
  return Eigen::Map<const Mat>(values_.data() + e.offset, e.rows, e.cols);
}

Eigen::Map<Mat> ParameterSet::view(const std::string& name) {
  const int i = find(name);
  if (i < 0) throw std::invalid_argument("no parameter named " + name);
  return view(i);
}

Eigen::Map<const Mat> ParameterSet::view(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw std::invalid_argument("no parameter named " + name);
  return view(i);
}

ParamBinding::ParamBinding(Tape& tape, const ParameterSet& ps, bool trainable)
    : tape_(&tape), ps_(&ps) {
  vars_.reserve(static_cast<size_t>(ps.count()));
  for (int i = 0; i < ps.count(); ++i) {
    Mat v = ps.view(i);
    vars_.push_back(trainable ? tape.param(std::move(v)) : tape.input(std::move(v)));
  }
}

Var ParamBinding::at(const std::string& name) const {
  const int i = ps_->find(name);
  if (i < 0) throw std::invalid_argument("no parameter named " + name);
  return vars_[static_cast<size_t>(i)];
}

Vec ParamBinding::collect_grad() const {
  Vec g = Vec::Zero(ps_->total_size());
  for (int i = 0; i < ps_->count(); ++i) {
    const auto& e = ps_->entry(i);
    const Mat gm = tape_->grad(vars_[static_cast<size_t>(i)]);
    g.segment(e.offset, e.rows * e.cols) = Eigen::Map<const Vec>(gm.data(), gm.size());
  }
  return g;
}

}  // namespace ipd::diffcore
