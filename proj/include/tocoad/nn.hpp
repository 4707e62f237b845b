#pragma once

#include "tocoad/autograd.hpp"
#include "tocoad/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tocoad::nn {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

// Ordered view over a model's parameters. Copies share the underlying nodes.
class ParameterSet {
 public:
  void add(std::string name, ag::Var var) { items_.push_back({std::move(name), std::move(var)}); }
  void append(const ParameterSet& other) { items_.insert(items_.end(), other.items_.begin(), other.items_.end()); }

  const std::vector<NamedParameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  Index scalar_count() const;

  void set_trainable(bool trainable) const;
  void zero_grad() const;
  // Overwrites values (not nodes) from a set with identical names and shapes.
  void copy_values_from(const ParameterSet& other) const;
  // Bit-level checksum over all values, for freeze contracts.
  std::uint64_t checksum() const;

  // Opaque binary weights file; names and shapes must match on load.
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path) const;

 private:
  std::vector<NamedParameter> items_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Index in, Index out, int kernel, int stride, int padding, Rng& rng);
  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight_, bias_, stride_, padding_); }
  void collect(ParameterSet& set, const std::string& prefix) const;
  Index out_channels() const { return weight_->value.shape().n; }

 private:
  ag::Var weight_, bias_;
  int stride_ = 1, padding_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out, Rng& rng, bool with_bias = true);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }
  void collect(ParameterSet& set, const std::string& prefix) const;

 private:
  ag::Var weight_, bias_;
};

class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(Index features, bool affine);
  ag::Var operator()(const ag::Var& x) const { return ag::batch_norm(x, gamma_, beta_); }
  void collect(ParameterSet& set, const std::string& prefix) const;

 private:
  ag::Var gamma_, beta_;
};

// Adaptive-moment optimizer over the trainable members of a parameter set.
class Adam {
 public:
  Adam(ParameterSet params, Scalar lr, Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-8,
       Scalar weight_decay = 0);
  void step();
  void set_lr(Scalar lr) { lr_ = lr; }
  Scalar lr() const { return lr_; }

 private:
  ParameterSet params_;
  Scalar lr_, beta1_, beta2_, eps_, weight_decay_;
  long steps_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;
};

// Momentum SGD with L2 weight decay folded into the gradient.
class Sgd {
 public:
  Sgd(ParameterSet params, Scalar lr, Scalar momentum = 0.9, Scalar weight_decay = 1e-4);
  void step();
  void set_lr(Scalar lr) { lr_ = lr; }
  Scalar lr() const { return lr_; }

 private:
  ParameterSet params_;
  Scalar lr_, momentum_, weight_decay_;
  std::vector<Eigen::ArrayXd> velocity_;
};

// lr(epoch) = base * factor^(number of milestones <= epoch)
struct MultiStepSchedule {
  Scalar base = 1e-4;
  std::vector<int> milestones{80, 90};
  Scalar factor = 0.2;
  Scalar at(int epoch) const;
};

// Cosine annealing from base down to floor over total_epochs.
struct CosineSchedule {
  Scalar base = 0.05;
  int total_epochs = 100;
  Scalar floor = 0;
  Scalar at(int epoch) const;
};

}  // namespace tocoad::nn
