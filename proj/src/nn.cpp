#include "tocoad/nn.hpp"

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace tocoad {

std::string to_hex(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::string Fnv1a::hex() const { return to_hex(state_); }

}  // namespace tocoad

namespace tocoad::nn {

namespace {

Tensor he_normal(Shape shape, Index fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

struct StoredParameter {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> values;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(name, shape, values);
  }
};

}  // namespace

Index ParameterSet::scalar_count() const {
  Index total = 0;
  for (const auto& p : items_) total += p.var->value.size();
  return total;
}

void ParameterSet::set_trainable(bool trainable) const {
  for (const auto& p : items_) {
    p.var->requires_grad = trainable;
    if (!trainable) p.var->grad = Tensor();
  }
}

void ParameterSet::zero_grad() const {
  for (const auto& p : items_) p.var->grad = Tensor();
}

void ParameterSet::copy_values_from(const ParameterSet& other) const {
  if (other.items_.size() != items_.size()) throw StateError("parameter sets differ in length");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& dst = items_[i];
    const auto& src = other.items_[i];
    if (dst.name != src.name || !(dst.var->value.shape() == src.var->value.shape()))
      throw StateError("parameter mismatch at '" + dst.name + "'");
    dst.var->value.data() = src.var->value.data();
  }
}

std::uint64_t ParameterSet::checksum() const {
  Fnv1a h;
  for (const auto& p : items_) {
    h.update(p.name);
    h.update(p.var->value.data().data(), sizeof(Scalar) * static_cast<std::size_t>(p.var->value.size()));
  }
  return h.digest();
}

void ParameterSet::save(const std::filesystem::path& path) const {
  std::vector<StoredParameter> stored;
  stored.reserve(items_.size());
  for (const auto& p : items_) {
    const Shape s = p.var->value.shape();
    const auto& d = p.var->value.data();
    stored.push_back({p.name, {s.n, s.c, s.h, s.w}, std::vector<double>(d.data(), d.data() + d.size())});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write checkpoint " + path.string());
  cereal::PortableBinaryOutputArchive ar(out);
  ar(stored);
}

void ParameterSet::load(const std::filesystem::path& path) const {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot read checkpoint " + path.string());
  std::vector<StoredParameter> stored;
  try {
    cereal::PortableBinaryInputArchive ar(in);
    ar(stored);
  } catch (const cereal::Exception& e) {
    throw StateError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (stored.size() != items_.size())
    throw StateError("checkpoint " + path.string() + " holds " + std::to_string(stored.size()) + " tensors, model has " +
                     std::to_string(items_.size()));
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& p = items_[i];
    const auto& s = stored[i];
    const Shape shape = p.var->value.shape();
    if (s.name != p.name || s.shape != std::vector<std::int64_t>{shape.n, shape.c, shape.h, shape.w})
      throw StateError("checkpoint tensor '" + s.name + "' does not match model tensor '" + p.name + "'");
    p.var->value.data() = Eigen::Map<const Eigen::ArrayXd>(s.values.data(), static_cast<Index>(s.values.size()));
  }
}

Conv2d::Conv2d(Index in, Index out, int kernel, int stride, int padding, Rng& rng)
    : weight_(ag::parameter(he_normal(Shape{out, in, kernel, kernel}, in * kernel * kernel, rng))),
      bias_(ag::parameter(Tensor(Shape{1, out, 1, 1}))),
      stride_(stride),
      padding_(padding) {}

void Conv2d::collect(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".weight", weight_);
  set.add(prefix + ".bias", bias_);
}

Linear::Linear(Index in, Index out, Rng& rng, bool with_bias)
    : weight_(ag::parameter(he_normal(Shape{out, in, 1, 1}, in, rng))) {
  if (with_bias) bias_ = ag::parameter(Tensor(Shape{1, out, 1, 1}));
}

void Linear::collect(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".weight", weight_);
  if (bias_) set.add(prefix + ".bias", bias_);
}

BatchNorm1d::BatchNorm1d(Index features, bool affine) {
  if (affine) {
    gamma_ = ag::parameter(Tensor(Shape{1, features, 1, 1}, 1.0));
    beta_ = ag::parameter(Tensor(Shape{1, features, 1, 1}));
  }
}

void BatchNorm1d::collect(ParameterSet& set, const std::string& prefix) const {
  if (gamma_) {
    set.add(prefix + ".gamma", gamma_);
    set.add(prefix + ".beta", beta_);
  }
}

Adam::Adam(ParameterSet params, Scalar lr, Scalar beta1, Scalar beta2, Scalar eps, Scalar weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : params_.items()) {
    m_.push_back(Eigen::ArrayXd::Zero(p.var->value.size()));
    v_.push_back(Eigen::ArrayXd::Zero(p.var->value.size()));
  }
}

void Adam::step() {
  ++steps_;
  const Scalar c1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(steps_));
  const Scalar c2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(steps_));
  for (std::size_t i = 0; i < params_.items().size(); ++i) {
    const auto& var = params_.items()[i].var;
    if (!var->requires_grad || var->grad.empty()) continue;
    Eigen::ArrayXd g = var->grad.data();
    if (weight_decay_ != 0) g += weight_decay_ * var->value.data();
    m_[i] = beta1_ * m_[i] + (1 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1 - beta2_) * g.square();
    var->value.data() -= lr_ * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
  }
}

Sgd::Sgd(ParameterSet params, Scalar lr, Scalar momentum, Scalar weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_.items()) velocity_.push_back(Eigen::ArrayXd::Zero(p.var->value.size()));
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.items().size(); ++i) {
    const auto& var = params_.items()[i].var;
    if (!var->requires_grad || var->grad.empty()) continue;
    Eigen::ArrayXd g = var->grad.data() + weight_decay_ * var->value.data();
    velocity_[i] = momentum_ * velocity_[i] + g;
    var->value.data() -= lr_ * velocity_[i];
  }
}

Scalar MultiStepSchedule::at(int epoch) const {
  Scalar lr = base;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

Scalar CosineSchedule::at(int epoch) const {
  if (total_epochs <= 0) return base;
  const Scalar t = static_cast<Scalar>(std::min(epoch, total_epochs)) / static_cast<Scalar>(total_epochs);
  return floor + 0.5 * (base - floor) * (1 + std::cos(std::numbers::pi * t));
}

}  // namespace tocoad::nn
