#pragma once

#include <cstddef>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "coltran/tensor.h"

namespace coltran {

template <typename T>
struct NamedParameter {
  std::string name;  // dot-separated path, unique per store
  Tensor<T> value;
};

/// Owns the learnable tensors of one model, in registration order.
template <typename T>
class ParamStore {
 public:
  /// Registers `value` as a leaf requiring grad; throws ContractError on a
  /// duplicate name.
  Tensor<T> add(const std::string& name, Tensor<T> value);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<NamedParameter<T>>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();

 private:
  std::vector<NamedParameter<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Seeded weight initializer.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Tensor<T> normal(Shape shape, double stddev) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng_));
    return t;
  }

  /// N(0, 1/fan_in) for a [fan_in, fan_out] projection.
  template <typename T>
  Tensor<T> dense(std::size_t fan_in, std::size_t fan_out) {
    return normal<T>(Shape{fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  }

 private:
  std::mt19937_64 rng_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace coltran
