#include "coltran/params.h"

#include "coltran/errors.h"

namespace coltran {

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, value});
  return value;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace coltran
