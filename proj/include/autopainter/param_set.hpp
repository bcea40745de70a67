#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/errors.hpp"
#include "autopainter/tensor.hpp"

namespace autopainter {

/// 64-bit FNV-1a, hex-formatted. Used to fingerprint architecture configs.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const nlohmann::json& config) { return fnv1a_hex(config.dump()); }

/// Ordered name -> tensor collection plus the architecture config it was built for.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(nlohmann::json config) : config_(std::move(config)) {}

  void add(const std::string& name, Tensor<T> tensor) {
    if (index_.count(name)) throw ParameterError("duplicate parameter name " + name);
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(tensor));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor<T>& operator[](const std::string& name) const { return tensors_[lookup(name)]; }
  Tensor<T>& operator[](const std::string& name) { return tensors_[lookup(name)]; }

  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }
  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return tensors_.size(); }

  const nlohmann::json& config() const { return config_; }
  std::string config_hash() const { return autopainter::config_hash(config_); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors_)
      if (!t.all_finite()) return false;
    return true;
  }

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const {
    ParamSet z(config_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) z.add(names_[i], Tensor<T>(tensors_[i].shape()));
    return z;
  }

  /// Accumulates `scale * grad` into the entry `name`.
  void accumulate(const std::string& name, const Tensor<T>& grad, T scale = T(1)) {
    (*this)[name].add_scaled(grad, scale);
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out(config_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_ && a.config_ == b.config_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter " + name);
    return it->second;
  }

  nlohmann::json config_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Fills a tensor from N(0, stddev^2).
template <typename T>
Tensor<T> gaussian_tensor(const Shape& shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace autopainter
