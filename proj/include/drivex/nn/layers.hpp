#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "drivex/nn/autograd.hpp"

namespace drivex::nn {

/// Named, ordered collection of trainable leaves.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Matrix<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Var<T>(std::move(init), true));
    return entries_.back().second;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& [name, v] : entries_) n += static_cast<size_t>(v.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
  }

  /// Toggles gradient tracking for every parameter whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, v] : entries_) {
      if (name.rfind(prefix, 0) == 0) v.set_requires_grad(trainable);
    }
  }

  /// Copies values from a store with the same layout.
  void copy_values_from(const ParamStore& other) {
    if (other.entries_.size() != entries_.size()) throw std::invalid_argument("layout mismatch");
    for (size_t i = 0; i < entries_.size(); ++i) {
      entries_[i].second.mutable_value() = other.entries_[i].second.value();
    }
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, size_t> index_;
};

template <typename T>
Matrix<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
  return m;
}

/// y = x W + b, with W and b uniform in +-1/sqrt(fan_in).
template <typename T>
struct Linear {
  Var<T> weight;
  Var<T> bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = store.add(name + ".weight", uniform_matrix<T>(in, out, bound, rng));
    bias = store.add(name + ".bias", uniform_matrix<T>(1, out, bound, rng));
  }

  Var<T> operator()(const Var<T>& x) const { return add_row(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma;
  Var<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, int dim) {
    gamma = store.add(name + ".gamma", Matrix<T>::Ones(1, dim));
    beta = store.add(name + ".beta", Matrix<T>::Zero(1, dim));
  }

  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> query, key, value, output;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, int dim, int num_heads,
                     std::mt19937_64& rng)
      : query(store, name + ".q", dim, dim, rng),
        key(store, name + ".k", dim, dim, rng),
        value(store, name + ".v", dim, dim, rng),
        output(store, name + ".o", dim, dim, rng),
        heads(num_heads) {}

  Var<T> operator()(const Var<T>& x_q, const Var<T>& x_kv, KeyMask mask = {}, bool causal = false,
                    std::vector<Matrix<T>>* probs = nullptr) const {
    return output(attention(query(x_q), key(x_kv), value(x_kv), heads, mask, causal, probs));
  }
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, int dim, int hidden,
              std::mt19937_64& rng)
      : up(store, name + ".up", dim, hidden, rng), down(store, name + ".down", hidden, dim, rng) {}

  Var<T> operator()(const Var<T>& x) const { return down(gelu(up(x))); }
};

/// Pre-norm self-attention block.
template <typename T>
struct EncoderBlock {
  LayerNorm<T> ln_attn, ln_ffn;
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;

  EncoderBlock() = default;
  EncoderBlock(ParamStore<T>& store, const std::string& name, int dim, int heads, int hidden,
               std::mt19937_64& rng)
      : ln_attn(store, name + ".ln_attn", dim),
        ln_ffn(store, name + ".ln_ffn", dim),
        attn(store, name + ".attn", dim, heads, rng),
        ffn(store, name + ".ffn", dim, hidden, rng) {}

  Var<T> operator()(const Var<T>& x, KeyMask mask = {}, bool causal = false,
                    std::vector<Matrix<T>>* probs = nullptr) const {
    const Var<T> h = ln_attn(x);
    const Var<T> y = add(x, attn(h, h, mask, causal, probs));
    return add(y, ffn(ln_ffn(y)));
  }
};

}  // namespace drivex::nn
