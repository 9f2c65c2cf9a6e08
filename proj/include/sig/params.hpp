#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sig/autodiff.hpp"
#include "sig/tensor.hpp"

namespace sig {

// Named learnable tensors, each with a same-shape gradient accumulator.
// Insertion order is preserved so serialisation is deterministic.
class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor value) {
        if (index_.contains(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
        index_.emplace(name, names_.size());
        names_.push_back(name);
        grads_.emplace_back(value.shape(), 0.0);
        values_.push_back(std::move(value));
        return values_.back();
    }

    bool contains(const std::string& name) const { return index_.contains(name); }
    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    Tensor& value(const std::string& name) { return values_[at(name)]; }
    const Tensor& value(const std::string& name) const { return values_[at(name)]; }
    Tensor& grad(const std::string& name) { return grads_[at(name)]; }
    const Tensor& grad(const std::string& name) const { return grads_[at(name)]; }

    Tensor& value(std::size_t i) { return values_[i]; }
    const Tensor& value(std::size_t i) const { return values_[i]; }
    Tensor& grad(std::size_t i) { return grads_[i]; }
    const Tensor& grad(std::size_t i) const { return grads_[i]; }

    // Binds a parameter as a tape leaf; gradients flow into grad(name).
    ad::Var bind(ad::Tape& tape, const std::string& name) {
        const std::size_t i = at(name);
        return tape.parameter(values_[i], grads_[i]);
    }

    void zero_grad() {
        for (Tensor& g : grads_) g.fill(0.0);
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const Tensor& v : values_) n += v.size();
        return n;
    }

    bool values_equal(const ParameterSet& o) const { return names_ == o.names_ && values_ == o.values_; }

private:
    std::size_t at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Resolves parameter names to tape leaves, once per tape. In inference mode
// values enter as constants so no backward closures are recorded.
class Binder {
public:
    Binder(ad::Tape& tape, ParameterSet& params, bool trainable)
        : tape_(tape), params_(params), trainable_(trainable) {}

    ad::Var operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        ad::Var v = trainable_ ? params_.bind(tape_, name) : tape_.constant(params_.value(name));
        cache_.emplace(name, v);
        return v;
    }

    ad::Tape& tape() noexcept { return tape_; }
    bool trainable() const noexcept { return trainable_; }

private:
    ad::Tape& tape_;
    ParameterSet& params_;
    bool trainable_;
    std::unordered_map<std::string, ad::Var> cache_;
};

// Glorot-uniform initialisation for a fan_in x fan_out weight.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t = Tensor::matrix(fan_in, fan_out);
    for (double& x : t.values()) x = dist(rng);
    return t;
}

}  // namespace sig
