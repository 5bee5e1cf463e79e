#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mostdsa/tensor.hpp"

namespace mostdsa {

// Named registry of learnable tensors with gradient accumulators. Names are
// dotted paths; iteration order is lexicographic and stable, which the
// checkpoint format and the optimizer rely on.
template <typename T>
class ParamStore {
public:
    struct Parameter {
        Tensor<T> value;
        Tensor<T> grad;
    };

    Tensor<T>& create(const std::string& name, Tensor<T> init) {
        if (entries_.count(name))
            throw ConfigError("parameter '" + name + "' already registered");
        Parameter p;
        p.value = std::move(init);
        p.grad = Tensor<T>(p.value.shape());
        auto [it, ok] = entries_.emplace(name, std::move(p));
        (void)ok;
        return it->second.value;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Parameter& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Parameter& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    void accumulate_grad(const std::string& name, const Tensor<T>& g) {
        Parameter& p = at(name);
        if (g.shape() != p.grad.shape())
            throw ConfigError("gradient shape " + g.shape().str() + " does not match parameter '" +
                              name + "' " + p.grad.shape().str());
        T* d = p.grad.data();
        const T* s = g.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
    }

    void zero_grad() {
        for (auto& [name, p] : entries_) {
            T* d = p.grad.data();
            for (std::int64_t i = 0; i < p.grad.numel(); ++i) d[i] = T(0);
        }
    }

    std::size_t size() const { return entries_.size(); }
    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& [name, p] : entries_) n += p.value.numel();
        return n;
    }

    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }
    void bump_step() { ++step_; }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, p] : entries_)
            out.create(name, p.value.template cast<U>());
        out.set_step(step_);
        return out;
    }

private:
    std::map<std::string, Parameter> entries_;
    std::int64_t step_ = 0;
};

}  // namespace mostdsa
