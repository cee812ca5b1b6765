#pragma once

// Named parameter store with Adam state, plus the cosine decay schedule the
// training loops share.

#include "sema/tensor.hpp"

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace sema {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class Real>
class ParamStore {
public:
    struct Entry {
        Tensor<Real> tensor;
        std::vector<Real> m, v; // Adam moments
    };

    // Registers a leaf parameter. Names are unique; shapes immutable afterwards.
    Tensor<Real>& add(const std::string& name, Tensor<Real> t) {
        if (map_.count(name)) throw UsageError("parameter '" + name + "' already registered");
        if (!t.requires_grad()) throw UsageError("parameter '" + name + "' must require grad");
        order_.push_back(name);
        auto& e = map_[name];
        e.tensor = std::move(t);
        e.m.assign(e.tensor.numel(), Real(0));
        e.v.assign(e.tensor.numel(), Real(0));
        return e.tensor;
    }

    bool has(const std::string& name) const { return map_.count(name) != 0; }

    Tensor<Real>& get(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw UsageError("unknown parameter '" + name + "'");
        return it->second.tensor;
    }
    const Tensor<Real>& get(const std::string& name) const {
        auto it = map_.find(name);
        if (it == map_.end()) throw UsageError("unknown parameter '" + name + "'");
        return it->second.tensor;
    }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }

    Entry& entry(const std::string& name) { return map_.at(name); }
    const Entry& entry(const std::string& name) const { return map_.at(name); }

    void zero_grads() {
        for (const auto& n : order_) map_[n].tensor.zero_grad();
    }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& name : order_) n += map_.at(name).tensor.numel();
        return n;
    }

    // Accumulate a collected gradient pass into the persistent grads,
    // scaled by `scale`. Parameters the pass never reached get nothing.
    void accumulate(const GradMap<Real>& gm, Real scale = Real(1)) {
        for (const auto& name : order_) {
            auto& t = map_[name].tensor;
            auto it = gm.find(t.node().get());
            if (it == gm.end()) continue;
            t.ensure_grad();
            auto& g = t.node()->grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * it->second[i];
        }
    }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Entry> map_;
    std::uint64_t step_ = 0;
};

// Standard bias-corrected Adam. Grads must be populated (zero counts as
// populated); they are left untouched for the caller to clear.
template <class Real>
void adam_step(ParamStore<Real>& store, const AdamConfig& cfg) {
    for (const auto& name : store.names()) {
        if (!store.get(name).has_grad()) {
            throw UsageError("adam_step: parameter '" + name + "' has no gradient");
        }
    }
    store.set_step(store.step() + 1);
    const double t = static_cast<double>(store.step());
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (const auto& name : store.names()) {
        auto& e = store.entry(name);
        auto& w = e.tensor.data();
        const auto& g = e.tensor.node()->grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            double gi = static_cast<double>(g[i]);
            double mi = cfg.beta1 * static_cast<double>(e.m[i]) + (1.0 - cfg.beta1) * gi;
            double vi = cfg.beta2 * static_cast<double>(e.v[i]) + (1.0 - cfg.beta2) * gi * gi;
            e.m[i] = static_cast<Real>(mi);
            e.v[i] = static_cast<Real>(vi);
            double update = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
            w[i] = static_cast<Real>(static_cast<double>(w[i]) - update);
        }
    }
}

// Cosine decay with linear warmup; step is 0-based.
inline double cosine_lr(std::uint64_t step, double peak, std::uint64_t warmup, std::uint64_t total) {
    if (warmup > 0 && step < warmup) {
        return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    if (total <= warmup) return peak;
    double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    if (progress > 1.0) progress = 1.0;
    return peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

} // namespace sema
