#pragma once

#include "polymotion/autodiff.hpp"

#include <map>
#include <string>

namespace polymotion {

/// Named parameter arrays. Iteration order is the sorted name order.
template <typename T>
class ParamSet {
public:
    using M = MatT<T>;

    M& add(const std::string& name, M value) {
        if (arrays_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
        return arrays_[name] = std::move(value);
    }

    M& at(const std::string& name) {
        auto it = arrays_.find(name);
        if (it == arrays_.end()) throw InvalidArgument("missing parameter '" + name + "'");
        return it->second;
    }
    const M& at(const std::string& name) const {
        auto it = arrays_.find(name);
        if (it == arrays_.end()) throw InvalidArgument("missing parameter '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return arrays_.count(name) > 0; }

    std::map<std::string, M>& arrays() { return arrays_; }
    const std::map<std::string, M>& arrays() const { return arrays_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, m] : arrays_) n += static_cast<std::size_t>(m.size());
        return n;
    }

    /// Same names and shapes, all zeros.
    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& [name, m] : arrays_) out.arrays_[name] = M::Zero(m.rows(), m.cols());
        return out;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& [name, m] : arrays_) out.add(name, m.template cast<U>());
        return out;
    }

    bool all_finite() const {
        for (const auto& [name, m] : arrays_)
            if (!m.allFinite()) return false;
        return true;
    }

    /// Copies every array whose name starts with `prefix` into `out` with the prefix stripped.
    ParamSet with_prefix_removed(const std::string& prefix) const {
        ParamSet out;
        for (const auto& [name, m] : arrays_)
            if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), m);
        return out;
    }

    void merge_with_prefix(const ParamSet& other, const std::string& prefix) {
        for (const auto& [name, m] : other.arrays_) add(prefix + name, m);
    }

private:
    std::map<std::string, M> arrays_;
};

/// Lazily binds parameters of one ParamSet onto a tape. With `grads` null
/// the parameters enter as constants (frozen).
template <typename T>
class Binder {
public:
    Binder(ad::Tape<T>& tape, const ParamSet<T>& params, ParamSet<T>* grads = nullptr)
        : tape_(tape), params_(params), grads_(grads) {}

    ad::Var operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        const MatT<T>& value = params_.at(name);
        MatT<T>* sink = grads_ ? &grads_->at(name) : nullptr;
        const ad::Var v = tape_.parameter(value, sink);
        bound_.emplace(name, v);
        return v;
    }

    ad::Tape<T>& tape() { return tape_; }
    const ParamSet<T>& params() const { return params_; }

private:
    ad::Tape<T>& tape_;
    const ParamSet<T>& params_;
    ParamSet<T>* grads_;
    std::map<std::string, ad::Var> bound_;
};

/// Adam moments with decoupled weight decay.
template <typename T>
class AdamW {
public:
    double lr = 1e-4;
    double weight_decay = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamW() = default;
    AdamW(double lr_, double wd) : lr(lr_), weight_decay(wd) {}

    /// Arrays with an empty gradient are treated as having zero gradient.
    void step(ParamSet<T>& params, const ParamSet<T>& grads) {
        if (m_.arrays().empty()) {
            m_ = params.zeros_like();
            v_ = params.zeros_like();
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, t_);
        const double c2 = 1.0 - std::pow(beta2, t_);
        for (auto& [name, p] : params.arrays()) {
            const MatT<T>& g0 = grads.at(name);
            MatT<T>& m = m_.at(name);
            MatT<T>& v = v_.at(name);
            if (g0.size() == 0) {
                m *= static_cast<T>(beta1);
                v *= static_cast<T>(beta2);
            } else {
                m = static_cast<T>(beta1) * m + static_cast<T>(1 - beta1) * g0;
                v = static_cast<T>(beta2) * v + static_cast<T>(1 - beta2) * g0.cwiseProduct(g0);
            }
            const auto mhat = m.array() / static_cast<T>(c1);
            const auto vhat = v.array() / static_cast<T>(c2);
            const auto update = mhat / (vhat.sqrt() + static_cast<T>(eps)) + static_cast<T>(weight_decay) * p.array();
            p.array() -= static_cast<T>(lr) * update;
        }
    }

    long steps_taken() const { return t_; }

private:
    long t_ = 0;
    ParamSet<T> m_, v_;
};

}  // namespace polymotion
