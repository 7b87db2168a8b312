#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "maestro/graph.hpp"
#include "maestro/rng.hpp"

namespace maestro {

enum class Init { Zero, One, Xavier, Uniform, Gaussian, Const };

/// Named, insertion-ordered parameter registry. Initialization depends only
/// on (seed, parameter name), so the same name gets the same values in every
/// model variant built from the same seed.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor& create(const std::string& name, Shape shape, Init init, double arg0 = 0.0,
                   double arg1 = 0.0) {
        if (index_.count(name))
            throw UsageError("parameter registered twice: " + name);
        Tensor t = Tensor::zeros(shape);
        Rng rng(seed_, "param." + name);
        switch (init) {
            case Init::Zero:
                break;
            case Init::One:
                for (double& v : t.data) v = 1.0;
                break;
            case Init::Const:
                for (double& v : t.data) v = arg0;
                break;
            case Init::Xavier: {
                const double lim = std::sqrt(6.0 / (arg0 + arg1));
                for (double& v : t.data) v = rng.uniform(-lim, lim);
                break;
            }
            case Init::Uniform:
                for (double& v : t.data) v = rng.uniform(arg0, arg1);
                break;
            case Init::Gaussian:
                for (double& v : t.data) v = arg0 * rng.gaussian();
                break;
        }
        index_[name] = values_.size();
        names_.push_back(name);
        values_.push_back(std::move(t));
        return values_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("unknown parameter: " + name);
        return values_[it->second];
    }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("unknown parameter: " + name);
        return values_[it->second];
    }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return values_.size(); }

    std::size_t count_scalars() const {
        std::size_t n = 0;
        for (const auto& t : values_) n += t.size();
        return n;
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Tensor> values_;
};

/// Per-graph view of a ParamStore: binds each parameter as a leaf node on
/// first use. Grads land on the bound leaves; the optimizer reads them back
/// through this map.
class Binding {
public:
    Binding(ad::Graph& g, ParamStore& store, bool trainable = true)
        : g_(&g), store_(&store), trainable_(trainable) {}

    ad::Node* operator[](const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        ad::Node* n = g_->leaf(store_->at(name), trainable_);
        bound_[name] = n;
        return n;
    }

    /// Pins a node in place of the named parameter (gradient checks vary a
    /// single leaf while the rest of the store stays constant).
    void preset(const std::string& name, ad::Node* node) {
        if (node->shape() != store_->at(name).shape)
            throw ad::ShapeError("binding preset: node shape does not match parameter '" +
                                 name + "'");
        bound_[name] = node;
    }

    const std::unordered_map<std::string, ad::Node*>& bound() const { return bound_; }

private:
    ad::Graph* g_;
    ParamStore* store_;
    bool trainable_;
    std::unordered_map<std::string, ad::Node*> bound_;
};

} // namespace maestro
