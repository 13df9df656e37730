#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "endovid/errors.hpp"
#include "endovid/tensor.hpp"

namespace endovid {

/// Named, ordered collection of parameter leaves.
///
/// Insertion order is the canonical order used by the optimizer, EMA and
/// checkpoints, so two sets built by the same code line up index by index.
template <typename T>
class ParameterSet {
public:
    void add(std::string name, ag::Tensor<T> tensor) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(tensor));
    }

    const ag::Tensor<T>& operator[](const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return entries_[it->second].second;
    }
    ag::Tensor<T>& operator[](const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return entries_[it->second].second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    ag::Tensor<T>& tensor(std::size_t i) { return entries_[i].second; }
    const ag::Tensor<T>& tensor(std::size_t i) const { return entries_[i].second; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.second.zero_grad();
    }

    /// Deep copy with fresh leaves, optionally in another precision.
    template <typename U = T>
    ParameterSet<U> clone(bool requires_grad) const {
        ParameterSet<U> out;
        for (const auto& [name, t] : entries_) out.add(name, ag::cast<U>(t, requires_grad));
        return out;
    }

    /// Throws unless `other` has the same names and shapes in the same order.
    template <typename U>
    void require_same_structure(const ParameterSet<U>& other) const {
        if (other.size() != size()) throw ContractError("parameter sets differ in size");
        for (std::size_t i = 0; i < size(); ++i) {
            if (other.name(i) != name(i) || other.tensor(i).shape() != tensor(i).shape()) {
                throw ContractError("parameter sets differ at '" + name(i) + "'");
            }
        }
    }

private:
    std::vector<std::pair<std::string, ag::Tensor<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace endovid
