#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "lat/error.hpp"
#include "lat/tensor.hpp"

namespace lat {

// A named, optionally trainable tensor. The name is a hierarchical path
// ("backbone.block.7.msa.wq") that the fine-tune scheduler matches on.
template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> value;
    bool trainable = true;

    ParamT() = default;
    ParamT(std::string n, TensorT<T> v) : name(std::move(n)), value(std::move(v)) {
        value.set_requires_grad(true);
    }
};

// Non-trainable state that still has to survive a checkpoint
// (batchnorm running statistics).
template <typename T>
struct BufferRefT {
    std::string name;
    std::vector<T>* data;
};

template <typename T>
using ParamList = std::vector<ParamT<T>*>;

// Flat parameter collection; throws on duplicate names.
template <typename T>
void check_unique_names(const ParamList<T>& params) {
    std::unordered_set<std::string> seen;
    for (const auto* p : params) {
        if (!seen.insert(p->name).second) {
            throw NamingError("duplicate parameter name: " + p->name);
        }
    }
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (auto* p : params) p->value.zero_grad();
}

}  // namespace lat
