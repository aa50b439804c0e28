#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lat/backbone.hpp"
#include "lat/error.hpp"
#include "lat/head.hpp"
#include "lat/param.hpp"
#include "lat/rng.hpp"
#include "lat/tensor.hpp"

namespace lat {

// Backbone plus locally aware head, trained as one network.
template <typename T>
class LaModelT {
public:
    LaModelT(const BackboneConfig& bc, const HeadConfig& hc, Rng& rng)
        : backbone_(bc, rng), head_(hc, rng) {
        std::vector<std::string> issues;
        if (hc.patch_count() != bc.patch_count()) {
            issues.push_back("model: head grid " + std::to_string(hc.grid_rows) + "x" +
                             std::to_string(hc.patches_per_row) + " covers " +
                             std::to_string(hc.patch_count()) + " patches, backbone makes " +
                             std::to_string(bc.patch_count()));
        } else {
            if (hc.grid_rows != bc.grid_rows())
                issues.push_back("model: head grid_rows != backbone grid rows");
            if (hc.patches_per_row != bc.grid_cols())
                issues.push_back("model: head patches_per_row != backbone grid cols");
        }
        if (hc.embed_dim != bc.embed_dim)
            issues.push_back("model: head embed_dim != backbone embed_dim");
        if (!issues.empty()) throw ConfigError("backbone/head mismatch", issues);
    }

    VitBackboneT<T>& backbone() { return backbone_; }
    LaHeadT<T>& head() { return head_; }
    const VitBackboneT<T>& backbone() const { return backbone_; }
    const LaHeadT<T>& head() const { return head_; }

    // Full parameter list in registration order; names checked unique.
    ParamList<T> params() {
        ParamList<T> out;
        backbone_.collect(out);
        head_.collect(out);
        check_unique_names(out);
        return out;
    }

    std::vector<BufferRefT<T>> buffers() {
        std::vector<BufferRefT<T>> out;
        head_.collect_buffers(out);
        return out;
    }

    // Image -> encoder -> token split -> row-pooled local vectors.
    TensorT<T> local_vectors(const TensorT<T>& image) const {
        auto split = split_tokens(backbone_.forward(image));
        return head_.gelt_rows(split.local, split.global);
    }

    // Mean per-classifier cross entropy over a batch of images.
    TensorT<T> batch_loss(const std::vector<TensorT<T>>& images, const std::vector<int>& labels,
                          Mode mode = Mode::train) {
        if (images.size() != labels.size()) {
            throw ShapeError("batch_loss: " + std::to_string(images.size()) + " images vs " +
                             std::to_string(labels.size()) + " labels");
        }
        std::vector<TensorT<T>> lvs;
        lvs.reserve(images.size());
        for (const auto& img : images) lvs.push_back(local_vectors(img));
        return head_.train_loss(head_.forward_batch(lvs, mode), labels);
    }

    // Retrieval feature for one image (eval mode, no graph).
    std::vector<T> embed_image(const TensorT<T>& image) const {
        NoGradGuard ng;
        return head_.embedding(local_vectors(image)).data();
    }

    // Ensemble vote for one image (eval mode, no graph).
    VoteResultT<T> predict(const TensorT<T>& image) {
        NoGradGuard ng;
        return vote(head_.head_forward(local_vectors(image)));
    }

private:
    VitBackboneT<T> backbone_;
    LaHeadT<T> head_;
};

}  // namespace lat
