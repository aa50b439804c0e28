#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "lat/error.hpp"
#include "lat/nn.hpp"
#include "lat/ops.hpp"
#include "lat/param.hpp"
#include "lat/rng.hpp"
#include "lat/tensor.hpp"

namespace lat {

// Which tokens feed the classifier ensemble. `gelt` is the full method;
// the other two are its ablations.
enum class TokenMode { global_only, local_only, gelt };

inline const char* token_mode_name(TokenMode m) {
    switch (m) {
        case TokenMode::global_only: return "global_only";
        case TokenMode::local_only: return "local_only";
        default: return "gelt";
    }
}

struct HeadConfig {
    std::size_t patches_per_row = 14;  // N_R
    std::size_t grid_rows = 14;        // N_C: one classifier and one local vector per row
    double lambda = 0.8;
    std::size_t embed_dim = 768;
    std::size_t num_classes = 751;
    std::size_t fc_hidden_dim = 512;
    TokenMode token_mode = TokenMode::gelt;

    std::size_t patch_count() const { return patches_per_row * grid_rows; }
    std::size_t embedding_dim() const { return grid_rows * embed_dim; }

    std::vector<std::string> validation_issues() const {
        std::vector<std::string> issues;
        if (patches_per_row == 0 || grid_rows == 0)
            issues.push_back("head: grid extents must be positive");
        if (lambda < 0) issues.push_back("head: lambda must be nonnegative");
        if (embed_dim == 0) issues.push_back("head: embed_dim must be positive");
        if (num_classes < 2) issues.push_back("head: num_classes must be >= 2");
        if (fc_hidden_dim == 0) issues.push_back("head: fc_hidden_dim must be positive");
        return issues;
    }

    void validate() const {
        auto issues = validation_issues();
        if (!issues.empty()) throw ConfigError("invalid head config", issues);
    }
};

// Softmax-vote over the classifier ensemble.
template <typename T>
struct VoteResultT {
    std::vector<T> score;  // sums of per-classifier softmax rows
    int prediction = -1;   // argmax, ties to the lowest class index
};

// score = sum_i softmax(y_i); prediction = argmax(score). Plain data math,
// no graph involvement.
template <typename T>
VoteResultT<T> vote(const TensorT<T>& logits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    VoteResultT<T> out;
    out.score.assign(c, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data().data() + i * c;
        T mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        std::vector<T> e(c);
        for (std::size_t j = 0; j < c; ++j) {
            e[j] = std::exp(row[j] - mx);
            denom += e[j];
        }
        for (std::size_t j = 0; j < c; ++j) out.score[j] += e[j] / denom;
    }
    out.prediction = static_cast<int>(
        std::max_element(out.score.begin(), out.score.end()) - out.score.begin());
    return out;
}

// Two affine maps with batchnorm and ReLU between them; one independent
// instance per grid row.
template <typename T>
struct FcClassifierT {
    LinearT<T> fc1;
    BatchNorm1dT<T> bn;
    LinearT<T> fc2;

    FcClassifierT() = default;
    FcClassifierT(const std::string& prefix, std::size_t in_dim, std::size_t hidden,
                  std::size_t num_classes, Rng& rng)
        : fc1(prefix + ".fc1", in_dim, hidden, rng),
          bn(prefix + ".bn", hidden),
          fc2(prefix + ".fc2", hidden, num_classes, rng) {}

    TensorT<T> forward(const TensorT<T>& x, Mode mode) {
        return fc2.forward(relu(bn.forward(fc1.forward(x), mode)));
    }

    void collect(ParamList<T>& out) {
        fc1.collect(out);
        bn.collect(out);
        fc2.collect(out);
    }
    void collect_buffers(std::vector<BufferRefT<T>>& out) { bn.collect_buffers(out); }
};

// Locally aware network: globally enhanced local tokens pooled per grid
// row, one FC classifier per row, softmax voting, and the concatenated
// row vectors as the retrieval embedding.
template <typename T>
class LaHeadT {
public:
    LaHeadT(const HeadConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        classifiers_.reserve(cfg.grid_rows);
        for (std::size_t i = 0; i < cfg.grid_rows; ++i) {
            classifiers_.emplace_back("head.fc." + std::to_string(i), cfg.embed_dim,
                                      cfg.fc_hidden_dim, cfg.num_classes, rng);
        }
    }

    const HeadConfig& config() const { return cfg_; }

    // Row-pooled globally enhanced local tokens:
    //   L_i = (mean over row i of Q + lambda*G) / (1 + lambda)
    // local_only forces lambda = 0; global_only repeats G per row.
    TensorT<T> gelt_rows(const TensorT<T>& local, const TensorT<T>& global) const {
        const std::size_t n_r = cfg_.patches_per_row, n_c = cfg_.grid_rows;
        if (local.ndim() != 2 || local.rows() != n_r * n_c || local.cols() != cfg_.embed_dim) {
            throw GeometryError("gelt_rows: local tokens " + shape_str(local.shape()) +
                                " do not form a " + std::to_string(n_c) + "x" +
                                std::to_string(n_r) + " grid of width " +
                                std::to_string(cfg_.embed_dim));
        }
        if (global.ndim() != 1 || global.shape()[0] != cfg_.embed_dim) {
            throw ShapeError("gelt_rows: global token must be [" +
                             std::to_string(cfg_.embed_dim) + "]");
        }
        if (cfg_.token_mode == TokenMode::global_only) {
            std::vector<TensorT<T>> rows(n_c, global);
            return concat_rows(rows);
        }
        const T lam = cfg_.token_mode == TokenMode::local_only ? T(0)
                                                               : static_cast<T>(cfg_.lambda);
        const T inv = T(1) / (T(1) + lam);
        std::vector<TensorT<T>> rows;
        rows.reserve(n_c);
        for (std::size_t i = 0; i < n_c; ++i) {
            TensorT<T> row_mean = mean_axis0(slice_rows(local, i * n_r, (i + 1) * n_r));
            rows.push_back(scale(add(row_mean, scale(global, lam)), inv));
        }
        return concat_rows(rows);
    }

    // y_i = FC_i(L_i) for one image; [N_C x num_classes]. Uses running
    // batch statistics, so this is the eval path.
    TensorT<T> head_forward(const TensorT<T>& local_vectors) {
        check_local_vectors(local_vectors);
        std::vector<TensorT<T>> rows;
        rows.reserve(cfg_.grid_rows);
        for (std::size_t i = 0; i < cfg_.grid_rows; ++i) {
            rows.push_back(
                classifiers_[i].forward(slice_rows(local_vectors, i, i + 1), Mode::eval));
        }
        return concat_rows(rows);
    }

    // Batched logits: classifier i consumes row i of every image's local
    // vectors. Returns one [batch x num_classes] tensor per classifier.
    std::vector<TensorT<T>> forward_batch(const std::vector<TensorT<T>>& local_vectors,
                                          Mode mode) {
        if (local_vectors.empty()) throw ShapeError("forward_batch: empty batch");
        for (const auto& lv : local_vectors) check_local_vectors(lv);
        std::vector<TensorT<T>> logits;
        logits.reserve(cfg_.grid_rows);
        for (std::size_t i = 0; i < cfg_.grid_rows; ++i) {
            std::vector<TensorT<T>> ith_rows;
            ith_rows.reserve(local_vectors.size());
            for (const auto& lv : local_vectors) ith_rows.push_back(slice_rows(lv, i, i + 1));
            logits.push_back(classifiers_[i].forward(concat_rows(ith_rows), mode));
        }
        return logits;
    }

    // Unweighted mean of the per-classifier cross entropies; every
    // classifier is trained on the identity label of its image.
    TensorT<T> train_loss(const std::vector<TensorT<T>>& per_classifier_logits,
                          const std::vector<int>& labels) const {
        if (per_classifier_logits.size() != cfg_.grid_rows) {
            throw ConfigError("train_loss: " + std::to_string(per_classifier_logits.size()) +
                              " logit blocks for " + std::to_string(cfg_.grid_rows) +
                              " classifiers");
        }
        TensorT<T> total = cross_entropy(per_classifier_logits[0], labels);
        for (std::size_t i = 1; i < per_classifier_logits.size(); ++i) {
            total = add(total, cross_entropy(per_classifier_logits[i], labels));
        }
        return scale(total, T(1) / static_cast<T>(cfg_.grid_rows));
    }

    // Concatenation of L_0..L_{N_C-1} in row order; the test-time feature.
    TensorT<T> embedding(const TensorT<T>& local_vectors) const {
        check_local_vectors(local_vectors);
        return reshape(local_vectors, {cfg_.embedding_dim()});
    }

    std::vector<FcClassifierT<T>>& classifiers() { return classifiers_; }

    void collect(ParamList<T>& out) {
        for (auto& c : classifiers_) c.collect(out);
    }
    void collect_buffers(std::vector<BufferRefT<T>>& out) {
        for (auto& c : classifiers_) c.collect_buffers(out);
    }

private:
    void check_local_vectors(const TensorT<T>& lv) const {
        if (lv.ndim() != 2 || lv.rows() != cfg_.grid_rows || lv.cols() != cfg_.embed_dim) {
            throw ConfigError("head: local vectors " + shape_str(lv.shape()) + ", expected [" +
                              std::to_string(cfg_.grid_rows) + "x" +
                              std::to_string(cfg_.embed_dim) + "]");
        }
    }

    HeadConfig cfg_;
    std::vector<FcClassifierT<T>> classifiers_;
};

}  // namespace lat
