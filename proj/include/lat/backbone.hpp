#pragma once

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

// Vision-transformer encoder configuration, from ViT-Base scale down to toy
// scale. The patch grid must tile the image exactly (stride == kernel for
// non-overlapping patches, but any exact geometry is accepted).
struct BackboneConfig {
    std::size_t image_h = 224, image_w = 224;
    std::size_t kernel_h = 16, kernel_w = 16;
    std::size_t stride = 16;
    std::size_t channels_in = 3;
    std::size_t embed_dim = 768;
    std::size_t num_blocks = 12;
    std::size_t num_heads = 12;
    std::size_t mlp_hidden_dim = 3072;

    std::size_t grid_rows() const {
        return conv_output_geometry(image_h, image_w, kernel_h, kernel_w, stride, 0).out_h;
    }
    std::size_t grid_cols() const {
        return conv_output_geometry(image_h, image_w, kernel_h, kernel_w, stride, 0).out_w;
    }
    std::size_t patch_count() const { return grid_rows() * grid_cols(); }

    std::vector<std::string> validation_issues() const {
        std::vector<std::string> issues;
        if (num_blocks < 1) issues.push_back("backbone: num_blocks must be >= 1");
        if (embed_dim == 0) issues.push_back("backbone: embed_dim must be positive");
        if (num_heads == 0 || embed_dim % num_heads != 0) {
            issues.push_back("backbone: embed_dim (" + std::to_string(embed_dim) +
                             ") must be divisible by num_heads (" + std::to_string(num_heads) +
                             ")");
        }
        if (mlp_hidden_dim == 0) issues.push_back("backbone: mlp_hidden_dim must be positive");
        if (channels_in == 0) issues.push_back("backbone: channels_in must be positive");
        try {
            (void)patch_count();
        } catch (const GeometryError& e) {
            issues.push_back(std::string("backbone: ") + e.what());
        }
        return issues;
    }

    void validate() const {
        auto issues = validation_issues();
        if (!issues.empty()) throw ConfigError("invalid backbone config", issues);
    }
};

// Number of patches the stem produces (padding 0, exact tiling enforced).
inline std::size_t patch_count(const BackboneConfig& cfg) { return cfg.patch_count(); }

// Standard scaled dot-product multi-head self-attention over all tokens.
template <typename T>
struct MsaT {
    std::size_t num_heads = 1;
    ParamT<T> wq, bq, wk, bk, wv, bv, wo, bo;

    MsaT() = default;
    MsaT(const std::string& prefix, std::size_t dim, std::size_t heads, Rng& rng)
        : num_heads(heads),
          wq(prefix + ".wq", TensorT<T>::randn({dim, dim}, rng, T(0.02))),
          bq(prefix + ".bq", TensorT<T>::zeros({dim})),
          wk(prefix + ".wk", TensorT<T>::randn({dim, dim}, rng, T(0.02))),
          bk(prefix + ".bk", TensorT<T>::zeros({dim})),
          wv(prefix + ".wv", TensorT<T>::randn({dim, dim}, rng, T(0.02))),
          bv(prefix + ".bv", TensorT<T>::zeros({dim})),
          wo(prefix + ".wo", TensorT<T>::randn({dim, dim}, rng, T(0.02))),
          bo(prefix + ".bo", TensorT<T>::zeros({dim})) {}

    TensorT<T> forward(const TensorT<T>& z) const {
        const std::size_t dim = z.cols();
        const std::size_t dh = dim / num_heads;
        const T att_scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
        TensorT<T> q = add_rowvec(matmul(z, wq.value), bq.value);
        TensorT<T> k = add_rowvec(matmul(z, wk.value), bk.value);
        TensorT<T> v = add_rowvec(matmul(z, wv.value), bv.value);
        std::vector<TensorT<T>> heads;
        heads.reserve(num_heads);
        for (std::size_t h = 0; h < num_heads; ++h) {
            TensorT<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
            TensorT<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
            TensorT<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
            TensorT<T> att = softmax(scale(matmul(qh, transpose(kh)), att_scale));
            heads.push_back(matmul(att, vh));
        }
        TensorT<T> merged = num_heads == 1 ? heads[0] : concat_cols(heads);
        return add_rowvec(matmul(merged, wo.value), bo.value);
    }

    void collect(ParamList<T>& out) {
        for (auto* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) out.push_back(p);
    }
};

template <typename T>
struct MlpT {
    LinearT<T> fc1, fc2;

    MlpT() = default;
    MlpT(const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng)
        : fc1(prefix + ".w1", dim, hidden, rng), fc2(prefix + ".w2", hidden, dim, rng) {}

    TensorT<T> forward(const TensorT<T>& x) const { return fc2.forward(gelu(fc1.forward(x))); }

    void collect(ParamList<T>& out) {
        fc1.collect(out);
        fc2.collect(out);
    }
};

// Pre-norm encoder block: z' = z + MSA(LN(z)); out = z' + MLP(LN(z')).
template <typename T>
struct EncoderBlockT {
    LayerNormT<T> ln1, ln2;
    MsaT<T> msa;
    MlpT<T> mlp;

    EncoderBlockT() = default;
    EncoderBlockT(const std::string& prefix, std::size_t dim, std::size_t heads,
                  std::size_t mlp_hidden, Rng& rng)
        : ln1(prefix + ".ln1", dim),
          ln2(prefix + ".ln2", dim),
          msa(prefix + ".msa", dim, heads, rng),
          mlp(prefix + ".mlp", dim, mlp_hidden, rng) {}

    TensorT<T> forward(const TensorT<T>& z) const {
        TensorT<T> zp = add(z, msa.forward(ln1.forward(z)));
        return add(zp, mlp.forward(ln2.forward(zp)));
    }

    void collect(ParamList<T>& out) {
        ln1.collect(out);
        msa.collect(out);
        ln2.collect(out);
        mlp.collect(out);
    }
};

// Split of the encoder output: row 0 is the global token, rows 1..N are the
// local tokens in row-major grid order. Order preservation is what the
// downstream row pooling depends on.
template <typename T>
struct SplitTokensT {
    TensorT<T> global;  // [D]
    TensorT<T> local;   // [N x D]
};

template <typename T>
SplitTokensT<T> split_tokens(const TensorT<T>& tokens) {
    const std::size_t rows = tokens.rows();
    if (rows < 2) throw ShapeError("split_tokens: need at least one local token");
    TensorT<T> g = reshape(slice_rows(tokens, 0, 1), {tokens.cols()});
    TensorT<T> q = slice_rows(tokens, 1, rows);
    return {std::move(g), std::move(q)};
}

// ViT encoder: patch embedding + class token + position embeddings, then
// num_blocks pre-norm encoder blocks and a final layernorm.
template <typename T>
class VitBackboneT {
public:
    VitBackboneT(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        const std::size_t n = cfg.patch_count();
        const std::size_t d = cfg.embed_dim;
        patch_weight_ = ParamT<T>(
            "backbone.patch_embed.weight",
            TensorT<T>::randn({d, cfg.channels_in, cfg.kernel_h, cfg.kernel_w}, rng, T(0.02)));
        patch_bias_ = ParamT<T>("backbone.patch_embed.bias", TensorT<T>::zeros({d}));
        cls_token_ = ParamT<T>("backbone.cls_token", TensorT<T>::randn({d}, rng, T(0.02)));
        pos_embed_ = ParamT<T>("backbone.pos_embed", TensorT<T>::randn({n + 1, d}, rng, T(0.02)));
        blocks_.reserve(cfg.num_blocks);
        for (std::size_t b = 1; b <= cfg.num_blocks; ++b) {
            blocks_.emplace_back("backbone.block." + std::to_string(b), d, cfg.num_heads,
                                 cfg.mlp_hidden_dim, rng);
        }
        ln_f_ = LayerNormT<T>("backbone.ln_f", d);
    }

    const BackboneConfig& config() const { return cfg_; }

    // z_0: class token and projected patches plus position embeddings.
    TensorT<T> embed(const TensorT<T>& image) const {
        check_image(image);
        const std::size_t n = cfg_.patch_count();
        const std::size_t d = cfg_.embed_dim;
        TensorT<T> fmap = conv2d(image, patch_weight_.value, cfg_.stride, 0);
        fmap = add_channel_bias(fmap, patch_bias_.value);
        // [D x Gh x Gw] -> [N x D], patches in row-major grid order
        TensorT<T> patches = transpose(reshape(fmap, {d, n}));
        TensorT<T> seq = concat_rows<T>({cls_token_.value, patches});
        return add(seq, pos_embed_.value);
    }

    // Full encoder output F = LN(z_B), shape [(N+1) x D].
    TensorT<T> forward(const TensorT<T>& image) const {
        TensorT<T> z = embed(image);
        for (const auto& block : blocks_) z = block.forward(z);
        return ln_f_.forward(z);
    }

    void collect(ParamList<T>& out) {
        out.push_back(&patch_weight_);
        out.push_back(&patch_bias_);
        out.push_back(&cls_token_);
        out.push_back(&pos_embed_);
        for (auto& b : blocks_) b.collect(out);
        ln_f_.collect(out);
    }

    std::vector<EncoderBlockT<T>>& blocks() { return blocks_; }
    const std::vector<EncoderBlockT<T>>& blocks() const { return blocks_; }

private:
    void check_image(const TensorT<T>& image) const {
        const Shape want{cfg_.channels_in, cfg_.image_h, cfg_.image_w};
        if (image.shape() != want) {
            throw ShapeError("backbone: image shape " + shape_str(image.shape()) +
                             ", config expects " + shape_str(want));
        }
    }

    BackboneConfig cfg_;
    ParamT<T> patch_weight_, patch_bias_, cls_token_, pos_embed_;
    std::vector<EncoderBlockT<T>> blocks_;
    LayerNormT<T> ln_f_;
};

}  // namespace lat
