#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "synlm/error.hpp"
#include "synlm/rng.hpp"
#include "synlm/tensor.hpp"
#include "synlm/transitions.hpp"
#include "synlm/vocab.hpp"

namespace synlm {

enum class Variant { Lm, ScLmPast, ScLmNext, Plm, PlmMask };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Lm: return "lm";
        case Variant::ScLmPast: return "sclm-past";
        case Variant::ScLmNext: return "sclm-next";
        case Variant::Plm: return "plm";
        case Variant::PlmMask: return "plm-mask";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    for (Variant v : {Variant::Lm, Variant::ScLmPast, Variant::ScLmNext, Variant::Plm, Variant::PlmMask}) {
        if (variant_name(v) == s) return v;
    }
    throw Error(Errc::BadConfig, "unknown variant '" + std::string(s) + "'");
}

inline bool is_plm(Variant v) { return v == Variant::Plm || v == Variant::PlmMask; }
inline bool is_sclm(Variant v) { return v == Variant::ScLmPast || v == Variant::ScLmNext; }

struct ModelConfig {
    std::size_t hidden = 128;
    std::size_t heads = 4;
    std::size_t layers = 4;
    std::size_t ff_mult = 4;
    std::size_t max_len = 256;
    Variant variant = Variant::Plm;
    double dropout = 0.1;
    std::size_t vocab_size = 0;        // joint actions for PLM, tokens otherwise
    std::size_t ngram_vocab_size = 0;  // scaffold head (ScLM only)
    bool tied_embeddings = true;
    double scaffold_weight = 1.0;  // lambda on the n-gram term
    double init_std = 0.02;

    std::size_t head_dim() const { return hidden / heads; }
    std::size_t ff_dim() const { return ff_mult * hidden; }

    void validate() const {
        auto bad = [](const std::string& m) { throw Error(Errc::BadConfig, m); };
        if (hidden == 0 || heads == 0 || layers == 0 || ff_mult == 0 || max_len == 0) bad("sizes must be positive");
        if (hidden % heads != 0) bad("hidden size must be divisible by the head count");
        if (variant == Variant::PlmMask && heads < 3) bad("plm-mask needs at least 3 heads");
        if (vocab_size == 0) bad("vocab_size not set");
        if (is_sclm(variant) && ngram_vocab_size == 0) bad("ngram_vocab_size not set for a scaffold variant");
        if (dropout < 0.0 || dropout >= 1.0) bad("dropout must be in [0, 1)");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"hidden", c.hidden},
            {"heads", c.heads},
            {"layers", c.layers},
            {"ff_mult", c.ff_mult},
            {"max_len", c.max_len},
            {"variant", variant_name(c.variant)},
            {"dropout", c.dropout},
            {"vocab_size", c.vocab_size},
            {"ngram_vocab_size", c.ngram_vocab_size},
            {"tied_embeddings", c.tied_embeddings},
            {"scaffold_weight", c.scaffold_weight},
            {"init_std", c.init_std}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.hidden = j.value("hidden", c.hidden);
        c.heads = j.value("heads", c.heads);
        c.layers = j.value("layers", c.layers);
        c.ff_mult = j.value("ff_mult", c.ff_mult);
        c.max_len = j.value("max_len", c.max_len);
        c.variant = parse_variant(j.value("variant", variant_name(c.variant)));
        c.dropout = j.value("dropout", c.dropout);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.ngram_vocab_size = j.value("ngram_vocab_size", c.ngram_vocab_size);
        c.tied_embeddings = j.value("tied_embeddings", c.tied_embeddings);
        c.scaffold_weight = j.value("scaffold_weight", c.scaffold_weight);
        c.init_std = j.value("init_std", c.init_std);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::BadConfig, std::string("model config: ") + e.what());
    }
    return c;
}

/// Closed-form parameter count:
///   V*H + L*H + M*(4H^2 + 2*H*F + F + H + 4H) + 2H  [+ V*H untied] [+ G*H scaffold]
/// with V = content vocab, L = max_len, F = ff_mult*H, G = n-gram vocab.
inline std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t H = c.hidden, F = c.ff_dim();
    std::size_t n = c.vocab_size * H + c.max_len * H;
    n += c.layers * (4 * H * H + 2 * H * F + F + H + 4 * H);
    n += 2 * H;
    if (!c.tied_embeddings) n += c.vocab_size * H;
    if (is_sclm(c.variant)) n += c.ngram_vocab_size * H;
    return n;
}

/// Output of a full-sequence forward pass.
template <typename T>
struct ForwardResult {
    Var<T> hidden;  // t x H, after the final layer norm
    Var<T> logits;  // t x vocab; row p scores the action/word at p+1
    // keys x queries attention weights, index layer * heads + head
    std::vector<Tensor<T>> attention;
};

struct ForwardOptions {
    bool train = false;  // enables dropout
    std::uint64_t dropout_key = 0;
    bool keep_attention = false;
};

/// Per-position key/value rows cached for incremental decoding. Nodes form a
/// tree: hypotheses that share a prefix share its nodes.
template <typename T>
struct KvNode {
    std::shared_ptr<const KvNode> parent;
    std::size_t position = 0;
    std::vector<T> kv;  // [layer][k | v][H]
};

template <typename T>
using KvPtr = std::shared_ptr<const KvNode<T>>;

template <typename T>
struct StepInput {
    KvPtr<T> parent;  // null for position 0
    int token = 0;
    const HeadMaskRow* mask = nullptr;  // PLM-mask only; row for this position
};

namespace detail {

template <typename T>
void layernorm_rows(const EMatrix<T>& x, const Tensor<T>& g, const Tensor<T>& b, EMatrix<T>& out, T eps = T(1e-5)) {
    const auto n = x.cols();
    out.resize(x.rows(), n);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        T mean = 0;
        for (Eigen::Index c = 0; c < n; ++c) mean += x(r, c);
        mean /= static_cast<T>(n);
        T var = 0;
        for (Eigen::Index c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= static_cast<T>(n);
        const T rstd = T(1) / std::sqrt(var + eps);
        for (Eigen::Index c = 0; c < n; ++c) out(r, c) = (x(r, c) - mean) * rstd * g[c] + b[c];
    }
}

}  // namespace detail

/// GPT-2 style pre-layernorm decoder. Parameters are stored in a fixed
/// order; names follow "layer{m}.{block}.{tensor}".
template <typename T>
class Transformer {
   public:
    using Scalar = T;

    Transformer() = default;

    explicit Transformer(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
        config_.validate();
        allocate();
        initialize(seed);
    }

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }

    std::size_t num_parameters() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    Parameter<T>& param(const std::string& name) {
        for (auto& p : params_) {
            if (p.name == name) return p;
        }
        throw Error(Errc::BadCheckpoint, "no parameter named " + name);
    }
    const Parameter<T>& param(const std::string& name) const {
        return const_cast<Transformer*>(this)->param(name);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Full causal forward over `ids`. `masks` (PLM-mask only) holds one
    /// HeadMaskRow per position.
    ForwardResult<T> forward(Tape<T>& tape, const std::vector<int>& ids, const std::vector<HeadMaskRow>* masks = nullptr,
                             const ForwardOptions& opts = {}) {
        const std::size_t t = ids.size();
        const std::size_t NH = config_.heads, dh = config_.head_dim();
        if (t == 0) throw Error(Errc::ShapeMismatch, "empty input");
        if (t > config_.max_len) {
            throw Error(Errc::TooLong, std::to_string(t) + " positions exceed max_len " + std::to_string(config_.max_len));
        }
        check_masks(ids.size(), masks);

        std::vector<Var<T>> pv;
        pv.reserve(params_.size());
        for (auto& p : params_) pv.push_back(tape.parameter(p));
        auto P = [&](std::size_t i) { return pv[i]; };

        std::uint64_t stream = 0;
        CounterRng rng{opts.dropout_key};
        const double drop = opts.train ? config_.dropout : 0.0;

        std::vector<int> positions(t);
        for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(i);
        Var<T> x = add(tape, embedding_lookup(tape, P(kTokEmb), ids), embedding_lookup(tape, P(kPosEmb), positions));
        x = dropout(tape, x, drop, rng, stream++);

        const T ninf = -std::numeric_limits<T>::infinity();
        Tensor<T> causal(t, t, ninf);
        for (std::size_t q = 0; q < t; ++q) {
            for (std::size_t j = 0; j <= q; ++j) causal(j, q) = T(0);
        }
        Tensor<T> stack_mask, outside_mask;
        if (masks) {
            stack_mask = Tensor<T>(t, t, ninf);
            outside_mask = Tensor<T>(t, t, ninf);
            for (std::size_t q = 0; q < t; ++q) {
                for (std::size_t j = 0; j <= q; ++j) {
                    if ((*masks)[q].stack_visible[j]) stack_mask(j, q) = T(0);
                    if ((*masks)[q].outside_visible[j]) outside_mask(j, q) = T(0);
                }
            }
        }

        ForwardResult<T> res;
        const T scale_qk = T(1) / std::sqrt(static_cast<T>(dh));
        for (std::size_t m = 0; m < config_.layers; ++m) {
            const std::size_t base = layer_base(m);
            Var<T> a = layernorm(tape, x, P(base + kLn1G), P(base + kLn1B));
            Var<T> q = matmul(tape, a, P(base + kWq), false, true);
            Var<T> k = matmul(tape, a, P(base + kWk), false, true);
            Var<T> v = matmul(tape, a, P(base + kWv), false, true);
            std::vector<Var<T>> heads;
            heads.reserve(NH);
            for (std::size_t h = 0; h < NH; ++h) {
                Var<T> qh = slice_cols(tape, q, h * dh, dh);
                Var<T> kh = slice_cols(tape, k, h * dh, dh);
                Var<T> vh = slice_cols(tape, v, h * dh, dh);
                Var<T> scores = scale(tape, matmul(tape, kh, qh, false, true), scale_qk);
                const Tensor<T>* mask = &causal;
                if (masks && h == 0) mask = &stack_mask;
                if (masks && h == 1) mask = &outside_mask;
                Var<T> probs = masked_softmax(tape, scores, mask);
                if (opts.keep_attention) res.attention.push_back(tape.value(probs));
                heads.push_back(matmul(tape, probs, vh, true, false));
            }
            Var<T> att = matmul(tape, concat_cols(tape, heads), P(base + kWo), false, true);
            x = add(tape, x, dropout(tape, att, drop, rng, stream++));

            Var<T> a2 = layernorm(tape, x, P(base + kLn2G), P(base + kLn2B));
            Var<T> f = gelu(tape, add_row(tape, matmul(tape, a2, P(base + kW1), false, true), P(base + kB1)));
            Var<T> f2 = add_row(tape, matmul(tape, f, P(base + kW2), false, true), P(base + kB2));
            x = add(tape, x, dropout(tape, f2, drop, rng, stream++));
        }
        const std::size_t top = layer_base(config_.layers);
        res.hidden = layernorm(tape, x, P(top), P(top + 1));
        res.logits = matmul(tape, res.hidden, P(output_index()), false, true);
        return res;
    }

    /// Scaffold head logits (t x n-gram vocab) over the shared final hidden state.
    Var<T> scaffold_logits(Tape<T>& tape, Var<T> hidden) {
        if (!is_sclm(config_.variant)) throw Error(Errc::VariantMismatch, "scaffold head needs an sclm variant");
        return matmul(tape, hidden, tape.parameter(params_.back()), false, true);
    }

    /// Inference-only logits for a full sequence.
    Tensor<T> logits(const std::vector<int>& ids, const std::vector<HeadMaskRow>* masks = nullptr) {
        Tape<T> tape;
        return tape.value(forward(tape, ids, masks).logits);
    }

    /// Inference forward usable on a shared model: no parameter is written
    /// unless backward() runs, and this tape never does.
    Tensor<T> infer_logits(const std::vector<int>& ids, const std::vector<HeadMaskRow>* masks = nullptr) const {
        return const_cast<Transformer*>(this)->logits(ids, masks);
    }

    /// Extends a batch of cached prefixes by one token each. Returns the new
    /// cache nodes and the logits (batch x vocab) for the following position.
    std::pair<std::vector<KvPtr<T>>, Tensor<T>> step(const std::vector<StepInput<T>>& batch) const {
        const std::size_t B = batch.size();
        const std::size_t H = config_.hidden, NH = config_.heads, dh = config_.head_dim();
        const bool masked = config_.variant == Variant::PlmMask;
        std::vector<std::shared_ptr<KvNode<T>>> nodes(B);
        std::vector<std::vector<const KvNode<T>*>> chains(B);
        EMatrix<T> x(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(H));
        const auto tok = params_[kTokEmb].value.map();
        const auto pos = params_[kPosEmb].value.map();
        for (std::size_t b = 0; b < B; ++b) {
            auto node = std::make_shared<KvNode<T>>();
            node->parent = batch[b].parent;
            node->position = batch[b].parent ? batch[b].parent->position + 1 : 0;
            if (node->position >= config_.max_len) {
                throw Error(Errc::TooLong, "incremental position exceeds max_len " + std::to_string(config_.max_len));
            }
            if (batch[b].token < 0 || static_cast<std::size_t>(batch[b].token) >= config_.vocab_size) {
                throw Error(Errc::BadTarget, "token id out of range: " + std::to_string(batch[b].token));
            }
            if (masked) {
                const HeadMaskRow* row = batch[b].mask;
                if (!row || row->stack_visible.size() != node->position + 1 ||
                    row->outside_visible.size() != node->position + 1) {
                    throw Error(Errc::MaskMismatch, "incremental step needs a mask row for its position");
                }
            } else if (batch[b].mask) {
                throw Error(Errc::VariantMismatch, "masks supplied to a non-mask variant");
            }
            node->kv.assign(config_.layers * 2 * H, T(0));
            x.row(static_cast<Eigen::Index>(b)) = tok.row(batch[b].token) + pos.row(static_cast<Eigen::Index>(node->position));
            nodes[b] = node;
            auto& chain = chains[b];
            chain.resize(node->position + 1);
            chain[node->position] = node.get();
            const KvNode<T>* p = batch[b].parent.get();
            while (p) {
                chain[p->position] = p;
                p = p->parent.get();
            }
        }

        const T scale_qk = T(1) / std::sqrt(static_cast<T>(dh));
        EMatrix<T> a, q, k, v, att(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(H)), f;
        std::vector<T> scores;
        for (std::size_t m = 0; m < config_.layers; ++m) {
            const std::size_t base = layer_base(m);
            detail::layernorm_rows(x, params_[base + kLn1G].value, params_[base + kLn1B].value, a);
            q.noalias() = a * params_[base + kWq].value.map().transpose();
            k.noalias() = a * params_[base + kWk].value.map().transpose();
            v.noalias() = a * params_[base + kWv].value.map().transpose();
            for (std::size_t b = 0; b < B; ++b) {
                T* kv = nodes[b]->kv.data() + m * 2 * H;
                for (std::size_t c = 0; c < H; ++c) {
                    kv[c] = k(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
                    kv[H + c] = v(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
                }
            }
            for (std::size_t b = 0; b < B; ++b) {
                const auto& chain = chains[b];
                const std::size_t len = chain.size();
                scores.resize(len);
                for (std::size_t h = 0; h < NH; ++h) {
                    const std::vector<bool>* vis = nullptr;
                    if (masked && h == 0) vis = &batch[b].mask->stack_visible;
                    if (masked && h == 1) vis = &batch[b].mask->outside_visible;
                    T mx = -std::numeric_limits<T>::infinity();
                    for (std::size_t j = 0; j < len; ++j) {
                        if (vis && !(*vis)[j]) continue;
                        const T* kj = chain[j]->kv.data() + m * 2 * H + h * dh;
                        T s = 0;
                        for (std::size_t d = 0; d < dh; ++d) s += kj[d] * q(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(h * dh + d));
                        s *= scale_qk;
                        scores[j] = s;
                        mx = std::max(mx, s);
                    }
                    if (mx == -std::numeric_limits<T>::infinity()) {
                        throw Error(Errc::AllMaskedColumn, "incremental query sees no key");
                    }
                    T sum = 0;
                    for (std::size_t j = 0; j < len; ++j) {
                        if (vis && !(*vis)[j]) {
                            scores[j] = 0;
                            continue;
                        }
                        scores[j] = std::exp(scores[j] - mx);
                        sum += scores[j];
                    }
                    for (std::size_t d = 0; d < dh; ++d) att(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(h * dh + d)) = 0;
                    for (std::size_t j = 0; j < len; ++j) {
                        if (scores[j] == T(0)) continue;
                        const T w = scores[j] / sum;
                        const T* vj = chain[j]->kv.data() + m * 2 * H + H + h * dh;
                        for (std::size_t d = 0; d < dh; ++d) att(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(h * dh + d)) += w * vj[d];
                    }
                }
            }
            x.noalias() += att * params_[base + kWo].value.map().transpose();
            detail::layernorm_rows(x, params_[base + kLn2G].value, params_[base + kLn2B].value, a);
            f.noalias() = a * params_[base + kW1].value.map().transpose();
            f.rowwise() += params_[base + kB1].value.map().row(0);
            f = f.unaryExpr([](T z) { return gelu_value(z); });
            x.noalias() += f * params_[base + kW2].value.map().transpose();
            x.rowwise() += params_[base + kB2].value.map().row(0);
        }
        const std::size_t top = layer_base(config_.layers);
        detail::layernorm_rows(x, params_[top].value, params_[top + 1].value, a);
        Tensor<T> logits(B, config_.vocab_size);
        logits.map().noalias() = a * params_[output_index()].value.map().transpose();
        std::vector<KvPtr<T>> out(nodes.begin(), nodes.end());
        return {std::move(out), std::move(logits)};
    }

   private:
    // Layout: tok_emb, pos_emb, per layer kPerLayer tensors, ln_f.g, ln_f.b,
    // [out_emb], [scaffold].
    static constexpr std::size_t kTokEmb = 0, kPosEmb = 1, kFirstLayer = 2;
    static constexpr std::size_t kLn1G = 0, kLn1B = 1, kWq = 2, kWk = 3, kWv = 4, kWo = 5, kLn2G = 6, kLn2B = 7,
                                 kW1 = 8, kB1 = 9, kW2 = 10, kB2 = 11, kPerLayer = 12;

    static std::size_t layer_base(std::size_t m) { return kFirstLayer + m * kPerLayer; }
    std::size_t output_index() const { return config_.tied_embeddings ? kTokEmb : layer_base(config_.layers) + 2; }

    void check_masks(std::size_t t, const std::vector<HeadMaskRow>* masks) const {
        if (config_.variant != Variant::PlmMask) {
            if (masks) throw Error(Errc::VariantMismatch, "masks supplied to variant " + variant_name(config_.variant));
            return;
        }
        if (!masks) throw Error(Errc::MaskMismatch, "plm-mask forward needs head masks");
        if (masks->size() != t) {
            throw Error(Errc::MaskMismatch, std::to_string(masks->size()) + " mask rows for " + std::to_string(t) + " positions");
        }
        for (std::size_t q = 0; q < t; ++q) {
            const auto& row = (*masks)[q];
            if (row.stack_visible.size() != q + 1 || row.outside_visible.size() != q + 1) {
                throw Error(Errc::MaskMismatch, "mask row " + std::to_string(q) + " has the wrong length");
            }
        }
    }

    void add_param(std::string name, std::size_t rows, std::size_t cols, bool decay) {
        Parameter<T> p;
        p.name = std::move(name);
        p.value = Tensor<T>(rows, cols);
        p.grad = Tensor<T>(rows, cols);
        p.decay = decay;
        params_.push_back(std::move(p));
    }

    void allocate() {
        const std::size_t H = config_.hidden, F = config_.ff_dim();
        params_.clear();
        add_param("tok_emb", config_.vocab_size, H, false);
        add_param("pos_emb", config_.max_len, H, false);
        for (std::size_t m = 0; m < config_.layers; ++m) {
            const std::string p = "layer" + std::to_string(m) + ".";
            add_param(p + "ln1.g", 1, H, false);
            add_param(p + "ln1.b", 1, H, false);
            add_param(p + "attn.q", H, H, true);
            add_param(p + "attn.k", H, H, true);
            add_param(p + "attn.v", H, H, true);
            add_param(p + "attn.o", H, H, true);
            add_param(p + "ln2.g", 1, H, false);
            add_param(p + "ln2.b", 1, H, false);
            add_param(p + "ff.w1", F, H, true);
            add_param(p + "ff.b1", 1, F, false);
            add_param(p + "ff.w2", H, F, true);
            add_param(p + "ff.b2", 1, H, false);
        }
        add_param("ln_f.g", 1, H, false);
        add_param("ln_f.b", 1, H, false);
        if (!config_.tied_embeddings) add_param("out_emb", config_.vocab_size, H, false);
        if (is_sclm(config_.variant)) add_param("scaffold", config_.ngram_vocab_size, H, true);
    }

    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        const double resid_std = config_.init_std / std::sqrt(2.0 * static_cast<double>(config_.layers));
        for (auto& p : params_) {
            const bool gain = p.name.ends_with(".g");
            const bool bias = p.name.ends_with(".b") || p.name.ends_with(".b1") || p.name.ends_with(".b2");
            if (gain) {
                p.value.fill(T(1));
            } else if (bias) {
                p.value.fill(T(0));
            } else {
                const bool resid = p.name.ends_with("attn.o") || p.name.ends_with("ff.w2");
                const double sd = resid ? resid_std : config_.init_std;
                for (auto& v : p.value.values()) v = static_cast<T>(rng.normal() * sd);
            }
        }
    }

    ModelConfig config_;
    std::vector<Parameter<T>> params_;
};

// ---------------------------------------------------------------------------
// Training examples and losses.

/// Encoded inputs/targets for one sentence under one variant.
struct Example {
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<int> ngram_targets;   // ScLM only; -1 = ignored (PAD)
    std::vector<HeadMaskRow> masks;   // PLM-mask only
    std::size_t predictions = 0;      // actions (PLM) or words (LM/ScLM)
    std::size_t words = 0;
};

/// Scaffold targets as n-gram ids, PAD included (ScLM-past's first target).
/// NEXT: the n-gram preceding w_t, predicted where w_t is predicted.
/// PAST: the n-gram preceding w_{t-1} at that same output position.
inline std::vector<int> scaffold_targets(Variant variant, const NGramVocab& ngrams, const SyncSegmentation& seg) {
    if (!is_sclm(variant)) throw Error(Errc::VariantMismatch, "scaffold targets need an sclm variant");
    std::vector<int> out;
    out.reserve(seg.segments.size());
    for (std::size_t t = 0; t < seg.segments.size(); ++t) {
        if (variant == Variant::ScLmNext) {
            out.push_back(ngrams.encode(seg.segments[t].preceding_ngram));
        } else {
            out.push_back(t == 0 ? NGramVocab::kPad : ngrams.encode(seg.segments[t - 1].preceding_ngram));
        }
    }
    return out;
}

inline Example make_example(const ModelConfig& config, const Vocabulary& vocab, const ActionSequence& actions) {
    Example ex;
    if (is_plm(config.variant)) {
        std::vector<int> ids = vocab.joint.encode(actions);
        if (ids.size() < 2) throw Error(Errc::IncompleteSequence, "oracle has no predictions");
        ex.inputs.assign(ids.begin(), ids.end() - 1);
        ex.targets.assign(ids.begin() + 1, ids.end());
        if (config.variant == Variant::PlmMask) {
            ex.masks = head_masks(ActionSequence(actions.begin(), actions.end() - 1));
        }
        ex.predictions = ex.targets.size();
        for (const Action& a : actions) ex.words += a.is_word() ? 1 : 0;
        return ex;
    }
    const SyncSegmentation seg = sync_ngrams(actions);
    if (seg.segments.empty()) throw Error(Errc::IncompleteSequence, "sentence has no words");
    ex.inputs.push_back(TokenVocab::kBos);
    for (std::size_t t = 0; t < seg.segments.size(); ++t) {
        const int id = vocab.tokens().encode(seg.segments[t].word);
        if (t + 1 < seg.segments.size()) ex.inputs.push_back(id);
        ex.targets.push_back(id);
    }
    if (is_sclm(config.variant)) {
        ex.ngram_targets = scaffold_targets(config.variant, vocab.ngrams, seg);
        for (int& g : ex.ngram_targets) {
            if (g == NGramVocab::kPad) g = -1;
        }
    }
    ex.predictions = ex.targets.size();
    ex.words = ex.targets.size();
    return ex;
}

inline Example make_example(const ModelConfig& config, const Vocabulary& vocab, const Tree& tree) {
    return make_example(config, vocab, oracle(tree));
}

/// Word-only example (no structure needed) for LM/ScLM scoring.
inline Example make_word_example(const ModelConfig& config, const Vocabulary& vocab, const std::vector<std::string>& words) {
    if (is_plm(config.variant)) throw Error(Errc::MissingGoldParse, "plm variants need an action sequence");
    if (words.empty()) throw Error(Errc::IncompleteSequence, "empty sentence");
    Example ex;
    ex.inputs.push_back(TokenVocab::kBos);
    for (std::size_t t = 0; t < words.size(); ++t) {
        const int id = vocab.tokens().encode(words[t]);
        if (t + 1 < words.size()) ex.inputs.push_back(id);
        ex.targets.push_back(id);
    }
    ex.predictions = ex.words = words.size();
    return ex;
}

template <typename T>
struct LossTerms {
    Var<T> total;  // primary + lambda * scaffold, summed over predictions
    Var<T> primary;
    std::optional<Var<T>> scaffold;
};

/// Summed negative log-likelihood of an example.
template <typename T>
LossTerms<T> example_loss(Tape<T>& tape, Transformer<T>& model, const Example& ex, const ForwardOptions& opts = {}) {
    const ModelConfig& c = model.config();
    const auto* masks = c.variant == Variant::PlmMask ? &ex.masks : nullptr;
    ForwardResult<T> fw = model.forward(tape, ex.inputs, masks, opts);
    LossTerms<T> out;
    out.primary = cross_entropy(tape, fw.logits, ex.targets);
    out.total = out.primary;
    if (is_sclm(c.variant) && !ex.ngram_targets.empty()) {
        Var<T> g = cross_entropy(tape, model.scaffold_logits(tape, fw.hidden), ex.ngram_targets);
        out.scaffold = g;
        out.total = add(tape, out.primary, scale(tape, g, static_cast<T>(c.scaffold_weight)));
    }
    return out;
}

enum class LossReduction { Sum, Mean };

/// Joint action NLL of a PLM over the R-1 next-action predictions.
template <typename T>
Var<T> plm_loss(Tape<T>& tape, Transformer<T>& model, const Vocabulary& vocab, const ActionSequence& oracle_actions,
                LossReduction reduction = LossReduction::Mean, const ForwardOptions& opts = {}) {
    if (!is_plm(model.config().variant)) throw Error(Errc::VariantMismatch, "plm_loss needs a plm variant");
    Example ex = make_example(model.config(), vocab, oracle_actions);
    Var<T> loss = example_loss(tape, model, ex, opts).total;
    if (reduction == LossReduction::Mean) loss = scale(tape, loss, T(1) / static_cast<T>(ex.predictions));
    return loss;
}

/// Word NLL + lambda * scaffold NLL, summed.
template <typename T>
Var<T> sclm_loss(Tape<T>& tape, Transformer<T>& model, const Vocabulary& vocab, const SyncSegmentation& segments,
                 const ForwardOptions& opts = {}) {
    if (!is_sclm(model.config().variant)) throw Error(Errc::VariantMismatch, "sclm_loss needs an sclm variant");
    Example ex = make_example(model.config(), vocab, concat_segments(segments));
    return example_loss(tape, model, ex, opts).total;
}

}  // namespace synlm
