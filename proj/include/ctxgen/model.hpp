#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctxgen/rng.hpp"
#include "ctxgen/tensor.hpp"

namespace ctxgen {

struct ModelConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int vocab_size = 256;
    int max_positions = 128;
    int feedforward_width = 256;

    void validate() const {
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || vocab_size < 1 ||
            max_positions < 1 || feedforward_width < 1) {
            throw std::invalid_argument("ModelConfig: all sizes must be positive");
        }
        if (d_model % n_heads != 0) {
            throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
        }
    }
};

struct NamedParam {
    std::string name;
    Tensor tensor;
    bool is_bias;  // additive bias or layer-norm shift
};

namespace detail {

constexpr real kInitStd = real(0.02);

struct Linear {
    Tensor weight;  // (in x out)
    Tensor bias;    // (out)

    static Linear init(int in, int out, Rng& rng) {
        Linear l;
        l.weight = Tensor::randn({in, out}, rng, kInitStd, true);
        l.bias = Tensor::zeros({out}, true);
        return l;
    }

    Tensor forward(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + ".weight", weight, false});
        out.push_back({prefix + ".bias", bias, true});
    }
};

struct LayerNorm {
    Tensor gain;
    Tensor shift;

    static LayerNorm init(int width) {
        LayerNorm ln;
        ln.gain = Tensor::full({width}, real(1), true);
        ln.shift = Tensor::zeros({width}, true);
        return ln;
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, shift); }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + ".gain", gain, false});
        out.push_back({prefix + ".shift", shift, true});
    }
};

struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    int n_heads = 1;

    static MultiHeadAttention init(int d_model, int n_heads, Rng& rng) {
        MultiHeadAttention a;
        a.wq = Linear::init(d_model, d_model, rng);
        a.wk = Linear::init(d_model, d_model, rng);
        a.wv = Linear::init(d_model, d_model, rng);
        a.wo = Linear::init(d_model, d_model, rng);
        a.n_heads = n_heads;
        return a;
    }

    /// Attention from q_input (Tq x d) over kv_input (Tk x d). With causal
    /// set, query t attends only to keys <= t (valid when Tq == Tk).
    Tensor forward(const Tensor& q_input, const Tensor& kv_input, bool causal) const {
        const int d = q_input.cols();
        const int head_dim = d / n_heads;
        const int tq = q_input.rows();
        const int tk = kv_input.rows();
        const Tensor q = wq.forward(q_input);
        const Tensor k = wk.forward(kv_input);
        const Tensor v = wv.forward(kv_input);
        std::vector<std::uint8_t> allowed;
        if (causal) {
            allowed.assign(static_cast<std::size_t>(tq) * tk, 0);
            for (int i = 0; i < tq; ++i) {
                for (int j = 0; j <= i && j < tk; ++j) {
                    allowed[static_cast<std::size_t>(i) * tk + j] = 1;
                }
            }
        }
        std::vector<Tensor> heads;
        heads.reserve(static_cast<std::size_t>(n_heads));
        const real inv_scale = real(1) / std::sqrt(static_cast<real>(head_dim));
        for (int h = 0; h < n_heads; ++h) {
            const Tensor qh = slice_cols(q, h * head_dim, (h + 1) * head_dim);
            const Tensor kh = slice_cols(k, h * head_dim, (h + 1) * head_dim);
            const Tensor vh = slice_cols(v, h * head_dim, (h + 1) * head_dim);
            const Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
            const Tensor weights =
                causal ? masked_row_softmax(scores, allowed) : softmax(scores, 1);
            heads.push_back(matmul(weights, vh));
        }
        return wo.forward(concat_cols(heads));
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
    }
};

struct FeedForward {
    Linear w1, w2;

    static FeedForward init(int d_model, int hidden, Rng& rng) {
        FeedForward f;
        f.w1 = Linear::init(d_model, hidden, rng);
        f.w2 = Linear::init(hidden, d_model, rng);
        return f;
    }

    Tensor forward(const Tensor& x) const { return w2.forward(gelu(w1.forward(x))); }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        w1.collect(prefix + ".w1", out);
        w2.collect(prefix + ".w2", out);
    }
};

// Pre-layer-norm residual blocks throughout.
struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;

    static EncoderLayer init(const ModelConfig& cfg, Rng& rng) {
        EncoderLayer l;
        l.ln1 = LayerNorm::init(cfg.d_model);
        l.ln2 = LayerNorm::init(cfg.d_model);
        l.attn = MultiHeadAttention::init(cfg.d_model, cfg.n_heads, rng);
        l.ffn = FeedForward::init(cfg.d_model, cfg.feedforward_width, rng);
        return l;
    }

    Tensor forward(const Tensor& x) const {
        const Tensor normed = ln1.forward(x);
        const Tensor after_attn = add(x, attn.forward(normed, normed, false));
        return add(after_attn, ffn.forward(ln2.forward(after_attn)));
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        ln1.collect(prefix + ".ln1", out);
        attn.collect(prefix + ".attn", out);
        ln2.collect(prefix + ".ln2", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

struct DecoderLayer {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;

    static DecoderLayer init(const ModelConfig& cfg, Rng& rng) {
        DecoderLayer l;
        l.ln1 = LayerNorm::init(cfg.d_model);
        l.ln2 = LayerNorm::init(cfg.d_model);
        l.ln3 = LayerNorm::init(cfg.d_model);
        l.self_attn = MultiHeadAttention::init(cfg.d_model, cfg.n_heads, rng);
        l.cross_attn = MultiHeadAttention::init(cfg.d_model, cfg.n_heads, rng);
        l.ffn = FeedForward::init(cfg.d_model, cfg.feedforward_width, rng);
        return l;
    }

    Tensor forward(const Tensor& x, const Tensor& memory) const {
        const Tensor normed = ln1.forward(x);
        Tensor h = add(x, self_attn.forward(normed, normed, true));
        h = add(h, cross_attn.forward(ln2.forward(h), memory, false));
        return add(h, ffn.forward(ln3.forward(h)));
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        ln1.collect(prefix + ".ln1", out);
        self_attn.collect(prefix + ".self_attn", out);
        ln2.collect(prefix + ".ln2", out);
        cross_attn.collect(prefix + ".cross_attn", out);
        ln3.collect(prefix + ".ln3", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

}  // namespace detail

/// Bidirectional encoder with a token-prediction head: every output position
/// attends to every input position. Serves as the prompt generator.
class MaskedEncoder {
public:
    MaskedEncoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        tok_embed_ = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng,
                                   detail::kInitStd, true);
        pos_embed_ = Tensor::randn({cfg.max_positions, cfg.d_model}, rng,
                                   detail::kInitStd, true);
        layers_.reserve(static_cast<std::size_t>(cfg.n_layers));
        for (int i = 0; i < cfg.n_layers; ++i) {
            layers_.push_back(detail::EncoderLayer::init(cfg, rng));
        }
        ln_final_ = detail::LayerNorm::init(cfg.d_model);
        prediction_head_ = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng,
                                         detail::kInitStd, true);
    }

    /// Top-layer hidden states for every position, (len x d_model).
    Tensor encode(std::span<const int> token_ids) const {
        if (token_ids.empty()) {
            throw std::invalid_argument("MaskedEncoder::encode: empty input");
        }
        if (static_cast<int>(token_ids.size()) > cfg_.max_positions) {
            throw std::invalid_argument("MaskedEncoder::encode: input longer than max_positions");
        }
        const int len = static_cast<int>(token_ids.size());
        Tensor x = add(embedding(tok_embed_, token_ids), slice_rows(pos_embed_, 0, len));
        for (const auto& layer : layers_) {
            x = layer.forward(x);
        }
        return ln_final_.forward(x);
    }

    /// Vocabulary logits for a block of states: states . head^T, (n x V).
    Tensor prediction_logits(const Tensor& states) const {
        if (states.cols() != cfg_.d_model) {
            throw std::invalid_argument("MaskedEncoder::prediction_logits: state width mismatch");
        }
        return matmul(states, transpose(prediction_head_));
    }

    const Tensor& prediction_head() const { return prediction_head_; }
    const ModelConfig& config() const { return cfg_; }

    std::vector<NamedParam> named_parameters() const {
        std::vector<NamedParam> out;
        out.push_back({"tok_embed.weight", tok_embed_, false});
        out.push_back({"pos_embed.weight", pos_embed_, false});
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i].collect("layers." + std::to_string(i), out);
        }
        ln_final_.collect("ln_final", out);
        out.push_back({"prediction_head.weight", prediction_head_, false});
        return out;
    }

private:
    ModelConfig cfg_;
    Tensor tok_embed_;
    Tensor pos_embed_;
    std::vector<detail::EncoderLayer> layers_;
    detail::LayerNorm ln_final_;
    Tensor prediction_head_;
};

struct SeqForward {
    Tensor loss;                        // scalar, mean over supervised positions
    Tensor log_probs;                   // (positions x V), detached
    std::vector<real> gold_logprobs;    // log p(gold) per supervised position
    int n_positions = 0;
};

/// Encoder-decoder generator. One embedding matrix is shared by the encoder
/// input, the decoder input, and the output projection.
class Seq2SeqModel {
public:
    Seq2SeqModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        tok_embed_ = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng,
                                   detail::kInitStd, true);
        pos_enc_ = Tensor::randn({cfg.max_positions, cfg.d_model}, rng,
                                 detail::kInitStd, true);
        pos_dec_ = Tensor::randn({cfg.max_positions, cfg.d_model}, rng,
                                 detail::kInitStd, true);
        enc_layers_.reserve(static_cast<std::size_t>(cfg.n_layers));
        dec_layers_.reserve(static_cast<std::size_t>(cfg.n_layers));
        for (int i = 0; i < cfg.n_layers; ++i) {
            enc_layers_.push_back(detail::EncoderLayer::init(cfg, rng));
            dec_layers_.push_back(detail::DecoderLayer::init(cfg, rng));
        }
        ln_enc_final_ = detail::LayerNorm::init(cfg.d_model);
        ln_dec_final_ = detail::LayerNorm::init(cfg.d_model);
    }

    const ModelConfig& config() const { return cfg_; }
    const Tensor& embedding_matrix() const { return tok_embed_; }

    Tensor embed(std::span<const int> ids) const { return embedding(tok_embed_, ids); }

    /// Runs the bidirectional encoder over an already-embedded source.
    Tensor encode(const Tensor& source_embeddings) const {
        if (source_embeddings.cols() != cfg_.d_model) {
            throw std::invalid_argument("Seq2SeqModel::encode: source width mismatch");
        }
        const int len = source_embeddings.rows();
        if (len > cfg_.max_positions) {
            throw std::invalid_argument("Seq2SeqModel::encode: source longer than max_positions");
        }
        Tensor x = add(source_embeddings, slice_rows(pos_enc_, 0, len));
        for (const auto& layer : enc_layers_) {
            x = layer.forward(x);
        }
        return ln_enc_final_.forward(x);
    }

    /// Causal decoder states for a target prefix, (len x d_model).
    Tensor decode_states(const Tensor& memory, std::span<const int> target_prefix) const {
        if (target_prefix.empty()) {
            throw std::invalid_argument("Seq2SeqModel::decode_states: empty prefix");
        }
        if (static_cast<int>(target_prefix.size()) > cfg_.max_positions) {
            throw std::invalid_argument("Seq2SeqModel::decode_states: prefix longer than max_positions");
        }
        const int len = static_cast<int>(target_prefix.size());
        Tensor x = add(embedding(tok_embed_, target_prefix), slice_rows(pos_dec_, 0, len));
        for (const auto& layer : dec_layers_) {
            x = layer.forward(x, memory);
        }
        return ln_dec_final_.forward(x);
    }

    /// Output projection through the shared embedding: states . E^T.
    Tensor output_logits(const Tensor& states) const {
        return matmul(states, transpose(tok_embed_));
    }

    /// Teacher-forced pass: target_ids must start with `bos` and end with
    /// `eos`; the loss covers every position after BOS.
    SeqForward forward(const Tensor& source_embeddings, std::span<const int> target_ids,
                       int bos, int eos) const {
        if (target_ids.size() < 2 || target_ids.front() != bos ||
            target_ids.back() != eos) {
            throw std::invalid_argument(
                "Seq2SeqModel::forward: target must begin with BOS and end with EOS");
        }
        const Tensor memory = encode(source_embeddings);
        const std::span<const int> dec_in = target_ids.subspan(0, target_ids.size() - 1);
        const std::span<const int> gold = target_ids.subspan(1);
        const Tensor states = decode_states(memory, dec_in);
        const Tensor logits = output_logits(states);

        SeqForward result;
        result.n_positions = static_cast<int>(gold.size());
        result.loss = cross_entropy(logits, gold);
        const int v = logits.cols();
        std::vector<real> lp(logits.values().size());
        result.gold_logprobs.resize(gold.size());
        for (int i = 0; i < result.n_positions; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * v;
            const real lse = detail::logsumexp_row(logits.values().data() + base, v);
            for (int j = 0; j < v; ++j) {
                lp[base + j] = logits.values()[base + j] - lse;
            }
            result.gold_logprobs[static_cast<std::size_t>(i)] =
                lp[base + gold[static_cast<std::size_t>(i)]];
        }
        result.log_probs = Tensor::from_values({result.n_positions, v}, std::move(lp));
        return result;
    }

    std::vector<NamedParam> named_parameters() const {
        std::vector<NamedParam> out;
        out.push_back({"tok_embed.weight", tok_embed_, false});
        out.push_back({"pos_enc.weight", pos_enc_, false});
        out.push_back({"pos_dec.weight", pos_dec_, false});
        for (std::size_t i = 0; i < enc_layers_.size(); ++i) {
            enc_layers_[i].collect("enc_layers." + std::to_string(i), out);
        }
        ln_enc_final_.collect("ln_enc_final", out);
        for (std::size_t i = 0; i < dec_layers_.size(); ++i) {
            dec_layers_[i].collect("dec_layers." + std::to_string(i), out);
        }
        ln_dec_final_.collect("ln_dec_final", out);
        return out;
    }

private:
    ModelConfig cfg_;
    Tensor tok_embed_;
    Tensor pos_enc_;
    Tensor pos_dec_;
    std::vector<detail::EncoderLayer> enc_layers_;
    std::vector<detail::DecoderLayer> dec_layers_;
    detail::LayerNorm ln_enc_final_;
    detail::LayerNorm ln_dec_final_;
};

inline std::int64_t parameter_count(const std::vector<NamedParam>& params) {
    std::int64_t n = 0;
    for (const NamedParam& p : params) {
        n += p.tensor.size();
    }
    return n;
}

}  // namespace ctxgen
