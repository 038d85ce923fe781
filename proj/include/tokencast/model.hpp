#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tokencast/errors.hpp"
#include "tokencast/rng.hpp"
#include "tokencast/tensor.hpp"

// Decoder-only transformer over return tokens: summed token + position
// embeddings, a stack of pre-norm causal attention blocks, a final norm and
// a linear projection to per-token logits. Position t's logits depend only
// on tokens 0..t.

namespace tokencast {

struct ModelConfig {
    std::int64_t vocab_size = 402;
    std::int64_t block_size = 256;
    std::int64_t d_model = 128;
    std::int64_t n_blocks = 4;
    std::int64_t n_heads = 4;
    float dropout_p = 0.2f;

    std::int64_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
        if (block_size < 1) throw ConfigError("block_size must be >= 1");
        if (d_model < 1 || n_blocks < 1 || n_heads < 1)
            throw ConfigError("d_model, n_blocks and n_heads must be >= 1");
        if (d_model % n_heads != 0)
            throw ConfigError("d_model (" + std::to_string(d_model) +
                              ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
        if (!(dropout_p >= 0.0f && dropout_p < 1.0f))
            throw ConfigError("dropout_p must be in [0, 1)");
    }
};

struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wproj, bproj;
    Tensor ln2_gain, ln2_bias;
    Tensor w_expand, b_expand, w_contract, b_contract;
};

struct ModelParams {
    ModelConfig config;
    Tensor token_embedding;       // [vocab x d]
    Tensor positional_embedding;  // [block x d]
    std::vector<BlockParams> blocks;
    Tensor final_ln_gain, final_ln_bias;
    Tensor head;  // [d x vocab], no bias, not tied to the token embedding

    // Weight matrices and embeddings draw from normal(0, 0.02); biases start
    // at zero, norm gains at one. The draw order below is fixed so a given
    // seed always produces the same model.
    static ModelParams init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        constexpr float kInitSd = 0.02f;
        const auto d = cfg.d_model;
        ModelParams p;
        p.config = cfg;
        p.token_embedding = Tensor::randn({cfg.vocab_size, d}, rng, kInitSd, true);
        p.positional_embedding = Tensor::randn({cfg.block_size, d}, rng, kInitSd, true);
        for (std::int64_t b = 0; b < cfg.n_blocks; ++b) {
            BlockParams bp;
            bp.ln1_gain = Tensor::ones({d}, true);
            bp.ln1_bias = Tensor::zeros({d}, true);
            bp.wq = Tensor::randn({d, d}, rng, kInitSd, true);
            bp.bq = Tensor::zeros({d}, true);
            bp.wk = Tensor::randn({d, d}, rng, kInitSd, true);
            bp.bk = Tensor::zeros({d}, true);
            bp.wv = Tensor::randn({d, d}, rng, kInitSd, true);
            bp.bv = Tensor::zeros({d}, true);
            bp.wproj = Tensor::randn({d, d}, rng, kInitSd, true);
            bp.bproj = Tensor::zeros({d}, true);
            bp.ln2_gain = Tensor::ones({d}, true);
            bp.ln2_bias = Tensor::zeros({d}, true);
            bp.w_expand = Tensor::randn({d, 4 * d}, rng, kInitSd, true);
            bp.b_expand = Tensor::zeros({4 * d}, true);
            bp.w_contract = Tensor::randn({4 * d, d}, rng, kInitSd, true);
            bp.b_contract = Tensor::zeros({d}, true);
            p.blocks.push_back(std::move(bp));
        }
        p.final_ln_gain = Tensor::ones({d}, true);
        p.final_ln_bias = Tensor::zeros({d}, true);
        p.head = Tensor::randn({d, cfg.vocab_size}, rng, kInitSd, true);
        return p;
    }

    // Canonical (name, tensor) listing. Checkpoints, the optimizer and the
    // parameter count all follow this order.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("token_embedding", token_embedding);
        out.emplace_back("positional_embedding", positional_embedding);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto& bp = blocks[b];
            const std::string pre = "block" + std::to_string(b) + ".";
            out.emplace_back(pre + "ln1_gain", bp.ln1_gain);
            out.emplace_back(pre + "ln1_bias", bp.ln1_bias);
            out.emplace_back(pre + "wq", bp.wq);
            out.emplace_back(pre + "bq", bp.bq);
            out.emplace_back(pre + "wk", bp.wk);
            out.emplace_back(pre + "bk", bp.bk);
            out.emplace_back(pre + "wv", bp.wv);
            out.emplace_back(pre + "bv", bp.bv);
            out.emplace_back(pre + "wproj", bp.wproj);
            out.emplace_back(pre + "bproj", bp.bproj);
            out.emplace_back(pre + "ln2_gain", bp.ln2_gain);
            out.emplace_back(pre + "ln2_bias", bp.ln2_bias);
            out.emplace_back(pre + "w_expand", bp.w_expand);
            out.emplace_back(pre + "b_expand", bp.b_expand);
            out.emplace_back(pre + "w_contract", bp.w_contract);
            out.emplace_back(pre + "b_contract", bp.b_contract);
        }
        out.emplace_back("final_ln_gain", final_ln_gain);
        out.emplace_back("final_ln_bias", final_ln_bias);
        out.emplace_back("head", head);
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    void zero_grad() const {
        for (auto t : parameters()) t.zero_grad();
    }
};

// Exact learnable-scalar count of the parameterization above.
inline std::int64_t count_params(const ModelConfig& cfg) {
    cfg.validate();
    const std::int64_t d = cfg.d_model;
    const std::int64_t embeddings = cfg.vocab_size * d + cfg.block_size * d;
    const std::int64_t per_block = 2 * d                // ln1
                                   + 4 * (d * d + d)    // q, k, v, proj with biases
                                   + 2 * d              // ln2
                                   + (d * 4 * d + 4 * d)  // expand
                                   + (4 * d * d + d);     // contract
    const std::int64_t tail = 2 * d + d * cfg.vocab_size;  // final norm + head
    return embeddings + cfg.n_blocks * per_block + tail;
}

// One pre-norm block: x + Drop(Proj(MultiHead(LN(x)))) followed by
// x + Drop(Contract(ReLU(Expand(LN(x))))). Attention heads use causal
// scaled dot-product with softmax weights over positions 0..t.
inline Tensor attention_block(Tape& tape, const Tensor& x, const BlockParams& bp,
                              const ModelConfig& cfg, Mode mode, Rng& rng) {
    const auto hd = cfg.head_dim();
    const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));

    Tensor h = layer_norm(tape, x, bp.ln1_gain, bp.ln1_bias);
    Tensor q = add_bias(tape, matmul(tape, h, bp.wq), bp.bq);
    Tensor k = add_bias(tape, matmul(tape, h, bp.wk), bp.bk);
    Tensor v = add_bias(tape, matmul(tape, h, bp.wv), bp.bv);

    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (std::int64_t hidx = 0; hidx < cfg.n_heads; ++hidx) {
        const auto c0 = hidx * hd, c1 = (hidx + 1) * hd;
        Tensor qh = slice_cols(tape, q, c0, c1);
        Tensor kh = slice_cols(tape, k, c0, c1);
        Tensor vh = slice_cols(tape, v, c0, c1);
        Tensor scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_hd);
        Tensor weights = softmax_causal(tape, scores);
        head_outs.push_back(matmul(tape, weights, vh));
    }
    Tensor att = concat_cols(tape, head_outs);
    Tensor proj = add_bias(tape, matmul(tape, att, bp.wproj), bp.bproj);
    Tensor x1 = add(tape, x, dropout(tape, proj, cfg.dropout_p, mode, rng));

    Tensor h2 = layer_norm(tape, x1, bp.ln2_gain, bp.ln2_bias);
    Tensor e = relu(tape, add_bias(tape, matmul(tape, h2, bp.w_expand), bp.b_expand));
    Tensor c = add_bias(tape, matmul(tape, e, bp.w_contract), bp.b_contract);
    return add(tape, x1, dropout(tape, c, cfg.dropout_p, mode, rng));
}

// Full forward pass: [T] token ids -> [T x vocab] logits.
inline Tensor forward(Tape& tape, const ModelParams& params, std::span<const std::int32_t> tokens,
                      Mode mode, Rng& rng) {
    const auto& cfg = params.config;
    const auto T = static_cast<std::int64_t>(tokens.size());
    if (T < 1) throw DataError("forward: empty token sequence");
    if (T > cfg.block_size)
        throw DataError("forward: sequence length " + std::to_string(T) +
                        " exceeds block size " + std::to_string(cfg.block_size));
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size)
            throw IndexError("forward: token " + std::to_string(tokens[i]) + " at position " +
                             std::to_string(i) + " outside vocabulary");

    std::vector<std::int32_t> positions(static_cast<std::size_t>(T));
    for (std::int64_t i = 0; i < T; ++i) positions[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);

    Tensor tok = embedding(tape, params.token_embedding, tokens);
    Tensor pos = embedding(tape, params.positional_embedding, positions);
    Tensor x = dropout(tape, add(tape, tok, pos), cfg.dropout_p, mode, rng);
    for (const auto& bp : params.blocks) x = attention_block(tape, x, bp, cfg, mode, rng);
    x = layer_norm(tape, x, params.final_ln_gain, params.final_ln_bias);
    return matmul(tape, x, params.head);
}

// Deterministic inference convenience: no tape bookkeeping, dropout off.
inline Tensor forward_eval(const ModelParams& params, std::span<const std::int32_t> tokens) {
    Tape tape = Tape::no_grad();
    Rng unused(0);
    return forward(tape, params, tokens, Mode::kEval, unused);
}

}  // namespace tokencast
