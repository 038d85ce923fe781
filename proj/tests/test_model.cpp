#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "support/gradcheck.hpp"
#include "tokencast/checkpoint.hpp"
#include "tokencast/model.hpp"

using namespace tokencast;

namespace {

ModelConfig shrunk_config() {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.block_size = 4;
    cfg.d_model = 8;
    cfg.n_blocks = 1;
    cfg.n_heads = 2;
    cfg.dropout_p = 0.0f;
    return cfg;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig cfg;
    cfg.validate();
    CHECK(cfg.head_dim() == 32);
    cfg.n_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // 128 % 3 != 0
    cfg = ModelConfig{};
    cfg.vocab_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("parameter count: closed form equals the enumerated tensors") {
    const ModelConfig cfg;
    const std::int64_t counted = count_params(cfg);
    CHECK(counted >= 910'000);
    CHECK(counted <= 950'000);

    Rng rng(1);
    const ModelParams params = ModelParams::init(cfg, rng);
    std::int64_t enumerated = 0;
    for (const auto& [name, t] : params.named_parameters()) enumerated += t.numel();
    CHECK(enumerated == counted);

    // Independent hand computation, field by field, for the default config:
    // embeddings 402*128 + 256*128; per block: 2 norms (2*128 each), four
    // d x d linears with bias, the 4x expand and its contraction; final
    // norm and the 128 x 402 head without bias.
    const std::int64_t hand = 402 * 128 + 256 * 128 +
                              4 * (2 * 128 + 4 * (128 * 128 + 128) + 2 * 128 +
                                   (128 * 512 + 512) + (512 * 128 + 128)) +
                              2 * 128 + 128 * 402;
    CHECK(counted == hand);
}

TEST_CASE("parameter count: small config and block linearity") {
    ModelConfig tiny;
    tiny.vocab_size = 2;
    tiny.block_size = 1;
    tiny.d_model = 2;
    tiny.n_blocks = 1;
    tiny.n_heads = 1;
    // embeddings: 2*2 + 1*2 = 6; block: ln 4 + qkvp 4*(4+2)=24 + ln 4 +
    // expand (2*8+8)=24 + contract (8*2+2)=18 -> 74; tail: 4 + 2*2 = 8.
    CHECK(count_params(tiny) == 6 + 74 + 8);

    ModelConfig one = shrunk_config(), two = shrunk_config();
    two.n_blocks = 2;
    const std::int64_t per_block = count_params(two) - count_params(one);
    ModelConfig four = shrunk_config();
    four.n_blocks = 4;
    CHECK(count_params(four) == count_params(one) + 3 * per_block);
}

TEST_CASE("forward shapes and probability rows") {
    Rng rng(2);
    const ModelParams params = ModelParams::init(shrunk_config(), rng);
    std::vector<std::int32_t> tokens = {3};
    Tensor logits = forward_eval(params, tokens);
    REQUIRE(logits.shape() == Shape{1, 11});
    Tape tape(false);
    Tensor probs = softmax(tape, logits);
    double s = 0;
    for (int j = 0; j < 11; ++j) s += probs.at(0, j);
    CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("forward input contracts") {
    Rng rng(3);
    const ModelParams params = ModelParams::init(shrunk_config(), rng);
    std::vector<std::int32_t> too_long = {1, 2, 3, 4, 5};
    CHECK_THROWS_AS(forward_eval(params, too_long), DataError);
    std::vector<std::int32_t> oob = {1, 11};
    CHECK_THROWS_AS(forward_eval(params, oob), IndexError);
    std::vector<std::int32_t> empty;
    CHECK_THROWS_AS(forward_eval(params, empty), DataError);
}

TEST_CASE("causality: earlier logits are bit-identical under later perturbations") {
    ModelConfig cfg = shrunk_config();
    cfg.block_size = 16;
    Rng rng(4);
    const ModelParams params = ModelParams::init(cfg, rng);

    std::vector<std::int32_t> tokens(16);
    for (int i = 0; i < 16; ++i) tokens[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(11));
    const Tensor base = forward_eval(params, tokens);

    Rng probe(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto j = 1 + probe.uniform_int(15);
        auto perturbed = tokens;
        perturbed[static_cast<std::size_t>(j)] =
            static_cast<std::int32_t>(probe.uniform_int(11));
        const Tensor out = forward_eval(params, perturbed);
        for (std::int64_t pos = 0; pos < j; ++pos)
            for (std::int64_t v = 0; v < 11; ++v)
                REQUIRE(out.at(pos, v) == base.at(pos, v));
    }
}

TEST_CASE("attention weights: uniform q,k give 1/(t+1) and T=1 passes v through") {
    // With Wq = Wk = 0 every score is zero, so each position averages the
    // value vectors of its prefix uniformly.
    ModelConfig cfg = shrunk_config();
    Rng rng(6);
    ModelParams params = ModelParams::init(cfg, rng);
    auto& bp = params.blocks[0];
    std::fill(bp.wq.values().begin(), bp.wq.values().end(), 0.0f);
    std::fill(bp.wk.values().begin(), bp.wk.values().end(), 0.0f);

    Tape tape(false);
    Rng dr(0);
    Tensor x = Tensor::randn({4, cfg.d_model}, rng, 1.0f);
    Tensor h = layer_norm(tape, x, bp.ln1_gain, bp.ln1_bias);
    Tensor q = add_bias(tape, matmul(tape, h, bp.wq), bp.bq);
    Tensor k = add_bias(tape, matmul(tape, h, bp.wk), bp.bk);
    Tensor scores = scale(tape, matmul_nt(tape, slice_cols(tape, q, 0, cfg.head_dim()),
                                          slice_cols(tape, k, 0, cfg.head_dim())),
                          1.0f / std::sqrt(static_cast<float>(cfg.head_dim())));
    Tensor w = softmax_causal(tape, scores);
    for (std::int64_t t = 0; t < 4; ++t)
        for (std::int64_t j = 0; j <= t; ++j)
            CHECK_THAT(w.at(t, j), Catch::Matchers::WithinAbs(1.0 / (t + 1.0), 1e-6));

    // T=1: the block's attention output is exactly its value vector, so the
    // first residual becomes x + proj(v) + mlp-path; check the weights case
    // directly instead: a single query attends to itself with weight 1.
    Tensor single = softmax_causal(tape, Tensor::from({1, 1}, {0.37f}));
    CHECK(single.at(0, 0) == 1.0f);
}

TEST_CASE("per-head attention weights are a distribution over the prefix") {
    ModelConfig cfg = shrunk_config();
    cfg.block_size = 8;
    Rng rng(7);
    const ModelParams params = ModelParams::init(cfg, rng);
    // Rebuild one block's attention internals and check softmax rows.
    const auto& bp = params.blocks[0];
    Tape tape(false);
    Tensor x = Tensor::randn({8, cfg.d_model}, rng, 1.0f);
    Tensor h = layer_norm(tape, x, bp.ln1_gain, bp.ln1_bias);
    Tensor q = add_bias(tape, matmul(tape, h, bp.wq), bp.bq);
    Tensor k = add_bias(tape, matmul(tape, h, bp.wk), bp.bk);
    for (std::int64_t head = 0; head < cfg.n_heads; ++head) {
        Tensor qh = slice_cols(tape, q, head * cfg.head_dim(), (head + 1) * cfg.head_dim());
        Tensor kh = slice_cols(tape, k, head * cfg.head_dim(), (head + 1) * cfg.head_dim());
        Tensor w = softmax_causal(
            tape, scale(tape, matmul_nt(tape, qh, kh),
                        1.0f / std::sqrt(static_cast<float>(cfg.head_dim()))));
        for (std::int64_t t = 0; t < 8; ++t) {
            double s = 0;
            for (std::int64_t j = 0; j <= t; ++j) {
                CHECK(w.at(t, j) >= 0.0f);
                s += w.at(t, j);
            }
            CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
        }
    }
}

TEST_CASE("attention block gradient vs finite differences (T=3, d=8)") {
    ModelConfig cfg = shrunk_config();
    Rng rng(8);
    const ModelParams params = ModelParams::init(cfg, rng);
    const auto& bp = params.blocks[0];
    Tensor x = Tensor::randn({3, cfg.d_model}, rng, 1.0f, true);
    Tensor w = Tensor::randn({3, cfg.d_model}, rng, 1.0f, false);
    Rng dropout_rng(0);

    std::vector<Tensor> checked = {x, bp.wq, bp.bq, bp.wv, bp.wproj, bp.w_expand,
                                   bp.b_contract, bp.ln1_gain, bp.ln2_bias};
    const double err = testsupport::gradcheck_max_err(checked, [&](Tape& t) {
        Rng dr(0);
        Tensor out = attention_block(t, x, bp, cfg, Mode::kEval, dr);
        return sum(t, mul(t, out, w));
    });
    CHECK(err <= 1e-2);
}

TEST_CASE("whole shrunk model gradient vs finite differences") {
    ModelConfig cfg = shrunk_config();  // d_model=8, 1 block, vocab=11
    Rng rng(9);
    const ModelParams params = ModelParams::init(cfg, rng);
    const std::vector<std::int32_t> tokens = {1, 4, 9, 0};
    const std::vector<std::int32_t> targets = {4, 9, 0, 2};
    Rng dr(0);
    const double err = testsupport::gradcheck_max_err(params.parameters(), [&](Tape& t) {
        Rng local(0);
        Tensor logits = forward(t, params, tokens, Mode::kEval, local);
        return cross_entropy(t, logits, targets);
    });
    CHECK(err <= 1e-2);
}

TEST_CASE("random init scores near ln(vocab) on uniform tokens") {
    ModelConfig cfg;
    cfg.block_size = 32;  // keep the check quick; vocab stays 402
    Rng rng(10);
    const ModelParams params = ModelParams::init(cfg, rng);
    double total = 0;
    int n = 0;
    for (int trial = 0; trial < 8; ++trial) {
        std::vector<std::int32_t> tokens(32), targets(32);
        for (int i = 0; i < 32; ++i) {
            tokens[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(402));
            targets[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(402));
        }
        Tape tape(false);
        Rng dr(0);
        Tensor logits = forward(tape, params, tokens, Mode::kEval, dr);
        total += cross_entropy(tape, logits, targets).item();
        ++n;
    }
    CHECK_THAT(total / n, Catch::Matchers::WithinAbs(std::log(402.0), 0.5));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    ModelConfig cfg = shrunk_config();
    Rng rng(11);
    const ModelParams params = ModelParams::init(cfg, rng);
    const std::string path = temp_path("tokencast_test_ckpt.bin");
    save_checkpoint(params, path, 20);

    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.horizon == 20);
    CHECK(loaded.params.config.d_model == cfg.d_model);
    const auto orig = params.named_parameters();
    const auto back = loaded.params.named_parameters();
    REQUIRE(orig.size() == back.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        REQUIRE(orig[i].second.numel() == back[i].second.numel());
        for (std::int64_t j = 0; j < orig[i].second.numel(); ++j)
            REQUIRE(orig[i].second.at(j) == back[i].second.at(j));
    }

    // Identical forward outputs.
    std::vector<std::int32_t> tokens = {5, 2, 7};
    const Tensor a = forward_eval(params, tokens);
    const Tensor b = forward_eval(loaded.params, tokens);
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.at(i) == b.at(i));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption and version errors are distinct") {
    ModelConfig cfg = shrunk_config();
    Rng rng(12);
    const ModelParams params = ModelParams::init(cfg, rng);
    const std::string path = temp_path("tokencast_test_ckpt_bad.bin");
    save_checkpoint(params, path);

    SECTION("corrupt magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XX", 2);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }

    SECTION("future version") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const std::uint32_t v = 99;
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), VersionError);
    }

    SECTION("truncated payload") {
        std::error_code ec;
        const auto size = std::filesystem::file_size(path, ec);
        std::filesystem::resize_file(path, size / 2, ec);
        CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }

    std::filesystem::remove(path);
}

TEST_CASE("checkpoint of a shrunk config loads and runs") {
    ModelConfig cfg = shrunk_config();
    cfg.n_blocks = 2;
    cfg.block_size = 6;
    Rng rng(13);
    const ModelParams params = ModelParams::init(cfg, rng);
    const std::string path = temp_path("tokencast_test_ckpt_small.bin");
    save_checkpoint(params, path);
    const Checkpoint loaded = load_checkpoint(path);
    std::vector<std::int32_t> tokens = {0, 1, 2, 3, 4, 5};
    const Tensor out = forward_eval(loaded.params, tokens);
    CHECK(out.shape() == Shape{6, 11});
    std::filesystem::remove(path);
}
