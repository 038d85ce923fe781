#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "support/gradcheck.hpp"
#include "tokencast/rng.hpp"
#include "tokencast/tensor.hpp"

using namespace tokencast;
using testsupport::gradcheck_max_err;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, float sd = 1.0f) {
    return Tensor::randn(std::move(shape), rng, sd, requires_grad);
}

}  // namespace

TEST_CASE("matmul computes the product and rejects mismatched shapes") {
    Tape tape(false);
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor m = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor out = matmul(tape, eye, m);
    for (std::int64_t i = 0; i < m.numel(); ++i) CHECK(out.at(i) == m.at(i));

    Tensor a = Tensor::from({1, 1}, {2});
    Tensor b = Tensor::from({1, 1}, {3});
    CHECK(matmul(tape, a, b).at(0) == 6.0f);

    Tensor bad = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(tape, m, bad), ShapeError);
    CHECK_THROWS_WITH(matmul(tape, m, bad), Catch::Matchers::ContainsSubstring("[3x2]"));
}

TEST_CASE("matmul gradient: sum(a*b) w.r.t. a equals ones*b^T") {
    Rng rng(11);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    Tape tape;
    Tensor loss = sum(tape, matmul(tape, a, b));
    tape.backward(loss);
    // d(sum(AB))/dA[i,k] = sum_j B[k,j]
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t k = 0; k < 5; ++k) {
            double expect = 0;
            for (std::int64_t j = 0; j < 3; ++j) expect += b.at(k, j);
            CHECK_THAT(a.grad()[i * 5 + k], Catch::Matchers::WithinRel(expect, 1e-4));
        }
    const double err = gradcheck_max_err({a, b}, [&](Tape& t) {
        return sum(t, matmul(t, a, b));
    });
    CHECK(err <= 1e-3);
}

TEST_CASE("softmax rows sum to one and stay stable for large inputs") {
    Tape tape(false);
    Tensor flat = softmax(tape, Tensor::from({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK_THAT(flat.at(i), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-6));

    Tensor big = softmax(tape, Tensor::from({2}, {1e4f, 0.0f}));
    CHECK(std::isfinite(big.at(0)));
    CHECK_THAT(big.at(0), Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK_THAT(big.at(1), Catch::Matchers::WithinAbs(0.0, 1e-6));

    Rng rng(3);
    Tensor x = random_tensor({7, 11}, rng, false);
    Tensor y = softmax(tape, x);
    for (std::int64_t r = 0; r < 7; ++r) {
        double s = 0;
        for (std::int64_t c = 0; c < 11; ++c) {
            s += y.at(r, c);
            CHECK(y.at(r, c) >= 0.0f);
        }
        CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }

    Tensor inf = Tensor::from({2}, {1.0f, std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(softmax(tape, inf), NumericError);
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(5);
    Tensor x = random_tensor({2, 5}, rng);
    Tensor w = random_tensor({2, 5}, rng, false);  // weights make the loss non-trivial
    const double err = gradcheck_max_err({x}, [&](Tape& t) {
        return sum(t, mul(t, softmax(t, x), w));
    });
    CHECK(err <= 1e-2);
}

TEST_CASE("layer_norm normalizes each row") {
    Tape tape(false);
    Tensor gain = Tensor::ones({4});
    Tensor bias = Tensor::zeros({4});

    Tensor constant = layer_norm(tape, Tensor::full({1, 4}, 3.25f), gain, bias);
    for (int i = 0; i < 4; ++i) CHECK_THAT(constant.at(i), Catch::Matchers::WithinAbs(0.0, 1e-3));

    Tensor row = layer_norm(tape, Tensor::from({1, 3}, {1, 2, 3}),
                            Tensor::ones({3}), Tensor::zeros({3}));
    double mean = 0, var = 0;
    for (int i = 0; i < 3; ++i) mean += row.at(i);
    mean /= 3;
    for (int i = 0; i < 3; ++i) var += (row.at(i) - mean) * (row.at(i) - mean);
    var /= 3;
    CHECK_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-6));
    CHECK_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-3));
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng(17);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor gain = random_tensor({6}, rng, true, 0.5f);
    Tensor bias = random_tensor({6}, rng, true, 0.5f);
    Tensor w = random_tensor({3, 6}, rng, false);
    const double err = gradcheck_max_err({x, gain, bias}, [&](Tape& t) {
        return sum(t, mul(t, layer_norm(t, x, gain, bias), w));
    });
    CHECK(err <= 1e-2);
}

TEST_CASE("cross_entropy of uniform logits is ln(vocab)") {
    Tape tape(false);
    Tensor logits = Tensor::zeros({1, 402});
    std::vector<std::int32_t> target = {7};
    Tensor loss = cross_entropy(tape, logits, target);
    CHECK_THAT(loss.item(), Catch::Matchers::WithinAbs(std::log(402.0), 1e-3));

    // A confidently correct logit drives the loss toward zero.
    Tensor sharp = Tensor::zeros({1, 10});
    sharp.at(0, 4) = 50.0f;
    std::vector<std::int32_t> t4 = {4};
    CHECK(cross_entropy(tape, sharp, t4).item() < 1e-6f);

    std::vector<std::int32_t> oob = {402};
    CHECK_THROWS_AS(cross_entropy(tape, logits, oob), IndexError);
}

TEST_CASE("cross_entropy gradient matches finite differences") {
    Rng rng(23);
    Tensor logits = random_tensor({3, 7}, rng);
    std::vector<std::int32_t> targets = {2, 0, 6};
    const double err = gradcheck_max_err({logits}, [&](Tape& t) {
        return cross_entropy(t, logits, targets);
    });
    CHECK(err <= 1e-2);
    // Analytic gradient is (softmax - onehot)/N.
    logits.zero_grad();
    Tape tape;
    Tensor loss = cross_entropy(tape, logits, targets);
    tape.backward(loss);
    Tape eval(false);
    Tensor probs = softmax(eval, logits);
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 7; ++j) {
            const double expect =
                (probs.at(i, j) - (targets[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0)) / 3.0;
            CHECK_THAT(logits.grad()[i * 7 + j], Catch::Matchers::WithinAbs(expect, 1e-5));
        }
}

TEST_CASE("dropout: identity cases and train-mode statistics") {
    Rng rng(31);
    Tensor x = Tensor::ones({100000});

    SECTION("p = 0 and eval mode are exact identities") {
        Tape tape;
        Tensor same_p0 = dropout(tape, x, 0.0f, Mode::kTrain, rng);
        CHECK(same_p0.same_impl(x));
        Tensor same_eval = dropout(tape, x, 0.2f, Mode::kEval, rng);
        CHECK(same_eval.same_impl(x));
    }

    SECTION("train mode zeroes at rate p and preserves the mean") {
        Tape tape(false);
        Tensor y = dropout(tape, x, 0.5f, Mode::kTrain, rng);
        std::int64_t survivors = 0;
        double total = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            if (y.at(i) != 0.0f) ++survivors;
            total += y.at(i);
        }
        const double frac = static_cast<double>(survivors) / static_cast<double>(y.numel());
        CHECK(frac > 0.49);
        CHECK(frac < 0.51);
        CHECK_THAT(total / static_cast<double>(y.numel()), Catch::Matchers::WithinAbs(1.0, 0.02));
    }

    SECTION("invalid probability is rejected") {
        Tape tape;
        CHECK_THROWS_AS(dropout(tape, x, 1.0f, Mode::kTrain, rng), ConfigError);
        CHECK_THROWS_AS(dropout(tape, x, -0.1f, Mode::kTrain, rng), ConfigError);
    }
}

TEST_CASE("embedding looks up rows and scatters gradients") {
    Rng rng(41);
    Tensor table = random_tensor({5, 3}, rng);
    std::vector<std::int32_t> ids = {4, 0, 4};
    Tape tape;
    Tensor out = embedding(tape, table, ids);
    REQUIRE(out.shape() == Shape{3, 3});
    for (int j = 0; j < 3; ++j) {
        CHECK(out.at(0, j) == table.at(4, j));
        CHECK(out.at(1, j) == table.at(0, j));
    }
    Tensor loss = sum(tape, out);
    tape.backward(loss);
    for (int j = 0; j < 3; ++j) {
        CHECK(table.grad()[4 * 3 + j] == 2.0f);  // row 4 used twice
        CHECK(table.grad()[0 * 3 + j] == 1.0f);
        CHECK(table.grad()[1 * 3 + j] == 0.0f);
    }
    std::vector<std::int32_t> bad = {5};
    CHECK_THROWS_AS(embedding(tape, table, bad), IndexError);
}

TEST_CASE("softmax_causal: triangular rows summing to one") {
    Tape tape(false);
    Tensor zeros = Tensor::zeros({4, 4});
    Tensor w = softmax_causal(tape, zeros);
    for (std::int64_t t = 0; t < 4; ++t) {
        for (std::int64_t j = 0; j <= t; ++j)
            CHECK_THAT(w.at(t, j), Catch::Matchers::WithinAbs(1.0 / (t + 1.0), 1e-6));
        for (std::int64_t j = t + 1; j < 4; ++j) CHECK(w.at(t, j) == 0.0f);
    }
}

TEST_CASE("composite gradients through slices, concat and causal softmax") {
    Rng rng(53);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor w = random_tensor({4, 4}, rng, false);
    const double err = gradcheck_max_err({x}, [&](Tape& t) {
        Tensor left = slice_cols(t, x, 0, 3);
        Tensor right = slice_cols(t, x, 3, 6);
        Tensor scores = scale(t, matmul_nt(t, left, right), 0.7f);
        Tensor attn = softmax_causal(t, scores);
        return sum(t, mul(t, attn, w));
    });
    CHECK(err <= 1e-2);

    const double err2 = gradcheck_max_err({x}, [&](Tape& t) {
        Tensor a = slice_cols(t, x, 0, 2);
        Tensor b = slice_cols(t, x, 2, 6);
        Tensor joined = concat_cols(t, {relu(t, a), b});
        return sum(t, mul(t, joined, x));
    });
    CHECK(err2 <= 1e-2);
}

TEST_CASE("composite f(x) = sum(softmax(x*W)) matches finite differences") {
    Rng rng(61);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor mask = random_tensor({3, 5}, rng, false);
    const double err = gradcheck_max_err({x, w}, [&](Tape& t) {
        return sum(t, mul(t, softmax(t, matmul(t, x, w)), mask));
    });
    CHECK(err <= 1e-2);
}

TEST_CASE("backward contract") {
    Rng rng(71);
    Tensor x = random_tensor({6}, rng);

    SECTION("loss = sum(x) gives unit gradients") {
        Tape tape;
        Tensor loss = sum(tape, x);
        tape.backward(loss);
        for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0f);
    }

    SECTION("non-scalar loss is rejected") {
        Tape tape;
        Tensor y = relu(tape, x);
        CHECK_THROWS_AS(tape.backward(y), NumericError);
    }

    SECTION("a second backward accumulates leaf gradients exactly") {
        Tape tape;
        Tensor loss = sum(tape, scale(tape, x, 2.0f));
        tape.backward(loss);
        std::vector<float> first(x.grad().begin(), x.grad().end());
        tape.backward(loss);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            CHECK(x.grad()[i] == 2.0f * first[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("deterministic replay: same seed, same results") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({8, 8}, rng);
        Tensor w = random_tensor({8, 8}, rng);
        Tape tape;
        Tensor d = dropout(tape, matmul(tape, x, w), 0.3f, Mode::kTrain, rng);
        Tensor loss = sum(tape, d);
        tape.backward(loss);
        std::vector<float> out(x.grad().begin(), x.grad().end());
        out.push_back(loss.item());
        return out;
    };
    CHECK(run(123) == run(123));
    CHECK(run(123) != run(124));
}

TEST_CASE("add_bias broadcasts over rows with summed bias gradient") {
    Rng rng(83);
    Tensor x = random_tensor({5, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor w = random_tensor({5, 3}, rng, false);
    const double err = gradcheck_max_err({x, b}, [&](Tape& t) {
        return sum(t, mul(t, add_bias(t, x, b), w));
    });
    CHECK(err <= 1e-2);
    Tape tape(false);
    Tensor y = add_bias(tape, x, b);
    for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 3; ++j)
            CHECK_THAT(y.at(i, j), Catch::Matchers::WithinAbs(x.at(i, j) + b.at(j), 1e-6));
}
