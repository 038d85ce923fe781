#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tokencast/bins.hpp"
#include "tokencast/rng.hpp"

using tokencast::BinSpec;
using tokencast::TokenId;

TEST_CASE("default dictionary has 402 tokens") {
    BinSpec bins;
    bins.validate();
    REQUIRE(bins.vocab_size() == 402);
    REQUIRE(bins.vocab_size() == 2 + (bins.upper_clamp_bp - bins.lower_clamp_bp) / bins.bin_width_bp);
}

TEST_CASE("published example sequence tokenizes exactly") {
    BinSpec bins;
    const std::vector<double> rets = {-0.024, 0.0, 0.0, 0.05, 0.048};
    const std::vector<TokenId> expected = {196, 200, 200, 210, 210};
    REQUIRE(bins.tokenize_series(rets) == expected);
}

TEST_CASE("clamp bins and boundary rows") {
    BinSpec bins;
    CHECK(bins.tokenize(-1.0) == 0);
    CHECK(bins.midpoint_bp(0) == -10000.0);
    CHECK(bins.midpoint_bp(1) == -9975.0);
    CHECK(bins.midpoint_bp(400) == 9975.0);
    CHECK(bins.midpoint_bp(401) == 10000.0);
    // Exactly +100% lands in the last closed interval; anything above
    // saturates to the overflow bin.
    CHECK(bins.tokenize(1.0) == 400);
    CHECK(bins.tokenize(1.00001) == 401);
    CHECK(bins.tokenize(2.5) == 401);
}

TEST_CASE("midpoint formula cross-checks tokenize") {
    BinSpec bins;
    CHECK(bins.tokenize(0.0) == 200);
    CHECK(bins.midpoint_bp(200) == -25.0);
    CHECK(bins.tokenize(0.05) == 210);
    CHECK(bins.midpoint_bp(210) == 475.0);
    // The value must fall inside the bin whose midpoint is returned.
    for (double ret : {-0.0731, -0.0002, 0.0123, 0.9951}) {
        const TokenId tok = bins.tokenize(ret);
        const double mid = bins.midpoint_bp(tok);
        CHECK(std::fabs(mid - ret * 10000.0) <= bins.bin_width_bp);
    }
}

TEST_CASE("invalid inputs are rejected") {
    BinSpec bins;
    CHECK_THROWS_AS(bins.tokenize(-1.5), tokencast::DataError);
    CHECK_THROWS_AS(bins.tokenize(std::nan("")), tokencast::DataError);
    CHECK_THROWS_AS(bins.midpoint_bp(402), tokencast::IndexError);
    CHECK_THROWS_AS(bins.midpoint_bp(-1), tokencast::IndexError);
    const std::vector<double> rets = {0.01, -1.25, 0.0};
    CHECK_THROWS_WITH(bins.tokenize_series(rets), Catch::Matchers::ContainsSubstring("position 1"));
}

TEST_CASE("tokenize_series maps element-wise and handles empty input") {
    BinSpec bins;
    CHECK(bins.tokenize_series({}).empty());
    tokencast::Rng rng(20240601);
    std::vector<double> rets(1000);
    for (auto& r : rets) r = rng.normal(0.0, 0.03);
    const auto tokens = bins.tokenize_series(rets);
    REQUIRE(tokens.size() == rets.size());
    for (std::size_t i = 0; i < rets.size(); ++i) {
        // Membership oracle: reconstruct the interval of the assigned bin
        // and check the (truncated) basis-point value lies inside it.
        const TokenId k = tokens[i];
        const double bp = std::trunc(rets[i] * 10000.0);
        if (k == 0) {
            CHECK(rets[i] * 10000.0 <= bins.lower_clamp_bp);
        } else if (k == bins.vocab_size() - 1) {
            CHECK(rets[i] * 10000.0 > bins.upper_clamp_bp);
        } else {
            const double lo = bins.lower_clamp_bp + bins.bin_width_bp * (k - 1.0);
            const double hi = bins.lower_clamp_bp + bins.bin_width_bp * static_cast<double>(k);
            CHECK(bp > lo);
            CHECK(bp <= hi);
        }
    }
}

TEST_CASE("round-trip containment and monotonicity") {
    BinSpec bins;
    tokencast::Rng rng(7);
    double prev_ret = -1.0;
    TokenId prev_tok = bins.tokenize(prev_ret);
    for (int i = 0; i < 20000; ++i) {
        const double ret = -1.0 + 2.0 * rng.uniform();  // [-1, 1)
        const TokenId tok = bins.tokenize(ret);
        const double bp = ret * 10000.0;
        if (bp > bins.lower_clamp_bp && bp <= bins.upper_clamp_bp)
            CHECK(std::fabs(bins.midpoint_bp(tok) - bp) <= 25.0 + 1.0);  // +1 for truncation
        if (ret >= prev_ret)
            CHECK(tok >= prev_tok);
        else
            CHECK(tok <= prev_tok);
        prev_ret = ret;
        prev_tok = tok;
    }
}

TEST_CASE("intervals partition the line: boundary scan") {
    BinSpec bins;
    const double eps = 1e-7;  // in return units; 1e-3 bp
    // At every boundary b = lower + 50k the left neighborhood belongs to
    // bin k and the right neighborhood to bin k+1: no gaps, no overlaps.
    for (int k = 0; k <= 400; ++k) {
        const double boundary_bp = bins.lower_clamp_bp + 50.0 * k;
        const double boundary_ret = boundary_bp / 10000.0;
        if (k > 0) CHECK(bins.tokenize(boundary_ret - eps) == k);
        CHECK(bins.tokenize(boundary_ret + eps) == k + 1);
        // Bins are right-closed, so an exactly representable boundary value
        // belongs to bin k. (Some boundaries do not survive the decimal ->
        // binary -> basis-point round trip; those are covered by the +/-eps
        // probes above.)
        if (boundary_ret * 10000.0 == boundary_bp) CHECK(bins.tokenize(boundary_ret) == k);
    }
}

TEST_CASE("saturation invariants") {
    BinSpec bins;
    tokencast::Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
        const double big = 1.0 + rng.uniform() * 10.0 + 1e-9;
        CHECK(bins.tokenize(big) == 401);
    }
    CHECK(bins.tokenize(-1.0) == 0);
}

TEST_CASE("custom bin width still satisfies the vocabulary identity") {
    BinSpec bins;
    bins.bin_width_bp = 100;
    bins.validate();
    REQUIRE(bins.vocab_size() == 202);
    CHECK(bins.tokenize(0.0) == 100);
    CHECK(bins.midpoint_bp(100) == -50.0);
    BinSpec bad;
    bad.bin_width_bp = 33;
    CHECK_THROWS_AS(bad.validate(), tokencast::ConfigError);
}
