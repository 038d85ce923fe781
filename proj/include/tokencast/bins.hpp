#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tokencast/errors.hpp"

namespace tokencast {

using TokenId = std::int32_t;

// Discretization dictionary for simple returns. Returns are expressed in
// basis points (1 bp = 0.01%); the interior bins are width-`bin_width_bp`
// intervals, open on the left and closed on the right. Bin 0 collects
// everything at or below the lower clamp (a simple return cannot fall below
// -100%, so with the default bounds bin 0 contains exactly -10000 bp) and
// the last bin collects everything strictly above the upper clamp.
struct BinSpec {
    int bin_width_bp = 50;
    int lower_clamp_bp = -10000;
    int upper_clamp_bp = 10000;

    int vocab_size() const {
        return 2 + (upper_clamp_bp - lower_clamp_bp) / bin_width_bp;
    }

    void validate() const {
        if (bin_width_bp <= 0)
            throw ConfigError("bin_width_bp must be positive");
        if (upper_clamp_bp <= lower_clamp_bp)
            throw ConfigError("upper_clamp_bp must exceed lower_clamp_bp");
        if ((upper_clamp_bp - lower_clamp_bp) % bin_width_bp != 0)
            throw ConfigError("clamp range must be a multiple of bin_width_bp");
    }

    // Maps a simple return (fraction, e.g. 0.05 for +5%) to its bin index.
    // The clamp comparisons use the raw basis-point value, so any return
    // strictly above the upper clamp saturates to the last bin; interior
    // values are truncated toward zero to integer basis points first.
    TokenId tokenize(double ret) const {
        if (!std::isfinite(ret) || ret < -1.0)
            throw DataError("invalid return " + std::to_string(ret) +
                            " (simple returns cannot fall below -100%)");
        const double bp = ret * 10000.0;
        if (bp <= lower_clamp_bp) return 0;
        if (bp > upper_clamp_bp) return static_cast<TokenId>(vocab_size() - 1);
        const auto b = static_cast<std::int64_t>(std::trunc(bp));
        // b is an integer in (lower_clamp, upper_clamp]; bin k covers
        // (lower + w*(k-1), lower + w*k].
        const std::int64_t k = (b - lower_clamp_bp + bin_width_bp - 1) / bin_width_bp;
        return static_cast<TokenId>(k);
    }

    // Representative value of a bin, in basis points. The clamp bins are
    // represented by the clamp values themselves, interior bins by their
    // interval midpoint.
    double midpoint_bp(TokenId token) const {
        if (token < 0 || token >= vocab_size())
            throw IndexError("token " + std::to_string(token) + " out of range [0, " +
                             std::to_string(vocab_size() - 1) + "]");
        if (token == 0) return static_cast<double>(lower_clamp_bp);
        if (token == vocab_size() - 1) return static_cast<double>(upper_clamp_bp);
        return lower_clamp_bp + bin_width_bp * (static_cast<double>(token) - 0.5);
    }

    std::vector<TokenId> tokenize_series(std::span<const double> rets) const {
        std::vector<TokenId> out;
        out.reserve(rets.size());
        for (std::size_t i = 0; i < rets.size(); ++i) {
            try {
                out.push_back(tokenize(rets[i]));
            } catch (const DataError& e) {
                throw DataError(std::string(e.what()) + " at position " + std::to_string(i));
            }
        }
        return out;
    }
};

}  // namespace tokencast
