#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tokencast/bins.hpp"
#include "tokencast/dates.hpp"
#include "tokencast/errors.hpp"
#include "tokencast/model.hpp"
#include "tokencast/panel.hpp"
#include "tokencast/rng.hpp"

// Turns a trained model plus trailing token windows into expected returns:
// exact probability weighting of bin midpoints for one-step (and 20-day
// mean) forecasts, and recursive path sampling for multi-day forecasts from
// a one-day model.

namespace tokencast {

struct ForecastDistribution {
    std::int64_t permno = 0;
    Date date;
    int horizon = 1;
    std::vector<float> probs;  // vocab-sized, nonnegative, sums to 1
};

// Softmax of the final position's logits; dropout off, deterministic.
inline ForecastDistribution forecast_distribution(const ModelParams& params,
                                                  std::span<const TokenId> window) {
    if (window.empty()) throw DataError("forecast_distribution: empty window");
    Tensor logits = forward_eval(params, window);
    const auto T = logits.dim(0);
    const auto vocab = logits.dim(1);
    Tape tape = Tape::no_grad();
    Tensor probs = softmax(tape, logits);
    ForecastDistribution dist;
    dist.probs.resize(static_cast<std::size_t>(vocab));
    for (std::int64_t j = 0; j < vocab; ++j)
        dist.probs[static_cast<std::size_t>(j)] = probs.at(T - 1, j);
    return dist;
}

// Probability-weighted average of bin midpoints, in basis points.
inline double expected_return_bp(std::span<const float> probs, const BinSpec& bins = {}) {
    if (static_cast<int>(probs.size()) != bins.vocab_size())
        throw ShapeError("expected_return_bp: " + std::to_string(probs.size()) +
                         " probabilities for a " + std::to_string(bins.vocab_size()) +
                         "-token dictionary");
    double e = 0;
    for (std::size_t k = 0; k < probs.size(); ++k)
        e += static_cast<double>(probs[k]) * bins.midpoint_bp(static_cast<TokenId>(k));
    return e;
}

inline double expected_return_bp(const ForecastDistribution& dist, const BinSpec& bins = {}) {
    return expected_return_bp(std::span<const float>(dist.probs), bins);
}

// Samples n_paths autoregressive continuations of m days each. The window
// slides so the model never sees more than block_size tokens. Each path's
// m-day return is the mean of its sampled-token midpoints; the result
// averages over paths (basis points per day).
inline double sample_paths_mean_bp(const ModelParams& params, std::span<const TokenId> window,
                                   int m_days, int n_paths, Rng& rng, const BinSpec& bins = {}) {
    if (window.empty()) throw DataError("sample_paths_mean_bp: empty window");
    if (m_days < 1 || n_paths < 1)
        throw ConfigError("sample_paths_mean_bp: m_days and n_paths must be >= 1");
    const auto block = params.config.block_size;
    double total = 0;
    std::vector<TokenId> path;
    for (int p = 0; p < n_paths; ++p) {
        path.assign(window.begin(), window.end());
        double path_sum = 0;
        for (int day = 0; day < m_days; ++day) {
            const std::size_t len = std::min<std::size_t>(path.size(), static_cast<std::size_t>(block));
            std::span<const TokenId> ctx(path.data() + path.size() - len, len);
            ForecastDistribution dist = forecast_distribution(params, ctx);
            // Inverse-CDF draw from the categorical distribution.
            const double u = rng.uniform();
            double c = 0;
            TokenId tok = static_cast<TokenId>(dist.probs.size() - 1);
            for (std::size_t k = 0; k < dist.probs.size(); ++k) {
                c += dist.probs[k];
                if (u < c) {
                    tok = static_cast<TokenId>(k);
                    break;
                }
            }
            path_sum += bins.midpoint_bp(tok);
            path.push_back(tok);
        }
        total += path_sum / m_days;
    }
    return total / n_paths;
}

struct ForecastRow {
    std::int64_t permno;
    Date date;
    double expected_bp;
};

struct ForecastTable {
    int horizon = 1;
    std::vector<ForecastRow> rows;   // sorted by (date, permno)
    std::int64_t skipped = 0;        // stock-dates lacking the minimum window
};

struct ForecastOptions {
    int horizon = 1;
    // Forecast only when at least this many contiguous trailing observations
    // exist; the window itself is the most recent min(block_size, run) of
    // them. Production use keeps this at block_size; desk-scale tests with
    // short synthetic histories may lower it.
    std::int64_t min_window = 256;
    int threads = 1;
};

// One expected-return entry per (stock, date) with enough history. Entries
// are deterministic functions of the checkpoint and panel, so rebuilding
// with identical inputs is bit-identical regardless of thread count.
inline ForecastTable build_forecast_table(const ModelParams& params, const ReturnPanel& panel,
                                          const std::vector<Date>& dates,
                                          const ForecastOptions& opts, const BinSpec& bins = {}) {
    if (opts.min_window < 1) throw ConfigError("min_window must be >= 1");
    if (opts.threads < 1) throw ConfigError("threads must be >= 1");
    const auto calendar = panel.calendar();

    struct StockResult {
        std::vector<ForecastRow> rows;
        std::int64_t skipped = 0;
    };
    std::vector<StockResult> per_stock(panel.stocks.size());

    auto run_stock = [&](std::size_t si) {
        const auto& s = panel.stocks[si];
        const auto runs = contiguous_run_lengths(s, calendar);
        auto tokens = bins.tokenize_series(s.rets);
        auto& out = per_stock[si];
        for (const auto& date : dates) {
            const auto idx = s.index_of(date);
            if (idx < 0) continue;
            if (runs[static_cast<std::size_t>(idx)] < opts.min_window) {
                ++out.skipped;
                continue;
            }
            const std::int64_t len = std::min<std::int64_t>(runs[static_cast<std::size_t>(idx)],
                                                            params.config.block_size);
            std::span<const TokenId> window(tokens.data() + (idx + 1 - len),
                                            static_cast<std::size_t>(len));
            ForecastDistribution dist = forecast_distribution(params, window);
            out.rows.push_back({s.permno, date, expected_return_bp(dist, bins)});
        }
    };

    if (opts.threads == 1 || panel.stocks.size() < 2) {
        for (std::size_t si = 0; si < panel.stocks.size(); ++si) run_stock(si);
    } else {
        const std::size_t n_threads =
            std::min<std::size_t>(static_cast<std::size_t>(opts.threads), panel.stocks.size());
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t si = next.fetch_add(1); si < panel.stocks.size();
                     si = next.fetch_add(1))
                    run_stock(si);
            });
        for (auto& th : pool) th.join();
    }

    ForecastTable table;
    table.horizon = opts.horizon;
    for (auto& sr : per_stock) {
        table.skipped += sr.skipped;
        table.rows.insert(table.rows.end(), sr.rows.begin(), sr.rows.end());
    }
    std::sort(table.rows.begin(), table.rows.end(), [](const ForecastRow& a, const ForecastRow& b) {
        if (a.date != b.date) return a.date < b.date;
        return a.permno < b.permno;
    });
    return table;
}

inline void write_forecast_csv(const ForecastTable& table, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open forecast file for writing: " + path);
    os << "stock_id,date,horizon,expected_return_bp\n";
    char buf[160];
    for (const auto& r : table.rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%s,%d,%.10g\n", static_cast<long long>(r.permno),
                      r.date.to_string().c_str(), table.horizon, r.expected_bp);
        os << buf;
    }
    if (!os) throw DataError("forecast write failed: " + path);
}

inline ForecastTable load_forecast_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open forecast file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("forecast file is empty: " + path);
    if (line.ends_with('\r')) line.pop_back();
    if (line != "stock_id,date,horizon,expected_return_bp")
        throw DataError("unexpected forecast header: '" + line + "'");
    ForecastTable table;
    bool first = true;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 4)
            throw DataError("line " + std::to_string(line_no) + ": expected 4 fields");
        ForecastRow row;
        row.permno = detail::parse_int(fields[0], line_no, "stock_id");
        row.date = parse_date(fields[1]);
        const int horizon = static_cast<int>(detail::parse_int(fields[2], line_no, "horizon"));
        row.expected_bp = detail::parse_double(fields[3], line_no, "expected_return_bp");
        if (first) {
            table.horizon = horizon;
            first = false;
        } else if (horizon != table.horizon) {
            throw DataError("line " + std::to_string(line_no) + ": mixed horizons in forecast file");
        }
        table.rows.push_back(row);
    }
    std::sort(table.rows.begin(), table.rows.end(), [](const ForecastRow& a, const ForecastRow& b) {
        if (a.date != b.date) return a.date < b.date;
        return a.permno < b.permno;
    });
    return table;
}

}  // namespace tokencast
