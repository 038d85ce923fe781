#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tokencast/dates.hpp"
#include "tokencast/errors.hpp"
#include "tokencast/rng.hpp"

// Panel of per-stock daily observations plus the CSV schema used to move it
// in and out of the pipeline:
//
//   permno,date,ret,prc,mktcap,exchcd,shrcd
//
// ISO dates, returns as decimal fractions, market cap in thousands. A
// negative price is the bid/ask midpoint convention and is absolute-valued
// on load. Returns are simple returns and may never fall below -100%.

namespace tokencast {

enum class Exchange { kNyse = 1, kAmex = 2, kNasdaq = 3, kOther = 0 };

inline Exchange exchange_from_code(int code) {
    switch (code) {
        case 1: return Exchange::kNyse;
        case 2: return Exchange::kAmex;
        case 3: return Exchange::kNasdaq;
        default: return Exchange::kOther;
    }
}

struct StockSeries {
    std::int64_t permno = 0;
    Exchange exchange = Exchange::kOther;
    int shrcd = 10;
    std::vector<Date> dates;  // strictly increasing
    std::vector<double> rets;
    std::vector<double> prcs;
    std::vector<double> mktcaps;

    std::size_t size() const { return dates.size(); }

    // Index of `date` in this stock's series, or -1.
    std::int64_t index_of(const Date& date) const {
        auto it = std::lower_bound(dates.begin(), dates.end(), date);
        if (it == dates.end() || *it != date) return -1;
        return it - dates.begin();
    }
};

struct ReturnPanel {
    std::vector<StockSeries> stocks;  // sorted by permno

    std::size_t n_observations() const {
        std::size_t n = 0;
        for (const auto& s : stocks) n += s.size();
        return n;
    }

    // Sorted union of all observation dates.
    std::vector<Date> calendar() const {
        std::set<Date> all;
        for (const auto& s : stocks) all.insert(s.dates.begin(), s.dates.end());
        return {all.begin(), all.end()};
    }

    const StockSeries* find(std::int64_t permno) const {
        auto it = std::lower_bound(stocks.begin(), stocks.end(), permno,
                                   [](const StockSeries& s, std::int64_t p) { return s.permno < p; });
        if (it == stocks.end() || it->permno != permno) return nullptr;
        return &*it;
    }
};

// For every observation, the length of the run of calendar-consecutive
// observations ending there. A stock that skips a date present in the
// calendar starts a new run; windows never span such a gap.
inline std::vector<std::int64_t> contiguous_run_lengths(const StockSeries& stock,
                                                        const std::vector<Date>& calendar) {
    std::vector<std::int64_t> runs(stock.size(), 1);
    if (stock.size() == 0) return runs;
    std::vector<std::int64_t> cal_idx(stock.size());
    for (std::size_t i = 0; i < stock.size(); ++i) {
        auto it = std::lower_bound(calendar.begin(), calendar.end(), stock.dates[i]);
        cal_idx[i] = it - calendar.begin();
    }
    for (std::size_t i = 1; i < stock.size(); ++i)
        if (cal_idx[i] == cal_idx[i - 1] + 1) runs[i] = runs[i - 1] + 1;
    return runs;
}

struct LoadFilters {
    std::set<Exchange> exchanges = {Exchange::kNyse, Exchange::kAmex, Exchange::kNasdaq};
    std::set<int> share_codes = {10, 11};
};

struct LoadStats {
    std::size_t rows_kept = 0;
    std::size_t rows_filtered_exchange = 0;
    std::size_t rows_filtered_shrcd = 0;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

inline double parse_double(std::string_view s, std::size_t line_no, const char* field) {
    double v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": cannot parse " + field + " '" +
                        std::string(s) + "'");
    return v;
}

inline std::int64_t parse_int(std::string_view s, std::size_t line_no, const char* field) {
    std::int64_t v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": cannot parse " + field + " '" +
                        std::string(s) + "'");
    return v;
}

}  // namespace detail

inline ReturnPanel load_panel(const std::string& path, const LoadFilters& filters = {},
                              LoadStats* stats = nullptr) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open panel file: " + path);

    std::string line;
    if (!std::getline(is, line)) throw DataError("panel file is empty (no header): " + path);
    if (line.ends_with('\r')) line.pop_back();
    if (line != "permno,date,ret,prc,mktcap,exchcd,shrcd")
        throw DataError("unexpected panel header: '" + line + "'");

    std::map<std::int64_t, StockSeries> by_permno;
    LoadStats local;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 7)
            throw DataError("line " + std::to_string(line_no) + ": expected 7 fields, got " +
                            std::to_string(fields.size()));
        const auto permno = detail::parse_int(fields[0], line_no, "permno");
        Date date;
        try {
            date = parse_date(fields[1]);
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        const double ret = detail::parse_double(fields[2], line_no, "ret");
        if (!std::isfinite(ret) || ret < -1.0)
            throw DataError("line " + std::to_string(line_no) + ": return " +
                            std::to_string(ret) + " below the -100% floor");
        double prc = detail::parse_double(fields[3], line_no, "prc");
        prc = std::fabs(prc);  // bid/ask midpoints are stored negative
        const double mktcap = detail::parse_double(fields[4], line_no, "mktcap");
        if (mktcap <= 0.0)
            throw DataError("line " + std::to_string(line_no) + ": market value must be positive");
        const auto exchcd = static_cast<int>(detail::parse_int(fields[5], line_no, "exchcd"));
        const auto shrcd = static_cast<int>(detail::parse_int(fields[6], line_no, "shrcd"));

        const Exchange exch = exchange_from_code(exchcd);
        if (!filters.exchanges.contains(exch)) {
            ++local.rows_filtered_exchange;
            continue;
        }
        if (!filters.share_codes.contains(shrcd)) {
            ++local.rows_filtered_shrcd;
            continue;
        }

        auto& stock = by_permno[permno];
        if (stock.dates.empty()) {
            stock.permno = permno;
            stock.exchange = exch;
            stock.shrcd = shrcd;
        } else if (!(stock.dates.back() < date)) {
            throw DataError("stock " + std::to_string(permno) +
                            ": dates not strictly increasing at " + date.to_string());
        }
        stock.dates.push_back(date);
        stock.rets.push_back(ret);
        stock.prcs.push_back(prc);
        stock.mktcaps.push_back(mktcap);
        ++local.rows_kept;
    }

    ReturnPanel panel;
    panel.stocks.reserve(by_permno.size());
    for (auto& [permno, stock] : by_permno) panel.stocks.push_back(std::move(stock));
    if (stats) *stats = local;
    return panel;
}

inline void write_panel_csv(const ReturnPanel& panel, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open panel file for writing: " + path);
    os << "permno,date,ret,prc,mktcap,exchcd,shrcd\n";
    char buf[512];
    for (const auto& s : panel.stocks) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%lld,%s,%.17g,%.17g,%.17g,%d,%d\n",
                          static_cast<long long>(s.permno), s.dates[i].to_string().c_str(),
                          s.rets[i], s.prcs[i], s.mktcaps[i], static_cast<int>(s.exchange),
                          s.shrcd);
            os << buf;
        }
    }
    if (!os) throw DataError("panel write failed: " + path);
}

// Synthetic panel with a planted, learnable structure: each stock follows a
// persistent two-state regime whose states carry distinct conditional mean
// returns, so the next-day return distribution is genuinely predictable
// from the trailing window.
struct SyntheticSpec {
    int n_stocks = 50;
    int n_days = 2000;
    double state_mean_bp = 50.0;   // conditional means are +/- this value
    double noise_sd_bp = 100.0;
    double persistence = 0.9;      // probability of staying in the current state
    std::uint64_t seed = 1;
    Date start_date{2001, 1, 1};

    void validate() const {
        if (n_stocks < 1 || n_days < 1) throw ConfigError("synthetic panel needs >= 1 stock and day");
        if (noise_sd_bp < 0) throw ConfigError("noise_sd_bp must be nonnegative");
        if (!(persistence > 0.0 && persistence < 1.0))
            throw ConfigError("persistence must lie in (0, 1)");
    }
};

// Latent regime paths, exposed so tests can compare forecasts against the
// planted conditional means. states[i][t] is +1 or -1.
struct SyntheticTruth {
    std::vector<std::vector<int>> states;
};

inline ReturnPanel generate_synthetic(const SyntheticSpec& spec, SyntheticTruth* truth = nullptr) {
    spec.validate();

    std::vector<Date> dates;
    dates.reserve(static_cast<std::size_t>(spec.n_days));
    Date d = spec.start_date;
    if (!d.is_weekday()) d = d.next_weekday();
    for (int i = 0; i < spec.n_days; ++i) {
        dates.push_back(d);
        d = d.next_weekday();
    }

    ReturnPanel panel;
    if (truth) truth->states.assign(static_cast<std::size_t>(spec.n_stocks), {});
    for (int i = 0; i < spec.n_stocks; ++i) {
        Rng rng(derive_seed(spec.seed, "synth", static_cast<std::uint64_t>(i)));
        StockSeries s;
        s.permno = 10001 + i;
        s.exchange = exchange_from_code(1 + i % 3);
        s.shrcd = (i % 2 == 0) ? 10 : 11;
        s.dates = dates;
        s.rets.reserve(dates.size());
        s.prcs.reserve(dates.size());
        s.mktcaps.reserve(dates.size());

        int state = rng.uniform() < 0.5 ? 1 : -1;
        double prc = std::exp(rng.normal(std::log(20.0), 0.5));
        double mktcap = std::exp(rng.normal(std::log(1.0e5), 1.0));
        std::vector<int>* states = truth ? &truth->states[static_cast<std::size_t>(i)] : nullptr;
        for (int t = 0; t < spec.n_days; ++t) {
            if (t > 0 && rng.uniform() >= spec.persistence) state = -state;
            if (states) states->push_back(state);
            double ret = (state * spec.state_mean_bp + rng.normal(0.0, spec.noise_sd_bp)) / 10000.0;
            if (ret <= -1.0) ret = -0.9999;  // keep inside the simple-return domain
            prc *= (1.0 + ret);
            mktcap *= (1.0 + ret);
            s.rets.push_back(ret);
            s.prcs.push_back(prc);
            s.mktcaps.push_back(mktcap);
        }
        panel.stocks.push_back(std::move(s));
    }
    return panel;
}

// Inclusive date ranges for the train / validation / test partitions.
struct DateRange {
    Date begin;
    Date end;

    bool contains(const Date& d) const { return !(d < begin) && !(end < d); }

    void validate() const {
        if (end < begin)
            throw ConfigError("date range " + begin.to_string() + ".." + end.to_string() +
                              " is reversed");
    }
};

struct SplitSpec {
    DateRange train;
    DateRange validation;
    DateRange test;

    void validate() const {
        train.validate();
        validation.validate();
        test.validate();
        if (!(train.end < validation.begin))
            throw ConfigError("train range must end before the validation range begins");
        if (!(validation.end < test.begin))
            throw ConfigError("validation range must end before the test range begins");
    }
};

struct SplitPanels {
    ReturnPanel train;
    ReturnPanel validation;
    ReturnPanel test;
};

inline ReturnPanel slice_panel(const ReturnPanel& panel, const DateRange& range) {
    range.validate();
    ReturnPanel out;
    for (const auto& s : panel.stocks) {
        StockSeries cut;
        cut.permno = s.permno;
        cut.exchange = s.exchange;
        cut.shrcd = s.shrcd;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!range.contains(s.dates[i])) continue;
            cut.dates.push_back(s.dates[i]);
            cut.rets.push_back(s.rets[i]);
            cut.prcs.push_back(s.prcs[i]);
            cut.mktcaps.push_back(s.mktcaps[i]);
        }
        if (!cut.dates.empty()) out.stocks.push_back(std::move(cut));
    }
    return out;
}

inline SplitPanels split(const ReturnPanel& panel, const SplitSpec& spec) {
    spec.validate();
    return {slice_panel(panel, spec.train), slice_panel(panel, spec.validation),
            slice_panel(panel, spec.test)};
}

}  // namespace tokencast
