#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokencast/dates.hpp"
#include "tokencast/econometrics.hpp"
#include "tokencast/errors.hpp"
#include "tokencast/forecast.hpp"
#include "tokencast/panel.hpp"

// Long-short quantile portfolios from a forecast table: market-cap and
// price filters, rank-based decile assignment, equal or value weighting,
// daily or monthly rebalancing, and the usual performance statistics.

namespace tokencast {

enum class Weighting { kEqual, kValue };
enum class Rebalance { kDaily, kMonthly };

struct SortConfig {
    int n_quantiles = 10;
    double mcap_percentile = 10.0;  // drop stocks below this market-value percentile; 0 = off
    double price_filter = 0.0;      // drop stocks priced below this many dollars; 0 = off
    Weighting weighting = Weighting::kEqual;
    int horizon_shift = 1;  // 1 = hold the next period, 2 = skip one period
    Rebalance rebalance = Rebalance::kDaily;
    bool nyse_breakpoints_only = false;  // compute the mcap threshold from NYSE names only

    void validate() const {
        if (n_quantiles < 2) throw ConfigError("n_quantiles must be >= 2");
        if (mcap_percentile < 0 || mcap_percentile >= 100)
            throw ConfigError("mcap_percentile must lie in [0, 100)");
        if (price_filter < 0) throw ConfigError("price_filter must be nonnegative");
        if (horizon_shift != 1 && horizon_shift != 2)
            throw ConfigError("horizon_shift must be 1 or 2");
    }
};

// One stock eligible for formation on a given date.
struct Candidate {
    std::int64_t permno = 0;
    double forecast_bp = 0;
    double mktcap = 0;
    double price = 0;
    double realized = 0;  // simple return over the holding period
    bool nyse = false;
};

struct PortfolioPeriod {
    Date formation;
    double long_ret = 0;
    double short_ret = 0;
    double long_short = 0;
    int n_long = 0;
    int n_short = 0;
};

struct PortfolioSeries {
    Rebalance rebalance = Rebalance::kDaily;
    std::vector<PortfolioPeriod> periods;
    std::int64_t skipped = 0;  // formation dates without enough stocks
};

// Forms one period: filters in order (market-cap percentile, then price),
// ranks by forecast with ties broken by permno, takes the top and bottom
// quantile, and weights within each leg. Returns nothing when fewer than
// n_quantiles stocks survive.
inline std::optional<PortfolioPeriod> form_portfolio(std::vector<Candidate> candidates,
                                                     const Date& formation,
                                                     const SortConfig& config) {
    config.validate();

    if (config.mcap_percentile > 0 && !candidates.empty()) {
        // Threshold = the market value at rank floor(q/100 * n) of the
        // breakpoint universe (ascending, ties by permno); stocks strictly
        // below it are dropped.
        std::vector<const Candidate*> universe;
        for (const auto& c : candidates)
            if (!config.nyse_breakpoints_only || c.nyse) universe.push_back(&c);
        if (universe.empty()) return std::nullopt;
        std::sort(universe.begin(), universe.end(), [](const Candidate* a, const Candidate* b) {
            if (a->mktcap != b->mktcap) return a->mktcap < b->mktcap;
            return a->permno < b->permno;
        });
        const auto rank = static_cast<std::size_t>(config.mcap_percentile / 100.0 *
                                                   static_cast<double>(universe.size()));
        const double threshold = universe[std::min(rank, universe.size() - 1)]->mktcap;
        std::erase_if(candidates, [&](const Candidate& c) { return c.mktcap < threshold; });
    }
    if (config.price_filter > 0)
        std::erase_if(candidates, [&](const Candidate& c) { return c.price < config.price_filter; });

    const auto n = static_cast<std::int64_t>(candidates.size());
    if (n < config.n_quantiles) return std::nullopt;

    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.forecast_bp != b.forecast_bp) return a.forecast_bp < b.forecast_bp;
        return a.permno < b.permno;
    });

    // Quantile q covers [floor(q*n/Q), floor((q+1)*n/Q)); sizes differ by at
    // most one. The bottom quantile is shorted, the top is held long.
    const auto q = static_cast<std::int64_t>(config.n_quantiles);
    const auto short_end = n / q;
    const auto long_begin = (q - 1) * n / q;

    auto leg_return = [&](std::int64_t begin, std::int64_t end) {
        double ret = 0;
        if (config.weighting == Weighting::kEqual) {
            for (std::int64_t i = begin; i < end; ++i) ret += candidates[static_cast<std::size_t>(i)].realized;
            ret /= static_cast<double>(end - begin);
        } else {
            double total_cap = 0;
            for (std::int64_t i = begin; i < end; ++i) total_cap += candidates[static_cast<std::size_t>(i)].mktcap;
            for (std::int64_t i = begin; i < end; ++i)
                ret += candidates[static_cast<std::size_t>(i)].realized *
                       (candidates[static_cast<std::size_t>(i)].mktcap / total_cap);
        }
        return ret;
    };

    PortfolioPeriod period;
    period.formation = formation;
    period.short_ret = leg_return(0, short_end);
    period.long_ret = leg_return(long_begin, n);
    period.long_short = period.long_ret - period.short_ret;
    period.n_short = static_cast<int>(short_end);
    period.n_long = static_cast<int>(n - long_begin);
    return period;
}

namespace detail {

// Compounded simple return of a stock over one calendar month, or nothing
// if the stock has no observations in that month.
inline std::optional<double> month_return(const StockSeries& s, int year, int month) {
    const Date first{year, month, 1};
    const Date last{year, month, Date::days_in_month(year, month)};
    auto it = std::lower_bound(s.dates.begin(), s.dates.end(), first);
    double wealth = 1.0;
    bool any = false;
    for (; it != s.dates.end() && !(last < *it); ++it) {
        wealth *= 1.0 + s.rets[static_cast<std::size_t>(it - s.dates.begin())];
        any = true;
    }
    if (!any) return std::nullopt;
    return wealth - 1.0;
}

inline std::pair<int, int> next_month(int year, int month, int shift) {
    int m = month + shift;
    int y = year + (m - 1) / 12;
    m = (m - 1) % 12 + 1;
    return {y, m};
}

}  // namespace detail

// Last observation date of each calendar month within the given range.
inline std::vector<Date> month_end_dates(const std::vector<Date>& calendar, const DateRange& range) {
    std::vector<Date> out;
    for (std::size_t i = 0; i < calendar.size(); ++i) {
        if (!range.contains(calendar[i])) continue;
        const bool last_of_month = i + 1 == calendar.size() ||
                                   calendar[i + 1].y != calendar[i].y ||
                                   calendar[i + 1].m != calendar[i].m;
        if (last_of_month) out.push_back(calendar[i]);
    }
    return out;
}

// Runs the sort period by period. Daily rebalancing realizes the return on
// the calendar date horizon_shift trading days after formation; monthly
// rebalancing forms at month-ends and realizes the compounded return over
// the calendar month horizon_shift months ahead. Stocks missing the
// realization observation drop out of that period's formation.
inline PortfolioSeries run_backtest(const ForecastTable& forecasts, const ReturnPanel& panel,
                                    const SortConfig& config, const DateRange& range) {
    config.validate();
    range.validate();
    const auto calendar = panel.calendar();
    std::unordered_map<std::int64_t, const StockSeries*> stock_of;
    for (const auto& s : panel.stocks) stock_of[s.permno] = &s;

    PortfolioSeries series;
    series.rebalance = config.rebalance;

    // Group forecast rows by date (rows are sorted by date, permno).
    std::size_t i = 0;
    while (i < forecasts.rows.size()) {
        const Date date = forecasts.rows[i].date;
        std::size_t j = i;
        while (j < forecasts.rows.size() && forecasts.rows[j].date == date) ++j;
        if (!range.contains(date)) {
            i = j;
            continue;
        }

        bool formable = true;
        std::int64_t realization_idx = -1;
        int hold_year = 0, hold_month = 0;
        if (config.rebalance == Rebalance::kDaily) {
            const auto it = std::lower_bound(calendar.begin(), calendar.end(), date);
            const auto ci = static_cast<std::int64_t>(it - calendar.begin());
            realization_idx = ci + config.horizon_shift;
            if (realization_idx >= static_cast<std::int64_t>(calendar.size())) formable = false;
        } else {
            const bool at_month_end = [&] {
                const auto it = std::lower_bound(calendar.begin(), calendar.end(), date);
                const auto ci = static_cast<std::size_t>(it - calendar.begin());
                return ci + 1 == calendar.size() || calendar[ci + 1].y != date.y ||
                       calendar[ci + 1].m != date.m;
            }();
            if (!at_month_end) formable = false;
            std::tie(hold_year, hold_month) = detail::next_month(date.y, date.m, config.horizon_shift);
        }

        if (formable) {
            std::vector<Candidate> candidates;
            for (std::size_t r = i; r < j; ++r) {
                const auto& row = forecasts.rows[r];
                auto sit = stock_of.find(row.permno);
                if (sit == stock_of.end()) continue;
                const StockSeries& s = *sit->second;
                const auto fi = s.index_of(date);
                if (fi < 0) continue;
                double realized;
                if (config.rebalance == Rebalance::kDaily) {
                    const auto ri = s.index_of(calendar[static_cast<std::size_t>(realization_idx)]);
                    if (ri < 0) continue;
                    realized = s.rets[static_cast<std::size_t>(ri)];
                } else {
                    const auto mr = detail::month_return(s, hold_year, hold_month);
                    if (!mr) continue;
                    realized = *mr;
                }
                candidates.push_back({row.permno, row.expected_bp,
                                      s.mktcaps[static_cast<std::size_t>(fi)],
                                      s.prcs[static_cast<std::size_t>(fi)], realized,
                                      s.exchange == Exchange::kNyse});
            }
            if (auto period = form_portfolio(std::move(candidates), date, config))
                series.periods.push_back(*period);
            else
                ++series.skipped;
        }
        i = j;
    }
    return series;
}

struct PerfStats {
    double mean_ann_pct = 0;
    double t_mean = 0;
    double sd_ann_pct = 0;
    double sharpe = 0;
    double min_pct = 0;
    double max_pct = 0;
    double mdd_pct = 0;
    std::int64_t n_periods = 0;
};

// Mean and SD are annualized percentage points, Sharpe their ratio, min/max
// per-period extremes, MDD the largest peak-to-trough decline of compounded
// wealth. The t-statistic uses a Newey-West standard error.
inline PerfStats perf_stats(std::span<const double> returns, int periods_per_year, int nw_lags) {
    const auto T = static_cast<std::int64_t>(returns.size());
    if (T < 2) throw DataError("perf_stats: need at least 2 periods, got " + std::to_string(T));

    double mean = 0;
    for (auto r : returns) mean += r;
    mean /= static_cast<double>(T);
    double var = 0;
    for (auto r : returns) var += (r - mean) * (r - mean);
    var /= static_cast<double>(T - 1);
    const double sd = std::sqrt(var);
    if (sd == 0)
        throw NumericError("perf_stats: zero return volatility, Sharpe ratio undefined");

    PerfStats stats;
    stats.n_periods = T;
    stats.mean_ann_pct = mean * periods_per_year * 100.0;
    stats.sd_ann_pct = sd * std::sqrt(static_cast<double>(periods_per_year)) * 100.0;
    stats.sharpe = stats.mean_ann_pct / stats.sd_ann_pct;
    const double se = newey_west_se_of_mean(returns, std::min<int>(nw_lags, static_cast<int>(T - 1)));
    stats.t_mean = se > 0 ? mean / se : std::numeric_limits<double>::infinity();

    double mn = returns[0], mx = returns[0];
    for (auto r : returns) {
        mn = std::min(mn, r);
        mx = std::max(mx, r);
    }
    stats.min_pct = mn * 100.0;
    stats.max_pct = mx * 100.0;

    double wealth = 1.0, peak = 1.0, mdd = 0.0;
    for (auto r : returns) {
        wealth *= 1.0 + r;
        peak = std::max(peak, wealth);
        mdd = std::max(mdd, (peak - wealth) / peak);
    }
    stats.mdd_pct = mdd * 100.0;
    return stats;
}

// Worst-case transaction-cost adjustment: the gross annualized mean less
// turnover x cost per trade per period, annualized, in percentage points.
inline double net_of_cost(double gross_annual_mean_pct, double turnover_per_period,
                          double cost_per_trade, int periods_per_year) {
    if (turnover_per_period < 0 || cost_per_trade < 0 || periods_per_year < 0)
        throw ConfigError("net_of_cost: inputs must be nonnegative");
    return gross_annual_mean_pct -
           turnover_per_period * cost_per_trade * periods_per_year * 100.0;
}

// Cumulative log of compounded wealth, the quantity plotted for each leg.
inline std::vector<double> cumulative_log_returns(std::span<const double> returns) {
    std::vector<double> out;
    out.reserve(returns.size());
    double acc = 0;
    for (auto r : returns) {
        acc += std::log1p(r);
        out.push_back(acc);
    }
    return out;
}

inline void write_portfolio_series_csv(const PortfolioSeries& series, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open series file for writing: " + path);
    os << "date,long,short,long_short,n_long,n_short\n";
    char buf[200];
    for (const auto& p : series.periods) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%d,%d\n",
                      p.formation.to_string().c_str(), p.long_ret, p.short_ret, p.long_short,
                      p.n_long, p.n_short);
        os << buf;
    }
}

inline PortfolioSeries load_portfolio_series_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open series file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("series file is empty: " + path);
    if (line.ends_with('\r')) line.pop_back();
    if (line != "date,long,short,long_short,n_long,n_short")
        throw DataError("unexpected series header: '" + line + "'");
    PortfolioSeries series;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 6)
            throw DataError("line " + std::to_string(line_no) + ": expected 6 fields");
        PortfolioPeriod p;
        p.formation = parse_date(fields[0]);
        p.long_ret = detail::parse_double(fields[1], line_no, "long");
        p.short_ret = detail::parse_double(fields[2], line_no, "short");
        p.long_short = detail::parse_double(fields[3], line_no, "long_short");
        p.n_long = static_cast<int>(detail::parse_int(fields[4], line_no, "n_long"));
        p.n_short = static_cast<int>(detail::parse_int(fields[5], line_no, "n_short"));
        series.periods.push_back(p);
    }
    return series;
}

inline void write_cumulative_log_csv(const PortfolioSeries& series, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open cumulative file for writing: " + path);
    os << "date,cum_log_long,cum_log_short,cum_log_long_short\n";
    double cl = 0, cs = 0, cls = 0;
    char buf[200];
    for (const auto& p : series.periods) {
        cl += std::log1p(p.long_ret);
        cs += std::log1p(p.short_ret);
        cls += std::log1p(p.long_short);
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g\n", p.formation.to_string().c_str(),
                      cl, cs, cls);
        os << buf;
    }
}

}  // namespace tokencast
