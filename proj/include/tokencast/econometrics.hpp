#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tokencast/dates.hpp"
#include "tokencast/errors.hpp"
#include "tokencast/panel.hpp"

// Cross-sectional and time-series regression machinery: OLS with adjusted
// R-squared, Newey-West (Bartlett kernel) HAC covariance, per-period
// cross-sectional regressions averaged over time, and spanning tests of a
// strategy against factor returns.

namespace tokencast {

// Minimal row-major double matrix; big-league linear algebra is not needed
// for designs with a dozen columns.
struct Mat {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::int64_t r, std::int64_t c) : rows(r), cols(c), a(static_cast<std::size_t>(r * c), 0.0) {}

    double& at(std::int64_t r, std::int64_t c) { return a[static_cast<std::size_t>(r * cols + c)]; }
    double at(std::int64_t r, std::int64_t c) const {
        return a[static_cast<std::size_t>(r * cols + c)];
    }
};

namespace detail {

// Solves the symmetric positive-definite system M x = b in place via
// Cholesky. Throws on (numerical) rank deficiency.
inline std::vector<double> solve_spd(Mat m, std::vector<double> b) {
    const auto n = m.rows;
    double scale = 0;
    for (std::int64_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(m.at(i, i)));
    if (scale == 0) scale = 1;
    for (std::int64_t j = 0; j < n; ++j) {
        double d = m.at(j, j);
        for (std::int64_t k = 0; k < j; ++k) d -= m.at(j, k) * m.at(j, k);
        if (d <= 1e-12 * scale)
            throw NumericError("singular design matrix (rank-deficient at column " +
                               std::to_string(j) + ")");
        const double l = std::sqrt(d);
        m.at(j, j) = l;
        for (std::int64_t i = j + 1; i < n; ++i) {
            double v = m.at(i, j);
            for (std::int64_t k = 0; k < j; ++k) v -= m.at(i, k) * m.at(j, k);
            m.at(i, j) = v / l;
        }
    }
    for (std::int64_t i = 0; i < n; ++i) {
        double v = b[static_cast<std::size_t>(i)];
        for (std::int64_t k = 0; k < i; ++k) v -= m.at(i, k) * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = v / m.at(i, i);
    }
    for (std::int64_t i = n - 1; i >= 0; --i) {
        double v = b[static_cast<std::size_t>(i)];
        for (std::int64_t k = i + 1; k < n; ++k) v -= m.at(k, i) * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = v / m.at(i, i);
    }
    return b;
}

inline Mat invert_spd(const Mat& m) {
    const auto n = m.rows;
    Mat inv(n, n);
    for (std::int64_t j = 0; j < n; ++j) {
        std::vector<double> e(static_cast<std::size_t>(n), 0.0);
        e[static_cast<std::size_t>(j)] = 1.0;
        auto col = solve_spd(m, std::move(e));
        for (std::int64_t i = 0; i < n; ++i) inv.at(i, j) = col[static_cast<std::size_t>(i)];
    }
    return inv;
}

}  // namespace detail

struct OlsResult {
    std::vector<double> coef;
    std::vector<double> residuals;
    double r2 = 0;
    double adj_r2 = 0;
    std::int64_t n_obs = 0;
    std::int64_t n_regressors = 0;  // non-intercept columns
};

// OLS of y on X. X must already carry its intercept column (by convention
// the first one); the adjusted R-squared counts k = cols - 1 non-intercept
// regressors: adj = 1 - (1 - R^2)(T - 1)/(T - k - 1).
inline OlsResult ols(std::span<const double> y, const Mat& x) {
    const auto T = x.rows;
    const auto p = x.cols;
    if (static_cast<std::int64_t>(y.size()) != T)
        throw ShapeError("ols: " + std::to_string(y.size()) + " responses for " +
                         std::to_string(T) + " design rows");
    if (T <= p) throw DataError("ols: needs more observations than columns");

    Mat xtx(p, p);
    std::vector<double> xty(static_cast<std::size_t>(p), 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t i = 0; i < p; ++i) {
            xty[static_cast<std::size_t>(i)] += x.at(t, i) * y[static_cast<std::size_t>(t)];
            for (std::int64_t j = i; j < p; ++j) xtx.at(i, j) += x.at(t, i) * x.at(t, j);
        }
    }
    for (std::int64_t i = 0; i < p; ++i)
        for (std::int64_t j = 0; j < i; ++j) xtx.at(i, j) = xtx.at(j, i);

    OlsResult res;
    res.coef = detail::solve_spd(xtx, xty);
    res.n_obs = T;
    res.n_regressors = p - 1;
    res.residuals.resize(static_cast<std::size_t>(T));
    double mean_y = 0;
    for (auto v : y) mean_y += v;
    mean_y /= static_cast<double>(T);
    double ssr = 0, sst = 0;
    for (std::int64_t t = 0; t < T; ++t) {
        double fit = 0;
        for (std::int64_t j = 0; j < p; ++j) fit += x.at(t, j) * res.coef[static_cast<std::size_t>(j)];
        const double e = y[static_cast<std::size_t>(t)] - fit;
        res.residuals[static_cast<std::size_t>(t)] = e;
        ssr += e * e;
        const double c = y[static_cast<std::size_t>(t)] - mean_y;
        sst += c * c;
    }
    res.r2 = sst > 0 ? 1.0 - ssr / sst : (ssr == 0 ? 1.0 : 0.0);
    const double k = static_cast<double>(res.n_regressors);
    res.adj_r2 = 1.0 - (1.0 - res.r2) * (static_cast<double>(T) - 1.0) /
                           (static_cast<double>(T) - k - 1.0);
    return res;
}

// Bartlett-kernel long-run covariance of a score sequence g_t (rows of
// `scores`): S = sum_t g g' + sum_{j=1..L} w_j sum_t (g_t g_{t-j}' + sym),
// w_j = 1 - j/(L+1). With L = 0 this is the White (HC0) middle matrix.
inline Mat newey_west_long_run(const Mat& scores, int lags) {
    const auto T = scores.rows;
    const auto p = scores.cols;
    if (lags < 0) throw ConfigError("newey_west: lags must be >= 0");
    if (lags >= T)
        throw ConfigError("newey_west: lags (" + std::to_string(lags) +
                          ") must be smaller than the number of observations (" +
                          std::to_string(T) + ")");
    Mat s(p, p);
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t i = 0; i < p; ++i)
            for (std::int64_t j = 0; j < p; ++j) s.at(i, j) += scores.at(t, i) * scores.at(t, j);
    for (int lag = 1; lag <= lags; ++lag) {
        const double w = 1.0 - static_cast<double>(lag) / (lags + 1.0);
        for (std::int64_t t = lag; t < T; ++t)
            for (std::int64_t i = 0; i < p; ++i)
                for (std::int64_t j = 0; j < p; ++j) {
                    const double v = scores.at(t, i) * scores.at(t - lag, j);
                    s.at(i, j) += w * v;
                    s.at(j, i) += w * v;
                }
    }
    return s;
}

// HAC standard errors for OLS coefficients: diag of (X'X)^-1 S (X'X)^-1
// with S built from the residual-weighted scores x_t * e_t.
inline std::vector<double> newey_west_se(const Mat& x, std::span<const double> residuals,
                                         int lags) {
    const auto T = x.rows;
    const auto p = x.cols;
    if (static_cast<std::int64_t>(residuals.size()) != T)
        throw ShapeError("newey_west_se: residual count does not match design rows");
    Mat scores(T, p);
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t j = 0; j < p; ++j)
            scores.at(t, j) = x.at(t, j) * residuals[static_cast<std::size_t>(t)];
    const Mat s = newey_west_long_run(scores, lags);
    Mat xtx(p, p);
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t i = 0; i < p; ++i)
            for (std::int64_t j = 0; j < p; ++j) xtx.at(i, j) += x.at(t, i) * x.at(t, j);
    const Mat bread = detail::invert_spd(xtx);
    std::vector<double> se(static_cast<std::size_t>(p), 0.0);
    for (std::int64_t i = 0; i < p; ++i) {
        double v = 0;
        for (std::int64_t a = 0; a < p; ++a)
            for (std::int64_t b = 0; b < p; ++b) v += bread.at(i, a) * s.at(a, b) * bread.at(b, i);
        se[static_cast<std::size_t>(i)] = std::sqrt(std::max(v, 0.0));
    }
    return se;
}

// HAC standard error of a sample mean (regression on a constant).
inline double newey_west_se_of_mean(std::span<const double> series, int lags) {
    const auto T = static_cast<std::int64_t>(series.size());
    if (T < 2) throw DataError("newey_west_se_of_mean: need at least 2 observations");
    double mean = 0;
    for (auto v : series) mean += v;
    mean /= static_cast<double>(T);
    Mat scores(T, 1);
    for (std::int64_t t = 0; t < T; ++t) scores.at(t, 0) = series[static_cast<std::size_t>(t)] - mean;
    const Mat s = newey_west_long_run(scores, lags);
    return std::sqrt(std::max(s.at(0, 0), 0.0)) / static_cast<double>(T);
}

// The univariate mapping between a mean cross-sectional R-squared and the
// implied cross-sectional correlation (both as fractions).
inline double corr_from_r2(double r2) {
    if (r2 < 0) throw NumericError("corr_from_r2: negative R-squared");
    return std::sqrt(r2);
}

struct FmbResult {
    double mean_slope = 0;
    double t_slope = 0;
    double mean_adj_r2_pct = 0;  // percent
    std::int64_t n_dates_used = 0;
    std::int64_t n_dates_dropped = 0;
    std::vector<double> slopes;   // retained per-date slopes, for audit
    std::vector<double> adj_r2s;  // retained per-date adjusted R-squared (fractions)
};

struct FmbCrossSection {
    Date date;
    std::vector<double> forecast_bp;
    std::vector<double> realized_bp;
};

// Per-date univariate OLS of realized on forecast (both in basis points);
// the slope series is averaged over time with a Newey-West t-statistic.
// Dates with fewer than 3 observations, or with a degenerate (constant)
// forecast cross-section, are dropped and counted.
inline FmbResult fama_macbeth(const std::vector<FmbCrossSection>& cross_sections, int lags) {
    FmbResult res;
    for (const auto& cs : cross_sections) {
        if (cs.forecast_bp.size() != cs.realized_bp.size())
            throw ShapeError("fama_macbeth: forecast/realized size mismatch on " +
                             cs.date.to_string());
        const auto n = static_cast<std::int64_t>(cs.forecast_bp.size());
        if (n < 3) {
            ++res.n_dates_dropped;
            continue;
        }
        Mat x(n, 2);
        for (std::int64_t i = 0; i < n; ++i) {
            x.at(i, 0) = 1.0;
            x.at(i, 1) = cs.forecast_bp[static_cast<std::size_t>(i)];
        }
        try {
            const OlsResult fit = ols(cs.realized_bp, x);
            res.slopes.push_back(fit.coef[1]);
            res.adj_r2s.push_back(fit.adj_r2);
        } catch (const NumericError&) {
            ++res.n_dates_dropped;  // constant forecasts: slope undefined
        }
    }
    res.n_dates_used = static_cast<std::int64_t>(res.slopes.size());
    if (res.n_dates_used < 2)
        throw DataError("fama_macbeth: fewer than 2 usable dates (" +
                        std::to_string(res.n_dates_used) + " usable, " +
                        std::to_string(res.n_dates_dropped) + " dropped)");
    double mean_slope = 0, mean_r2 = 0;
    for (auto v : res.slopes) mean_slope += v;
    mean_slope /= static_cast<double>(res.n_dates_used);
    for (auto v : res.adj_r2s) mean_r2 += v;
    mean_r2 /= static_cast<double>(res.n_dates_used);
    res.mean_slope = mean_slope;
    res.mean_adj_r2_pct = 100.0 * mean_r2;
    const double se = newey_west_se_of_mean(res.slopes, std::min<int>(lags, static_cast<int>(res.slopes.size() - 1)));
    res.t_slope = se > 0 ? mean_slope / se : std::numeric_limits<double>::infinity();
    return res;
}

struct FactorTable {
    std::vector<std::string> names;
    std::vector<Date> dates;            // ascending
    std::vector<std::vector<double>> rows;  // one per date, names.size() values
};

// CSV with a "date,<factor>,..." header and decimal returns.
inline FactorTable load_factor_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open factor file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("factor file is empty: " + path);
    if (line.ends_with('\r')) line.pop_back();
    auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header[0] != "date")
        throw DataError("factor file must start with a 'date,<factor>,...' header");
    FactorTable table;
    for (std::size_t i = 1; i < header.size(); ++i) table.names.emplace_back(header[i]);
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields");
        table.dates.push_back(parse_date(fields[0]));
        std::vector<double> row;
        for (std::size_t i = 1; i < fields.size(); ++i)
            row.push_back(detail::parse_double(fields[i], line_no, "factor value"));
        table.rows.push_back(std::move(row));
        if (table.dates.size() > 1 && !(table.dates[table.dates.size() - 2] < table.dates.back()))
            throw DataError("factor file dates must be strictly increasing (line " +
                            std::to_string(line_no) + ")");
    }
    return table;
}

struct SpanningResult {
    double alpha_ann_pct = 0;  // per-period alpha x periods_per_year x 100
    double t_alpha = 0;
    std::vector<std::string> factor_names;
    std::vector<double> betas;
    std::vector<double> t_betas;
    double adj_r2_pct = 0;
    std::int64_t n_obs = 0;
};

// Time-series OLS of a strategy on factor returns, intercept included.
// Inference is Newey-West with the given lag count; alpha is annualized.
inline SpanningResult spanning_test(std::span<const double> y, const Mat& factors,
                                    const std::vector<std::string>& factor_names, int lags,
                                    int periods_per_year) {
    const auto T = factors.rows;
    const auto k = factors.cols;
    if (static_cast<std::int64_t>(y.size()) != T)
        throw ShapeError("spanning_test: series length does not match factor rows");
    if (static_cast<std::int64_t>(factor_names.size()) != k)
        throw ShapeError("spanning_test: factor name count does not match columns");
    if (T <= k + 1) throw DataError("spanning_test: not enough observations for " +
                                    std::to_string(k) + " factors");
    Mat x(T, k + 1);
    for (std::int64_t t = 0; t < T; ++t) {
        x.at(t, 0) = 1.0;
        for (std::int64_t j = 0; j < k; ++j) x.at(t, j + 1) = factors.at(t, j);
    }
    const OlsResult fit = ols(y, x);
    const auto se = newey_west_se(x, fit.residuals, lags);
    SpanningResult res;
    res.alpha_ann_pct = fit.coef[0] * periods_per_year * 100.0;
    res.t_alpha = se[0] > 0 ? fit.coef[0] / se[0] : (fit.coef[0] == 0 ? 0.0 : std::numeric_limits<double>::infinity());
    res.factor_names = factor_names;
    for (std::int64_t j = 0; j < k; ++j) {
        res.betas.push_back(fit.coef[static_cast<std::size_t>(j + 1)]);
        const double s = se[static_cast<std::size_t>(j + 1)];
        res.t_betas.push_back(s > 0 ? fit.coef[static_cast<std::size_t>(j + 1)] / s
                                    : std::numeric_limits<double>::infinity());
    }
    res.adj_r2_pct = fit.adj_r2 * 100.0;
    res.n_obs = T;
    return res;
}

// Inner join of a dated series with a factor table. Dates present in the
// series but missing from the factors shrink the sample; if nothing
// overlaps, that is a join error naming examples of the missing dates.
inline void align_with_factors(const std::vector<Date>& series_dates,
                               std::span<const double> series_values, const FactorTable& factors,
                               std::vector<double>& y_out, Mat& x_out) {
    std::map<Date, std::size_t> factor_index;
    for (std::size_t i = 0; i < factors.dates.size(); ++i) factor_index[factors.dates[i]] = i;
    std::vector<std::size_t> keep_series, keep_factor;
    std::vector<Date> missing;
    for (std::size_t i = 0; i < series_dates.size(); ++i) {
        auto it = factor_index.find(series_dates[i]);
        if (it == factor_index.end()) {
            if (missing.size() < 5) missing.push_back(series_dates[i]);
            continue;
        }
        keep_series.push_back(i);
        keep_factor.push_back(it->second);
    }
    if (keep_series.empty()) {
        std::string msg = "no overlapping dates between series and factors; series dates such as";
        for (const auto& d : missing) msg += " " + d.to_string();
        msg += " are missing from the factor table";
        throw DataError(msg);
    }
    const auto T = static_cast<std::int64_t>(keep_series.size());
    const auto k = static_cast<std::int64_t>(factors.names.size());
    y_out.resize(static_cast<std::size_t>(T));
    x_out = Mat(T, k);
    for (std::int64_t t = 0; t < T; ++t) {
        y_out[static_cast<std::size_t>(t)] = series_values[keep_series[static_cast<std::size_t>(t)]];
        const auto& row = factors.rows[keep_factor[static_cast<std::size_t>(t)]];
        for (std::int64_t j = 0; j < k; ++j) x_out.at(t, j) = row[static_cast<std::size_t>(j)];
    }
}

}  // namespace tokencast
