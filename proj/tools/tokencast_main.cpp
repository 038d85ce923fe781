// Command-line front end for the return-token forecasting pipeline:
// synthesize panels, train models, evaluate, forecast, backtest and run the
// regression tests. Every command is deterministic given its config and
// seed; stdout carries results, stderr carries diagnostics.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>

#include "tokencast/backtest.hpp"
#include "tokencast/bins.hpp"
#include "tokencast/checkpoint.hpp"
#include "tokencast/econometrics.hpp"
#include "tokencast/forecast.hpp"
#include "tokencast/model.hpp"
#include "tokencast/panel.hpp"
#include "tokencast/trainer.hpp"

namespace tc = tokencast;

namespace {

tc::Date parse_date_flag(const std::string& s, const char* flag) {
    try {
        return tc::parse_date(s);
    } catch (const tc::DataError& e) {
        throw tc::ConfigError(std::string(flag) + ": " + e.what());
    }
}

tc::LoadFilters parse_filters(const std::string& exchanges, const std::string& share_codes) {
    tc::LoadFilters filters;
    if (!exchanges.empty()) {
        filters.exchanges.clear();
        std::stringstream ss(exchanges);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item == "NYSE")
                filters.exchanges.insert(tc::Exchange::kNyse);
            else if (item == "AMEX")
                filters.exchanges.insert(tc::Exchange::kAmex);
            else if (item == "NASDAQ")
                filters.exchanges.insert(tc::Exchange::kNasdaq);
            else if (item == "OTHER")
                filters.exchanges.insert(tc::Exchange::kOther);
            else
                throw tc::ConfigError("unknown exchange '" + item + "'");
        }
    }
    if (!share_codes.empty()) {
        filters.share_codes.clear();
        std::stringstream ss(share_codes);
        std::string item;
        while (std::getline(ss, item, ','))
            filters.share_codes.insert(std::stoi(item));
    }
    return filters;
}

// Full-panel date range, used when --start/--end are omitted.
tc::DateRange full_range(const tc::ReturnPanel& panel) {
    const auto cal = panel.calendar();
    if (cal.empty()) throw tc::DataError("panel has no observations");
    return {cal.front(), cal.back()};
}

tc::DateRange range_from_flags(const tc::ReturnPanel& panel, const std::string& start,
                               const std::string& end) {
    tc::DateRange r = full_range(panel);
    if (!start.empty()) r.begin = parse_date_flag(start, "--start");
    if (!end.empty()) r.end = parse_date_flag(end, "--end");
    r.validate();
    return r;
}

// ---------------------------------------------------------------- synth --

struct SynthArgs {
    std::string out;
    tc::SyntheticSpec spec;
    std::string start_date = "2001-01-01";
};

void run_synth(const SynthArgs& args) {
    tc::SyntheticSpec spec = args.spec;
    spec.start_date = parse_date_flag(args.start_date, "--start-date");
    const tc::ReturnPanel panel = tc::generate_synthetic(spec);
    tc::write_panel_csv(panel, args.out);
    std::printf("wrote %zu observations for %d stocks to %s\n", panel.n_observations(),
                spec.n_stocks, args.out.c_str());
}

// ---------------------------------------------------------------- train --

struct TrainArgs {
    std::string panel_path;
    std::string out;
    std::string log_path;
    std::string exchanges;
    std::string share_codes;
    std::string train_start, train_end, val_start, val_end;
    tc::ModelConfig model;
    tc::TrainConfig train;
    int bin_width_bp = 50;
};

void run_train(const TrainArgs& args) {
    tc::BinSpec bins;
    bins.bin_width_bp = args.bin_width_bp;
    bins.validate();

    const auto filters = parse_filters(args.exchanges, args.share_codes);
    const tc::ReturnPanel panel = tc::load_panel(args.panel_path, filters);
    if (panel.stocks.empty()) throw tc::DataError("no stocks survive the load filters");

    tc::DateRange train_range = full_range(panel);
    if (!args.train_start.empty()) train_range.begin = parse_date_flag(args.train_start, "--train-start");
    if (args.train_end.empty()) throw tc::ConfigError("--train-end is required");
    train_range.end = parse_date_flag(args.train_end, "--train-end");
    train_range.validate();

    tc::ReturnPanel val_panel;
    if (!args.val_end.empty()) {
        tc::DateRange val_range;
        val_range.begin = args.val_start.empty() ? train_range.end.next_day()
                                                 : parse_date_flag(args.val_start, "--val-start");
        val_range.end = parse_date_flag(args.val_end, "--val-end");
        val_range.validate();
        if (!(train_range.end < val_range.begin))
            throw tc::ConfigError("validation range must start after the training range ends");
        val_panel = tc::slice_panel(panel, val_range);
    }
    const tc::ReturnPanel train_panel = tc::slice_panel(panel, train_range);

    tc::TrainResult result = tc::train(train_panel, val_panel, args.model, args.train, bins);
    tc::save_checkpoint(result.params, args.out, args.train.horizon);
    const std::string log_path = args.log_path.empty() ? args.out + ".log" : args.log_path;
    tc::write_training_log(result.history, log_path);

    if (result.history.empty()) {
        std::printf("trained 0 steps; wrote initial checkpoint to %s\n", args.out.c_str());
    } else {
        const auto& last = result.history.back();
        std::printf("final step %" PRId64 ": train_loss=%.6f val_loss=%.6f (checkpoint %s, log %s)\n",
                    last.step, last.train_loss, last.val_loss, args.out.c_str(), log_path.c_str());
    }
}

// ----------------------------------------------------------------- eval --

struct EvalArgs {
    std::string panel_path;
    std::string ckpt;
    std::string start, end;
    std::int64_t batches = 8;
    std::int64_t batch_size = 64;
    std::uint64_t seed = 0;
};

void run_eval(const EvalArgs& args) {
    const tc::Checkpoint ckpt = tc::load_checkpoint(args.ckpt);
    const tc::ReturnPanel panel = tc::load_panel(args.panel_path);
    const tc::ReturnPanel slice = tc::slice_panel(panel, range_from_flags(panel, args.start, args.end));
    tc::Rng rng(tc::derive_seed(args.seed, "eval"));
    const double loss =
        tc::evaluate_loss(ckpt.params, slice, ckpt.horizon, args.batches, args.batch_size, rng);
    std::printf("eval_loss=%.6f\n", loss);
}

// ------------------------------------------------------------- forecast --

struct ForecastArgs {
    std::string panel_path;
    std::string ckpt;
    std::string out;
    std::string start, end;
    std::int64_t min_window = 0;  // 0 = checkpoint block size
    int threads = 1;
};

std::vector<tc::Date> forecast_dates(const tc::ReturnPanel& panel, const tc::DateRange& range,
                                     int horizon) {
    const auto calendar = panel.calendar();
    if (horizon == 1) {
        std::vector<tc::Date> dates;
        for (const auto& d : calendar)
            if (range.contains(d)) dates.push_back(d);
        return dates;
    }
    return tc::month_end_dates(calendar, range);
}

void run_forecast(const ForecastArgs& args) {
    const tc::Checkpoint ckpt = tc::load_checkpoint(args.ckpt);
    const tc::ReturnPanel panel = tc::load_panel(args.panel_path);
    const tc::DateRange range = range_from_flags(panel, args.start, args.end);

    tc::ForecastOptions opts;
    opts.horizon = ckpt.horizon;
    opts.min_window = args.min_window > 0 ? args.min_window : ckpt.params.config.block_size;
    opts.threads = args.threads;
    const auto dates = forecast_dates(panel, range, ckpt.horizon);
    const tc::ForecastTable table =
        tc::build_forecast_table(ckpt.params, panel, dates, opts);
    tc::write_forecast_csv(table, args.out);
    std::printf("wrote %zu forecasts (horizon %d, %" PRId64 " stock-dates skipped) to %s\n",
                table.rows.size(), table.horizon, table.skipped, args.out.c_str());
}

// ------------------------------------------------------------- backtest --

struct BacktestArgs {
    std::string panel_path;
    std::string ckpt;
    std::string outdir;
    std::string factors_path;
    std::string start, end;
    std::string weighting = "equal";
    double mcap_pct = 10.0;
    std::vector<double> price_filters = {0.0, 1.0, 3.0, 5.0};
    bool skip_day = false;
    bool nyse_breakpoints = false;
    int quantiles = 10;
    std::int64_t min_window = 0;
    int threads = 1;
    int nw_lags = -1;  // -1 = 20 daily / 4 monthly
    double cost_bp = 5.0;
};

void run_backtest(const BacktestArgs& args) {
    const tc::Checkpoint ckpt = tc::load_checkpoint(args.ckpt);
    const tc::ReturnPanel panel = tc::load_panel(args.panel_path);
    const tc::DateRange range = range_from_flags(panel, args.start, args.end);
    const bool monthly = ckpt.horizon == 20;
    const int ppy = monthly ? 12 : 252;
    const int lags = args.nw_lags >= 0 ? args.nw_lags : (monthly ? 4 : 20);

    std::filesystem::create_directories(args.outdir);

    tc::ForecastOptions fopts;
    fopts.horizon = ckpt.horizon;
    fopts.min_window = args.min_window > 0 ? args.min_window : ckpt.params.config.block_size;
    fopts.threads = args.threads;
    const auto dates = forecast_dates(panel, range, ckpt.horizon);
    const tc::ForecastTable forecasts = tc::build_forecast_table(ckpt.params, panel, dates, fopts);

    tc::SortConfig config;
    config.n_quantiles = args.quantiles;
    config.mcap_percentile = args.mcap_pct;
    config.nyse_breakpoints_only = args.nyse_breakpoints;
    config.horizon_shift = args.skip_day ? 2 : 1;
    config.rebalance = monthly ? tc::Rebalance::kMonthly : tc::Rebalance::kDaily;
    if (args.weighting == "equal")
        config.weighting = tc::Weighting::kEqual;
    else if (args.weighting == "value")
        config.weighting = tc::Weighting::kValue;
    else
        throw tc::ConfigError("--weighting must be 'equal' or 'value'");

    std::optional<tc::FactorTable> factors;
    if (!args.factors_path.empty()) factors = tc::load_factor_csv(args.factors_path);

    const std::string stats_path = args.outdir + "/stats.csv";
    std::ofstream stats(stats_path, std::ios::trunc);
    if (!stats) throw tc::DataError("cannot open " + stats_path);
    stats << "weighting,horizon_shift,price_filter,mcap_pct,n_periods,skipped,"
             "mean_ann_pct,t_mean,sd_ann_pct,sharpe,min_pct,max_pct,mdd_pct,net_worst_case_pct\n";
    std::ofstream spanning;
    if (factors) {
        spanning.open(args.outdir + "/spanning.csv", std::ios::trunc);
        spanning << "price_filter,term,estimate,t_stat\n";
    }

    std::printf("%-9s %5s %9s %7s %8s %7s %7s %8s %8s %8s\n", "weighting", "shift", "price", "n",
                "mean%", "t", "sd%", "sharpe", "mdd%", "net%");
    for (double pf : args.price_filters) {
        tc::SortConfig c = config;
        c.price_filter = pf;
        const tc::PortfolioSeries series = tc::run_backtest(forecasts, panel, c, range);
        if (series.periods.size() < 2) {
            std::fprintf(stderr, "price filter %.0f: only %zu formable periods, skipping stats\n",
                         pf, series.periods.size());
            continue;
        }
        std::vector<double> ls;
        for (const auto& p : series.periods) ls.push_back(p.long_short);
        const tc::PerfStats st = tc::perf_stats(ls, ppy, lags);
        // Worst case: both legs fully replaced every period, 400% turnover.
        const double net =
            tc::net_of_cost(st.mean_ann_pct, 4.0, args.cost_bp / 10000.0, ppy);

        char label[64];
        std::snprintf(label, sizeof(label), "%s_h%d_p%.0f",
                      args.weighting == "equal" ? "ew" : "vw", c.horizon_shift, pf);
        tc::write_portfolio_series_csv(series, args.outdir + "/series_" + label + ".csv");
        tc::write_cumulative_log_csv(series, args.outdir + "/cumlog_" + label + ".csv");

        char row[512];
        std::snprintf(row, sizeof(row), "%s,%d,%.10g,%.10g,%lld,%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      args.weighting.c_str(), c.horizon_shift, pf, c.mcap_percentile,
                      static_cast<long long>(st.n_periods), static_cast<long long>(series.skipped),
                      st.mean_ann_pct, st.t_mean, st.sd_ann_pct, st.sharpe, st.min_pct, st.max_pct,
                      st.mdd_pct, net);
        stats << row;
        std::printf("%-9s %5d %9.0f %7lld %8.2f %7.2f %7.2f %8.2f %8.2f %8.2f\n",
                    args.weighting.c_str(), c.horizon_shift, pf,
                    static_cast<long long>(st.n_periods), st.mean_ann_pct, st.t_mean,
                    st.sd_ann_pct, st.sharpe, st.mdd_pct, net);

        if (factors) {
            std::vector<tc::Date> dates_y;
            for (const auto& p : series.periods) dates_y.push_back(p.formation);
            std::vector<double> y;
            tc::Mat x;
            tc::align_with_factors(dates_y, ls, *factors, y, x);
            const tc::SpanningResult sp =
                tc::spanning_test(y, x, factors->names, lags, ppy);
            char line[256];
            std::snprintf(line, sizeof(line), "%.10g,alpha_ann_pct,%.10g,%.10g\n", pf,
                          sp.alpha_ann_pct, sp.t_alpha);
            spanning << line;
            for (std::size_t f = 0; f < sp.factor_names.size(); ++f) {
                std::snprintf(line, sizeof(line), "%.10g,beta_%s,%.10g,%.10g\n", pf,
                              sp.factor_names[f].c_str(), sp.betas[f], sp.t_betas[f]);
                spanning << line;
            }
            std::snprintf(line, sizeof(line), "%.10g,adj_r2_pct,%.10g,\n", pf, sp.adj_r2_pct);
            spanning << line;
        }
    }
    std::printf("outputs written to %s\n", args.outdir.c_str());
}

// ------------------------------------------------------------------ fmb --

struct FmbArgs {
    std::string forecasts_path;
    std::string panel_path;
    std::string out;
    int lags = -1;  // -1 = 20 daily / 4 monthly
    bool skip = false;
};

void run_fmb(const FmbArgs& args) {
    const tc::ForecastTable forecasts = tc::load_forecast_csv(args.forecasts_path);
    const tc::ReturnPanel panel = tc::load_panel(args.panel_path);
    const auto calendar = panel.calendar();
    const bool monthly = forecasts.horizon == 20;
    const int lags = args.lags >= 0 ? args.lags : (monthly ? 4 : 20);
    const int shift = args.skip ? 2 : 1;

    std::unordered_map<std::int64_t, const tc::StockSeries*> stock_of;
    for (const auto& s : panel.stocks) stock_of[s.permno] = &s;

    std::vector<tc::FmbCrossSection> cross_sections;
    std::size_t i = 0;
    while (i < forecasts.rows.size()) {
        const tc::Date date = forecasts.rows[i].date;
        std::size_t j = i;
        tc::FmbCrossSection cs;
        cs.date = date;
        std::int64_t realization_idx = -1;
        int hold_year = 0, hold_month = 0;
        if (monthly) {
            std::tie(hold_year, hold_month) = tc::detail::next_month(date.y, date.m, shift);
        } else {
            const auto it = std::lower_bound(calendar.begin(), calendar.end(), date);
            realization_idx = (it - calendar.begin()) + shift;
        }
        while (j < forecasts.rows.size() && forecasts.rows[j].date == date) {
            const auto& row = forecasts.rows[j];
            ++j;
            auto sit = stock_of.find(row.permno);
            if (sit == stock_of.end()) continue;
            const tc::StockSeries& s = *sit->second;
            double realized_bp;
            if (monthly) {
                const auto mr = tc::detail::month_return(s, hold_year, hold_month);
                if (!mr) continue;
                realized_bp = *mr * 10000.0;
            } else {
                if (realization_idx >= static_cast<std::int64_t>(calendar.size())) continue;
                const auto ri = s.index_of(calendar[static_cast<std::size_t>(realization_idx)]);
                if (ri < 0) continue;
                realized_bp = s.rets[static_cast<std::size_t>(ri)] * 10000.0;
            }
            cs.forecast_bp.push_back(row.expected_bp);
            cs.realized_bp.push_back(realized_bp);
        }
        if (!cs.forecast_bp.empty()) cross_sections.push_back(std::move(cs));
        i = j;
    }

    const tc::FmbResult res = tc::fama_macbeth(cross_sections, lags);
    const double corr_pct = tc::corr_from_r2(std::max(res.mean_adj_r2_pct, 0.0) / 100.0) * 100.0;
    char line[512];
    std::snprintf(line, sizeof(line),
                  "horizon,shift,mean_slope,t_slope,mean_adj_r2_pct,implied_corr_pct,n_dates,n_dropped\n"
                  "%d,%d,%.10g,%.10g,%.10g,%.10g,%lld,%lld\n",
                  forecasts.horizon, shift, res.mean_slope, res.t_slope, res.mean_adj_r2_pct,
                  corr_pct, static_cast<long long>(res.n_dates_used),
                  static_cast<long long>(res.n_dates_dropped));
    std::fputs(line, stdout);
    if (!args.out.empty()) {
        std::ofstream os(args.out, std::ios::trunc);
        if (!os) throw tc::DataError("cannot open " + args.out);
        os << line;
    }
}

// ----------------------------------------------------------------- span --

struct SpanArgs {
    std::string series_path;
    std::string factors_path;
    std::string out;
    std::string column = "long_short";
    int lags = 20;
    int ppy = 252;
};

void run_span(const SpanArgs& args) {
    const tc::PortfolioSeries series = tc::load_portfolio_series_csv(args.series_path);
    const tc::FactorTable factors = tc::load_factor_csv(args.factors_path);
    std::vector<tc::Date> dates;
    std::vector<double> values;
    for (const auto& p : series.periods) {
        dates.push_back(p.formation);
        if (args.column == "long")
            values.push_back(p.long_ret);
        else if (args.column == "short")
            values.push_back(p.short_ret);
        else if (args.column == "long_short")
            values.push_back(p.long_short);
        else
            throw tc::ConfigError("--column must be long, short or long_short");
    }
    std::vector<double> y;
    tc::Mat x;
    tc::align_with_factors(dates, values, factors, y, x);
    const tc::SpanningResult res = tc::spanning_test(y, x, factors.names, args.lags, args.ppy);

    std::string text = "term,estimate,t_stat\n";
    char line[256];
    std::snprintf(line, sizeof(line), "alpha_ann_pct,%.10g,%.10g\n", res.alpha_ann_pct, res.t_alpha);
    text += line;
    for (std::size_t f = 0; f < res.factor_names.size(); ++f) {
        std::snprintf(line, sizeof(line), "beta_%s,%.10g,%.10g\n", res.factor_names[f].c_str(),
                      res.betas[f], res.t_betas[f]);
        text += line;
    }
    std::snprintf(line, sizeof(line), "adj_r2_pct,%.10g,\nn_obs,%lld,\n", res.adj_r2_pct,
                  static_cast<long long>(res.n_obs));
    text += line;
    std::fputs(text.c_str(), stdout);
    if (!args.out.empty()) {
        std::ofstream os(args.out, std::ios::trunc);
        if (!os) throw tc::DataError("cannot open " + args.out);
        os << text;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"return-token forecasting pipeline"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic return panel");
    synth_cmd->set_config("--config");
    synth_cmd->add_option("--out", synth.out, "output panel CSV")->required();
    synth_cmd->add_option("--stocks", synth.spec.n_stocks, "number of stocks");
    synth_cmd->add_option("--days", synth.spec.n_days, "number of trading days");
    synth_cmd->add_option("--seed", synth.spec.seed, "random seed");
    synth_cmd->add_option("--state-mean-bp", synth.spec.state_mean_bp, "per-state mean, bp");
    synth_cmd->add_option("--noise-sd-bp", synth.spec.noise_sd_bp, "noise sd, bp");
    synth_cmd->add_option("--persistence", synth.spec.persistence, "state persistence probability");
    synth_cmd->add_option("--start-date", synth.start_date, "first calendar date");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train a model on a panel");
    train_cmd->set_config("--config");
    train_cmd->add_option("--panel", train.panel_path, "input panel CSV")->required();
    train_cmd->add_option("--out", train.out, "output checkpoint path")->required();
    train_cmd->add_option("--log", train.log_path, "training log path (default <out>.log)");
    train_cmd->add_option("--exchanges", train.exchanges, "exchange filter, e.g. NYSE or NYSE,AMEX,NASDAQ");
    train_cmd->add_option("--share-codes", train.share_codes, "share code filter, e.g. 10,11");
    train_cmd->add_option("--train-start", train.train_start, "training range start (default panel start)");
    train_cmd->add_option("--train-end", train.train_end, "training range end")->required();
    train_cmd->add_option("--val-start", train.val_start, "validation range start");
    train_cmd->add_option("--val-end", train.val_end, "validation range end");
    train_cmd->add_option("--vocab", train.model.vocab_size, "vocabulary size");
    train_cmd->add_option("--block", train.model.block_size, "block size (max sequence length)");
    train_cmd->add_option("--d-model", train.model.d_model, "embedding width");
    train_cmd->add_option("--blocks", train.model.n_blocks, "number of attention blocks");
    train_cmd->add_option("--heads", train.model.n_heads, "heads per block");
    train_cmd->add_option("--dropout", train.model.dropout_p, "dropout probability");
    train_cmd->add_option("--bin-width-bp", train.bin_width_bp, "return bin width, bp");
    train_cmd->add_option("--steps", train.train.steps, "training steps");
    train_cmd->add_option("--batch", train.train.batch_size, "sequences per step");
    train_cmd->add_option("--lr", train.train.learning_rate, "learning rate");
    train_cmd->add_option("--seed", train.train.seed, "random seed");
    train_cmd->add_option("--horizon", train.train.horizon, "target horizon: 1 or 20 days");
    train_cmd->add_option("--eval-interval", train.train.eval_interval, "steps between evaluations");
    train_cmd->add_option("--eval-batches", train.train.eval_batches, "batches per evaluation");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoint loss on a panel slice");
    eval_cmd->set_config("--config");
    eval_cmd->add_option("--panel", eval.panel_path, "input panel CSV")->required();
    eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--start", eval.start, "slice start date");
    eval_cmd->add_option("--end", eval.end, "slice end date");
    eval_cmd->add_option("--batches", eval.batches, "evaluation batches");
    eval_cmd->add_option("--batch-size", eval.batch_size, "sequences per batch");
    eval_cmd->add_option("--seed", eval.seed, "random seed");

    ForecastArgs forecast;
    auto* forecast_cmd = app.add_subcommand("forecast", "build a forecast table");
    forecast_cmd->set_config("--config");
    forecast_cmd->add_option("--panel", forecast.panel_path, "input panel CSV")->required();
    forecast_cmd->add_option("--ckpt", forecast.ckpt, "checkpoint path")->required();
    forecast_cmd->add_option("--out", forecast.out, "output forecast CSV")->required();
    forecast_cmd->add_option("--start", forecast.start, "first forecast date");
    forecast_cmd->add_option("--end", forecast.end, "last forecast date");
    forecast_cmd->add_option("--min-window", forecast.min_window,
                             "minimum trailing observations (default: block size)");
    forecast_cmd->add_option("--threads", forecast.threads, "worker threads");

    BacktestArgs backtest;
    auto* backtest_cmd = app.add_subcommand("backtest", "run portfolio sorts from a checkpoint");
    backtest_cmd->set_config("--config");
    backtest_cmd->add_option("--panel", backtest.panel_path, "input panel CSV")->required();
    backtest_cmd->add_option("--ckpt", backtest.ckpt, "checkpoint path")->required();
    backtest_cmd->add_option("--outdir", backtest.outdir, "output directory")->required();
    backtest_cmd->add_option("--factors", backtest.factors_path, "optional factor CSV for spanning");
    backtest_cmd->add_option("--start", backtest.start, "first formation date");
    backtest_cmd->add_option("--end", backtest.end, "last formation date");
    backtest_cmd->add_option("--weighting", backtest.weighting, "equal or value");
    backtest_cmd->add_option("--mcap-pct", backtest.mcap_pct, "drop stocks below this mcap percentile");
    backtest_cmd->add_option("--price-filters", backtest.price_filters,
                             "price thresholds to sweep, dollars")->delimiter(',');
    backtest_cmd->add_flag("--skip-day", backtest.skip_day, "hold at t+2 instead of t+1");
    backtest_cmd->add_flag("--nyse-breakpoints", backtest.nyse_breakpoints,
                           "mcap threshold from NYSE names only");
    backtest_cmd->add_option("--quantiles", backtest.quantiles, "number of quantiles");
    backtest_cmd->add_option("--min-window", backtest.min_window,
                             "minimum trailing observations (default: block size)");
    backtest_cmd->add_option("--threads", backtest.threads, "worker threads");
    backtest_cmd->add_option("--nw-lags", backtest.nw_lags, "Newey-West lags (default 20 daily, 4 monthly)");
    backtest_cmd->add_option("--cost-bp", backtest.cost_bp, "per-trade cost for the worst-case net figure");

    FmbArgs fmb;
    auto* fmb_cmd = app.add_subcommand("fmb", "cross-sectional regression of realized on forecast");
    fmb_cmd->set_config("--config");
    fmb_cmd->add_option("--forecasts", fmb.forecasts_path, "forecast CSV")->required();
    fmb_cmd->add_option("--panel", fmb.panel_path, "input panel CSV")->required();
    fmb_cmd->add_option("--out", fmb.out, "optional output CSV");
    fmb_cmd->add_option("--lags", fmb.lags, "Newey-West lags (default 20 daily, 4 monthly)");
    fmb_cmd->add_flag("--skip", fmb.skip, "compare forecasts with the period after next");

    SpanArgs span;
    auto* span_cmd = app.add_subcommand("span", "spanning test of a series against factors");
    span_cmd->set_config("--config");
    span_cmd->add_option("--series", span.series_path, "portfolio series CSV")->required();
    span_cmd->add_option("--factors", span.factors_path, "factor CSV")->required();
    span_cmd->add_option("--out", span.out, "optional output CSV");
    span_cmd->add_option("--column", span.column, "series leg: long, short or long_short");
    span_cmd->add_option("--lags", span.lags, "Newey-West lags");
    span_cmd->add_option("--ppy", span.ppy, "periods per year for annualization");

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) run_synth(synth);
        if (train_cmd->parsed()) run_train(train);
        if (eval_cmd->parsed()) run_eval(eval);
        if (forecast_cmd->parsed()) run_forecast(forecast);
        if (backtest_cmd->parsed()) run_backtest(backtest);
        if (fmb_cmd->parsed()) run_fmb(fmb);
        if (span_cmd->parsed()) run_span(span);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const tc::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const tc::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const tc::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
