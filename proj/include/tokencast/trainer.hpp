#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tokencast/bins.hpp"
#include "tokencast/errors.hpp"
#include "tokencast/model.hpp"
#include "tokencast/panel.hpp"
#include "tokencast/rng.hpp"
#include "tokencast/tensor.hpp"

// Training regimen: draw fixed-length windows from the panel with stock
// probability proportional to observation count, minimize next-token (or
// next-20-day-mean-token) cross-entropy with Adam, and track validation
// loss on sampled batches. Single-threaded and fully deterministic given
// the seed.

namespace tokencast {

struct TrainConfig {
    std::int64_t steps = 10000;
    std::int64_t batch_size = 64;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int horizon = 1;  // 1 = next-day target, 20 = mean over the next 20 days
    std::int64_t eval_interval = 250;
    std::int64_t eval_batches = 8;

    void validate() const {
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
        if (horizon != 1 && horizon != 20)
            throw ConfigError("horizon must be 1 or 20, got " + std::to_string(horizon));
        if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
        if (eval_batches < 1) throw ConfigError("eval_batches must be >= 1");
    }
};

// Draws training windows. A stock is eligible if it has at least one run of
// block_size + horizon calendar-consecutive observations; windows never
// span two stocks or a gap. Stocks are picked with probability proportional
// to their observation count, the start uniformly over eligible positions.
class WindowSampler {
public:
    WindowSampler(const ReturnPanel& panel, const BinSpec& bins, std::int64_t block_size,
                  int horizon)
        : bins_(bins), block_size_(block_size), horizon_(horizon) {
        const auto calendar = panel.calendar();
        const std::int64_t window = block_size + horizon;
        for (const auto& s : panel.stocks) {
            if (static_cast<std::int64_t>(s.size()) < window) continue;
            const auto runs = contiguous_run_lengths(s, calendar);
            std::vector<std::int64_t> starts;
            for (std::size_t i = 0; i + window <= s.size(); ++i)
                if (runs[i + static_cast<std::size_t>(window) - 1] >= window)
                    starts.push_back(static_cast<std::int64_t>(i));
            if (starts.empty()) continue;
            Entry e;
            e.permno = s.permno;
            e.tokens = bins.tokenize_series(s.rets);
            e.rets = s.rets;
            e.starts = std::move(starts);
            cum_weight_ += static_cast<double>(s.size());
            cum_weights_.push_back(cum_weight_);
            entries_.push_back(std::move(e));
        }
    }

    bool empty() const { return entries_.empty(); }
    std::size_t n_stocks() const { return entries_.size(); }

    struct Draw {
        std::size_t stock_index;
        std::int64_t start;
    };

    Draw draw(Rng& rng) const {
        if (entries_.empty())
            throw DataError("no stock has " + std::to_string(block_size_ + horizon_) +
                            " contiguous observations; cannot sample windows");
        const double u = rng.uniform() * cum_weight_;
        const auto it = std::upper_bound(cum_weights_.begin(), cum_weights_.end(), u);
        const std::size_t idx = std::min<std::size_t>(it - cum_weights_.begin(), entries_.size() - 1);
        const auto& starts = entries_[idx].starts;
        const auto start = starts[static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(starts.size())))];
        return {idx, start};
    }

    // Materializes one (inputs, targets) pair of length block_size. With
    // horizon 1 the targets are the inputs shifted by one observation; with
    // horizon m the target at position t is the token of the mean raw
    // return over the m observations following t.
    void materialize(const Draw& d, std::vector<TokenId>& inputs,
                     std::vector<TokenId>& targets) const {
        const auto& e = entries_[d.stock_index];
        inputs.assign(e.tokens.begin() + d.start, e.tokens.begin() + d.start + block_size_);
        targets.resize(static_cast<std::size_t>(block_size_));
        if (horizon_ == 1) {
            std::copy(e.tokens.begin() + d.start + 1, e.tokens.begin() + d.start + 1 + block_size_,
                      targets.begin());
        } else {
            for (std::int64_t t = 0; t < block_size_; ++t) {
                double mean = 0;
                for (int j = 1; j <= horizon_; ++j)
                    mean += e.rets[static_cast<std::size_t>(d.start + t + j)];
                mean /= horizon_;
                targets[static_cast<std::size_t>(t)] = bins_.tokenize(mean);
            }
        }
    }

    void sample(Rng& rng, std::vector<TokenId>& inputs, std::vector<TokenId>& targets) const {
        materialize(draw(rng), inputs, targets);
    }

    std::int64_t permno_of(std::size_t stock_index) const { return entries_[stock_index].permno; }

private:
    struct Entry {
        std::int64_t permno;
        std::vector<TokenId> tokens;
        std::vector<double> rets;
        std::vector<std::int64_t> starts;
    };

    BinSpec bins_;
    std::int64_t block_size_;
    int horizon_;
    std::vector<Entry> entries_;
    std::vector<double> cum_weights_;
    double cum_weight_ = 0;
};

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0f);
            v_.emplace_back(p.numel(), 0.0f);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            auto g = p.grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            float* data = p.data();
            const auto n = p.numel();
            for (std::int64_t i = 0; i < n; ++i) {
                const double gi = g[static_cast<std::size_t>(i)];
                m[static_cast<std::size_t>(i)] =
                    static_cast<float>(beta1_ * m[static_cast<std::size_t>(i)] + (1.0 - beta1_) * gi);
                v[static_cast<std::size_t>(i)] = static_cast<float>(
                    beta2_ * v[static_cast<std::size_t>(i)] + (1.0 - beta2_) * gi * gi);
                const double mhat = m[static_cast<std::size_t>(i)] / bc1;
                const double vhat = v[static_cast<std::size_t>(i)] / bc2;
                data[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

// Mean cross-entropy over n_batches sampled batches, dropout disabled.
inline double evaluate_loss(const ModelParams& params, const WindowSampler& sampler,
                            std::int64_t n_batches, std::int64_t batch_size, Rng& rng) {
    if (sampler.empty()) throw DataError("evaluate_loss: no eligible stocks in the panel slice");
    std::vector<TokenId> inputs, targets;
    double total = 0;
    std::int64_t count = 0;
    Rng dropout_rng(0);  // unused in eval mode
    for (std::int64_t b = 0; b < n_batches; ++b) {
        for (std::int64_t s = 0; s < batch_size; ++s) {
            sampler.sample(rng, inputs, targets);
            Tape tape = Tape::no_grad();
            Tensor logits = forward(tape, params, inputs, Mode::kEval, dropout_rng);
            Tensor loss = cross_entropy(tape, logits, targets);
            total += loss.item();
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

inline double evaluate_loss(const ModelParams& params, const ReturnPanel& panel_slice, int horizon,
                            std::int64_t n_batches, std::int64_t batch_size, Rng& rng,
                            const BinSpec& bins = {}) {
    WindowSampler sampler(panel_slice, bins, params.config.block_size, horizon);
    return evaluate_loss(params, sampler, n_batches, batch_size, rng);
}

struct LossPoint {
    std::int64_t step;
    double train_loss;
    double val_loss;  // NaN when no validation data is eligible
};

struct TrainResult {
    ModelParams params;
    std::vector<LossPoint> history;
};

// Runs the full loop: `steps` optimizer updates of `batch_size` windows.
// The reported train loss is the mean over each eval interval; validation
// loss is measured at the end of every interval with a fixed eval seed so
// successive measurements are comparable.
inline TrainResult train(const ReturnPanel& train_panel, const ReturnPanel& val_panel,
                         const ModelConfig& model_config, const TrainConfig& train_config,
                         const BinSpec& bins = {}) {
    model_config.validate();
    train_config.validate();
    if (model_config.vocab_size != bins.vocab_size())
        throw ConfigError("model vocab_size " + std::to_string(model_config.vocab_size) +
                          " does not match bin dictionary size " +
                          std::to_string(bins.vocab_size()));

    Rng init_rng(derive_seed(train_config.seed, "init"));
    ModelParams params = ModelParams::init(model_config, init_rng);
    if (train_config.steps == 0) return {std::move(params), {}};

    WindowSampler train_sampler(train_panel, bins, model_config.block_size, train_config.horizon);
    if (train_sampler.empty())
        throw DataError("training panel has no stock with " +
                        std::to_string(model_config.block_size + train_config.horizon) +
                        " contiguous observations");
    // Validation is optional at desk scale; short histories simply skip it.
    std::vector<WindowSampler> val_sampler;
    val_sampler.emplace_back(val_panel, bins, model_config.block_size, train_config.horizon);
    const bool has_val = !val_sampler.front().empty();

    AdamOptimizer opt(params.parameters(), train_config.learning_rate, train_config.beta1,
                      train_config.beta2, train_config.adam_eps);
    Rng sample_rng(derive_seed(train_config.seed, "train"));
    Rng dropout_rng(derive_seed(train_config.seed, "dropout"));

    TrainResult result;
    std::vector<TokenId> inputs, targets;
    const float inv_batch = 1.0f / static_cast<float>(train_config.batch_size);
    double interval_loss = 0;
    std::int64_t interval_count = 0;
    for (std::int64_t step = 1; step <= train_config.steps; ++step) {
        opt.zero_grad();
        double step_loss = 0;
        for (std::int64_t b = 0; b < train_config.batch_size; ++b) {
            train_sampler.sample(sample_rng, inputs, targets);
            Tape tape;
            Tensor logits = forward(tape, params, inputs, Mode::kTrain, dropout_rng);
            Tensor loss = cross_entropy(tape, logits, targets);
            Tensor scaled = scale(tape, loss, inv_batch);
            tape.backward(scaled);
            step_loss += loss.item();
        }
        step_loss /= static_cast<double>(train_config.batch_size);
        if (!std::isfinite(step_loss))
            throw NumericError("training diverged (non-finite loss) at step " +
                               std::to_string(step));
        opt.step();

        interval_loss += step_loss;
        ++interval_count;
        if (step % train_config.eval_interval == 0 || step == train_config.steps) {
            double val = std::numeric_limits<double>::quiet_NaN();
            if (has_val) {
                Rng eval_rng(derive_seed(train_config.seed, "eval"));
                val = evaluate_loss(params, val_sampler.front(), train_config.eval_batches,
                                    train_config.batch_size, eval_rng);
            }
            result.history.push_back({step, interval_loss / interval_count, val});
            interval_loss = 0;
            interval_count = 0;
        }
    }
    result.params = std::move(params);
    return result;
}

inline void write_training_log(const std::vector<LossPoint>& history, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open training log for writing: " + path);
    os << "step,train_loss,val_loss\n";
    char buf[128];
    for (const auto& p : history) {
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g\n", static_cast<long long>(p.step),
                      p.train_loss, p.val_loss);
        os << buf;
    }
}

}  // namespace tokencast
