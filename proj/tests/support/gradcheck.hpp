#pragma once

// Central finite-difference gradient oracle. Kept independent of the tape:
// it only nudges raw float storage and re-runs a caller-supplied forward
// pass, so it cross-checks the analytic backward path end to end.

#include <cmath>
#include <functional>
#include <vector>

#include "tokencast/tensor.hpp"

namespace testsupport {

struct GradCheckResult {
    double max_err = 0;
    std::int64_t worst_index = -1;
};

// Relative error |analytic - numeric| / max(1, |analytic|, |numeric|),
// maximized over every element of `param`. `loss_fn` must rebuild the
// forward pass from current storage each call.
inline GradCheckResult gradcheck_param(tokencast::Tensor param,
                                       const std::vector<float>& analytic,
                                       const std::function<double()>& loss_fn,
                                       float step = 1e-3f) {
    GradCheckResult res;
    for (std::int64_t i = 0; i < param.numel(); ++i) {
        const float saved = param.at(i);
        param.at(i) = saved + step;
        const double up = loss_fn();
        param.at(i) = saved - step;
        const double down = loss_fn();
        param.at(i) = saved;
        const double numeric = (up - down) / (2.0 * static_cast<double>(step));
        const double a = analytic[static_cast<std::size_t>(i)];
        const double err = std::fabs(a - numeric) /
                           std::max({1.0, std::fabs(a), std::fabs(numeric)});
        if (err > res.max_err) {
            res.max_err = err;
            res.worst_index = i;
        }
    }
    return res;
}

// Runs the analytic backward once, then checks every listed parameter.
inline double gradcheck_max_err(const std::vector<tokencast::Tensor>& params,
                                const std::function<tokencast::Tensor(tokencast::Tape&)>& build_loss,
                                float step = 1e-3f) {
    for (auto p : params) p.zero_grad();
    tokencast::Tape tape;
    tokencast::Tensor loss = build_loss(tape);
    tape.backward(loss);
    std::vector<std::vector<float>> analytic;
    for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    auto loss_value = [&]() {
        tokencast::Tape t(false);
        return static_cast<double>(build_loss(t).item());
    };
    double max_err = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto res = gradcheck_param(params[pi], analytic[pi], loss_value, step);
        max_err = std::max(max_err, res.max_err);
    }
    return max_err;
}

}  // namespace testsupport
