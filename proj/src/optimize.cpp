#include "mtms/optimize.hpp"

#include "mtms/errors.hpp"
#include "mtms/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace mtms::opt {

namespace {

void check_grad(const std::vector<double>& params, const std::vector<double>& grad) {
    if (grad.size() != params.size()) {
        throw UsageError("optimizer step: gradient length " + std::to_string(grad.size()) +
                         " vs parameter length " + std::to_string(params.size()));
    }
    for (double g : grad) {
        if (!std::isfinite(g)) throw NumericError("optimizer step: non-finite gradient");
    }
}

} // namespace

void Sgd::step(std::vector<double>& params, const std::vector<double>& grad) {
    check_grad(params, grad);
    kernels::active().axpy(-lr_, grad.data(), params.data(), params.size());
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    check_grad(params, grad);
    if (m_.size() != params.size()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
        t_ = 0;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    kernels::active().adam_update(lr_, eps_, bc1, bc2, beta1_, beta2_,
                                  params.data(), grad.data(), m_.data(), v_.data(),
                                  params.size());
}

void Adam::reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
}

void Adadelta::step(std::vector<double>& params, const std::vector<double>& grad) {
    check_grad(params, grad);
    if (accum_g_.size() != params.size()) {
        accum_g_.assign(params.size(), 0.0);
        accum_dx_.assign(params.size(), 0.0);
    }
    kernels::active().adadelta_update(lr_, rho_, eps_, params.data(), grad.data(),
                                      accum_g_.data(), accum_dx_.data(), params.size());
}

void Adadelta::reset() {
    accum_g_.clear();
    accum_dx_.clear();
}

TrainResult train_loop(std::vector<double> params, std::size_t n_items,
                       const BatchFn& batch, const ValFn& val,
                       Optimizer& optimizer, const TrainConfig& cfg, Rng& rng) {
    if (n_items == 0) throw UsageError("train_loop: no training items");
    if (cfg.batch_size == 0) throw UsageError("train_loop: batch_size must be positive");
    if (params.empty()) throw UsageError("train_loop: empty parameter vector");

    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad(params.size(), 0.0);
    std::vector<std::size_t> items;

    TrainResult result;
    result.params = params;
    // The incoming parameters are the epoch-zero snapshot: a run whose every
    // epoch hurts validation must hand them back untouched.
    result.best_val = val(params);
    if (!std::isfinite(result.best_val))
        throw NumericError("train_loop: non-finite validation loss");
    result.best_epoch = cfg.first_epoch > 0 ? cfg.first_epoch - 1 : 0;
    std::size_t since_best = 0;

    for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
        const std::size_t epoch = cfg.first_epoch + e;
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t pos = 0; pos < n_items; pos += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n_items - pos);
            items.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + count));
            std::fill(grad.begin(), grad.end(), 0.0);
            const double loss = batch(items, params, grad);
            if (!std::isfinite(loss)) throw NumericError("train_loop: non-finite batch loss");
            loss_sum += loss * static_cast<double>(count);
            optimizer.step(params, grad);
        }
        const double train_loss = loss_sum / static_cast<double>(n_items);
        const double val_loss = val(params);
        if (!std::isfinite(val_loss)) throw NumericError("train_loop: non-finite validation loss");
        result.trace.push_back({epoch, train_loss, val_loss, optimizer.lr()});

        if (val_loss < result.best_val) {
            result.best_val = val_loss;
            result.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= cfg.patience) break;
        }
    }
    return result;
}

TrainResult run_lr_ladder(std::vector<double> params, std::size_t n_items,
                          const BatchFn& batch, const ValFn& val,
                          Optimizer& optimizer, const std::vector<double>& ladder,
                          const TrainConfig& cfg, Rng& rng) {
    if (ladder.empty()) throw UsageError("run_lr_ladder: empty ladder");
    TrainResult overall;
    overall.params = std::move(params);
    overall.best_val = std::numeric_limits<double>::infinity();
    TrainConfig stage_cfg = cfg;
    for (double lr : ladder) {
        optimizer.reset();
        optimizer.set_lr(lr);
        TrainResult stage = train_loop(overall.params, n_items, batch, val,
                                       optimizer, stage_cfg, rng);
        stage_cfg.first_epoch += stage.trace.size();
        overall.trace.insert(overall.trace.end(), stage.trace.begin(), stage.trace.end());
        if (stage.best_val < overall.best_val) {
            overall.best_val = stage.best_val;
            overall.best_epoch = stage.best_epoch;
        }
        // the next stage starts from this stage's best snapshot
        overall.params = std::move(stage.params);
    }
    return overall;
}

std::vector<double> default_lr_ladder() {
    return {0.01, 0.001, 0.001, 0.0005, 0.0003, 0.0001, 0.00005};
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream out(path);
    if (!out) throw UsageError("write_trace_csv: cannot open " + path);
    out << "epoch,train_loss,val_loss,stage_lr\n";
    out.precision(17);
    for (const TraceRow& row : trace) {
        out << row.epoch << ',' << row.train_loss << ',' << row.val_loss << ','
            << row.stage_lr << '\n';
    }
}

} // namespace mtms::opt
