#pragma once
// First-order optimizers over flat parameter vectors, the epoch/minibatch
// training loop with patience-based early stopping, and the decreasing
// learning-rate ladder that chains stages of that loop.

#include "mtms/rng.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mtms::opt {

class Optimizer {
public:
    virtual ~Optimizer() = default;
    // Applies one update in place. Throws NumericError on non-finite gradients.
    virtual void step(std::vector<double>& params, const std::vector<double>& grad) = 0;
    virtual void reset() = 0;                       // clears accumulated state
    virtual double lr() const = 0;
    virtual void set_lr(double lr) = 0;
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(std::vector<double>& params, const std::vector<double>& grad) override;
    void reset() override {}
    double lr() const override { return lr_; }
    void set_lr(double lr) override { lr_ = lr; }

private:
    double lr_;
};

class Adam final : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::vector<double>& params, const std::vector<double>& grad) override;
    void reset() override;
    double lr() const override { return lr_; }
    void set_lr(double lr) override { lr_ = lr; }
    std::size_t step_count() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

class Adadelta final : public Optimizer {
public:
    explicit Adadelta(double lr, double rho = 0.9, double eps = 1e-6)
        : lr_(lr), rho_(rho), eps_(eps) {}
    void step(std::vector<double>& params, const std::vector<double>& grad) override;
    void reset() override;
    double lr() const override { return lr_; }
    void set_lr(double lr) override { lr_ = lr; }

private:
    double lr_, rho_, eps_;
    std::vector<double> accum_g_, accum_dx_;
};

struct TraceRow {
    std::size_t epoch;      // cumulative across ladder stages, 1-based
    double train_loss;
    double val_loss;
    double stage_lr;
};

struct TrainConfig {
    std::size_t batch_size = 200;
    std::size_t max_epochs = 500;   // per stage
    std::size_t patience = 10;
    std::size_t first_epoch = 1;    // trace numbering offset for ladder stages
};

// Computes the batch loss and fills the gradient (same length as params).
// The loop hands the callee a zeroed vector, so accumulation is also fine.
using BatchFn = std::function<double(const std::vector<std::size_t>& items,
                                     const std::vector<double>& params,
                                     std::vector<double>& grad)>;
using ValFn = std::function<double(const std::vector<double>& params)>;

struct TrainResult {
    std::vector<double> params;     // snapshot at the best validation loss
    double best_val = 0.0;
    std::size_t best_epoch = 0;
    std::vector<TraceRow> trace;
};

// One epoch = one shuffled pass over n_items in batches of batch_size (last
// batch may be short). Stops when validation has not improved for `patience`
// epochs and restores the best snapshot; the incoming parameters count as the
// epoch-zero candidate, so a run that only hurts returns them unchanged.
TrainResult train_loop(std::vector<double> params, std::size_t n_items,
                       const BatchFn& batch, const ValFn& val,
                       Optimizer& optimizer, const TrainConfig& cfg, Rng& rng);

// Chains train_loop stages, one per ladder entry, resetting optimizer state
// each stage and carrying the best parameters forward. Returns the best
// snapshot across all stages with a concatenated trace.
TrainResult run_lr_ladder(std::vector<double> params, std::size_t n_items,
                          const BatchFn& batch, const ValFn& val,
                          Optimizer& optimizer, const std::vector<double>& ladder,
                          const TrainConfig& cfg, Rng& rng);

std::vector<double> default_lr_ladder();

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

} // namespace mtms::opt
