#pragma once
// The hypernetwork model: a mesa matrix of per-task parameters, a meta module
// g mapping each mesa row to the connected entries of the base network's
// parameter vector, orphaned entries shared across tasks, two-phase training,
// closed-loop adaptation of new tasks with everything but theta frozen, and
// the enumeration oracle for the single-level/bilevel equivalence.

#include "mtms/array2.hpp"
#include "mtms/autodiff.hpp"
#include "mtms/losses.hpp"
#include "mtms/nn.hpp"
#include "mtms/optimize.hpp"
#include "mtms/rng.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace mtms {

enum class LossKind { mse, rps };

// Appends the training loss for predictions vs targets to the tape.
// mse: mean squared deviation over all entries. rps: mean ranked probability
// score over rows (pred columns must already be simplex rows).
ad::NodeId loss_graph(ad::Tape& tape, LossKind kind, ad::NodeId pred, ad::NodeId target);

struct Task {
    Array2 x;                   // rows × d_x
    Array2 y;                   // rows × d_y
    std::size_t train_rows = 0; // first train_rows rows train; the rest evaluate

    std::size_t rows() const { return x.rows(); }
    std::size_t val_rows() const { return rows() - train_rows; }
    void validate() const;
};

struct TaskBundle {
    std::vector<Task> tasks;

    std::size_t size() const { return tasks.size(); }
    std::size_t d_x() const { return tasks.front().x.cols(); }
    std::size_t d_y() const { return tasks.front().y.cols(); }
    void validate() const;
};

// Which flat indices of the base parameter vector are driven by g; the rest
// are orphaned shared constants. Both lists are ascending.
struct Connection {
    std::vector<std::size_t> connected;
    std::vector<std::size_t> orphaned;

    static Connection final_layer(const nn::MlpSpec& base);
    static Connection all(const nn::MlpSpec& base);
    static Connection from_connected(std::vector<std::size_t> connected, std::size_t beta_size);
    void validate(std::size_t beta_size) const;
};

struct NormStats {
    std::vector<double> median;           // per feature, training rows only
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<double> degenerate_freqs; // empirical quintile frequencies, 5 entries or empty
};

struct MtMsModel {
    nn::MlpSpec base_spec;
    std::size_t d_theta = 0;
    std::vector<std::size_t> meta_hidden; // optional hidden widths of g; empty = affine
    Connection connection;
    std::vector<double> omega;            // params of g; bias-only when d_theta = 0
    std::vector<double> orphaned;         // values of the orphaned beta entries
    Array2 mesa;                          // M × d_theta
    NormStats norm;

    std::size_t beta_size() const { return base_spec.param_count(); }
    std::size_t task_count() const { return mesa.rows(); }
    // Spec of g for d_theta >= 1: {d_theta, meta_hidden..., connected count}.
    nn::MlpSpec meta_spec() const;
    std::size_t omega_size() const;

    std::vector<double> beta_from_theta(const double* theta) const;
    std::vector<double> lookup_beta(std::size_t m) const;      // m is 0-based
    Array2 predict(std::size_t m, const Array2& x) const;
    Array2 predict_theta(const double* theta, const Array2& x) const;
};

// Builds the phase-2 starting point from the pooled phase-1 parameters:
// meta weights ~ U[-1,1], meta bias = pooled beta on connected slots,
// orphaned = pooled beta elsewhere, mesa = 0 (M rows).
MtMsModel make_mtms(const nn::MlpSpec& base_spec, std::size_t d_theta,
                    const Connection& connection, const nn::ParamVector& pooled_beta,
                    std::size_t n_tasks, Rng& rng,
                    const std::vector<std::size_t>& meta_hidden = {});

struct Phase1Config {
    double lr = 0.01;
    std::size_t batch_size = 200;
    std::size_t max_epochs = 500;
    std::size_t patience = 10;
    double val_fraction = 0.2;  // most recent fraction of each task's training rows
};

struct Phase1Result {
    nn::ParamVector beta;
    std::vector<opt::TraceRow> trace;
    double best_val = 0.0;
};

Phase1Result train_phase1(const TaskBundle& bundle, const nn::MlpSpec& base_spec,
                          LossKind loss, const Phase1Config& cfg, Rng& rng);

struct Phase2Config {
    std::vector<double> ladder = opt::default_lr_ladder();
    std::size_t batch_tasks = 100;
    std::size_t max_epochs = 500;
    std::size_t patience = 10;
    double val_fraction = 0.2;
    double mesa_l2 = 0.0;
};

struct Phase2Result {
    std::vector<opt::TraceRow> trace;
    double best_val = 0.0;
};

// Joint optimization of omega, orphaned constants, and the mesa matrix.
Phase2Result train_phase2(const TaskBundle& bundle, MtMsModel& model, LossKind loss,
                          const Phase2Config& cfg, Rng& rng);

// The theta scale is not identified: dividing every mesa row by `factor` while
// multiplying the meta module's first-layer weights by it leaves all
// predictions unchanged. Shrinking the scale puts new-task optima within reach
// of small fixed-step optimizers during adaptation. Throws UsageError for a
// non-positive or non-finite factor or a model without mesa parameters.
void rescale_mesa(MtMsModel& model, double factor);

struct AdaptConfig {
    std::string optimizer = "adadelta";  // adadelta | adam | sgd
    double lr = 0.001;
    std::size_t steps = 2000;
    std::size_t restarts = 3;            // random starts tried besides theta = 0
    double restart_scale = 1.0;          // random inits ~ U(-scale, scale)
    double plateau_tol = 1e-12;
    std::size_t plateau_patience = 100;
    double mesa_l2 = 0.0;
};

struct AdaptResult {
    std::vector<double> theta;
    double train_loss = 0.0;
};

// Minimizes the new task's training loss over theta only; omega and orphaned
// constants are read-only. Uses task.x/task.y rows [0, train_rows).
AdaptResult adapt_new_task(const MtMsModel& model, const Task& task, LossKind loss,
                           const AdaptConfig& cfg, Rng& rng);

// ---- Proposition-1 enumeration oracle -------------------------------------

struct Prop1Instance {
    std::size_t n_omega = 0;
    std::size_t n_theta = 0;
    std::size_t n_tasks = 0;
    std::vector<double> loss;   // indexed [omega][theta][task]

    double at(std::size_t w, std::size_t t, std::size_t m) const {
        return loss[(w * n_theta + t) * n_tasks + m];
    }
    double& at(std::size_t w, std::size_t t, std::size_t m) {
        return loss[(w * n_theta + t) * n_tasks + m];
    }
};

struct Prop1Result {
    std::vector<std::size_t> bilevel_argmin;  // omega index sets, ascending
    std::vector<std::size_t> single_argmin;
    bool a1_satisfied = false;                // inner argmin unique for every (omega, task)
    bool equal = false;
};

// Bilevel route: per-(omega, task) inner argmin, then outer mean. Single-level
// route: blind exhaustive enumeration over all |Theta|^M mesa assignments.
Prop1Result prop1_oracle(const Prop1Instance& instance);

// Random loss table with i.i.d. U(0,1) entries, redrawn until A1 holds.
Prop1Instance random_prop1_instance(Rng& rng, std::size_t max_omega = 5,
                                    std::size_t max_theta = 4, std::size_t max_tasks = 4);

// ---- Checkpoints -----------------------------------------------------------

void save_checkpoint(const MtMsModel& model, const std::string& path);
MtMsModel load_checkpoint(const std::string& path);

} // namespace mtms
