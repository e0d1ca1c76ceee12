#include "mtms/mtms.hpp"

#include "mtms/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <utility>

namespace mtms {

using nlohmann::json;

// ---- loss graphs -----------------------------------------------------------

ad::NodeId loss_graph(ad::Tape& tape, LossKind kind, ad::NodeId pred, ad::NodeId target) {
    const std::size_t n = tape.rows(pred);
    const std::size_t c = tape.cols(pred);
    if (kind == LossKind::mse) {
        const ad::NodeId d = tape.sub(pred, target);
        return tape.scale(tape.sum(tape.square(d)), 1.0 / static_cast<double>(n * c));
    }
    if (c != losses::kQuintiles) {
        throw UsageError("loss_graph: rps needs " + std::to_string(losses::kQuintiles) +
                         " columns, got " + std::to_string(c));
    }
    // Cumulative sums via an upper-triangular ones matrix, then mean squared
    // difference of the cumulative rows.
    Array2 tri(losses::kQuintiles, losses::kQuintiles, 0.0);
    for (std::size_t i = 0; i < losses::kQuintiles; ++i)
        for (std::size_t j = i; j < losses::kQuintiles; ++j) tri(i, j) = 1.0;
    const ad::NodeId u = tape.constant("rps_cumsum", std::move(tri));
    const ad::NodeId cp = tape.matmul(pred, u);
    const ad::NodeId ct = tape.matmul(target, u);
    const ad::NodeId d = tape.sub(cp, ct);
    return tape.scale(tape.sum(tape.square(d)),
                      1.0 / static_cast<double>(losses::kQuintiles * n));
}

// ---- tasks -----------------------------------------------------------------

void Task::validate() const {
    if (x.rows() != y.rows()) throw UsageError("Task: x and y row counts differ");
    if (x.rows() == 0) throw UsageError("Task: no rows");
    if (x.cols() == 0 || y.cols() == 0) throw UsageError("Task: zero-width features or targets");
    if (train_rows > x.rows()) throw UsageError("Task: train_rows exceeds row count");
}

void TaskBundle::validate() const {
    if (tasks.empty()) throw UsageError("TaskBundle: no tasks");
    for (const Task& t : tasks) t.validate();
    for (const Task& t : tasks) {
        if (t.x.cols() != d_x() || t.y.cols() != d_y())
            throw UsageError("TaskBundle: tasks disagree on feature or target width");
    }
}

// ---- connection ------------------------------------------------------------

void Connection::validate(std::size_t beta_size) const {
    if (connected.empty()) throw UsageError("Connection: connected set must be non-empty");
    if (connected.size() + orphaned.size() != beta_size)
        throw UsageError("Connection: connected + orphaned must cover the parameter vector");
    std::vector<char> seen(beta_size, 0);
    auto mark = [&](const std::vector<std::size_t>& idx, const char* label) {
        for (std::size_t k = 0; k + 1 < idx.size(); ++k)
            if (idx[k] >= idx[k + 1])
                throw UsageError(std::string("Connection: ") + label + " indices must ascend");
        for (std::size_t i : idx) {
            if (i >= beta_size)
                throw UsageError(std::string("Connection: ") + label + " index out of range");
            if (seen[i]) throw UsageError("Connection: index listed twice");
            seen[i] = 1;
        }
    };
    mark(connected, "connected");
    mark(orphaned, "orphaned");
}

Connection Connection::from_connected(std::vector<std::size_t> connected, std::size_t beta_size) {
    std::sort(connected.begin(), connected.end());
    Connection c;
    c.connected = std::move(connected);
    std::vector<char> is_conn(beta_size, 0);
    for (std::size_t i : c.connected) {
        if (i >= beta_size) throw UsageError("Connection: connected index out of range");
        is_conn[i] = 1;
    }
    for (std::size_t i = 0; i < beta_size; ++i)
        if (!is_conn[i]) c.orphaned.push_back(i);
    c.validate(beta_size);
    return c;
}

Connection Connection::final_layer(const nn::MlpSpec& base) {
    const nn::ParamLayout layout = nn::layout_of(base);
    // Last two slices are the final layer's weight and bias.
    const nn::ParamSlice& w = layout.slices[layout.slices.size() - 2];
    std::vector<std::size_t> conn;
    for (std::size_t i = w.begin; i < layout.total; ++i) conn.push_back(i);
    return from_connected(std::move(conn), layout.total);
}

Connection Connection::all(const nn::MlpSpec& base) {
    std::vector<std::size_t> conn(base.param_count());
    for (std::size_t i = 0; i < conn.size(); ++i) conn[i] = i;
    return from_connected(std::move(conn), base.param_count());
}

// ---- model -----------------------------------------------------------------

nn::MlpSpec MtMsModel::meta_spec() const {
    if (d_theta == 0) throw UsageError("meta_spec: no meta module when d_theta is 0");
    nn::MlpSpec spec;
    spec.layer_sizes.push_back(d_theta);
    for (std::size_t h : meta_hidden) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(connection.connected.size());
    spec.activation = nn::Activation::leaky_relu;
    spec.output_transform = nn::OutputTransform::none;
    spec.dropout_rate = 0.0;
    return spec;
}

std::size_t MtMsModel::omega_size() const {
    return d_theta == 0 ? connection.connected.size() : meta_spec().param_count();
}

std::vector<double> MtMsModel::beta_from_theta(const double* theta) const {
    std::vector<double> conn_values;
    if (d_theta == 0) {
        conn_values = omega;
    } else {
        Array2 t(1, d_theta);
        std::copy(theta, theta + d_theta, t.data());
        nn::ParamVector pv;
        pv.values = omega;
        const Array2 out = nn::mlp_eval(meta_spec(), pv, t);
        conn_values.assign(out.data(), out.data() + out.size());
    }
    std::vector<double> beta(beta_size());
    for (std::size_t k = 0; k < connection.connected.size(); ++k)
        beta[connection.connected[k]] = conn_values[k];
    for (std::size_t k = 0; k < connection.orphaned.size(); ++k)
        beta[connection.orphaned[k]] = orphaned[k];
    return beta;
}

std::vector<double> MtMsModel::lookup_beta(std::size_t m) const {
    if (d_theta > 0 && m >= task_count())
        throw UsageError("lookup_beta: task index out of range");
    return beta_from_theta(d_theta == 0 ? nullptr : mesa.row(m));
}

Array2 MtMsModel::predict_theta(const double* theta, const Array2& x) const {
    nn::ParamVector beta;
    beta.values = beta_from_theta(theta);
    return nn::mlp_eval(base_spec, beta, x);
}

Array2 MtMsModel::predict(std::size_t m, const Array2& x) const {
    if (x.cols() != base_spec.input_size())
        throw UsageError("predict: x has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(base_spec.input_size()));
    if (d_theta > 0 && m >= task_count())
        throw UsageError("predict: task index out of range");
    return predict_theta(d_theta == 0 ? nullptr : mesa.row(m), x);
}

MtMsModel make_mtms(const nn::MlpSpec& base_spec, std::size_t d_theta,
                    const Connection& connection, const nn::ParamVector& pooled_beta,
                    std::size_t n_tasks, Rng& rng,
                    const std::vector<std::size_t>& meta_hidden) {
    base_spec.validate();
    connection.validate(base_spec.param_count());
    if (pooled_beta.size() != base_spec.param_count())
        throw UsageError("make_mtms: pooled parameter vector has the wrong size");

    MtMsModel model;
    model.base_spec = base_spec;
    model.d_theta = d_theta;
    model.meta_hidden = meta_hidden;
    model.connection = connection;
    model.mesa = Array2(n_tasks, d_theta, 0.0);
    model.orphaned.reserve(connection.orphaned.size());
    for (std::size_t i : connection.orphaned) model.orphaned.push_back(pooled_beta.values[i]);

    std::vector<double> conn_values;
    conn_values.reserve(connection.connected.size());
    for (std::size_t i : connection.connected) conn_values.push_back(pooled_beta.values[i]);

    if (d_theta == 0) {
        model.omega = std::move(conn_values);
        return model;
    }
    const nn::MlpSpec mspec = model.meta_spec();
    Rng init_rng = rng.substream("meta_init");
    model.omega = nn::init_params(mspec, nn::InitScheme::uniform(-1.0, 1.0), init_rng).values;
    // The pooled parameters seed the final bias so that g(0) reproduces them.
    const nn::ParamLayout layout = nn::layout_of(mspec);
    const nn::ParamSlice& bias = layout.slices.back();
    std::copy(conn_values.begin(), conn_values.end(), model.omega.begin() + bias.begin);
    return model;
}

// ---- shared graph machinery -------------------------------------------------

namespace {

// Retained per-row-count graph for one task forward: theta and the shared
// parameters in, training loss out.
struct TaskGraph {
    ad::Tape tape;
    ad::NodeId theta = ad::kNoNode;
    ad::NodeId omega = ad::kNoNode;
    ad::NodeId orphan = ad::kNoNode;
    ad::NodeId x = ad::kNoNode;
    ad::NodeId y = ad::kNoNode;
    ad::NodeId loss = ad::kNoNode;
};

std::unique_ptr<TaskGraph> build_task_graph(const MtMsModel& model, LossKind kind,
                                            std::size_t n_rows, std::size_t d_y) {
    auto g = std::make_unique<TaskGraph>();
    ad::Tape& tape = g->tape;
    ad::NodeId beta_conn;
    if (model.d_theta == 0) {
        g->omega = tape.leaf("omega", 1, model.connection.connected.size());
        beta_conn = g->omega;
    } else {
        g->theta = tape.leaf("theta", 1, model.d_theta);
        g->omega = tape.leaf("omega", 1, model.omega_size());
        beta_conn = nn::mlp_graph(tape, model.meta_spec(), g->omega, g->theta);
    }
    ad::NodeId beta = beta_conn;
    if (!model.connection.orphaned.empty()) {
        g->orphan = tape.leaf("orphan", 1, model.connection.orphaned.size());
        beta = tape.assemble(beta_conn, g->orphan, model.connection.connected,
                             model.connection.orphaned);
    }
    g->x = tape.leaf("x", n_rows, model.base_spec.input_size());
    g->y = tape.leaf("y", n_rows, d_y);
    const ad::NodeId pred = nn::mlp_graph(tape, model.base_spec, beta, g->x);
    g->loss = loss_graph(tape, kind, pred, g->y);
    return g;
}

Array2 take_rows(const Array2& src, std::size_t begin, std::size_t count) {
    Array2 out(count, src.cols());
    std::copy(src.row(begin), src.row(begin) + count * src.cols(), out.data());
    return out;
}

Array2 gather_rows(const Array2& src, const std::vector<std::size_t>& rows) {
    Array2 out(rows.size(), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(src.row(rows[i]), src.row(rows[i]) + src.cols(), out.row(i));
    return out;
}

std::size_t holdout_rows(std::size_t train_rows, double val_fraction) {
    return static_cast<std::size_t>(static_cast<double>(train_rows) * val_fraction);
}

} // namespace

// ---- phase 1 ---------------------------------------------------------------

Phase1Result train_phase1(const TaskBundle& bundle, const nn::MlpSpec& base_spec,
                          LossKind loss, const Phase1Config& cfg, Rng& rng) {
    bundle.validate();
    base_spec.validate();
    if (bundle.d_x() != base_spec.input_size() || bundle.d_y() != base_spec.output_size())
        throw UsageError("train_phase1: bundle dimensions do not match the network spec");

    // Pool training rows across tasks; the most recent val_fraction of each
    // task's training rows forms the early-stopping pool.
    std::vector<double> xtr, ytr, xva, yva;
    const std::size_t d_x = bundle.d_x();
    const std::size_t d_y = bundle.d_y();
    for (const Task& t : bundle.tasks) {
        const std::size_t k = t.train_rows;
        const std::size_t v = holdout_rows(k, cfg.val_fraction);
        for (std::size_t r = 0; r < k; ++r) {
            auto& xs = (r < k - v) ? xtr : xva;
            auto& ys = (r < k - v) ? ytr : yva;
            xs.insert(xs.end(), t.x.row(r), t.x.row(r) + d_x);
            ys.insert(ys.end(), t.y.row(r), t.y.row(r) + d_y);
        }
    }
    const std::size_t n_train = xtr.size() / d_x;
    const std::size_t n_val = xva.size() / d_x;
    if (n_train == 0) throw UsageError("train_phase1: no training rows");
    const Array2 x_train = Array2::from_rows(n_train, d_x, std::move(xtr));
    const Array2 y_train = Array2::from_rows(n_train, d_y, std::move(ytr));
    const Array2 x_val = n_val ? Array2::from_rows(n_val, d_x, std::move(xva)) : Array2();
    const Array2 y_val = n_val ? Array2::from_rows(n_val, d_y, std::move(yva)) : Array2();

    struct PooledGraph {
        ad::Tape tape;
        ad::NodeId params, x, y, loss;
    };
    std::map<std::size_t, std::unique_ptr<PooledGraph>> cache;
    auto graph_for = [&](std::size_t rows) -> PooledGraph& {
        auto it = cache.find(rows);
        if (it == cache.end()) {
            auto g = std::make_unique<PooledGraph>();
            g->params = g->tape.leaf("params", 1, base_spec.param_count());
            g->x = g->tape.leaf("x", rows, d_x);
            g->y = g->tape.leaf("y", rows, d_y);
            const ad::NodeId pred = nn::mlp_graph(g->tape, base_spec, g->params, g->x);
            g->loss = loss_graph(g->tape, loss, pred, g->y);
            it = cache.emplace(rows, std::move(g)).first;
        }
        return *it->second;
    };

    Rng init_rng = rng.substream("phase1_init");
    Rng drop_rng = rng.substream("phase1_dropout");
    Rng shuffle_rng = rng.substream("phase1_shuffle");

    nn::ParamVector beta0 = nn::init_params(base_spec, nn::InitScheme::xavier_uniform(), init_rng);

    opt::BatchFn batch = [&](const std::vector<std::size_t>& items,
                             const std::vector<double>& params, std::vector<double>& grad) {
        PooledGraph& g = graph_for(items.size());
        g.tape.bind(g.params, Array2::from_rows(1, params.size(), params));
        g.tape.bind(g.x, gather_rows(x_train, items));
        g.tape.bind(g.y, gather_rows(y_train, items));
        const double value = g.tape.forward(g.loss, ad::Mode::train, &drop_rng)(0, 0);
        g.tape.backward(1.0);
        const Array2& pg = g.tape.grad(g.params);
        std::copy(pg.data(), pg.data() + pg.size(), grad.begin());
        return value;
    };
    opt::ValFn val = [&](const std::vector<double>& params) {
        const Array2& vx = n_val ? x_val : x_train;
        const Array2& vy = n_val ? y_val : y_train;
        PooledGraph& g = graph_for(vx.rows());
        g.tape.bind(g.params, Array2::from_rows(1, params.size(), params));
        g.tape.bind(g.x, Array2(vx));
        g.tape.bind(g.y, Array2(vy));
        return g.tape.forward(g.loss, ad::Mode::eval)(0, 0);
    };

    opt::Adam adam(cfg.lr);
    opt::TrainConfig tc;
    tc.batch_size = cfg.batch_size;
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    opt::TrainResult r =
        opt::train_loop(std::move(beta0.values), n_train, batch, val, adam, tc, shuffle_rng);

    Phase1Result out;
    out.beta.values = std::move(r.params);
    out.trace = std::move(r.trace);
    out.best_val = r.best_val;
    return out;
}

// ---- phase 2 ---------------------------------------------------------------

namespace {

// Flat layout of the phase-2 trainable vector: omega, orphaned, mesa rows.
struct P2Layout {
    std::size_t omega_n = 0;
    std::size_t orphan_n = 0;
    std::size_t n_tasks = 0;
    std::size_t d_theta = 0;

    std::size_t orphan_begin() const { return omega_n; }
    std::size_t mesa_begin() const { return omega_n + orphan_n; }
    std::size_t total() const { return mesa_begin() + n_tasks * d_theta; }
    const double* mesa_row(const std::vector<double>& p, std::size_t m) const {
        return p.data() + mesa_begin() + m * d_theta;
    }
};

void bind_task_inputs(TaskGraph& g, const P2Layout& lay, const std::vector<double>& params,
                      std::size_t m) {
    g.tape.bind(g.omega, Array2::from_rows(
                             1, lay.omega_n,
                             std::vector<double>(params.begin(), params.begin() + lay.omega_n)));
    if (g.orphan != ad::kNoNode) {
        g.tape.bind(g.orphan,
                    Array2::from_rows(1, lay.orphan_n,
                                      std::vector<double>(params.begin() + lay.orphan_begin(),
                                                          params.begin() + lay.mesa_begin())));
    }
    if (g.theta != ad::kNoNode) {
        const double* row = lay.mesa_row(params, m);
        Array2 t(1, lay.d_theta);
        std::copy(row, row + lay.d_theta, t.data());
        g.tape.bind(g.theta, std::move(t));
    }
}

} // namespace

Phase2Result train_phase2(const TaskBundle& bundle, MtMsModel& model, LossKind loss,
                          const Phase2Config& cfg, Rng& rng) {
    bundle.validate();
    model.base_spec.validate();
    model.connection.validate(model.beta_size());
    const std::size_t M = bundle.size();
    if (model.task_count() != M)
        throw UsageError("train_phase2: mesa row count does not match the bundle");
    if (bundle.d_x() != model.base_spec.input_size() ||
        bundle.d_y() != model.base_spec.output_size())
        throw UsageError("train_phase2: bundle dimensions do not match the network spec");

    P2Layout lay;
    lay.omega_n = model.omega_size();
    lay.orphan_n = model.orphaned.size();
    lay.n_tasks = M;
    lay.d_theta = model.d_theta;

    std::vector<double> params;
    params.reserve(lay.total());
    params.insert(params.end(), model.omega.begin(), model.omega.end());
    params.insert(params.end(), model.orphaned.begin(), model.orphaned.end());
    params.insert(params.end(), model.mesa.flat().begin(), model.mesa.flat().end());

    // Per-task train/holdout splits and the graph caches keyed by row count.
    const std::size_t d_y = bundle.d_y();
    std::vector<std::size_t> fit_rows(M), hold_rows(M);
    for (std::size_t m = 0; m < M; ++m) {
        const std::size_t k = bundle.tasks[m].train_rows;
        if (k == 0) throw UsageError("train_phase2: task without training rows");
        const std::size_t v = holdout_rows(k, cfg.val_fraction);
        fit_rows[m] = k - v;
        hold_rows[m] = v;
    }
    std::map<std::size_t, std::unique_ptr<TaskGraph>> cache;
    auto graph_for = [&](std::size_t rows) -> TaskGraph& {
        auto it = cache.find(rows);
        if (it == cache.end())
            it = cache.emplace(rows, build_task_graph(model, loss, rows, d_y)).first;
        return *it->second;
    };

    Rng drop_rng = rng.substream("phase2_dropout");
    Rng shuffle_rng = rng.substream("phase2_shuffle");

    opt::BatchFn batch = [&](const std::vector<std::size_t>& items,
                             const std::vector<double>& p, std::vector<double>& grad) {
        double total = 0.0;
        const double w = 1.0 / static_cast<double>(items.size());
        for (std::size_t m : items) {
            const Task& t = bundle.tasks[m];
            TaskGraph& g = graph_for(fit_rows[m]);
            bind_task_inputs(g, lay, p, m);
            g.tape.bind(g.x, take_rows(t.x, 0, fit_rows[m]));
            g.tape.bind(g.y, take_rows(t.y, 0, fit_rows[m]));
            double task_loss = g.tape.forward(g.loss, ad::Mode::train, &drop_rng)(0, 0);
            g.tape.backward(1.0);
            const Array2& og = g.tape.grad(g.omega);
            for (std::size_t i = 0; i < lay.omega_n; ++i) grad[i] += w * og.data()[i];
            if (g.orphan != ad::kNoNode) {
                const Array2& rg = g.tape.grad(g.orphan);
                for (std::size_t i = 0; i < lay.orphan_n; ++i)
                    grad[lay.orphan_begin() + i] += w * rg.data()[i];
            }
            if (g.theta != ad::kNoNode) {
                const Array2& tg = g.tape.grad(g.theta);
                const std::size_t base = lay.mesa_begin() + m * lay.d_theta;
                const double* row = lay.mesa_row(p, m);
                for (std::size_t i = 0; i < lay.d_theta; ++i)
                    grad[base + i] += w * (tg.data()[i] + 2.0 * cfg.mesa_l2 * row[i]);
                if (cfg.mesa_l2 > 0.0) {
                    double pen = 0.0;
                    for (std::size_t i = 0; i < lay.d_theta; ++i) pen += row[i] * row[i];
                    task_loss += cfg.mesa_l2 * pen;
                }
            }
            total += w * task_loss;
        }
        return total;
    };

    opt::ValFn val = [&](const std::vector<double>& p) {
        double total = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const Task& t = bundle.tasks[m];
            const bool has_hold = hold_rows[m] > 0;
            const std::size_t begin = has_hold ? fit_rows[m] : 0;
            const std::size_t count = has_hold ? hold_rows[m] : fit_rows[m];
            TaskGraph& g = graph_for(count);
            bind_task_inputs(g, lay, p, m);
            g.tape.bind(g.x, take_rows(t.x, begin, count));
            g.tape.bind(g.y, take_rows(t.y, begin, count));
            total += g.tape.forward(g.loss, ad::Mode::eval)(0, 0);
        }
        return total / static_cast<double>(M);
    };

    opt::Adam adam(cfg.ladder.empty() ? 0.01 : cfg.ladder.front());
    opt::TrainConfig tc;
    tc.batch_size = std::min(cfg.batch_tasks, M);
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    opt::TrainResult r = opt::run_lr_ladder(std::move(params), M, batch, val, adam, cfg.ladder,
                                            tc, shuffle_rng);

    std::copy(r.params.begin(), r.params.begin() + lay.omega_n, model.omega.begin());
    std::copy(r.params.begin() + lay.orphan_begin(), r.params.begin() + lay.mesa_begin(),
              model.orphaned.begin());
    std::copy(r.params.begin() + lay.mesa_begin(), r.params.end(), model.mesa.flat().begin());

    Phase2Result out;
    out.trace = std::move(r.trace);
    out.best_val = r.best_val;
    return out;
}

void rescale_mesa(MtMsModel& model, double factor) {
    if (!(factor > 0.0) || !std::isfinite(factor))
        throw UsageError("rescale_mesa: factor must be positive and finite");
    if (model.d_theta == 0) throw UsageError("rescale_mesa: model has no mesa parameters");
    const nn::MlpSpec meta = model.meta_spec();
    // The first meta layer is affine in theta, so scaling its weight matrix
    // (bias untouched) exactly absorbs the inverse scaling of the mesa rows.
    const std::size_t w1 = meta.layer_sizes[0] * meta.layer_sizes[1];
    for (std::size_t i = 0; i < w1; ++i) model.omega[i] *= factor;
    for (double& v : model.mesa.flat()) v /= factor;
}

// ---- adaptation ------------------------------------------------------------

namespace {

std::unique_ptr<opt::Optimizer> make_adapt_optimizer(const std::string& name, double lr) {
    if (name == "adadelta") return std::make_unique<opt::Adadelta>(lr);
    if (name == "adam") return std::make_unique<opt::Adam>(lr);
    if (name == "sgd") return std::make_unique<opt::Sgd>(lr);
    throw UsageError("adapt_new_task: unknown optimizer '" + name + "'");
}

} // namespace

AdaptResult adapt_new_task(const MtMsModel& model, const Task& task, LossKind loss,
                           const AdaptConfig& cfg, Rng& rng) {
    task.validate();
    if (model.d_theta == 0) throw UsageError("adapt_new_task: model has no mesa parameters");
    if (task.train_rows == 0) throw UsageError("adapt_new_task: task has no training rows");
    if (task.x.cols() != model.base_spec.input_size() ||
        task.y.cols() != model.base_spec.output_size())
        throw UsageError("adapt_new_task: task dimensions do not match the network spec");
    if (cfg.steps == 0) throw UsageError("adapt_new_task: steps must be positive");

    // The shared parameters enter as constants, so only theta can ever move.
    ad::Tape tape;
    const ad::NodeId theta = tape.leaf("theta", 1, model.d_theta);
    const ad::NodeId omega = tape.constant(
        "omega", Array2::from_rows(1, model.omega.size(), model.omega));
    const ad::NodeId beta_conn = nn::mlp_graph(tape, model.meta_spec(), omega, theta);
    ad::NodeId beta = beta_conn;
    if (!model.orphaned.empty()) {
        const ad::NodeId orphan = tape.constant(
            "orphan", Array2::from_rows(1, model.orphaned.size(), model.orphaned));
        beta = tape.assemble(beta_conn, orphan, model.connection.connected,
                             model.connection.orphaned);
    }
    const std::size_t k = task.train_rows;
    const ad::NodeId x = tape.constant("x", take_rows(task.x, 0, k));
    const ad::NodeId y = tape.constant("y", take_rows(task.y, 0, k));
    const ad::NodeId pred = nn::mlp_graph(tape, model.base_spec, beta, x);
    const ad::NodeId loss_node = loss_graph(tape, loss, pred, y);

    auto objective = [&](const std::vector<double>& t, std::vector<double>& grad) {
        tape.bind(theta, Array2::from_rows(1, t.size(), t));
        double value = tape.forward(loss_node, ad::Mode::eval)(0, 0);
        tape.backward(1.0);
        const Array2& tg = tape.grad(theta);
        for (std::size_t i = 0; i < t.size(); ++i) {
            grad[i] = tg.data()[i] + 2.0 * cfg.mesa_l2 * t[i];
            value += cfg.mesa_l2 * t[i] * t[i];
        }
        return value;
    };

    AdaptResult best;
    bool have_best = false;
    for (std::size_t start = 0; start <= cfg.restarts; ++start) {
        std::vector<double> t(model.d_theta, 0.0);
        if (start > 0) {
            Rng srng = rng.substream("adapt_start", start);
            for (double& v : t) v = srng.uniform(-cfg.restart_scale, cfg.restart_scale);
        }
        auto optimizer = make_adapt_optimizer(cfg.optimizer, cfg.lr);
        std::vector<double> grad(model.d_theta, 0.0);
        std::vector<double> run_best_t = t;
        double run_best = objective(t, grad);
        std::size_t since_improved = 0;
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            optimizer->step(t, grad);
            const double value = objective(t, grad);
            if (value < run_best - cfg.plateau_tol) {
                run_best = value;
                run_best_t = t;
                since_improved = 0;
            } else if (++since_improved >= cfg.plateau_patience) {
                break;
            }
        }
        if (!have_best || run_best < best.train_loss) {
            best.theta = std::move(run_best_t);
            best.train_loss = run_best;
            have_best = true;
        }
    }
    if (cfg.mesa_l2 > 0.0) {
        // Report the plain training loss at the chosen theta.
        tape.bind(theta, Array2::from_rows(1, best.theta.size(), best.theta));
        best.train_loss = tape.forward(loss_node, ad::Mode::eval)(0, 0);
    }
    return best;
}

// ---- Proposition-1 oracle ----------------------------------------------------

Prop1Result prop1_oracle(const Prop1Instance& ins) {
    if (ins.n_omega == 0 || ins.n_theta == 0 || ins.n_tasks == 0)
        throw UsageError("prop1_oracle: empty instance");
    if (ins.loss.size() != ins.n_omega * ins.n_theta * ins.n_tasks)
        throw UsageError("prop1_oracle: loss table size mismatch");

    Prop1Result out;
    out.a1_satisfied = true;

    // Bilevel route: inner argmin per (omega, task), then the outer mean.
    std::vector<double> outer(ins.n_omega, 0.0);
    for (std::size_t w = 0; w < ins.n_omega; ++w) {
        double mean = 0.0;
        for (std::size_t m = 0; m < ins.n_tasks; ++m) {
            std::size_t arg = 0;
            for (std::size_t t = 1; t < ins.n_theta; ++t)
                if (ins.at(w, t, m) < ins.at(w, arg, m)) arg = t;
            for (std::size_t t = 0; t < ins.n_theta; ++t)
                if (t != arg && ins.at(w, t, m) == ins.at(w, arg, m)) out.a1_satisfied = false;
            mean += ins.at(w, arg, m);
        }
        outer[w] = mean / static_cast<double>(ins.n_tasks);
    }
    double best = outer[0];
    for (double v : outer) best = std::min(best, v);
    for (std::size_t w = 0; w < ins.n_omega; ++w)
        if (outer[w] == best) out.bilevel_argmin.push_back(w);

    // Single-level route: blind enumeration over every mesa assignment.
    std::vector<double> joint(ins.n_omega, 0.0);
    for (std::size_t w = 0; w < ins.n_omega; ++w) {
        std::vector<std::size_t> assign(ins.n_tasks, 0);
        double best_joint = 0.0;
        bool first = true;
        for (;;) {
            double mean = 0.0;
            for (std::size_t m = 0; m < ins.n_tasks; ++m) mean += ins.at(w, assign[m], m);
            mean /= static_cast<double>(ins.n_tasks);
            if (first || mean < best_joint) {
                best_joint = mean;
                first = false;
            }
            std::size_t pos = 0;
            while (pos < ins.n_tasks && ++assign[pos] == ins.n_theta) assign[pos++] = 0;
            if (pos == ins.n_tasks) break;
        }
        joint[w] = best_joint;
    }
    best = joint[0];
    for (double v : joint) best = std::min(best, v);
    for (std::size_t w = 0; w < ins.n_omega; ++w)
        if (joint[w] == best) out.single_argmin.push_back(w);

    out.equal = out.bilevel_argmin == out.single_argmin;
    return out;
}

Prop1Instance random_prop1_instance(Rng& rng, std::size_t max_omega, std::size_t max_theta,
                                    std::size_t max_tasks) {
    for (;;) {
        Prop1Instance ins;
        ins.n_omega = static_cast<std::size_t>(rng.uniform_int(2, static_cast<int>(max_omega)));
        ins.n_theta = static_cast<std::size_t>(rng.uniform_int(2, static_cast<int>(max_theta)));
        ins.n_tasks = static_cast<std::size_t>(rng.uniform_int(2, static_cast<int>(max_tasks)));
        ins.loss.resize(ins.n_omega * ins.n_theta * ins.n_tasks);
        for (double& v : ins.loss) v = rng.uniform();
        bool unique = true;
        for (std::size_t w = 0; w < ins.n_omega && unique; ++w)
            for (std::size_t m = 0; m < ins.n_tasks && unique; ++m)
                for (std::size_t t = 0; t < ins.n_theta && unique; ++t)
                    for (std::size_t u = t + 1; u < ins.n_theta; ++u)
                        if (ins.at(w, t, m) == ins.at(w, u, m)) {
                            unique = false;
                            break;
                        }
        if (unique) return ins;
    }
}

// ---- checkpoints -------------------------------------------------------------

namespace {

const char* activation_name(nn::Activation a) {
    switch (a) {
        case nn::Activation::leaky_relu: return "leaky_relu";
        case nn::Activation::relu: return "relu";
        case nn::Activation::none: return "none";
    }
    throw UsageError("unknown activation");
}

nn::Activation activation_from(const std::string& s) {
    if (s == "leaky_relu") return nn::Activation::leaky_relu;
    if (s == "relu") return nn::Activation::relu;
    if (s == "none") return nn::Activation::none;
    throw UsageError("checkpoint: unknown activation '" + s + "'");
}

json spec_to_json(const nn::MlpSpec& spec) {
    return json{{"layer_sizes", spec.layer_sizes},
                {"activation", activation_name(spec.activation)},
                {"leaky_slope", spec.leaky_slope},
                {"output_transform",
                 spec.output_transform == nn::OutputTransform::softmax ? "softmax" : "none"},
                {"dropout_rate", spec.dropout_rate}};
}

nn::MlpSpec spec_from_json(const json& j, const char* field) {
    for (const char* key :
         {"layer_sizes", "activation", "leaky_slope", "output_transform", "dropout_rate"}) {
        if (!j.contains(key))
            throw UsageError(std::string("checkpoint: ") + field + " missing '" + key + "'");
    }
    nn::MlpSpec spec;
    spec.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    spec.activation = activation_from(j.at("activation").get<std::string>());
    spec.leaky_slope = j.at("leaky_slope").get<double>();
    const std::string ot = j.at("output_transform").get<std::string>();
    if (ot != "softmax" && ot != "none")
        throw UsageError("checkpoint: unknown output_transform '" + ot + "'");
    spec.output_transform =
        ot == "softmax" ? nn::OutputTransform::softmax : nn::OutputTransform::none;
    spec.dropout_rate = j.at("dropout_rate").get<double>();
    return spec;
}

void require(const json& j, const char* field) {
    if (!j.contains(field))
        throw UsageError(std::string("checkpoint: missing field '") + field + "'");
}

} // namespace

void save_checkpoint(const MtMsModel& model, const std::string& path) {
    json meta;
    if (model.d_theta == 0) {
        // No meta network; record the degenerate shape so load can tell.
        std::vector<std::size_t> sizes{0, model.connection.connected.size()};
        meta = json{{"layer_sizes", sizes},
                    {"activation", "none"},
                    {"leaky_slope", 0.0},
                    {"output_transform", "none"},
                    {"dropout_rate", 0.0}};
    } else {
        meta = spec_to_json(model.meta_spec());
    }
    json doc{{"version", 1},
             {"base_spec", spec_to_json(model.base_spec)},
             {"meta_spec", meta},
             {"connection", json{{"connected", model.connection.connected}}},
             {"omega", model.omega},
             {"orphaned", model.orphaned},
             {"mesa", json::array()},
             {"norm_stats", json{{"median", model.norm.median},
                                 {"mean", model.norm.mean},
                                 {"stddev", model.norm.stddev},
                                 {"degenerate_freqs", model.norm.degenerate_freqs}}}};
    for (std::size_t m = 0; m < model.mesa.rows(); ++m) {
        json row = json::array();
        for (std::size_t j = 0; j < model.mesa.cols(); ++j) row.push_back(model.mesa(m, j));
        doc["mesa"].push_back(std::move(row));
    }
    std::ofstream out(path);
    if (!out) throw UsageError("save_checkpoint: cannot write '" + path + "'");
    out << doc.dump(2) << "\n";
    if (!out) throw NumericError("save_checkpoint: write failed for '" + path + "'");
}

namespace {

MtMsModel model_from_json(const json& doc) {
    require(doc, "version");
    if (doc.at("version").get<int>() != 1)
        throw UsageError("load_checkpoint: unsupported checkpoint version " +
                         doc.at("version").dump());
    for (const char* field :
         {"base_spec", "meta_spec", "connection", "omega", "orphaned", "mesa", "norm_stats"})
        require(doc, field);

    MtMsModel model;
    model.base_spec = spec_from_json(doc.at("base_spec"), "base_spec");
    model.base_spec.validate();

    const json& meta = doc.at("meta_spec");
    const auto meta_sizes = meta.at("layer_sizes").get<std::vector<std::size_t>>();
    if (meta_sizes.size() < 2) throw UsageError("checkpoint: meta_spec needs >= 2 layer sizes");
    model.d_theta = meta_sizes.front();
    model.meta_hidden.assign(meta_sizes.begin() + 1, meta_sizes.end() - 1);

    const json& conn = doc.at("connection");
    require(conn, "connected");
    model.connection = Connection::from_connected(
        conn.at("connected").get<std::vector<std::size_t>>(), model.base_spec.param_count());
    if (meta_sizes.back() != model.connection.connected.size())
        throw UsageError("checkpoint: meta output size does not match the connection");

    model.omega = doc.at("omega").get<std::vector<double>>();
    if (model.omega.size() != model.omega_size())
        throw UsageError("checkpoint: omega has the wrong length");
    model.orphaned = doc.at("orphaned").get<std::vector<double>>();
    if (model.orphaned.size() != model.connection.orphaned.size())
        throw UsageError("checkpoint: orphaned has the wrong length");

    const json& mesa = doc.at("mesa");
    if (!mesa.is_array()) throw UsageError("checkpoint: mesa must be an array of rows");
    model.mesa = Array2(mesa.size(), model.d_theta);
    for (std::size_t m = 0; m < mesa.size(); ++m) {
        const auto row = mesa[m].get<std::vector<double>>();
        if (row.size() != model.d_theta)
            throw UsageError("checkpoint: mesa row " + std::to_string(m) + " has wrong width");
        std::copy(row.begin(), row.end(), model.mesa.row(m));
    }

    const json& norm = doc.at("norm_stats");
    for (const char* field : {"median", "mean", "stddev", "degenerate_freqs"}) {
        if (!norm.contains(field))
            throw UsageError(std::string("checkpoint: norm_stats missing '") + field + "'");
    }
    model.norm.median = norm.at("median").get<std::vector<double>>();
    model.norm.mean = norm.at("mean").get<std::vector<double>>();
    model.norm.stddev = norm.at("stddev").get<std::vector<double>>();
    model.norm.degenerate_freqs = norm.at("degenerate_freqs").get<std::vector<double>>();
    return model;
}

} // namespace

MtMsModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("load_checkpoint: cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("load_checkpoint: parse error in '" + path + "': " + e.what());
    }
    try {
        return model_from_json(doc);
    } catch (const json::exception& e) {
        throw UsageError(std::string("load_checkpoint: malformed document: ") + e.what());
    }
}

} // namespace mtms
