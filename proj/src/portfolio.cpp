#include "mtms/portfolio.hpp"

#include "mtms/errors.hpp"
#include "mtms/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace mtms::portfolio {

namespace {

double sample_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / (n - 1.0));
}

// Leaderboard score: cumulative IR once dispersion exists, otherwise the
// plain cumulative log return (first round, or a degenerate constant path).
double leaderboard_score(const std::vector<double>& log_rets) {
    double sum = 0.0;
    for (double r : log_rets) sum += r;
    if (log_rets.size() < 2) return sum;
    const double sd = sample_std(log_rets);
    return sd > 0.0 ? sum / sd : sum;
}

std::vector<std::size_t> rank_participants(const std::vector<double>& scores) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<std::size_t> rank(n);
    for (std::size_t pos = 0; pos < n; ++pos) rank[order[pos]] = pos + 1;
    return rank;
}

const std::vector<std::size_t> kTopK{1, 5, 10, 20};

} // namespace

Decomposition decompose(const std::vector<double>& w) {
    Decomposition d;
    for (double v : w) d.alpha += std::abs(v);
    if (d.alpha == 0.0) {
        d.degenerate = true;
        return d;
    }
    d.w_tilde.reserve(w.size());
    for (double v : w) d.w_tilde.push_back(v / d.alpha);
    return d;
}

IrResult ir_from_path(const std::vector<double>& simple_returns) {
    if (simple_returns.size() < 2)
        throw UsageError("information_ratio: need at least 2 rounds");
    IrResult res;
    res.log_returns.reserve(simple_returns.size());
    double sum = 0.0;
    for (double x : simple_returns) {
        if (1.0 + x <= 0.0)
            throw NumericError("information_ratio: bankrupt round, 1 + return <= 0");
        res.log_returns.push_back(std::log1p(x));
        sum += res.log_returns.back();
    }
    const double sd = sample_std(res.log_returns);
    if (sd == 0.0)
        throw NumericError("information_ratio: zero standard deviation of returns");
    res.ir = sum / sd;
    return res;
}

IrResult information_ratio(const Array2& weights, const Array2& returns) {
    if (!weights.same_shape(returns))
        throw UsageError("information_ratio: weights/returns shape mismatch");
    std::vector<double> path(weights.rows());
    for (std::size_t t = 0; t < weights.rows(); ++t) {
        double x = 0.0;
        for (std::size_t m = 0; m < weights.cols(); ++m) x += weights(t, m) * returns(t, m);
        path[t] = x;
    }
    return ir_from_path(path);
}

ScalingCurve scaling_curve(const std::vector<double>& w_tilde, const Array2& returns,
                           const std::vector<double>& alpha_grid) {
    if (alpha_grid.empty()) throw UsageError("scaling_curve: empty alpha grid");
    for (double a : alpha_grid)
        if (!(a > 0.0) || a > 1.0)
            throw UsageError("scaling_curve: alpha must lie in (0, 1]");
    if (w_tilde.size() != returns.cols())
        throw UsageError("scaling_curve: weight/return dimension mismatch");

    std::vector<double> x(returns.rows());
    for (std::size_t t = 0; t < returns.rows(); ++t) {
        double v = 0.0;
        for (std::size_t m = 0; m < returns.cols(); ++m) v += w_tilde[m] * returns(t, m);
        x[t] = v;
    }

    ScalingCurve curve;
    curve.alpha = alpha_grid;
    std::vector<double> scaled(x.size());
    for (double a : alpha_grid) {
        for (std::size_t t = 0; t < x.size(); ++t) scaled[t] = a * x[t];
        curve.ir.push_back(ir_from_path(scaled).ir);
    }

    double sum = 0.0;
    for (double v : x) sum += v;
    const double sd = sample_std(x);
    if (sd == 0.0) throw NumericError("scaling_curve: degenerate return path");
    curve.limit_ir = sum / sd;

    // Least-squares line through (alpha, ir).
    const double n = static_cast<double>(alpha_grid.size());
    double ma = 0.0, mi = 0.0;
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
        ma += alpha_grid[i];
        mi += curve.ir[i];
    }
    ma /= n;
    mi /= n;
    double saa = 0.0, sai = 0.0, sii = 0.0;
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
        saa += (alpha_grid[i] - ma) * (alpha_grid[i] - ma);
        sai += (alpha_grid[i] - ma) * (curve.ir[i] - mi);
        sii += (curve.ir[i] - mi) * (curve.ir[i] - mi);
    }
    curve.slope = saa > 0.0 ? sai / saa : 0.0;
    curve.intercept = mi - curve.slope * ma;
    if (sii > 0.0) {
        double sse = 0.0;
        for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
            const double fit = curve.intercept + curve.slope * alpha_grid[i];
            sse += (curve.ir[i] - fit) * (curve.ir[i] - fit);
        }
        curve.r2 = 1.0 - sse / sii;
    } else {
        curve.r2 = 1.0;
    }
    return curve;
}

std::size_t adversarial_policy(std::size_t rank, std::size_t n_participants,
                               const Thresholds& thresholds) {
    if (thresholds.safe > thresholds.risky)
        throw UsageError("adversarial_policy: safe threshold exceeds risky threshold");
    if (rank < 1 || rank > n_participants)
        throw UsageError("adversarial_policy: rank " + std::to_string(rank) +
                         " outside [1, " + std::to_string(n_participants) + "]");
    if (rank <= thresholds.safe) return 0;
    if (rank <= thresholds.risky) return 10;
    return 100;
}

const char* policy_to_string(Policy p) {
    return p == Policy::static_long ? "static" : "adaptive";
}

Policy policy_from_string(const std::string& s) {
    if (s == "static") return Policy::static_long;
    if (s == "adaptive") return Policy::adaptive;
    throw UsageError("unknown policy '" + s + "', expected static or adaptive");
}

ReplicationResult run_replication(Policy policy, const CompetitionConfig& cfg,
                                  std::uint64_t seed, std::size_t replication,
                                  bool keep_ranks) {
    if (cfg.participants < 2) throw UsageError("run_replication: need >= 2 participants");
    if (cfg.rounds < 2) throw UsageError("run_replication: need >= 2 rounds");

    Rng root(seed);
    Rng rep = root.substream("replication", replication);
    Rng market_rng = rep.substream("market");
    Rng comp_rng = rep.substream("competitors");
    Rng self_rng = rep.substream("self");

    const std::size_t n = cfg.participants;
    std::vector<std::vector<double>> log_rets(n);
    std::vector<double> our_simple;

    PolicyState state;
    state.target_rank = cfg.thresholds.safe;
    ReplicationResult result;

    // Portfolio returns are conditionally independent given the market
    // factor: a book determines its market beta and its idiosyncratic
    // scale, and the idiosyncratic draw is private to each participant.
    const double sqrt_assets = std::sqrt(static_cast<double>(cfg.n_assets));

    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const double f = cfg.market_drift + cfg.market_vol * market_rng.normal();

        // Competitors: sparse long-biased books, redrawn every round.
        for (std::size_t c = 1; c < n; ++c) {
            std::size_t n_sel = 0, n_long = 0;
            for (std::size_t m = 0; m < cfg.n_assets; ++m) {
                if (comp_rng.uniform() >= cfg.include_prob) continue;
                ++n_sel;
                if (comp_rng.uniform() < cfg.long_bias) ++n_long;
            }
            if (n_sel == 0) n_sel = n_long = 1;
            const double mag = cfg.competitor_gross / static_cast<double>(n_sel);
            const double net = mag * static_cast<double>(2 * n_long - n_sel);
            const double idio = mag * std::sqrt(static_cast<double>(n_sel)) *
                                cfg.asset_vol * comp_rng.normal();
            log_rets[c].push_back(std::log1p(net * f + idio));
        }

        // Our book: 100 fixed-magnitude positions, only signs move, so the
        // short count sets the beta while the gross exposure is constant.
        const double net_our = state.magnitude *
                               (static_cast<double>(cfg.n_assets) -
                                2.0 * static_cast<double>(state.n_short));
        const double idio_our =
            state.magnitude * sqrt_assets * cfg.asset_vol * self_rng.normal();
        const double x_our = net_our * f + idio_our;
        our_simple.push_back(x_our);
        log_rets[0].push_back(std::log1p(x_our));

        std::vector<double> scores(n);
        for (std::size_t i = 0; i < n; ++i) scores[i] = leaderboard_score(log_rets[i]);
        const std::vector<std::size_t> ranks = rank_participants(scores);
        if (keep_ranks) result.round_ranks.push_back(ranks);

        state.rank = ranks[0];
        state.round = t + 1;
        if (policy == Policy::adaptive)
            state.n_short = adversarial_policy(state.rank, n, cfg.thresholds);
        if (t + 1 == cfg.rounds) result.final_rank = ranks[0];
    }

    result.final_ir = leaderboard_score(log_rets[0]);
    double compounded = 1.0;
    for (double x : our_simple) compounded *= 1.0 + x;
    result.cumulative_return = compounded - 1.0;
    return result;
}

PolicySummary simulate_competition(Policy policy, const CompetitionConfig& cfg,
                                   std::size_t replications, std::uint64_t seed) {
    if (replications < 1) throw UsageError("simulate_competition: need >= 1 replication");
    PolicySummary summary;
    summary.policy = policy;
    summary.replications = replications;
    summary.rows.resize(replications);

    parallel_for(replications, [&](std::size_t r) {
        const ReplicationResult res = run_replication(policy, cfg, seed, r);
        summary.rows[r] = {r, res.final_rank, res.final_ir, res.cumulative_return};
    });

    for (std::size_t k : kTopK) {
        std::size_t hits = 0;
        for (const SimulationRow& row : summary.rows)
            if (row.final_rank <= k) ++hits;
        const double p = static_cast<double>(hits) / static_cast<double>(replications);
        summary.p_topk[k] = p;
        summary.se_topk[k] =
            std::sqrt(p * (1.0 - p) / static_cast<double>(replications));
    }

    double mean_ret = 0.0, mean_ir = 0.0;
    for (const SimulationRow& row : summary.rows) {
        mean_ret += row.cumulative_return;
        mean_ir += row.final_ir;
    }
    mean_ret /= static_cast<double>(replications);
    mean_ir /= static_cast<double>(replications);
    summary.mean_return = mean_ret;
    summary.mean_final_ir = mean_ir;
    if (replications > 1) {
        double acc = 0.0;
        for (const SimulationRow& row : summary.rows)
            acc += (row.cumulative_return - mean_ret) * (row.cumulative_return - mean_ret);
        summary.se_return = std::sqrt(acc / static_cast<double>(replications - 1)) /
                            std::sqrt(static_cast<double>(replications));
    }
    return summary;
}

PairedDiff topk_difference(const PolicySummary& a, const PolicySummary& b, std::size_t k) {
    if (a.rows.size() != b.rows.size() || a.rows.empty())
        throw UsageError("topk_difference: summaries are not paired");
    const double n = static_cast<double>(a.rows.size());
    std::vector<double> d(a.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        if (a.rows[i].replication != b.rows[i].replication)
            throw UsageError("topk_difference: replication ids do not align");
        d[i] = static_cast<double>(a.rows[i].final_rank <= k) -
               static_cast<double>(b.rows[i].final_rank <= k);
    }
    PairedDiff out;
    for (double v : d) out.diff += v;
    out.diff /= n;
    if (a.rows.size() > 1) {
        double acc = 0.0;
        for (double v : d) acc += (v - out.diff) * (v - out.diff);
        out.se = std::sqrt(acc / (n - 1.0)) / std::sqrt(n);
    }
    out.lo95 = out.diff - 1.96 * out.se;
    out.hi95 = out.diff + 1.96 * out.se;
    return out;
}

void save_simulation_csv(const std::string& path,
                         const std::vector<PolicySummary>& summaries) {
    std::ofstream out(path);
    if (!out) throw UsageError("save_simulation_csv: cannot open " + path);
    out << std::setprecision(17);
    out << "policy,replication,final_rank,final_IR,cumulative_return\n";
    for (const PolicySummary& s : summaries)
        for (const SimulationRow& row : s.rows)
            out << policy_to_string(s.policy) << ',' << row.replication << ','
                << row.final_rank << ',' << row.final_ir << ',' << row.cumulative_return
                << '\n';
    if (!out) throw UsageError("save_simulation_csv: write failed for " + path);
}

void save_summary_json(const std::string& path,
                       const std::vector<PolicySummary>& summaries) {
    nlohmann::json doc;
    for (const PolicySummary& s : summaries) {
        nlohmann::json entry;
        entry["replications"] = s.replications;
        for (const auto& [k, p] : s.p_topk) {
            entry["p_top"][std::to_string(k)] = p;
            entry["se_top"][std::to_string(k)] = s.se_topk.at(k);
        }
        entry["mean_return"] = s.mean_return;
        entry["se_return"] = s.se_return;
        entry["mean_final_ir"] = s.mean_final_ir;
        doc[policy_to_string(s.policy)] = std::move(entry);
    }
    std::ofstream out(path);
    if (!out) throw UsageError("save_summary_json: cannot open " + path);
    out << doc.dump(2) << '\n';
    if (!out) throw UsageError("save_summary_json: write failed for " + path);
}

} // namespace mtms::portfolio
