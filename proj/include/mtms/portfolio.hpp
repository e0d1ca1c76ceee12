#pragma once
// Investment-challenge machinery: weight decomposition, log-return
// information ratio, scaling analysis, the rank-aware {0,10,100} short
// policy, and a Monte Carlo competition simulator with paired seeding.

#include "mtms/array2.hpp"
#include "mtms/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mtms::portfolio {

struct Decomposition {
    double alpha = 0.0;              // gross exposure Σ|w|
    std::vector<double> w_tilde;     // scaleless weights, Σ|w̃| = 1
    bool degenerate = false;         // all-zero input, w_tilde unusable
};

Decomposition decompose(const std::vector<double>& w);

struct IrResult {
    double ir = 0.0;
    std::vector<double> log_returns;   // ret_t = ln(1 + Σ_m w_t r_t)
};

// weights and returns are rounds × assets; needs >= 2 rounds. Throws on a
// non-positive portfolio gross value (bankruptcy) and on zero dispersion.
IrResult information_ratio(const Array2& weights, const Array2& returns);

// Same statistic from per-round simple portfolio returns.
IrResult ir_from_path(const std::vector<double>& simple_returns);

struct ScalingCurve {
    std::vector<double> alpha;
    std::vector<double> ir;
    double slope = 0.0;      // least-squares fit of IR against alpha
    double intercept = 0.0;
    double r2 = 0.0;
    double limit_ir = 0.0;   // alpha → 0 limit: Σx / sample-std(x)
};

// IR of the scaled portfolio alpha·w̃ per grid point; grid ⊂ (0, 1].
ScalingCurve scaling_curve(const std::vector<double>& w_tilde, const Array2& returns,
                           const std::vector<double>& alpha_grid);

struct Thresholds {
    std::size_t safe = 20;    // rank <= safe: hold the long book
    std::size_t risky = 80;   // safe < rank <= risky: 10 shorts; above: 100
};

// Pure rank-to-short-count ladder {0, 10, 100}.
std::size_t adversarial_policy(std::size_t rank, std::size_t n_participants,
                               const Thresholds& thresholds = {});

// Houses the per-round policy bookkeeping of the simulator.
struct PolicyState {
    std::size_t rank = 1;
    std::size_t target_rank = 20;
    std::size_t round = 0;
    std::size_t n_short = 0;          // of 100 positions, rest long
    double magnitude = 0.0025;        // |w| per position, signs only move
};

enum class Policy { static_long, adaptive };

const char* policy_to_string(Policy p);
Policy policy_from_string(const std::string& s);

struct CompetitionConfig {
    std::size_t participants = 163;   // including us
    std::size_t rounds = 12;
    std::size_t n_assets = 100;
    double market_vol = 0.015;        // common factor std per round
    double market_drift = 0.005;      // common factor mean per round
    double asset_vol = 0.10;          // idiosyncratic std per round
    double long_bias = 0.9;           // competitor long mass fraction
    double competitor_gross = 0.25;   // competitor Σ|w|
    double include_prob = 0.95;       // competitor per-asset selection
    Thresholds thresholds;
};

struct ReplicationResult {
    std::size_t final_rank = 0;
    double final_ir = 0.0;
    double cumulative_return = 0.0;   // compounded simple return
    // Filled only when keep_ranks: per round, rank of every participant.
    std::vector<std::vector<std::size_t>> round_ranks;
};

// One competition path. The market and competitor draws depend only on
// (seed, replication), never on the policy, so policies pair exactly.
ReplicationResult run_replication(Policy policy, const CompetitionConfig& cfg,
                                  std::uint64_t seed, std::size_t replication,
                                  bool keep_ranks = false);

struct SimulationRow {
    std::size_t replication = 0;
    std::size_t final_rank = 0;
    double final_ir = 0.0;
    double cumulative_return = 0.0;
};

struct PolicySummary {
    Policy policy = Policy::static_long;
    std::size_t replications = 0;
    std::map<std::size_t, double> p_topk;    // k ∈ {1, 5, 10, 20}
    std::map<std::size_t, double> se_topk;
    double mean_return = 0.0;
    double se_return = 0.0;
    double mean_final_ir = 0.0;
    std::vector<SimulationRow> rows;
};

PolicySummary simulate_competition(Policy policy, const CompetitionConfig& cfg,
                                   std::size_t replications, std::uint64_t seed);

struct PairedDiff {
    double diff = 0.0;   // mean of paired indicator differences
    double se = 0.0;
    double lo95 = 0.0;
    double hi95 = 0.0;
};

// Paired top-k probability difference a − b; rows must share replications.
PairedDiff topk_difference(const PolicySummary& a, const PolicySummary& b, std::size_t k);

// CSV: policy, replication, final_rank, final_IR, cumulative_return.
void save_simulation_csv(const std::string& path,
                         const std::vector<PolicySummary>& summaries);
// JSON: per policy P(top-k) for k ∈ {1,5,10,20} with standard errors.
void save_summary_json(const std::string& path,
                       const std::vector<PolicySummary>& summaries);

} // namespace mtms::portfolio
