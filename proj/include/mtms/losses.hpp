#pragma once
// Loss functions: MSE, ranked probability score over 5 quintiles, and MASE
// with its seasonal-naive scale computed on the training segment.

#include "mtms/array2.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace mtms::losses {

inline constexpr std::size_t kQuintiles = 5;

enum class Frequency { yearly, quarterly, monthly, weekly };

// Seasonal-naive lag used by the MASE scale.
std::size_t seasonal_period(Frequency f);   // yearly 1, quarterly 4, monthly 12, weekly 1

Frequency frequency_from_string(const std::string& s);
const char* frequency_to_string(Frequency f);

double mse(const std::vector<double>& pred, const std::vector<double>& target);

// pred must be a probability 5-vector (entries >= 0, sum within 1e-9 of 1);
// outcome must be one-hot. Score is the mean squared cumulative difference:
// (1/5) Σ_k (CumPred_k − CumOutcome_k)².
double rps(const double* pred, const double* outcome);
double rps(const std::vector<double>& pred, const std::vector<double>& outcome);

// Mean RPS over matching rows of 5 columns each.
double rps_mean(const Array2& pred, const Array2& outcome);

struct MaseScale {
    double scale = 0.0;
    std::size_t period = 1;
};

// Mean absolute error of the seasonal-naive forecast on the training segment.
// Throws NumericError when the series is too short or the scale degenerates
// to zero (constant training series).
MaseScale mase_scale(const std::vector<double>& train_series, std::size_t period);

double mase(const std::vector<double>& forecast, const std::vector<double>& actual,
            const MaseScale& scale);

} // namespace mtms::losses
