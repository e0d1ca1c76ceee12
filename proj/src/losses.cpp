#include "mtms/losses.hpp"

#include "mtms/errors.hpp"

#include <cmath>
#include <string>

namespace mtms::losses {

std::size_t seasonal_period(Frequency f) {
    switch (f) {
    case Frequency::yearly: return 1;
    case Frequency::quarterly: return 4;
    case Frequency::monthly: return 12;
    case Frequency::weekly: return 1;
    }
    throw UsageError("seasonal_period: bad frequency");
}

Frequency frequency_from_string(const std::string& s) {
    if (s == "yearly") return Frequency::yearly;
    if (s == "quarterly") return Frequency::quarterly;
    if (s == "monthly") return Frequency::monthly;
    if (s == "weekly") return Frequency::weekly;
    throw UsageError("unknown frequency: " + s);
}

const char* frequency_to_string(Frequency f) {
    switch (f) {
    case Frequency::yearly: return "yearly";
    case Frequency::quarterly: return "quarterly";
    case Frequency::monthly: return "monthly";
    case Frequency::weekly: return "weekly";
    }
    throw UsageError("frequency_to_string: bad frequency");
}

double mse(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw UsageError("mse: length mismatch");
    if (pred.empty()) throw UsageError("mse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

double rps(const double* pred, const double* outcome) {
    double pred_sum = 0.0;
    int ones = 0;
    for (std::size_t k = 0; k < kQuintiles; ++k) {
        if (pred[k] < 0.0) throw UsageError("rps: negative probability");
        pred_sum += pred[k];
        if (outcome[k] == 1.0) {
            ++ones;
        } else if (outcome[k] != 0.0) {
            throw UsageError("rps: outcome must be one-hot");
        }
    }
    if (std::fabs(pred_sum - 1.0) > 1e-9) throw UsageError("rps: probabilities must sum to 1");
    if (ones != 1) throw UsageError("rps: outcome must be one-hot");
    double cum_p = 0.0, cum_o = 0.0, acc = 0.0;
    for (std::size_t k = 0; k < kQuintiles; ++k) {
        cum_p += pred[k];
        cum_o += outcome[k];
        const double d = cum_p - cum_o;
        acc += d * d;
    }
    return acc / static_cast<double>(kQuintiles);
}

double rps(const std::vector<double>& pred, const std::vector<double>& outcome) {
    if (pred.size() != kQuintiles || outcome.size() != kQuintiles) {
        throw UsageError("rps: expected 5-vectors");
    }
    return rps(pred.data(), outcome.data());
}

double rps_mean(const Array2& pred, const Array2& outcome) {
    if (!pred.same_shape(outcome) || pred.cols() != kQuintiles || pred.rows() == 0) {
        throw UsageError("rps_mean: need matching Nx5 arrays");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.rows(); ++i) {
        acc += rps(pred.row(i), outcome.row(i));
    }
    return acc / static_cast<double>(pred.rows());
}

MaseScale mase_scale(const std::vector<double>& train_series, std::size_t period) {
    if (period == 0) throw UsageError("mase_scale: period must be positive");
    if (train_series.size() <= period) {
        throw NumericError("mase_scale: series shorter than one seasonal period");
    }
    double acc = 0.0;
    for (std::size_t t = period; t < train_series.size(); ++t) {
        acc += std::fabs(train_series[t] - train_series[t - period]);
    }
    const double scale = acc / static_cast<double>(train_series.size() - period);
    if (scale <= 0.0) throw NumericError("mase_scale: degenerate (constant) training series");
    return {scale, period};
}

double mase(const std::vector<double>& forecast, const std::vector<double>& actual,
            const MaseScale& scale) {
    if (forecast.size() != actual.size()) throw UsageError("mase: length mismatch");
    if (forecast.empty()) throw UsageError("mase: empty input");
    if (scale.scale <= 0.0) throw NumericError("mase: non-positive scale");
    double acc = 0.0;
    for (std::size_t i = 0; i < forecast.size(); ++i) {
        acc += std::fabs(forecast[i] - actual[i]);
    }
    return acc / (static_cast<double>(forecast.size()) * scale.scale);
}

} // namespace mtms::losses
