#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "subscale/laws.hpp"
#include "subscale/runs.hpp"

namespace subscale {

enum class ResidualSpace { Log, Linear };

struct ParamBounds {
  double lo;
  double hi;
};

// Per-parameter maps are keyed by the names from parameter_names(); anything
// not listed falls back to the defaults below.
//   grid:    exponents {0.05, 0.1, 0.2, 0.3, 0.5}; k1/k2 start at 0.00810/0.00114;
//            coefficients from the first/last records; E at 0.9 * min(loss).
//   bounds:  exponents (1e-3, 2]; coefficients (1e-12, 1e12); E [0, min loss);
//            k1, k2 [0, 1]; decay (1e-12, 1].
//   fixed:   decayed_perf holds decay = 1 and saturating_perf holds i0 = 1
//            (each is otherwise confounded with a coefficient).
struct FitConfig {
  ResidualSpace residual_space = ResidualSpace::Log;
  std::optional<double> robust_delta;  // Huber threshold; off when empty
  std::map<std::string, std::vector<double>> multistart_grid;
  std::map<std::string, ParamBounds> bounds;
  std::map<std::string, double> fixed;
  int max_iters = 500;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;
  int random_starts = 0;  // extra starts drawn uniformly inside the bounds
  bool staged = true;     // k1/k2 frozen for a first pass, then released
  unsigned threads = 1;
};

struct FitResult {
  LawFamily family = LawFamily::Power;
  LawParams params;
  double mape_fit = 0.0;
  std::optional<double> mape_pred;
  bool converged = false;
  std::size_t n_starts_tried = 0;
  std::size_t best_start = 0;
  double best_objective = 0.0;
  std::vector<double> residuals;  // per fit record, in the configured space
  std::vector<double> trace;      // objective after each accepted step of the winning start
};

// Mean of |predicted - actual| / actual.
double mape(std::span<const double> predicted, std::span<const double> actual);

FitResult fit_law(const RunSeries& fit_split, LawFamily family, const FitConfig& config = {});

struct Prediction {
  std::vector<double> predicted;
  double mape = 0.0;
};

Prediction predict(const LawParams& params, const RunSeries& holdout);

struct ComparisonRow {
  LawFamily family = LawFamily::Power;
  std::size_t n_free_params = 0;
  std::optional<FitResult> result;  // empty when the fit failed
  std::string error;
};

// Fits each family on the first `split_fraction` of every run and predicts the
// rest. Successful rows come first, by mape_pred then fewer parameters.
std::vector<ComparisonRow> compare_laws(const RunSeries& series, std::span<const LawFamily> families,
                                        const FitConfig& config = {}, double split_fraction = 0.25);

// Ordinary least squares of ln y on ln x: y = exp(ln_lambda) * x^(-alpha).
struct LogLogFit {
  double ln_lambda = 0.0;
  double alpha = 0.0;
  double r_squared = 0.0;
};
LogLogFit fit_power_loglog(std::span<const double> x, std::span<const double> y);

std::size_t free_parameter_count(LawFamily family, const FitConfig& config);

nlohmann::json to_json(const FitConfig& config);
FitConfig fit_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitResult& result);
nlohmann::json to_json(std::span<const ComparisonRow> rows);
std::string comparison_csv(std::span<const ComparisonRow> rows);

}  // namespace subscale
