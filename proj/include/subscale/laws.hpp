#pragma once

// Closed-form scaling-law evaluators and their analytic gradients.
//
// Two different quantities are conventionally written R_D in this field and
// they are kept apart here:
//   * DecayedPerfParams::decay  - a density decay multiplier on a performance
//     power law, P = decay * lambda * C^alpha;
//   * SubOptimalParams::k1/k2   - steepness of the logistic over-training
//     repetition factors R = 1 + 1/(1 + exp(-k * OTR)) on the loss law.

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "subscale/runs.hpp"

namespace subscale {

// What the x of a single-variable loss power law is read from.
enum class PowerInput { Compute, BatchSize, LearningRate };

// value = lambda * x^(-alpha)
struct PowerLawParams {
  double lambda = 1.0;
  double alpha = 0.1;
  PowerInput input = PowerInput::Compute;

  bool operator==(const PowerLawParams&) const = default;
};

// L = E + lambda_n * N^(-alpha_n) + lambda_d * D^(-alpha_d)
struct ChinchillaParams {
  double e_irreducible = 0.0;
  double lambda_n = 1.0;
  double alpha_n = 0.3;
  double lambda_d = 1.0;
  double alpha_d = 0.3;

  bool operator==(const ChinchillaParams&) const = default;
};

// L = E + lambda_n * R_N * N^(-alpha_n) + lambda_d * R_D * D^(-alpha_d),
// R_D = repetition_factor(D/N, k1), R_N = repetition_factor(D/N, k2).
struct SubOptimalParams {
  double e_irreducible = 0.0;
  double lambda_n = 1.0;
  double alpha_n = 0.3;
  double lambda_d = 1.0;
  double alpha_d = 0.3;
  double k1 = 0.0;
  double k2 = 0.0;

  bool operator==(const SubOptimalParams&) const = default;
};

// P(n) = p0 * (1 - exp(-beta * I(n))), I(n) = i0 * n^(-alpha) for alpha > 0
// and I(n) = i0 * n when alpha == 0 (low-density, linear information gain).
struct SaturatingPerfParams {
  double p0 = 1.0;
  double beta = 1.0;
  double i0 = 1.0;
  double alpha = 0.0;

  bool low_density() const { return alpha == 0.0; }
  bool operator==(const SaturatingPerfParams&) const = default;
};

// P = decay * lambda * C^alpha
struct DecayedPerfParams {
  double decay = 1.0;
  double lambda = 1.0;
  double alpha = 0.1;

  bool operator==(const DecayedPerfParams&) const = default;
};

using LawParams =
    std::variant<PowerLawParams, ChinchillaParams, SubOptimalParams, SaturatingPerfParams, DecayedPerfParams>;

enum class LawFamily { Power, PowerBatch, PowerLr, Chinchilla, SubOptimal, SaturatingPerf, DecayedPerf };

std::string_view family_name(LawFamily family);
LawFamily family_from_name(std::string_view name);
LawFamily family_of(const LawParams& params);

// Parameter names in canonical vector order.
std::vector<std::string> parameter_names(LawFamily family);
std::vector<double> to_vector(const LawParams& params);
LawParams from_vector(LawFamily family, std::span<const double> values);

// Throws InvalidArgument when a family invariant is violated.
void check_params(const LawParams& params);

double eval_power(const PowerLawParams& p, double x);
double repetition_factor(double otr, double k);
double eval_chinchilla(const ChinchillaParams& p, double n, double d);
double eval_suboptimal(const SubOptimalParams& p, double n, double d);
double eval_saturating_perf(const SaturatingPerfParams& p, double n_samples);
double eval_decayed_perf(const DecayedPerfParams& p, double c);

std::array<double, 2> grad_power(const PowerLawParams& p, double x);
std::array<double, 5> grad_chinchilla(const ChinchillaParams& p, double n, double d);
std::array<double, 7> grad_suboptimal(const SubOptimalParams& p, double n, double d);
std::array<double, 4> grad_saturating_perf(const SaturatingPerfParams& p, double n_samples);
std::array<double, 3> grad_decayed_perf(const DecayedPerfParams& p, double c);

// The scalar each family consumes from a record: compute, batch size,
// learning rate, or tokens (saturating performance treats tokens as samples).
// Throws MissingField when an optional field the family needs is absent.
double evaluate(const LawParams& params, const TrainingRun& record);
std::vector<double> gradient(const LawParams& params, const TrainingRun& record);

nlohmann::json to_json(const LawParams& params);
LawParams law_from_json(const nlohmann::json& j);

}  // namespace subscale
