#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "subscale/laws.hpp"
#include "subscale/runs.hpp"

namespace subscale {

struct AllocationPlan {
  double budget = 0.0;
  double n_star = 0.0;
  double d_star = 0.0;  // budget / (6 n_star)
  double otr_star = 0.0;
  double predicted_loss = 0.0;
  LawParams law;
};

struct AllocationOptions {
  double n_min = 1e6;
  double n_max = 1e13;
  double d_max = 1e16;
  double tolerance = 1e-6;      // on ln n
  std::size_t scan_points = 256;  // coarse scan that picks the golden-section bracket
};

// Loss of a Chinchilla or sub-optimal law at (n, d); InvalidArgument otherwise.
double allocation_loss(const LawParams& law, double n, double d);

// Minimizes loss over ln n with d = budget / (6 n) on
// [max(n_min, budget / (6 d_max)), n_max]. Throws NoInteriorMinimum when the
// minimum sits on the bracket edge.
AllocationPlan optimal_allocation(const LawParams& law, double budget, const AllocationOptions& options = {});

struct SweepPoint {
  double otr = 0.0;
  double n = 0.0;
  double d = 0.0;
  double loss = 0.0;
};

std::vector<SweepPoint> otr_sweep(const LawParams& law, double budget, std::span<const double> otr_values);

// Half-open OTR interval (lo, hi].
struct OtrBin {
  double lo = 0.0;
  double hi = 0.0;
};

struct BinExponent {
  OtrBin range;
  double alpha = 0.0;
  double lambda = 0.0;
  std::size_t n_points = 0;
};

struct StabilityOptions {
  double threshold = 50.0;
  double significance = 0.05;
};

// Normality is judged with the Jarque-Bera moment statistic
// JB = n/6 (S^2 + (K - 3)^2 / 4), p = exp(-JB / 2).
struct ExponentStabilityReport {
  std::vector<BinExponent> bins;
  double threshold = 0.0;
  std::size_t n_stable_bins = 0;  // bins lying wholly above the threshold
  double mean_alpha = 0.0;
  double std_alpha = 0.0;
  std::string normality_test = "jarque_bera";
  double normality_stat = 0.0;
  double normality_p = 0.0;
  bool normality_pass = false;
  bool monotone_decreasing = false;  // per-bin alpha strictly falls with OTR
};

struct JarqueBera {
  double stat = 0.0;
  double p_value = 0.0;
};
JarqueBera jarque_bera(std::span<const double> sample);

// Fits L = lambda * C^(-alpha), C = 6 N D, per OTR bin by log-log regression.
ExponentStabilityReport alpha_stability(const RunSeries& series, std::span<const OtrBin> bins,
                                        const StabilityOptions& options = {});

enum class Knob { BatchSize, LearningRate };

struct FrontierPoint {
  double target_loss = 0.0;
  double knob_value = 0.0;
  double min_tokens = 0.0;
};

struct FrontierResult {
  std::vector<FrontierPoint> points;
  std::vector<std::string> warnings;  // (knob, target) pairs that never reach the target
};

// For each target: the knob value whose runs first reach the (smoothed) target
// loss with the fewest tokens; ties go to the smaller knob value.
FrontierResult hyperparam_frontier(const RunSeries& runs, Knob knob, std::span<const double> target_losses,
                                   const SmoothingOptions& smoothing = {});

nlohmann::json to_json(const AllocationPlan& plan);
nlohmann::json to_json(const ExponentStabilityReport& report);
std::string sweep_csv(std::span<const SweepPoint> points);

}  // namespace subscale
