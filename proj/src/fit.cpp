#include "subscale/fit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "subscale/error.hpp"
#include "subscale/rng.hpp"
#include "text.hpp"

namespace subscale {

namespace {

using json = nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kK1Start = 0.00810;
constexpr double kK2Start = 0.00114;

enum class ParamKind { Coefficient, Exponent, Irreducible, Steepness, Decay };

ParamKind kind_of(const std::string& name) {
  if (name.rfind("alpha", 0) == 0) return ParamKind::Exponent;
  if (name == "e_irreducible") return ParamKind::Irreducible;
  if (name == "k1" || name == "k2") return ParamKind::Steepness;
  if (name == "decay") return ParamKind::Decay;
  return ParamKind::Coefficient;
}

// Coefficients and the decay multiplier are optimized in log space.
bool log_scaled(ParamKind k) { return k == ParamKind::Coefficient || k == ParamKind::Decay; }

double observed_x(LawFamily family, const TrainingRun& r) {
  switch (family) {
    case LawFamily::Power:
    case LawFamily::DecayedPerf: return compute_flops(r.model_size, r.tokens);
    case LawFamily::PowerBatch: return r.batch_size.value_or(0.0);
    case LawFamily::PowerLr: return r.learning_rate.value_or(0.0);
    default: return r.tokens;
  }
}

void require_fields(const RunSeries& series, LawFamily family) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& r = series.records[i];
    if (family == LawFamily::PowerBatch && !r.batch_size) {
      throw Error(ErrorCode::MissingField, "record " + std::to_string(i + 1) + " lacks batch_size");
    }
    if (family == LawFamily::PowerLr && !r.learning_rate) {
      throw Error(ErrorCode::MissingField, "record " + std::to_string(i + 1) + " lacks learning_rate");
    }
  }
}

struct Problem {
  LawFamily family;
  const RunSeries* data;
  std::vector<std::string> names;
  std::vector<double> base;        // full parameter vector; fixed entries live here
  std::vector<std::size_t> free;   // indices into `base` that are optimized
  std::vector<ParamBounds> bounds; // per full parameter, natural units
  ResidualSpace space;
  std::optional<double> delta;
};

struct Evaluation {
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;  // d residual / d internal free parameter
  double objective = kInf;
};

double to_internal(const Problem& pb, std::size_t full, double v) {
  return log_scaled(kind_of(pb.names[full])) ? std::log(v) : v;
}

double to_natural(const Problem& pb, std::size_t full, double t) {
  return log_scaled(kind_of(pb.names[full])) ? std::exp(t) : t;
}

// Bounds in internal units for each free parameter.
std::pair<double, double> internal_bounds(const Problem& pb, std::size_t full) {
  const auto& b = pb.bounds[full];
  if (log_scaled(kind_of(pb.names[full]))) return {std::log(b.lo), std::log(b.hi)};
  return {b.lo, b.hi};
}

std::vector<double> assemble(const Problem& pb, const Eigen::VectorXd& theta) {
  std::vector<double> full = pb.base;
  for (std::size_t j = 0; j < pb.free.size(); ++j) full[pb.free[j]] = to_natural(pb, pb.free[j], theta[j]);
  return full;
}

double huber(double r, double delta) {
  const double a = std::fabs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double objective_of(const Problem& pb, const Eigen::VectorXd& r) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) f += pb.delta ? huber(r[i], *pb.delta) : 0.5 * r[i] * r[i];
  return f;
}

Evaluation evaluate_problem(const Problem& pb, const Eigen::VectorXd& theta, bool with_jacobian) {
  const auto full = assemble(pb, theta);
  const LawParams params = from_vector(pb.family, full);
  const auto m = static_cast<Eigen::Index>(pb.data->size());
  Evaluation ev;
  ev.residuals.resize(m);
  if (with_jacobian) ev.jacobian.resize(m, static_cast<Eigen::Index>(pb.free.size()));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& rec = pb.data->records[static_cast<std::size_t>(i)];
    const double pred = evaluate(params, rec);
    if (!std::isfinite(pred) || (pb.space == ResidualSpace::Log && !(pred > 0.0))) return ev;
    const bool log_space = pb.space == ResidualSpace::Log;
    ev.residuals[i] = log_space ? std::log(pred) - std::log(rec.loss) : pred - rec.loss;
    if (with_jacobian) {
      const auto g = gradient(params, rec);
      for (std::size_t j = 0; j < pb.free.size(); ++j) {
        const std::size_t k = pb.free[j];
        double dv = g[k];
        if (log_scaled(kind_of(pb.names[k]))) dv *= full[k];
        ev.jacobian(i, static_cast<Eigen::Index>(j)) = log_space ? dv / pred : dv;
      }
    }
  }
  if (!ev.residuals.allFinite()) return ev;
  ev.objective = objective_of(pb, ev.residuals);
  return ev;
}

struct LmOutcome {
  Eigen::VectorXd theta;
  double objective = kInf;
  bool converged = false;
  std::vector<double> trace;
};

Eigen::VectorXd project(const Problem& pb, Eigen::VectorXd theta) {
  for (std::size_t j = 0; j < pb.free.size(); ++j) {
    const auto [lo, hi] = internal_bounds(pb, pb.free[j]);
    theta[static_cast<Eigen::Index>(j)] = std::clamp(theta[static_cast<Eigen::Index>(j)], lo, hi);
  }
  return theta;
}

// Projected Levenberg-Marquardt with Marquardt diagonal scaling. Huber losses
// are handled by reweighting residuals at the current iterate.
LmOutcome levenberg_marquardt(const Problem& pb, Eigen::VectorXd theta, int max_iters, double tol) {
  LmOutcome out;
  theta = project(pb, std::move(theta));
  Evaluation ev = evaluate_problem(pb, theta, true);
  out.theta = theta;
  out.objective = ev.objective;
  if (!std::isfinite(ev.objective)) return out;
  out.trace.push_back(ev.objective);

  const auto p = static_cast<Eigen::Index>(pb.free.size());
  double mu = -1.0;
  for (int iter = 0; iter < max_iters; ++iter) {
    if (ev.objective <= 1e-30) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd w = Eigen::VectorXd::Ones(ev.residuals.size());
    if (pb.delta) {
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double a = std::fabs(ev.residuals[i]);
        if (a > *pb.delta) w[i] = *pb.delta / a;
      }
    }
    const Eigen::MatrixXd jw = w.asDiagonal() * ev.jacobian;
    const Eigen::MatrixXd a = ev.jacobian.transpose() * jw;
    const Eigen::VectorXd g = jw.transpose() * ev.residuals;
    Eigen::VectorXd diag = a.diagonal();
    const double dmax = diag.maxCoeff();
    if (!(dmax > 0.0)) {
      out.converged = true;  // flat objective in every free direction
      break;
    }
    for (Eigen::Index j = 0; j < p; ++j) diag[j] = std::max(diag[j], 1e-12 * dmax);
    if (mu < 0.0) mu = 1e-3;

    // Coordinates pinned at a bound with the gradient pushing outward stay put.
    std::vector<Eigen::Index> movable;
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto [lo, hi] = internal_bounds(pb, pb.free[static_cast<std::size_t>(j)]);
      const bool at_lo = theta[j] <= lo && g[j] > 0.0;
      const bool at_hi = theta[j] >= hi && g[j] < 0.0;
      if (!at_lo && !at_hi) movable.push_back(j);
    }
    if (movable.empty()) {
      out.converged = true;
      break;
    }
    const auto q = static_cast<Eigen::Index>(movable.size());
    Eigen::MatrixXd a_sub(q, q);
    Eigen::VectorXd g_sub(q);
    Eigen::VectorXd d_sub(q);
    for (Eigen::Index r = 0; r < q; ++r) {
      g_sub[r] = g[movable[static_cast<std::size_t>(r)]];
      d_sub[r] = diag[movable[static_cast<std::size_t>(r)]];
      for (Eigen::Index c = 0; c < q; ++c) {
        a_sub(r, c) = a(movable[static_cast<std::size_t>(r)], movable[static_cast<std::size_t>(c)]);
      }
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd lhs = a_sub;
      lhs.diagonal() += mu * d_sub;
      const Eigen::VectorXd sub_step = lhs.ldlt().solve(-g_sub);
      Eigen::VectorXd step = Eigen::VectorXd::Zero(p);
      for (Eigen::Index r = 0; r < q; ++r) step[movable[static_cast<std::size_t>(r)]] = sub_step[r];
      Eigen::VectorXd trial = step.allFinite() ? project(pb, theta + step) : theta;
      Evaluation next = evaluate_problem(pb, trial, true);
      if (std::isfinite(next.objective) && next.objective < ev.objective) {
        const double step_norm = (trial - theta).norm();
        theta = trial;
        ev = std::move(next);
        out.trace.push_back(ev.objective);
        mu = std::max(mu / 3.0, 1e-15);
        accepted = true;
        if (step_norm <= tol * (theta.norm() + tol)) out.converged = true;
      } else {
        mu *= 4.0;
        if (mu > 1e20) {
          out.converged = true;  // no descent direction left at working precision
          break;
        }
      }
    }
    if (out.converged) break;
  }

  // Near the optimum objective differences drown in rounding before the
  // gradient does; finish with Gauss-Newton steps that must halve |grad| and
  // may raise the objective by at most a rounding-level 1e-12 relative.
  // These steps are not part of the trace.
  auto normal_equations = [&](const Evaluation& e, Eigen::MatrixXd& a, Eigen::VectorXd& g) {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(e.residuals.size());
    if (pb.delta) {
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double r = std::fabs(e.residuals[i]);
        if (r > *pb.delta) w[i] = *pb.delta / r;
      }
    }
    const Eigen::MatrixXd jw = w.asDiagonal() * e.jacobian;
    a = e.jacobian.transpose() * jw;
    g = jw.transpose() * e.residuals;
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto [lo, hi] = internal_bounds(pb, pb.free[static_cast<std::size_t>(j)]);
      if ((theta[j] <= lo && g[j] > 0.0) || (theta[j] >= hi && g[j] < 0.0)) {
        a.row(j).setZero();
        a.col(j).setZero();
        a(j, j) = 1.0;
        g[j] = 0.0;
      }
    }
  };
  for (int k = 0; k < 8 && out.converged && ev.objective > 1e-30; ++k) {
    Eigen::MatrixXd a;
    Eigen::VectorXd g;
    normal_equations(ev, a, g);
    const Eigen::VectorXd step = a.ldlt().solve(-g);
    if (!step.allFinite()) break;
    Eigen::VectorXd trial = project(pb, theta + step);
    Evaluation next = evaluate_problem(pb, trial, true);
    if (!(next.objective <= ev.objective * (1.0 + 1e-12))) break;
    Eigen::MatrixXd a_next;
    Eigen::VectorXd g_next;
    normal_equations(next, a_next, g_next);
    if (!(g_next.norm() < 0.5 * g.norm())) break;
    theta = trial;
    ev = std::move(next);
  }
  out.theta = theta;
  out.objective = ev.objective;
  return out;
}

std::vector<double> default_exponent_grid() { return {0.05, 0.1, 0.2, 0.3, 0.5}; }

ParamBounds default_bounds(const std::string& name, double min_observed) {
  switch (kind_of(name)) {
    case ParamKind::Exponent: return {1e-3, 2.0};
    case ParamKind::Irreducible: return {0.0, min_observed * (1.0 - 1e-9)};
    case ParamKind::Steepness: return {0.0, 1.0};
    case ParamKind::Decay: return {1e-12, 1.0};
    case ParamKind::Coefficient: return {1e-12, 1e12};
  }
  return {-kInf, kInf};
}

std::map<std::string, double> default_fixed(LawFamily family) {
  if (family == LawFamily::DecayedPerf) return {{"decay", 1.0}};
  if (family == LawFamily::SaturatingPerf) return {{"i0", 1.0}};
  return {};
}

std::map<std::string, double> effective_fixed(LawFamily family, const FitConfig& config) {
  auto fixed = default_fixed(family);
  for (const auto& [k, v] : config.fixed) fixed[k] = v;
  return fixed;
}

// Coefficients implied by the first and last records (by x) for given exponents.
void derive_coefficients(LawFamily family, const RunSeries& data, std::vector<double>& v,
                         const std::vector<bool>& preset) {
  std::size_t lo = 0;
  std::size_t hi = 0;
  for (std::size_t i = 1; i < data.size(); ++i) {
    if (observed_x(family, data.records[i]) < observed_x(family, data.records[lo])) lo = i;
    if (observed_x(family, data.records[i]) > observed_x(family, data.records[hi])) hi = i;
  }
  const std::array<const TrainingRun*, 2> ends = {&data.records[lo], &data.records[hi]};
  double min_y = kInf;
  double max_y = 0.0;
  for (const auto& r : data.records) {
    min_y = std::min(min_y, r.loss);
    max_y = std::max(max_y, r.loss);
  }
  auto geo = [&](auto&& f) {
    double s = 0.0;
    for (const auto* r : ends) s += std::log(f(*r));
    return std::exp(s / 2.0);
  };
  auto set = [&](std::size_t i, double value) {
    if (!preset[i]) v[i] = value;
  };

  switch (family) {
    case LawFamily::Power:
    case LawFamily::PowerBatch:
    case LawFamily::PowerLr:
      set(0, geo([&](const TrainingRun& r) { return r.loss * std::pow(observed_x(family, r), v[1]); }));
      break;
    case LawFamily::Chinchilla:
    case LawFamily::SubOptimal: {
      set(0, 0.9 * min_y);
      const double scale = family == LawFamily::SubOptimal ? 1.0 / 1.5 : 1.0;
      auto excess = [&](const TrainingRun& r) { return std::max(r.loss - v[0], 1e-3 * r.loss); };
      set(1, scale * geo([&](const TrainingRun& r) { return 0.5 * excess(r) * std::pow(r.model_size, v[2]); }));
      set(3, scale * geo([&](const TrainingRun& r) { return 0.5 * excess(r) * std::pow(r.tokens, v[4]); }));
      break;
    }
    case LawFamily::SaturatingPerf: {
      set(0, 1.05 * max_y);
      const SaturatingPerfParams probe{v[0], 1.0, v[2], v[3]};
      set(1, geo([&](const TrainingRun& r) {
            const double info = probe.low_density() ? probe.i0 * r.tokens : probe.i0 * std::pow(r.tokens, -probe.alpha);
            const double frac = std::min(r.loss / probe.p0, 1.0 - 1e-9);
            return std::max(-std::log1p(-frac) / info, 1e-12);
          }));
      break;
    }
    case LawFamily::DecayedPerf:
      set(1, geo([&](const TrainingRun& r) { return r.loss / (v[0] * std::pow(observed_x(family, r), v[2])); }));
      break;
  }
}

struct StartResult {
  LmOutcome outcome;
  std::vector<double> params;  // full natural vector
};

StartResult run_start(const Problem& pb_all, std::vector<double> start, const FitConfig& config, bool stage_ks) {
  Problem pb = pb_all;
  pb.base = start;
  std::vector<double> trace;
  if (stage_ks) {
    Problem staged = pb;
    staged.free.clear();
    for (auto idx : pb.free) {
      if (kind_of(pb.names[idx]) != ParamKind::Steepness) staged.free.push_back(idx);
    }
    Eigen::VectorXd theta(static_cast<Eigen::Index>(staged.free.size()));
    for (std::size_t j = 0; j < staged.free.size(); ++j) theta[j] = to_internal(staged, staged.free[j], start[staged.free[j]]);
    auto first = levenberg_marquardt(staged, theta, config.max_iters, config.tolerance);
    if (std::isfinite(first.objective)) {
      start = assemble(staged, first.theta);
      trace = first.trace;
    }
    pb.base = start;
  }
  Eigen::VectorXd theta(static_cast<Eigen::Index>(pb.free.size()));
  for (std::size_t j = 0; j < pb.free.size(); ++j) theta[j] = to_internal(pb, pb.free[j], start[pb.free[j]]);
  StartResult res;
  res.outcome = levenberg_marquardt(pb, theta, config.max_iters, config.tolerance);
  trace.insert(trace.end(), res.outcome.trace.begin(), res.outcome.trace.end());
  res.outcome.trace = std::move(trace);
  res.params = assemble(pb, res.outcome.theta);
  return res;
}

std::vector<double> predictions(const LawParams& params, const RunSeries& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& r : data.records) out.push_back(evaluate(params, r));
  return out;
}

std::vector<double> actuals(const RunSeries& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& r : data.records) out.push_back(r.loss);
  return out;
}

}  // namespace

double mape(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(predicted.size()) + " predictions vs " +
                                               std::to_string(actual.size()) + " actuals");
  }
  if (actual.empty()) throw Error(ErrorCode::EmptyInput, "mape needs at least one value");
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (!(actual[i] > 0.0)) throw Error(ErrorCode::NonPositiveActual, "actual value " + std::to_string(i) + " is not > 0");
    sum += std::fabs(predicted[i] - actual[i]) / actual[i];
  }
  return sum / static_cast<double>(actual.size());
}

std::size_t free_parameter_count(LawFamily family, const FitConfig& config) {
  const auto fixed = effective_fixed(family, config);
  std::size_t n = 0;
  for (const auto& name : parameter_names(family)) n += fixed.count(name) ? 0 : 1;
  return n;
}

FitResult fit_law(const RunSeries& fit_split, LawFamily family, const FitConfig& config) {
  if (!(config.tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be > 0");
  require_fields(fit_split, family);
  const auto names = parameter_names(family);
  const auto fixed = effective_fixed(family, config);
  for (const auto& [name, _] : fixed) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw Error(ErrorCode::InvalidArgument, "'" + name + "' is not a parameter of " + std::string(family_name(family)));
    }
  }
  const std::size_t n_free = free_parameter_count(family, config);
  if (fit_split.size() < n_free + 1) {
    throw Error(ErrorCode::InsufficientData, std::to_string(fit_split.size()) + " records for " +
                                                 std::to_string(n_free) + " free parameters");
  }

  double min_y = kInf;
  for (const auto& r : fit_split.records) min_y = std::min(min_y, r.loss);

  Problem pb{family, &fit_split, names, {}, {}, {}, config.residual_space, config.robust_delta};
  pb.base.assign(names.size(), 0.0);
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = config.bounds.find(names[i]);
    pb.bounds.push_back(it != config.bounds.end() ? it->second : default_bounds(names[i], min_y));
    if (!(pb.bounds.back().lo < pb.bounds.back().hi)) {
      throw Error(ErrorCode::InvalidArgument, "bounds for '" + names[i] + "' need lo < hi");
    }
    if (auto f = fixed.find(names[i]); f != fixed.end()) pb.base[i] = f->second;
    else pb.free.push_back(i);
  }

  // Cartesian product over gridded parameters, first parameter varying slowest.
  std::vector<std::vector<double>> axes(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (fixed.count(names[i])) continue;
    if (auto g = config.multistart_grid.find(names[i]); g != config.multistart_grid.end()) {
      if (g->second.empty()) throw Error(ErrorCode::InvalidArgument, "empty grid for '" + names[i] + "'");
      axes[i] = g->second;
    } else if (kind_of(names[i]) == ParamKind::Exponent) {
      axes[i] = default_exponent_grid();
    } else if (names[i] == "k1") {
      axes[i] = {kK1Start};
    } else if (names[i] == "k2") {
      axes[i] = {kK2Start};
    }
  }
  std::vector<std::vector<double>> starts;
  std::vector<bool> preset(names.size(), false);
  for (std::size_t i = 0; i < names.size(); ++i) preset[i] = !axes[i].empty() || fixed.count(names[i]);
  {
    std::vector<std::size_t> counter(names.size(), 0);
    while (true) {
      std::vector<double> v = pb.base;
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (!axes[i].empty()) v[i] = axes[i][counter[i]];
      }
      derive_coefficients(family, fit_split, v, preset);
      starts.push_back(std::move(v));
      std::size_t pos = names.size();
      bool done = true;
      while (pos-- > 0) {
        if (axes[pos].empty()) continue;
        if (++counter[pos] < axes[pos].size()) {
          done = false;
          break;
        }
        counter[pos] = 0;
      }
      if (done) break;
    }
  }
  if (config.random_starts > 0) {
    Rng rng(config.seed);
    for (int s = 0; s < config.random_starts; ++s) {
      std::vector<double> v = pb.base;
      for (auto idx : pb.free) {
        auto [lo, hi] = internal_bounds(pb, idx);
        lo = std::max(lo, -50.0);
        hi = std::min(hi, 50.0);
        v[idx] = to_natural(pb, idx, rng.uniform(lo, hi));
      }
      starts.push_back(std::move(v));
    }
  }
  for (auto& s : starts) {
    for (auto idx : pb.free) s[idx] = std::clamp(s[idx], pb.bounds[idx].lo, pb.bounds[idx].hi);
  }

  const bool stage_ks = config.staged && family == LawFamily::SubOptimal &&
                        std::any_of(pb.free.begin(), pb.free.end(),
                                    [&](std::size_t i) { return kind_of(names[i]) == ParamKind::Steepness; });

  std::vector<StartResult> results(starts.size());
  const unsigned threads = std::max(1u, std::min<unsigned>(config.threads, static_cast<unsigned>(starts.size())));
  if (threads == 1) {
    for (std::size_t s = 0; s < starts.size(); ++s) results[s] = run_start(pb, starts[s], config, stage_ks);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < starts.size(); s = next++) results[s] = run_start(pb, starts[s], config, stage_ks);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::size_t best = starts.size();
  for (std::size_t s = 0; s < results.size(); ++s) {
    if (!std::isfinite(results[s].outcome.objective)) continue;
    if (best == starts.size() || results[s].outcome.objective < results[best].outcome.objective) best = s;
  }
  if (best == starts.size()) {
    throw Error(ErrorCode::NoConvergence, "all " + std::to_string(starts.size()) + " starts produced non-finite objectives");
  }

  const auto& win = results[best];
  FitResult result;
  result.family = family;
  result.params = from_vector(family, win.params);
  result.converged = win.outcome.converged;
  result.n_starts_tried = starts.size();
  result.best_start = best;
  result.best_objective = win.outcome.objective;
  result.trace = win.outcome.trace;
  const auto pred = predictions(result.params, fit_split);
  const auto act = actuals(fit_split);
  result.mape_fit = mape(pred, act);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    result.residuals.push_back(config.residual_space == ResidualSpace::Log ? std::log(pred[i]) - std::log(act[i])
                                                                           : pred[i] - act[i]);
  }
  return result;
}

Prediction predict(const LawParams& params, const RunSeries& holdout) {
  if (holdout.empty()) throw Error(ErrorCode::EmptyInput, "holdout has no records");
  Prediction p;
  p.predicted = predictions(params, holdout);
  p.mape = mape(p.predicted, actuals(holdout));
  return p;
}

std::vector<ComparisonRow> compare_laws(const RunSeries& series, std::span<const LawFamily> families,
                                        const FitConfig& config, double split_fraction) {
  const auto split = split_fit_holdout(series, split_fraction);
  std::vector<ComparisonRow> ok;
  std::vector<ComparisonRow> failed;
  for (auto family : families) {
    ComparisonRow row;
    row.family = family;
    row.n_free_params = free_parameter_count(family, config);
    try {
      FitResult fr = fit_law(split.fit, family, config);
      fr.mape_pred = predict(fr.params, split.holdout).mape;
      row.result = std::move(fr);
      ok.push_back(std::move(row));
    } catch (const Error& e) {
      row.error = e.what();
      failed.push_back(std::move(row));
    }
  }
  std::stable_sort(ok.begin(), ok.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (*a.result->mape_pred != *b.result->mape_pred) return *a.result->mape_pred < *b.result->mape_pred;
    return a.n_free_params < b.n_free_params;
  });
  ok.insert(ok.end(), std::make_move_iterator(failed.begin()), std::make_move_iterator(failed.end()));
  return ok;
}

LogLogFit fit_power_loglog(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "x and y lengths differ");
  if (x.size() < 2) throw Error(ErrorCode::InsufficientData, "log-log regression needs two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw Error(ErrorCode::NonPositiveValue, "log-log regression needs positive data");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    const double dy = std::log(y[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::InsufficientData, "log-log regression needs distinct x values");
  const double slope = sxy / sxx;
  LogLogFit fit;
  fit.alpha = -slope;
  fit.ln_lambda = my - slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

json to_json(const FitConfig& c) {
  json j = json::object();
  j["residual_space"] = c.residual_space == ResidualSpace::Log ? "log" : "linear";
  j["robust_delta"] = c.robust_delta ? json(*c.robust_delta) : json(nullptr);
  json grid = json::object();
  for (const auto& [k, v] : c.multistart_grid) grid[k] = v;
  j["multistart_grid"] = grid;
  json bounds = json::object();
  for (const auto& [k, b] : c.bounds) bounds[k] = {b.lo, b.hi};
  j["bounds"] = bounds;
  json fixed = json::object();
  for (const auto& [k, v] : c.fixed) fixed[k] = v;
  j["fixed"] = fixed;
  j["max_iters"] = c.max_iters;
  j["tolerance"] = c.tolerance;
  j["seed"] = c.seed;
  j["random_starts"] = c.random_starts;
  j["staged"] = c.staged;
  return j;
}

FitConfig fit_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Format, "fit config must be a JSON object");
  FitConfig c;
  try {
    if (j.contains("residual_space")) {
      const auto s = j["residual_space"].get<std::string>();
      if (s == "log") c.residual_space = ResidualSpace::Log;
      else if (s == "linear") c.residual_space = ResidualSpace::Linear;
      else throw Error(ErrorCode::Format, "residual_space must be 'log' or 'linear'");
    }
    if (j.contains("robust_delta") && !j["robust_delta"].is_null()) c.robust_delta = j["robust_delta"].get<double>();
    if (j.contains("multistart_grid")) {
      for (const auto& [k, v] : j["multistart_grid"].items()) c.multistart_grid[k] = v.get<std::vector<double>>();
    }
    if (j.contains("bounds")) {
      for (const auto& [k, v] : j["bounds"].items()) {
        const auto pair = v.get<std::vector<double>>();
        if (pair.size() != 2) throw Error(ErrorCode::Format, "bounds for '" + k + "' must be [lo, hi]");
        c.bounds[k] = {pair[0], pair[1]};
      }
    }
    if (j.contains("fixed")) {
      for (const auto& [k, v] : j["fixed"].items()) c.fixed[k] = v.get<double>();
    }
    if (j.contains("max_iters")) c.max_iters = j["max_iters"].get<int>();
    if (j.contains("tolerance")) c.tolerance = j["tolerance"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("random_starts")) c.random_starts = j["random_starts"].get<int>();
    if (j.contains("staged")) c.staged = j["staged"].get<bool>();
    if (j.contains("threads")) c.threads = j["threads"].get<unsigned>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("fit config: ") + e.what());
  }
  if (!(c.tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be > 0");
  return c;
}

json to_json(const FitResult& r) {
  json j = json::object();
  j["family"] = std::string(family_name(r.family));
  j["params"] = to_json(r.params);
  j["mape_fit"] = r.mape_fit;
  j["mape_pred"] = r.mape_pred ? json(*r.mape_pred) : json(nullptr);
  j["converged"] = r.converged;
  j["n_starts_tried"] = r.n_starts_tried;
  j["best_start"] = r.best_start;
  j["best_objective"] = r.best_objective;
  j["residuals"] = r.residuals;
  return j;
}

json to_json(std::span<const ComparisonRow> rows) {
  json arr = json::array();
  for (const auto& row : rows) {
    json j = json::object();
    j["family"] = std::string(family_name(row.family));
    j["n_free_params"] = row.n_free_params;
    if (row.result) {
      j["mape_fit"] = row.result->mape_fit;
      j["mape_pred"] = row.result->mape_pred ? json(*row.result->mape_pred) : json(nullptr);
      j["converged"] = row.result->converged;
      j["params"] = to_json(row.result->params);
    } else {
      j["error"] = row.error;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

std::string comparison_csv(std::span<const ComparisonRow> rows) {
  std::ostringstream out;
  out << "family,mape_fit,mape_pred,converged,params\n";
  for (const auto& row : rows) {
    out << family_name(row.family);
    if (!row.result) {
      out << ",,,failed," << detail::csv_escape(row.error) << '\n';
      continue;
    }
    const auto& r = *row.result;
    out << ',' << detail::format_number(r.mape_fit) << ','
        << (r.mape_pred ? detail::format_number(*r.mape_pred) : std::string()) << ','
        << (r.converged ? "true" : "false");
    const auto names = parameter_names(r.family);
    const auto values = to_vector(r.params);
    for (std::size_t i = 0; i < names.size(); ++i) out << ',' << names[i] << '=' << detail::format_number(values[i]);
    out << '\n';
  }
  return out.str();
}

}  // namespace subscale
