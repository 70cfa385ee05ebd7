#include "subscale/alloc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "subscale/error.hpp"
#include "subscale/fit.hpp"
#include "text.hpp"

namespace subscale {

namespace {

using json = nlohmann::json;

}  // namespace

double allocation_loss(const LawParams& law, double n, double d) {
  if (const auto* c = std::get_if<ChinchillaParams>(&law)) return eval_chinchilla(*c, n, d);
  if (const auto* s = std::get_if<SubOptimalParams>(&law)) return eval_suboptimal(*s, n, d);
  throw Error(ErrorCode::InvalidArgument, "allocation needs a chinchilla or suboptimal law");
}

AllocationPlan optimal_allocation(const LawParams& law, double budget, const AllocationOptions& options) {
  if (!(budget > 0.0) || !std::isfinite(budget)) throw Error(ErrorCode::InvalidArgument, "budget must be > 0");
  check_params(law);
  (void)allocation_loss(law, 1.0, 1.0);  // rejects unsupported families early

  const double lo = std::log(std::max(options.n_min, budget / (6.0 * options.d_max)));
  const double hi = std::log(options.n_max);
  if (!(lo < hi)) throw Error(ErrorCode::NoInteriorMinimum, "empty model-size bracket for this budget");
  auto f = [&](double u) {
    const double n = std::exp(u);
    return allocation_loss(law, n, budget / (6.0 * n));
  };

  const std::size_t m = std::max<std::size_t>(options.scan_points, 3);
  std::size_t best = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    const double v = f(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1));
    if (v < best_v) {
      best_v = v;
      best = i;
    }
  }
  if (best == 0 || best == m - 1) {
    throw Error(ErrorCode::NoInteriorMinimum, "loss is monotone over n in [" + detail::format_number(std::exp(lo)) +
                                                  ", " + detail::format_number(std::exp(hi)) + "]");
  }

  // Golden-section search on the scan cell around the coarse minimum.
  const double step = (hi - lo) / static_cast<double>(m - 1);
  double a = lo + step * static_cast<double>(best - 1);
  double b = lo + step * static_cast<double>(best + 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > options.tolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double u = 0.5 * (a + b);

  AllocationPlan plan;
  plan.budget = budget;
  plan.n_star = std::exp(u);
  plan.d_star = budget / (6.0 * plan.n_star);
  plan.otr_star = plan.d_star / plan.n_star;
  plan.predicted_loss = allocation_loss(law, plan.n_star, plan.d_star);
  plan.law = law;
  return plan;
}

std::vector<SweepPoint> otr_sweep(const LawParams& law, double budget, std::span<const double> otr_values) {
  if (!(budget > 0.0)) throw Error(ErrorCode::InvalidArgument, "budget must be > 0");
  std::vector<SweepPoint> out;
  out.reserve(otr_values.size());
  for (double r : otr_values) {
    if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, "OTR values must be > 0");
    SweepPoint p;
    p.otr = r;
    p.n = std::sqrt(budget / (6.0 * r));
    p.d = r * p.n;
    p.loss = allocation_loss(law, p.n, p.d);
    out.push_back(p);
  }
  return out;
}

JarqueBera jarque_bera(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  JarqueBera jb{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  if (x.size() < 3) return jb;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) return jb;
  const double skew = m3 / std::pow(m2, 1.5);
  const double kurt = m4 / (m2 * m2);
  jb.stat = n / 6.0 * (skew * skew + (kurt - 3.0) * (kurt - 3.0) / 4.0);
  jb.p_value = std::exp(-jb.stat / 2.0);
  return jb;
}

ExponentStabilityReport alpha_stability(const RunSeries& series, std::span<const OtrBin> bins,
                                        const StabilityOptions& options) {
  if (bins.empty()) throw Error(ErrorCode::InvalidArgument, "at least one OTR bin is required");
  ExponentStabilityReport rep;
  rep.threshold = options.threshold;
  for (const auto& bin : bins) {
    std::vector<double> c;
    std::vector<double> l;
    for (const auto& r : series.records) {
      const double ratio = otr(r.model_size, r.tokens);
      if (ratio > bin.lo && ratio <= bin.hi) {
        c.push_back(compute_flops(r.model_size, r.tokens));
        l.push_back(r.loss);
      }
    }
    if (c.size() < 3) {
      throw Error(ErrorCode::BinTooSmall, "OTR bin (" + detail::format_number(bin.lo) + ", " +
                                              detail::format_number(bin.hi) + "] holds " + std::to_string(c.size()) +
                                              " records");
    }
    const auto fit = fit_power_loglog(c, l);
    rep.bins.push_back({bin, fit.alpha, std::exp(fit.ln_lambda), c.size()});
  }

  std::vector<double> stable;
  for (const auto& b : rep.bins) {
    if (b.range.lo >= options.threshold) stable.push_back(b.alpha);
  }
  rep.n_stable_bins = stable.size();
  if (stable.empty()) {
    for (const auto& b : rep.bins) stable.push_back(b.alpha);
  }
  double mean = 0.0;
  for (double a : stable) mean += a;
  mean /= static_cast<double>(stable.size());
  double var = 0.0;
  for (double a : stable) var += (a - mean) * (a - mean);
  rep.mean_alpha = mean;
  rep.std_alpha = stable.size() > 1 ? std::sqrt(var / static_cast<double>(stable.size() - 1)) : 0.0;
  const auto jb = jarque_bera(stable);
  rep.normality_stat = jb.stat;
  rep.normality_p = jb.p_value;
  rep.normality_pass = std::isfinite(jb.p_value) && jb.p_value > options.significance;

  std::vector<BinExponent> ordered = rep.bins;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const BinExponent& a, const BinExponent& b) { return a.range.lo < b.range.lo; });
  rep.monotone_decreasing = ordered.size() > 1;
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (!(ordered[i].alpha < ordered[i - 1].alpha)) rep.monotone_decreasing = false;
  }
  return rep;
}

FrontierResult hyperparam_frontier(const RunSeries& runs, Knob knob, std::span<const double> target_losses,
                                   const SmoothingOptions& smoothing) {
  const char* knob_name = knob == Knob::BatchSize ? "batch_size" : "learning_rate";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs.records[i];
    if (!(knob == Knob::BatchSize ? r.batch_size : r.learning_rate)) {
      throw Error(ErrorCode::KnobMissing, "record " + std::to_string(i + 1) + " lacks " + knob_name);
    }
  }
  const RunSeries smoothed = gaussian_smooth(runs, smoothing);
  const auto ids = smoothed.run_ids();

  FrontierResult out;
  for (double target : target_losses) {
    std::map<double, double> earliest;  // knob value -> fewest tokens over its runs
    std::map<double, bool> seen;
    for (const auto& id : ids) {
      const auto idx = smoothed.indices_of(id);
      const auto& first = smoothed.records[idx.front()];
      const double value = knob == Knob::BatchSize ? *first.batch_size : *first.learning_rate;
      seen[value] = true;
      for (auto i : idx) {
        if (smoothed.records[i].loss <= target) {
          auto [it, inserted] = earliest.emplace(value, smoothed.records[i].tokens);
          if (!inserted) it->second = std::min(it->second, smoothed.records[i].tokens);
          break;
        }
      }
    }
    for (const auto& [value, _] : seen) {
      if (!earliest.count(value)) {
        out.warnings.push_back(std::string(knob_name) + "=" + detail::format_number(value) + " never reaches loss " +
                               detail::format_number(target));
      }
    }
    if (earliest.empty()) {
      throw Error(ErrorCode::NoRunReachesTarget, "no run reaches loss " + detail::format_number(target));
    }
    auto best = earliest.begin();
    for (auto it = earliest.begin(); it != earliest.end(); ++it) {
      if (it->second < best->second) best = it;  // map order keeps ties on the smaller knob
    }
    out.points.push_back({target, best->first, best->second});
  }
  return out;
}

json to_json(const AllocationPlan& p) {
  json j = json::object();
  j["budget"] = p.budget;
  j["n_star"] = p.n_star;
  j["d_star"] = p.d_star;
  j["otr_star"] = p.otr_star;
  j["predicted_loss"] = p.predicted_loss;
  j["law"] = to_json(p.law);
  return j;
}

json to_json(const ExponentStabilityReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j = json::object();
  json bins = json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"otr_lo", b.range.lo},
                    {"otr_hi", b.range.hi},
                    {"alpha_c", b.alpha},
                    {"lambda_c", b.lambda},
                    {"n_points", b.n_points}});
  }
  j["bins"] = bins;
  j["threshold"] = r.threshold;
  j["n_stable_bins"] = r.n_stable_bins;
  j["mean_alpha"] = r.mean_alpha;
  j["std_alpha"] = r.std_alpha;
  j["normality_test"] = r.normality_test;
  j["normality_stat"] = num(r.normality_stat);
  j["normality_p"] = num(r.normality_p);
  j["normality_pass"] = r.normality_pass;
  j["monotone_decreasing"] = r.monotone_decreasing;
  return j;
}

std::string sweep_csv(std::span<const SweepPoint> points) {
  std::ostringstream out;
  out << "otr,n,d,loss\n";
  for (const auto& p : points) {
    out << detail::format_number(p.otr) << ',' << detail::format_number(p.n) << ',' << detail::format_number(p.d)
        << ',' << detail::format_number(p.loss) << '\n';
  }
  return out.str();
}

}  // namespace subscale
