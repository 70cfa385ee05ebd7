#include "subscale/laws.hpp"

#include <algorithm>
#include <cmath>

#include "subscale/error.hpp"

namespace subscale {

namespace {

using json = nlohmann::json;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_positive(double v, const char* what) {
  if (!(v > 0.0)) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be > 0");
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double need(const std::optional<double>& v, const char* field, const TrainingRun& r) {
  if (!v) throw Error(ErrorCode::MissingField, "record of run '" + r.run_id + "' lacks " + field);
  return *v;
}

double power_x(const PowerLawParams& p, const TrainingRun& r) {
  switch (p.input) {
    case PowerInput::Compute: return compute_flops(r.model_size, r.tokens);
    case PowerInput::BatchSize: return need(r.batch_size, "batch_size", r);
    case PowerInput::LearningRate: return need(r.learning_rate, "learning_rate", r);
  }
  return 0.0;
}

double get(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) {
    throw Error(ErrorCode::Format, std::string("law JSON lacks numeric field '") + key + "'");
  }
  return it->get<double>();
}

}  // namespace

std::string_view family_name(LawFamily family) {
  switch (family) {
    case LawFamily::Power: return "power";
    case LawFamily::PowerBatch: return "power_batch";
    case LawFamily::PowerLr: return "power_lr";
    case LawFamily::Chinchilla: return "chinchilla";
    case LawFamily::SubOptimal: return "suboptimal";
    case LawFamily::SaturatingPerf: return "saturating_perf";
    case LawFamily::DecayedPerf: return "decayed_perf";
  }
  return "unknown";
}

LawFamily family_from_name(std::string_view name) {
  for (auto f : {LawFamily::Power, LawFamily::PowerBatch, LawFamily::PowerLr, LawFamily::Chinchilla,
                 LawFamily::SubOptimal, LawFamily::SaturatingPerf, LawFamily::DecayedPerf}) {
    if (family_name(f) == name) return f;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown law family '" + std::string(name) + "'");
}

LawFamily family_of(const LawParams& params) {
  return std::visit(overloaded{
                        [](const PowerLawParams& p) {
                          switch (p.input) {
                            case PowerInput::BatchSize: return LawFamily::PowerBatch;
                            case PowerInput::LearningRate: return LawFamily::PowerLr;
                            default: return LawFamily::Power;
                          }
                        },
                        [](const ChinchillaParams&) { return LawFamily::Chinchilla; },
                        [](const SubOptimalParams&) { return LawFamily::SubOptimal; },
                        [](const SaturatingPerfParams&) { return LawFamily::SaturatingPerf; },
                        [](const DecayedPerfParams&) { return LawFamily::DecayedPerf; },
                    },
                    params);
}

std::vector<std::string> parameter_names(LawFamily family) {
  switch (family) {
    case LawFamily::Power:
    case LawFamily::PowerBatch:
    case LawFamily::PowerLr: return {"lambda", "alpha"};
    case LawFamily::Chinchilla: return {"e_irreducible", "lambda_n", "alpha_n", "lambda_d", "alpha_d"};
    case LawFamily::SubOptimal:
      return {"e_irreducible", "lambda_n", "alpha_n", "lambda_d", "alpha_d", "k1", "k2"};
    case LawFamily::SaturatingPerf: return {"p0", "beta", "i0", "alpha"};
    case LawFamily::DecayedPerf: return {"decay", "lambda", "alpha"};
  }
  return {};
}

std::vector<double> to_vector(const LawParams& params) {
  return std::visit(overloaded{
                        [](const PowerLawParams& p) { return std::vector<double>{p.lambda, p.alpha}; },
                        [](const ChinchillaParams& p) {
                          return std::vector<double>{p.e_irreducible, p.lambda_n, p.alpha_n, p.lambda_d, p.alpha_d};
                        },
                        [](const SubOptimalParams& p) {
                          return std::vector<double>{p.e_irreducible, p.lambda_n, p.alpha_n, p.lambda_d,
                                                     p.alpha_d,       p.k1,       p.k2};
                        },
                        [](const SaturatingPerfParams& p) { return std::vector<double>{p.p0, p.beta, p.i0, p.alpha}; },
                        [](const DecayedPerfParams& p) { return std::vector<double>{p.decay, p.lambda, p.alpha}; },
                    },
                    params);
}

LawParams from_vector(LawFamily family, std::span<const double> v) {
  if (v.size() != parameter_names(family).size()) {
    throw Error(ErrorCode::InvalidArgument, "wrong parameter count for " + std::string(family_name(family)));
  }
  switch (family) {
    case LawFamily::Power: return PowerLawParams{v[0], v[1], PowerInput::Compute};
    case LawFamily::PowerBatch: return PowerLawParams{v[0], v[1], PowerInput::BatchSize};
    case LawFamily::PowerLr: return PowerLawParams{v[0], v[1], PowerInput::LearningRate};
    case LawFamily::Chinchilla: return ChinchillaParams{v[0], v[1], v[2], v[3], v[4]};
    case LawFamily::SubOptimal: return SubOptimalParams{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
    case LawFamily::SaturatingPerf: return SaturatingPerfParams{v[0], v[1], v[2], v[3]};
    case LawFamily::DecayedPerf: return DecayedPerfParams{v[0], v[1], v[2]};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown family");
}

void check_params(const LawParams& params) {
  std::visit(overloaded{
                 [](const PowerLawParams& p) {
                   require_positive(p.lambda, "lambda");
                   require_positive(p.alpha, "alpha");
                 },
                 [](const ChinchillaParams& p) {
                   if (!(p.e_irreducible >= 0.0)) throw Error(ErrorCode::InvalidArgument, "E must be >= 0");
                   require_positive(p.lambda_n, "lambda_n");
                   require_positive(p.alpha_n, "alpha_n");
                   require_positive(p.lambda_d, "lambda_d");
                   require_positive(p.alpha_d, "alpha_d");
                 },
                 [](const SubOptimalParams& p) {
                   if (!(p.e_irreducible >= 0.0)) throw Error(ErrorCode::InvalidArgument, "E must be >= 0");
                   require_positive(p.lambda_n, "lambda_n");
                   require_positive(p.alpha_n, "alpha_n");
                   require_positive(p.lambda_d, "lambda_d");
                   require_positive(p.alpha_d, "alpha_d");
                   if (!(p.k1 >= 0.0) || !(p.k2 >= 0.0)) throw Error(ErrorCode::InvalidArgument, "k1, k2 must be >= 0");
                 },
                 [](const SaturatingPerfParams& p) {
                   require_positive(p.p0, "p0");
                   require_positive(p.beta, "beta");
                   require_positive(p.i0, "i0");
                   if (!(p.alpha >= 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be >= 0");
                 },
                 [](const DecayedPerfParams& p) {
                   if (!(p.decay > 0.0 && p.decay <= 1.0)) {
                     throw Error(ErrorCode::InvalidArgument, "decay must lie in (0, 1]");
                   }
                   require_positive(p.lambda, "lambda");
                   require_positive(p.alpha, "alpha");
                 },
             },
             params);
}

double eval_power(const PowerLawParams& p, double x) {
  require_positive(x, "x");
  return p.lambda * std::pow(x, -p.alpha);
}

double repetition_factor(double otr, double k) {
  if (!(otr > 0.0)) throw Error(ErrorCode::InvalidArgument, "otr must be > 0");
  if (!(k >= 0.0)) throw Error(ErrorCode::InvalidArgument, "k must be >= 0");
  // 1 + logistic rounds to 2 once k * otr exceeds ~37; keep the result inside (1, 2).
  return std::min(1.0 + logistic(k * otr), std::nextafter(2.0, 1.0));
}

double eval_chinchilla(const ChinchillaParams& p, double n, double d) {
  require_positive(n, "n");
  require_positive(d, "d");
  return p.e_irreducible + p.lambda_n * std::pow(n, -p.alpha_n) + p.lambda_d * std::pow(d, -p.alpha_d);
}

double eval_suboptimal(const SubOptimalParams& p, double n, double d) {
  require_positive(n, "n");
  require_positive(d, "d");
  const double ratio = d / n;
  const double r_d = repetition_factor(ratio, p.k1);
  const double r_n = repetition_factor(ratio, p.k2);
  return p.e_irreducible + p.lambda_n * r_n * std::pow(n, -p.alpha_n) + p.lambda_d * r_d * std::pow(d, -p.alpha_d);
}

double eval_saturating_perf(const SaturatingPerfParams& p, double n_samples) {
  require_positive(n_samples, "n_samples");
  const double info = p.low_density() ? p.i0 * n_samples : p.i0 * std::pow(n_samples, -p.alpha);
  return -p.p0 * std::expm1(-p.beta * info);
}

double eval_decayed_perf(const DecayedPerfParams& p, double c) {
  require_positive(c, "c");
  return p.decay * p.lambda * std::pow(c, p.alpha);
}

std::array<double, 2> grad_power(const PowerLawParams& p, double x) {
  const double base = std::pow(x, -p.alpha);
  return {base, -p.lambda * base * std::log(x)};
}

std::array<double, 5> grad_chinchilla(const ChinchillaParams& p, double n, double d) {
  const double tn = std::pow(n, -p.alpha_n);
  const double td = std::pow(d, -p.alpha_d);
  return {1.0, tn, -p.lambda_n * tn * std::log(n), td, -p.lambda_d * td * std::log(d)};
}

std::array<double, 7> grad_suboptimal(const SubOptimalParams& p, double n, double d) {
  const double ratio = d / n;
  const double s_d = logistic(p.k1 * ratio);
  const double s_n = logistic(p.k2 * ratio);
  const double tn = std::pow(n, -p.alpha_n);
  const double td = std::pow(d, -p.alpha_d);
  const double r_n = 1.0 + s_n;
  const double r_d = 1.0 + s_d;
  return {1.0,
          r_n * tn,
          -p.lambda_n * r_n * tn * std::log(n),
          r_d * td,
          -p.lambda_d * r_d * td * std::log(d),
          p.lambda_d * td * s_d * (1.0 - s_d) * ratio,
          p.lambda_n * tn * s_n * (1.0 - s_n) * ratio};
}

std::array<double, 4> grad_saturating_perf(const SaturatingPerfParams& p, double n) {
  const double g = p.low_density() ? n : std::pow(n, -p.alpha);
  const double u = p.beta * p.i0 * g;
  const double e = std::exp(-u);
  const double d_alpha = p.low_density() ? 0.0 : p.p0 * e * p.beta * p.i0 * (-std::log(n) * g);
  return {-std::expm1(-u), p.p0 * e * p.i0 * g, p.p0 * e * p.beta * g, d_alpha};
}

std::array<double, 3> grad_decayed_perf(const DecayedPerfParams& p, double c) {
  const double t = std::pow(c, p.alpha);
  return {p.lambda * t, p.decay * t, p.decay * p.lambda * t * std::log(c)};
}

double evaluate(const LawParams& params, const TrainingRun& r) {
  return std::visit(overloaded{
                        [&](const PowerLawParams& p) { return eval_power(p, power_x(p, r)); },
                        [&](const ChinchillaParams& p) { return eval_chinchilla(p, r.model_size, r.tokens); },
                        [&](const SubOptimalParams& p) { return eval_suboptimal(p, r.model_size, r.tokens); },
                        [&](const SaturatingPerfParams& p) { return eval_saturating_perf(p, r.tokens); },
                        [&](const DecayedPerfParams& p) {
                          return eval_decayed_perf(p, compute_flops(r.model_size, r.tokens));
                        },
                    },
                    params);
}

std::vector<double> gradient(const LawParams& params, const TrainingRun& r) {
  auto vec = [](const auto& a) { return std::vector<double>(a.begin(), a.end()); };
  return std::visit(overloaded{
                        [&](const PowerLawParams& p) { return vec(grad_power(p, power_x(p, r))); },
                        [&](const ChinchillaParams& p) { return vec(grad_chinchilla(p, r.model_size, r.tokens)); },
                        [&](const SubOptimalParams& p) { return vec(grad_suboptimal(p, r.model_size, r.tokens)); },
                        [&](const SaturatingPerfParams& p) { return vec(grad_saturating_perf(p, r.tokens)); },
                        [&](const DecayedPerfParams& p) {
                          return vec(grad_decayed_perf(p, compute_flops(r.model_size, r.tokens)));
                        },
                    },
                    params);
}

json to_json(const LawParams& params) {
  const LawFamily family = family_of(params);
  json j = json::object();
  j["family"] = std::string(family_name(family));
  const auto names = parameter_names(family);
  const auto values = to_vector(params);
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = values[i];
  return j;
}

LawParams law_from_json(const json& j) {
  if (!j.is_object() || !j.contains("family") || !j["family"].is_string()) {
    throw Error(ErrorCode::Format, "law JSON needs a string 'family' field");
  }
  const LawFamily family = family_from_name(j["family"].get<std::string>());
  std::vector<double> values;
  for (const auto& name : parameter_names(family)) values.push_back(get(j, name.c_str()));
  LawParams params = from_vector(family, values);
  check_params(params);
  return params;
}

}  // namespace subscale
