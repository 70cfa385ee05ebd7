#include "subscale/synth.hpp"

#include <algorithm>
#include <cmath>

#include "subscale/error.hpp"
#include "subscale/rng.hpp"
#include "text.hpp"

namespace subscale {

namespace {

using json = nlohmann::json;

}  // namespace

RunSeries gen_curves(const CurveSpec& spec) {
  const auto family = family_of(spec.law);
  if (family == LawFamily::PowerBatch || family == LawFamily::PowerLr) {
    throw Error(ErrorCode::InvalidArgument, "curve generation covers laws of (N, D) only");
  }
  if (spec.model_sizes.size() != spec.token_checkpoints.size()) {
    throw Error(ErrorCode::InvalidArgument, "need one checkpoint list per model size");
  }
  if (!(spec.noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  check_params(spec.law);

  Rng rng(spec.seed);
  RunSeries series;
  series.metadata.source = "synth";
  series.metadata.ground_truth = to_json(spec.law).dump();
  for (std::size_t i = 0; i < spec.model_sizes.size(); ++i) {
    const double n = std::round(spec.model_sizes[i]);
    if (!(n > 0.0)) throw Error(ErrorCode::InvalidArgument, "model sizes must be positive");
    const std::string run_id = "n" + detail::format_number(n);
    double previous = 0.0;
    std::int64_t step = 0;
    for (double raw_tokens : spec.token_checkpoints[i]) {
      const double d = std::round(raw_tokens);
      if (!(d > previous)) {
        throw Error(ErrorCode::InvalidArgument, "checkpoints of " + run_id + " must strictly increase");
      }
      previous = d;
      TrainingRun r;
      r.run_id = run_id;
      r.model_size = n;
      r.tokens = d;
      r.step = step++;
      r.dataset_tag = "synth";
      const double clean = evaluate(spec.law, r);
      const double z = rng.normal();
      r.loss = spec.noise_sigma > 0.0 ? clean * std::exp(spec.noise_sigma * z) : clean;
      series.records.push_back(std::move(r));
    }
  }
  return series;
}

std::vector<std::vector<double>> otr_checkpoints(std::span<const double> model_sizes, std::span<const double> otrs) {
  std::vector<std::vector<double>> out;
  for (double n : model_sizes) {
    std::vector<double> d;
    for (double r : otrs) d.push_back(n * r);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> log_space(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> out;
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1)));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

std::vector<double> reference_model_sizes() {
  return {20e6, 47e6, 113e6, 241e6, 487e6, 736e6, 936e6, 1330e6, 2510e6, 4700e6, 7030e6};
}

BlobSample gen_blobs(const BlobSpec& spec) {
  if (spec.dim == 0) throw Error(ErrorCode::InvalidArgument, "blob dimension must be >= 1");
  if (spec.blobs.empty()) throw Error(ErrorCode::InvalidArgument, "at least one blob is required");
  for (std::size_t b = 0; b < spec.blobs.size(); ++b) {
    const auto& blob = spec.blobs[b];
    if (blob.centroid.size() != spec.dim) throw Error(ErrorCode::InvalidArgument, "centroid dimension mismatch");
    if (!(blob.spread > 0.0)) throw Error(ErrorCode::InvalidArgument, "blob spreads must be > 0");
    if (blob.n_samples == 0) throw Error(ErrorCode::InvalidArgument, "blobs need at least one sample");
    for (std::size_t o = 0; o < b; ++o) {
      if (spec.blobs[o].centroid == blob.centroid) throw Error(ErrorCode::InvalidArgument, "blob centroids must differ");
    }
  }
  Rng rng(spec.seed);
  std::vector<double> values;
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < spec.blobs.size(); ++b) {
    const auto& blob = spec.blobs[b];
    for (std::size_t s = 0; s < blob.n_samples; ++s) {
      for (std::size_t j = 0; j < spec.dim; ++j) values.push_back(blob.centroid[j] + blob.spread * rng.normal());
      labels.push_back(b);
    }
  }
  return {EmbeddingSet(spec.dim, std::move(values)), std::move(labels)};
}

CurveSpec curve_spec_from_json(const json& j) {
  CurveSpec spec;
  try {
    spec.law = law_from_json(j.at("law"));
    spec.model_sizes = j.at("model_sizes").get<std::vector<double>>();
    if (j.contains("token_checkpoints")) {
      spec.token_checkpoints = j["token_checkpoints"].get<std::vector<std::vector<double>>>();
    } else if (j.contains("otr_checkpoints")) {
      const auto otrs = j["otr_checkpoints"].get<std::vector<double>>();
      spec.token_checkpoints = otr_checkpoints(spec.model_sizes, otrs);
    } else {
      throw Error(ErrorCode::Format, "curve spec needs token_checkpoints or otr_checkpoints");
    }
    spec.noise_sigma = j.value("noise_sigma", 0.0);
    spec.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("curve spec: ") + e.what());
  }
  return spec;
}

BlobSpec blob_spec_from_json(const json& j) {
  BlobSpec spec;
  try {
    spec.dim = j.at("dim").get<std::size_t>();
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const auto& b : j.at("blobs")) {
      spec.blobs.push_back({b.at("n_samples").get<std::size_t>(), b.at("centroid").get<std::vector<double>>(),
                            b.at("spread").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("blob spec: ") + e.what());
  }
  return spec;
}

json to_json(const CurveSpec& spec) {
  return {{"law", to_json(spec.law)},
          {"model_sizes", spec.model_sizes},
          {"token_checkpoints", spec.token_checkpoints},
          {"noise_sigma", spec.noise_sigma},
          {"seed", spec.seed}};
}

json to_json(const BlobSpec& spec) {
  json blobs = json::array();
  for (const auto& b : spec.blobs) {
    blobs.push_back({{"n_samples", b.n_samples}, {"centroid", b.centroid}, {"spread", b.spread}});
  }
  return {{"dim", spec.dim}, {"seed", spec.seed}, {"blobs", blobs}};
}

}  // namespace subscale
