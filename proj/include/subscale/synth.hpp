#pragma once

// Seeded generators with known ground truth. Draw order is part of the
// contract: curves draw one normal per record (sizes outer, checkpoints
// inner); blobs draw one normal per component (blob, sample, component).

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "subscale/density.hpp"
#include "subscale/laws.hpp"
#include "subscale/runs.hpp"

namespace subscale {

struct CurveSpec {
  LawParams law;
  std::vector<double> model_sizes;
  std::vector<std::vector<double>> token_checkpoints;  // one strictly increasing list per size
  double noise_sigma = 0.0;  // multiplicative lognormal
  std::uint64_t seed = 0;
};

// Loss = law(N, D) * exp(sigma * z). N and D are rounded to whole counts.
RunSeries gen_curves(const CurveSpec& spec);

// Tokens at N * otr for each OTR value, per model size.
std::vector<std::vector<double>> otr_checkpoints(std::span<const double> model_sizes, std::span<const double> otrs);

// `count` values log-spaced over [lo, hi].
std::vector<double> log_space(double lo, double hi, std::size_t count);

// Model sizes (parameters) of the reference 20M .. 7.03B architecture ladder.
std::vector<double> reference_model_sizes();

struct BlobSpec {
  struct Blob {
    std::size_t n_samples = 0;
    std::vector<double> centroid;
    double spread = 1.0;  // per-component standard deviation
  };
  std::size_t dim = 0;
  std::vector<Blob> blobs;
  std::uint64_t seed = 0;
};

struct BlobSample {
  EmbeddingSet embeddings;
  std::vector<std::size_t> labels;
};

BlobSample gen_blobs(const BlobSpec& spec);

CurveSpec curve_spec_from_json(const nlohmann::json& j);
BlobSpec blob_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CurveSpec& spec);
nlohmann::json to_json(const BlobSpec& spec);

}  // namespace subscale
