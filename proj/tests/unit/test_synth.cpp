#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "subscale/density.hpp"
#include "subscale/error.hpp"
#include "subscale/laws.hpp"
#include "subscale/synth.hpp"

using namespace subscale;

namespace {

SubOptimalParams reference_law() { return {1.372, 61.929, 0.272, 455.345, 0.289, 0.00810, 0.00114}; }

CurveSpec reference_spec(double sigma, std::uint64_t seed) {
  CurveSpec spec;
  spec.law = reference_law();
  spec.model_sizes = reference_model_sizes();
  spec.token_checkpoints = otr_checkpoints(spec.model_sizes, log_space(5.0, 1700.0, 30));
  spec.noise_sigma = sigma;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("noiseless curves equal the law") {
  const auto series = gen_curves(reference_spec(0.0, 1));
  REQUIRE(series.size() == 11 * 30);
  for (const auto& r : series.records) {
    CHECK(r.loss == eval_suboptimal(reference_law(), r.model_size, r.tokens));
  }
  CHECK(law_from_json(nlohmann::json::parse(series.metadata.ground_truth)) == LawParams{reference_law()});
}

TEST_CASE("curves are a pure function of the seed") {
  const auto a = gen_curves(reference_spec(0.01, 9));
  const auto b = gen_curves(reference_spec(0.01, 9));
  const auto c = gen_curves(reference_spec(0.01, 10));
  CHECK(a.records == b.records);
  CHECK(a.records != c.records);
  // Noise is multiplicative around the clean value.
  double sum = 0.0;
  for (const auto& r : a.records) sum += std::log(r.loss / eval_suboptimal(reference_law(), r.model_size, r.tokens));
  CHECK(std::fabs(sum / static_cast<double>(a.size())) < 4.0 * 0.01 / std::sqrt(static_cast<double>(a.size())));
}

TEST_CASE("largest reference model at otr 20") {
  CurveSpec spec;
  spec.law = reference_law();
  spec.model_sizes = {7.03e9};
  spec.token_checkpoints = {{20.0 * 7.03e9}};
  const auto series = gen_curves(spec);
  REQUIRE(series.size() == 1);
  // Hand evaluation with the reference constants.
  CHECK(series.records[0].loss == doctest::Approx(1.9884809909116665).epsilon(1e-12));
}

TEST_CASE("reference model ladder") {
  const auto sizes = reference_model_sizes();
  CHECK(sizes.size() == 11);
  CHECK(sizes.front() == 20e6);
  CHECK(sizes.back() == 7030e6);
  CHECK(std::is_sorted(sizes.begin(), sizes.end()));
}

TEST_CASE("curve spec validation") {
  auto spec = reference_spec(0.0, 0);
  spec.token_checkpoints.pop_back();
  CHECK_THROWS_AS(gen_curves(spec), Error);
  spec = reference_spec(-0.1, 0);
  CHECK_THROWS_AS(gen_curves(spec), Error);
}

TEST_CASE("single blob labels are zero") {
  BlobSpec spec;
  spec.dim = 3;
  spec.blobs = {{25, {1.0, 2.0, 3.0}, 0.5}};
  const auto s = gen_blobs(spec);
  CHECK(s.embeddings.rows() == 25);
  CHECK(std::all_of(s.labels.begin(), s.labels.end(), [](std::size_t l) { return l == 0; }));
}

TEST_CASE("blob means sit within three standard errors") {
  BlobSpec spec;
  spec.dim = 4;
  spec.seed = 77;
  spec.blobs = {{400, {0.0, 0.0, 0.0, 0.0}, 1.0}, {900, {10.0, -5.0, 2.0, 7.0}, 2.5}};
  const auto s = gen_blobs(spec);
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& blob = spec.blobs[b];
    for (std::size_t j = 0; j < spec.dim; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < s.labels.size(); ++i) {
        if (s.labels[i] == b) mean += s.embeddings.row(i)[j];
      }
      mean /= static_cast<double>(blob.n_samples);
      CHECK(std::fabs(mean - blob.centroid[j]) < 3.0 * blob.spread / std::sqrt(static_cast<double>(blob.n_samples)));
    }
  }
}

TEST_CASE("kmeans recovers labels when separation dwarfs spread") {
  BlobSpec spec;
  spec.dim = 5;
  spec.seed = 3;
  spec.blobs = {{50, {0, 0, 0, 0, 0}, 1.0}, {70, {20, 0, 0, 0, 0}, 1.0}, {30, {0, 20, 0, 0, 0}, 1.0}};
  const auto s = gen_blobs(spec);
  const auto c = kmeans(s.embeddings, {3, 0, 100, 1});
  // Try all 3! label permutations; exactly one must match everywhere.
  std::vector<std::size_t> perm = {0, 1, 2};
  int matches = 0;
  do {
    bool all = true;
    for (std::size_t i = 0; i < s.labels.size(); ++i) all = all && perm[s.labels[i]] == c.assignment[i];
    matches += all ? 1 : 0;
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(matches == 1);
}

TEST_CASE("blob spec validation and json round-trip") {
  BlobSpec spec;
  spec.dim = 2;
  spec.seed = 4;
  spec.blobs = {{5, {0.0, 0.0}, 1.0}, {6, {1.0, 0.0}, 2.0}};
  const auto back = blob_spec_from_json(to_json(spec));
  CHECK(gen_blobs(back).embeddings.values() == gen_blobs(spec).embeddings.values());

  auto dup = spec;
  dup.blobs[1].centroid = {0.0, 0.0};
  CHECK_THROWS_AS(gen_blobs(dup), Error);
  auto flat = spec;
  flat.blobs[0].spread = 0.0;
  CHECK_THROWS_AS(gen_blobs(flat), Error);
  CHECK_THROWS_AS(blob_spec_from_json(nlohmann::json{{"dim", 2}}), Error);
}

TEST_CASE("curve spec json with otr checkpoints") {
  const auto j = nlohmann::json::parse(R"({
    "law": {"family": "chinchilla", "e_irreducible": 1.5, "lambda_n": 400, "alpha_n": 0.3,
            "lambda_d": 400, "alpha_d": 0.3},
    "model_sizes": [1e7, 1e8],
    "otr_checkpoints": [10, 20, 40],
    "seed": 3
  })");
  const auto spec = curve_spec_from_json(j);
  REQUIRE(spec.token_checkpoints.size() == 2);
  CHECK(spec.token_checkpoints[1] == std::vector<double>{1e9, 2e9, 4e9});
  const auto back = curve_spec_from_json(to_json(spec));
  CHECK(gen_curves(back).records == gen_curves(spec).records);
  CHECK_THROWS_AS(curve_spec_from_json(nlohmann::json{{"model_sizes", {1}}}), Error);
}

TEST_CASE("log_space endpoints") {
  const auto v = log_space(5.0, 1700.0, 30);
  CHECK(v.size() == 30);
  CHECK(v.front() == 5.0);
  CHECK(v.back() == 1700.0);
  for (std::size_t i = 2; i < v.size(); ++i) CHECK(v[i] / v[i - 1] == doctest::Approx(v[1] / v[0]).epsilon(1e-12));
}
