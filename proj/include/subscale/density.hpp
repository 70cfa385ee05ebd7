#pragma once

// Cluster-level and dataset-level sample density over embedding sets.
//
// For a cluster with N_i members in R^n and mean member-to-centroid distance
// r_i, density is samples per n-ball volume:
//   ln rho_i = ln N_i + lgamma(n/2 + 1) - (n/2) ln pi - n ln r_i.
// The dataset uses a weighted radius R = (1/K) sum_i |c - c_i| / ln(rho_i + 1)
// with c the mean centroid, and ln rho = ln N + lgamma(n/2 + 1) - (n/2) ln pi - n ln R.
// Everything is computed in log space; raw densities overflow for n above ~170.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace subscale {

class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  // `values` is row-major, rows * dim entries. Empty ids become "0", "1", ...
  EmbeddingSet(std::size_t dim, std::vector<double> values, std::vector<std::string> ids = {});

  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return dim_ ? values_.size() / dim_ : 0; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& values() const { return values_; }

  EmbeddingSet scaled(double s) const;
  EmbeddingSet unit_normalized() const;
  EmbeddingSet subset(std::span<const std::size_t> rows) const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
  std::vector<std::string> ids_;
};

struct Clustering {
  std::size_t k = 0;
  std::vector<std::size_t> assignment;        // row -> cluster
  std::vector<std::vector<double>> centroids;  // k x dim
  std::vector<double> grand_centroid;          // mean of centroids
  std::size_t iterations = 0;

  std::vector<std::size_t> members(std::size_t cluster) const;
};

struct ClusterDensity {
  std::size_t cluster_id = 0;
  std::size_t n_samples = 0;
  double radius = 0.0;
  double log_density = 0.0;
  bool radius_floored = false;
};

struct DatasetDensityReport {
  double weighted_radius = 0.0;
  double log_density = 0.0;
  double density = 0.0;  // exp(log_density); +inf when that overflows
  bool density_overflow = false;
  double normalized_density = 0.0;  // rho^(1/n)
  std::vector<ClusterDensity> per_cluster;
  std::size_t k = 0;
  std::size_t n = 0;  // dimension
  std::size_t n_total = 0;
};

struct DensityOptions {
  double radius_floor = 1e-12;
};

struct KMeansOptions {
  std::size_t k = 1;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  unsigned threads = 1;
};

// k-means++ seeding then Lloyd iterations; empty clusters are reseeded with the
// member farthest from its centroid. Deterministic for a fixed seed.
Clustering kmeans(const EmbeddingSet& embeddings, const KMeansOptions& options);

// ln of the n-ball volume constant: (n/2) ln pi - lgamma(n/2 + 1).
double log_unit_ball_volume(std::size_t dim);

// ln(count / (V_n * radius^n)).
double log_ball_density(double count, std::size_t dim, double radius);

ClusterDensity cluster_density(const EmbeddingSet& embeddings, const Clustering& clustering, std::size_t cluster_id,
                               const DensityOptions& options = {});

// ln(rho + 1) computed from ln(rho), floored at 1e-12.
double log1p_density(double log_density);

double dataset_radius(const Clustering& clustering, std::span<const ClusterDensity> per_cluster);

DatasetDensityReport dataset_density(const EmbeddingSet& embeddings, const Clustering& clustering,
                                     const DensityOptions& options = {});

struct SelectionTarget {
  std::optional<double> fraction_kept;
  std::optional<double> log_density;

  static SelectionTarget keep_fraction(double f) { return {f, std::nullopt}; }
  static SelectionTarget max_log_density(double v) { return {std::nullopt, v}; }
};

struct SelectionResult {
  std::vector<std::size_t> retained_rows;  // ascending
  std::vector<std::size_t> removed_rows;   // in removal order
  std::vector<std::string> retained_ids;
  double log_density_before = 0.0;
  double log_density_after = 0.0;
};

// Greedy pruning: repeatedly drop, from the cluster with the largest ln rho_i,
// the remaining member closest to that cluster's centroid (ties: lowest row).
// Centroids stay fixed; a cluster's last member is never removed.
SelectionResult select_low_density(const EmbeddingSet& embeddings, const Clustering& clustering,
                                   const SelectionTarget& target, const DensityOptions& options = {});

// Clustering restricted to `rows` (ascending) with centroids kept as they were.
Clustering restrict_clustering(const Clustering& clustering, std::span<const std::size_t> rows);

// EMB1 binary: magic "EMB1", dim and rows as u64 little-endian, then rows*dim
// float32 little-endian, row-major. CSV: id,v0,v1,...
EmbeddingSet read_embeddings(const std::filesystem::path& path);
EmbeddingSet read_emb1(std::istream& in);
EmbeddingSet read_embedding_csv(std::istream& in);
void write_emb1(std::ostream& out, const EmbeddingSet& embeddings);
void write_embedding_csv(std::ostream& out, const EmbeddingSet& embeddings);
void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& embeddings);

nlohmann::json to_json(const DatasetDensityReport& report);
nlohmann::json to_json(const SelectionResult& selection);

}  // namespace subscale
