#include "subscale/density.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "subscale/error.hpp"
#include "subscale/rng.hpp"
#include "text.hpp"

namespace subscale {

namespace {

using json = nlohmann::json;

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

double distance(std::span<const double> a, std::span<const double> b) { return std::sqrt(squared_distance(a, b)); }

std::vector<double> mean_of(const std::vector<std::vector<double>>& vs, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  for (const auto& v : vs) {
    for (std::size_t j = 0; j < dim; ++j) m[j] += v[j];
  }
  for (auto& x : m) x /= static_cast<double>(vs.size());
  return m;
}

// Nearest centroid per row, ties to the lower cluster index.
void assign_rows(const EmbeddingSet& e, const std::vector<std::vector<double>>& centroids,
                 std::vector<std::size_t>& assignment, unsigned threads) {
  const std::size_t n = e.rows();
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(e.row(i), centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assignment[i] = best;
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n / 256 + 1)));
  if (threads == 1) {
    work(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t end = std::min(n, b + chunk);
    if (b < end) pool.emplace_back(work, b, end);
  }
  for (auto& th : pool) th.join();
}

std::vector<std::vector<double>> member_means(const EmbeddingSet& e, const std::vector<std::size_t>& assignment,
                                              std::size_t k, std::vector<std::size_t>& counts) {
  std::vector<std::vector<double>> sums(k, std::vector<double>(e.dim(), 0.0));
  counts.assign(k, 0);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto row = e.row(i);
    auto& s = sums[assignment[i]];
    for (std::size_t j = 0; j < e.dim(); ++j) s[j] += row[j];
    ++counts[assignment[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (auto& x : sums[c]) x /= static_cast<double>(counts[c]);
  }
  return sums;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw Error(ErrorCode::Format, "truncated EMB1 header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

}  // namespace

EmbeddingSet::EmbeddingSet(std::size_t dim, std::vector<double> values, std::vector<std::string> ids)
    : dim_(dim), values_(std::move(values)), ids_(std::move(ids)) {
  if (dim_ == 0) throw Error(ErrorCode::Format, "embedding dimension must be >= 1");
  if (values_.empty() || values_.size() % dim_ != 0) {
    throw Error(ErrorCode::Format, "embedding values must fill whole rows of dimension " + std::to_string(dim_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(ErrorCode::Format, "row " + std::to_string(i / dim_) + " has a non-finite component");
    }
  }
  if (ids_.empty()) {
    for (std::size_t i = 0; i < rows(); ++i) ids_.push_back(std::to_string(i));
  } else if (ids_.size() != rows()) {
    throw Error(ErrorCode::Format, "id count does not match row count");
  }
}

EmbeddingSet EmbeddingSet::scaled(double s) const {
  auto v = values_;
  for (auto& x : v) x *= s;
  return EmbeddingSet(dim_, std::move(v), ids_);
}

EmbeddingSet EmbeddingSet::unit_normalized() const {
  auto v = values_;
  for (std::size_t i = 0; i < rows(); ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) norm += v[i * dim_ + j] * v[i * dim_ + j];
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (std::size_t j = 0; j < dim_; ++j) v[i * dim_ + j] /= norm;
    }
  }
  return EmbeddingSet(dim_, std::move(v), ids_);
}

EmbeddingSet EmbeddingSet::subset(std::span<const std::size_t> rows_to_keep) const {
  std::vector<double> v;
  std::vector<std::string> ids;
  v.reserve(rows_to_keep.size() * dim_);
  for (auto r : rows_to_keep) {
    auto src = row(r);
    v.insert(v.end(), src.begin(), src.end());
    ids.push_back(ids_[r]);
  }
  return EmbeddingSet(dim_, std::move(v), std::move(ids));
}

std::vector<std::size_t> Clustering::members(std::size_t cluster) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == cluster) out.push_back(i);
  }
  return out;
}

Clustering kmeans(const EmbeddingSet& e, const KMeansOptions& options) {
  const std::size_t n = e.rows();
  const std::size_t k = options.k;
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (k > n) throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " samples");

  Rng rng(options.seed);
  std::vector<std::vector<double>> centroids;
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  auto take = [&](std::size_t idx) {
    chosen[idx] = true;
    auto row = e.row(idx);
    centroids.emplace_back(row.begin(), row.end());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(e.row(i), centroids.back()));
  };
  take(static_cast<std::size_t>(rng.below(n)));
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == n) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    take(pick);
  }

  Clustering cl;
  cl.k = k;
  cl.assignment.assign(n, 0);
  std::vector<std::size_t> previous;
  std::vector<std::size_t> counts;
  for (std::size_t iter = 0; iter < std::max<std::size_t>(options.max_iters, 1); ++iter) {
    assign_rows(e, centroids, cl.assignment, options.threads);
    cl.iterations = iter + 1;
    // Reseed empty clusters from the farthest member of a cluster that can spare one.
    member_means(e, cl.assignment, k, counts);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[cl.assignment[i]] < 2) continue;
        const double d = squared_distance(e.row(i), centroids[cl.assignment[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[cl.assignment[far]];
      cl.assignment[far] = c;
      counts[c] = 1;
    }
    centroids = member_means(e, cl.assignment, k, counts);
    if (cl.assignment == previous) break;
    previous = cl.assignment;
  }
  cl.centroids = std::move(centroids);
  cl.grand_centroid = mean_of(cl.centroids, e.dim());
  return cl;
}

double log_unit_ball_volume(std::size_t dim) {
  const double half = static_cast<double>(dim) / 2.0;
  return half * std::log(std::numbers::pi) - std::lgamma(half + 1.0);
}

double log_ball_density(double count, std::size_t dim, double radius) {
  return std::log(count) - log_unit_ball_volume(dim) - static_cast<double>(dim) * std::log(radius);
}

ClusterDensity cluster_density(const EmbeddingSet& e, const Clustering& cl, std::size_t cluster_id,
                               const DensityOptions& options) {
  if (cluster_id >= cl.k) throw Error(ErrorCode::InvalidArgument, "cluster id out of range");
  ClusterDensity cd;
  cd.cluster_id = cluster_id;
  double sum = 0.0;
  for (std::size_t i = 0; i < cl.assignment.size(); ++i) {
    if (cl.assignment[i] != cluster_id) continue;
    sum += distance(e.row(i), cl.centroids[cluster_id]);
    ++cd.n_samples;
  }
  if (cd.n_samples == 0) throw Error(ErrorCode::InvalidArgument, "cluster " + std::to_string(cluster_id) + " is empty");
  cd.radius = sum / static_cast<double>(cd.n_samples);
  if (cd.radius < options.radius_floor) {
    cd.radius = options.radius_floor;
    cd.radius_floored = true;
  }
  cd.log_density = log_ball_density(static_cast<double>(cd.n_samples), e.dim(), cd.radius);
  return cd;
}

double log1p_density(double log_density) {
  // ln(1 + e^x) without forming e^x when it would overflow.
  const double v = log_density > 0.0 ? log_density + std::log1p(std::exp(-log_density))
                                     : std::log1p(std::exp(log_density));
  return std::max(v, 1e-12);
}

double dataset_radius(const Clustering& cl, std::span<const ClusterDensity> per_cluster) {
  if (per_cluster.size() != cl.k) throw Error(ErrorCode::InvalidArgument, "per-cluster densities must cover all clusters");
  double sum = 0.0;
  for (const auto& cd : per_cluster) {
    sum += distance(cl.grand_centroid, cl.centroids[cd.cluster_id]) / log1p_density(cd.log_density);
  }
  const double r = sum / static_cast<double>(cl.k);
  if (!(r > 0.0)) throw Error(ErrorCode::DegenerateGeometry, "all centroids coincide; weighted radius is 0");
  return r;
}

DatasetDensityReport dataset_density(const EmbeddingSet& e, const Clustering& cl, const DensityOptions& options) {
  DatasetDensityReport rep;
  rep.k = cl.k;
  rep.n = e.dim();
  rep.n_total = e.rows();
  for (std::size_t c = 0; c < cl.k; ++c) rep.per_cluster.push_back(cluster_density(e, cl, c, options));
  rep.weighted_radius = dataset_radius(cl, rep.per_cluster);
  rep.log_density = log_ball_density(static_cast<double>(rep.n_total), rep.n, rep.weighted_radius);
  rep.density = std::exp(rep.log_density);
  rep.density_overflow = std::isinf(rep.density);
  rep.normalized_density = std::exp(rep.log_density / static_cast<double>(rep.n));
  return rep;
}

Clustering restrict_clustering(const Clustering& cl, std::span<const std::size_t> rows) {
  Clustering out = cl;
  out.assignment.clear();
  for (auto r : rows) out.assignment.push_back(cl.assignment[r]);
  return out;
}

SelectionResult select_low_density(const EmbeddingSet& e, const Clustering& cl, const SelectionTarget& target,
                                   const DensityOptions& options) {
  if (target.fraction_kept.has_value() == target.log_density.has_value()) {
    throw Error(ErrorCode::InvalidArgument, "selection needs exactly one of fraction kept or target log-density");
  }
  if (target.fraction_kept && !(*target.fraction_kept > 0.0 && *target.fraction_kept <= 1.0)) {
    throw Error(ErrorCode::TargetUnreachable, "fraction kept must lie in (0, 1]");
  }
  const std::size_t n = e.rows();
  const std::size_t k = cl.k;
  const auto before = dataset_density(e, cl, options);

  struct State {
    std::vector<std::pair<double, std::size_t>> order;  // (distance, row) ascending
    std::size_t next = 0;
    double sum = 0.0;
    double weight = 0.0;  // |c - c_i|
  };
  std::vector<State> states(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = distance(e.row(i), cl.centroids[cl.assignment[i]]);
    states[cl.assignment[i]].order.emplace_back(d, i);
  }
  for (std::size_t c = 0; c < k; ++c) {
    auto& s = states[c];
    std::sort(s.order.begin(), s.order.end());
    for (const auto& [d, _] : s.order) s.sum += d;
    s.weight = distance(cl.grand_centroid, cl.centroids[c]);
  }
  auto remaining = [](const State& s) { return s.order.size() - s.next; };
  auto log_rho = [&](const State& s) {
    const double count = static_cast<double>(remaining(s));
    const double r = std::max(s.sum / count, options.radius_floor);
    return log_ball_density(count, e.dim(), r);
  };
  std::size_t kept = n;
  auto current_log_density = [&] {
    double sum = 0.0;
    for (const auto& s : states) sum += s.weight / log1p_density(log_rho(s));
    return log_ball_density(static_cast<double>(kept), e.dim(), sum / static_cast<double>(k));
  };

  std::size_t keep_target = 0;
  if (target.fraction_kept) {
    keep_target = static_cast<std::size_t>(std::ceil(*target.fraction_kept * static_cast<double>(n) - 1e-9));
    keep_target = std::max<std::size_t>(keep_target, 1);
    if (keep_target < k) {
      throw Error(ErrorCode::TargetUnreachable, "keeping " + std::to_string(keep_target) + " samples would empty a cluster");
    }
  }
  auto done = [&] {
    if (target.fraction_kept) return kept <= keep_target;
    return current_log_density() <= *target.log_density;
  };

  SelectionResult res;
  res.log_density_before = before.log_density;
  while (!done()) {
    std::size_t densest = k;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (remaining(states[c]) < 2) continue;
      const double v = log_rho(states[c]);
      if (densest == k || v > best) {
        best = v;
        densest = c;
      }
    }
    if (densest == k) throw Error(ErrorCode::TargetUnreachable, "every cluster is down to a single member");
    auto& s = states[densest];
    const auto [d, row] = s.order[s.next++];
    s.sum -= d;
    --kept;
    res.removed_rows.push_back(row);
  }

  std::vector<bool> removed(n, false);
  for (auto r : res.removed_rows) removed[r] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    res.retained_rows.push_back(i);
    res.retained_ids.push_back(e.ids()[i]);
  }
  if (res.removed_rows.empty()) {
    res.log_density_after = before.log_density;
  } else {
    const auto sub = e.subset(res.retained_rows);
    res.log_density_after = dataset_density(sub, restrict_clustering(cl, res.retained_rows), options).log_density;
  }
  return res;
}

EmbeddingSet read_emb1(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "EMB1", 4) != 0) throw Error(ErrorCode::Format, "missing EMB1 magic");
  const std::uint64_t dim = read_u64_le(in);
  const std::uint64_t rows = read_u64_le(in);
  if (dim == 0 || rows == 0) throw Error(ErrorCode::Format, "EMB1 header declares an empty set");
  std::vector<double> values;
  values.reserve(dim * rows);
  unsigned char buf[4];
  for (std::uint64_t i = 0; i < dim * rows; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf), 4)) {
      throw Error(ErrorCode::Format, "EMB1 payload truncated at row " + std::to_string(i / dim));
    }
    const std::uint32_t bits = static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
                               (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
    values.push_back(static_cast<double>(std::bit_cast<float>(bits)));
  }
  return EmbeddingSet(dim, std::move(values));
}

EmbeddingSet read_embedding_csv(std::istream& in) {
  std::string line;
  std::vector<double> values;
  std::vector<std::string> ids;
  std::size_t dim = 0;
  std::size_t row = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (first) {
      first = false;
      if (detail::trim(fields[0]) == "id") continue;
    }
    ++row;
    if (fields.size() < 2) throw Error(ErrorCode::Format, "row " + std::to_string(row) + ": expected id and components");
    if (dim == 0) dim = fields.size() - 1;
    if (fields.size() - 1 != dim) {
      throw Error(ErrorCode::Format, "row " + std::to_string(row) + ": expected " + std::to_string(dim) + " components");
    }
    ids.emplace_back(detail::trim(fields[0]));
    for (std::size_t j = 1; j < fields.size(); ++j) {
      auto v = detail::parse_double(fields[j]);
      if (!v || !std::isfinite(*v)) throw Error(ErrorCode::Format, "row " + std::to_string(row) + ": bad component");
      values.push_back(*v);
    }
  }
  if (values.empty()) throw Error(ErrorCode::Format, "embedding CSV has no rows");
  return EmbeddingSet(dim, std::move(values), std::move(ids));
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  char magic[4] = {};
  in.read(magic, 4);
  in.clear();
  in.seekg(0);
  if (std::memcmp(magic, "EMB1", 4) == 0) return read_emb1(in);
  return read_embedding_csv(in);
}

void write_emb1(std::ostream& out, const EmbeddingSet& e) {
  out.write("EMB1", 4);
  write_u64_le(out, e.dim());
  write_u64_le(out, e.rows());
  for (double v : e.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const char buf[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(buf, 4);
  }
}

void write_embedding_csv(std::ostream& out, const EmbeddingSet& e) {
  out << "id";
  for (std::size_t j = 0; j < e.dim(); ++j) out << ",v" << j;
  out << '\n';
  for (std::size_t i = 0; i < e.rows(); ++i) {
    out << detail::csv_escape(e.ids()[i]);
    for (double v : e.row(i)) out << ',' << detail::format_number(v);
    out << '\n';
  }
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& e) {
  const bool csv = path.extension() == ".csv";
  std::ofstream out(path, csv ? std::ios::out : std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  if (csv) write_embedding_csv(out, e);
  else write_emb1(out, e);
}

json to_json(const DatasetDensityReport& r) {
  json j = json::object();
  j["k"] = r.k;
  j["n"] = r.n;
  j["n_total"] = r.n_total;
  j["weighted_radius"] = r.weighted_radius;
  j["log_density"] = r.log_density;
  j["density"] = r.density_overflow ? json(nullptr) : json(r.density);
  j["density_overflow"] = r.density_overflow;
  j["normalized_density"] = r.normalized_density;
  json clusters = json::array();
  for (const auto& c : r.per_cluster) {
    clusters.push_back({{"cluster_id", c.cluster_id},
                        {"n_samples", c.n_samples},
                        {"radius", c.radius},
                        {"log_density", c.log_density},
                        {"radius_floored", c.radius_floored}});
  }
  j["per_cluster"] = clusters;
  return j;
}

json to_json(const SelectionResult& s) {
  json j = json::object();
  j["n_retained"] = s.retained_rows.size();
  j["n_removed"] = s.removed_rows.size();
  j["log_density_before"] = s.log_density_before;
  j["log_density_after"] = s.log_density_after;
  j["retained_ids"] = s.retained_ids;
  return j;
}

}  // namespace subscale
