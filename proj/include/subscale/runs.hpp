#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace subscale {

// One logged checkpoint of a training run.
struct TrainingRun {
  std::string run_id;
  double model_size = 0.0;  // non-embedding parameters N
  double tokens = 0.0;      // cumulative tokens D
  double loss = 0.0;        // nats
  std::optional<std::int64_t> step;
  std::optional<double> batch_size;     // sequences per batch
  std::optional<double> learning_rate;
  std::string dataset_tag;

  bool operator==(const TrainingRun&) const = default;
};

struct SeriesMetadata {
  std::string source;
  std::string ingested_at;
  std::string ground_truth;  // law JSON when the series is synthetic

  bool operator==(const SeriesMetadata&) const = default;
};

struct RunSeries {
  std::vector<TrainingRun> records;
  SeriesMetadata metadata;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  // Distinct run ids in order of first appearance.
  std::vector<std::string> run_ids() const;

  // Indices of the records belonging to `run_id`, in series order.
  std::vector<std::size_t> indices_of(const std::string& run_id) const;
};

enum class RunFormat { Csv, Jsonl };

RunFormat format_from_path(const std::filesystem::path& path);

// Throws Error{MissingColumn | NonPositiveValue | NonMonotoneTokens | Format | Io};
// row numbers in messages are 1-based data rows (header excluded).
RunSeries ingest(const std::filesystem::path& path, RunFormat format);
RunSeries ingest(const std::filesystem::path& path);
RunSeries parse_csv(std::istream& in, const std::string& source = "<stream>");
RunSeries parse_jsonl(std::istream& in, const std::string& source = "<stream>");

void write_csv(std::ostream& out, const RunSeries& series);
void write_jsonl(std::ostream& out, const RunSeries& series);
void save(const std::filesystem::path& path, const RunSeries& series, RunFormat format);

// Checks every record invariant and per-run token monotonicity.
void validate(const RunSeries& series);

double compute_flops(double model_size, double tokens);
double otr(double model_size, double tokens);

struct SmoothingOptions {
  std::size_t window = 10;
  std::optional<double> sigma;  // defaults to window / 4
};

// Centered truncated Gaussian kernel over `window` records per run, weights
// renormalized where the window runs off either end of the run.
RunSeries gaussian_smooth(const RunSeries& series, const SmoothingOptions& options = {});

// Kernel offsets and (unnormalized) weights used by gaussian_smooth.
std::vector<std::pair<int, double>> smoothing_kernel(const SmoothingOptions& options);

struct FitHoldoutSplit {
  RunSeries fit;
  RunSeries holdout;
};

// Per run: the first ceil(fraction * len) records by token order go to `fit`.
FitHoldoutSplit split_fit_holdout(const RunSeries& series, double fraction = 0.25);

}  // namespace subscale
