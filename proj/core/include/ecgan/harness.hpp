#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecgan/config.hpp"
#include "ecgan/pnm.hpp"
#include "ecgan/trainer.hpp"

namespace ecgan {

enum class SweepAxis { percent, lambda, strategy };
SweepAxis parse_axis(std::string_view name);
std::string_view axis_name(SweepAxis axis);

/// One line of metrics.csv.
struct MetricsRow {
  std::string run_id;
  Variant variant = Variant::ecgan;
  double percent = 100;
  double lambda = 0;
  std::uint64_t seed = 0;
  EpochMetrics m;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

/// One training cell of a train or sweep invocation.
struct Cell {
  Variant variant = Variant::ecgan;
  double percent = 100;
  double lambda = 0.1;
  std::uint64_t seed = 0;
  bool augment = false;
  bool weight_decay = true;
  std::string strategy;  // strategy axis label, empty otherwise

  std::string run_id() const;
};

struct CellResult {
  Cell cell;
  std::vector<EpochMetrics> history;
  double final_test_acc() const;
};

/// Trains one cell on `data` (train set subsampled by the cell's percent).
/// Metrics rows are appended to `metrics` and flushed after each epoch;
/// checkpoints go under `ckpt_dir` when non-empty.
CellResult run_cell(const ExperimentConfig& cfg, const Cell& cell, const LoadedData& data, std::ostream* metrics,
                    const std::filesystem::path& ckpt_dir);

/// Cells of a sweep, in output order. Baseline cells do not depend on lambda.
std::vector<Cell> sweep_cells(const ExperimentConfig& cfg, SweepAxis axis);

struct SummaryRow {
  std::string axis_value;
  Variant variant = Variant::ecgan;
  int n_seeds = 0;
  double mean = 0;
  double stddev = 0;  // sample stddev, 0 for one seed
};

/// Groups final test accuracies by (axis value, variant) in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<CellResult>& results, SweepAxis axis);
std::string axis_value(const Cell& cell, SweepAxis axis);

/// Tiles [N,C,H,W] images in [-1,1] into a ceil(sqrt(N))-column grid of bytes.
PnmImage tile_grid(const Tensor& images);

/// Samples n images from a generator in eval mode. `cls` requires a
/// conditional generator; a conditional generator without `cls` cycles classes.
Tensor sample_generator(Network& generator, int n, std::optional<int> cls, Rng& rng);

/// "synth:k=v,...", "idx:images=P,labels=P", "dir:root=P,csv=P".
/// Synth keys: k, n, size, channels, noise, seed. Shapes default to the
/// checkpoint's image size and channels.
Dataset load_eval_data(std::string_view args, const NetworkSpec& spec);

// Commands. Each returns a process exit code and reports errors as one line on `err`.
int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);
int cmd_sweep(const std::string& config_path, std::string_view axis, std::optional<std::uint64_t> seed,
              std::ostream& out, std::ostream& err);
int cmd_generate(const std::string& checkpoint, int n, std::optional<int> cls, const std::string& out_path,
                 std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);
int cmd_eval(const std::string& checkpoint, std::string_view data_args, std::ostream& out, std::ostream& err);

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitData = 4;
inline constexpr int kExitContract = 5;
inline constexpr int kExitDiverged = 6;
inline constexpr int kExitOther = 1;

}  // namespace ecgan
