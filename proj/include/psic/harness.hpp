#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "psic/config.hpp"

namespace psic {

struct ResultRow {
  std::string experiment;
  std::string variant;
  std::uint64_t seed = 0;
  double snr_db = 0.0;
  std::string chan_type;
  double rate = 0.0;
  std::size_t n_elements = 0;
  double nmse_linear = 0.0;
  double nmse_db = 0.0;
  std::size_t trials = 0;

  bool operator==(const ResultRow&) const = default;
};

inline constexpr std::string_view kResultsHeader =
    "experiment,variant,seed,snr_db,chan_type,rate,n_elements,nmse_linear,nmse_db,trials";

// Comment lines start with '#'. Only the line beginning "# generated" carries
// wall-clock data; everything else is a function of the inputs.
std::string format_results_csv(const std::vector<ResultRow>& rows, const std::vector<std::string>& comments);
std::vector<ResultRow> parse_results_csv(std::string_view text);

// Comments: config hash, CR convention, Rician K, and a UTC timestamp.
std::vector<std::string> results_comments(const RunConfig& cfg);

// Empty rows are a usage error and leave no file behind.
void emit_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path,
                  const std::vector<std::string>& comments);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

std::string render_svg(const Plot& plot);

enum class ExperimentId { kCrossSnr, kVariableRate, kScalability, kAblationPrompt, kAblationDecoder };

std::string_view to_string(ExperimentId id);
ExperimentId parse_experiment_id(std::string_view s);

// One trained model family of an experiment and the grid it is scored on.
// cfg is complete apart from the seed, which the runner fills per replicate.
struct Arm {
  std::string name;     // unique within the experiment; names the checkpoints
  std::string variant;  // value of the variant column
  RunConfig cfg;
  std::vector<ChannelType> chans;
  std::vector<double> snrs;
  std::vector<double> rates;
};

struct ExperimentSpec {
  ExperimentId id = ExperimentId::kCrossSnr;
  std::vector<Arm> arms;
  std::vector<std::uint64_t> seeds;
  std::size_t trials = 100;
  std::filesystem::path out;
  bool train_if_missing = true;
  bool plots = true;
  std::ostream* progress = nullptr;  // one status line per model when set

  void validate() const;
};

// Arms, axes and seeds for `id` derived from cfg. Seeds are cfg.seed,
// cfg.seed + 1, ... (cfg.experiment.seeds of them).
ExperimentSpec make_experiment(ExperimentId id, const RunConfig& cfg, const std::filesystem::path& out);

// Checkpoint of arm `arm` at seed `seed` under dir, named after the arm
// name, seed and config hash so stale files are never reused.
std::filesystem::path arm_checkpoint_path(const std::filesystem::path& dir, const Arm& arm, std::uint64_t seed);

// Trains (or loads) every arm × seed model, then scores each grid cell on the
// held-out test sets. Test maps come from a stream independent of every
// training set; link draws are shared across arms at equal (seed, cell).
// Rows are ordered arm, seed, channel, SNR, rate.
std::vector<ResultRow> run_experiment(const ExperimentSpec& spec, const RunConfig& base);

// CSV at <out>/<id>.csv plus SVG line plots when spec.plots is set.
// Returns the files written.
std::vector<std::filesystem::path> write_experiment_outputs(const ExperimentSpec& spec,
                                                            const std::vector<ResultRow>& rows,
                                                            const RunConfig& base);

// Scores a stored model over both channel types and the SNR × rate grid of
// cfg.eval. Model, link and variant come from the checkpoint's own config;
// test maps and trial draws from cfg.seed.
std::vector<ResultRow> evaluate_checkpoint(const CheckpointData& ckpt, const RunConfig& cfg,
                                           const std::string& experiment = "eval");

// Held-out maps of one channel type for the map geometry in cfg, from a
// stream derived from (cfg.seed, "test").
std::vector<Sample> test_set(const RunConfig& cfg, ChannelType type);

}  // namespace psic
