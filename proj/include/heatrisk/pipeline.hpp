#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"
#include "heatrisk/ingest.hpp"
#include "heatrisk/synthetic.hpp"

namespace heatrisk::pipeline {

namespace fs = std::filesystem;

struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  fs::path output_dir = "heatrisk-out";
  int workers = 1;

  struct Inputs {
    fs::path stations, municipalities, reanalysis, mortality, holidays;
    bool reanalysis_pre_aggregated = true;
  } inputs;

  struct Study {
    int first_year = 2010;
    int last_year = 2011;
    SeasonWindow season = SeasonWindow::may_to_september();
    SeasonWindow summer = SeasonWindow::june_to_august();
  } study;

  /// Projection origin; the centre of the municipality bounding box when unset.
  std::optional<double> lon0, lat0;

  struct Selection {
    int gqrm_max_consecutive_missing = 7;
    double ggpm_max_missing_fraction = 0.20;
  } selection;

  struct Gqrm {
    std::vector<double> taus = {0.5, 0.9, 0.95};
    int burn_in = 5000;
    int draws = 5000;
    int thin = 1;
  } gqrm;

  struct Surface {
    double lambda = 0.001;
    int n_grid = 1000;
  } surface;

  struct Ggpm {
    double nu = 1.0;
    int max_iterations = 500;
  } ggpm;

  struct Heatwave {
    std::vector<double> quantiles = {0.90, 0.925, 0.95};
    std::optional<double> fixed_celsius = 35.0;
    std::vector<std::string> presets = {"base", "1daylag", "2dayslag"};
  } heatwave;

  struct Cco {
    int min_age = 18;
    int window = 3;
    int heatwave_window = 3;
  } cco;

  struct Epi {
    std::vector<std::string> methods = {"gqrm-0.50", "ggpm", "reanalysis"};
    int n_bins = 100;
    double pc_u = 0.1;
    double pc_alpha = 0.01;
    int tau_points = 25;
    bool stratified = true;
    bool negative_control = true;
  } epi;

  static PipelineConfig defaults();
  /// Relative input paths resolve against `base_dir`. Unknown keys are errors.
  static PipelineConfig from_json(const std::string& text, const fs::path& base_dir = {});
  std::string to_json() const;
  /// Throws "invalid_config"; with `check_inputs` also "missing_input".
  void validate(bool check_inputs) const;
  /// FNV-1a of the canonical JSON form.
  std::string hash() const;
  std::vector<std::string> surface_methods() const;
};

/// Line-delimited JSON log records.
class Logger {
 public:
  explicit Logger(std::ostream& os) : os_(os) {}
  void log(std::string_view level, std::string_view stage, std::string_view message);
  void info(std::string_view stage, std::string_view message) { log("info", stage, message); }
  void warn(std::string_view stage, std::string_view message) { log("warn", stage, message); }

 private:
  std::ostream& os_;
  std::mutex mu_;
};

/// Runs tasks on at most `workers` threads. Every task runs; the first
/// failure in task order is rethrown.
void run_parallel(std::vector<std::function<void()>> tasks, int workers);

struct RunOptions {
  std::optional<std::string> method;  // gqrm | ggpm | reanalysis
  std::optional<double> tau;
  std::optional<int> year;
};

std::vector<std::string> subcommands();

/// Runs one stage (or "all"). Artifacts go under config.output_dir.
void run(const std::string& subcommand, const PipelineConfig& config, const RunOptions& options,
         Logger& log);

/// Writes a synthetic bundle to `<out>/input` and a config pointing at it to
/// `<out>/config.json`; returns that config.
PipelineConfig simulate(const synthetic::Scenario& scenario, std::uint64_t seed, const fs::path& out,
                        Logger& log);

struct QQPoint {
  std::string station;
  std::string cell;
  double prob = 0.0;
  double station_q = 0.0;
  double cell_q = 0.0;
};

/// Pairs each station with the nearest cell centre and matches empirical
/// quantiles at 1%..99% over days observed by both.
std::vector<QQPoint> diagnose_qq(std::span<const StationSeries> stations, const StudyPeriod& period,
                                 const ingest::ReanalysisGrid& grid);

}  // namespace heatrisk::pipeline
