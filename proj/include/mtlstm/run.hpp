#pragma once

// Run configuration and the end-to-end commands behind the command-line tool.
//
// Config files are plain key-value text:
//
//   # comment
//   key = value
//   periods = 1, 5, 25
//
// One assignment per line, keys from RunConfig::fields(), lists comma
// separated. Unknown keys and malformed values are errors. A run manifest
// (JSON, written by every command) is also accepted as a config file; its
// "config" object is read back.

#include "mtlstm/eval.hpp"
#include "mtlstm/usar_sim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtlstm {

class RunConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Missing input file or directory.
class PathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::int64_t period_ms = 100;
  Index input_len = 1200;
  Index step = 300;
  Index horizon = 300;
  Index hidden = 64;
  std::vector<std::int64_t> periods = {1, 10, 100};
  std::vector<Index> sizes;  // empty: split `hidden` evenly over the periods
  Connectivity connectivity = Connectivity::Full;
  std::string model = "mt-lstm";  // which predictor train-predictor fits
  int predictor_epochs = 50;
  Index predictor_batch = 64;
  double predictor_lr = 0.001;
  int mapper_epochs = 20;
  Index mapper_batch = 32;
  double mapper_lr = 0.001;
  Index mapper_hidden = 64;
  double clip_norm = 5.0;
  bool literal_refeed = false;
  int n_teams = 40;
  std::uint64_t base_seed = 0;
  int folds = 10;
  SplitMode split = SplitMode::Window;
  int threads = 1;
  std::string out = "run";

  /// Laptop-sized preset: 1 s sampling, 120-step input, 30-step horizon.
  static RunConfig desk_scale();

  struct Field {
    std::string key;
    std::string help;
    bool hashed = true;  // false for settings that cannot change any artifact
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
  };
  static const std::vector<Field>& fields();

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Every violated constraint, one message each.
  std::vector<std::string> violations() const;
  void validate() const;

  /// Canonical `key = value` text of the hashed fields, in declaration order.
  std::string canonical() const;
  /// FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;

  GroupSchedule schedule_for(const std::string& model_name) const;
  std::int64_t downsample_factor() const { return period_ms / 100; }
  CvConfig cv_config() const;
};

/// Applies `key = value` lines (or a manifest's "config" object) on top of `cfg`.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Aligned listing of every field with its default, for --help.
std::string describe_fields();

std::string fnv1a_hex(const std::string& bytes);

std::string encoding_json(const EncodingSpec& spec);
EncodingSpec encoding_from_json(const std::string& text);

struct CommandOptions {
  std::filesystem::path traces;     // input trace directory; default <out>/traces
  std::filesystem::path predictor;  // default <out>/predictor.ckpt
  std::filesystem::path mapper;     // default <out>/mapper.ckpt
  std::filesystem::path encoding;   // default <out>/encoding.json
  std::filesystem::path report;     // default <out>/report.json
  bool stats = false;               // gen: print the label histogram
  bool vectors = false;             // rollout: include predicted vectors
  bool csv = false;                 // report: print CSV
  bool json = false;                // machine-readable stdout
  std::function<void(const std::string&)> log;  // progress lines
};

/// Runs one command and writes `<out>/manifest-<command>.json`. Human-readable
/// results go to `out`.
void run_command(const std::string& command, const RunConfig& cfg, const CommandOptions& opts,
                 std::ostream& out);

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {
      "gen", "label", "train-predictor", "train-mapper", "rollout", "eval", "report"};
  return names;
}

/// Trace files (*.jsonl) of a directory in name order.
std::vector<FeatureSeries> load_traces(const std::filesystem::path& dir, std::int64_t period_ms);

void write_histogram_text(std::ostream& out, const LabelHistogram& h);
void write_histogram_csv(std::ostream& out, const LabelHistogram& h);

}  // namespace mtlstm
