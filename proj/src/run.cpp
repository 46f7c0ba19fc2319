#include "mtlstm/run.hpp"

#include "mtlstm/checkpoint.hpp"
#include "mtlstm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mtlstm {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw RunConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw RunConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw RunConfigError(key + ": expected true or false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  const auto t = trim(text);
  if (t.empty() || t == "auto") return out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<T>(key, item));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  if (v.empty()) return "auto";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename M>
RunConfig::Field int_field(std::string key, std::string help, M RunConfig::*member, bool hashed = true) {
  return {std::move(key), std::move(help), hashed,
          [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_integer<M>(key, v); }};
}

RunConfig::Field double_field(std::string key, std::string help, double RunConfig::*member) {
  return {std::move(key), std::move(help), true,
          [member](const RunConfig& c) { return format_double(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_double(key, v); }};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig RunConfig::desk_scale() {
  RunConfig c;
  c.period_ms = 1000;
  c.input_len = 120;
  c.step = 30;
  c.horizon = 30;
  c.hidden = 32;
  c.periods = {1, 5, 25};
  c.predictor_epochs = 10;
  c.n_teams = 40;
  c.out = "run-desk";
  return c;
}

const std::vector<RunConfig::Field>& RunConfig::fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(int_field("period_ms", "sampling period of the traces in ms (multiple of 100)", &RunConfig::period_ms));
    f.push_back(int_field("input_len", "observed steps per window", &RunConfig::input_len));
    f.push_back(int_field("step", "stride between window starts", &RunConfig::step));
    f.push_back(int_field("horizon", "predicted steps per window", &RunConfig::horizon));
    f.push_back(int_field("hidden", "predictor hidden size", &RunConfig::hidden));
    f.push_back({"periods", "clock period of each hidden group, comma separated", true,
                 [](const RunConfig& c) { return format_list(c.periods); },
                 [](RunConfig& c, const std::string& v) { c.periods = parse_list<std::int64_t>("periods", v); }});
    f.push_back({"sizes", "hidden units per group; auto splits `hidden` evenly", true,
                 [](const RunConfig& c) { return format_list(c.sizes); },
                 [](RunConfig& c, const std::string& v) { c.sizes = parse_list<Index>("sizes", v); }});
    f.push_back({"connectivity", "full or clockwork", true,
                 [](const RunConfig& c) { return std::string(to_string(c.connectivity)); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.connectivity = connectivity_from_string(trim(v));
                   } catch (const std::exception&) {
                     throw RunConfigError("connectivity: expected full or clockwork, got '" + v + "'");
                   }
                 }});
    f.push_back({"model", "predictor fit by train-predictor: lstm or mt-lstm", true,
                 [](const RunConfig& c) { return c.model; },
                 [](RunConfig& c, const std::string& v) { c.model = trim(v); }});
    f.push_back(int_field("predictor_epochs", "predictor training epochs", &RunConfig::predictor_epochs));
    f.push_back(int_field("predictor_batch", "predictor minibatch size", &RunConfig::predictor_batch));
    f.push_back(double_field("predictor_lr", "predictor Adam learning rate", &RunConfig::predictor_lr));
    f.push_back(int_field("mapper_epochs", "label mapper training epochs", &RunConfig::mapper_epochs));
    f.push_back(int_field("mapper_batch", "label mapper minibatch size", &RunConfig::mapper_batch));
    f.push_back(double_field("mapper_lr", "label mapper Adam learning rate", &RunConfig::mapper_lr));
    f.push_back(int_field("mapper_hidden", "label mapper hidden size", &RunConfig::mapper_hidden));
    f.push_back(double_field("clip_norm", "global gradient-norm clip, 0 disables", &RunConfig::clip_norm));
    f.push_back({"literal_refeed", "rollout re-runs the sliding window from a zero state", true,
                 [](const RunConfig& c) { return std::string(c.literal_refeed ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) { c.literal_refeed = parse_bool("literal_refeed", v); }});
    f.push_back(int_field("n_teams", "teams in the generated corpus", &RunConfig::n_teams));
    f.push_back(int_field("base_seed", "root seed for corpus, folds and initialization", &RunConfig::base_seed));
    f.push_back(int_field("folds", "cross-validation folds", &RunConfig::folds));
    f.push_back({"split", "window or team (keeps each team in one fold)", true,
                 [](const RunConfig& c) { return std::string(to_string(c.split)); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.split = split_mode_from_string(trim(v));
                   } catch (const std::exception&) {
                     throw RunConfigError("split: expected window or team, got '" + v + "'");
                   }
                 }});
    f.push_back(int_field("threads", "folds evaluated concurrently", &RunConfig::threads, false));
    f.push_back({"out", "output directory", false, [](const RunConfig& c) { return c.out; },
                 [](RunConfig& c, const std::string& v) { c.out = trim(v); }});
    return f;
  }();
  return table;
}

namespace {

const RunConfig::Field& find_field(const std::string& key) {
  for (const auto& f : RunConfig::fields()) {
    if (f.key == key) return f;
  }
  throw RunConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> v;
  auto positive = [&](const char* key, auto value) {
    if (value <= 0) v.push_back(std::string(key) + " must be positive");
  };
  positive("period_ms", period_ms);
  if (period_ms > 0 && period_ms % 100 != 0) v.emplace_back("period_ms must be a multiple of 100");
  positive("input_len", input_len);
  positive("step", step);
  positive("horizon", horizon);
  positive("hidden", hidden);
  positive("predictor_epochs", predictor_epochs);
  positive("predictor_batch", predictor_batch);
  if (!(predictor_lr >= 0.0)) v.emplace_back("predictor_lr must not be negative");
  positive("mapper_epochs", mapper_epochs);
  positive("mapper_batch", mapper_batch);
  if (!(mapper_lr >= 0.0)) v.emplace_back("mapper_lr must not be negative");
  positive("mapper_hidden", mapper_hidden);
  if (!(clip_norm >= 0.0)) v.emplace_back("clip_norm must not be negative");
  positive("n_teams", n_teams);
  if (folds < 2) v.emplace_back("folds must be at least 2");
  positive("threads", threads);
  if (model != "lstm" && model != "mt-lstm") v.emplace_back("model must be lstm or mt-lstm");
  if (split == SplitMode::Team && n_teams > 0 && n_teams < folds) {
    v.emplace_back("team split needs n_teams >= folds");
  }

  GroupSchedule s;
  s.periods = periods;
  if (sizes.empty()) {
    s.sizes.assign(periods.size(), 1);
    if (hidden > 0 && static_cast<std::size_t>(hidden) < periods.size()) {
      v.emplace_back("hidden must be at least the number of groups");
    }
  } else {
    s.sizes = sizes;
    const Index total = std::accumulate(sizes.begin(), sizes.end(), Index{0});
    if (total != hidden) v.emplace_back("sizes must sum to hidden");
  }
  for (auto& msg : s.violations()) v.push_back(std::move(msg));
  return v;
}

void RunConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& m : v) msg += "\n  " + m;
  throw RunConfigError(msg);
}

std::string RunConfig::canonical() const {
  std::string s;
  for (const auto& f : fields()) {
    if (f.hashed) s += f.key + " = " + f.get(*this) + "\n";
  }
  return s;
}

std::string RunConfig::hash() const { return fnv1a_hex(canonical()); }

GroupSchedule RunConfig::schedule_for(const std::string& model_name) const {
  if (model_name == "lstm") return GroupSchedule::standard(hidden);
  if (model_name != "mt-lstm") throw RunConfigError("unknown model '" + model_name + "'");
  if (sizes.empty()) return GroupSchedule::balanced(hidden, periods);
  GroupSchedule s{sizes, periods};
  s.validate();
  return s;
}

CvConfig RunConfig::cv_config() const {
  CvConfig c;
  c.input_len = input_len;
  c.step = step;
  c.horizon = horizon;
  c.folds = folds;
  c.split = split;
  c.seed = base_seed;
  c.predictor = {predictor_epochs, predictor_batch, predictor_lr, clip_norm, 0};
  c.mapper = {mapper_epochs, mapper_batch, mapper_lr, clip_norm, 0};
  c.mapper_hidden = mapper_hidden;
  c.rollout.literal_refeed = literal_refeed;
  c.threads = threads;
  c.models.push_back({"baseline-1", ModelSpec::Kind::Baseline, {}, connectivity});
  c.models.push_back({"lstm", ModelSpec::Kind::Predictor, schedule_for("lstm"), connectivity});
  c.models.push_back({"mt-lstm", ModelSpec::Kind::Predictor, schedule_for("mt-lstm"), connectivity});
  return c;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    ojson j;
    try {
      j = ojson::parse(text);
    } catch (const std::exception& e) {
      throw RunConfigError(origin + ": not valid JSON: " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) {
      throw RunConfigError(origin + ": manifest has no config object");
    }
    for (const auto& [key, value] : j["config"].items()) {
      if (!value.is_string()) throw RunConfigError(origin + ": config value for '" + key + "' must be a string");
      cfg.set(key, value.get<std::string>());
    }
    return;
  }
  std::istringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw RunConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    }
    try {
      cfg.set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    } catch (const RunConfigError& e) {
      throw RunConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const fs::path& path) {
  if (!fs::exists(path)) throw PathError("config file not found: " + path.string());
  apply_config_text(cfg, read_file(path), path.string());
}

std::string describe_fields() {
  const RunConfig paper;
  const RunConfig desk = RunConfig::desk_scale();
  std::size_t width = 0;
  for (const auto& f : RunConfig::fields()) width = std::max(width, f.key.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width) + 2) << "key" << std::setw(12) << "default"
      << std::setw(12) << "desk-scale" << "description\n";
  for (const auto& f : RunConfig::fields()) {
    out << std::setw(static_cast<int>(width) + 2) << f.key << std::setw(12) << f.get(paper)
        << std::setw(12) << f.get(desk) << f.help << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Encoding files

std::string encoding_json(const EncodingSpec& spec) {
  ojson j;
  j["dimension"] = spec.dimension;
  auto slots = ojson::array();
  for (const auto& s : spec.slots) {
    ojson o;
    o["field"] = std::string(record_fields()[s.field].name);
    o["offset"] = s.offset;
    o["width"] = s.width;
    if (record_fields()[s.field].kind == FieldKind::Numeric) {
      o["mean"] = s.stats.mean;
      o["stddev"] = s.stats.stddev;
      o["normalized"] = s.stats.normalized;
    } else {
      o["vocab"] = s.vocab;
    }
    slots.push_back(std::move(o));
  }
  j["slots"] = std::move(slots);
  return j.dump(2) + "\n";
}

EncodingSpec encoding_from_json(const std::string& text) {
  try {
    const auto j = ojson::parse(text);
    EncodingSpec spec = EncodingSpec::declared();
    if (j.at("slots").size() != spec.slots.size()) throw EncodingError("encoding file: wrong slot count");
    for (std::size_t i = 0; i < spec.slots.size(); ++i) {
      const auto& o = j.at("slots")[i];
      auto& s = spec.slots[i];
      if (o.at("field").get<std::string>() != record_fields()[s.field].name) {
        throw EncodingError("encoding file: slot " + std::to_string(i) + " is not " +
                            std::string(record_fields()[s.field].name));
      }
      if (o.at("offset").get<Index>() != s.offset || o.at("width").get<Index>() != s.width) {
        throw EncodingError("encoding file: layout of " + o.at("field").get<std::string>() + " differs");
      }
      if (record_fields()[s.field].kind == FieldKind::Numeric) {
        s.stats.mean = o.at("mean").get<double>();
        s.stats.stddev = o.at("stddev").get<double>();
        s.stats.normalized = o.at("normalized").get<bool>();
      } else {
        s.vocab = o.at("vocab").get<std::vector<int>>();
      }
    }
    if (j.at("dimension").get<Index>() != spec.dimension) throw EncodingError("encoding file: dimension differs");
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw EncodingError(std::string("encoding file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

std::vector<FeatureSeries> load_traces(const fs::path& dir, std::int64_t period_ms) {
  if (!fs::is_directory(dir)) throw PathError("trace directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw PathError("no .jsonl trace files in " + dir.string());
  std::vector<FeatureSeries> out;
  for (const auto& p : files) {
    std::ifstream in(p);
    FeatureSeries s;
    try {
      s = parse_trace(in, period_ms);
    } catch (const TraceError& e) {
      throw TraceError(e.kind(), p.filename().string() + ": " + e.what());
    }
    s.player_id = p.stem().string();
    const auto cut = s.player_id.rfind('_');
    s.mission_id = cut == std::string::npos ? s.player_id : s.player_id.substr(0, cut);
    int team = 0;
    if (std::sscanf(s.player_id.c_str(), "team%d", &team) == 1) s.team = team;
    out.push_back(std::move(s));
  }
  return out;
}

void write_histogram_text(std::ostream& out, const LabelHistogram& h) {
  const auto saved = out.flags();
  out << std::left << std::setw(7) << "label" << std::right << std::setw(10) << "count" << std::setw(10)
      << "percent" << '\n';
  for (int i = 0; i < kLabelCount; ++i) {
    const auto l = label_from_index(i);
    out << std::left << std::setw(7) << label_name(l) << std::right << std::setw(10)
        << h.counts[static_cast<std::size_t>(i)] << std::setw(10) << std::fixed << std::setprecision(2)
        << 100.0 * h.fraction(l) << '\n';
  }
  out << std::left << std::setw(7) << "total" << std::right << std::setw(10) << h.total << '\n';
  out.flags(saved);
}

void write_histogram_csv(std::ostream& out, const LabelHistogram& h) {
  out << "label,count,fraction\n";
  for (int i = 0; i < kLabelCount; ++i) {
    const auto l = label_from_index(i);
    out << label_name(l) << ',' << h.counts[static_cast<std::size_t>(i)] << ',' << format_double(h.fraction(l))
        << '\n';
  }
}

namespace {

class Run {
 public:
  Run(std::string command, const RunConfig& cfg, const CommandOptions& opts)
      : command_(std::move(command)), cfg_(cfg), opts_(opts), dir_(cfg.out) {
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  void log(const std::string& msg) const {
    if (opts_.log) opts_.log(msg);
  }

  void write(const fs::path& rel, const std::string& bytes) {
    const fs::path p = dir_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw PathError("cannot write " + p.string());
    out << bytes;
    if (!out) throw PathError("write failed: " + p.string());
    artifacts_.push_back({{"path", rel.generic_string()}, {"bytes", bytes.size()}, {"fnv1a", fnv1a_hex(bytes)}});
  }

  std::string read_input(const fs::path& p) {
    if (!fs::exists(p)) throw PathError("input not found: " + p.string());
    auto bytes = read_file(p);
    inputs_.push_back({{"path", p.generic_string()}, {"fnv1a", fnv1a_hex(bytes)}});
    return bytes;
  }

  std::vector<FeatureSeries> traces(const fs::path& dir) {
    auto corpus = load_traces(dir, cfg_.period_ms);
    inputs_.push_back({{"path", dir.generic_string()}, {"files", corpus.size()}});
    return corpus;
  }

  /// Writes the manifest and returns its text.
  std::string finish() {
    ojson m;
    m["tool"] = "mtlstm";
    m["version"] = kVersion;
    m["command"] = command_;
    m["config_hash"] = cfg_.hash();
    ojson c;
    for (const auto& f : RunConfig::fields()) c[f.key] = f.get(cfg_);
    m["config"] = std::move(c);
    m["seeds"] = {{"base_seed", cfg_.base_seed}};
    m["inputs"] = inputs_;
    m["artifacts"] = artifacts_;
    const std::string text = m.dump(2) + "\n";
    std::ofstream out(dir_ / ("manifest-" + command_ + ".json"), std::ios::binary | std::ios::trunc);
    out << text;
    return text;
  }

 private:
  std::string command_;
  const RunConfig& cfg_;
  const CommandOptions& opts_;
  fs::path dir_;
  ojson inputs_ = ojson::array();
  ojson artifacts_ = ojson::array();
};

fs::path or_default(const fs::path& given, const fs::path& fallback) {
  return given.empty() ? fallback : given;
}

std::vector<FeatureSeries> generated_corpus(const RunConfig& cfg) {
  auto corpus = generate_corpus(cfg.n_teams, cfg.base_seed);
  if (cfg.downsample_factor() > 1) {
    for (auto& s : corpus) s = downsample(s, cfg.downsample_factor());
  }
  return corpus;
}

struct Encoded {
  EncodingSpec spec;
  std::vector<WindowRef> refs;
  std::vector<Matrix> series;
  std::vector<std::vector<int>> labels;
};

Encoded encode_corpus(std::span<const FeatureSeries> corpus, const RunConfig& cfg) {
  Encoded e;
  e.refs = corpus_windows(corpus, cfg.input_len, cfg.step, cfg.horizon);
  if (e.refs.empty()) throw std::invalid_argument("traces are too short for a single window");
  std::vector<std::size_t> all(e.refs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  e.spec = fit_fold_encoding(corpus, e.refs, all);
  for (const auto& s : corpus) {
    e.series.push_back(encode_series(s.records, e.spec));
    std::vector<int> l;
    for (auto x : s.labels) l.push_back(label_index(x));
    e.labels.push_back(std::move(l));
  }
  return e;
}

std::string checkpoint_bytes(const Checkpoint& c) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, c);
  return out.str();
}

std::string loss_csv(const std::vector<double>& history) {
  std::string s = "epoch,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) s += std::to_string(i + 1) + "," + format_double(history[i]) + "\n";
  return s;
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return s.str();
}

void cmd_gen(Run& run, const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  run.log("generating " + std::to_string(cfg.n_teams) + " teams");
  const auto corpus = generated_corpus(cfg);
  for (const auto& s : corpus) {
    std::ostringstream t;
    write_trace(t, s);
    run.write(fs::path("traces") / (s.player_id + ".jsonl"), t.str());
  }
  const auto h = label_histogram(corpus);
  std::ostringstream text, csv;
  write_histogram_text(text, h);
  write_histogram_csv(csv, h);
  run.write("stats.txt", text.str());
  run.write("stats.csv", csv.str());
  if (opts.json) return;
  if (opts.stats) {
    out << text.str();
  } else {
    out << "wrote " << corpus.size() << " traces to " << (run.dir() / "traces").string() << '\n';
  }
}

void cmd_label(Run& run, const RunConfig&, const CommandOptions& opts, std::ostream& out) {
  auto corpus = run.traces(or_default(opts.traces, run.dir() / "traces"));
  std::size_t agree = 0, compared = 0;
  for (auto& s : corpus) {
    auto labels = heuristic_labels(s);
    if (s.labels.size() == labels.size()) {
      for (std::size_t i = 0; i < labels.size(); ++i) agree += labels[i] == s.labels[i];
      compared += labels.size();
    }
    s.labels = std::move(labels);
    std::ostringstream t;
    write_trace(t, s);
    run.write(fs::path("labeled") / (s.player_id + ".jsonl"), t.str());
  }
  if (opts.json) return;
  out << "labeled " << corpus.size() << " traces into " << (run.dir() / "labeled").string() << '\n';
  if (compared) {
    out << "agreement with trace labels: "
        << percent(static_cast<double>(agree) / static_cast<double>(compared)) << '\n';
  }
}

void cmd_train_predictor(Run& run, const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  const auto corpus = run.traces(or_default(opts.traces, run.dir() / "traces"));
  const auto enc = encode_corpus(corpus, cfg);
  std::vector<RegressionWindow> data;
  for (const auto& r : enc.refs) {
    data.push_back({&enc.series[r.series], r.window.start, r.window.input_len + r.window.horizon - 1});
  }
  const auto schedule = cfg.schedule_for(cfg.model);
  TrainConfig tc{cfg.predictor_epochs, cfg.predictor_batch, cfg.predictor_lr, cfg.clip_norm,
                 hash_key({cfg.base_seed, 0x707265ULL})};
  const Network init{LstmParams::initialized(enc.spec.dimension, schedule.hidden_size(), enc.spec.dimension,
                                             tc.seed, schedule, cfg.connectivity),
                     schedule, cfg.connectivity};
  run.log("training " + cfg.model + " on " + std::to_string(data.size()) + " windows");
  const auto res = train(data, init, tc);
  run.write("encoding.json", encoding_json(enc.spec));
  run.write("predictor.ckpt", checkpoint_bytes({{res.params, schedule, cfg.connectivity}, tc.seed}));
  run.write("predictor-loss.csv", loss_csv(res.loss_history));
  if (opts.json) return;
  out << "trained " << cfg.model << " on " << data.size() << " windows, final loss "
      << format_double(res.loss_history.back()) << '\n';
}

void cmd_train_mapper(Run& run, const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  const auto corpus = run.traces(or_default(opts.traces, run.dir() / "traces"));
  for (const auto& s : corpus) {
    if (s.labels.size() != s.size()) throw std::invalid_argument("trace " + s.player_id + " has no labels");
  }
  const auto enc = encode_corpus(corpus, cfg);
  std::vector<LabelWindow> data;
  for (const auto& r : enc.refs) {
    data.push_back({&enc.series[r.series], &enc.labels[r.series], r.window.future_start(), r.window.horizon});
  }
  TrainConfig tc{cfg.mapper_epochs, cfg.mapper_batch, cfg.mapper_lr, cfg.clip_norm,
                 hash_key({cfg.base_seed, 0x6d6170ULL})};
  run.log("training mapper on " + std::to_string(data.size()) + " windows");
  const auto res = train_mapper(data, enc.spec.dimension, tc, cfg.mapper_hidden);
  const GroupSchedule schedule = GroupSchedule::standard(cfg.mapper_hidden);
  run.write("encoding.json", encoding_json(enc.spec));
  run.write("mapper.ckpt", checkpoint_bytes({{res.params, schedule, Connectivity::Full}, tc.seed}));
  run.write("mapper-loss.csv", loss_csv(res.loss_history));
  if (opts.json) return;
  out << "trained mapper on " << data.size() << " windows, final loss "
      << format_double(res.loss_history.back()) << '\n';
}

Checkpoint load_ckpt(Run& run, const fs::path& p) {
  std::istringstream in(run.read_input(p), std::ios::binary);
  return read_checkpoint(in);
}

void cmd_rollout(Run& run, const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  const auto predictor = load_ckpt(run, or_default(opts.predictor, run.dir() / "predictor.ckpt"));
  const auto mapper = load_ckpt(run, or_default(opts.mapper, run.dir() / "mapper.ckpt"));
  const auto spec = encoding_from_json(run.read_input(or_default(opts.encoding, run.dir() / "encoding.json")));
  const auto corpus = run.traces(or_default(opts.traces, run.dir() / "traces"));
  RolloutOptions ro;
  ro.literal_refeed = cfg.literal_refeed;
  std::ostringstream lines;
  std::size_t n = 0, hits = 0, compared = 0;
  for (const auto& s : corpus) {
    const Matrix enc = encode_series(s.records, spec);
    for (const auto& w : windows(s, cfg.input_len, cfg.step, cfg.horizon)) {
      const auto f = forecast(predictor.network, mapper.network, enc.middleRows(w.start, w.input_len), w.horizon,
                              spec, s.player_id + "@" + std::to_string(w.start), ro);
      write_forecast(lines, f, opts.vectors);
      if (s.labels.size() == s.size()) {
        for (Index t = 0; t < w.horizon; ++t) {
          hits += f.labels[static_cast<std::size_t>(t)] == s.labels[static_cast<std::size_t>(w.future_start() + t)];
        }
        compared += static_cast<std::size_t>(w.horizon);
      }
      ++n;
    }
  }
  run.write("forecasts.jsonl", lines.str());
  if (opts.json) return;
  out << "wrote " << n << " forecasts to " << (run.dir() / "forecasts.jsonl").string() << '\n';
  if (compared) {
    out << "label accuracy against traces: " << percent(static_cast<double>(hits) / static_cast<double>(compared))
        << '\n';
  }
}

void cmd_eval(Run& run, const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  std::vector<FeatureSeries> corpus;
  if (opts.traces.empty()) {
    run.log("generating " + std::to_string(cfg.n_teams) + " teams");
    corpus = generated_corpus(cfg);
  } else {
    corpus = run.traces(opts.traces);
  }
  const auto report = cross_validate(corpus, cfg.cv_config(), opts.log);
  std::ostringstream text, csv;
  write_report_text(text, report);
  write_report_csv(csv, report);
  run.write("report.txt", text.str());
  run.write("report.csv", csv.str());
  run.write("report.json", report_json(report));
  out << (opts.json ? report_json(report) : text.str());
}

void cmd_report(Run& run, const RunConfig&, const CommandOptions& opts, std::ostream& out) {
  const auto report = report_from_json(run.read_input(or_default(opts.report, run.dir() / "report.json")));
  if (opts.json) {
    out << report_json(report);
  } else if (opts.csv) {
    write_report_csv(out, report);
  } else {
    write_report_text(out, report);
  }
}

}  // namespace

void run_command(const std::string& command, const RunConfig& cfg, const CommandOptions& opts,
                 std::ostream& out) {
  cfg.validate();
  using Fn = void (*)(Run&, const RunConfig&, const CommandOptions&, std::ostream&);
  Fn fn = nullptr;
  if (command == "gen") fn = cmd_gen;
  if (command == "label") fn = cmd_label;
  if (command == "train-predictor") fn = cmd_train_predictor;
  if (command == "train-mapper") fn = cmd_train_mapper;
  if (command == "rollout") fn = cmd_rollout;
  if (command == "eval") fn = cmd_eval;
  if (command == "report") fn = cmd_report;
  if (!fn) throw std::invalid_argument("unknown command '" + command + "'");
  Run run(command, cfg, opts);
  fn(run, cfg, opts, out);
  const auto manifest = run.finish();
  if (opts.json && command != "eval" && command != "report") out << manifest;
}

}  // namespace mtlstm
