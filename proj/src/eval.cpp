#include "mtlstm/eval.hpp"

#include "mtlstm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mtlstm {

SemanticLabel baseline1_fit(std::span<const SemanticLabel> train_labels) {
  if (train_labels.empty()) throw std::invalid_argument("baseline1_fit: empty training set");
  std::array<std::size_t, kLabelCount> counts{};
  for (auto l : train_labels) counts[static_cast<std::size_t>(l)] += 1;
  // max_element returns the first maximum, i.e. the lowest index on ties
  const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
  return label_from_index(static_cast<int>(best));
}

std::vector<SemanticLabel> baseline1_predict(SemanticLabel label, Index horizon) {
  return std::vector<SemanticLabel>(static_cast<std::size_t>(std::max<Index>(horizon, 0)), label);
}

double accuracy(std::span<const SemanticLabel> pred, std::span<const SemanticLabel> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("accuracy: length mismatch (" + std::to_string(pred.size()) +
                                " vs " + std::to_string(truth.size()) + ")");
  }
  if (pred.empty()) throw std::invalid_argument("accuracy: empty sequences");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::string_view to_string(SplitMode m) { return m == SplitMode::Window ? "window" : "team"; }

SplitMode split_mode_from_string(std::string_view s) {
  if (s == "window") return SplitMode::Window;
  if (s == "team") return SplitMode::Team;
  throw std::invalid_argument("unknown split mode '" + std::string(s) + "' (window|team)");
}

std::vector<std::size_t> FoldPlan::test_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) out.push_back(i);
  }
  return out;
}

FoldPlan kfold_split(std::size_t n_windows, int k, SplitMode mode, std::uint64_t seed,
                     std::span<const int> teams) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (n_windows < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("kfold_split: " + std::to_string(n_windows) +
                                " windows is fewer than " + std::to_string(k) + " folds");
  }
  FoldPlan plan;
  plan.k = k;
  plan.mode = mode;
  plan.seed = seed;
  plan.fold_of.assign(n_windows, 0);
  Rng rng(hash_key({seed, 0x666f6c64ULL, static_cast<std::uint64_t>(k)}));

  if (mode == SplitMode::Window) {
    std::vector<std::size_t> order(n_windows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t i = 0; i < n_windows; ++i) plan.fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return plan;
  }

  if (teams.size() != n_windows) {
    throw std::invalid_argument("kfold_split: team mode needs one team id per window");
  }
  std::vector<int> ids(std::set<int>(teams.begin(), teams.end()).size());
  {
    std::set<int> unique(teams.begin(), teams.end());
    std::copy(unique.begin(), unique.end(), ids.begin());
  }
  if (ids.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("kfold_split: " + std::to_string(ids.size()) +
                                " teams is fewer than " + std::to_string(k) + " folds");
  }
  rng.shuffle(ids);
  std::map<int, int> fold_of_team;
  for (std::size_t i = 0; i < ids.size(); ++i) fold_of_team[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n_windows; ++i) plan.fold_of[i] = fold_of_team[teams[i]];
  return plan;
}

std::vector<WindowRef> corpus_windows(std::span<const FeatureSeries> corpus, Index input_len,
                                      Index step, Index horizon) {
  std::vector<WindowRef> out;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    for (const auto& w : windows(corpus[s], input_len, step, horizon)) out.push_back({s, w});
  }
  return out;
}

EncodingSpec fit_fold_encoding(std::span<const FeatureSeries> corpus,
                               std::span<const WindowRef> windows,
                               std::span<const std::size_t> selected) {
  std::vector<std::span<const FeatureRecord>> segments;
  segments.reserve(selected.size());
  for (auto i : selected) {
    const auto& ref = windows[i];
    const auto& records = corpus[ref.series].records;
    segments.emplace_back(records.data() + ref.window.start,
                          static_cast<std::size_t>(ref.window.input_len + ref.window.horizon));
  }
  return fit_encoding(std::span<const std::span<const FeatureRecord>>(segments));
}

std::vector<ModelSpec> standard_models(Index hidden_size, const std::vector<std::int64_t>& periods,
                                       Connectivity connectivity) {
  std::vector<ModelSpec> m;
  m.push_back({"baseline-1", ModelSpec::Kind::Baseline, {}, connectivity});
  m.push_back({"lstm", ModelSpec::Kind::Predictor, GroupSchedule::standard(hidden_size), connectivity});
  m.push_back({"mt-lstm", ModelSpec::Kind::Predictor, GroupSchedule::balanced(hidden_size, periods),
               connectivity});
  return m;
}

const ModelReport& EvalReport::model(std::string_view name) const {
  for (const auto& m : models) {
    if (m.name == name) return m;
  }
  throw std::out_of_range("report has no model '" + std::string(name) + "'");
}

double standard_error(std::span<const double> values) {
  const auto n = values.size();
  if (n < 2) return 0.0;
  // shift by the first value so identical inputs give exactly zero
  const double shift = values[0];
  double sum = 0.0;
  for (double v : values) sum += v - shift;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - shift - mean) * (v - shift - mean);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

namespace {

constexpr std::array<Role, 3> kRoles = {Role::Medic, Role::Engineer, Role::Transporter};

// Accuracy per test window for every model of one fold.
struct FoldResult {
  std::vector<std::vector<double>> window_accuracy;  // [model][test window]
  // Same, except that baseline-1 is refit on the training windows of the test
  // window's role. Feeds the per-role rows.
  std::vector<std::vector<double>> role_accuracy;
};

std::vector<SemanticLabel> future_labels(const FeatureSeries& s, const Window& w) {
  const auto begin = s.labels.begin() + w.future_start();
  return {begin, begin + w.horizon};
}

FoldResult run_fold(std::span<const FeatureSeries> corpus, std::span<const WindowRef> refs,
                    const FoldPlan& plan, int fold, const CvConfig& cfg,
                    const ProgressFn& progress) {
  const auto train_idx = plan.train_indices(fold);
  const auto test_idx = plan.test_indices(fold);
  auto say = [&](const std::string& msg) {
    if (progress) progress("fold " + std::to_string(fold) + ": " + msg);
  };

  const EncodingSpec spec = fit_fold_encoding(corpus, refs, train_idx);
  std::vector<Matrix> encoded(corpus.size());
  std::vector<std::vector<int>> labels(corpus.size());
  {
    std::vector<char> needed(corpus.size(), 0);
    for (const auto& r : refs) needed[r.series] = 1;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      if (!needed[s]) continue;
      encoded[s] = encode_series(corpus[s].records, spec);
      for (auto l : corpus[s].labels) labels[s].push_back(label_index(l));
    }
  }

  std::vector<SemanticLabel> train_future;
  std::array<std::vector<SemanticLabel>, 3> train_future_by_role;
  std::vector<LabelWindow> mapper_data;
  std::vector<RegressionWindow> predictor_data;
  for (auto i : train_idx) {
    const auto& r = refs[i];
    const auto fut = future_labels(corpus[r.series], r.window);
    train_future.insert(train_future.end(), fut.begin(), fut.end());
    auto& by_role = train_future_by_role[static_cast<std::size_t>(corpus[r.series].role)];
    by_role.insert(by_role.end(), fut.begin(), fut.end());
    mapper_data.push_back({&encoded[r.series], &labels[r.series], r.window.future_start(), r.window.horizon});
    predictor_data.push_back({&encoded[r.series], r.window.start,
                              r.window.input_len + r.window.horizon - 1});
  }

  const bool any_predictor = std::any_of(cfg.models.begin(), cfg.models.end(), [](const ModelSpec& m) {
    return m.kind == ModelSpec::Kind::Predictor;
  });
  Network mapper;
  if (any_predictor) {
    say("training mapper");
    TrainConfig mc = cfg.mapper;
    mc.seed = hash_key({cfg.seed, static_cast<std::uint64_t>(fold), 0x6d6170ULL});
    mapper = Network{train_mapper(mapper_data, spec.dimension, mc, cfg.mapper_hidden).params,
                     GroupSchedule::standard(cfg.mapper_hidden), Connectivity::Full};
  }

  FoldResult result;
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    const auto& model = cfg.models[m];
    std::vector<double> acc;
    acc.reserve(test_idx.size());
    std::vector<double> role_acc;
    if (model.kind == ModelSpec::Kind::Baseline) {
      const auto label = baseline1_fit(train_future);
      std::array<std::optional<SemanticLabel>, 3> role_label;
      for (std::size_t k = 0; k < 3; ++k) {
        if (!train_future_by_role[k].empty()) role_label[k] = baseline1_fit(train_future_by_role[k]);
      }
      for (auto i : test_idx) {
        const auto& r = refs[i];
        const auto truth = future_labels(corpus[r.series], r.window);
        acc.push_back(accuracy(baseline1_predict(label, r.window.horizon), truth));
        const auto& own = role_label[static_cast<std::size_t>(corpus[r.series].role)];
        role_acc.push_back(accuracy(baseline1_predict(own.value_or(label), r.window.horizon), truth));
      }
    } else {
      say("training " + model.name);
      TrainConfig pc = cfg.predictor;
      pc.seed = hash_key({cfg.seed, static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(m)});
      const Network init{LstmParams::initialized(spec.dimension, model.schedule.hidden_size(),
                                                 spec.dimension, pc.seed, model.schedule,
                                                 model.connectivity),
                         model.schedule, model.connectivity};
      const auto trained = train(predictor_data, init, pc);
      const Network net{trained.params, model.schedule, model.connectivity};
      for (auto i : test_idx) {
        const auto& r = refs[i];
        const Matrix window = encoded[r.series].middleRows(r.window.start, r.window.input_len);
        const Matrix feats = rollout(net, window, r.window.horizon, spec, cfg.rollout);
        acc.push_back(accuracy(map_labels(mapper, feats), future_labels(corpus[r.series], r.window)));
      }
    }
    const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    std::ostringstream msg;
    msg << model.name << " accuracy " << std::fixed << std::setprecision(4) << mean;
    say(msg.str());
    result.role_accuracy.push_back(role_acc.empty() ? acc : std::move(role_acc));
    result.window_accuracy.push_back(std::move(acc));
  }
  return result;
}

}  // namespace

EvalReport cross_validate(std::span<const FeatureSeries> corpus, const CvConfig& cfg,
                          const ProgressFn& progress) {
  if (cfg.models.empty()) throw std::invalid_argument("cross_validate: no models");
  for (const auto& s : corpus) {
    if (s.labels.size() != s.records.size()) {
      throw std::invalid_argument("cross_validate: series " + s.player_id + " has no ground-truth labels");
    }
  }
  const auto refs = corpus_windows(corpus, cfg.input_len, cfg.step, cfg.horizon);
  std::vector<int> teams;
  for (const auto& r : refs) teams.push_back(corpus[r.series].team);
  const auto plan = kfold_split(refs.size(), cfg.folds, cfg.split, cfg.seed, teams);

  std::vector<FoldResult> folds(static_cast<std::size_t>(cfg.folds));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.folds));
  std::atomic<int> next{0};
  std::mutex log_mutex;
  const ProgressFn locked = progress ? ProgressFn([&](const std::string& m) {
    std::lock_guard<std::mutex> lock(log_mutex);
    progress(m);
  })
                                     : ProgressFn{};
  auto worker = [&] {
    for (int f = next++; f < cfg.folds; f = next++) {
      try {
        folds[static_cast<std::size_t>(f)] = run_fold(corpus, refs, plan, f, cfg, locked);
      } catch (...) {
        errors[static_cast<std::size_t>(f)] = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(cfg.threads, 1, cfg.folds);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (int f = 0; f < cfg.folds; ++f) {
    if (!errors[static_cast<std::size_t>(f)]) continue;
    try {
      std::rethrow_exception(errors[static_cast<std::size_t>(f)]);
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + std::to_string(f) + ": " + e.what());
    }
  }

  EvalReport report;
  report.k = cfg.folds;
  report.split = cfg.split;
  report.seed = cfg.seed;
  report.windows = refs.size();
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    ModelReport mr;
    mr.name = cfg.models[m].name;
    std::array<RoleRow, 3> roles;
    for (std::size_t r = 0; r < 3; ++r) roles[r].role = kRoles[r];
    for (int f = 0; f < cfg.folds; ++f) {
      const auto test_idx = plan.test_indices(f);
      const auto& acc = folds[static_cast<std::size_t>(f)].window_accuracy[m];
      mr.folds.push_back(std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size()));
      const auto& role_acc = folds[static_cast<std::size_t>(f)].role_accuracy[m];
      std::array<double, 3> sum{};
      std::array<std::size_t, 3> count{};
      for (std::size_t i = 0; i < test_idx.size(); ++i) {
        const auto role = static_cast<std::size_t>(corpus[refs[test_idx[i]].series].role);
        sum[role] += role_acc[i];
        count[role] += 1;
      }
      for (std::size_t r = 0; r < 3; ++r) {
        roles[r].windows += count[r];
        if (count[r]) roles[r].folds.push_back(sum[r] / static_cast<double>(count[r]));
      }
    }
    mr.mean = std::accumulate(mr.folds.begin(), mr.folds.end(), 0.0) / static_cast<double>(mr.folds.size());
    mr.std_error = standard_error(mr.folds);
    for (auto& row : roles) {
      if (!row.folds.empty()) {
        row.mean = std::accumulate(row.folds.begin(), row.folds.end(), 0.0) / static_cast<double>(row.folds.size());
      }
      row.std_error = standard_error(row.folds);
      mr.roles.push_back(row);
    }
    report.models.push_back(std::move(mr));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Output

void write_report_text(std::ostream& out, const EvalReport& report) {
  const auto saved = out.flags();
  out << report.k << "-fold cross-validation, " << report.windows << " windows, "
      << to_string(report.split) << " split, seed " << report.seed << "\n\n";
  out << std::left << std::setw(14) << "model" << std::right << std::setw(18) << "accuracy (%)" << '\n';
  for (const auto& m : report.models) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(2) << 100.0 * m.mean << " +/- " << 100.0 * m.std_error;
    out << std::left << std::setw(14) << m.name << std::right << std::setw(18) << cell.str() << '\n';
  }
  out << '\n' << std::left << std::setw(14) << "role";
  for (const auto& m : report.models) out << std::right << std::setw(18) << m.name;
  out << '\n';
  for (std::size_t r = 0; r < 3; ++r) {
    out << std::left << std::setw(14) << role_name(kRoles[r]);
    for (const auto& m : report.models) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << 100.0 * m.roles[r].mean << " +/- "
           << 100.0 * m.roles[r].std_error;
      out << std::right << std::setw(18) << cell.str();
    }
    out << '\n';
  }
  out.flags(saved);
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "model,role,fold,accuracy\n";
  auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  for (const auto& m : report.models) {
    for (std::size_t f = 0; f < m.folds.size(); ++f) {
      out << m.name << ",all," << f << ',' << num(m.folds[f]) << '\n';
    }
    for (const auto& row : m.roles) {
      for (std::size_t f = 0; f < row.folds.size(); ++f) {
        out << m.name << ',' << role_name(row.role) << ',' << f << ',' << num(row.folds[f]) << '\n';
      }
    }
  }
}

std::string report_json(const EvalReport& report) {
  using json = nlohmann::ordered_json;
  json j;
  j["k"] = report.k;
  j["split"] = std::string(to_string(report.split));
  j["seed"] = report.seed;
  j["windows"] = report.windows;
  j["models"] = json::array();
  for (const auto& m : report.models) {
    json jm;
    jm["name"] = m.name;
    jm["mean"] = m.mean;
    jm["std_error"] = m.std_error;
    jm["folds"] = m.folds;
    jm["roles"] = json::array();
    for (const auto& r : m.roles) {
      jm["roles"].push_back({{"role", std::string(role_name(r.role))},
                             {"windows", r.windows},
                             {"mean", r.mean},
                             {"std_error", r.std_error},
                             {"folds", r.folds}});
    }
    j["models"].push_back(std::move(jm));
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.k = j.at("k").get<int>();
  r.split = split_mode_from_string(j.at("split").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.windows = j.at("windows").get<std::size_t>();
  for (const auto& jm : j.at("models")) {
    ModelReport m;
    m.name = jm.at("name").get<std::string>();
    m.mean = jm.at("mean").get<double>();
    m.std_error = jm.at("std_error").get<double>();
    m.folds = jm.at("folds").get<std::vector<double>>();
    for (const auto& jr : jm.at("roles")) {
      RoleRow row;
      row.role = role_from_name(jr.at("role").get<std::string>());
      row.windows = jr.at("windows").get<std::size_t>();
      row.mean = jr.at("mean").get<double>();
      row.std_error = jr.at("std_error").get<double>();
      row.folds = jr.at("folds").get<std::vector<double>>();
      m.roles.push_back(row);
    }
    r.models.push_back(std::move(m));
  }
  return r;
}

}  // namespace mtlstm
