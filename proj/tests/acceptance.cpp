// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [--only N[,N...]]

#include "mtlstm/checkpoint.hpp"
#include "mtlstm/eval.hpp"
#include "mtlstm/rng.hpp"
#include "mtlstm/run.hpp"
#include "mtlstm/trainer.hpp"
#include "mtlstm/usar_sim.hpp"

#include "oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>

using namespace mtlstm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Network random_network(Index D, Index H, Index out, GroupSchedule schedule, Rng& rng,
                       Connectivity conn = Connectivity::Full, double scale = 0.6) {
  Network net{LstmParams::zeros(D, H, out), std::move(schedule), conn};
  for (auto buf : net.params.buffers()) {
    for (auto& v : buf) v = rng.uniform(-scale, scale);
  }
  apply_connectivity_mask(net.params, net.schedule, conn);
  return net;
}

Matrix random_matrix(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

/// Random valid schedule with k groups over H units.
GroupSchedule random_schedule(Index H, Index k, Rng& rng, std::int64_t max_period = 6) {
  GroupSchedule s;
  Index left = H;
  for (Index g = 0; g < k; ++g) {
    const Index remaining_groups = k - g;
    const Index size = g + 1 == k ? left : 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(left - remaining_groups + 1)));
    s.sizes.push_back(size);
    left -= size;
    const std::int64_t prev = g == 0 ? 1 : s.periods.back();
    s.periods.push_back(g == 0 ? 1 : prev + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_period))));
  }
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1 ---------------------------------------------------------------------------
Outcome gradient_exactness() {
  Rng rng(hash_key({1, 2026}));
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const Index k = 1 + static_cast<Index>(rng.below(3));
    const Index D = 1 + static_cast<Index>(rng.below(4));
    const Index H = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(8 - k + 1)));
    const Index T = 2 + static_cast<Index>(rng.below(15));
    const auto conn = rng.bernoulli(0.5) ? Connectivity::Clockwork : Connectivity::Full;
    const Network net = random_network(D, H, D, random_schedule(H, k, rng), rng, conn);
    const Matrix xs = random_matrix(T, D, rng);
    const Matrix targets = random_matrix(T, D, rng);
    const auto g = bptt(xs, targets, net);
    const auto fd = oracle::finite_difference(
        net, [&](const Network& n) { return oracle::rmse_loss(n, xs, targets); }, 1e-5);
    worst = std::max(worst, oracle::max_relative_error(std::as_const(g).buffers(), fd));
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " over 20 instances (limit 1e-4)"};
}

// 2 ---------------------------------------------------------------------------
Outcome degenerate_schedule() {
  double out_err = 0.0, grad_err = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(hash_key({2, seed}));
    const Index k = 1 + static_cast<Index>(rng.below(4));
    const Index H = k + static_cast<Index>(rng.below(8));
    const Index D = 1 + static_cast<Index>(rng.below(5));
    GroupSchedule ones = random_schedule(H, k, rng);
    std::fill(ones.periods.begin(), ones.periods.end(), 1);
    const Network grouped = random_network(D, H, D, ones, rng);
    Network mono = grouped;
    mono.schedule = GroupSchedule::standard(H);
    const Index T = 1 + static_cast<Index>(rng.below(20));
    const Matrix xs = random_matrix(T, D, rng);
    const Matrix targets = random_matrix(T, D, rng);
    const auto a = forward_sequence(xs, grouped);
    const auto b = forward_sequence(xs, mono);
    out_err = std::max(out_err, (a.outputs - b.outputs).cwiseAbs().maxCoeff());
    const auto ga = bptt(xs, targets, grouped);
    const auto gb = bptt(xs, targets, mono);
    const auto ba = std::as_const(ga).buffers();
    const auto bb = std::as_const(gb).buffers();
    for (std::size_t i = 0; i < ba.size(); ++i)
      for (std::size_t j = 0; j < ba[i].size(); ++j) grad_err = std::max(grad_err, std::abs(ba[i][j] - bb[i][j]));
  }
  return {out_err <= 1e-12 && grad_err <= 1e-10,
          "100 seeds, max output diff " + fmt("%.1e", out_err) + " (limit 1e-12), max gradient diff " +
              fmt("%.1e", grad_err) + " (limit 1e-10)"};
}

// 3 ---------------------------------------------------------------------------
Outcome inactivity() {
  Rng rng(hash_key({3, 7}));
  long checked = 0, violations = 0, active_seen = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    const Index k = 1 + static_cast<Index>(rng.below(4));
    const Index H = k + static_cast<Index>(rng.below(10));
    const Index D = 1 + static_cast<Index>(rng.below(4));
    const auto conn = rng.bernoulli(0.5) ? Connectivity::Clockwork : Connectivity::Full;
    const Network net = random_network(D, H, D, random_schedule(H, k, rng, 40), rng, conn);
    CellState s{random_matrix(H, 1, rng), random_matrix(H, 1, rng), static_cast<std::int64_t>(rng.below(1000))};
    const CellState next = mts_step(random_matrix(D, 1, rng), s, net);
    if (next.t != s.t + 1) ++violations;
    for (Index g = 0; g < k; ++g) {
      const Index off = net.schedule.offset(g), n = net.schedule.sizes[static_cast<std::size_t>(g)];
      if (group_active(s.t, net.schedule.periods[static_cast<std::size_t>(g)])) {
        ++active_seen;
        continue;
      }
      ++checked;
      for (Index u = off; u < off + n; ++u) {
        // bitwise comparison of both slices
        if (std::memcmp(&next.h(u), &s.h(u), sizeof(double)) != 0 ||
            std::memcmp(&next.c(u), &s.c(u), sizeof(double)) != 0) {
          ++violations;
          break;
        }
      }
    }
  }
  return {violations == 0 && checked > 1000,
          std::to_string(checked) + " inactive groups checked, " + std::to_string(violations) +
              " changed; " + std::to_string(active_seen) + " active groups stepped"};
}

// 4 ---------------------------------------------------------------------------
Outcome baseline_identity() {
  double worst = 0.0;
  int fold_checks = 0;
  for (std::uint64_t seed : {0ULL, 5ULL}) {
    auto corpus = generate_corpus(4, seed);
    for (auto& s : corpus) s = downsample(s, 10);
    for (auto split : {SplitMode::Window, SplitMode::Team}) {
      CvConfig cfg;
      cfg.input_len = 120;
      cfg.step = 30;
      cfg.horizon = 30;
      cfg.folds = 4;
      cfg.split = split;
      cfg.seed = seed;
      cfg.models = {{"baseline-1", ModelSpec::Kind::Baseline, {}, Connectivity::Full}};
      const auto report = cross_validate(corpus, cfg);
      const auto refs = corpus_windows(corpus, cfg.input_len, cfg.step, cfg.horizon);
      std::vector<int> teams;
      for (const auto& r : refs) teams.push_back(corpus[r.series].team);
      const auto plan = kfold_split(refs.size(), cfg.folds, split, seed, teams);
      for (int f = 0; f < cfg.folds; ++f) {
        // independent count: modal training label, then its share of test steps
        std::array<long, 11> counts{};
        for (auto i : plan.train_indices(f))
          for (Index t = 0; t < cfg.horizon; ++t)
            counts[static_cast<std::size_t>(corpus[refs[i].series].labels[static_cast<std::size_t>(refs[i].window.future_start() + t)])]++;
        const auto mode = static_cast<SemanticLabel>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        long hits = 0, n = 0;
        for (auto i : plan.test_indices(f)) {
          for (Index t = 0; t < cfg.horizon; ++t, ++n)
            hits += corpus[refs[i].series].labels[static_cast<std::size_t>(refs[i].window.future_start() + t)] == mode;
        }
        const double expected = static_cast<double>(hits) / static_cast<double>(n);
        worst = std::max(worst, std::abs(report.models[0].folds[static_cast<std::size_t>(f)] - expected));
        ++fold_checks;
      }
    }
  }
  // Fold accuracy is a mean of per-window fractions, so it can differ from the
  // pooled count by float rounding only.
  return {worst <= 1e-12, std::to_string(fold_checks) + " folds, max |report - count| " + fmt("%.1e", worst)};
}

// 5 ---------------------------------------------------------------------------
Outcome desk_ordering() {
  RunConfig cfg = RunConfig::desk_scale();
  apply_config_file(cfg, fs::path(MTLSTM_SOURCE_DIR) / "configs" / "desk.conf");
  cfg.out = (fs::path(MTLSTM_BINARY_DIR) / "acceptance-desk").string();
  cfg.threads = std::clamp(static_cast<int>(std::thread::hardware_concurrency()), 1, 4);
  CommandOptions opts;
  const auto t0 = std::chrono::steady_clock::now();
  opts.log = [t0](const std::string& m) {
    std::fprintf(stderr, "  [%6.0fs] %s\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                 m.c_str());
  };
  std::ostringstream sink;
  run_command("eval", cfg, opts, sink);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto report = report_from_json(slurp(fs::path(cfg.out) / "report.json"));
  const double mt = 100 * report.model("mt-lstm").mean, lstm = 100 * report.model("lstm").mean,
               base = 100 * report.model("baseline-1").mean;
  const bool order = mt > lstm && lstm > base && mt - lstm >= 2.0;
  const bool fast = secs < 1800.0;
  return {order && fast && fs::exists(fs::path(cfg.out) / "report.csv"),
          std::to_string(cfg.n_teams) + " teams, " + std::to_string(report.windows) + " windows, 10-fold: mt-lstm " +
              fmt("%.2f", mt) + ", lstm " + fmt("%.2f", lstm) + ", baseline-1 " + fmt("%.2f", base) +
              " (need mt > lstm > baseline, gap >= 2.00); " + fmt("%.0f", secs) + " s on " +
              std::to_string(cfg.threads) + " thread(s), limit 1800 s"};
}

// 6 ---------------------------------------------------------------------------
Outcome adam_closed_form() {
  Matrix theta = Matrix::Constant(1, 1, 1.0);
  AdamState s(1, 1);
  adam_step(theta, Matrix(Matrix::Constant(1, 1, 2.0)), s);
  const double first = std::abs(theta(0, 0) - 0.999);

  // scripted oracle for two steps under a constant gradient
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.001;
  double worst = 0.0;
  for (double g : {2.0, -0.37, 1e-3}) {
    double th = 0.25, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      th -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    Matrix p = Matrix::Constant(1, 1, 0.25);
    AdamState st(1, 1);
    adam_step(p, Matrix(Matrix::Constant(1, 1, g)), st);
    adam_step(p, Matrix(Matrix::Constant(1, 1, g)), st);
    worst = std::max(worst, std::abs(p(0, 0) - th));
  }
  return {first < 1e-6 && worst < 1e-12, "first step |theta - 0.999| " + fmt("%.1e", first) +
                                             " (limit 1e-6), two-step trace diff " + fmt("%.1e", worst) +
                                             " (limit 1e-12)"};
}

// 7 ---------------------------------------------------------------------------
Outcome mapper_sanity() {
  Matrix feats(32 * 12, 2);
  std::vector<int> labels(static_cast<std::size_t>(feats.rows()));
  Rng rng(hash_key({7, 1}));
  for (Index t = 0; t < feats.rows(); ++t) {
    feats(t, 0) = rng.uniform(-1.0, 1.0);
    feats(t, 1) = rng.uniform(-1.0, 1.0);
    labels[static_cast<std::size_t>(t)] = feats(t, 0) > 0 ? label_index(SemanticLabel::NV) : label_index(SemanticLabel::SR);
  }
  std::vector<LabelWindow> data;
  for (Index i = 0; i < 32; ++i) data.push_back({&feats, &labels, 12 * i, 12});
  TrainConfig cfg = TrainConfig::mapper_defaults();
  cfg.epochs = 200;
  cfg.batch = 4;
  cfg.learning_rate = 0.01;
  const auto res = train_mapper(data, 2, cfg, 16);
  const Network mapper{res.params, GroupSchedule::standard(16), Connectivity::Full};
  long hits = 0, n = 0;
  double sum_err = 0.0;
  for (const auto& w : data) {
    const Matrix probs = mapper_probabilities(mapper, feats.middleRows(w.start, w.length));
    for (Index t = 0; t < w.length; ++t, ++n) {
      Index best = 0;
      probs.row(t).maxCoeff(&best);
      hits += best == labels[static_cast<std::size_t>(w.start + t)];
      sum_err = std::max(sum_err, std::abs(probs.row(t).sum() - 1.0));
    }
  }
  const double acc = static_cast<double>(hits) / static_cast<double>(n);
  return {acc >= 0.99 && sum_err <= 1e-9, "training accuracy " + fmt("%.4f", acc) +
                                               " after 200 epochs (need 0.99), max |sum - 1| " +
                                               fmt("%.1e", sum_err) + " (limit 1e-9)"};
}

// 8 ---------------------------------------------------------------------------
Outcome rollout_contracts() {
  const EncodingSpec spec = EncodingSpec::declared();
  const Index D = spec.dimension;
  Rng rng(hash_key({8, 3}));
  const Network net = random_network(D, 12, D, GroupSchedule{{4, 4, 4}, {1, 5, 25}}, rng);
  Matrix window = random_matrix(40, D, rng);
  for (Index t = 0; t < window.rows(); ++t) window.row(t) = snap_categoricals(window.row(t).transpose(), spec).transpose();

  const Matrix full = rollout(net, window, 300, spec);
  bool one_hot = full.rows() == 300 && full.cols() == D;
  for (Index t = 0; t < full.rows() && one_hot; ++t) {
    for (const auto& slot : spec.slots) {
      if (record_fields()[slot.field].kind != FieldKind::Categorical) continue;
      const auto block = full.row(t).segment(slot.offset, slot.width);
      one_hot = one_hot && block.sum() == 1.0 && (block.array() == 0.0 || block.array() == 1.0).all();
    }
  }
  bool prefix = true;
  int pairs = 0;
  for (auto [a, b] : {std::pair<Index, Index>{1, 1}, {7, 23}, {30, 30}, {100, 200}, {299, 1}}) {
    const Matrix shorter = rollout(net, window, a, spec);
    const Matrix longer = rollout(net, window, a + b, spec);
    prefix = prefix && shorter == longer.topRows(a);
    ++pairs;
  }

  long mismatches = 0, combos = 0;
  for (auto [in, step, h] : {std::tuple<Index, Index, Index>{1200, 300, 300}, {120, 30, 30}, {1, 1, 1}, {7, 3, 5}, {50, 1000, 2}}) {
    for (Index n = 0; n <= 5000; ++n, ++combos) {
      Index brute = 0;
      for (Index s = 0; s + in + h <= n; s += step) ++brute;
      mismatches += brute != window_count(n, in, step, h) || brute != static_cast<Index>(windows(n, in, step, h).size());
    }
  }
  return {one_hot && prefix && mismatches == 0,
          std::string("horizon 300 gives ") + std::to_string(full.rows()) + " rows, one-hot blocks " +
              (one_hot ? "valid" : "INVALID") + "; prefix consistency " + (prefix ? "holds" : "FAILS") + " on " +
              std::to_string(pairs) + " (a, a+b) pairs; window count " + std::to_string(mismatches) +
              " mismatches over " + std::to_string(combos) + " (n, config) cases"};
}

// 9 ---------------------------------------------------------------------------
Outcome determinism() {
  const fs::path root = fs::path(MTLSTM_BINARY_DIR) / "acceptance-determinism";
  fs::remove_all(root);
  RunConfig cfg;
  apply_config_file(cfg, fs::path(MTLSTM_SOURCE_DIR) / "configs" / "smoke.conf");
  cfg.out = (root / "first").string();
  CommandOptions opts;
  std::ostringstream sink;
  for (const auto& cmd : command_names()) run_command(cmd, cfg, opts, sink);

  // second run configured from the first run's manifest alone
  RunConfig again;
  apply_config_file(again, root / "first" / "manifest-eval.json");
  again.out = (root / "second").string();
  again.threads = 2;
  for (const auto& cmd : command_names()) run_command(cmd, again, opts, sink);

  int compared = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "first")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "first");
    if (rel.filename().string().rfind("manifest-", 0) == 0) continue;  // records its own out path
    ++compared;
    differing += slurp(e.path()) != slurp(root / "second" / rel);
  }
  const bool kinds = fs::exists(root / "first" / "predictor.ckpt") && fs::exists(root / "first" / "forecasts.jsonl") &&
                     fs::exists(root / "first" / "report.json");
  return {kinds && differing == 0 && again.hash() == cfg.hash(),
          std::to_string(compared) + " artifacts (checkpoints, forecasts, reports, traces) compared, " +
              std::to_string(differing) + " differ; config hash " + cfg.hash()};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") {
      std::stringstream ss(argv[i + 1]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient exactness", gradient_exactness},
      {"degenerate-schedule equivalence", degenerate_schedule},
      {"inactivity invariant", inactivity},
      {"baseline identity", baseline_identity},
      {"desk-scale ordering", desk_ordering},
      {"adam closed form", adam_closed_form},
      {"mapper sanity", mapper_sanity},
      {"rollout contracts", rollout_contracts},
      {"determinism", determinism},
  };
  const double limits[] = {60, 30, 0, 0, 0, 0, 0, 0, 0};  // seconds; 0 = no runtime bound
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limits[i] > 0 && secs >= limits[i]) {
      o.pass = false;
      o.detail += "; runtime " + fmt("%.1f", secs) + " s exceeds " + fmt("%.0f", limits[i]) + " s";
    }
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
