// mtlstm: corpus generation, training, rollout and cross-validation from a
// key-value config. Precedence: flags > config file > defaults.

#include "mtlstm/run.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool desk = false;
  std::vector<std::string> sets;
  mtlstm::CommandOptions opts;
  std::string traces, predictor, mapper, encoding, report;
  bool quiet = false;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("--config", a.config, "key-value config file (or a run manifest)");
  sub->add_option("--seed", a.seed, "overrides base_seed");
  sub->add_option("--out", a.out, "output directory");
  sub->add_flag("--desk-scale", a.desk, "start from the desk-scale preset instead of the defaults");
  sub->add_flag("--json", a.opts.json, "machine-readable output on stdout");
  sub->add_option("--set", a.sets, "extra key=value override, repeatable");
  sub->add_option("--threads", a.threads, "folds evaluated concurrently");
  sub->add_flag("-q,--quiet", a.quiet, "no progress lines on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-timescale LSTM behavior forecasting"};
  app.require_subcommand(1);
  app.footer("\nConfig fields (key = value, one per line, '#' comments):\n\n" + mtlstm::describe_fields());

  Args a;
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus into <out>/traces");
  gen->add_flag("--stats", a.opts.stats, "print the label histogram");
  auto* label = app.add_subcommand("label", "apply the rule-based labeler to trace files");
  auto* tp = app.add_subcommand("train-predictor", "train the feature predictor");
  auto* tm = app.add_subcommand("train-mapper", "train the feature-to-label mapper");
  auto* ro = app.add_subcommand("rollout", "forecast every window of the traces");
  ro->add_flag("--vectors", a.opts.vectors, "include predicted feature vectors");
  ro->add_option("--predictor", a.predictor, "predictor checkpoint (default <out>/predictor.ckpt)");
  ro->add_option("--mapper", a.mapper, "mapper checkpoint (default <out>/mapper.ckpt)");
  ro->add_option("--encoding", a.encoding, "encoding file (default <out>/encoding.json)");
  auto* ev = app.add_subcommand("eval", "k-fold cross-validation of baseline-1, lstm and mt-lstm");
  auto* rep = app.add_subcommand("report", "print a saved evaluation report");
  rep->add_option("--report", a.report, "report.json (default <out>/report.json)");
  rep->add_flag("--csv", a.opts.csv, "CSV instead of text");
  for (auto* sub : {gen, label, tp, tm, ro, ev, rep}) {
    add_common(sub, a);
    sub->footer(app.get_footer());
  }
  for (auto* sub : {label, tp, tm, ro, ev}) {
    sub->add_option("--traces", a.traces, "trace directory (default <out>/traces; eval generates when absent)");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    mtlstm::RunConfig cfg = a.desk ? mtlstm::RunConfig::desk_scale() : mtlstm::RunConfig{};
    if (!a.config.empty()) mtlstm::apply_config_file(cfg, a.config);
    for (const auto& kv : a.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw mtlstm::RunConfigError("--set expects key=value, got '" + kv + "'");
      mtlstm::apply_config_text(cfg, kv, "--set");
    }
    if (a.seed) cfg.base_seed = *a.seed;
    if (!a.out.empty()) cfg.out = a.out;
    if (a.threads) cfg.threads = *a.threads;

    a.opts.traces = a.traces;
    a.opts.predictor = a.predictor;
    a.opts.mapper = a.mapper;
    a.opts.encoding = a.encoding;
    a.opts.report = a.report;
    const auto t0 = std::chrono::steady_clock::now();
    if (!a.quiet) {
      a.opts.log = [t0](const std::string& msg) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
      };
    }
    mtlstm::run_command(command, cfg, a.opts, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
