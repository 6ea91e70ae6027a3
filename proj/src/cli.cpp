#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include "connector/errors.hpp"
#include "connector/runner.hpp"

namespace connector {

namespace {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {
    const char* env = std::getenv("CONNECTOR_LOG");
    if (!env) return;
    const std::string v(env);
    if (v == "error") level_ = Level::error;
    else if (v == "warn") level_ = Level::warn;
    else if (v == "info") level_ = Level::info;
    else if (v == "debug") level_ = Level::debug;
    else err_ << "warn: ignoring CONNECTOR_LOG='" << v << "'\n";
  }

  void operator()(Level l, const std::string& msg) const {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (l <= level_) err_ << names[static_cast<int>(l)] << ": " << msg << '\n';
  }

 private:
  std::ostream& err_;
  Level level_ = Level::warn;
};

struct Options {
  std::string config, out, task = "node-classification", embeddings, labels, resume;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double ratio = 0.5;
  bool deterministic = false;
};

RunConfig load_with_overrides(const Options& o, const CLI::App& sub) {
  RunConfig rc = parse_config(o.config);
  if (sub.count("--seed")) rc.seed = o.seed;
  if (sub.count("--threads")) rc.threads = o.threads == 0 ? hardware_threads() : o.threads;
  if (sub.count("--deterministic")) rc.deterministic = true;
  if (sub.count("--out")) rc.output_dir = std::filesystem::absolute(o.out);
  if (sub.get_option_no_throw("--resume") && sub.count("--resume")) rc.resume = std::filesystem::absolute(o.resume);
  return rc;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

int cmd_train(const Options& o, const CLI::App& sub, std::ostream& out, const Log& log) {
  const RunConfig rc = load_with_overrides(o, sub);
  log(Level::info, "training " + rc.model + " with seed " + std::to_string(rc.seed));
  const RunResult result = run_model(rc);
  for (const auto& w : result.warnings) log(Level::warn, w);
  write_run_outputs(rc, result);
  out << metrics_text(result.metrics);
  log(Level::info, "outputs written to " + rc.output_dir.string());
  return kExitOk;
}

int cmd_evaluate(const Options& o, const CLI::App& sub, std::ostream& out, const Log& log) {
  if (o.task != "node-classification")
    throw UsageError("unknown task '" + o.task + "'; supported: node-classification");
  if (o.embeddings.empty() || o.labels.empty())
    throw UsageError("evaluate needs --embeddings and --labels");
  const auto nc = evaluate_embedding_file(o.embeddings, o.labels, o.ratio, o.seed);
  for (const auto& w : nc.split.warnings) log(Level::warn, w);
  Json metrics{{"accuracy", nc.report.accuracy},
               {"micro_f1", nc.report.micro_f1},
               {"macro_f1", nc.report.macro_f1},
               {"train_size", nc.split.train.size()},
               {"test_size", nc.split.test.size()}};
  if (sub.count("--out")) {
    std::filesystem::create_directories(o.out);
    write_file(std::filesystem::path(o.out) / "metrics.json", metrics.dump(2) + "\n");
    write_file(std::filesystem::path(o.out) / "metrics.txt", metrics_text(metrics));
    Json manifest{{"task", o.task},
                  {"embeddings", std::filesystem::absolute(o.embeddings).string()},
                  {"labels", std::filesystem::absolute(o.labels).string()},
                  {"ratio", o.ratio},
                  {"seed", o.seed},
                  {"versions", {{"connector", kVersion}}}};
    write_file(std::filesystem::path(o.out) / "manifest.json", manifest.dump(2) + "\n");
  }
  out << metrics_text(metrics);
  return kExitOk;
}

int cmd_walk(const Options& o, const CLI::App& sub, std::ostream& out, const Log& log) {
  const RunConfig rc = load_with_overrides(o, sub);
  const auto corpus = walk_corpus(rc);
  std::filesystem::create_directories(rc.output_dir);
  write_file(rc.output_dir / "walks.txt", corpus_text(corpus));
  write_file(rc.output_dir / "manifest.json", manifest_json(rc).dump(2) + "\n");
  out << "walks " << corpus.corpus.walks.size() << "\n";
  log(Level::info, "walks written to " + (rc.output_dir / "walks.txt").string());
  return kExitOk;
}

int cmd_export(const Options& o, const CLI::App& sub, std::ostream& out, const Log& log) {
  const RunConfig rc = load_with_overrides(o, sub);
  const auto files = export_graph(rc);
  for (const auto& f : files) {
    out << f.string() << "\n";
    log(Level::info, "exported " + f.string());
  }
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"Graph embedding toolkit", "connector"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration (JSON)")->required();
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--threads", o.threads, "Worker cap, 0 for all cores");
    sub->add_flag("--deterministic", o.deterministic, "Single worker everywhere");
    sub->add_option("--out", o.out, "Output directory");
  };
  auto* train = app.add_subcommand("train", "Train a model and write embeddings, metrics and a manifest");
  add_config(train);
  train->add_option("--resume", o.resume, "Continue from a checkpoint (KGE and GNN models)");
  auto* walk = app.add_subcommand("walk", "Write the walk corpus of a walk-based model");
  add_config(walk);
  auto* exp = app.add_subcommand("export", "Write the dataset as a plain edge list");
  add_config(exp);
  auto* eval = app.add_subcommand("evaluate", "Score an embedding file on a downstream task");
  eval->add_option("--task", o.task, "Task name")->capture_default_str();
  eval->add_option("--embeddings", o.embeddings, "word2vec text file");
  eval->add_option("--labels", o.labels, "'token class' file");
  eval->add_option("--ratio", o.ratio, "Train share")->capture_default_str();
  eval->add_option("--seed", o.seed, "Split seed");
  eval->add_option("--out", o.out, "Directory for metrics.json and metrics.txt");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(o, *train, out, log);
    if (*eval) return cmd_evaluate(o, *eval, out, log);
    if (*walk) return cmd_walk(o, *walk, out, log);
    if (*exp) return cmd_export(o, *exp, out, log);
  } catch (const UsageError& e) {
    log(Level::error, e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    log(Level::error, e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    log(Level::error, e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log(Level::error, e.what());
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace connector
