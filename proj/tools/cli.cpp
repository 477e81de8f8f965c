#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/config.hpp"
#include "xmodal/data.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/trainer.hpp"
#include "xmodal/version.hpp"

namespace xmodal::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

// Caller mistakes detected after flag parsing; exit 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void ensure_dir(const fs::path& dir, bool mkdirs) {
  if (dir.empty() || fs::is_directory(dir)) return;
  if (fs::exists(dir)) throw UsageError("'" + dir.string() + "' exists and is not a directory");
  if (!mkdirs) throw UsageError("output directory '" + dir.string() + "' does not exist (pass --mkdirs to create it)");
  fs::create_directories(dir);
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " '" + path.string() + "' not found");
}

void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

// Config file first, then --set overrides in order.
KeyValueConfig assemble_config(const std::string& config_path, const std::vector<std::string>& sets) {
  try {
    KeyValueConfig kv;
    if (!config_path.empty()) {
      require_file(config_path, "config file");
      kv = KeyValueConfig::load(config_path);
    }
    for (const std::string& s : sets) kv.set_override(s);
    return kv;
  } catch (const FormatError& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  }
}

Json config_json(const KeyValueConfig& kv) {
  Json j = Json::object();
  for (const auto& [k, v] : kv.values()) j[k] = v;
  return j;
}

class Manifest {
 public:
  Manifest(std::string command, const CliHooks& hooks) : hooks_(hooks) {
    doc_["command"] = std::move(command);
    doc_["tool_version"] = kVersion;
    doc_["started_utc"] = now();
  }

  Json& operator[](const char* key) { return doc_[key]; }

  void write(const fs::path& path) {
    doc_["finished_utc"] = now();
    write_text(path, doc_.dump(2) + "\n");
  }

 private:
  std::string now() const { return hooks_.clock ? hooks_.clock() : utc_now(); }

  const CliHooks& hooks_;
  Json doc_;
};

fs::path sibling_manifest(const fs::path& out) {
  fs::path m = out;
  m += ".manifest.json";
  return m;
}

// ---- gen-data ----

struct GenDataArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool mkdirs = false;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, const CliHooks& hooks) {
  Manifest manifest("gen-data", hooks);
  KeyValueConfig kv = assemble_config(a.config, a.sets);
  if (a.seed) kv.set("seed", std::to_string(*a.seed));
  const SynthConfig cfg = SynthConfig::from_config(kv);
  kv.require_all_consumed();

  const fs::path path = a.out;
  ensure_dir(path.parent_path(), a.mkdirs);
  const TupleDataset ds = generate_synthetic(cfg);
  save_dataset(ds, path);

  KeyValueConfig resolved;
  cfg.write_to(resolved);
  manifest["config"] = config_json(resolved);
  manifest["inputs"] = {{"config", a.config}};
  manifest["outputs"] = {{"dataset", path.string()}};
  manifest["seed"] = cfg.seed;
  manifest.write(sibling_manifest(path));
  out << "wrote " << ds.size() << " tuples x " << ds.num_modalities << " modalities to " << path.string() << "\n";
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool mkdirs = false;
  std::string resume;
  bool timing = false;
};

std::string breakdown_line(const EpochRecord& r) {
  return "L_MIM=" + fixed(r.train.mim) + " L_MDE=" + fixed(r.train.mde) + " L_MSP=" + fixed(r.train.msp) +
         " total=" + fixed(r.train.total) + " alpha=" + format_double(r.train.alpha) +
         " beta=" + format_double(r.train.beta) + " val_total=" + fixed(r.val_total);
}

int cmd_train(const TrainArgs& a, std::ostream& out, const CliHooks& hooks) {
  Manifest manifest("train", hooks);
  require_file(a.data, "dataset");
  KeyValueConfig kv = assemble_config(a.config, a.sets);
  if (a.epochs) kv.set("epochs", std::to_string(*a.epochs));
  if (a.lr) kv.set("learning_rate", format_double(*a.lr));
  if (a.seed) {
    kv.set("seed", std::to_string(*a.seed));
    kv.set("init_seed", std::to_string(*a.seed));
  }
  const TupleDataset ds = load_dataset(a.data);
  if (!kv.contains("num_modalities")) kv.set("num_modalities", std::to_string(ds.num_modalities));
  if (!kv.contains("input_dims")) kv.set("input_dims", format_size_list(ds.dims()));
  const ModelConfig model_cfg = ModelConfig::from_config(kv);
  const TrainConfig train_cfg = TrainConfig::from_config(kv);
  kv.require_all_consumed();
  if (model_cfg.num_modalities != ds.num_modalities || model_cfg.input_dims != ds.dims()) {
    throw ConfigError("input_dims", "model expects " + format_size_list(model_cfg.input_dims) + " but the dataset has " +
                                        format_size_list(ds.dims()));
  }

  const fs::path dir = a.out_dir;
  ensure_dir(dir, a.mkdirs);
  const std::string echo = config_echo(model_cfg, train_cfg);

  TrainState state;
  if (a.resume.empty()) {
    state = TrainState::fresh(model_cfg);
  } else {
    require_file(a.resume, "checkpoint");
    Checkpoint c = load_checkpoint(a.resume);
    TrainConfig stored = train_config_from_echo(c.config_echo);
    stored.epochs = train_cfg.epochs;
    if (model_config_from_echo(c.config_echo) != model_cfg || stored != train_cfg) {
      throw ConfigError("resume", "checkpoint was written with a different configuration");
    }
    if (c.state.epochs_done > train_cfg.epochs) {
      throw ConfigError("epochs", "checkpoint already has " + std::to_string(c.state.epochs_done) + " epochs");
    }
    state = std::move(c.state);
  }

  const DatasetSplit parts = split(ds, train_cfg.split_fractions, train_cfg.split_seed);
  std::vector<std::string> written;
  std::vector<double> seconds;
  TrainHooks th;
  th.on_epoch_end = [&](const TrainState& s, const EpochRecord& r) {
    seconds.push_back(r.seconds);
    out << "epoch " << s.epochs_done << "/" << train_cfg.epochs << " " << breakdown_line(r) << "\n";
    if (train_cfg.checkpoint_every > 0 && s.epochs_done % train_cfg.checkpoint_every == 0 &&
        s.epochs_done < train_cfg.epochs) {
      const fs::path p = dir / ("checkpoint_e" + std::to_string(s.epochs_done) + ".bin");
      save_checkpoint({echo, s}, p);
      written.push_back(p.string());
    }
  };
  train(state, parts.train, parts.val, train_cfg, th);

  const fs::path ckpt = dir / "checkpoint.bin";
  const fs::path csv = dir / "train_report.csv";
  save_checkpoint({echo, state}, ckpt);
  write_text(csv, state.report.to_csv(a.timing));

  KeyValueConfig resolved;
  model_cfg.write_to(resolved);
  train_cfg.write_to(resolved);
  manifest["config"] = config_json(resolved);
  manifest["inputs"] = {{"dataset", a.data}, {"config", a.config}, {"resume", a.resume}};
  written.push_back(ckpt.string());
  written.push_back(csv.string());
  manifest["outputs"] = written;
  manifest["seed"] = train_cfg.seed;
  manifest["split_sizes"] = {{"train", parts.train.size()}, {"val", parts.val.size()}, {"test", parts.test.size()}};
  manifest["epoch_seconds"] = seconds;
  manifest.write(dir / "manifest.json");

  if (state.report.epochs.empty()) {
    out << "no epochs run\n";
  } else {
    const EpochRecord& last = state.report.epochs.back();
    out << "final epoch " << state.epochs_done << "/" << train_cfg.epochs << ": " << breakdown_line(last) << "\n";
  }
  return kOk;
}

// ---- shared by evaluate / retrieve ----

struct Loaded {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  ModelParams params;
  TupleDataset ds;
  DatasetSplit parts;
};

Loaded load_model_and_data(const std::string& checkpoint, const std::string& data) {
  require_file(checkpoint, "checkpoint");
  require_file(data, "dataset");
  Checkpoint c = load_checkpoint(checkpoint);
  Loaded l{model_config_from_echo(c.config_echo), train_config_from_echo(c.config_echo), std::move(c.state.params),
           load_dataset(data), {}};
  if (l.ds.num_modalities != l.model_cfg.num_modalities || l.ds.dims() != l.model_cfg.input_dims) {
    throw ContractError("dataset widths " + format_size_list(l.ds.dims()) + " do not match the checkpoint's input_dims " +
                        format_size_list(l.model_cfg.input_dims));
  }
  l.parts = split(l.ds, l.train_cfg.split_fractions, l.train_cfg.split_seed);
  return l;
}

const TupleDataset& pick_split(const Loaded& l, const std::string& name) {
  if (name == "train") return l.parts.train;
  if (name == "val") return l.parts.val;
  if (name == "test") return l.parts.test;
  if (name == "all") return l.ds;
  throw UsageError("unknown split '" + name + "' (train, val, test, all)");
}

std::size_t parse_modality(const std::string& s, std::size_t num_modalities) {
  std::size_t m = 0;
  try {
    std::size_t used = 0;
    m = std::stoul(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::logic_error&) {
    throw UsageError("bad modality '" + s + "'");
  }
  if (m >= num_modalities) throw UsageError("modality " + s + " out of range");
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_directions(const std::string& d, std::size_t n) {
  if (d == "both") return {{0, 1}, {1, 0}};
  const auto dash = d.find('-');
  if (dash == std::string::npos) throw UsageError("bad direction '" + d + "' (both, 0-1, 1-0)");
  const std::size_t src = parse_modality(d.substr(0, dash), n);
  const std::size_t tgt = parse_modality(d.substr(dash + 1), n);
  if (src == tgt) throw UsageError("direction needs two different modalities");
  return {{src, tgt}};
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string query_split = "train";
  std::string index_split = "test";
  std::string direction = "both";
  std::size_t k = 8;
  std::string out;
  bool mkdirs = false;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, const CliHooks& hooks) {
  Manifest manifest("evaluate", hooks);
  const Loaded l = load_model_and_data(a.checkpoint, a.data);
  const auto directions = parse_directions(a.direction, l.model_cfg.num_modalities);
  const TupleDataset& queries = pick_split(l, a.query_split);
  const TupleDataset& candidates = pick_split(l, a.index_split);
  const fs::path path = a.out;
  ensure_dir(path.parent_path(), a.mkdirs);

  const EmbeddingIndex query_index = build_index(l.params, queries);
  const EmbeddingIndex candidate_index = build_index(l.params, candidates);
  std::vector<MetricsReport> reports;
  for (const auto& [src, tgt] : directions) {
    reports.push_back(evaluate_cross_modal(candidate_index, query_index, src, tgt, a.k));
  }
  write_text(path, metrics_csv(reports));
  out << summary_table(reports);

  manifest["config"] = {{"query_split", a.query_split}, {"index_split", a.index_split}, {"direction", a.direction},
                        {"k", a.k}, {"exclude_self_tuple", true}};
  manifest["inputs"] = {{"checkpoint", a.checkpoint}, {"dataset", a.data}};
  manifest["outputs"] = {{"metrics", path.string()}};
  manifest["seed"] = l.train_cfg.split_seed;
  manifest["degenerate_embeddings"] = query_index.degenerate_count() + candidate_index.degenerate_count();
  manifest.write(sibling_manifest(path));
  return kOk;
}

// ---- retrieve ----

struct RetrieveArgs {
  std::string checkpoint;
  std::string data;
  std::uint32_t query_id = 0;
  std::size_t query_modality = 0;
  std::size_t target_modality = 1;
  std::string query_split = "train";
  std::string index_split = "test";
  std::size_t k = 8;
  bool keep_self = false;
  std::string out;
  bool mkdirs = false;
};

int cmd_retrieve(const RetrieveArgs& a, std::ostream& out, const CliHooks& hooks) {
  Manifest manifest("retrieve", hooks);
  const Loaded l = load_model_and_data(a.checkpoint, a.data);
  const std::size_t n = l.model_cfg.num_modalities;
  if (a.query_modality >= n || a.target_modality >= n) throw UsageError("modality out of range");
  const TupleDataset& queries = pick_split(l, a.query_split);
  const TupleDataset& candidates = pick_split(l, a.index_split);
  const fs::path path = a.out;
  ensure_dir(path.parent_path(), a.mkdirs);

  const EmbeddingIndex query_index = build_index(l.params, queries);
  const IndexEntry* q = query_index.find(a.query_modality, a.query_id);
  if (!q) throw UsageError("tuple " + std::to_string(a.query_id) + " is not in the " + a.query_split + " split");
  const EmbeddingIndex candidate_index = build_index(l.params, candidates);
  const RankedResult result = retrieve(candidate_index, q->z, a.target_modality, a.k,
                                       a.keep_self ? std::nullopt : std::optional<std::uint32_t>(a.query_id));
  const std::string csv = ranked_csv(a.query_id, result);
  write_text(path, csv);
  out << csv;
  if (result.short_result) out << "note: only " << result.items.size() << " candidates available\n";

  manifest["config"] = {{"query_id", a.query_id},       {"query_modality", a.query_modality},
                        {"target_modality", a.target_modality}, {"query_split", a.query_split},
                        {"index_split", a.index_split}, {"k", a.k},
                        {"exclude_self_tuple", !a.keep_self}};
  manifest["inputs"] = {{"checkpoint", a.checkpoint}, {"dataset", a.data}};
  manifest["outputs"] = {{"ranking", path.string()}};
  manifest["seed"] = l.train_cfg.split_seed;
  manifest.write(sibling_manifest(path));
  return kOk;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::size_t trials = 20;
  std::size_t batch = 4;
  std::vector<std::size_t> dims{8, 8};
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::string out;
  bool mkdirs = false;
};

std::string gradcheck_table(const GradcheckReport& report) {
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %14s  %-6s %s\n", "loss", "max_rel_error", "status", "worst coordinate");
  s += buf;
  for (const ProbeResult& r : report.probes) {
    std::snprintf(buf, sizeof buf, "%-14s %14.3e  %-6s trial %zu %s[%zu] analytic=%.10g numeric=%.10g\n",
                  r.name.c_str(), r.max_error, r.passed ? "PASS" : "FAIL", r.trial, r.input.c_str(), r.index,
                  r.analytic, r.numeric);
    s += buf;
  }
  return s;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err, const CliHooks& hooks) {
  Manifest manifest("gradcheck", hooks);
  if (a.trials < 1) throw UsageError("--trials: at least one trial is required");
  if (a.batch < 2) throw UsageError("--batch: need at least 2 tuples");
  if (a.dims.size() != 2 || a.dims[0] == 0 || a.dims[1] == 0) {
    throw UsageError("--dims: expected two positive widths a,b");
  }
  GradcheckOptions opt;
  opt.trials = a.trials;
  opt.batch = a.batch;
  opt.feature_dim = a.dims[0];
  opt.embedding_dim = a.dims[1];
  opt.seed = a.seed;
  opt.tolerance = a.tolerance;
  opt.step = a.step;
  std::vector<GradProbe> probes = standard_probes();
  probes.insert(probes.end(), hooks.extra_probes.begin(), hooks.extra_probes.end());
  if (!a.out.empty()) ensure_dir(fs::path(a.out).parent_path(), a.mkdirs);

  const GradcheckReport report = run_gradcheck(opt, probes);
  const std::string table = gradcheck_table(report);
  out << table;
  out << (report.passed ? "all losses pass" : "gradient check FAILED") << " (tolerance " << format_double(a.tolerance)
      << ", " << a.trials << " trials, " << fixed(report.seconds, 2) << " s)\n";
  for (const ProbeResult& r : report.probes) {
    if (!r.passed) {
      err << "gradcheck: " << r.name << " failed at trial " << r.trial << ", " << r.input << "[" << r.index
          << "]: relative error " << r.max_error << "\n";
    }
  }

  if (!a.out.empty()) {
    write_text(a.out, table);
    manifest["config"] = {{"trials", a.trials},       {"batch", a.batch}, {"dims", format_size_list(a.dims)},
                          {"tolerance", a.tolerance}, {"step", a.step}};
    manifest["inputs"] = Json::object();
    manifest["outputs"] = {{"report", a.out}};
    manifest["seed"] = a.seed;
    manifest["passed"] = report.passed;
    manifest.write(sibling_manifest(a.out));
  }
  return report.passed ? kOk : kRuntime;
}

void add_config_flags(CLI::App* sub, std::string& config, std::vector<std::string>& sets) {
  sub->add_option("--config", config, "key=value config file");
  sub->add_option("--set", sets, "override one key (key=value), repeatable")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const CliHooks& hooks) {
  CLI::App app{"Cross-modal self-supervised retrieval toolkit", "xmodal"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic multi-modal dataset");
  add_config_flags(gen_cmd, gen.config, gen.sets);
  gen_cmd->add_option("--seed", gen.seed, "dataset seed");
  gen_cmd->add_option("--out", gen.out, "dataset file")->required();
  gen_cmd->add_flag("--mkdirs", gen.mkdirs, "create missing output directories");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train backbones and the shared encoder");
  train_cmd->add_option("--data", tr.data, "dataset file")->required();
  add_config_flags(train_cmd, tr.config, tr.sets);
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--lr", tr.lr, "learning rate");
  train_cmd->add_option("--seed", tr.seed, "sets both the batch seed and init_seed");
  train_cmd->add_option("--out-dir", tr.out_dir)->required();
  train_cmd->add_flag("--mkdirs", tr.mkdirs);
  train_cmd->add_option("--resume", tr.resume, "continue from this checkpoint");
  train_cmd->add_flag("--timing", tr.timing, "write wall-clock seconds into the CSV");

  EvaluateArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "cross-modal retrieval metrics");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--query-split", ev.query_split, "train, val, test or all")->capture_default_str();
  eval_cmd->add_option("--index-split", ev.index_split)->capture_default_str();
  eval_cmd->add_option("--direction", ev.direction, "both, 0-1 or 1-0")->capture_default_str();
  eval_cmd->add_option("--k", ev.k)->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", ev.out, "metrics CSV")->required();
  eval_cmd->add_flag("--mkdirs", ev.mkdirs);

  RetrieveArgs rt;
  CLI::App* ret_cmd = app.add_subcommand("retrieve", "ranked list for one query");
  ret_cmd->add_option("--checkpoint", rt.checkpoint)->required();
  ret_cmd->add_option("--data", rt.data)->required();
  ret_cmd->add_option("--query-id", rt.query_id)->required();
  ret_cmd->add_option("--query-modality", rt.query_modality)->capture_default_str();
  ret_cmd->add_option("--target-modality", rt.target_modality)->capture_default_str();
  ret_cmd->add_option("--query-split", rt.query_split)->capture_default_str();
  ret_cmd->add_option("--index-split", rt.index_split)->capture_default_str();
  ret_cmd->add_option("--k", rt.k)->capture_default_str()->check(CLI::PositiveNumber);
  ret_cmd->add_flag("--keep-self", rt.keep_self, "allow the query's own tuple in the results");
  ret_cmd->add_option("--out", rt.out, "ranked CSV")->required();
  ret_cmd->add_flag("--mkdirs", rt.mkdirs);

  GradcheckArgs gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  gc_cmd->add_option("--trials", gc.trials)->capture_default_str();
  gc_cmd->add_option("--batch", gc.batch)->capture_default_str();
  gc_cmd->add_option("--dims", gc.dims, "feature and embedding width a,b")->delimiter(',')->expected(2);
  gc_cmd->add_option("--seed", gc.seed)->capture_default_str();
  gc_cmd->add_option("--tolerance", gc.tolerance)->capture_default_str();
  gc_cmd->add_option("--step", gc.step)->capture_default_str();
  gc_cmd->add_option("--out", gc.out, "also write the table here");
  gc_cmd->add_flag("--mkdirs", gc.mkdirs);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out, hooks);
    if (train_cmd->parsed()) return cmd_train(tr, out, hooks);
    if (eval_cmd->parsed()) return cmd_evaluate(ev, out, hooks);
    if (ret_cmd->parsed()) return cmd_retrieve(rt, out, hooks);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc, out, err, hooks);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace xmodal::cli
