#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcqa/errors.hpp"
#include "pcqa/metrics.hpp"
#include "pcqa/model.hpp"
#include "pcqa/preprocess.hpp"
#include "pcqa/rng.hpp"
#include "pcqa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcqa;

namespace {

constexpr int kReportVersion = 1;

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

std::size_t resolve_threads(long flag) {
  if (flag > 0) return std::size_t(flag);
  if (const char* env = std::getenv("PCQA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v <= 0)
      throw InputError("PCQA_THREADS: expected a positive integer, got '" + std::string(env) + "'");
    return std::size_t(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::size_t parse_partitions(const std::string& text) {
  if (text == "auto") return 0;
  try {
    const long v = std::stol(text);
    if (v < 1) throw std::out_of_range("");
    return std::size_t(v);
  } catch (const std::exception&) {
    throw InputError("--partitions: expected 'auto' or a positive integer, got '" + text + "'");
  }
}

struct ModelFlags {
  std::vector<std::size_t> widths = {64, 128, 256};
  std::size_t heads = 4;
  std::size_t patch_size = 512;
  std::vector<std::size_t> head_hidden = {128, 32};
  double norm_eps = 1e-10;

  ModelConfig to_config(std::uint64_t seed) const {
    if (widths.size() != 3)
      throw InputError("--widths: exactly three block widths required");
    ModelConfig cfg;
    cfg.block_widths = {widths[0], widths[1], widths[2]};
    cfg.heads = heads;
    cfg.patch_size = patch_size;
    cfg.head_hidden = head_hidden;
    cfg.seed = seed;
    cfg.norm_epsilon = norm_eps;
    validate(cfg);
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
  cmd->add_option("--widths", mf.widths, "three per-block attention widths")->delimiter(',');
  cmd->add_option("--heads", mf.heads, "attention heads at every layer");
  cmd->add_option("--patch-size", mf.patch_size, "points per patch");
  cmd->add_option("--head-hidden", mf.head_hidden, "hidden widths of the quality head")
      ->delimiter(',');
  cmd->add_option("--norm-eps", mf.norm_eps, "normalization variance offset");
}

json config_echo(const ModelConfig& m, const PreprocessConfig& p) {
  return json{{"block_widths", m.block_widths},
              {"heads", m.heads},
              {"patch_size", m.patch_size},
              {"head_hidden", m.head_hidden},
              {"norm_epsilon", m.norm_epsilon},
              {"partitions", p.partitions},
              {"partition_bounds", {p.min_partitions, p.max_partitions}}};
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path + ": cannot open for writing");
  out << text;
  if (!out) throw InputError(path + ": write failed");
}

void write_trace_csv(const std::string& path, const std::vector<TraceEntry>& trace) {
  std::ostringstream out;
  out << "epoch,step,stimulus,loss\n";
  char buf[64];
  for (const TraceEntry& e : trace) {
    std::snprintf(buf, sizeof buf, "%.17g", e.loss);
    out << e.epoch << ',' << e.step << ',' << e.stimulus << ',' << buf << '\n';
  }
  write_text_file(path, out.str());
}

// ---- preprocess ------------------------------------------------------------

int run_preprocess(const std::string& input, const std::string& out_dir,
                   std::size_t patch_size, const std::string& partitions, long threads_flag) {
  const std::size_t threads = resolve_threads(threads_flag);
  PreprocessConfig cfg;
  cfg.patch_size = patch_size;
  cfg.partitions = parse_partitions(partitions);

  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& entry : fs::directory_iterator(input))
      if (entry.is_regular_file() && entry.path().extension() == ".ply")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError(input + ": no .ply files found");
  } else {
    files.push_back(input);
  }
  fs::create_directories(out_dir);

  for (const fs::path& file : files) {
    const std::string bytes = read_file_bytes(file.string());
    std::vector<PartitionPatches> parts;
    try {
      const PointCloud pc = parse_ply(bytes, file.filename().string());
      parts = preprocess_cloud(pc, cfg, threads);
    } catch (const InputError& e) {
      throw InputError(file.string() + ": " + e.what());
    }
    const fs::path cache = fs::path(out_dir) / (file.stem().string() + ".patches");
    save_patches(cache.string(), parts, cfg);
    std::size_t patch_count = 0;
    for (const PartitionPatches& pp : parts) patch_count += pp.size();
    std::printf("%s: partitions=%zu patches=%zu\n", file.filename().c_str(), parts.size(),
                patch_count);
  }
  return 0;
}

// ---- train -----------------------------------------------------------------

struct EvalRow {
  std::string path;
  double mos = 0.0;
  double prediction = 0.0;
  int fold = -1;
};

json rows_to_json(const std::vector<EvalRow>& rows) {
  json arr = json::array();
  for (const EvalRow& r : rows) {
    json row{{"path", r.path}, {"mos", r.mos}, {"prediction", r.prediction}};
    if (r.fold >= 0) row["fold"] = r.fold;
    arr.push_back(std::move(row));
  }
  return arr;
}

std::vector<EvalRow> predict_set(const DatasetManifest& manifest, const std::string& base_dir,
                                 const ModelParams& params, const PreprocessConfig& pre,
                                 std::size_t threads, int fold) {
  const auto set = load_training_set(manifest, base_dir, pre, threads);
  std::vector<EvalRow> rows;
  rows.reserve(set.size());
  for (const TrainStimulus& st : set)
    rows.push_back({st.path, st.mos, predict_patches(st.partitions, params), fold});
  return rows;
}

ScorePairs to_pairs(const std::vector<EvalRow>& rows) {
  ScorePairs p;
  for (const EvalRow& r : rows) {
    p.predictions.push_back(r.prediction);
    p.targets.push_back(r.mos);
  }
  return p;
}

int run_train(const std::string& manifest_path, const std::string& out,
              const std::string& folds_text, std::size_t epochs, double lr, std::uint64_t seed,
              std::size_t max_steps, std::size_t checkpoint_interval, const ModelFlags& mf,
              const std::string& partitions, const std::string& report_path,
              const std::string& trace_path, long threads_flag) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t threads = resolve_threads(threads_flag);
  const DatasetManifest manifest = load_manifest(read_file_bytes(manifest_path));
  const std::string base_dir = fs::path(manifest_path).parent_path().string();

  TrainConfig tcfg;
  tcfg.learning_rate = lr;
  tcfg.epochs = epochs;
  tcfg.seed = seed;
  tcfg.max_steps = max_steps;

  json report{{"report_version", kReportVersion}, {"seed", seed}};

  if (folds_text == "none") {
    const ModelConfig mcfg = mf.to_config(seed);
    PreprocessConfig pre;
    pre.patch_size = mcfg.patch_size;
    pre.partitions = parse_partitions(partitions);
    const auto data = load_training_set(manifest, base_dir, pre, threads);
    EpochCallback cb;
    if (checkpoint_interval > 0)
      cb = [&](std::size_t epoch, const ModelParams& snapshot) {
        if ((epoch + 1) % checkpoint_interval == 0)
          write_weights_file(out + ".epoch" + std::to_string(epoch), snapshot);
      };
    const TrainResult result = train(data, mcfg, tcfg, cb);
    write_weights_file(out, result.params);
    if (!trace_path.empty()) write_trace_csv(trace_path, result.trace);
    std::fprintf(stderr, "trained %zu stimuli for %zu steps\n", data.size(),
                 result.trace.size());
    report["command"] = "train";
    report["config"] = config_echo(mcfg, pre);
    report["stimuli"] = json::array();
    for (const auto& st : data)
      report["stimuli"].push_back({{"path", st.path}, {"mos", st.mos}});
  } else {
    std::size_t k = 0;
    try {
      k = std::stoul(folds_text);
    } catch (const std::exception&) {
      throw InputError("--folds: expected 'none' or an integer, got '" + folds_text + "'");
    }
    tcfg.fold_count = k;
    const auto splits = kfold_split(manifest, k, seed);
    fs::create_directories(out);
    if (!trace_path.empty()) fs::create_directories(trace_path);

    std::vector<EvalRow> all_rows;
    json folds = json::array();
    double plcc_sum = 0.0, srocc_sum = 0.0;
    ModelConfig mcfg_echo;
    PreprocessConfig pre_echo;
    for (std::size_t f = 0; f < splits.size(); ++f) {
      const ModelConfig mcfg = mf.to_config(seed + f);
      PreprocessConfig pre;
      pre.patch_size = mcfg.patch_size;
      pre.partitions = parse_partitions(partitions);
      mcfg_echo = mcfg;
      pre_echo = pre;
      TrainConfig fold_cfg = tcfg;
      fold_cfg.seed = seed + f;
      const auto data = load_training_set(splits[f].train, base_dir, pre, threads);
      const TrainResult result = train(data, mcfg, fold_cfg);
      const fs::path weights = fs::path(out) / ("fold" + std::to_string(f) + ".weights");
      write_weights_file(weights.string(), result.params);
      if (!trace_path.empty())
        write_trace_csv((fs::path(trace_path) / ("fold" + std::to_string(f) + ".csv")).string(),
                        result.trace);
      auto rows = predict_set(splits[f].test, base_dir, result.params, pre, threads, int(f));
      const ScorePairs pairs = to_pairs(rows);
      const double p = plcc(pairs), s = srocc(pairs);
      plcc_sum += p;
      srocc_sum += s;
      folds.push_back({{"fold", f},
                       {"plcc", p},
                       {"srocc", s},
                       {"test_size", rows.size()},
                       {"weights", weights.string()}});
      all_rows.insert(all_rows.end(), rows.begin(), rows.end());
      std::fprintf(stderr, "fold %zu: trained %zu, tested %zu, plcc=%.4f srocc=%.4f\n", f,
                   data.size(), rows.size(), p, s);
    }
    report["command"] = "train";
    report["config"] = config_echo(mcfg_echo, pre_echo);
    report["folds"] = folds;
    report["aggregate"] = {{"plcc", plcc_sum / double(splits.size())},
                           {"srocc", srocc_sum / double(splits.size())}};
    report["stimuli"] = rows_to_json(all_rows);
  }

  report["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!report_path.empty())
    write_text_file(report_path, report.dump(2) + "\n");
  else if (folds_text != "none")
    write_text_file((fs::path(out) / "report.json").string(), report.dump(2) + "\n");
  return 0;
}

// ---- predict ---------------------------------------------------------------

int run_predict(const std::string& weights, const std::string& input,
                const std::string& partitions, long threads_flag) {
  const std::size_t threads = resolve_threads(threads_flag);
  const ModelParams params = read_weights_file(weights);
  PreprocessConfig pre;
  pre.patch_size = params.config.patch_size;
  pre.partitions = parse_partitions(partitions);
  const std::string bytes = read_file_bytes(input);
  PointCloud pc;
  try {
    pc = parse_ply(bytes, fs::path(input).filename().string());
  } catch (const InputError& e) {
    throw InputError(input + ": " + e.what());
  }
  std::printf("%.10g\n", predict(pc, params, pre, threads));
  return 0;
}

// ---- eval ------------------------------------------------------------------

int run_eval(const std::string& weights_path, const std::string& manifest_path,
             const std::string& partitions, const std::string& report_path, long threads_flag) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t threads = resolve_threads(threads_flag);
  const DatasetManifest manifest = load_manifest(read_file_bytes(manifest_path));
  const std::string base_dir = fs::path(manifest_path).parent_path().string();

  json report{{"report_version", kReportVersion}, {"command", "eval"}};
  std::vector<EvalRow> rows;

  if (fs::is_directory(weights_path)) {
    if (!manifest.has_folds())
      throw InputError(manifest_path +
                       ": per-fold evaluation needs a manifest with a fold column");
    const int fold_count = manifest.fold_count();
    json folds = json::array();
    double plcc_sum = 0.0, srocc_sum = 0.0;
    ModelConfig mcfg_echo;
    PreprocessConfig pre_echo;
    for (int f = 0; f < fold_count; ++f) {
      const fs::path weights_file =
          fs::path(weights_path) / ("fold" + std::to_string(f) + ".weights");
      const ModelParams params = read_weights_file(weights_file.string());
      PreprocessConfig pre;
      pre.patch_size = params.config.patch_size;
      pre.partitions = parse_partitions(partitions);
      mcfg_echo = params.config;
      pre_echo = pre;
      DatasetManifest subset;
      for (const ManifestEntry& e : manifest.entries)
        if (e.fold && *e.fold == f) subset.entries.push_back(e);
      if (subset.entries.empty())
        throw InputError(manifest_path + ": fold " + std::to_string(f) + " has no stimuli");
      auto fold_rows = predict_set(subset, base_dir, params, pre, threads, f);
      const ScorePairs pairs = to_pairs(fold_rows);
      const double p = plcc(pairs), s = srocc(pairs);
      plcc_sum += p;
      srocc_sum += s;
      folds.push_back(
          {{"fold", f}, {"plcc", p}, {"srocc", s}, {"test_size", fold_rows.size()}});
      rows.insert(rows.end(), fold_rows.begin(), fold_rows.end());
    }
    report["config"] = config_echo(mcfg_echo, pre_echo);
    report["folds"] = folds;
    report["aggregate"] = {{"plcc", plcc_sum / double(fold_count)},
                           {"srocc", srocc_sum / double(fold_count)}};
  } else {
    const ModelParams params = read_weights_file(weights_path);
    PreprocessConfig pre;
    pre.patch_size = params.config.patch_size;
    pre.partitions = parse_partitions(partitions);
    rows = predict_set(manifest, base_dir, params, pre, threads, -1);
    const ScorePairs pairs = to_pairs(rows);
    report["config"] = config_echo(params.config, pre);
    report["aggregate"] = {{"plcc", plcc(pairs)}, {"srocc", srocc(pairs)}};
  }

  report["stimuli"] = rows_to_json(rows);
  report["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::string text = report.dump(2) + "\n";
  if (report_path.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_text_file(report_path, text);
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, bool corrupt) {
  ModelConfig cfg;
  cfg.block_widths = {4, 4, 4};
  cfg.heads = 2;
  cfg.patch_size = 6;
  cfg.head_hidden = {4};
  cfg.seed = seed;
  // Conditioning choice, not a correctness one: at width 4 a relu column can
  // die on every row, and a tiny variance offset would put the difference
  // quotient across a bend of rsqrt.
  cfg.norm_epsilon = 1e-5;

  CounterRng data_rng(13);
  std::vector<PartitionPatches> partitions(1);
  partitions[0].resize(2);
  for (Patch& p : partitions[0]) {
    p.geometry.resize(cfg.patch_size);
    p.color.resize(cfg.patch_size);
    for (std::size_t i = 0; i < cfg.patch_size; ++i)
      for (int a = 0; a < 3; ++a) {
        p.geometry[i][a] = data_rng.uniform(-1.0, 1.0);
        p.color[i][a] = data_rng.uniform();
      }
  }

  // Generic parameter point: a fresh initialization at width 4 sits in a
  // near-degenerate region (attention close to uniform, activations close to
  // the relu kink) where the difference quotient itself is unreliable.
  ModelParams shape = make_params(cfg);
  CounterRng rng(seed, 1234);
  std::vector<Tensor> params;
  shape.for_each_tensor([&](const std::string&, const Tensor& t) {
    Tensor r = t;
    for (double& v : r.data) v = rng.uniform(-0.6, 0.6);
    params.push_back(r);
  });

  auto build = [&](Graph& g, const std::vector<Node*>& leaves) -> Node* {
    ModelNodes nodes = bind_model(leaves, cfg);
    Node* score = cloud_score(g, partitions, nodes, cfg);
    Node* diff = g.add(score, g.leaf(Tensor::scalar(-2.0)));
    Node* loss = g.mul(diff, diff);
    if (corrupt) {
      // Smuggle a parameter-dependent term past the graph as a constant: the
      // numeric derivative sees it, the analytic one cannot. The checker must
      // call this out.
      loss = g.add(loss, g.leaf(Tensor::scalar(0.25 * leaves[0]->value.at(0, 0))));
    }
    return loss;
  };
  const GradCheckResult r = finite_difference_check(build, params, 1e-5);
  std::printf("max relative error %.3e (parameter %zu, coordinate %zu)\n", r.max_rel_err,
              r.worst_param, r.worst_coord);
  return r.max_rel_err < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"no-reference point-cloud quality assessment"};
  app.require_subcommand(1);

  // preprocess
  auto* pp = app.add_subcommand("preprocess", "slice clouds and cache patches");
  std::string pp_input, pp_out, pp_partitions = "auto";
  std::size_t pp_patch_size = 512;
  std::uint64_t pp_seed = 0;
  long pp_threads = 0;
  pp->add_option("--input", pp_input, "PLY file or directory of .ply files")->required();
  pp->add_option("--out", pp_out, "output directory for patch caches")->required();
  pp->add_option("--patch-size", pp_patch_size, "points per patch");
  pp->add_option("--partitions", pp_partitions, "'auto' or a fixed partition count");
  pp->add_option("--seed", pp_seed, "accepted for interface stability; preprocessing is deterministic");
  pp->add_option("--threads", pp_threads, "worker threads (default: machine parallelism)");

  // train
  auto* tr = app.add_subcommand("train", "fit a model to a manifest");
  std::string tr_manifest, tr_out, tr_folds = "none", tr_partitions = "auto";
  std::string tr_report, tr_trace;
  std::size_t tr_epochs = 120, tr_max_steps = 0, tr_checkpoint = 0;
  double tr_lr = 1e-4;
  std::uint64_t tr_seed = 0;
  long tr_threads = 0;
  ModelFlags tr_model;
  tr->add_option("--manifest", tr_manifest, "CSV manifest: path,mos,reference_id[,fold]")
      ->required();
  tr->add_option("--out", tr_out, "weights file (or directory with --folds)")->required();
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--lr", tr_lr, "Adam learning rate");
  tr->add_option("--seed", tr_seed, "initialization and shuffling seed");
  tr->add_option("--folds", tr_folds, "'none' or a cross-validation fold count");
  tr->add_option("--max-steps", tr_max_steps, "cap on optimizer steps, 0 = none");
  tr->add_option("--checkpoint-interval", tr_checkpoint,
                 "write a checkpoint every N epochs, 0 = off");
  tr->add_option("--partitions", tr_partitions, "'auto' or a fixed partition count");
  tr->add_option("--report", tr_report, "write the run report JSON here");
  tr->add_option("--trace", tr_trace, "loss trace CSV (a directory with --folds)");
  tr->add_option("--threads", tr_threads, "worker threads for preprocessing");
  add_model_flags(tr, tr_model);

  // predict
  auto* pr = app.add_subcommand("predict", "score one point cloud");
  std::string pr_weights, pr_input, pr_partitions = "auto";
  long pr_threads = 0;
  pr->add_option("--weights", pr_weights, "weights file")->required();
  pr->add_option("--input", pr_input, "PLY file")->required();
  pr->add_option("--partitions", pr_partitions, "'auto' or a fixed partition count");
  pr->add_option("--threads", pr_threads, "worker threads");

  // eval
  auto* ev = app.add_subcommand("eval", "correlate predictions with MOS");
  std::string ev_weights, ev_manifest, ev_partitions = "auto", ev_report;
  long ev_threads = 0;
  ev->add_option("--weights", ev_weights, "weights file, or directory of fold<k>.weights")
      ->required();
  ev->add_option("--manifest", ev_manifest, "CSV manifest: path,mos,reference_id[,fold]")
      ->required();
  ev->add_option("--partitions", ev_partitions, "'auto' or a fixed partition count");
  ev->add_option("--report", ev_report, "write the report here instead of stdout");
  ev->add_option("--threads", ev_threads, "worker threads");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of the gradients");
  std::uint64_t gc_seed = 2;
  bool gc_corrupt = false;
  gc->add_option("--seed", gc_seed, "parameter draw seed");
  gc->add_flag("--corrupt-gradient", gc_corrupt,
               "sabotage one gradient to prove the check can fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (pp->parsed())
      return run_preprocess(pp_input, pp_out, pp_patch_size, pp_partitions, pp_threads);
    if (tr->parsed())
      return run_train(tr_manifest, tr_out, tr_folds, tr_epochs, tr_lr, tr_seed, tr_max_steps,
                       tr_checkpoint, tr_model, tr_partitions, tr_report, tr_trace, tr_threads);
    if (pr->parsed()) return run_predict(pr_weights, pr_input, pr_partitions, pr_threads);
    if (ev->parsed()) return run_eval(ev_weights, ev_manifest, ev_partitions, ev_report, ev_threads);
    if (gc->parsed()) return run_gradcheck(gc_seed, gc_corrupt);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
