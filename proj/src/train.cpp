#include "pcqa/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pcqa/autodiff.hpp"
#include "pcqa/errors.hpp"
#include "pcqa/rng.hpp"

namespace pcqa {

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
    throw InputError("train config: learning_rate must be finite and >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0))
    throw InputError("train config: beta1 must lie in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw InputError("train config: beta2 must lie in [0, 1)");
  if (!(cfg.eps_adam > 0.0))
    throw InputError("train config: eps_adam must be positive");
  if (cfg.fold_count < 1)
    throw InputError("train config: fold_count must be at least 1");
}

double mse_loss(const std::vector<double>& partition_scores, double mos) {
  if (partition_scores.empty()) throw InputError("loss: no partition scores");
  const double mean =
      std::accumulate(partition_scores.begin(), partition_scores.end(), 0.0) /
      double(partition_scores.size());
  const double d = mean - mos;
  return d * d;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               OptimizerState& state, const TrainConfig& cfg) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: gradient/parameter count mismatch");
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor& p : params) {
      state.m.push_back(Tensor::zeros(p.shape));
      state.v.push_back(Tensor::zeros(p.shape));
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state size mismatch");
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    if (g.shape != p.shape || state.m[i].shape != p.shape)
      throw std::invalid_argument("adam_step: tensor shape mismatch");
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g.data[k];
      v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g.data[k] * g.data[k];
      const double m_hat = m.data[k] / c1;
      const double v_hat = v.data[k] / c2;
      p.data[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
    }
  }
}

namespace {

std::vector<Tensor> flatten(const ModelParams& params) {
  std::vector<Tensor> flat;
  params.for_each_tensor([&](const std::string&, const Tensor& t) { flat.push_back(t); });
  return flat;
}

void unflatten(ModelParams& params, const std::vector<Tensor>& flat) {
  std::size_t i = 0;
  params.for_each_tensor([&](const std::string&, Tensor& t) { t = flat[i++]; });
}

}  // namespace

TrainResult train(const std::vector<TrainStimulus>& data, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  validate(model_cfg);
  validate(cfg);
  if (data.empty()) throw InputError("train: empty training set");
  for (const TrainStimulus& st : data)
    if (st.partitions.empty())
      throw InputError("train: stimulus has no partitions: " + st.path);

  TrainResult result{init_model(model_cfg), {}};
  std::vector<Tensor> flat = flatten(result.params);
  OptimizerState state;
  CounterRng shuffle_rng(cfg.seed, 7);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  bool capped = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !capped; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    for (std::size_t idx : order) {
      if (cfg.max_steps != 0 && step >= cfg.max_steps) {
        capped = true;
        break;
      }
      const TrainStimulus& st = data[idx];
      Graph g;
      std::vector<Node*> leaves;
      leaves.reserve(flat.size());
      for (const Tensor& t : flat) leaves.push_back(g.leaf(t));
      ModelNodes nodes = bind_model(leaves, model_cfg);
      Node* score = cloud_score(g, st.partitions, nodes, model_cfg);
      Node* diff = g.add(score, g.leaf(Tensor::scalar(-st.mos)));
      Node* loss = g.mul(diff, diff);
      g.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(leaves.size());
      for (Node* leaf : leaves) grads.push_back(leaf->grad);
      adam_step(flat, grads, state, cfg);
      result.trace.push_back({epoch, step, st.path, loss->value.at(0, 0)});
      ++step;
    }
    if (on_epoch && !capped) {
      ModelParams snapshot = result.params;
      unflatten(snapshot, flat);
      on_epoch(epoch, snapshot);
    }
  }

  unflatten(result.params, flat);
  return result;
}

namespace {

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

bool is_absolute(const std::string& path) { return !path.empty() && path.front() == '/'; }

}  // namespace

std::vector<TrainStimulus> load_training_set(const DatasetManifest& manifest,
                                             const std::string& base_dir,
                                             const PreprocessConfig& pre_cfg,
                                             std::size_t threads) {
  const std::size_t n = manifest.entries.size();
  std::vector<TrainStimulus> out(n);
  if (n == 0) return out;
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  std::atomic<std::size_t> cursor{0};
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t worker) {
    try {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= n) return;
        const ManifestEntry& entry = manifest.entries[i];
        const std::string path = is_absolute(entry.stimulus_path) || base_dir.empty()
                                     ? entry.stimulus_path
                                     : base_dir + "/" + entry.stimulus_path;
        try {
          PointCloud pc = parse_ply(read_file_bytes(path), entry.stimulus_path);
          out[i] = {entry.stimulus_path, entry.mos, preprocess_cloud(pc, pre_cfg)};
        } catch (const InputError& e) {
          throw InputError(entry.stimulus_path + ": " + e.what());
        }
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<FoldSplit> kfold_split(const DatasetManifest& manifest, std::size_t k,
                                   std::uint64_t seed) {
  if (k < 2) throw InputError("kfold: need at least 2 folds, got " + std::to_string(k));
  std::set<std::string> distinct;
  for (const ManifestEntry& e : manifest.entries) distinct.insert(e.reference_id);
  if (distinct.size() < k)
    throw InputError("kfold: " + std::to_string(distinct.size()) +
                     " distinct references cannot fill " + std::to_string(k) + " folds");
  std::vector<std::string> refs(distinct.begin(), distinct.end());
  CounterRng rng(seed, 11);
  rng.shuffle(refs);

  std::vector<FoldSplit> folds(k);
  auto fold_index = [&](const std::string& ref) {
    const auto it = std::find(refs.begin(), refs.end(), ref);
    return std::size_t(it - refs.begin()) % k;
  };
  // stable filter keeps each split in manifest order
  for (const ManifestEntry& e : manifest.entries) {
    const std::size_t f = fold_index(e.reference_id);
    for (std::size_t g = 0; g < k; ++g)
      (g == f ? folds[g].test : folds[g].train).entries.push_back(e);
  }
  return folds;
}

}  // namespace pcqa
