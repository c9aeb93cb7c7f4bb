#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <thread>

#include "pcqa/errors.hpp"
#include "pcqa/model.hpp"
#include "pcqa/rng.hpp"

namespace pcqa {

void validate(const ModelConfig& cfg) {
  if (cfg.heads == 0) throw std::invalid_argument("model: heads must be positive");
  for (std::size_t w : cfg.block_widths) {
    if (w == 0) throw std::invalid_argument("model: block widths must be positive");
    if (w % cfg.heads != 0)
      throw std::invalid_argument("model: heads must divide every block width");
  }
  if (cfg.aggregation_dim() % cfg.heads != 0)
    throw std::invalid_argument("model: heads must divide the aggregation width");
  if (cfg.patch_size == 0) throw std::invalid_argument("model: patch_size must be positive");
  if (cfg.norm_epsilon <= 0.0) throw std::invalid_argument("model: norm_epsilon must be positive");
  for (std::size_t h : cfg.head_hidden)
    if (h == 0) throw std::invalid_argument("model: head widths must be positive");
}

ModelParams make_params(const ModelConfig& cfg) {
  validate(cfg);
  ModelParams p;
  p.config = cfg;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t in_w = b == 0 ? 3 : cfg.block_widths[b - 1];
    const std::size_t out_w = cfg.block_widths[b];
    auto embed = [&](EmbeddingParams& e) {
      e.w1 = Tensor::zeros({in_w, out_w});
      e.b1 = Tensor::zeros({1, out_w});
      e.w2 = Tensor::zeros({out_w, out_w});
      e.b2 = Tensor::zeros({1, out_w});
    };
    auto attn = [&](AttentionParams& a) {
      a.wq = Tensor::zeros({out_w, out_w});
      a.wk = Tensor::zeros({out_w, out_w});
      a.wv = Tensor::zeros({out_w, out_w});
      a.wo = Tensor::zeros({out_w, out_w});
      a.heads = cfg.heads;
    };
    auto norm = [&](GraphNormParams& n) {
      n.alpha = Tensor::zeros({1, out_w});
      n.gamma = Tensor::zeros({1, out_w});
      n.beta = Tensor::zeros({1, out_w});
      n.epsilon = cfg.norm_epsilon;
    };
    embed(p.blocks[b].geom_embed);
    embed(p.blocks[b].color_embed);
    attn(p.blocks[b].self_attn);
    attn(p.blocks[b].cross_attn);
    norm(p.blocks[b].geom_norm);
    norm(p.blocks[b].color_norm);
  }
  const std::size_t agg = cfg.aggregation_dim();
  p.patch_attn.wq = Tensor::zeros({agg, agg});
  p.patch_attn.wk = Tensor::zeros({agg, agg});
  p.patch_attn.wv = Tensor::zeros({agg, agg});
  p.patch_attn.wo = Tensor::zeros({agg, agg});
  p.patch_attn.heads = cfg.heads;
  std::vector<std::size_t> dims;
  dims.push_back(agg);
  dims.insert(dims.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
  dims.push_back(1);
  p.head.resize(dims.size() - 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    p.head[i].w = Tensor::zeros({dims[i], dims[i + 1]});
    p.head[i].b = Tensor::zeros({1, dims[i + 1]});
  }
  return p;
}

ModelParams init_model(const ModelConfig& cfg) {
  ModelParams p = make_params(cfg);
  std::uint64_t stream = 0;
  p.for_each_tensor([&](const std::string& name, Tensor& t) {
    const std::uint64_t this_stream = stream++;
    std::string_view leaf = name;
    leaf.remove_prefix(leaf.rfind('.') + 1);
    if (leaf == "alpha" || leaf == "gamma") {
      for (double& v : t.data) v = 1.0;
      return;
    }
    if (leaf[0] == 'b') return;  // biases and beta stay zero
    const double bound = std::sqrt(6.0 / double(t.rows() + t.cols()));
    CounterRng rng(cfg.seed, this_stream);
    for (double& v : t.data) v = rng.uniform(-bound, bound);
  });
  return p;
}

ModelNodes bind_model(const std::vector<Node*>& leaves, const ModelConfig& cfg) {
  validate(cfg);
  const std::size_t expected = 3 * 22 + 4 + 2 * (cfg.head_hidden.size() + 1);
  if (leaves.size() != expected) throw std::invalid_argument("bind_model: leaf count mismatch");
  ModelNodes n;
  std::size_t i = 0;
  auto next = [&] { return leaves[i++]; };
  for (BlockNodes& blk : n.blocks) {
    blk.geom_embed = {next(), next(), next(), next()};
    blk.color_embed = {next(), next(), next(), next()};
    blk.self_attn = {next(), next(), next(), next(), cfg.heads};
    blk.cross_attn = {next(), next(), next(), next(), cfg.heads};
    blk.geom_norm = {next(), next(), next(), cfg.norm_epsilon};
    blk.color_norm = {next(), next(), next(), cfg.norm_epsilon};
  }
  n.patch_attn = {next(), next(), next(), next(), cfg.heads};
  n.head.resize(cfg.head_hidden.size() + 1);
  for (DenseNodes& d : n.head) d = {next(), next()};
  n.leaves = leaves;
  return n;
}

ModelNodes lift(Graph& g, const ModelParams& params) {
  std::vector<Node*> leaves;
  params.for_each_tensor(
      [&](const std::string&, const Tensor& t) { leaves.push_back(g.leaf(t)); });
  return bind_model(leaves, params.config);
}

namespace {

Node* rows_leaf(Graph& g, const std::vector<Vec3>& rows) {
  Tensor t = Tensor::zeros({rows.size(), 3});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int a = 0; a < 3; ++a) t.at(i, std::size_t(a)) = rows[i][std::size_t(a)];
  return g.leaf(std::move(t));
}

}  // namespace

Node* partition_score(Graph& g, const PartitionPatches& patches, const ModelNodes& nodes,
                      const ModelConfig& cfg) {
  if (patches.empty()) throw std::invalid_argument("partition_score: no patches");
  std::vector<Node*> pooled;
  pooled.reserve(patches.size());
  for (const Patch& patch : patches) {
    if (patch.geometry.size() != cfg.patch_size || patch.color.size() != cfg.patch_size)
      throw std::invalid_argument("partition_score: patch rows differ from configured patch_size");
    Node* x_xyz = rows_leaf(g, patch.geometry);
    Node* x_rgb = rows_leaf(g, patch.color);
    for (const BlockNodes& blk : nodes.blocks) {
      Node* geom = feature_embedding(g, x_xyz, blk.geom_embed);
      Node* geom_n = graph_norm(g, multi_head_self_attention(g, geom, blk.self_attn), blk.geom_norm);
      Node* color_n = graph_norm(g, feature_embedding(g, x_rgb, blk.color_embed), blk.color_norm);
      // queries from the color stream interrogate geometry keys/values; the
      // fusion result becomes the next geometry representation
      x_xyz = multi_head_cross_attention(g, color_n, geom_n, blk.cross_attn);
      x_rgb = color_n;
    }
    pooled.push_back(point_aggregation(g, x_xyz));
  }
  Node* stacked = pooled.size() == 1 ? pooled[0] : g.concat_rows(pooled);
  Node* summary = patch_aggregation(g, stacked, nodes.patch_attn);
  Node* h = summary;
  for (std::size_t i = 0; i + 1 < nodes.head.size(); ++i)
    h = g.relu(g.add(g.matmul(h, nodes.head[i].w), nodes.head[i].b));
  return g.add(g.matmul(h, nodes.head.back().w), nodes.head.back().b);
}

Node* cloud_score(Graph& g, const std::vector<PartitionPatches>& partitions,
                  const ModelNodes& nodes, const ModelConfig& cfg) {
  if (partitions.empty()) throw std::invalid_argument("cloud_score: no partitions");
  std::vector<Node*> scores;
  scores.reserve(partitions.size());
  for (const PartitionPatches& patches : partitions)
    scores.push_back(partition_score(g, patches, nodes, cfg));
  if (scores.size() == 1) return scores[0];
  return g.mean_rows(g.concat_rows(scores));
}

double partition_forward(const PartitionPatches& patches, const ModelParams& params) {
  Graph g;
  ModelNodes nodes = lift(g, params);
  return partition_score(g, patches, nodes, params.config)->value.at(0, 0);
}

double predict_patches(const std::vector<PartitionPatches>& partitions, const ModelParams& params,
                       std::size_t threads) {
  if (partitions.empty()) throw std::invalid_argument("predict: no partitions");
  std::vector<double> scores(partitions.size());
  if (threads <= 1 || partitions.size() == 1) {
    for (std::size_t i = 0; i < partitions.size(); ++i)
      scores[i] = partition_forward(partitions[i], params);
  } else {
    std::atomic<std::size_t> cursor{0};
    const std::size_t workers = std::min(threads, partitions.size());
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (;;) {
            std::size_t i = cursor.fetch_add(1);
            if (i >= partitions.size()) return;
            scores[i] = partition_forward(partitions[i], params);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }
  double mean = 0.0;
  for (double s : scores) mean += s;
  return mean / double(scores.size());
}

double predict(const PointCloud& pc, const ModelParams& params, const PreprocessConfig& pre_cfg,
               std::size_t threads) {
  return predict_patches(preprocess_cloud(pc, pre_cfg, threads), params, threads);
}

namespace {

constexpr char kWeightsMagic[8] = {'P', 'C', 'Q', 'A', 'W', 'G', 'T', 'S'};
constexpr std::uint32_t kWeightsVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& s, double v) { put_u64(s, std::bit_cast<std::uint64_t>(v)); }

struct WeightsReader {
  std::string_view bytes;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (pos + n > bytes.size()) throw InputError("weights: truncated file");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes[pos + std::size_t(i)])) << (8 * i);
    pos += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes[pos + std::size_t(i)])) << (8 * i);
    pos += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes.substr(pos, n));
    pos += n;
    return s;
  }
};

}  // namespace

std::string save_weights(const ModelParams& params) {
  std::string buf;
  buf.append(kWeightsMagic, sizeof kWeightsMagic);
  put_u32(buf, kWeightsVersion);
  const ModelConfig& cfg = params.config;
  for (std::size_t w : cfg.block_widths) put_u32(buf, std::uint32_t(w));
  put_u32(buf, std::uint32_t(cfg.heads));
  put_u32(buf, std::uint32_t(cfg.patch_size));
  put_u32(buf, std::uint32_t(cfg.head_hidden.size()));
  for (std::size_t h : cfg.head_hidden) put_u32(buf, std::uint32_t(h));
  put_u64(buf, cfg.seed);
  put_f64(buf, cfg.norm_epsilon);

  std::uint32_t count = 0;
  params.for_each_tensor([&](const std::string&, const Tensor&) { ++count; });
  put_u32(buf, count);
  params.for_each_tensor([&](const std::string& name, const Tensor& t) {
    put_u32(buf, std::uint32_t(name.size()));
    buf.append(name);
    put_u32(buf, std::uint32_t(t.rows()));
    put_u32(buf, std::uint32_t(t.cols()));
    for (double v : t.data) put_f64(buf, v);
  });
  return buf;
}

ModelParams load_weights(std::string_view bytes) {
  if (bytes.size() < sizeof kWeightsMagic ||
      std::memcmp(bytes.data(), kWeightsMagic, sizeof kWeightsMagic) != 0)
    throw InputError("weights: bad magic");
  WeightsReader r{bytes, sizeof kWeightsMagic};
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion)
    throw InputError("weights: unsupported format version " + std::to_string(version));

  ModelConfig cfg;
  for (std::size_t& w : cfg.block_widths) w = r.u32();
  cfg.heads = r.u32();
  cfg.patch_size = r.u32();
  cfg.head_hidden.resize(r.u32());
  if (cfg.head_hidden.size() > 64) throw InputError("weights: implausible head layer count");
  for (std::size_t& h : cfg.head_hidden) h = r.u32();
  cfg.seed = r.u64();
  cfg.norm_epsilon = r.f64();
  ModelParams params;
  try {
    params = make_params(cfg);
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("weights: embedded config invalid: ") + e.what());
  }

  std::map<std::string, Tensor*> by_name;
  params.for_each_tensor([&](const std::string& name, Tensor& t) { by_name[name] = &t; });
  const std::uint32_t count = r.u32();
  if (count != by_name.size())
    throw InputError("weights: tensor count differs from embedded config");
  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len > 4096) throw InputError("weights: implausible tensor name length");
    const std::string name = r.str(name_len);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InputError("weights: unknown tensor '" + name + "'");
    if (seen[name]) throw InputError("weights: duplicate tensor '" + name + "'");
    seen[name] = true;
    const std::size_t rows = r.u32(), cols = r.u32();
    Tensor& t = *it->second;
    if (rows != t.rows() || cols != t.cols())
      throw InputError("weights: shape mismatch for '" + name + "'");
    for (double& v : t.data) v = r.f64();
  }
  if (r.pos != bytes.size()) throw InputError("weights: trailing bytes after payload");
  return params;
}

void write_weights_file(const std::string& path, const ModelParams& params) {
  std::string bytes = save_weights(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("weights: cannot open '" + path + "' for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw InputError("weights: write to '" + path + "' failed");
}

ModelParams read_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("weights: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_weights(bytes);
}

}  // namespace pcqa
