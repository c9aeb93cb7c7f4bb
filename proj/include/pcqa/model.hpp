#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcqa/autodiff.hpp"
#include "pcqa/layers.hpp"
#include "pcqa/preprocess.hpp"
#include "pcqa/tensor.hpp"

namespace pcqa {

struct ModelConfig {
  std::array<std::size_t, 3> block_widths = {64, 128, 256};
  std::size_t heads = 4;
  std::size_t patch_size = 512;
  std::vector<std::size_t> head_hidden = {128, 32};
  std::uint64_t seed = 0;
  double norm_epsilon = 1e-10;  // why so small: see GraphNormParams::epsilon

  std::size_t aggregation_dim() const { return 2 * block_widths[2]; }
};

void validate(const ModelConfig& cfg);

struct BlockParams {
  EmbeddingParams geom_embed, color_embed;
  AttentionParams self_attn, cross_attn;
  GraphNormParams geom_norm, color_norm;
};

struct DenseParams {
  Tensor w, b;
};

struct ModelParams {
  ModelConfig config;
  std::array<BlockParams, 3> blocks;
  AttentionParams patch_attn;
  std::vector<DenseParams> head;

  // Visits every learnable tensor in a fixed order under a stable name; the
  // same order underpins initialization, serialization, optimizer state, and
  // gradient collection.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    auto embed = [&](const std::string& pre, auto& e) {
      f(pre + ".w1", e.w1);
      f(pre + ".b1", e.b1);
      f(pre + ".w2", e.w2);
      f(pre + ".b2", e.b2);
    };
    auto attn = [&](const std::string& pre, auto& a) {
      f(pre + ".wq", a.wq);
      f(pre + ".wk", a.wk);
      f(pre + ".wv", a.wv);
      f(pre + ".wo", a.wo);
    };
    auto norm = [&](const std::string& pre, auto& n) {
      f(pre + ".alpha", n.alpha);
      f(pre + ".gamma", n.gamma);
      f(pre + ".beta", n.beta);
    };
    for (std::size_t b = 0; b < self.blocks.size(); ++b) {
      const std::string pre = "block" + std::to_string(b) + ".";
      auto& blk = self.blocks[b];
      embed(pre + "geom_embed", blk.geom_embed);
      embed(pre + "color_embed", blk.color_embed);
      attn(pre + "self_attn", blk.self_attn);
      attn(pre + "cross_attn", blk.cross_attn);
      norm(pre + "geom_norm", blk.geom_norm);
      norm(pre + "color_norm", blk.color_norm);
    }
    attn("patch_attn", self.patch_attn);
    for (std::size_t i = 0; i < self.head.size(); ++i) {
      const std::string pre = "head" + std::to_string(i) + ".";
      f(pre + "w", self.head[i].w);
      f(pre + "b", self.head[i].b);
    }
  }
};

struct BlockNodes {
  EmbeddingNodes geom_embed, color_embed;
  AttentionNodes self_attn, cross_attn;
  GraphNormNodes geom_norm, color_norm;
};

struct DenseNodes {
  Node *w, *b;
};

// The parameter set lifted into one Graph. `leaves` lists every parameter node
// in for_each_tensor order, so gradients read back positionally.
struct ModelNodes {
  std::array<BlockNodes, 3> blocks;
  AttentionNodes patch_attn;
  std::vector<DenseNodes> head;
  std::vector<Node*> leaves;
};

// Allocates zero tensors of the shapes the config dictates.
ModelParams make_params(const ModelConfig& cfg);

// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))) from a counter-based
// generator keyed on cfg.seed; biases and beta zero; alpha and gamma one.
ModelParams init_model(const ModelConfig& cfg);

ModelNodes lift(Graph& g, const ModelParams& params);

// Wires pre-existing leaves (in for_each_tensor order) into a ModelNodes; used
// by gradient checking, which owns leaf creation.
ModelNodes bind_model(const std::vector<Node*>& leaves, const ModelConfig& cfg);

// Per-partition forward pass: three fusion blocks per patch, point aggregation,
// patch aggregation across the partition's patches, then the quality head.
Node* partition_score(Graph& g, const PartitionPatches& patches, const ModelNodes& nodes,
                      const ModelConfig& cfg);

// Mean of the per-partition scores in ascending partition order.
Node* cloud_score(Graph& g, const std::vector<PartitionPatches>& partitions,
                  const ModelNodes& nodes, const ModelConfig& cfg);

double partition_forward(const PartitionPatches& patches, const ModelParams& params);

double predict_patches(const std::vector<PartitionPatches>& partitions, const ModelParams& params,
                       std::size_t threads = 1);

double predict(const PointCloud& pc, const ModelParams& params, const PreprocessConfig& pre_cfg,
               std::size_t threads = 1);

// Versioned container: magic, format version, config block, then named tensors
// with shapes and little-endian 64-bit payloads. Bit-exact round trip.
std::string save_weights(const ModelParams& params);
ModelParams load_weights(std::string_view bytes);
void write_weights_file(const std::string& path, const ModelParams& params);
ModelParams read_weights_file(const std::string& path);

}  // namespace pcqa
