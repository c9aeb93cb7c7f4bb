#pragma once

// Straight-line re-implementation of the full forward pass with plain loops.
// Shares only the parameter structs with the library; every numeric step is
// written out independently so the two routes cross-check each other.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pcqa/model.hpp"

namespace refmodel {

using pcqa::Tensor;

inline Tensor mat(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

inline Tensor add_row(Tensor x, const Tensor& row) {
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) x.at(i, j) += row.at(0, j);
  return x;
}

inline Tensor relu(Tensor x) {
  for (double& v : x.data) v = std::max(0.0, v);
  return x;
}

inline Tensor embed(const Tensor& x, const pcqa::EmbeddingParams& e) {
  Tensor h = relu(add_row(mat(x, e.w1), e.b1));
  return relu(add_row(mat(h, e.w2), e.b2));
}

inline Tensor attention(const Tensor& q_src, const Tensor& kv_src, const pcqa::AttentionParams& p) {
  const std::size_t n = q_src.rows(), c = q_src.cols(), dh = c / p.heads;
  Tensor q = mat(q_src, p.wq), k = mat(kv_src, p.wk), v = mat(kv_src, p.wv);
  Tensor merged = Tensor::zeros({n, c});
  for (std::size_t h = 0; h < p.heads; ++h) {
    const std::size_t lo = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> w(kv_src.rows());
      for (std::size_t j = 0; j < w.size(); ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d) dot += q.at(i, lo + d) * k.at(j, lo + d);
        w[j] = dot / std::sqrt(double(dh));
      }
      const double mx = *std::max_element(w.begin(), w.end());
      double denom = 0.0;
      for (double& x : w) {
        x = std::exp(x - mx);
        denom += x;
      }
      for (std::size_t j = 0; j < w.size(); ++j)
        for (std::size_t d = 0; d < dh; ++d) merged.at(i, lo + d) += w[j] / denom * v.at(j, lo + d);
    }
  }
  return mat(merged, p.wo);
}

inline Tensor graph_norm(const Tensor& x, const pcqa::GraphNormParams& p) {
  const std::size_t n = x.rows(), f = x.cols();
  Tensor out = Tensor::zeros({n, f});
  for (std::size_t j = 0; j < f; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += x.at(i, j);
    mu /= double(n);
    std::vector<double> y(n);
    double ymu = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = x.at(i, j) - p.alpha.at(0, j) * mu;
      ymu += y[i];
    }
    ymu /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (y[i] - ymu) * (y[i] - ymu);
    var /= double(n);
    for (std::size_t i = 0; i < n; ++i)
      out.at(i, j) = y[i] / std::sqrt(var + p.epsilon) * p.gamma.at(0, j) + p.beta.at(0, j);
  }
  return out;
}

inline Tensor point_aggregation(const Tensor& x) {
  const std::size_t f = x.cols();
  Tensor out = Tensor::zeros({1, 2 * f});
  for (std::size_t j = 0; j < f; ++j) {
    double mx = x.at(0, j), mean = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      mx = std::max(mx, x.at(i, j));
      mean += x.at(i, j);
    }
    out.at(0, j) = mx;
    out.at(0, f + j) = mean / double(x.rows());
  }
  return out;
}

inline Tensor from_rows(const std::vector<pcqa::Vec3>& rows) {
  Tensor t = Tensor::zeros({rows.size(), 3});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) t.at(i, a) = rows[i][a];
  return t;
}

inline double partition_forward(const pcqa::PartitionPatches& patches,
                                const pcqa::ModelParams& mp) {
  Tensor stacked = Tensor::zeros({patches.size(), mp.config.aggregation_dim()});
  for (std::size_t pi = 0; pi < patches.size(); ++pi) {
    Tensor x_xyz = from_rows(patches[pi].geometry);
    Tensor x_rgb = from_rows(patches[pi].color);
    for (const pcqa::BlockParams& blk : mp.blocks) {
      Tensor geom_n = graph_norm(attention(embed(x_xyz, blk.geom_embed),
                                           embed(x_xyz, blk.geom_embed), blk.self_attn),
                                 blk.geom_norm);
      Tensor color_n = graph_norm(embed(x_rgb, blk.color_embed), blk.color_norm);
      x_xyz = attention(color_n, geom_n, blk.cross_attn);
      x_rgb = color_n;
    }
    Tensor pooled = point_aggregation(x_xyz);
    for (std::size_t j = 0; j < pooled.cols(); ++j) stacked.at(pi, j) = pooled.at(0, j);
  }
  Tensor attended = attention(stacked, stacked, mp.patch_attn);
  Tensor summary = Tensor::zeros({1, attended.cols()});
  for (std::size_t j = 0; j < attended.cols(); ++j) {
    double mx = attended.at(0, j);
    for (std::size_t i = 1; i < attended.rows(); ++i) mx = std::max(mx, attended.at(i, j));
    summary.at(0, j) = mx;
  }
  Tensor h = summary;
  for (std::size_t i = 0; i + 1 < mp.head.size(); ++i)
    h = relu(add_row(mat(h, mp.head[i].w), mp.head[i].b));
  h = add_row(mat(h, mp.head.back().w), mp.head.back().b);
  return h.at(0, 0);
}

inline double cloud_forward(const std::vector<pcqa::PartitionPatches>& partitions,
                            const pcqa::ModelParams& mp) {
  double sum = 0.0;
  for (const pcqa::PartitionPatches& p : partitions) sum += refmodel::partition_forward(p, mp);
  return sum / double(partitions.size());
}

}  // namespace refmodel
