#pragma once

#include <limits>
#include <string>
#include <vector>

#include "cargoscan/types.hpp"

namespace cargoscan::forest {

struct ForestParams {
  int n_trees = 100;
  int min_leaf = 5;
  int mtry = 0;  // 0 = floor(sqrt(n_features))
  std::uint64_t seed = 0;
};

// feature < 0 marks a leaf; traversal goes left when x[feature] < threshold.
struct Node {
  int feature = -1;
  float threshold = 0.0f;
  int left = -1;
  int right = -1;
  std::int32_t counts[2] = {0, 0};
};

struct Tree {
  std::vector<Node> nodes;

  const Node& leaf_for(const Vec<float>& x) const;
  // majority vote; ties go to the negative class
  int vote(const Vec<float>& x) const { const Node& n = leaf_for(x); return n.counts[1] > n.counts[0] ? 1 : 0; }
};

struct ForestModel {
  ForestParams params;
  int n_features = 0;
  std::vector<Tree> trees;
  double oob_error = std::numeric_limits<double>::quiet_NaN();
  std::string metadata;  // free-form JSON installed by the pipeline

  // fraction of trees voting for the positive class
  double score(const Vec<float>& x) const;

  void save(const std::string& path) const;
  static ForestModel load(const std::string& path);
};

// Bootstrap-aggregated Gini trees over mtry-subsampled features; grown until
// pure or below the leaf-size floor; deterministic in the seed (per-tree
// derived streams).
ForestModel train_forest(const Eigen::MatrixXf& features /* samples x dims */,
                         const std::vector<int>& labels, const ForestParams& params);

}  // namespace cargoscan::forest
