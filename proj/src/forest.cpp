#include "cargoscan/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cargoscan/rng.hpp"

namespace cargoscan::forest {

const Node& Tree::leaf_for(const Vec<float>& x) const {
  int idx = 0;
  while (nodes[idx].feature >= 0)
    idx = x[nodes[idx].feature] < nodes[idx].threshold ? nodes[idx].left : nodes[idx].right;
  return nodes[idx];
}

double ForestModel::score(const Vec<float>& x) const {
  if (x.size() != n_features) throw_domain("forest: feature dimension mismatch");
  int positive = 0;
  for (const Tree& tree : trees) positive += tree.vote(x);
  return static_cast<double>(positive) / trees.size();
}

namespace {

struct Builder {
  const Eigen::MatrixXf& x;
  const std::vector<int>& y;
  int mtry;
  int min_leaf;
  Rng rng;
  Tree tree;
  std::vector<int> feature_pool;

  // Scratch for split search.
  std::vector<std::pair<float, int>> sorted;

  int build(std::vector<int>& samples) {
    const int node_idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    std::int32_t counts[2] = {0, 0};
    for (int s : samples) ++counts[y[s]];
    tree.nodes[node_idx].counts[0] = counts[0];
    tree.nodes[node_idx].counts[1] = counts[1];

    const int n = static_cast<int>(samples.size());
    if (counts[0] == 0 || counts[1] == 0 || n < 2 * min_leaf) return node_idx;

    // sample mtry distinct candidate features
    for (int i = 0; i < mtry; ++i) {
      const int j = i + static_cast<int>(rng.uniform_int(feature_pool.size() - i));
      std::swap(feature_pool[i], feature_pool[j]);
    }

    int best_feature = -1;
    float best_threshold = 0.0f;
    double best_gini = 1e300;
    for (int fi = 0; fi < mtry; ++fi) {
      const int f = feature_pool[fi];
      sorted.clear();
      for (int s : samples) sorted.emplace_back(x(s, f), y[s]);
      std::sort(sorted.begin(), sorted.end());
      int left_pos = 0;
      for (int i = 1; i < n; ++i) {
        left_pos += sorted[i - 1].second;
        if (sorted[i].first == sorted[i - 1].first) continue;
        if (i < min_leaf || n - i < min_leaf) continue;
        const double lp = static_cast<double>(left_pos), ln = i - lp;
        const double rp = counts[1] - lp, rn = (n - i) - rp;
        const double gini_l = 1.0 - (lp * lp + ln * ln) / (static_cast<double>(i) * i);
        const double gini_r =
            1.0 - (rp * rp + rn * rn) / (static_cast<double>(n - i) * (n - i));
        const double gini = (i * gini_l + (n - i) * gini_r) / n;
        if (gini < best_gini) {
          best_gini = gini;
          best_feature = f;
          best_threshold = 0.5f * (sorted[i].first + sorted[i - 1].first);
        }
      }
    }
    if (best_feature < 0) return node_idx;  // no admissible split

    std::vector<int> left, right;
    for (int s : samples)
      (x(s, best_feature) < best_threshold ? left : right).push_back(s);
    if (static_cast<int>(left.size()) < min_leaf || static_cast<int>(right.size()) < min_leaf)
      return node_idx;

    samples.clear();
    samples.shrink_to_fit();
    tree.nodes[node_idx].feature = best_feature;
    tree.nodes[node_idx].threshold = best_threshold;
    const int l = build(left);
    tree.nodes[node_idx].left = l;
    const int r = build(right);
    tree.nodes[node_idx].right = r;
    return node_idx;
  }
};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw_io("forest: truncated model file");
  return v;
}

}  // namespace

ForestModel train_forest(const Eigen::MatrixXf& features, const std::vector<int>& labels,
                         const ForestParams& params) {
  const int n = static_cast<int>(features.rows());
  const int d = static_cast<int>(features.cols());
  if (n < 2 || static_cast<size_t>(n) != labels.size())
    throw_domain("train_forest: need at least two labeled samples");
  int pos = 0;
  for (int y : labels) pos += y;
  if (pos == 0 || pos == n) throw_domain("train_forest: both classes must be present");
  if (params.n_trees < 1 || params.min_leaf < 1) throw_config("train_forest: bad params");
  if (params.mtry > d) throw_config("train_forest: mtry exceeds feature count");

  ForestModel model;
  model.params = params;
  model.params.mtry = params.mtry > 0 ? params.mtry
                                      : static_cast<int>(std::floor(std::sqrt(static_cast<double>(d))));
  model.n_features = d;
  model.trees.resize(params.n_trees);

  std::vector<std::vector<std::uint8_t>> in_bag(params.n_trees,
                                                std::vector<std::uint8_t>(n, 0));
  for (int t = 0; t < params.n_trees; ++t) {
    Builder builder{features, labels, model.params.mtry, params.min_leaf,
                    Rng::fork(params.seed, static_cast<std::uint64_t>(t)), Tree{},
                    std::vector<int>(d)};
    std::iota(builder.feature_pool.begin(), builder.feature_pool.end(), 0);
    std::vector<int> bootstrap(n);
    for (int i = 0; i < n; ++i) {
      bootstrap[i] = static_cast<int>(builder.rng.uniform_int(n));
      in_bag[t][bootstrap[i]] = 1;
    }
    builder.build(bootstrap);
    model.trees[t] = std::move(builder.tree);
  }

  // out-of-bag error over samples with at least one holdout tree
  long wrong = 0, counted = 0;
  Vec<float> sample(d);
  for (int i = 0; i < n; ++i) {
    int votes = 0, voters = 0;
    sample = features.row(i).transpose();
    for (int t = 0; t < params.n_trees; ++t) {
      if (in_bag[t][i]) continue;
      votes += model.trees[t].vote(sample);
      ++voters;
    }
    if (voters == 0) continue;
    ++counted;
    const int pred = 2 * votes > voters ? 1 : 0;
    if (pred != labels[i]) ++wrong;
  }
  if (counted > 0) model.oob_error = static_cast<double>(wrong) / counted;
  return model;
}

void ForestModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("forest: cannot open " + path + " for writing");
  out.write("CSRF1", 5);
  write_pod<std::uint8_t>(out, 1);  // version
  write_pod<std::int32_t>(out, params.n_trees);
  write_pod<std::int32_t>(out, params.min_leaf);
  write_pod<std::int32_t>(out, params.mtry);
  write_pod<std::uint64_t>(out, params.seed);
  write_pod<std::int32_t>(out, n_features);
  write_pod<double>(out, oob_error);
  for (const Tree& tree : trees) {
    write_pod<std::int32_t>(out, static_cast<std::int32_t>(tree.nodes.size()));
    for (const Node& node : tree.nodes) {
      write_pod<std::int32_t>(out, node.feature);
      write_pod<float>(out, node.threshold);
      write_pod<std::int32_t>(out, node.left);
      write_pod<std::int32_t>(out, node.right);
      write_pod<std::int32_t>(out, node.counts[0]);
      write_pod<std::int32_t>(out, node.counts[1]);
    }
  }
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  if (!out) throw_io("forest: short write to " + path);
}

ForestModel ForestModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("forest: cannot open " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "CSRF1", 5) != 0) throw_format("forest: bad magic");
  const auto version = read_pod<std::uint8_t>(in);
  if (version != 1) throw_format("forest: unsupported version");

  ForestModel model;
  model.params.n_trees = read_pod<std::int32_t>(in);
  model.params.min_leaf = read_pod<std::int32_t>(in);
  model.params.mtry = read_pod<std::int32_t>(in);
  model.params.seed = read_pod<std::uint64_t>(in);
  model.n_features = read_pod<std::int32_t>(in);
  model.oob_error = read_pod<double>(in);
  if (model.params.n_trees < 1 || model.n_features < 1) throw_format("forest: corrupt header");
  model.trees.resize(model.params.n_trees);
  for (Tree& tree : model.trees) {
    const auto n_nodes = read_pod<std::int32_t>(in);
    if (n_nodes < 1) throw_format("forest: corrupt tree");
    tree.nodes.resize(n_nodes);
    for (Node& node : tree.nodes) {
      node.feature = read_pod<std::int32_t>(in);
      node.threshold = read_pod<float>(in);
      node.left = read_pod<std::int32_t>(in);
      node.right = read_pod<std::int32_t>(in);
      node.counts[0] = read_pod<std::int32_t>(in);
      node.counts[1] = read_pod<std::int32_t>(in);
    }
  }
  const auto meta_len = read_pod<std::uint32_t>(in);
  model.metadata.resize(meta_len);
  in.read(model.metadata.data(), meta_len);
  if (!in && meta_len > 0) throw_io("forest: truncated metadata");
  return model;
}

}  // namespace cargoscan::forest
