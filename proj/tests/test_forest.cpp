#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cargoscan/forest.hpp"
#include "cargoscan/rng.hpp"

using namespace cargoscan;
using namespace cargoscan::forest;

namespace {

// Two Gaussian clusters in 8 dimensions, separated along every axis.
void clusters(Rng& rng, int n_per_class, double gap, Eigen::MatrixXf& x, std::vector<int>& y) {
  x.resize(2 * n_per_class, 8);
  y.clear();
  for (int i = 0; i < 2 * n_per_class; ++i) {
    const int label = i < n_per_class ? 0 : 1;
    y.push_back(label);
    for (int f = 0; f < 8; ++f)
      x(i, f) = static_cast<float>(label * gap + 0.3 * rng.normal());
  }
}

// Independent traversal oracle: re-walks every tree with its own loop.
double score_oracle(const ForestModel& model, const Vec<float>& sample) {
  int positive = 0;
  for (const Tree& tree : model.trees) {
    int idx = 0;
    while (tree.nodes[idx].feature >= 0) {
      const Node& n = tree.nodes[idx];
      idx = sample[n.feature] < n.threshold ? n.left : n.right;
    }
    if (tree.nodes[idx].counts[1] > tree.nodes[idx].counts[0]) ++positive;
  }
  return static_cast<double>(positive) / model.trees.size();
}

ForestModel stump_forest(int positive_leaves, int total) {
  ForestModel model;
  model.n_features = 4;
  model.params.n_trees = total;
  for (int t = 0; t < total; ++t) {
    Tree tree;
    Node leaf;
    leaf.counts[0] = t < positive_leaves ? 0 : 7;
    leaf.counts[1] = t < positive_leaves ? 7 : 0;
    tree.nodes.push_back(leaf);
    model.trees.push_back(tree);
  }
  return model;
}

}  // namespace

TEST_CASE("separable clusters train to perfect training accuracy") {
  Rng rng(3);
  Eigen::MatrixXf x;
  std::vector<int> y;
  clusters(rng, 40, 3.0, x, y);
  ForestParams params;
  params.n_trees = 10;
  params.seed = 5;
  ForestModel model = train_forest(x, y, params);
  int correct = 0;
  for (int i = 0; i < x.rows(); ++i) {
    const Vec<float> sample = x.row(i).transpose();
    const int pred = model.score(sample) >= 0.5 ? 1 : 0;
    correct += pred == y[i];
  }
  CHECK(correct == x.rows());
}

TEST_CASE("training is deterministic in the seed") {
  Rng rng(7);
  Eigen::MatrixXf x;
  std::vector<int> y;
  clusters(rng, 30, 1.0, x, y);
  ForestParams params;
  params.n_trees = 15;
  params.seed = 99;
  ForestModel a = train_forest(x, y, params);
  ForestModel b = train_forest(x, y, params);
  Rng probe_rng(11);
  for (int probe = 0; probe < 50; ++probe) {
    Vec<float> sample(8);
    for (int f = 0; f < 8; ++f) sample[f] = static_cast<float>(2.0 * probe_rng.normal());
    CHECK(a.score(sample) == b.score(sample));
  }
}

TEST_CASE("mtry larger than the feature count is a config error") {
  Rng rng(1);
  Eigen::MatrixXf x;
  std::vector<int> y;
  clusters(rng, 10, 1.0, x, y);
  ForestParams params;
  params.mtry = 200;
  CHECK_THROWS_AS(train_forest(x, y, params), Error);
}

TEST_CASE("single-class input is a training error") {
  Eigen::MatrixXf x(4, 3);
  x.setRandom();
  std::vector<int> y{1, 1, 1, 1};
  CHECK_THROWS_AS(train_forest(x, y, ForestParams{}), Error);
}

TEST_CASE("score is the positive-vote fraction") {
  Vec<float> any = Vec<float>::Zero(4);
  CHECK(stump_forest(100, 100).score(any) == 1.0);
  CHECK(stump_forest(50, 100).score(any) == 0.5);
  CHECK(stump_forest(0, 100).score(any) == 0.0);
}

TEST_CASE("score equals the independent traversal oracle") {
  Rng rng(13);
  Eigen::MatrixXf x;
  std::vector<int> y;
  clusters(rng, 25, 0.8, x, y);
  ForestParams params;
  params.n_trees = 21;
  params.seed = 17;
  ForestModel model = train_forest(x, y, params);
  for (int probe = 0; probe < 100; ++probe) {
    Vec<float> sample(8);
    for (int f = 0; f < 8; ++f) sample[f] = static_cast<float>(rng.normal() * 2);
    const double s = model.score(sample);
    CHECK(s == score_oracle(model, sample));
    // quantized to vote fractions
    CHECK(std::round(s * params.n_trees) == doctest::Approx(s * params.n_trees));
  }
}

TEST_CASE("duplicating a tree nudges the score toward that tree's vote") {
  Rng rng(19);
  Eigen::MatrixXf x;
  std::vector<int> y;
  clusters(rng, 20, 1.0, x, y);
  ForestParams params;
  params.n_trees = 9;
  ForestModel model = train_forest(x, y, params);
  Vec<float> sample = Vec<float>::Constant(8, 0.4f);
  const double before = model.score(sample);
  const int vote = model.trees[2].vote(sample);
  model.trees.push_back(model.trees[2]);
  model.params.n_trees += 1;
  const double after = model.score(sample);
  if (vote == 1) {
    CHECK(after >= before);
  } else {
    CHECK(after <= before);
  }
}

TEST_CASE("out-of-bag error is reported within [0,1]") {
  Rng rng(23);
  Eigen::MatrixXf x;
  std::vector<int> y;
  clusters(rng, 30, 1.5, x, y);
  ForestParams params;
  params.n_trees = 25;
  ForestModel model = train_forest(x, y, params);
  CHECK(std::isfinite(model.oob_error));
  CHECK(model.oob_error >= 0.0);
  CHECK(model.oob_error <= 1.0);
}

TEST_CASE("model container round-trips including metadata") {
  Rng rng(29);
  Eigen::MatrixXf x;
  std::vector<int> y;
  clusters(rng, 20, 1.2, x, y);
  ForestParams params;
  params.n_trees = 7;
  params.seed = 3;
  ForestModel model = train_forest(x, y, params);
  model.metadata = "{\"window_side\":64}";

  const std::string path = (std::filesystem::temp_directory_path() / "m.csrf1").string();
  model.save(path);
  ForestModel back = ForestModel::load(path);
  CHECK(back.metadata == model.metadata);
  CHECK(back.n_features == model.n_features);
  CHECK(back.params.mtry == model.params.mtry);
  for (int probe = 0; probe < 40; ++probe) {
    Vec<float> sample(8);
    for (int f = 0; f < 8; ++f) sample[f] = static_cast<float>(rng.normal());
    CHECK(back.score(sample) == model.score(sample));
  }

  // saving twice produces identical bytes
  const std::string path2 = (std::filesystem::temp_directory_path() / "m2.csrf1").string();
  model.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("corrupt model files are format errors") {
  const std::string path = (std::filesystem::temp_directory_path() / "bad.csrf1").string();
  std::ofstream out(path, std::ios::binary);
  out << "NOTRF.....";
  out.close();
  CHECK_THROWS_AS(ForestModel::load(path), Error);
}
