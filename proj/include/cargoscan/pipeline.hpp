#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cargoscan/detector.hpp"
#include "cargoscan/forest.hpp"
#include "cargoscan/metrics.hpp"
#include "cargoscan/nnet.hpp"
#include "cargoscan/obif.hpp"
#include "cargoscan/tip.hpp"

namespace cargoscan::pipeline {

enum class ModelKind { kObifRf, kCnnA, kCnnB, kCnnC };
enum class ChannelSet { kRaw, kLog, kRawLog };

std::string to_string(ModelKind kind);
std::string to_string(ChannelSet channels);
ModelKind model_kind_from_string(const std::string& name);
ChannelSet channel_set_from_string(const std::string& name);

struct PipelineConfig {
  ModelKind kind = ModelKind::kCnnB;
  int depth = 11;
  double width_scale = 0.125;
  int window_side = 0;  // 0 = kind default (256 for CNNs, 64 for obif-rf)
  int stride = 0;       // 0 = kind default (64 for CNNs, 32 for obif-rf)
  std::optional<ChannelSet> channels;  // unset = kind default
  int epochs = 30;
  int batch_size = 32;
  int windows_per_positive = 2;
  int windows_per_negative = 2;
  double val_frac = 0.1;
  int n_trees = 100;
  int min_leaf = 5;
  std::uint64_t seed = 0;

  // Applies kind defaults and validates consistency (e.g. a two-channel kind
  // with a single-channel set is a config error).
  void resolve();
  ChannelSet resolved_channels() const;
  int cnn_channels() const { return resolved_channels() == ChannelSet::kRawLog ? 2 : 1; }
};

// key=value configuration file; unknown keys are config errors.
PipelineConfig load_config_file(const std::string& path);
void apply_config_line(PipelineConfig& config, const std::string& key, const std::string& value);

// A labeled image with ground-truth boxes and a lazy loader (disk or
// regeneration), so datasets never have to be resident at once.
struct Sample {
  std::string path;
  int label = 0;
  std::vector<tip::BBox> boxes;
  std::function<detect::PreparedImage()> load;
};

detect::PreparedImage load_and_prepare(const std::string& pgm_path);
std::vector<Sample> samples_from_manifest(const tip::DatasetManifest& manifest,
                                          const std::string& split);

// Trained classifier with its windowing geometry and frozen t90.
struct Model {
  ModelKind kind = ModelKind::kCnnB;
  ChannelSet channels = ChannelSet::kRawLog;
  int window_side = 0;
  int stride = 0;
  double t90 = std::numeric_limits<double>::quiet_NaN();
  obif::ObifParams obif_params;
  std::optional<nnet::Network<float>> net;
  std::optional<forest::ForestModel> rf;

  detect::ScoredImage score(const detect::PreparedImage& image) const;

  void save(const std::string& path) const;
  static Model load(const std::string& path);
};

// Trains on the given samples (a val_frac validation slice is held out for
// the t90 threshold). Progress lines go to `log` when non-null.
Model train_model(const PipelineConfig& config, const std::vector<Sample>& train_samples,
                  std::ostream* log = nullptr);

struct ImageScore {
  std::string path;
  int label = 0;
  double p_image = 0.0;
};

std::vector<ImageScore> score_samples(const Model& model, const std::vector<Sample>& samples,
                                      std::ostream* log = nullptr);

metrics::EvalReport evaluate_scores(const std::vector<ImageScore>& scores,
                                    metrics::CostPrior prior = metrics::CostPrior::kSymmetricBeta22);

// oBIF descriptor of one window computed on a padded crop; identical to the
// full-image stack wherever the kernel support fits (the halo covers the
// largest kernel radius).
cargoscan::Vec<float> obif_feature_at(const PlaneD& plane, int x, int y, int side,
                                      const obif::ObifParams& params);

// Training-window extraction shared by CNN and RF paths: positives centered
// on each box with +-side/8 jitter, negatives at uniform positions.
std::vector<detect::WindowPos> training_positions(const Sample& sample, int side, int count_pos,
                                                  int count_neg, int width, int height, Rng& rng);

}  // namespace cargoscan::pipeline
