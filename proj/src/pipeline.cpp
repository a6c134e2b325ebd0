#include "cargoscan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "cargoscan/rng.hpp"

namespace cargoscan::pipeline {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kObifRf: return "obif-rf";
    case ModelKind::kCnnA: return "cnn-a";
    case ModelKind::kCnnB: return "cnn-b";
    case ModelKind::kCnnC: return "cnn-c";
  }
  return "?";
}

std::string to_string(ChannelSet channels) {
  switch (channels) {
    case ChannelSet::kRaw: return "raw";
    case ChannelSet::kLog: return "log";
    case ChannelSet::kRawLog: return "raw+log";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "obif-rf") return ModelKind::kObifRf;
  if (name == "cnn-a") return ModelKind::kCnnA;
  if (name == "cnn-b") return ModelKind::kCnnB;
  if (name == "cnn-c") return ModelKind::kCnnC;
  throw_config("unknown model kind: " + name);
}

ChannelSet channel_set_from_string(const std::string& name) {
  if (name == "raw") return ChannelSet::kRaw;
  if (name == "log") return ChannelSet::kLog;
  if (name == "raw+log") return ChannelSet::kRawLog;
  throw_config("unknown channel set: " + name);
}

ChannelSet PipelineConfig::resolved_channels() const {
  if (channels) return *channels;
  switch (kind) {
    case ModelKind::kObifRf: return ChannelSet::kRaw;
    case ModelKind::kCnnA: return ChannelSet::kRaw;
    default: return ChannelSet::kRawLog;
  }
}

void PipelineConfig::resolve() {
  if (window_side == 0) window_side = kind == ModelKind::kObifRf ? 64 : 256;
  if (stride == 0) stride = kind == ModelKind::kObifRf ? 32 : 64;
  const ChannelSet ch = resolved_channels();
  if (kind == ModelKind::kCnnB || kind == ModelKind::kCnnC) {
    if (ch != ChannelSet::kRawLog)
      throw_config("model kind " + to_string(kind) + " needs the raw+log channel set");
  } else if (ch == ChannelSet::kRawLog) {
    throw_config("model kind " + to_string(kind) + " takes a single input channel");
  }
  if (kind != ModelKind::kObifRf) {
    if (window_side < 32 || window_side % 32 != 0)
      throw_config("CNN window side must be a positive multiple of 32");
  }
  if (stride < 1 || window_side < 1) throw_config("window side and stride must be positive");
  if (val_frac <= 0.0 || val_frac >= 1.0) throw_config("val_frac must lie in (0,1)");
}

void apply_config_line(PipelineConfig& config, const std::string& key, const std::string& value) {
  if (key == "kind") config.kind = model_kind_from_string(value);
  else if (key == "depth") config.depth = std::stoi(value);
  else if (key == "width_scale") config.width_scale = std::stod(value);
  else if (key == "window_side") config.window_side = std::stoi(value);
  else if (key == "stride") config.stride = std::stoi(value);
  else if (key == "channels") config.channels = channel_set_from_string(value);
  else if (key == "epochs") config.epochs = std::stoi(value);
  else if (key == "batch_size") config.batch_size = std::stoi(value);
  else if (key == "windows_per_positive") config.windows_per_positive = std::stoi(value);
  else if (key == "windows_per_negative") config.windows_per_negative = std::stoi(value);
  else if (key == "val_frac") config.val_frac = std::stod(value);
  else if (key == "n_trees") config.n_trees = std::stoi(value);
  else if (key == "min_leaf") config.min_leaf = std::stoi(value);
  else if (key == "seed") config.seed = std::stoull(value);
  else throw_config("unknown config key: " + key);
}

PipelineConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("config: cannot open " + path);
  PipelineConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw_config("config: line " + std::to_string(line_no) + " is not key=value");
    apply_config_line(config, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return config;
}

detect::PreparedImage load_and_prepare(const std::string& pgm_path) {
  PreprocessResult pre = preprocess(read_pgm16(pgm_path));
  return detect::prepare(std::move(pre.image));
}

std::vector<Sample> samples_from_manifest(const tip::DatasetManifest& manifest,
                                          const std::string& split) {
  std::vector<Sample> samples;
  for (const tip::ManifestEntry& entry : manifest.entries) {
    if (!split.empty() && entry.split != split) continue;
    Sample sample;
    sample.path = entry.scan_path;
    sample.label = entry.label;
    for (const tip::Injection& inj : entry.injections) sample.boxes.push_back(inj.bbox);
    const std::string path = entry.scan_path;
    sample.load = [path]() { return load_and_prepare(path); };
    samples.push_back(std::move(sample));
  }
  return samples;
}

namespace {

const PlaneD& channel_plane(const detect::PreparedImage& image, ChannelSet channels, int index) {
  if (channels == ChannelSet::kRaw) return image.trans.values;
  if (channels == ChannelSet::kLog) return image.log.values;
  return index == 0 ? image.trans.values : image.log.values;
}

nnet::Batch<float> cut_cnn_windows(const detect::PreparedImage& image,
                                   const std::vector<detect::WindowPos>& positions, int side,
                                   ChannelSet channels) {
  nnet::Batch<float> batch;
  batch.batch = static_cast<int>(positions.size());
  batch.channels = channels == ChannelSet::kRawLog ? 2 : 1;
  batch.side = side;
  const long hw = static_cast<long>(side) * side;
  batch.data.resize(batch.channels, batch.batch * hw);
  for (int c = 0; c < batch.channels; ++c) {
    const PlaneD& plane = channel_plane(image, channels, c);
    for (int i = 0; i < batch.batch; ++i) {
      const detect::WindowPos& p = positions[i];
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          batch.data(c, i * hw + static_cast<long>(y) * side + x) =
              static_cast<float>(plane(p.y + y, p.x + x));
    }
  }
  return batch;
}

class CnnWindowClassifier : public detect::WindowClassifier {
 public:
  CnnWindowClassifier(nnet::Network<float>& net, ChannelSet channels, int side)
      : net_(net), channels_(channels), side_(side) {}

  int window_side() const override { return side_; }

  std::vector<double> score(const detect::PreparedImage& image,
                            const detect::WindowGrid& grid) const override {
    std::vector<double> scores;
    scores.reserve(grid.positions.size());
    constexpr size_t kChunk = 256;
    for (size_t start = 0; start < grid.positions.size(); start += kChunk) {
      const size_t n = std::min(kChunk, grid.positions.size() - start);
      std::vector<detect::WindowPos> chunk(grid.positions.begin() + start,
                                           grid.positions.begin() + start + n);
      nnet::Batch<float> batch = cut_cnn_windows(image, chunk, side_, channels_);
      std::vector<double> chunk_scores = nnet::score_windows(net_, std::move(batch));
      scores.insert(scores.end(), chunk_scores.begin(), chunk_scores.end());
    }
    return scores;
  }

 private:
  nnet::Network<float>& net_;
  ChannelSet channels_;
  int side_;
};

class ObifRfWindowClassifier : public detect::WindowClassifier {
 public:
  ObifRfWindowClassifier(const forest::ForestModel& rf, const obif::ObifParams& params,
                         ChannelSet channels, int side)
      : rf_(rf), params_(params), channels_(channels), side_(side) {}

  int window_side() const override { return side_; }

  std::vector<double> score(const detect::PreparedImage& image,
                            const detect::WindowGrid& grid) const override {
    const obif::ObifStack stack = obif::compute_stack(channel_plane(image, channels_, 0), params_);
    std::vector<double> scores;
    scores.reserve(grid.positions.size());
    for (const detect::WindowPos& p : grid.positions)
      scores.push_back(rf_.score(obif::window_feature(stack, p.x, p.y, side_)));
    return scores;
  }

 private:
  const forest::ForestModel& rf_;
  obif::ObifParams params_;
  ChannelSet channels_;
  int side_;
};

}  // namespace

detect::ScoredImage Model::score(const detect::PreparedImage& image) const {
  const detect::WindowGrid grid =
      detect::sample_windows(image.width(), image.height(), window_side, stride);
  detect::ScoredImage scored;
  if (kind == ModelKind::kObifRf) {
    ObifRfWindowClassifier classifier(*rf, obif_params, channels, window_side);
    scored = detect::score_image(image, grid, classifier);
  } else {
    CnnWindowClassifier classifier(const_cast<nnet::Network<float>&>(*net), channels, window_side);
    scored = detect::score_image(image, grid, classifier);
  }
  scored.decision_threshold = t90;
  return scored;
}

void Model::save(const std::string& path) const {
  if (kind == ModelKind::kObifRf) {
    forest::ForestModel copy = *rf;
    nlohmann::json meta;
    meta["kind"] = to_string(kind);
    meta["channels"] = to_string(channels);
    meta["window_side"] = window_side;
    meta["stride"] = stride;
    meta["t90"] = t90;
    meta["sigmas"] = obif_params.sigmas;
    meta["eps_flats"] = obif_params.eps_flats;
    copy.metadata = meta.dump();
    copy.save(path);
    return;
  }
  nnet::Network<float> copy = *net;
  copy.t90 = t90;
  nnet::save_network(copy, path);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  const std::int32_t stride32 = stride;
  const std::uint8_t ch = static_cast<std::uint8_t>(channels);
  const std::uint8_t kind8 = static_cast<std::uint8_t>(kind);
  out.write(reinterpret_cast<const char*>(&stride32), 4);
  out.write(reinterpret_cast<const char*>(&ch), 1);
  out.write(reinterpret_cast<const char*>(&kind8), 1);
  if (!out) throw_io("model: short write to " + path);
}

Model Model::load(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw_io("model: cannot open " + path);
  char magic[5] = {0};
  probe.read(magic, 5);
  if (!probe) throw_format("model: truncated file");
  probe.close();

  Model model;
  if (std::memcmp(magic, "CSRF1", 5) == 0) {
    model.kind = ModelKind::kObifRf;
    model.rf = forest::ForestModel::load(path);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(model.rf->metadata);
    } catch (const nlohmann::json::exception&) {
      throw_format("model: missing pipeline metadata in " + path);
    }
    model.channels = channel_set_from_string(meta.at("channels").get<std::string>());
    model.window_side = meta.at("window_side").get<int>();
    model.stride = meta.at("stride").get<int>();
    model.t90 = meta.at("t90").get<double>();
    for (size_t i = 0; i < model.obif_params.sigmas.size(); ++i)
      model.obif_params.sigmas[i] = meta.at("sigmas")[i].get<double>();
    for (size_t i = 0; i < model.obif_params.eps_flats.size(); ++i)
      model.obif_params.eps_flats[i] = meta.at("eps_flats")[i].get<double>();
    return model;
  }
  if (std::memcmp(magic, "CSNN1", 5) == 0) {
    model.net = nnet::load_network(path);
    model.t90 = model.net->t90;
    model.window_side = model.net->config.input_side;
    std::ifstream in(path, std::ios::binary);
    in.seekg(-6, std::ios::end);
    std::int32_t stride32 = 0;
    std::uint8_t ch = 0, kind8 = 0;
    in.read(reinterpret_cast<char*>(&stride32), 4);
    in.read(reinterpret_cast<char*>(&ch), 1);
    in.read(reinterpret_cast<char*>(&kind8), 1);
    if (!in) throw_format("model: truncated trailer in " + path);
    model.stride = stride32;
    model.channels = static_cast<ChannelSet>(ch);
    model.kind = static_cast<ModelKind>(kind8);
    return model;
  }
  throw_format("model: unrecognized container magic");
}

std::vector<detect::WindowPos> training_positions(const Sample& sample, int side, int count_pos,
                                                  int count_neg, int width, int height, Rng& rng) {
  std::vector<detect::WindowPos> positions;
  const auto clamp_pos = [&](int x, int y) {
    return detect::WindowPos{std::clamp(x, 0, width - side), std::clamp(y, 0, height - side)};
  };
  if (sample.label == 1) {
    const int jitter = std::max(1, side / 8);
    for (const tip::BBox& box : sample.boxes) {
      for (int k = 0; k < count_pos; ++k) {
        const int cx = box.x + box.w / 2, cy = box.y + box.h / 2;
        const int jx = static_cast<int>(rng.uniform_int(2 * jitter + 1)) - jitter;
        const int jy = static_cast<int>(rng.uniform_int(2 * jitter + 1)) - jitter;
        positions.push_back(clamp_pos(cx - side / 2 + jx, cy - side / 2 + jy));
      }
    }
  } else {
    for (int k = 0; k < count_neg; ++k)
      positions.push_back(clamp_pos(static_cast<int>(rng.uniform_int(width - side + 1)),
                                    static_cast<int>(rng.uniform_int(height - side + 1))));
  }
  return positions;
}

cargoscan::Vec<float> obif_feature_at(const PlaneD& plane, int x, int y, int side,
                                      const obif::ObifParams& params) {
  double max_sigma = 0.0;
  for (double s : params.sigmas) max_sigma = std::max(max_sigma, s);
  const int halo = static_cast<int>(std::ceil(4.0 * max_sigma));
  const int w = static_cast<int>(plane.cols()), h = static_cast<int>(plane.rows());
  const int cx0 = std::max(0, x - halo), cy0 = std::max(0, y - halo);
  const int cx1 = std::min(w, x + side + halo), cy1 = std::min(h, y + side + halo);
  PlaneD crop = plane.block(cy0, cx0, cy1 - cy0, cx1 - cx0);
  const obif::ObifStack stack = obif::compute_stack(crop, params);
  return obif::window_feature(stack, x - cx0, y - cy0, side);
}

Model train_model(const PipelineConfig& config_in, const std::vector<Sample>& train_samples,
                  std::ostream* log) {
  PipelineConfig config = config_in;
  config.resolve();
  if (train_samples.empty()) throw_domain("train_model: empty training set");

  // hold out a validation slice (stratified) for the t90 threshold
  Rng rng = Rng::fork(config.seed, 0x5917);
  std::vector<int> order(train_samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(i + 1)]);

  std::vector<const Sample*> core, val;
  {
    std::vector<int> pos, neg;
    for (int idx : order) (train_samples[idx].label ? pos : neg).push_back(idx);
    const size_t val_pos = static_cast<size_t>(std::lround(config.val_frac * pos.size()));
    const size_t val_neg = static_cast<size_t>(std::lround(config.val_frac * neg.size()));
    for (size_t i = 0; i < pos.size(); ++i)
      (i < val_pos ? val : core).push_back(&train_samples[pos[i]]);
    for (size_t i = 0; i < neg.size(); ++i)
      (i < val_neg ? val : core).push_back(&train_samples[neg[i]]);
  }
  bool val_usable = false;
  {
    int vp = 0, vn = 0;
    for (const Sample* s : val) (s->label ? vp : vn)++;
    val_usable = vp >= 1 && vn >= 1;
  }
  if (!val_usable)
    for (const Sample* s : val) core.push_back(s);

  Model model;
  model.kind = config.kind;
  model.channels = config.resolved_channels();
  model.window_side = config.window_side;
  model.stride = config.stride;

  // window extraction
  const int side = config.window_side;
  if (config.kind == ModelKind::kObifRf) {
    std::vector<cargoscan::Vec<float>> features;
    std::vector<int> labels;
    for (size_t i = 0; i < core.size(); ++i) {
      const Sample& sample = *core[i];
      detect::PreparedImage image = sample.load();
      Rng wrng = Rng::fork(config.seed, 0x33a1 + i);
      const auto positions =
          training_positions(sample, side, config.windows_per_positive,
                             config.windows_per_negative, image.width(), image.height(), wrng);
      const PlaneD& plane = channel_plane(image, model.channels, 0);
      for (const auto& p : positions) {
        features.push_back(obif_feature_at(plane, p.x, p.y, side, model.obif_params));
        labels.push_back(sample.label);
      }
      if (log && (i + 1) % 200 == 0)
        *log << "[train obif-rf] features from " << (i + 1) << "/" << core.size() << " images\n";
    }
    if (features.empty()) throw_domain("train_model: no training windows");
    Eigen::MatrixXf x(features.size(), features[0].size());
    for (size_t i = 0; i < features.size(); ++i) x.row(i) = features[i].transpose();
    forest::ForestParams params;
    params.n_trees = config.n_trees;
    params.min_leaf = config.min_leaf;
    params.seed = config.seed;
    model.rf = forest::train_forest(x, labels, params);
    if (log)
      *log << "[train obif-rf] " << features.size() << " windows, oob error "
           << model.rf->oob_error << "\n";
  } else {
    nnet::NetworkConfig ncfg;
    ncfg.depth = config.depth;
    ncfg.input_config = config.kind == ModelKind::kCnnA   ? nnet::InputConfig::kA
                        : config.kind == ModelKind::kCnnB ? nnet::InputConfig::kB
                                                          : nnet::InputConfig::kC;
    ncfg.input_side = side;
    ncfg.width_scale = config.width_scale;
    model.net = nnet::build_network<float>(ncfg, config.seed);

    std::vector<int> labels;
    nnet::Batch<float> windows;
    windows.channels = config.cnn_channels();
    windows.side = side;
    const long hw = static_cast<long>(side) * side;
    std::vector<nnet::Batch<float>> chunks;
    long total = 0;
    for (size_t i = 0; i < core.size(); ++i) {
      const Sample& sample = *core[i];
      detect::PreparedImage image = sample.load();
      Rng wrng = Rng::fork(config.seed, 0x33a1 + i);
      const auto positions =
          training_positions(sample, side, config.windows_per_positive,
                             config.windows_per_negative, image.width(), image.height(), wrng);
      if (positions.empty()) continue;
      chunks.push_back(cut_cnn_windows(image, positions, side, model.channels));
      for (size_t k = 0; k < positions.size(); ++k) labels.push_back(sample.label);
      total += static_cast<long>(positions.size());
      if (log && (i + 1) % 200 == 0)
        *log << "[train " << to_string(config.kind) << "] windows from " << (i + 1) << "/"
             << core.size() << " images\n";
    }
    if (total == 0) throw_domain("train_model: no training windows");
    windows.batch = static_cast<int>(total);
    windows.data.resize(windows.channels, total * hw);
    long at = 0;
    for (const auto& chunk : chunks) {
      windows.data.middleCols(at * hw, chunk.batch * hw) = chunk.data;
      at += chunk.batch;
    }
    chunks.clear();

    nnet::Hyperparams hp;
    hp.epochs = config.epochs;
    hp.batch_size = config.batch_size;
    hp.seed = config.seed;
    const auto history = nnet::train(*model.net, windows, labels, hp);
    if (log) {
      for (size_t e = 0; e < history.size(); ++e)
        if ((e + 1) % 5 == 0 || e + 1 == history.size())
          *log << "[train " << to_string(config.kind) << "] epoch " << (e + 1) << " loss "
               << history[e].loss << " acc " << history[e].accuracy << " lr " << history[e].lr
               << "\n";
    }
  }

  // freeze t90 on the validation slice before any test scoring
  if (val_usable) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const Sample* sample : val) {
      detect::PreparedImage image = sample->load();
      scores.push_back(model.score(image).image_score);
      labels.push_back(sample->label);
    }
    model.t90 = metrics::fpr_at_tpr(scores, labels, 0.90).threshold;
  } else {
    model.t90 = 0.5;  // tiny datasets: no usable validation slice
  }
  if (log) *log << "[train] t90 = " << model.t90 << "\n";
  return model;
}

std::vector<ImageScore> score_samples(const Model& model, const std::vector<Sample>& samples,
                                      std::ostream* log) {
  std::vector<ImageScore> scores;
  scores.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    detect::PreparedImage image = samples[i].load();
    scores.push_back({samples[i].path, samples[i].label, model.score(image).image_score});
    if (log && (i + 1) % 100 == 0)
      *log << "[score] " << (i + 1) << "/" << samples.size() << " images\n";
  }
  return scores;
}

metrics::EvalReport evaluate_scores(const std::vector<ImageScore>& scores,
                                    metrics::CostPrior prior) {
  std::vector<double> s;
  std::vector<int> y;
  for (const ImageScore& score : scores) {
    s.push_back(score.p_image);
    y.push_back(score.label);
  }
  return metrics::evaluate(s, y, prior);
}

}  // namespace cargoscan::pipeline
