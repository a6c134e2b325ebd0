#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "cargoscan/rng.hpp"
#include "cargoscan/types.hpp"

namespace cargoscan::nnet {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

enum class InputConfig : std::uint8_t { kA = 0, kB = 1, kC = 2 };
enum class Mode { kTrain, kEval };

struct NetworkConfig {
  int depth = 11;  // 11 (8 conv) or 19 (16 conv)
  InputConfig input_config = InputConfig::kA;
  int input_side = 64;
  double width_scale = 0.125;
  int classes = 2;

  int channels() const { return input_config == InputConfig::kA ? 1 : 2; }
  int streams() const { return input_config == InputConfig::kC ? 2 : 1; }
};

struct Hyperparams {
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  int epochs = 30;
  int batch_size = 32;
  bool flip_augment = true;
  std::uint64_t seed = 0;
};

inline double learning_rate(const Hyperparams& hp, int epoch) {
  if (hp.epochs <= 1) return hp.lr_start;
  const double f = static_cast<double>(epoch) / (hp.epochs - 1);
  return hp.lr_start * std::pow(hp.lr_end / hp.lr_start, f);
}

// Activations: rows = channels, columns = batch * height * width with column
// index sample*(h*w) + y*w + x. Flattened features use height = width = 1.
template <typename S>
struct Feature {
  Mat<S> data;
  int channels = 0, height = 0, width = 0, batch = 0;
};

// Input batch of windows (channel-planar, same column layout as Feature).
template <typename S>
struct Batch {
  Mat<S> data;  // channels x (batch * side * side)
  int batch = 0, channels = 0, side = 0;
};

// --- Layers -----------------------------------------------------------------

template <typename S>
struct ConvLayer {
  int in_ch = 0, out_ch = 0;
  Mat<S> w;  // out_ch x in_ch*9, column k*in_ch+cin for offset k = ky*3+kx
  Vec<S> b;
  Mat<S> dw;
  Vec<S> db;
  Mat<S> vw;
  Vec<S> vb;
  // caches
  Mat<S> cols;
  int cache_h = 0, cache_w = 0, cache_b = 0;
};

template <typename S>
struct BatchNormLayer {
  int ch = 0;
  Vec<S> gamma, beta, dgamma, dbeta, vgamma, vbeta;
  Vec<S> running_mean, running_var;
  S eps = static_cast<S>(1e-5);
  S update_rate = static_cast<S>(0.1);
  // caches
  Mat<S> xhat;
  Vec<S> invstd, mean;
};

struct ReluLayer {};

struct MaxPoolLayer {};

struct FlattenLayer {};

template <typename S>
struct FcLayer {
  int in = 0, out = 0;
  Mat<S> w;
  Vec<S> b;
  Mat<S> dw;
  Vec<S> db;
  Mat<S> vw;
  Vec<S> vb;
  Mat<S> x_cache;
};

template <typename S>
using Layer = std::variant<ConvLayer<S>, BatchNormLayer<S>, ReluLayer, MaxPoolLayer,
                           FlattenLayer, FcLayer<S>>;

template <typename S>
struct ParamRef {
  S* value;
  S* grad;
  S* velocity;
  long size;
  bool decayed;  // L2 applies to conv/fc weights only
};

template <typename S>
struct Network {
  NetworkConfig config;
  std::vector<std::vector<Layer<S>>> streams;  // 1 or 2 conv pipelines (incl. fc1+relu)
  std::vector<Layer<S>> head;                  // fc2, relu, fc3
  Vec<S> mean_image;                           // channels * side^2, subtracted on input
  double t90 = std::numeric_limits<double>::quiet_NaN();

  // relu masks per (stream-or-head, layer) are cached alongside activations
  // during training inside the forward pass below.
};

// --- construction -----------------------------------------------------------

namespace detail {

template <typename S>
ConvLayer<S> make_conv(int in_ch, int out_ch, Rng& rng) {
  ConvLayer<S> layer;
  layer.in_ch = in_ch;
  layer.out_ch = out_ch;
  layer.w.resize(out_ch, in_ch * 9);
  const double scale = std::sqrt(2.0 / (in_ch * 9));
  for (long i = 0; i < layer.w.size(); ++i)
    layer.w.data()[i] = static_cast<S>(scale * rng.normal());
  layer.b = Vec<S>::Zero(out_ch);
  layer.dw = Mat<S>::Zero(out_ch, in_ch * 9);
  layer.db = Vec<S>::Zero(out_ch);
  layer.vw = Mat<S>::Zero(out_ch, in_ch * 9);
  layer.vb = Vec<S>::Zero(out_ch);
  return layer;
}

template <typename S>
BatchNormLayer<S> make_bn(int ch) {
  BatchNormLayer<S> layer;
  layer.ch = ch;
  layer.gamma = Vec<S>::Ones(ch);
  layer.beta = Vec<S>::Zero(ch);
  layer.dgamma = Vec<S>::Zero(ch);
  layer.dbeta = Vec<S>::Zero(ch);
  layer.vgamma = Vec<S>::Zero(ch);
  layer.vbeta = Vec<S>::Zero(ch);
  layer.running_mean = Vec<S>::Zero(ch);
  layer.running_var = Vec<S>::Ones(ch);
  return layer;
}

template <typename S>
FcLayer<S> make_fc(int in, int out, Rng& rng) {
  FcLayer<S> layer;
  layer.in = in;
  layer.out = out;
  layer.w.resize(out, in);
  const double scale = std::sqrt(2.0 / in);
  for (long i = 0; i < layer.w.size(); ++i)
    layer.w.data()[i] = static_cast<S>(scale * rng.normal());
  layer.b = Vec<S>::Zero(out);
  layer.dw = Mat<S>::Zero(out, in);
  layer.db = Vec<S>::Zero(out);
  layer.vw = Mat<S>::Zero(out, in);
  layer.vb = Vec<S>::Zero(out);
  return layer;
}

}  // namespace detail

// VGG-style stacks: base widths 64-128-256-512-512 over five pooling stages,
// (1,1,2,2,2) convs per stage at depth 11 and (2,2,4,4,4) at depth 19, all
// scaled by width_scale. fc1/fc2 are 512*width_scale wide, fc3 = classes.
// Config C duplicates the conv stack into two weight-independent streams
// whose fc1 outputs are concatenated before fc2.
template <typename S>
Network<S> build_network(const NetworkConfig& config, std::uint64_t seed) {
  if (config.depth != 11 && config.depth != 19)
    throw_config("build_network: depth must be 11 or 19");
  if (config.input_side < 32 || config.input_side % 32 != 0)
    throw_config("build_network: input_side must be a positive multiple of 32");
  if (config.width_scale <= 0.0 || config.width_scale > 1.0)
    throw_config("build_network: width_scale must lie in (0, 1]");
  if (config.classes < 2) throw_config("build_network: need at least two classes");

  const std::array<int, 5> base{64, 128, 256, 512, 512};
  const std::array<int, 5> convs = config.depth == 11 ? std::array<int, 5>{1, 1, 2, 2, 2}
                                                      : std::array<int, 5>{2, 2, 4, 4, 4};
  std::array<int, 5> widths;
  for (int i = 0; i < 5; ++i)
    widths[i] = std::max(1, static_cast<int>(std::lround(base[i] * config.width_scale)));
  const int fc_dim =
      std::max(config.classes, static_cast<int>(std::lround(512 * config.width_scale)));

  Rng rng = Rng::fork(seed, 0x4e4e);
  Network<S> net;
  net.config = config;
  const int stream_in = config.input_config == InputConfig::kB ? 2 : 1;
  const int final_side = config.input_side / 32;

  for (int s = 0; s < config.streams(); ++s) {
    std::vector<Layer<S>> stream;
    int in_ch = stream_in;
    for (int stage = 0; stage < 5; ++stage) {
      for (int c = 0; c < convs[stage]; ++c) {
        stream.push_back(detail::make_conv<S>(in_ch, widths[stage], rng));
        stream.push_back(detail::make_bn<S>(widths[stage]));
        stream.push_back(ReluLayer{});
        in_ch = widths[stage];
      }
      stream.push_back(MaxPoolLayer{});
    }
    stream.push_back(FlattenLayer{});
    stream.push_back(detail::make_fc<S>(widths[4] * final_side * final_side, fc_dim, rng));
    stream.push_back(ReluLayer{});
    net.streams.push_back(std::move(stream));
  }

  net.head.push_back(detail::make_fc<S>(fc_dim * config.streams(), fc_dim, rng));
  net.head.push_back(ReluLayer{});
  net.head.push_back(detail::make_fc<S>(fc_dim, config.classes, rng));

  net.mean_image = Vec<S>::Zero(config.channels() * config.input_side * config.input_side);
  return net;
}

// --- forward / backward machinery -------------------------------------------

namespace detail {

template <typename S>
void im2col(const Feature<S>& in, Mat<S>& cols) {
  const int c = in.channels, h = in.height, w = in.width, b = in.batch;
  cols.setZero(c * 9, static_cast<long>(b) * h * w);
  for (int k = 0; k < 9; ++k) {
    const int dy = k / 3 - 1, dx = k % 3 - 1;
    const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
    if (x_hi <= x_lo) continue;
    const int len = x_hi - x_lo;
    for (int s = 0; s < b; ++s) {
      const long base = static_cast<long>(s) * h * w;
      for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
        const long dst = base + static_cast<long>(y) * w + x_lo;
        const long src = base + static_cast<long>(y + dy) * w + x_lo + dx;
        cols.block(k * c, dst, c, len) = in.data.block(0, src, c, len);
      }
    }
  }
}

template <typename S>
void col2im(const Mat<S>& cols, Feature<S>& out) {
  const int c = out.channels, h = out.height, w = out.width, b = out.batch;
  out.data.setZero(c, static_cast<long>(b) * h * w);
  for (int k = 0; k < 9; ++k) {
    const int dy = k / 3 - 1, dx = k % 3 - 1;
    const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
    if (x_hi <= x_lo) continue;
    const int len = x_hi - x_lo;
    for (int s = 0; s < b; ++s) {
      const long base = static_cast<long>(s) * h * w;
      for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
        const long dst = base + static_cast<long>(y) * w + x_lo;
        const long src = base + static_cast<long>(y + dy) * w + x_lo + dx;
        out.data.block(0, src, c, len) += cols.block(k * c, dst, c, len);
      }
    }
  }
}

}  // namespace detail

// Per-pass activation caches kept outside the layers (relu masks, pool argmax,
// stream inputs/outputs) so that backward can replay the graph.
template <typename S>
struct Tape {
  struct Step {
    Feature<S> input;                      // input to the layer
    Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;  // relu / pool arg
  };
  std::vector<std::vector<Step>> stream_steps;
  std::vector<Step> head_steps;
  std::vector<Feature<S>> stream_outputs;
  Feature<S> concat;
  Mat<S> probs;
};

namespace detail {

template <typename S>
Feature<S> layer_forward(Layer<S>& layer, const Feature<S>& in, Mode mode,
                         typename Tape<S>::Step* step) {
  Feature<S> out;
  if (auto* conv = std::get_if<ConvLayer<S>>(&layer)) {
    if (in.channels != conv->in_ch) throw_domain("conv: channel mismatch");
    im2col(in, conv->cols);
    out.channels = conv->out_ch;
    out.height = in.height;
    out.width = in.width;
    out.batch = in.batch;
    out.data.noalias() = conv->w * conv->cols;
    out.data.colwise() += conv->b;
    conv->cache_h = in.height;
    conv->cache_w = in.width;
    conv->cache_b = in.batch;
    if (mode == Mode::kEval) conv->cols.resize(0, 0);
  } else if (auto* bn = std::get_if<BatchNormLayer<S>>(&layer)) {
    if (in.channels != bn->ch) throw_domain("batchnorm: channel mismatch");
    out = in;
    const long n = in.data.cols();
    if (mode == Mode::kTrain) {
      bn->mean = in.data.rowwise().mean();
      Mat<S> centered = in.data.colwise() - bn->mean;
      Vec<S> var = centered.array().square().matrix().rowwise().mean();
      bn->invstd = (var.array() + bn->eps).rsqrt();
      bn->xhat = (centered.array().colwise() * bn->invstd.array()).matrix();
      out.data = (bn->xhat.array().colwise() * bn->gamma.array()).matrix();
      out.data.colwise() += bn->beta;
      bn->running_mean = (S(1) - bn->update_rate) * bn->running_mean + bn->update_rate * bn->mean;
      bn->running_var = (S(1) - bn->update_rate) * bn->running_var + bn->update_rate * var;
    } else {
      Vec<S> invstd = (bn->running_var.array() + bn->eps).rsqrt();
      out.data = (((in.data.colwise() - bn->running_mean).array().colwise() * invstd.array())
                      .colwise() *
                  bn->gamma.array())
                     .matrix();
      out.data.colwise() += bn->beta;
    }
    (void)n;
  } else if (std::get_if<ReluLayer>(&layer)) {
    out = in;
    if (step) step->mask = (in.data.array() > S(0)).template cast<std::uint8_t>();
    out.data = out.data.cwiseMax(S(0));
  } else if (std::get_if<MaxPoolLayer>(&layer)) {
    const int c = in.channels, h = in.height, w = in.width, b = in.batch;
    if (h % 2 != 0 || w % 2 != 0) throw_domain("maxpool: odd spatial dims");
    out.channels = c;
    out.height = h / 2;
    out.width = w / 2;
    out.batch = b;
    const long out_cols = static_cast<long>(b) * out.height * out.width;
    out.data.resize(c, out_cols);
    if (step) step->mask.resize(c, out_cols);
    for (int s = 0; s < b; ++s) {
      const long in_base = static_cast<long>(s) * h * w;
      const long out_base = static_cast<long>(s) * out.height * out.width;
      for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
          const long candidates[4] = {in_base + (2 * y) * w + 2 * x,
                                      in_base + (2 * y) * w + 2 * x + 1,
                                      in_base + (2 * y + 1) * w + 2 * x,
                                      in_base + (2 * y + 1) * w + 2 * x + 1};
          const long oc = out_base + static_cast<long>(y) * out.width + x;
          auto col = out.data.col(oc);
          col = in.data.col(candidates[0]);
          if (step) step->mask.col(oc).setZero();
          for (int k = 1; k < 4; ++k) {
            for (int ch = 0; ch < c; ++ch) {
              if (in.data(ch, candidates[k]) > col(ch)) {
                col(ch) = in.data(ch, candidates[k]);
                if (step) step->mask(ch, oc) = static_cast<std::uint8_t>(k);
              }
            }
          }
        }
      }
    }
  } else if (std::get_if<FlattenLayer>(&layer)) {
    const long per_sample = static_cast<long>(in.channels) * in.height * in.width;
    out.channels = static_cast<int>(per_sample);
    out.height = 1;
    out.width = 1;
    out.batch = in.batch;
    out.data.resize(per_sample, in.batch);
    const long hw = static_cast<long>(in.height) * in.width;
    for (int s = 0; s < in.batch; ++s)
      out.data.col(s) =
          Eigen::Map<const Vec<S>>(in.data.data() + s * hw * in.channels, per_sample);
  } else if (auto* fc = std::get_if<FcLayer<S>>(&layer)) {
    if (in.channels != fc->in || in.height != 1 || in.width != 1)
      throw_domain("fc: input shape mismatch");
    out.channels = fc->out;
    out.height = 1;
    out.width = 1;
    out.batch = in.batch;
    out.data.noalias() = fc->w * in.data;
    out.data.colwise() += fc->b;
    if (mode == Mode::kTrain) fc->x_cache = in.data;
  }
  return out;
}

// dX returned; parameter gradients accumulate into the layers.
template <typename S>
Feature<S> layer_backward(Layer<S>& layer, const Feature<S>& in, const Feature<S>& dout,
                          const typename Tape<S>::Step& step) {
  Feature<S> din;
  if (auto* conv = std::get_if<ConvLayer<S>>(&layer)) {
    conv->dw.noalias() += dout.data * conv->cols.transpose();
    conv->db.noalias() += dout.data.rowwise().sum();
    Mat<S> dcols;
    dcols.noalias() = conv->w.transpose() * dout.data;
    din.channels = conv->in_ch;
    din.height = conv->cache_h;
    din.width = conv->cache_w;
    din.batch = conv->cache_b;
    col2im(dcols, din);
  } else if (auto* bn = std::get_if<BatchNormLayer<S>>(&layer)) {
    const long n = dout.data.cols();
    din = dout;
    bn->dgamma.noalias() += (dout.data.array() * bn->xhat.array()).rowwise().sum().matrix();
    bn->dbeta.noalias() += dout.data.rowwise().sum();
    // standard batchnorm input gradient, all terms per channel
    Mat<S> dxhat = dout.data.array().colwise() * bn->gamma.array();
    Mat<S> centered = in.data.colwise() - bn->mean;
    Vec<S> dvar = ((dxhat.array() * centered.array()).rowwise().sum().matrix().array() *
                   (S(-0.5) * bn->invstd.array().cube()))
                      .matrix();
    Vec<S> dmean = (dxhat.rowwise().sum().array() * -bn->invstd.array()).matrix() +
                   (dvar.array() * centered.rowwise().sum().array() * S(-2.0 / n)).matrix();
    din.data = ((dxhat.array().colwise() * bn->invstd.array()) +
                ((centered.array().colwise() * dvar.array()) * S(2.0 / n)))
                   .matrix();
    din.data.array().colwise() += dmean.array() * S(1.0 / n);
  } else if (std::get_if<ReluLayer>(&layer)) {
    din = dout;
    din.data = (step.mask.template cast<S>() * dout.data.array()).matrix();
  } else if (std::get_if<MaxPoolLayer>(&layer)) {
    din.channels = in.channels;
    din.height = in.height;
    din.width = in.width;
    din.batch = in.batch;
    din.data.setZero(in.channels, in.data.cols());
    const int w = in.width;
    for (int s = 0; s < in.batch; ++s) {
      const long in_base = static_cast<long>(s) * in.height * in.width;
      const long out_base = static_cast<long>(s) * dout.height * dout.width;
      for (int y = 0; y < dout.height; ++y) {
        for (int x = 0; x < dout.width; ++x) {
          const long oc = out_base + static_cast<long>(y) * dout.width + x;
          for (int ch = 0; ch < in.channels; ++ch) {
            const int k = step.mask(ch, oc);
            const long ic = in_base + (2 * y + k / 2) * w + 2 * x + k % 2;
            din.data(ch, ic) += dout.data(ch, oc);
          }
        }
      }
    }
  } else if (std::get_if<FlattenLayer>(&layer)) {
    din.channels = in.channels;
    din.height = in.height;
    din.width = in.width;
    din.batch = in.batch;
    din.data.resize(in.channels, in.data.cols());
    const long hw = static_cast<long>(in.height) * in.width;
    const long per_sample = static_cast<long>(in.channels) * hw;
    for (int s = 0; s < in.batch; ++s)
      Eigen::Map<Vec<S>>(din.data.data() + s * hw * in.channels, per_sample) = dout.data.col(s);
  } else if (auto* fc = std::get_if<FcLayer<S>>(&layer)) {
    fc->dw.noalias() += dout.data * fc->x_cache.transpose();
    fc->db.noalias() += dout.data.rowwise().sum();
    din.channels = fc->in;
    din.height = 1;
    din.width = 1;
    din.batch = in.batch;
    din.data.noalias() = fc->w.transpose() * dout.data;
  }
  return din;
}

}  // namespace detail

// Forward pass; returns softmax probabilities (classes x batch). The tape is
// required for Mode::kTrain and may be null for evaluation.
template <typename S>
Mat<S> forward(Network<S>& net, const Batch<S>& batch, Mode mode, Tape<S>* tape = nullptr) {
  if (batch.side != net.config.input_side) throw_domain("forward: window side mismatch");
  if (batch.channels != net.config.channels()) throw_domain("forward: channel count mismatch");
  if (mode == Mode::kTrain && !tape) throw_domain("forward: training requires a tape");

  if (tape) {
    tape->stream_steps.assign(net.streams.size(), {});
    tape->head_steps.clear();
    tape->stream_outputs.clear();
  }

  std::vector<Feature<S>> stream_outs;
  for (size_t s = 0; s < net.streams.size(); ++s) {
    Feature<S> act;
    act.batch = batch.batch;
    act.height = batch.side;
    act.width = batch.side;
    if (net.config.input_config == InputConfig::kC) {
      act.channels = 1;
      act.data = batch.data.row(static_cast<Eigen::Index>(s));
    } else {
      act.channels = batch.channels;
      act.data = batch.data;
    }
    for (size_t l = 0; l < net.streams[s].size(); ++l) {
      typename Tape<S>::Step* step = nullptr;
      if (tape) {
        tape->stream_steps[s].emplace_back();
        step = &tape->stream_steps[s].back();
        step->input = act;
      }
      act = detail::layer_forward(net.streams[s][l], act, mode, step);
    }
    stream_outs.push_back(std::move(act));
  }

  Feature<S> concat;
  if (stream_outs.size() == 1) {
    concat = std::move(stream_outs[0]);
  } else {
    concat.batch = batch.batch;
    concat.height = 1;
    concat.width = 1;
    concat.channels = stream_outs[0].channels + stream_outs[1].channels;
    concat.data.resize(concat.channels, batch.batch);
    concat.data.topRows(stream_outs[0].channels) = stream_outs[0].data;
    concat.data.bottomRows(stream_outs[1].channels) = stream_outs[1].data;
  }
  if (tape) {
    tape->stream_outputs = stream_outs;
    tape->concat = concat;
  }

  Feature<S> act = concat;
  for (size_t l = 0; l < net.head.size(); ++l) {
    typename Tape<S>::Step* step = nullptr;
    if (tape) {
      tape->head_steps.emplace_back();
      step = &tape->head_steps.back();
      step->input = act;
    }
    act = detail::layer_forward(net.head[l], act, mode, step);
  }

  // softmax with the usual max-shift
  Mat<S> probs = act.data;
  for (int col = 0; col < probs.cols(); ++col) {
    const S m = probs.col(col).maxCoeff();
    probs.col(col) = (probs.col(col).array() - m).exp();
    probs.col(col) /= probs.col(col).sum();
  }
  if (tape) tape->probs = probs;
  return probs;
}

template <typename S>
void zero_gradients(Network<S>& net);

// Cross-entropy backward through the whole graph. Gradients accumulate into
// the layers (callers zero them per batch); returns the mean batch loss.
template <typename S>
S backward(Network<S>& net, const Batch<S>& batch, const std::vector<int>& labels, Tape<S>& tape) {
  const int b = batch.batch;
  if (static_cast<int>(labels.size()) != b) throw_domain("backward: label count mismatch");

  Mat<S> probs = forward(net, batch, Mode::kTrain, &tape);
  S loss = S(0);
  Feature<S> grad;
  grad.channels = net.config.classes;
  grad.height = 1;
  grad.width = 1;
  grad.batch = b;
  grad.data = probs;
  for (int s = 0; s < b; ++s) {
    loss -= std::log(std::max(probs(labels[s], s), std::numeric_limits<S>::min()));
    grad.data(labels[s], s) -= S(1);
  }
  loss /= b;
  grad.data /= S(b);

  for (int l = static_cast<int>(net.head.size()) - 1; l >= 0; --l)
    grad = detail::layer_backward(net.head[l], tape.head_steps[l].input, grad,
                                  tape.head_steps[l]);

  for (size_t s = 0; s < net.streams.size(); ++s) {
    Feature<S> sgrad;
    if (net.streams.size() == 1) {
      sgrad = grad;
    } else {
      sgrad.batch = b;
      sgrad.height = 1;
      sgrad.width = 1;
      sgrad.channels = tape.stream_outputs[s].channels;
      sgrad.data = s == 0 ? grad.data.topRows(sgrad.channels)
                          : grad.data.bottomRows(sgrad.channels);
    }
    for (int l = static_cast<int>(net.streams[s].size()) - 1; l >= 0; --l)
      sgrad = detail::layer_backward(net.streams[s][l], tape.stream_steps[s][l].input, sgrad,
                                     tape.stream_steps[s][l]);
  }
  return loss;
}

template <typename S>
std::vector<ParamRef<S>> parameters(Network<S>& net) {
  std::vector<ParamRef<S>> refs;
  auto visit_layer = [&](Layer<S>& layer) {
    if (auto* conv = std::get_if<ConvLayer<S>>(&layer)) {
      refs.push_back({conv->w.data(), conv->dw.data(), conv->vw.data(), conv->w.size(), true});
      refs.push_back({conv->b.data(), conv->db.data(), conv->vb.data(), conv->b.size(), false});
    } else if (auto* bn = std::get_if<BatchNormLayer<S>>(&layer)) {
      refs.push_back(
          {bn->gamma.data(), bn->dgamma.data(), bn->vgamma.data(), bn->gamma.size(), false});
      refs.push_back(
          {bn->beta.data(), bn->dbeta.data(), bn->vbeta.data(), bn->beta.size(), false});
    } else if (auto* fc = std::get_if<FcLayer<S>>(&layer)) {
      refs.push_back({fc->w.data(), fc->dw.data(), fc->vw.data(), fc->w.size(), true});
      refs.push_back({fc->b.data(), fc->db.data(), fc->vb.data(), fc->b.size(), false});
    }
  };
  for (auto& stream : net.streams)
    for (auto& layer : stream) visit_layer(layer);
  for (auto& layer : net.head) visit_layer(layer);
  return refs;
}

template <typename S>
void zero_gradients(Network<S>& net) {
  for (ParamRef<S>& p : parameters(net))
    std::fill(p.grad, p.grad + p.size, S(0));
}

template <typename S>
long parameter_count(Network<S>& net) {
  long count = 0;
  for (const ParamRef<S>& p : parameters(net)) count += p.size;
  return count;
}

// SGD with momentum; weight decay applies to decayed (weight) tensors only.
template <typename S>
void sgd_step(Network<S>& net, const Hyperparams& hp, double lr) {
  for (ParamRef<S>& p : parameters(net)) {
    for (long i = 0; i < p.size; ++i) {
      const S g = p.grad[i] + (p.decayed ? static_cast<S>(hp.weight_decay) * p.value[i] : S(0));
      p.velocity[i] = static_cast<S>(hp.momentum) * p.velocity[i] - static_cast<S>(lr) * g;
      p.value[i] += p.velocity[i];
    }
  }
}

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

// In-place horizontal/vertical flip of one sample's planar window data.
template <typename S>
void flip_window(Mat<S>& data, long sample, int channels, int side, bool flip_h, bool flip_v) {
  if (!flip_h && !flip_v) return;
  const long base = sample * static_cast<long>(side) * side;
  Mat<S> copy = data.block(0, base, channels, static_cast<long>(side) * side);
  for (int y = 0; y < side; ++y) {
    const int sy = flip_v ? side - 1 - y : y;
    for (int x = 0; x < side; ++x) {
      const int sx = flip_h ? side - 1 - x : x;
      data.col(base + static_cast<long>(y) * side + x) =
          copy.col(static_cast<long>(sy) * side + sx);
    }
  }
}

// Full training loop: per-epoch shuffle, optional random flips, geometric
// learning-rate decay from lr_start to lr_end, SGD with momentum and weight
// decay. The training-set mean image is computed once and stored on the net.
template <typename S>
std::vector<EpochStats> train(Network<S>& net, const Batch<S>& windows,
                              const std::vector<int>& labels, const Hyperparams& hp) {
  const int n = windows.batch;
  if (n == 0) throw_domain("train: empty training set");
  if (static_cast<int>(labels.size()) != n) throw_domain("train: label count mismatch");
  const long hw = static_cast<long>(windows.side) * windows.side;

  // mean image over the training set
  net.mean_image = Vec<S>::Zero(windows.channels * hw);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < windows.channels; ++c)
      net.mean_image.segment(c * hw, hw) +=
          windows.data.block(c, s * hw, 1, hw).transpose() / S(n);

  std::vector<EpochStats> history;
  Tape<S> tape;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    Rng rng = Rng::fork(hp.seed, 0xe90c + static_cast<std::uint64_t>(epoch));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

    const double lr = learning_rate(hp, epoch);
    double loss_sum = 0.0;
    long correct = 0, seen = 0;
    for (int start = 0; start < n; start += hp.batch_size) {
      const int b = std::min(hp.batch_size, n - start);
      if (b < 2 && n > 1) break;  // batchnorm needs a real batch
      Batch<S> batch;
      batch.batch = b;
      batch.channels = windows.channels;
      batch.side = windows.side;
      batch.data.resize(windows.channels, static_cast<long>(b) * hw);
      std::vector<int> batch_labels(b);
      for (int i = 0; i < b; ++i) {
        const int src = order[start + i];
        batch.data.block(0, static_cast<long>(i) * hw, windows.channels, hw) =
            windows.data.block(0, static_cast<long>(src) * hw, windows.channels, hw);
        batch_labels[i] = labels[src];
        if (hp.flip_augment)
          flip_window(batch.data, i, windows.channels, windows.side, rng.bernoulli(0.5),
                      rng.bernoulli(0.5));
      }
      for (int i = 0; i < b; ++i)
        for (int c = 0; c < windows.channels; ++c)
          batch.data.block(c, static_cast<long>(i) * hw, 1, hw) -=
              net.mean_image.segment(c * hw, hw).transpose();

      zero_gradients(net);
      const S loss = backward(net, batch, batch_labels, tape);
      sgd_step(net, hp, lr);

      loss_sum += static_cast<double>(loss) * b;
      for (int i = 0; i < b; ++i) {
        int arg = 0;
        tape.probs.col(i).maxCoeff(&arg);
        correct += arg == batch_labels[i];
      }
      seen += b;
    }
    history.push_back({loss_sum / std::max<long>(1, seen),
                       static_cast<double>(correct) / std::max<long>(1, seen), lr});
  }
  return history;
}

// Positive-class probabilities for a batch of windows (mean image applied).
template <typename S>
std::vector<double> score_windows(Network<S>& net, Batch<S> batch) {
  const long hw = static_cast<long>(batch.side) * batch.side;
  for (int i = 0; i < batch.batch; ++i)
    for (int c = 0; c < batch.channels; ++c)
      batch.data.block(c, static_cast<long>(i) * hw, 1, hw) -=
          net.mean_image.segment(c * hw, hw).transpose();
  Mat<S> probs = forward(net, batch, Mode::kEval);
  std::vector<double> scores(batch.batch);
  for (int i = 0; i < batch.batch; ++i) scores[i] = static_cast<double>(probs(1, i));
  return scores;
}

// --- serialization (CSNN1, float32 tensors) ----------------------------------

void save_network(const Network<float>& net, const std::string& path);
Network<float> load_network(const std::string& path);

}  // namespace cargoscan::nnet
