#include "cargoscan/nnet.hpp"

namespace cargoscan::nnet {

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw_io("nnet: truncated model file");
  return v;
}

void write_tensor(std::ofstream& out, const float* data, long size) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(size));
  out.write(reinterpret_cast<const char*>(data), size * 4);
}

void read_tensor(std::ifstream& in, float* data, long size) {
  const auto stored = read_pod<std::uint32_t>(in);
  if (stored != static_cast<std::uint32_t>(size)) throw_format("nnet: tensor size mismatch");
  in.read(reinterpret_cast<char*>(data), size * 4);
  if (!in) throw_io("nnet: truncated tensor payload");
}

template <typename Fn>
void for_each_tensor(Network<float>& net, Fn&& fn) {
  auto visit_layer = [&](Layer<float>& layer) {
    if (auto* conv = std::get_if<ConvLayer<float>>(&layer)) {
      fn(conv->w.data(), conv->w.size());
      fn(conv->b.data(), conv->b.size());
    } else if (auto* bn = std::get_if<BatchNormLayer<float>>(&layer)) {
      fn(bn->gamma.data(), bn->gamma.size());
      fn(bn->beta.data(), bn->beta.size());
      fn(bn->running_mean.data(), bn->running_mean.size());
      fn(bn->running_var.data(), bn->running_var.size());
    } else if (auto* fc = std::get_if<FcLayer<float>>(&layer)) {
      fn(fc->w.data(), fc->w.size());
      fn(fc->b.data(), fc->b.size());
    }
  };
  for (auto& stream : net.streams)
    for (auto& layer : stream) visit_layer(layer);
  for (auto& layer : net.head) visit_layer(layer);
}

}  // namespace

void save_network(const Network<float>& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("nnet: cannot open " + path + " for writing");
  out.write("CSNN1", 5);
  write_pod<std::uint8_t>(out, 1);  // version
  write_pod<std::int32_t>(out, net.config.depth);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(net.config.input_config));
  write_pod<std::int32_t>(out, net.config.input_side);
  write_pod<double>(out, net.config.width_scale);
  write_pod<std::int32_t>(out, net.config.classes);
  write_pod<double>(out, net.t90);
  write_tensor(out, net.mean_image.data(), net.mean_image.size());
  for_each_tensor(const_cast<Network<float>&>(net),
                  [&](float* data, long size) { write_tensor(out, data, size); });
  if (!out) throw_io("nnet: short write to " + path);
}

Network<float> load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("nnet: cannot open " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "CSNN1", 5) != 0) throw_format("nnet: bad magic");
  if (read_pod<std::uint8_t>(in) != 1) throw_format("nnet: unsupported version");

  NetworkConfig config;
  config.depth = read_pod<std::int32_t>(in);
  config.input_config = static_cast<InputConfig>(read_pod<std::uint8_t>(in));
  config.input_side = read_pod<std::int32_t>(in);
  config.width_scale = read_pod<double>(in);
  config.classes = read_pod<std::int32_t>(in);

  Network<float> net = build_network<float>(config, 0);
  net.t90 = read_pod<double>(in);
  read_tensor(in, net.mean_image.data(), net.mean_image.size());
  for_each_tensor(net, [&](float* data, long size) { read_tensor(in, data, size); });
  return net;
}

}  // namespace cargoscan::nnet
