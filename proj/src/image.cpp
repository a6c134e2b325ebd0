#include "cargoscan/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace cargoscan {

namespace {

// Reads one PNM header token, skipping whitespace and `#` comments. Comments
// of the form `# air=<int>` are reported through air_out.
std::string next_token(std::istream& in, long* air_out) {
  for (;;) {
    int c = in.get();
    if (c == EOF) throw_format("pgm: truncated header");
    if (std::isspace(c)) continue;
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      long air = 0;
      if (std::sscanf(line.c_str(), " air=%ld", &air) == 1 && air_out) *air_out = air;
      continue;
    }
    std::string tok(1, static_cast<char>(c));
    while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
    return tok;
  }
}

long parse_dim(const std::string& tok, const char* what) {
  char* end = nullptr;
  long v = std::strtol(tok.c_str(), &end, 10);
  if (end == nullptr || *end != '\0' || v <= 0) throw_format(std::string("pgm: bad ") + what);
  return v;
}

}  // namespace

RawScan read_pgm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("pgm: cannot open " + path);

  long air_comment = -1;
  if (next_token(in, &air_comment) != "P5") throw_format("pgm: not a binary PGM (P5)");
  const long w = parse_dim(next_token(in, &air_comment), "width");
  const long h = parse_dim(next_token(in, &air_comment), "height");
  const long maxval = parse_dim(next_token(in, &air_comment), "maxval");
  if (maxval != 65535) throw_format("pgm: expected maxval 65535, got " + std::to_string(maxval));
  // next_token consumed the single whitespace byte after maxval.

  RawScan scan;
  scan.pixels.resize(h, w);
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 2);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw_io("pgm: truncated pixel payload");

  std::uint16_t maxpix = 0;
  for (long i = 0; i < w * h; ++i) {
    const std::uint16_t v = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    scan.pixels.data()[i] = v;
    maxpix = std::max(maxpix, v);
  }
  if (air_comment > 0 && air_comment <= 65535) {
    scan.air_value = static_cast<std::uint16_t>(air_comment);
  } else {
    scan.air_value = maxpix;
  }
  if (scan.air_value == 0) throw_format("pgm: air reference is zero");
  return scan;
}

void write_pgm16(const RawScan& scan, const std::string& path) {
  if (scan.width() < 1 || scan.height() < 1) throw_domain("pgm: empty scan");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("pgm: cannot open " + path + " for writing");
  out << "P5\n# air=" << scan.air_value << "\n" << scan.width() << " " << scan.height() << "\n65535\n";
  std::vector<unsigned char> buf(static_cast<size_t>(scan.width()) * scan.height() * 2);
  const std::uint16_t* p = scan.pixels.data();
  for (size_t i = 0; i < buf.size() / 2; ++i) {
    buf[2 * i] = static_cast<unsigned char>(p[i] >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(p[i] & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw_io("pgm: short write to " + path);
}

PlaneU8 read_pgm8(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("pgm: cannot open " + path);
  if (next_token(in, nullptr) != "P5") throw_format("pgm: not a binary PGM (P5)");
  const long w = parse_dim(next_token(in, nullptr), "width");
  const long h = parse_dim(next_token(in, nullptr), "height");
  const long maxval = parse_dim(next_token(in, nullptr), "maxval");
  if (maxval != 255) throw_format("pgm: expected maxval 255");
  PlaneU8 img(h, w);
  in.read(reinterpret_cast<char*>(img.data()), w * h);
  if (in.gcount() != w * h) throw_io("pgm: truncated pixel payload");
  return img;
}

void write_pgm8(const PlaneU8& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("pgm: cannot open " + path + " for writing");
  out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), img.size());
  if (!out) throw_io("pgm: short write to " + path);
}

void write_xtf(const PlaneD& plane, const std::string& path) {
  char header[17];
  const int n = std::snprintf(header, sizeof(header), "XTF1 %ld %ld", plane.cols(), plane.rows());
  if (n < 0 || n > 15) throw_domain("xtf: dimensions do not fit the 16-byte header");
  std::memset(header + n, ' ', 15 - n);
  header[15] = '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("xtf: cannot open " + path + " for writing");
  out.write(header, 16);
  std::vector<float> buf(static_cast<size_t>(plane.size()));
  for (Eigen::Index i = 0; i < plane.size(); ++i) buf[i] = static_cast<float>(plane.data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!out) throw_io("xtf: short write to " + path);
}

PlaneD read_xtf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("xtf: cannot open " + path);
  char header[17] = {0};
  in.read(header, 16);
  if (in.gcount() != 16) throw_io("xtf: truncated header");
  long w = 0, h = 0;
  if (std::sscanf(header, "XTF1 %ld %ld", &w, &h) != 2 || w <= 0 || h <= 0 || header[15] != '\n')
    throw_format("xtf: bad header");
  std::vector<float> buf(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * 4)) throw_io("xtf: truncated payload");
  PlaneD plane(h, w);
  for (size_t i = 0; i < buf.size(); ++i) plane.data()[i] = buf[i];
  return plane;
}

DeadColumnResult remove_dead_columns(const RawScan& scan) {
  const int w = scan.width(), h = scan.height();
  const double dead_thresh = 0.02 * scan.air_value;
  std::vector<int> keep, removed;
  keep.reserve(w);
  for (int x = 0; x < w; ++x) {
    int below = 0;
    for (int y = 0; y < h; ++y)
      if (scan.pixels(y, x) < dead_thresh) ++below;
    if (static_cast<double>(below) / h > 0.95) {
      removed.push_back(x);
    } else {
      keep.push_back(x);
    }
  }
  if (keep.empty()) throw_domain("remove_dead_columns: every column is dead");

  DeadColumnResult result;
  result.removed = std::move(removed);
  result.scan.air_value = scan.air_value;
  result.scan.px_size_mm = scan.px_size_mm;
  result.scan.pixels.resize(h, static_cast<int>(keep.size()));
  for (size_t i = 0; i < keep.size(); ++i) result.scan.pixels.col(i) = scan.pixels.col(keep[i]);
  return result;
}

TransmissionImage normalize_air(const RawScan& scan) {
  const int w = scan.width(), h = scan.height();
  const int band = std::min(kAirBandRows, h);

  // Per-column median over the air band.
  std::vector<double> air(w);
  std::vector<double> col(band);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < band; ++y) col[y] = scan.pixels(y, x);
    std::sort(col.begin(), col.end());
    air[x] = (band % 2 == 1) ? col[band / 2] : 0.5 * (col[band / 2 - 1] + col[band / 2]);
    if (air[x] == 0.0) throw_domain("normalize_air: zero air estimate at column " + std::to_string(x));
  }

  // Centered moving average of width 9; the window shrinks symmetrically at
  // the borders so that affine air profiles are preserved exactly.
  std::vector<double> smooth(w);
  for (int x = 0; x < w; ++x) {
    const int r = std::min({4, x, w - 1 - x});
    double sum = 0.0;
    for (int k = -r; k <= r; ++k) sum += air[x + k];
    smooth[x] = sum / (2 * r + 1);
  }

  TransmissionImage out;
  out.values.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.values(y, x) = clamp_transmission(scan.pixels(y, x) / smooth[x]);
  return out;
}

namespace {

inline int reflect_index(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - 1 - i;
  return i;
}

}  // namespace

TransmissionImage despeckle(const TransmissionImage& img) {
  const int w = img.width(), h = img.height();
  TransmissionImage out;
  out.values = img.values;
  double window[9];
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          window[n++] = img.values(reflect_index(y + dy, h), reflect_index(x + dx, w));
      std::nth_element(window, window + 4, window + 9);
      const double median = window[4];
      const double v = img.values(y, x);
      if (std::abs(v - median) > 0.5 * median) out.values(y, x) = median;
    }
  }
  return out;
}

LogImage log_transform(const TransmissionImage& img) {
  LogImage out;
  out.values = -img.values.log();
  return out;
}

PreprocessResult preprocess(const RawScan& scan) {
  DeadColumnResult cleaned = remove_dead_columns(scan);
  PreprocessResult result;
  result.removed_columns = std::move(cleaned.removed);
  result.image = despeckle(normalize_air(cleaned.scan));
  return result;
}

RawScan raw_from_transmission(const TransmissionImage& img, std::uint16_t air_value) {
  RawScan scan;
  scan.air_value = air_value;
  scan.pixels.resize(img.height(), img.width());
  for (Eigen::Index i = 0; i < img.values.size(); ++i) {
    const double counts = std::round(img.values.data()[i] * air_value);
    scan.pixels.data()[i] = static_cast<std::uint16_t>(std::clamp(counts, 0.0, 65535.0));
  }
  return scan;
}

}  // namespace cargoscan
