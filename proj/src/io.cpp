#include "ocdc/io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ocdc::io {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("truncated file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
         std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = get_u32(is);
  return v | std::uint64_t(get_u32(is)) << 32;
}

double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path);
  return is;
}

void expect_magic(std::istream& is, const char* magic,
                  const std::string& path) {
  char got[4];
  is.read(got, 4);
  if (!is || !std::equal(got, got + 4, magic)) {
    throw FormatError("bad magic in " + path);
  }
}

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  put_u64(os, m.rows());
  put_u64(os, m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) put_f64(os, m(i, j));
}

Eigen::MatrixXd get_matrix(std::istream& is) {
  const auto rows = get_u64(is), cols = get_u64(is);
  if (rows > (1u << 24) || cols > (1u << 24)) {
    throw FormatError("implausible tensor shape");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_f64(is);
  return m;
}

} // namespace

void write_schedule(const std::string& path,
                    const lower::Schedule& schedule) {
  std::ofstream os = open_out(path);
  os.write("OCDS", 4);
  put_u32(os, kFormatVersion);
  put_u32(os, schedule.chunk_width);
  put_u64(os, schedule.steps.size());
  put_u32(os, schedule.accumulator_count);
  put_f64(os, schedule.scale);
  for (const auto& step : schedule.steps) {
    put_u32(os, step.accumulator_index);
    put_f64(os, step.scale);
    for (int i = 0; i < schedule.chunk_width; ++i)
      put_f64(os, step.slow_values[i]);
    for (int i = 0; i < schedule.chunk_width; ++i)
      put_f64(os, step.fast_values[i]);
  }
}

lower::Schedule read_schedule(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, "OCDS", path);
  if (get_u32(is) != kFormatVersion) {
    throw FormatError("unsupported schedule version in " + path);
  }
  lower::Schedule schedule;
  schedule.chunk_width = static_cast<int>(get_u32(is));
  const std::uint64_t count = get_u64(is);
  schedule.accumulator_count = static_cast<int>(get_u32(is));
  schedule.scale = get_f64(is);
  schedule.steps.resize(count);
  for (auto& step : schedule.steps) {
    step.accumulator_index = static_cast<int>(get_u32(is));
    step.scale = get_f64(is);
    step.slow_values.resize(schedule.chunk_width);
    step.fast_values.resize(schedule.chunk_width);
    for (int i = 0; i < schedule.chunk_width; ++i)
      step.slow_values[i] = get_f64(is);
    for (int i = 0; i < schedule.chunk_width; ++i)
      step.fast_values[i] = get_f64(is);
  }
  if (!is) throw FormatError("truncated schedule in " + path);
  return schedule;
}

void schedule_to_csv(const std::string& path,
                     const lower::Schedule& schedule) {
  std::vector<std::string> header = {"step", "accumulator", "scale"};
  for (int i = 0; i < schedule.chunk_width; ++i)
    header.push_back("slow_" + std::to_string(i));
  for (int i = 0; i < schedule.chunk_width; ++i)
    header.push_back("fast_" + std::to_string(i));
  std::vector<std::vector<double>> rows;
  rows.reserve(schedule.steps.size());
  for (std::size_t s = 0; s < schedule.steps.size(); ++s) {
    const auto& step = schedule.steps[s];
    std::vector<double> row = {double(s), double(step.accumulator_index),
                               step.scale};
    for (int i = 0; i < schedule.chunk_width; ++i)
      row.push_back(step.slow_values[i]);
    for (int i = 0; i < schedule.chunk_width; ++i)
      row.push_back(step.fast_values[i]);
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void write_matrices(const std::string& path,
                    const std::vector<Eigen::MatrixXd>& tensors) {
  std::ofstream os = open_out(path);
  os.write("OCDW", 4);
  put_u32(os, kFormatVersion);
  put_u32(os, 0); // container flavor: plain tensor list
  put_u64(os, tensors.size());
  for (const auto& t : tensors) put_matrix(os, t);
}

std::vector<Eigen::MatrixXd> read_matrices(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, "OCDW", path);
  if (get_u32(is) != kFormatVersion || get_u32(is) != 0) {
    throw FormatError("not a tensor container: " + path);
  }
  std::vector<Eigen::MatrixXd> tensors(get_u64(is));
  for (auto& t : tensors) t = get_matrix(is);
  if (!is) throw FormatError("truncated tensors in " + path);
  return tensors;
}

void write_network(const std::string& path, const net::Network& network) {
  std::ofstream os = open_out(path);
  os.write("OCDW", 4);
  put_u32(os, kFormatVersion);
  put_u32(os, 1); // container flavor: checkpoint
  put_u32(os, network.image_size);
  put_u64(os, network.layers.size());
  for (const auto& layer : network.layers) {
    const auto& s = layer.spec;
    put_u32(os, static_cast<std::uint32_t>(s.kind));
    put_u32(os, static_cast<std::uint32_t>(s.activation));
    put_u32(os, s.in_size);
    put_u32(os, s.out_size);
    put_u32(os, s.in_channels);
    put_u32(os, s.out_channels);
    put_u32(os, s.kernel);
    put_u32(os, s.map_size);
    put_matrix(os, layer.weight);
    put_matrix(os, layer.bias);
  }
}

net::Network read_network(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, "OCDW", path);
  if (get_u32(is) != kFormatVersion || get_u32(is) != 1) {
    throw FormatError("not a checkpoint: " + path);
  }
  net::Network network;
  network.image_size = static_cast<int>(get_u32(is));
  network.layers.resize(get_u64(is));
  for (auto& layer : network.layers) {
    auto& s = layer.spec;
    s.kind = static_cast<net::LayerKind>(get_u32(is));
    s.activation = static_cast<net::Activation>(get_u32(is));
    s.in_size = static_cast<int>(get_u32(is));
    s.out_size = static_cast<int>(get_u32(is));
    s.in_channels = static_cast<int>(get_u32(is));
    s.out_channels = static_cast<int>(get_u32(is));
    s.kernel = static_cast<int>(get_u32(is));
    s.map_size = static_cast<int>(get_u32(is));
    layer.weight = get_matrix(is);
    layer.bias = get_matrix(is);
  }
  if (!is) throw FormatError("truncated checkpoint in " + path);
  return network;
}

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << std::setprecision(17);
  for (std::size_t i = 0; i < header.size(); ++i) {
    os << (i ? "," : "") << header[i];
  }
  os << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      os << (i ? "," : "") << row[i];
    }
    os << "\n";
  }
}

void write_pgm(const std::string& path, const Eigen::MatrixXd& image,
               double lo, double hi) {
  if (lo == hi) {
    lo = image.minCoeff();
    hi = image.maxCoeff();
    if (lo == hi) hi = lo + 1.0;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  os << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  for (int i = 0; i < image.rows(); ++i) {
    for (int j = 0; j < image.cols(); ++j) {
      double v = (image(i, j) - lo) / (hi - lo);
      const int px = std::clamp(int(std::lround(v * 255.0)), 0, 255);
      os.put(char(px));
    }
  }
}

void write_svg_lines(const std::string& path,
                     const std::vector<std::string>& names,
                     const std::vector<std::vector<double>>& xs,
                     const std::vector<std::vector<double>>& ys,
                     const std::string& title) {
  if (xs.size() != ys.size() || xs.size() != names.size()) {
    throw FormatError("svg: series count mismatch");
  }
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    for (double v : xs[s]) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : ys[s]) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (ymax == ymin) ymax = ymin + 1;

  const double w = 640, h = 420, m = 50;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << std::setprecision(10);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
     << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\">"
       << title << "</text>\n";
  }
  os << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << w - 2 * m
     << "\" height=\"" << h - 2 * m
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < xs.size(); ++s) {
    os << "<polyline fill=\"none\" stroke=\"" << palette[s % 6]
       << "\" points=\"";
    for (std::size_t i = 0; i < xs[s].size(); ++i) {
      const double px = m + (xs[s][i] - xmin) / (xmax - xmin) * (w - 2 * m);
      const double py =
          h - m - (ys[s][i] - ymin) / (ymax - ymin) * (h - 2 * m);
      os << px << "," << py << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << w - m + 4 << "\" y=\"" << m + 16 * (s + 1)
       << "\" fill=\"" << palette[s % 6] << "\" font-size=\"11\">"
       << names[s] << "</text>\n";
  }
  os << "</svg>\n";
}

} // namespace ocdc::io
