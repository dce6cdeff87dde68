#pragma once

// Serialization: OCDS schedule binaries, OCDW tensor/checkpoint
// binaries, CSV tables, PGM images and SVG line plots.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ocdc/lowering.hpp"
#include "ocdc/network.hpp"

namespace ocdc::io {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "OCDS": magic, format version u32, chunk width, step count, then
// per-step payload as little-endian 64-bit floats.
void write_schedule(const std::string& path, const lower::Schedule& schedule);
lower::Schedule read_schedule(const std::string& path);
void schedule_to_csv(const std::string& path, const lower::Schedule& schedule);

// "OCDW" tensor container: version u32, tensor count, then per tensor
// rows/cols and row-major little-endian f64 data.
void write_matrices(const std::string& path,
                    const std::vector<Eigen::MatrixXd>& tensors);
std::vector<Eigen::MatrixXd> read_matrices(const std::string& path);

// "OCDW" checkpoint: version u32, layer count, then per layer a kind
// tag, shape dims and f64 weight/bias data.
void write_network(const std::string& path, const net::Network& network);
net::Network read_network(const std::string& path);

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// Grayscale 8-bit PGM, input linearly mapped from [lo, hi] (equal
/// bounds auto-scale to the image's range).
void write_pgm(const std::string& path, const Eigen::MatrixXd& image,
               double lo = 0.0, double hi = 0.0);

/// Line plot of one or more named series; a pure function of the data.
void write_svg_lines(const std::string& path,
                     const std::vector<std::string>& names,
                     const std::vector<std::vector<double>>& xs,
                     const std::vector<std::vector<double>>& ys,
                     const std::string& title = "");

} // namespace ocdc::io
