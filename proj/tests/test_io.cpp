#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "ocdc/io.hpp"

using namespace ocdc::io;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/ocdc_io_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

ocdc::lower::Schedule sample_schedule() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(7);
  Eigen::MatrixXd a(7, 3);
  for (int i = 0; i < 7; ++i) {
    x[i] = u(rng);
    for (int j = 0; j < 3; ++j) a(i, j) = u(rng);
  }
  return ocdc::lower::decompose_mvm(x, a, 3);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

} // namespace

TEST_CASE("schedule round trip preserves the replay result") {
  TempFile f("sched.ocds");
  ocdc::lower::Schedule s = sample_schedule();
  write_schedule(f.path, s);
  ocdc::lower::Schedule back = read_schedule(f.path);
  CHECK(back.chunk_width == s.chunk_width);
  CHECK(back.steps.size() == s.steps.size());
  CHECK((back.replay() - s.replay()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("schedule files start with the OCDS magic") {
  TempFile f("magic.ocds");
  write_schedule(f.path, sample_schedule());
  CHECK(slurp(f.path).substr(0, 4) == "OCDS");
}

TEST_CASE("corrupt magic is rejected") {
  TempFile f("bad.ocds");
  {
    std::ofstream os(f.path, std::ios::binary);
    os << "NOPEgarbage";
  }
  CHECK_THROWS_AS(read_schedule(f.path), FormatError);
  CHECK_THROWS_AS(read_matrices(f.path), FormatError);
  CHECK_THROWS_AS(read_network(f.path), FormatError);
}

TEST_CASE("truncated schedule is rejected") {
  TempFile f("trunc.ocds");
  write_schedule(f.path, sample_schedule());
  std::string data = slurp(f.path);
  {
    std::ofstream os(f.path, std::ios::binary);
    os.write(data.data(), data.size() / 2);
  }
  CHECK_THROWS_AS(read_schedule(f.path), FormatError);
}

TEST_CASE("schedule CSV carries one row per step") {
  TempFile f("sched.csv");
  ocdc::lower::Schedule s = sample_schedule();
  schedule_to_csv(f.path, s);
  std::ifstream is(f.path);
  std::string line;
  std::getline(is, line);
  CHECK(line.substr(0, 22) == "step,accumulator,scale");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == int(s.steps.size()));
}

TEST_CASE("tensor container round trip is exact") {
  TempFile f("tensors.ocdw");
  std::vector<Eigen::MatrixXd> tensors = {
      Eigen::MatrixXd::Random(5, 7), Eigen::MatrixXd::Random(1, 1),
      Eigen::MatrixXd::Random(3, 2)};
  write_matrices(f.path, tensors);
  auto back = read_matrices(f.path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK((back[i] - tensors[i]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(slurp(f.path).substr(0, 4) == "OCDW");
}

TEST_CASE("checkpoint round trip preserves inference") {
  TempFile f("net.ocdw");
  ocdc::net::Network net = ocdc::net::Network::mini_automap(12, 8, 2, 9);
  write_network(f.path, net);
  ocdc::net::Network back = read_network(f.path);
  REQUIRE(back.layers.size() == net.layers.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 12);
  Eigen::MatrixXd a = ocdc::net::forward(net, x).output;
  Eigen::MatrixXd b = ocdc::net::forward(back, x).output;
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tensor and checkpoint flavors do not cross-load") {
  TempFile f("flavor.ocdw");
  write_matrices(f.path, {Eigen::MatrixXd::Random(2, 2)});
  CHECK_THROWS_AS(read_network(f.path), FormatError);
}

TEST_CASE("CSV writes full-precision values") {
  TempFile f("t.csv");
  write_csv(f.path, {"a", "b"}, {{0.1, 2.0}, {3.5, 1.0 / 3.0}});
  std::ifstream is(f.path);
  std::string header, r1, r2;
  std::getline(is, header);
  std::getline(is, r1);
  std::getline(is, r2);
  CHECK(header == "a,b");
  CHECK(r1.substr(0, 3) == "0.1");
  CHECK(r2.find("0.3333333333333") != std::string::npos);
}

TEST_CASE("PGM header and payload size") {
  TempFile f("img.pgm");
  Eigen::MatrixXd img = Eigen::MatrixXd::Random(6, 9);
  write_pgm(f.path, img);
  std::string data = slurp(f.path);
  CHECK(data.substr(0, 3) == "P5\n");
  CHECK(data.find("9 6\n255\n") != std::string::npos);
  const std::size_t header_end = data.find("255\n") + 4;
  CHECK(data.size() - header_end == 6 * 9);
}

TEST_CASE("SVG output is a pure function of the data") {
  TempFile f1("p1.svg"), f2("p2.svg");
  std::vector<std::vector<double>> xs = {{0, 1, 2}, {0, 1, 2}};
  std::vector<std::vector<double>> ys = {{1, 4, 9}, {2, 3, 5}};
  write_svg_lines(f1.path, {"sq", "ln"}, xs, ys, "demo");
  write_svg_lines(f2.path, {"sq", "ln"}, xs, ys, "demo");
  std::string a = slurp(f1.path);
  CHECK(a == slurp(f2.path));
  CHECK(a.find("<svg") == 0);
  CHECK(a.find("polyline") != std::string::npos);
}
