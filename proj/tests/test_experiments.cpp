#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ocdc/experiments.hpp"

namespace fs = std::filesystem;
using namespace ocdc;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("ocdc_exp_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("manifest round trips through load_config") {
  TempDir dir("manifest");
  exp::ExperimentConfig c = exp::toy_defaults();
  c.experiment_id = "roundtrip";
  c.out_dir = dir.path.string();
  c.master_seed = 42;
  c.process = datagen::Process::Radon;
  c.deviations.path_phase_spread_rad = 0.7;
  c.training.epochs = 3;
  exp::save_manifest(c);
  exp::ExperimentConfig back =
      exp::load_config((dir.path / "manifest.json").string());
  CHECK(back.experiment_id == "roundtrip");
  CHECK(back.master_seed == 42);
  CHECK(back.process == datagen::Process::Radon);
  CHECK(back.deviations.path_phase_spread_rad == doctest::Approx(0.7));
  CHECK(back.training.epochs == 3);
}

TEST_CASE("unknown config keys are rejected with the key name") {
  TempDir dir("badkey");
  const std::string path = (dir.path / "bad.json").string();
  std::ofstream(path) << R"({"lerning_rate": 0.1})";
  CHECK_THROWS_WITH_AS(exp::load_config(path),
                       doctest::Contains("lerning_rate"), exp::ConfigError);
}

TEST_CASE("malformed JSON and impossible values are config errors") {
  TempDir dir("badval");
  const std::string path = (dir.path / "bad.json").string();
  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(exp::load_config(path), exp::ConfigError);
  std::ofstream(path, std::ios::trunc) << R"({"image_size": 13})";
  CHECK_THROWS_AS(exp::load_config(path), exp::ConfigError);
  std::ofstream(path, std::ios::trunc) << R"({"process": "mri"})";
  CHECK_THROWS_AS(exp::load_config(path), exp::ConfigError);
}

TEST_CASE("input flattening matches the channel layout") {
  datagen::Dataset data = datagen::build_dataset(datagen::Process::MF, 31, 8, 1);
  const auto& ex = data.examples[0];
  Eigen::VectorXd flat = exp::flatten_input(ex);
  REQUIRE(flat.size() == 2 * 8 * 8);
  CHECK(flat[0] == ex.input[0](0, 0));
  CHECK(flat[8 * 8] == ex.input[1](0, 0));
  CHECK(flat[8 * 8 - 1] == ex.input[0](7, 7));
  Eigen::VectorXd truth = exp::flatten_truth(ex);
  CHECK(truth[8 * 3 + 2] == ex.truth.pixels(3, 2));
}

TEST_CASE("dataset matrices respect the split sizes") {
  datagen::Dataset data =
      datagen::build_dataset(datagen::Process::Radon, 62, 8, 2);
  exp::DatasetMatrices m = exp::dataset_matrices(data);
  CHECK(m.train_x.rows() == 54);
  CHECK(m.val_x.rows() == 8);
  CHECK(m.train_y.cols() == 64);
  CHECK(m.train_x.cols() == m.val_x.cols());
}

TEST_CASE("ideal-chip characterization hits the paper-grade fits") {
  TempDir dir("char_ideal");
  exp::ExperimentConfig c = exp::toy_defaults();
  c.out_dir = dir.path.string();
  exp::CharacterizeReport r = exp::run_characterize(c);
  CHECK(r.min_r_squared > 0.999);
  CHECK(r.evenness_spread_db == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r.peaks_monotone);
  REQUIRE(r.interference_peaks.size() == 3);
  // In-phase peaks grow with each opened branch.
  CHECK(r.interference_peaks[2] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(fs::exists(dir.path / "transmission_sweeps.csv"));
  CHECK(fs::exists(dir.path / "interference_curves.svg"));
  CHECK(fs::exists(dir.path / "manifest.json"));
}

TEST_CASE("deviated characterization keeps evenness within the profile") {
  TempDir dir("char_dev");
  exp::ExperimentConfig c = exp::toy_defaults();
  c.out_dir = dir.path.string();
  c.master_seed = 9;
  c.deviations.splitter_unevenness_db = 1.2;
  c.deviations.path_phase_spread_rad = 1.0;
  exp::CharacterizeReport r = exp::run_characterize(c);
  CHECK(r.evenness_spread_db > 0.0);
  CHECK(r.evenness_spread_db <= 1.2 + 1e-9);
  CHECK(r.peaks_monotone);
}

TEST_CASE("characterize reruns from the manifest are bit-identical") {
  TempDir a("det_a"), b("det_b");
  exp::ExperimentConfig c = exp::toy_defaults();
  c.out_dir = a.path.string();
  c.master_seed = 31;
  c.deviations.bias_offset_std_rad = 0.1;
  exp::run_characterize(c);
  exp::ExperimentConfig c2 =
      exp::load_config((a.path / "manifest.json").string());
  c2.out_dir = b.path.string();
  exp::run_characterize(c2);
  CHECK(exp::hash_csv_outputs(a.path.string()) ==
        exp::hash_csv_outputs(b.path.string()));
}

TEST_CASE("bpc demo reproduces the headline numbers") {
  TempDir dir("bpc");
  exp::ExperimentConfig c = exp::toy_defaults();
  c.out_dir = dir.path.string();
  exp::BpcDemoReport r = exp::run_bpc_demo(c);
  CHECK(r.uniform.residual_std_before == doctest::Approx(0.061).epsilon(0.17));
  REQUIRE(r.uniform.std_history.size() >= 3);
  CHECK(r.uniform.std_history[2] <= 0.035);
  CHECK(r.noise_floor.residual_std_after <= 1e-6);
  CHECK(fs::exists(dir.path / "bpc_trajectory.csv"));
  CHECK(fs::exists(dir.path / "bpc_scatter.csv"));
  CHECK(fs::exists(dir.path / "bpc_residual_hist.csv"));
}

TEST_CASE("file hashing distinguishes different content") {
  TempDir dir("hash");
  std::ofstream((dir.path / "a.csv").string()) << "x\n1\n";
  std::ofstream((dir.path / "b.csv").string()) << "x\n2\n";
  const std::uint64_t h1 = exp::hash_csv_outputs(dir.path.string());
  std::ofstream((dir.path / "b.csv").string(), std::ios::trunc) << "x\n3\n";
  CHECK(exp::hash_csv_outputs(dir.path.string()) != h1);
  CHECK(exp::hash_file((dir.path / "a.csv").string()) ==
        exp::hash_file((dir.path / "a.csv").string()));
}
