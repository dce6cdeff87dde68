#pragma once

// Reproducible experiment drivers: chip characterization, the BPC
// demonstration, layer accuracy through the chip simulator, toy-scale
// reconstruction with injected errors, the error-vs-sigma sweep and
// the numerical-domain ablation. Every run writes a manifest with the
// fully resolved configuration; reruns from a manifest are
// bit-identical.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ocdc/calibration.hpp"
#include "ocdc/datagen.hpp"
#include "ocdc/network.hpp"
#include "ocdc/optics.hpp"

namespace ocdc::exp {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string experiment_id = "run";
  std::string out_dir = "out";
  std::uint64_t master_seed = 0;

  // chip
  int physical_branches = 9;
  int active_branches = 3;
  optics::DeviationProfile deviations;
  double coarse_target_std = 0.061;
  // Detector noise applied during layer-accuracy measurements only.
  double detection_noise_std = 0.0;

  // dataset
  datagen::Process process = datagen::Process::MF;
  int dataset_count = 310;
  int image_size = 16;

  // network / training
  int conv_channels = 4;
  net::DomainMode mode = net::DomainMode::CBD;
  net::Backend backend = net::Backend::Exact;
  net::TrainConfig training;
  std::string checkpoint_path; // reused instead of training when set

  // error injection / sweeps
  double injected_fc_std = 0.0;
  double injected_conv_std = 0.0;
  std::vector<double> sigma_grid = {0.0, 0.01, 0.02, 0.04, 0.07, 0.1};
  int trials_per_point = 60;
  int ablation_seeds = 5;
};

/// Baseline toy-scale configuration used by the CLI defaults.
ExperimentConfig toy_defaults();

/// Parses a JSON config; unknown keys are rejected, missing keys keep
/// their toy defaults. Throws ConfigError with the offending key.
ExperimentConfig load_config(const std::string& path);

/// Writes <out_dir>/manifest.json with the fully resolved config.
void save_manifest(const ExperimentConfig& config);

/// FNV-1a over the file bytes; FormatError mapped to ConfigError.
std::uint64_t hash_file(const std::string& path);

/// Combined FNV-1a over all *.csv files in `dir`, sorted by name.
std::uint64_t hash_csv_outputs(const std::string& dir);

// -- dataset plumbing ------------------------------------------------

/// Channel-major row-major flattening of the encoded input maps.
Eigen::VectorXd flatten_input(const datagen::EncodedExample& example);

/// Row-major flattening of the ground-truth image.
Eigen::VectorXd flatten_truth(const datagen::EncodedExample& example);

struct DatasetMatrices {
  Eigen::MatrixXd train_x, train_y;
  Eigen::MatrixXd val_x, val_y;
};
DatasetMatrices dataset_matrices(const datagen::Dataset& data);

struct TrainedModel {
  net::Network network;
  datagen::Dataset dataset;
  DatasetMatrices matrices;
  net::TrainLog log;
};

/// Builds the dataset for config.process and trains a mini-AUTOMAP on
/// it; deterministic in (config, mode, seed).
TrainedModel train_process_model(const ExperimentConfig& config,
                                 net::DomainMode mode, std::uint64_t seed);

// -- experiment drivers ----------------------------------------------

struct CharacterizeReport {
  Eigen::VectorXd splitter_power_db; // per active branch
  double evenness_spread_db = 0.0;
  std::vector<optics::TransmissionCurveFit> fits; // slow,fast per branch
  double min_r_squared = 0.0;
  std::vector<double> interference_peaks; // branches opened one by one
  bool peaks_monotone = false;
};
CharacterizeReport run_characterize(const ExperimentConfig& config);

struct BpcDemoReport {
  calib::BpcReport uniform;     // weights [1, 1, 1]
  calib::BpcReport uneven;      // weights [0.2, 1, 0.8]
  calib::BpcReport noise_floor; // zero-deviation chip
};
BpcDemoReport run_bpc_demo(const ExperimentConfig& config);

struct LayerAccuracyReport {
  double fc_normalized_std = 0.0;
  double conv_normalized_std = 0.0;
  double ideal_fc_std = 0.0; // noise-free chip, absolute residual std
};
LayerAccuracyReport run_layer_accuracy(const ExperimentConfig& config);

struct ReconstructionReport {
  double exact_error_std = 0.0;
  double injected_error_std = 0.0;
  double ratio = 1.0;
  int image_count = 0;
};
ReconstructionReport run_reconstruction(const ExperimentConfig& config);

struct ErrorSweepPoint {
  double sigma = 0.0;
  double mean_error = 0.0;
  double std_error = 0.0;
};
struct ErrorSweepReport {
  std::vector<ErrorSweepPoint> points;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0; // fit restricted to sigma in [0.01, 0.1]
};
ErrorSweepReport run_error_sweep(const ExperimentConfig& config);

struct AblationSeedResult {
  std::uint64_t seed = 0;
  // final validation loss, indexed as CBD, CID, NCBD, InOn
  std::array<double, 4> final_val_loss{};
  std::array<std::uint64_t, 4> init_checksum{};
};
struct AblationReport {
  std::vector<AblationSeedResult> seeds;
  int cbd_strictly_lowest = 0;
  int inon_worst = 0;
  int inon_over_twice_cbd = 0;
};
AblationReport run_domain_ablation(const ExperimentConfig& config);

} // namespace ocdc::exp
